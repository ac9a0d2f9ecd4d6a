//! Deterministic single-threaded execution of concurrent handle scripts.
//!
//! Each handle runs as a coroutine that suspends at every shared step of the
//! queue. A schedule decides which handle performs the next step, so a run is
//! fully determined by the setup and the sequence of choices. [`explore`]
//! enumerates every such sequence depth first.
//!
//! After each step the driver checks that no handle's spy-visible LSM holds
//! more than `k` items and that every lost publication race was preceded by
//! someone else's successful publication.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::time::{Duration, Instant};

use corosensei::stack::DefaultStack;
use corosensei::{Coroutine, CoroutineResult};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use super::trace::{OpKind, Record, Trace};
use crate::block::Key;
use crate::queue::{Config, KLsm};
use crate::sched::{self, Event, Lin, Recorder, Site};

const STACK_SIZE: usize = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptOp {
    Insert(Key),
    DeleteMin,
}

/// Queue parameters and per-handle scripts. Handle 0 inserts `prefill`
/// serially before any script starts.
#[derive(Debug, Clone)]
pub struct Setup {
    pub k: usize,
    pub seed: u64,
    pub prefill: Vec<Key>,
    pub scripts: Vec<Vec<ScriptOp>>,
}

impl Setup {
    pub fn new(k: usize, scripts: Vec<Vec<ScriptOp>>) -> Self {
        Self { k, seed: 1, prefill: Vec::new(), scripts }
    }

    pub fn prefill(mut self, keys: Vec<Key>) -> Self {
        self.prefill = keys;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn handles(&self) -> usize {
        self.scripts.len()
    }

    /// Relaxation bound for this setup.
    pub fn rho(&self) -> usize {
        self.handles() * self.k
    }
}

/// How to continue once explicit choices run out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// Lowest runnable handle id.
    Lowest,
    RoundRobin,
    Random(u64),
}

/// Stop scheduling `handle` once it has yielded `after_yields` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Park {
    pub handle: usize,
    pub after_yields: usize,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    /// Handle ids, one per step.
    pub choices: Vec<usize>,
    pub fallback: Fallback,
    pub park: Option<Park>,
    pub max_steps: Option<u64>,
    pub timeout: Option<Duration>,
}

impl Schedule {
    pub fn explicit(choices: Vec<usize>) -> Self {
        Self { choices, fallback: Fallback::Lowest, park: None, max_steps: None, timeout: None }
    }

    pub fn fallback(mut self, f: Fallback) -> Self {
        self.fallback = f;
        self
    }

    pub fn park(mut self, handle: usize, after_yields: usize) -> Self {
        self.park = Some(Park { handle, after_yields });
        self
    }

    pub fn max_steps(mut self, n: u64) -> Self {
        self.max_steps = Some(n);
        self
    }

    pub fn timeout(mut self, d: Duration) -> Self {
        self.timeout = Some(d);
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DriverError {
    #[error("step {step}: handle {handle} is not runnable")]
    NotRunnable { step: u64, handle: usize },
    #[error("step limit reached after {steps} steps")]
    StepLimit { steps: u64 },
    #[error("timed out after {steps} steps")]
    Timeout { steps: u64 },
    #[error("exploration stopped after {executions} executions")]
    ExecutionLimit { executions: u64 },
    #[error("invalid setup: {0}")]
    Setup(String),
}

/// Observations from one run.
#[derive(Debug, Clone)]
pub struct Run {
    /// Completed operations plus pending inserts that already took effect.
    pub trace: Trace,
    pub steps: u64,
    pub finished: Vec<bool>,
    /// Suspensions per handle.
    pub yields: Vec<usize>,
    /// Distinct sites each handle suspended at.
    pub sites: Vec<Vec<Site>>,
    /// Largest item count of any handle's spy-visible LSM after any step.
    pub max_dist_items: usize,
    /// First step after which some handle's LSM exceeded `k` items.
    pub dist_overflow: Option<(u64, usize, usize)>,
    /// First step where a publication failed without a rival publication.
    pub lost_race_without_winner: Option<(u64, usize)>,
    pub publications: u64,
    pub failed_publications: u64,
}

impl Run {
    /// Invariants the driver checks, independent of relaxation.
    pub fn invariants_hold(&self) -> bool {
        self.dist_overflow.is_none() && self.lost_race_without_winner.is_none()
    }
}

struct Op {
    stamp: u64,
    seq: usize,
    kind: OpKind,
    key: Option<Key>,
}

/// Collects the linearization stamps of one handle's operations.
struct HandleRec {
    step: Rc<Cell<u64>>,
    handle: usize,
    current: Cell<Option<(usize, ScriptOp)>>,
    stamp: Cell<Option<u64>>,
    done: RefCell<Vec<Op>>,
}

impl HandleRec {
    fn begin(&self, seq: usize, op: ScriptOp) {
        self.current.set(Some((seq, op)));
        self.stamp.set(None);
    }

    fn end(&self, kind: OpKind, key: Option<Key>) {
        let (seq, _) = self.current.take().expect("operation in progress");
        let stamp = self.stamp.take().expect("operation took effect without a stamp");
        self.done.borrow_mut().push(Op { stamp, seq, kind, key });
    }

    /// Completed operations, and the pending one if it is an insert that
    /// already became reachable.
    fn ops(&self) -> Vec<Op> {
        let mut ops = std::mem::take(&mut *self.done.borrow_mut());
        if let (Some((seq, ScriptOp::Insert(k))), Some(stamp)) = (self.current.get(), self.stamp.get()) {
            ops.push(Op { stamp, seq, kind: OpKind::Insert, key: Some(k) });
        }
        ops
    }
}

impl Recorder for HandleRec {
    fn linearize(&self, lin: Lin) {
        let now = self.step.get();
        match lin {
            // An insert takes effect once.
            Lin::Insert => {
                if self.stamp.get().is_none() {
                    self.stamp.set(Some(now));
                }
            }
            // The last verification counts.
            Lin::DeleteVerify => self.stamp.set(Some(now)),
        }
    }
}

type SimCoroutine = Coroutine<(), Event, (), DefaultStack>;

fn payload(handle: usize, seq: usize) -> u64 {
    ((handle as u64) << 32) | seq as u64
}

/// Picks the handle for each step.
trait Chooser {
    fn choose(&mut self, step: u64, runnable: &[usize]) -> Result<usize, DriverError>;
}

struct ScheduleChooser<'a> {
    schedule: &'a Schedule,
    next: usize,
    last: Option<usize>,
    rng: Option<SmallRng>,
}

impl Chooser for ScheduleChooser<'_> {
    fn choose(&mut self, step: u64, runnable: &[usize]) -> Result<usize, DriverError> {
        let pick = if let Some(&h) = self.schedule.choices.get(self.next) {
            self.next += 1;
            if !runnable.contains(&h) {
                return Err(DriverError::NotRunnable { step, handle: h });
            }
            h
        } else {
            match self.schedule.fallback {
                Fallback::Lowest => runnable[0],
                Fallback::RoundRobin => {
                    let after = self.last.map_or(0, |l| l + 1);
                    *runnable.iter().find(|&&h| h >= after).unwrap_or(&runnable[0])
                }
                Fallback::Random(seed) => {
                    let rng = self.rng.get_or_insert_with(|| SmallRng::seed_from_u64(seed));
                    runnable[rng.random_range(0..runnable.len())]
                }
            }
        };
        self.last = Some(pick);
        Ok(pick)
    }
}

/// Replays a prefix of runnable-set indices, then takes the first option,
/// recording the branching factor of every step.
struct DfsChooser<'a> {
    prefix: &'a [usize],
    taken: Vec<(usize, usize)>,
}

impl Chooser for DfsChooser<'_> {
    fn choose(&mut self, _step: u64, runnable: &[usize]) -> Result<usize, DriverError> {
        let i = self.taken.len();
        let c = self.prefix.get(i).copied().unwrap_or(0);
        debug_assert!(c < runnable.len(), "replay diverged");
        self.taken.push((c, runnable.len()));
        Ok(runnable[c])
    }
}

/// Reusable coroutine stacks.
#[derive(Default)]
struct StackPool(Vec<DefaultStack>);

impl StackPool {
    fn get(&mut self) -> DefaultStack {
        self.0
            .pop()
            .unwrap_or_else(|| DefaultStack::new(STACK_SIZE).expect("allocate coroutine stack"))
    }
}

fn execute(
    setup: &Setup,
    chooser: &mut dyn Chooser,
    park: Option<Park>,
    max_steps: Option<u64>,
    deadline: Option<Instant>,
    pool: &mut StackPool,
) -> Result<Run, DriverError> {
    let n = setup.handles();
    if n == 0 {
        return Err(DriverError::Setup("no handles".into()));
    }
    let queue = KLsm::with_config(Config::new(setup.k, n).seed(setup.seed));
    let mut handles: Vec<_> = (0..n).map(|_| queue.register().expect("registry sized to scripts")).collect();
    for (i, &k) in setup.prefill.iter().enumerate() {
        handles[0].insert(k, payload(n, i));
    }

    let step = Rc::new(Cell::new(setup.prefill.len() as u64));
    let recs: Vec<Rc<HandleRec>> = (0..n)
        .map(|h| {
            Rc::new(HandleRec {
                step: step.clone(),
                handle: h,
                current: Cell::new(None),
                stamp: Cell::new(None),
                done: RefCell::new(Vec::new()),
            })
        })
        .collect();

    let mut coroutines: Vec<Option<SimCoroutine>> = handles
        .into_iter()
        .zip(&setup.scripts)
        .zip(&recs)
        .map(|((mut handle, script), rec)| {
            let script = script.clone();
            let rec = rec.clone();
            Some(Coroutine::with_stack(pool.get(), move |y, ()| {
                // SAFETY: `y` and `rec` live for the whole body; the driver
                // clears the hooks whenever control returns to it.
                unsafe { sched::install(y, &*rec) };
                let id = handle.id();
                for (seq, op) in script.into_iter().enumerate() {
                    rec.begin(seq, op);
                    match op {
                        ScriptOp::Insert(k) => {
                            handle.insert(k, payload(id, seq));
                            rec.end(OpKind::Insert, Some(k));
                        }
                        ScriptOp::DeleteMin => match handle.try_delete_min() {
                            Some((k, _)) => rec.end(OpKind::Delete, Some(k)),
                            None => rec.end(OpKind::Fail, None),
                        },
                    }
                }
                sched::uninstall();
            }))
        })
        .collect();

    let mut finished = vec![false; n];
    let mut yields = vec![0usize; n];
    let mut sites: Vec<Vec<Site>> = vec![Vec::new(); n];
    let mut pending: Vec<Option<Site>> = vec![None; n];
    let mut seen_publications = vec![0u64; n];
    let mut run_steps = 0u64;
    let mut max_dist_items = 0;
    let mut dist_overflow = None;
    let mut lost_race_without_winner = None;

    let outcome = loop {
        let runnable: Vec<usize> = (0..n)
            .filter(|&h| !finished[h])
            .filter(|&h| park.is_none_or(|p| p.handle != h || yields[h] < p.after_yields))
            .collect();
        if runnable.is_empty() {
            break Ok(());
        }
        if max_steps.is_some_and(|m| run_steps >= m) {
            break Err(DriverError::StepLimit { steps: run_steps });
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break Err(DriverError::Timeout { steps: run_steps });
        }
        let h = match chooser.choose(run_steps, &runnable) {
            Ok(h) => h,
            Err(e) => break Err(e),
        };
        step.set(step.get() + 1);
        run_steps += 1;

        let pubs_before = queue.publications();
        let failed_before = queue.failed_publications();
        if pending[h] == Some(Site::SharedLoad) {
            seen_publications[h] = pubs_before;
        }
        let co = coroutines[h].as_mut().expect("runnable handle has a coroutine");
        let result = co.resume(());
        sched::uninstall();
        match result {
            CoroutineResult::Yield(Event::Yield(site)) => {
                yields[h] += 1;
                pending[h] = Some(site);
                if !sites[h].contains(&site) {
                    sites[h].push(site);
                }
            }
            CoroutineResult::Return(()) => {
                finished[h] = true;
                pending[h] = None;
            }
        }

        if queue.failed_publications() > failed_before
            && queue.publications() <= seen_publications[h]
            && lost_race_without_winner.is_none()
        {
            lost_race_without_winner = Some((run_steps, h));
        }
        for v in 0..n {
            let items = queue.dist_view(v).map_or(0, |s| s.item_count());
            max_dist_items = max_dist_items.max(items);
            if items > setup.k && dist_overflow.is_none() {
                dist_overflow = Some((run_steps, v, items));
            }
        }
    };

    for co in coroutines.iter_mut() {
        let mut co = co.take().expect("coroutine present");
        if !co.done() {
            co.force_unwind();
        }
        pool.0.push(co.into_stack());
    }
    outcome?;

    let mut ops: Vec<(u64, usize, Op)> = setup
        .prefill
        .iter()
        .enumerate()
        .map(|(i, &k)| (i as u64, 0, Op { stamp: i as u64, seq: i, kind: OpKind::Insert, key: Some(k) }))
        .collect();
    for rec in &recs {
        ops.extend(rec.ops().into_iter().map(|op| (op.stamp, rec.handle, op)));
    }
    ops.sort_by_key(|(stamp, h, op)| (*stamp, *h, op.seq));
    let records = ops
        .into_iter()
        .enumerate()
        .map(|(i, (_, handle, op))| Record { idx: i as u64, op: op.kind, handle, key: op.key })
        .collect();

    Ok(Run {
        trace: Trace::new(records),
        steps: run_steps,
        finished,
        yields,
        sites,
        max_dist_items,
        dist_overflow,
        lost_race_without_winner,
        publications: queue.publications(),
        failed_publications: queue.failed_publications(),
    })
}

/// Runs `setup` under `schedule`.
pub fn drive_schedule(setup: &Setup, schedule: &Schedule) -> Result<Run, DriverError> {
    let mut chooser = ScheduleChooser { schedule, next: 0, last: None, rng: None };
    let deadline = schedule.timeout.map(|d| Instant::now() + d);
    execute(setup, &mut chooser, schedule.park, schedule.max_steps, deadline, &mut StackPool::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExploreStats {
    pub executions: u64,
    pub max_steps: u64,
}

/// Runs `setup` under every schedule, calling `visit` on each run until it
/// returns false. Fails if more than `max_executions` runs are needed.
pub fn explore(
    setup: &Setup,
    max_executions: u64,
    mut visit: impl FnMut(&Run) -> bool,
) -> Result<ExploreStats, DriverError> {
    let mut pool = StackPool::default();
    let mut stats = ExploreStats::default();
    let mut prefix: Vec<usize> = Vec::new();
    loop {
        if stats.executions >= max_executions {
            return Err(DriverError::ExecutionLimit { executions: stats.executions });
        }
        let mut chooser = DfsChooser { prefix: &prefix, taken: Vec::new() };
        let run = execute(setup, &mut chooser, None, None, None, &mut pool)?;
        stats.executions += 1;
        stats.max_steps = stats.max_steps.max(run.steps);
        if !visit(&run) {
            return Ok(stats);
        }
        let taken = chooser.taken;
        let Some(i) = taken.iter().rposition(|&(c, n)| c + 1 < n) else {
            return Ok(stats);
        };
        prefix.clear();
        prefix.extend(taken[..i].iter().map(|&(c, _)| c));
        prefix.push(taken[i].0 + 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::check::check_structural;
    use ScriptOp::*;

    #[test]
    fn serial_run_matches_direct_calls() {
        let setup = Setup::new(2, vec![vec![Insert(5), Insert(3), DeleteMin, DeleteMin, DeleteMin]]);
        let run = drive_schedule(&setup, &Schedule::explicit(vec![])).unwrap();
        assert_eq!(run.trace.to_string(), "0 I 0 5\n1 I 0 3\n2 D 0 3\n3 D 0 5\n4 F 0 -\n");
        assert!(run.finished[0] && run.invariants_hold());
    }

    #[test]
    fn same_schedule_same_trace() {
        let setup = Setup::new(1, vec![vec![Insert(4), DeleteMin], vec![Insert(2), DeleteMin]]).prefill(vec![9, 1, 7]);
        let s = Schedule::explicit(vec![]).fallback(Fallback::Random(3));
        let a = drive_schedule(&setup, &s).unwrap();
        let b = drive_schedule(&setup, &s).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn choosing_a_finished_handle_is_an_error() {
        let setup = Setup::new(1, vec![vec![], vec![Insert(1)]]);
        let err = drive_schedule(&setup, &Schedule::explicit(vec![0, 0])).unwrap_err();
        assert_eq!(err, DriverError::NotRunnable { step: 1, handle: 0 });
    }

    #[test]
    fn parked_handle_does_not_block_others() {
        let setup = Setup::new(1, vec![vec![Insert(1), DeleteMin], vec![Insert(2), DeleteMin, DeleteMin]]);
        let s = Schedule::explicit(vec![0]).park(0, 1).fallback(Fallback::RoundRobin);
        let run = drive_schedule(&setup, &s).unwrap();
        assert!(!run.finished[0] && run.finished[1]);
        assert_eq!(run.yields[0], 1);
        assert!(check_structural(&run.trace, setup.rho()).unwrap().passed());
    }

    #[test]
    fn step_limit_is_reported() {
        let setup = Setup::new(1, vec![vec![Insert(1); 10]]);
        let err = drive_schedule(&setup, &Schedule::explicit(vec![]).max_steps(3)).unwrap_err();
        assert_eq!(err, DriverError::StepLimit { steps: 3 });
    }

    #[test]
    fn exploration_covers_both_orders_of_two_inserts() {
        let setup = Setup::new(0, vec![vec![Insert(1)], vec![Insert(2)]]);
        let mut firsts = Vec::new();
        let stats = explore(&setup, 1000, |run| {
            firsts.push(run.trace.records[0].key);
            assert!(run.invariants_hold());
            true
        })
        .unwrap();
        assert!(stats.executions >= 2);
        assert!(firsts.contains(&Some(1)) && firsts.contains(&Some(2)));
    }

    #[test]
    fn exploration_limit_is_enforced() {
        let setup = Setup::new(1, vec![vec![Insert(1), DeleteMin], vec![Insert(2), DeleteMin]]);
        assert_eq!(explore(&setup, 2, |_| true), Err(DriverError::ExecutionLimit { executions: 2 }));
    }
}

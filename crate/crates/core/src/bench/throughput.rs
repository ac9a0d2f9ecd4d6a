use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use super::BenchError;
use crate::queue::{Config, Handle, KLsm};

/// Keys are drawn uniformly from `[0, KEY_RANGE)` unless configured
/// otherwise.
pub const KEY_RANGE: u64 = 1 << 31;

/// Prefilled random insert/delete mix.
#[derive(Debug, Clone)]
pub struct ThroughputConfig {
    pub threads: usize,
    pub k: usize,
    pub prefill: usize,
    pub duration: Duration,
    /// Probability that an operation is an insert.
    pub ratio: f64,
    pub key_range: u64,
    pub seed: u64,
}

impl ThroughputConfig {
    pub fn new(threads: usize, k: usize) -> Self {
        Self {
            threads,
            k,
            prefill: 0,
            duration: Duration::from_secs(1),
            ratio: 0.5,
            key_range: KEY_RANGE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: &str| Err(BenchError::Config(m.into()));
        if self.threads == 0 {
            return err("threads must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return err("insert ratio must lie in [0, 1]");
        }
        if self.duration.is_zero() {
            return err("duration must be positive");
        }
        if self.key_range == 0 {
            return err("key range must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThroughputStats {
    pub total_ops: u64,
    pub inserts: u64,
    pub deletes: u64,
    /// Deletes that returned nothing.
    pub failures: u64,
    /// Items removed after the timed phase.
    pub drained: u64,
    pub prefill: u64,
    pub elapsed: Duration,
    pub ops_per_thread_per_s: f64,
}

impl ThroughputStats {
    /// Every item inserted was deleted exactly once, during or after the run.
    pub fn conserved(&self) -> bool {
        self.deletes + self.drained == self.prefill + self.inserts
    }
}

#[derive(Default)]
struct Counts {
    inserts: u64,
    deletes: u64,
    failures: u64,
}

fn worker(
    mut h: Handle,
    cfg: &ThroughputConfig,
    share: usize,
    start: &Barrier,
    stop: &AtomicBool,
) -> Counts {
    let mut rng = SmallRng::seed_from_u64(cfg.seed ^ (h.id() as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f));
    for _ in 0..share {
        h.insert(rng.random_range(0..cfg.key_range), 0);
    }
    start.wait();
    let mut c = Counts::default();
    while !stop.load(Ordering::Relaxed) {
        if rng.random_bool(cfg.ratio) {
            h.insert(rng.random_range(0..cfg.key_range), 0);
            c.inserts += 1;
        } else if h.try_delete_min().is_some() {
            c.deletes += 1;
        } else {
            c.failures += 1;
        }
    }
    c
}

/// Removes everything left, spying on the finished workers' local LSMs.
fn drain(h: &mut Handle) -> u64 {
    let mut drained = 0;
    let mut misses = 0;
    // A miss is final only once nothing untaken remains anywhere; the cap
    // guards against an accounting bug turning into a hang.
    while misses < 1_000_000 {
        if h.try_delete_min().is_some() {
            drained += 1;
            misses = 0;
        } else if h.queue().approx_size() == 0 {
            break;
        } else {
            misses += 1;
        }
    }
    drained
}

/// Prefills the queue, runs `threads` workers for `duration`, then drains.
pub fn throughput_run(cfg: &ThroughputConfig) -> Result<ThroughputStats, BenchError> {
    cfg.validate()?;
    let queue = KLsm::with_config(Config::new(cfg.k, cfg.threads + 1).seed(cfg.seed));
    let handles = (0..cfg.threads).map(|_| queue.register()).collect::<Result<Vec<_>, _>>()?;
    let mut drainer = queue.register()?;
    let start = Barrier::new(cfg.threads + 1);
    let stop = AtomicBool::new(false);

    let (counts, elapsed) = thread::scope(|s| {
        let workers: Vec<_> = handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                let share = cfg.prefill / cfg.threads + usize::from(i < cfg.prefill % cfg.threads);
                let (start, stop) = (&start, &stop);
                s.spawn(move || worker(h, cfg, share, start, stop))
            })
            .collect();
        start.wait();
        let t0 = Instant::now();
        thread::sleep(cfg.duration);
        stop.store(true, Ordering::Relaxed);
        let counts: Vec<Counts> = workers.into_iter().map(|w| w.join().expect("worker panicked")).collect();
        (counts, t0.elapsed())
    });

    let mut st = ThroughputStats { prefill: cfg.prefill as u64, elapsed, ..Default::default() };
    for c in counts {
        st.inserts += c.inserts;
        st.deletes += c.deletes;
        st.failures += c.failures;
    }
    st.total_ops = st.inserts + st.deletes + st.failures;
    st.ops_per_thread_per_s = st.total_ops as f64 / cfg.threads as f64 / elapsed.as_secs_f64();
    st.drained = drain(&mut drainer);
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_start_counts_failures_only_on_empty_deletes() {
        let mut cfg = ThroughputConfig::new(1, 4);
        cfg.duration = Duration::from_millis(20);
        cfg.ratio = 0.0;
        let st = throughput_run(&cfg).unwrap();
        assert_eq!((st.inserts, st.deletes), (0, 0));
        assert_eq!(st.failures, st.total_ops);
        assert!(st.conserved());
    }

    #[test]
    fn items_are_conserved() {
        for (threads, k) in [(1, 0), (2, 4), (3, 64)] {
            let mut cfg = ThroughputConfig::new(threads, k);
            cfg.prefill = 5000;
            cfg.duration = Duration::from_millis(50);
            cfg.seed = 3;
            let st = throughput_run(&cfg).unwrap();
            assert!(st.conserved(), "{st:?}");
            assert!(st.total_ops > 0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ThroughputConfig::new(0, 1);
        assert!(throughput_run(&cfg).is_err());
        cfg.threads = 1;
        cfg.ratio = 1.5;
        assert!(cfg.validate().is_err());
        cfg.ratio = 0.5;
        cfg.duration = Duration::ZERO;
        assert!(cfg.validate().is_err());
    }
}

//! Label-correcting shortest paths over the relaxed queue.
//!
//! Each node's state word packs its tentative distance with a `pending` bit
//! that is set while a queue entry carrying that exact distance still awaits
//! processing. `pending_labels` counts pending nodes plus nodes being
//! processed, so it reaches zero exactly when no useful work is left, even
//! though stale entries may be purged from the queue without ever being
//! popped.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::graph::{Graph, INFINITY};
use super::BenchError;
use crate::queue::{Handle, KLsm};

const UNREACHED: u64 = u64::MAX >> 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SsspResult {
    pub dist: Vec<u64>,
    /// Entries processed with a current distance.
    pub iterations: u64,
    /// Iterations beyond one per reachable node.
    pub extra_iterations: u64,
    /// Popped entries that were already outdated.
    pub stale_pops: u64,
    pub elapsed: Duration,
}

fn pack(dist: u64, pending: bool) -> u64 {
    (dist << 1) | u64::from(pending)
}

fn unpack(s: u64) -> (u64, bool) {
    (s >> 1, s & 1 == 1)
}

struct Shared<'g> {
    graph: &'g Graph,
    state: Arc<[AtomicU64]>,
    pending_labels: AtomicU64,
}

impl Shared<'_> {
    /// Lowers `node` to `dist` and enqueues it if that is an improvement.
    fn improve(&self, h: &mut Handle, node: u32, dist: u64) {
        let cell = &self.state[node as usize];
        let mut cur = cell.load(Ordering::Acquire);
        loop {
            let (d, pending) = unpack(cur);
            if dist >= d {
                return;
            }
            match cell.compare_exchange_weak(cur, pack(dist, true), Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => {
                    // A replaced pending label hands its count to the new one.
                    if !pending {
                        self.pending_labels.fetch_add(1, Ordering::AcqRel);
                    }
                    h.insert(dist, node as u64);
                    return;
                }
                Err(now) => cur = now,
            }
        }
    }

    /// Claims the entry `(dist, node)` if it is the node's pending label.
    fn claim(&self, node: u32, dist: u64) -> bool {
        self.state[node as usize]
            .compare_exchange(pack(dist, true), pack(dist, false), Ordering::AcqRel, Ordering::Relaxed)
            .is_ok()
    }

    fn work(&self, mut h: Handle) -> (u64, u64) {
        let (mut iterations, mut stale) = (0, 0);
        loop {
            match h.try_delete_min() {
                Some((d, v)) => {
                    let v = v as u32;
                    if !self.claim(v, d) {
                        stale += 1;
                        continue;
                    }
                    iterations += 1;
                    for &(w, wt) in self.graph.edges(v) {
                        self.improve(&mut h, w, d + wt as u64);
                    }
                    self.pending_labels.fetch_sub(1, Ordering::AcqRel);
                }
                None if self.pending_labels.load(Ordering::Acquire) == 0 => break,
                None => thread::yield_now(),
            }
        }
        (iterations, stale)
    }
}

/// Parallel shortest paths from `source` with `threads` workers on a queue
/// with relaxation `k`. Stale entries are marked for lazy deletion.
pub fn sssp_run(g: &Graph, source: u32, threads: usize, k: usize) -> Result<SsspResult, BenchError> {
    if threads == 0 {
        return Err(BenchError::Config("threads must be at least 1".into()));
    }
    if source as usize >= g.node_count() {
        return Err(BenchError::Config(format!("source {source} out of range")));
    }
    let state: Arc<[AtomicU64]> = (0..g.node_count()).map(|_| AtomicU64::new(pack(UNREACHED, false))).collect();
    let queue = KLsm::new(k, threads);
    let hook_state = state.clone();
    queue.set_needs_deletion_hook(move |key, node| {
        let (d, pending) = unpack(hook_state[node as usize].load(Ordering::Relaxed));
        d < key || (d == key && !pending)
    });
    let mut handles = (0..threads).map(|_| queue.register()).collect::<Result<Vec<_>, _>>()?;
    let shared = Shared { graph: g, state, pending_labels: AtomicU64::new(0) };

    let t0 = Instant::now();
    shared.improve(&mut handles[0], source, 0);
    let results: Vec<(u64, u64)> = thread::scope(|s| {
        let workers: Vec<_> = handles.into_iter().map(|h| s.spawn(|| shared.work(h))).collect();
        workers.into_iter().map(|w| w.join().expect("worker panicked")).collect()
    });
    let elapsed = t0.elapsed();
    queue.clear_needs_deletion_hook();

    let dist: Vec<u64> = shared
        .state
        .iter()
        .map(|s| match unpack(s.load(Ordering::Acquire)).0 {
            UNREACHED => INFINITY,
            d => d,
        })
        .collect();
    let iterations: u64 = results.iter().map(|r| r.0).sum();
    let reachable = dist.iter().filter(|&&d| d != INFINITY).count() as u64;
    Ok(SsspResult {
        iterations,
        extra_iterations: iterations - reachable,
        stale_pops: results.iter().map(|r| r.1).sum(),
        dist,
        elapsed,
    })
}

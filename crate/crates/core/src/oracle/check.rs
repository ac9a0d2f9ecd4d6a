//! Structural and temporal relaxation checkers.
//!
//! An operation *skips* an item when exact semantics would have returned
//! that item first. For a delete returning key `x` the skipped items are the
//! live items with keys strictly below `x`; a failed delete skips every live
//! item.
//!
//! * Structural ρ-relaxation bounds how many items are skipped at once: the
//!   returned key must have rank at most `ρ + 1`, and a failure needs at most
//!   `ρ` live items.
//! * Temporal ρ-relaxation only lets an operation skip items among the `ρ`
//!   most recent insertions. Every insertion counts toward recency, even if
//!   that item has since been deleted. Each insertion is a distinct item;
//!   deleting a key removes its oldest live instance.

use std::collections::{BTreeMap, VecDeque};

use super::trace::{OpKind, Record, Trace, TraceError};
use crate::block::Key;

/// Live keys replayed from a trace prefix, with the insertion sequence
/// number of every instance.
#[derive(Debug, Default, Clone)]
pub struct LiveMultiset {
    keys: BTreeMap<Key, VecDeque<u64>>,
    len: usize,
    inserted: u64,
}

impl LiveMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_keys(keys: impl IntoIterator<Item = Key>) -> Self {
        let mut s = Self::new();
        keys.into_iter().for_each(|k| s.insert(k));
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total insertions so far, deleted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn insert(&mut self, key: Key) {
        self.keys.entry(key).or_default().push_back(self.inserted);
        self.inserted += 1;
        self.len += 1;
    }

    /// Removes the oldest instance of `key`; false if none is live.
    pub fn remove(&mut self, key: Key) -> bool {
        let Some(q) = self.keys.get_mut(&key) else { return false };
        q.pop_front();
        if q.is_empty() {
            self.keys.remove(&key);
        }
        self.len -= 1;
        true
    }

    pub fn contains(&self, key: Key) -> bool {
        self.keys.contains_key(&key)
    }

    pub fn min(&self) -> Option<Key> {
        self.keys.keys().next().copied()
    }

    /// Number of live keys strictly below `key`.
    pub fn count_below(&self, key: Key) -> usize {
        self.keys.range(..key).map(|(_, q)| q.len()).sum()
    }

    /// Oldest insertion sequence number among live keys strictly below
    /// `bound` (or all keys for `None`).
    fn oldest_below(&self, bound: Option<Key>) -> Option<u64> {
        let it: Box<dyn Iterator<Item = (&Key, &VecDeque<u64>)>> = match bound {
            Some(b) => Box::new(self.keys.range(..b)),
            None => Box::new(self.keys.iter()),
        };
        it.filter_map(|(_, q)| q.front().copied()).min()
    }
}

/// 1-based rank of a live key: keys strictly smaller, plus one.
pub fn rank_of(key: Key, live: &LiveMultiset) -> Option<usize> {
    live.contains(key).then(|| live.count_below(key) + 1)
}

/// First relaxation violation found in a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Position of the offending record in the trace.
    pub record: usize,
    pub line: Record,
    /// Structural: rank of the returned key (live count + 1 for failures).
    /// Temporal: number of insertions after the oldest skipped item.
    pub measure: usize,
    pub rho: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(Violation),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Structural,
    Temporal,
}

pub fn check(trace: &Trace, rho: usize, mode: Mode) -> Result<Verdict, TraceError> {
    match mode {
        Mode::Structural => check_structural(trace, rho),
        Mode::Temporal => check_temporal(trace, rho),
    }
}

fn replay(
    trace: &Trace,
    mut judge: impl FnMut(&LiveMultiset, &Record) -> Option<usize>,
    rho: usize,
) -> Result<Verdict, TraceError> {
    trace.validate_shape()?;
    let mut live = LiveMultiset::new();
    let mut first = None;
    for (i, r) in trace.records.iter().enumerate() {
        if first.is_none() {
            if let Some(measure) = judge(&live, r) {
                first = Some(Violation { record: i, line: *r, measure, rho });
            }
        }
        match (r.op, r.key) {
            (OpKind::Insert, Some(k)) => live.insert(k),
            (OpKind::Delete, Some(k)) if !live.remove(k) => {
                return Err(TraceError::NotLive { record: i, key: k });
            }
            _ => {}
        }
    }
    // Malformed traces are reported even when a violation came first.
    Ok(first.map_or(Verdict::Pass, Verdict::Fail))
}

/// Every delete returns a key of rank at most `rho + 1`; every failure sees
/// at most `rho` live items.
pub fn check_structural(trace: &Trace, rho: usize) -> Result<Verdict, TraceError> {
    replay(
        trace,
        |live, r| {
            let measure = match (r.op, r.key) {
                (OpKind::Delete, Some(k)) => live.count_below(k) + 1,
                (OpKind::Fail, _) => live.len() + 1,
                _ => return None,
            };
            (measure > rho + 1).then_some(measure)
        },
        rho,
    )
}

/// Every skipped item is among the `rho` most recent insertions.
pub fn check_temporal(trace: &Trace, rho: usize) -> Result<Verdict, TraceError> {
    replay(
        trace,
        |live, r| {
            let oldest = match (r.op, r.key) {
                (OpKind::Delete, Some(k)) if live.contains(k) => live.oldest_below(Some(k)),
                (OpKind::Fail, _) => live.oldest_below(None),
                _ => None,
            }?;
            // Insertions made after the oldest skipped one.
            let newer = (live.inserted() - oldest - 1) as usize;
            (newer >= rho).then_some(newer)
        },
        rho,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::trace::OpKind::*;
    use proptest::prelude::*;

    fn trace(ops: &[(OpKind, Option<Key>)]) -> Trace {
        Trace::from_ops(ops.iter().map(|&(op, k)| (op, 0, k)))
    }

    #[test]
    fn rank_counts_strictly_smaller_keys() {
        let live = LiveMultiset::from_keys([1, 2, 3, 4]);
        assert_eq!(rank_of(1, &live), Some(1));
        assert_eq!(rank_of(3, &live), Some(3));
        assert_eq!(rank_of(5, &live), None);
        let live = LiveMultiset::from_keys([2, 2, 5]);
        assert_eq!(rank_of(5, &live), Some(3));
        assert_eq!(rank_of(2, &live), Some(1));
    }

    #[test]
    fn exact_trace_passes_with_zero_rho() {
        let t = trace(&[(Insert, Some(3)), (Insert, Some(1)), (Delete, Some(1)), (Delete, Some(3)), (Fail, None)]);
        assert!(check_structural(&t, 0).unwrap().passed());
        assert!(check_temporal(&t, 0).unwrap().passed());
    }

    #[test]
    fn rank_three_delete_fails_with_rho_one() {
        let t = trace(&[(Insert, Some(1)), (Insert, Some(2)), (Insert, Some(3)), (Delete, Some(3))]);
        match check_structural(&t, 1).unwrap() {
            Verdict::Fail(v) => assert_eq!((v.record, v.measure), (3, 3)),
            Verdict::Pass => panic!("expected a violation"),
        }
        assert!(check_structural(&t, 2).unwrap().passed());
    }

    #[test]
    fn failure_is_a_skip_of_everything_live() {
        let t = trace(&[(Insert, Some(1)), (Insert, Some(2)), (Fail, None)]);
        assert!(!check_structural(&t, 1).unwrap().passed());
        assert!(check_structural(&t, 2).unwrap().passed());
    }

    /// The stack example with A, B, C pushed, then D; C popped (skipping D),
    /// then A popped (skipping B and D). Keys follow exact pop order:
    /// D = 1, C = 2, B = 3, A = 4.
    fn stack_scenario() -> Trace {
        trace(&[
            (Insert, Some(4)),
            (Insert, Some(3)),
            (Insert, Some(2)),
            (Insert, Some(1)),
            (Delete, Some(2)),
            (Delete, Some(4)),
        ])
    }

    #[test]
    fn stack_scenario_is_structural_but_not_temporal() {
        let t = stack_scenario();
        assert!(check_structural(&t, 2).unwrap().passed());
        match check_temporal(&t, 2).unwrap() {
            Verdict::Fail(v) => assert_eq!(v.record, 5),
            Verdict::Pass => panic!("B must not be skippable"),
        }
    }

    #[test]
    fn large_rho_always_passes_temporal() {
        let t = stack_scenario();
        assert!(check_temporal(&t, t.len()).unwrap().passed());
    }

    #[test]
    fn malformed_traces_are_errors_not_verdicts() {
        let t = trace(&[(Insert, Some(1)), (Delete, Some(2))]);
        assert_eq!(check_structural(&t, 5), Err(TraceError::NotLive { record: 1, key: 2 }));
        assert!(check_temporal(&t, 5).is_err());
    }

    /// Naive exact priority queue replay.
    fn is_exact_history(t: &Trace) -> bool {
        let mut live: Vec<Key> = Vec::new();
        for r in &t.records {
            match (r.op, r.key) {
                (Insert, Some(k)) => live.push(k),
                (Delete, Some(k)) => {
                    let Some(&m) = live.iter().min() else { return false };
                    if m != k {
                        return false;
                    }
                    let pos = live.iter().position(|&x| x == k).unwrap();
                    live.swap_remove(pos);
                }
                (Fail, _) => {
                    if !live.is_empty() {
                        return false;
                    }
                }
                _ => unreachable!(),
            }
        }
        true
    }

    /// Random well-formed histories: deletes and failures return a live key
    /// (or fail) chosen arbitrarily.
    fn arb_history(max_ops: usize) -> impl Strategy<Value = Trace> {
        prop::collection::vec((0u8..3, 0u64..6, any::<prop::sample::Index>()), 0..=max_ops).prop_map(|steps| {
            let mut live: Vec<Key> = Vec::new();
            let mut ops = Vec::new();
            for (kind, key, pick) in steps {
                match kind {
                    0 => {
                        live.push(key);
                        ops.push((Insert, 0, Some(key)));
                    }
                    1 if !live.is_empty() => {
                        let k = live.swap_remove(pick.index(live.len()));
                        ops.push((Delete, 0, Some(k)));
                    }
                    _ => ops.push((Fail, 0, None)),
                }
            }
            Trace::from_ops(ops)
        })
    }

    proptest! {
        #[test]
        fn structural_zero_iff_exact(t in arb_history(8)) {
            prop_assert_eq!(check_structural(&t, 0).unwrap().passed(), is_exact_history(&t));
        }

        #[test]
        fn temporal_pass_implies_structural_pass(t in arb_history(12), rho in 0usize..5) {
            if check_temporal(&t, rho).unwrap().passed() {
                prop_assert!(check_structural(&t, rho).unwrap().passed());
            }
        }
    }
}

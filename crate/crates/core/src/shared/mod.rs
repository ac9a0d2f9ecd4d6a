//! The globally shared k-LSM.
//!
//! A single atomic reference points at the current [`BlockArray`]. Every
//! update copies the array into a private snapshot, modifies it and publishes
//! it with a compare-and-swap against the array the copy was taken from.
//! Blocks are shared between arrays and never modified after publication
//! (apart from monotone `filled` trimming).

mod block_array;
pub mod bloom;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;
use rand::Rng;

pub use block_array::BlockArray;

use crate::block::{Block, Item, Liveness};
use crate::sched::{self, Lin, Site};

/// The published shared LSM.
pub struct SharedKlsm {
    published: ArcSwapOption<BlockArray>,
    k: usize,
    publications: AtomicU64,
    failed_pushes: AtomicU64,
}

/// Per-handle view of the shared LSM: the array last observed and, while an
/// update is being prepared, a private copy of it.
#[derive(Default)]
pub struct Session {
    observed: Option<Arc<BlockArray>>,
    snapshot: Option<BlockArray>,
}

impl Session {
    pub fn observed(&self) -> Option<&Arc<BlockArray>> {
        self.observed.as_ref()
    }

    /// The private copy if one exists, otherwise the observed array.
    pub fn snapshot(&self) -> Option<&BlockArray> {
        self.snapshot.as_ref().or(self.observed.as_deref())
    }

    /// Private copy of the observed array, made on first use.
    fn snapshot_mut(&mut self) -> &mut BlockArray {
        let observed = &self.observed;
        self.snapshot
            .get_or_insert_with(|| observed.as_deref().cloned().unwrap_or_default())
    }
}

fn same(a: Option<&Arc<BlockArray>>, b: Option<&Arc<BlockArray>>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => Arc::ptr_eq(a, b),
        (None, None) => true,
        _ => false,
    }
}

impl SharedKlsm {
    pub fn new(k: usize) -> Self {
        Self {
            published: ArcSwapOption::empty(),
            k,
            publications: AtomicU64::new(0),
            failed_pushes: AtomicU64::new(0),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Currently published array, if any.
    pub fn load(&self) -> Option<Arc<BlockArray>> {
        self.published.load_full()
    }

    /// Number of successful publications so far.
    pub fn publications(&self) -> u64 {
        self.publications.load(Ordering::Acquire)
    }

    /// Number of publication attempts that lost a race.
    pub fn failed_pushes(&self) -> u64 {
        self.failed_pushes.load(Ordering::Acquire)
    }

    /// Observes `current` and drops any private copy of an older array.
    fn refresh_from(&self, s: &mut Session, current: Option<Arc<BlockArray>>) {
        s.snapshot = None;
        s.observed = current;
    }

    /// Re-reads the published reference into the session.
    pub fn refresh_snapshot(&self, s: &mut Session) {
        sched::yield_point(Site::SharedLoad);
        let current = self.published.load_full();
        self.refresh_from(s, current);
    }

    /// Publishes the session's private copy if the shared reference still
    /// points at the observed array. An empty copy publishes as no array.
    /// The copy is consumed either way.
    pub fn push_snapshot(&self, s: &mut Session) -> bool {
        let next_version = s.observed.as_ref().map_or(0, |a| a.version()) + 1;
        let snap = std::mem::take(s.snapshot_mut());
        s.snapshot = None;
        let new = (!snap.is_empty()).then(|| {
            let mut snap = snap;
            snap.set_version(next_version);
            Arc::new(snap)
        });
        sched::yield_point(Site::SharedCas);
        // Cheap version check before the swap; the swap itself compares the
        // observed pointer, which this session keeps alive.
        let current = self.published.load();
        let still_current = same(current.as_ref(), s.observed.as_ref())
            && current.as_ref().map_or(0, |a| a.version()) == next_version - 1;
        drop(current);
        if still_current {
            let prev = self.published.compare_and_swap(&s.observed, new.clone());
            if same(prev.as_ref(), s.observed.as_ref()) {
                drop(prev);
                self.publications.fetch_add(1, Ordering::AcqRel);
                s.observed = new;
                return true;
            }
        }
        self.failed_pushes.fetch_add(1, Ordering::AcqRel);
        false
    }

    /// Adds `block` to the shared LSM, retrying on fresh snapshots until a
    /// publication succeeds.
    pub fn insert(&self, s: &mut Session, block: Arc<Block>, live: Liveness<'_>) {
        loop {
            sched::yield_point(Site::SharedLoad);
            let current = self.published.load_full();
            if !same(current.as_ref(), s.observed.as_ref()) {
                self.refresh_from(s, current);
            }
            let snap = s.snapshot_mut();
            snap.insert(block.clone(), live);
            snap.calculate_pivots(self.k);
            if self.push_snapshot(s) {
                sched::linearize(Lin::Insert);
                return;
            }
        }
    }

    /// Relaxed find-min over the shared LSM. The returned item was live when
    /// looked at but is not marked.
    pub fn find_min<R: Rng>(
        &self,
        s: &mut Session,
        rng: &mut R,
        caller_mask: u64,
        live: Liveness<'_>,
    ) -> Option<Arc<Item>> {
        loop {
            sched::yield_point(Site::SharedLoad);
            let current = self.published.load_full();
            sched::linearize(Lin::DeleteVerify);
            if !same(current.as_ref(), s.observed.as_ref()) {
                self.refresh_from(s, current);
            }
            let view = s.snapshot()?;
            if view.is_empty() {
                return None;
            }
            match view.find_min(rng, caller_mask, live) {
                Some(item) if !item.is_taken() => return Some(item),
                _ => {}
            }
            let snap = s.snapshot_mut();
            let merged = snap.consolidate(live);
            snap.calculate_pivots(self.k);
            if merged || snap.is_empty() {
                // A lost race means someone else already cleaned up.
                self.push_snapshot(s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    const LIVE: Liveness<'static> = Liveness::MARK_ONLY;

    fn block(level: u32, keys: &[u64]) -> Arc<Block> {
        let mut b = Block::new(level);
        for &k in keys {
            b.append(Arc::new(Item::new(k, k)), LIVE);
        }
        Arc::new(b)
    }

    #[test]
    fn refresh_copies_published_array() {
        let shared = SharedKlsm::new(2);
        let mut s = Session::default();
        shared.refresh_snapshot(&mut s);
        assert!(s.observed().is_none() && s.snapshot().is_none());

        shared.insert(&mut Session::default(), block(1, &[4, 2]), LIVE);
        shared.refresh_snapshot(&mut s);
        let published = shared.load().unwrap();
        assert!(Arc::ptr_eq(s.observed().unwrap(), &published));
        assert_eq!(s.snapshot().unwrap().keys(), published.keys());
        assert_eq!(s.snapshot().unwrap().pivots(), published.pivots());
    }

    #[test]
    fn refresh_sees_newer_publication() {
        let shared = SharedKlsm::new(2);
        let (mut a, mut b) = (Session::default(), Session::default());
        shared.insert(&mut a, block(0, &[5]), LIVE);
        let first = shared.load().unwrap();
        shared.insert(&mut b, block(2, &[9, 8, 7]), LIVE);
        shared.refresh_snapshot(&mut a);
        assert!(!Arc::ptr_eq(a.observed().unwrap(), &first));
        assert_eq!(a.snapshot().unwrap().keys(), vec![9, 8, 7, 5]);
    }

    #[test]
    fn push_fails_after_interleaved_publication() {
        let shared = SharedKlsm::new(1);
        let (mut a, mut b) = (Session::default(), Session::default());
        shared.refresh_snapshot(&mut a);
        shared.refresh_snapshot(&mut b);
        a.snapshot = Some(BlockArray::new());
        a.snapshot.as_mut().unwrap().insert(block(0, &[1]), LIVE);
        assert!(shared.push_snapshot(&mut a));

        b.snapshot = Some(BlockArray::new());
        b.snapshot.as_mut().unwrap().insert(block(0, &[2]), LIVE);
        assert!(!shared.push_snapshot(&mut b));

        shared.insert(&mut b, block(0, &[2]), LIVE);
        let keys = shared.load().unwrap().keys();
        assert_eq!(keys, vec![2, 1]);
        assert_eq!(shared.publications(), 2);
    }

    #[test]
    fn insert_into_same_level_merges() {
        let shared = SharedKlsm::new(4);
        let mut s = Session::default();
        shared.insert(&mut s, block(2, &[9, 8, 7]), LIVE);
        shared.insert(&mut s, block(2, &[6, 5, 4]), LIVE);
        let a = shared.load().unwrap();
        assert_eq!(a.levels(), vec![3]);
        assert_eq!(a.version(), 2);
    }

    #[test]
    fn find_min_on_taken_array_cleans_up() {
        let shared = SharedKlsm::new(0);
        let mut s = Session::default();
        let mut rng = SmallRng::seed_from_u64(1);
        let b = block(0, &[5]);
        shared.insert(&mut s, b.clone(), LIVE);
        let item = shared.find_min(&mut s, &mut rng, 0, LIVE).unwrap();
        assert_eq!(item.key(), 5);
        assert!(item.take());
        let before = shared.publications();
        assert!(shared.find_min(&mut s, &mut rng, 0, LIVE).is_none());
        assert_eq!(shared.publications(), before + 1);
        assert!(shared.load().is_none());
    }

    #[test]
    fn find_min_skips_taken_min() {
        let shared = SharedKlsm::new(1);
        let mut s = Session::default();
        let mut rng = SmallRng::seed_from_u64(3);
        let items: Vec<_> = [9u64, 7, 4, 2].iter().map(|&k| Arc::new(Item::new(k, k))).collect();
        let mut b = Block::new(2);
        items.iter().for_each(|i| b.append(i.clone(), LIVE));
        shared.insert(&mut s, Arc::new(b), LIVE);
        items[3].take();
        for _ in 0..20 {
            let got = shared.find_min(&mut s, &mut rng, 0, LIVE).unwrap();
            assert!(!got.is_taken());
            assert!(got.key() == 4 || got.key() == 7, "{}", got.key());
        }
    }
}

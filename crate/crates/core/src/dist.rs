//! Per-handle LSM with non-destructive spying.
//!
//! The owner keeps a private list of its blocks and mirrors every change
//! into [`DistSlots`], which other handles read when they spy. Mirrored
//! updates always make replacement blocks visible before the blocks they
//! replace disappear, so a spy may see an item twice but never miss one.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;

use crate::block::{consolidate_blocks, Block, Item, Liveness, MAX_LEVELS};
use crate::sched::{self, Lin, Site};

/// Largest block level that may stay in a handle's LSM for relaxation `k`.
///
/// A level-`l` block stays local iff `2^(l+1) <= k + 1`. Strictly decreasing
/// levels then bound the local item count by `2^(L+1) - 1 <= k`. `None` means
/// every block goes to the shared LSM (`k = 0`).
pub fn local_level_limit(k: usize) -> Option<u32> {
    let bits = usize::BITS - (k + 1).leading_zeros(); // floor(log2(k+1)) + 1
    (bits >= 2).then(|| bits - 2)
}

/// Spy-visible block slots of one handle.
pub struct DistSlots {
    blocks: [ArcSwapOption<Block>; MAX_LEVELS],
    size: AtomicUsize,
}

impl Default for DistSlots {
    fn default() -> Self {
        Self {
            blocks: std::array::from_fn(|_| ArcSwapOption::empty()),
            size: AtomicUsize::new(0),
        }
    }
}

impl DistSlots {
    /// Racy view of the blocks, as a spy would see them.
    pub fn observe(&self) -> Vec<Arc<Block>> {
        let n = self.size.load(Ordering::Acquire).min(MAX_LEVELS);
        (0..n).filter_map(|i| self.blocks[i].load_full()).collect()
    }

    /// Total occupied slots across visible blocks.
    pub fn item_count(&self) -> usize {
        self.observe().iter().map(|b| b.filled()).sum()
    }
}

/// A block that outgrew the local limit and must go to the shared LSM.
/// After inserting it there, call [`DistLsm::finish_transfer`].
#[must_use]
pub struct Transfer {
    pub block: Arc<Block>,
    keep: usize,
}

/// The owner's side of a per-handle LSM.
pub struct DistLsm {
    blocks: Vec<Arc<Block>>,
    slots: Arc<DistSlots>,
}

impl Default for DistLsm {
    fn default() -> Self {
        Self::new()
    }
}

impl DistLsm {
    pub fn new() -> Self {
        Self {
            blocks: Vec::with_capacity(MAX_LEVELS),
            slots: Arc::new(DistSlots::default()),
        }
    }

    /// Handle to the spy-visible side.
    pub fn slots(&self) -> &Arc<DistSlots> {
        &self.slots
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn levels(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.level()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Occupied slots across all blocks (taken items included).
    pub fn item_count(&self) -> usize {
        self.blocks.iter().map(|b| b.filled()).sum()
    }

    pub fn live_count(&self, live: Liveness<'_>) -> usize {
        self.blocks.iter().map(|b| b.live_count(live)).sum()
    }

    /// Writes `blocks[from..]` into the slots front to back, then updates the
    /// visible size. Every new block covers a contiguous run of old blocks
    /// starting at or before its own slot, so live items never drop out of
    /// view.
    fn publish_from(&mut self, from: usize) {
        sched::yield_point(Site::DistPublish);
        for (i, b) in self.blocks.iter().enumerate().skip(from) {
            self.slots.blocks[i].store(Some(b.clone()));
        }
        // Slots past the new size keep their stale blocks, so a spy that read
        // the old size still finds every item.
        self.slots.size.store(self.blocks.len(), Ordering::Release);
    }

    /// Inserts `item` as a singleton block and merges it backwards over
    /// blocks of equal or smaller level. A result above `level_limit` is
    /// handed back for transfer instead of being stored locally.
    pub fn insert(
        &mut self,
        item: Arc<Item>,
        bloom: u64,
        level_limit: Option<u32>,
        live: Liveness<'_>,
    ) -> Option<Transfer> {
        let mut b = Arc::new(Block::singleton(item, bloom));
        let mut i = self.blocks.len();
        // Merges build new blocks; the old ones stay visible meanwhile.
        while i > 0 && self.blocks[i - 1].level() <= b.level() {
            b = Block::merged(&self.blocks[i - 1], &b, live);
            i -= 1;
        }
        if level_limit.is_none_or(|l| b.level() > l) {
            return Some(Transfer { block: b, keep: i });
        }
        self.blocks.truncate(i);
        self.blocks.push(b);
        self.publish_from(i);
        sched::linearize(Lin::Insert);
        None
    }

    /// Drops the blocks that went into a transferred block. Call only after
    /// the block is reachable through the shared LSM.
    pub fn finish_transfer(&mut self, t: Transfer) {
        self.blocks.truncate(t.keep);
        self.publish_from(t.keep);
    }

    /// Smallest untaken item across local blocks. Does not mark it.
    pub fn find_min(&self) -> Option<Arc<Item>> {
        self.blocks
            .iter()
            .filter_map(|b| b.min_live(Liveness::MARK_ONLY))
            .min_by_key(|i| i.key())
            .cloned()
    }

    /// Whether any block's tail is dead, i.e. a shrink would change something.
    pub fn needs_consolidation(&self, live: Liveness<'_>) -> bool {
        self.blocks.iter().any(|b| b.tail().is_none_or(|t| live.is_dead(t)))
    }

    /// Shrinks blocks with dead tails and re-merges level collisions.
    pub fn consolidate(&mut self, live: Liveness<'_>) {
        let old = std::mem::take(&mut self.blocks);
        let (new, _) = consolidate_blocks(old.iter(), live);
        let first_changed = old
            .iter()
            .zip(&new)
            .take_while(|(a, b)| Arc::ptr_eq(a, b))
            .count();
        self.blocks = new;
        if first_changed < old.len() || first_changed < self.blocks.len() {
            self.publish_from(first_changed);
        }
    }

    /// Copies blocks of `victim` into this (empty) LSM, keeping levels
    /// strictly decreasing and copying at most `max_items` items. Returns
    /// whether anything was copied.
    pub fn spy(&mut self, victim: &DistSlots, max_items: usize, live: Liveness<'_>) -> bool {
        debug_assert!(self.blocks.is_empty(), "spy into a non-empty LSM");
        sched::yield_point(Site::SpyRead);
        let n = victim.size.load(Ordering::Acquire).min(MAX_LEVELS);
        let mut copied = 0;
        let mut got: Vec<Arc<Block>> = Vec::new();
        for slot in &victim.blocks[..n] {
            sched::yield_point(Site::SpyRead);
            let Some(b) = slot.load_full() else { continue };
            let copy = Arc::new(b.copy(b.level(), live)).shrink(live);
            if copy.is_empty() || copied + copy.filled() > max_items {
                continue;
            }
            if got.last().is_none_or(|last| copy.level() < last.level()) {
                copied += copy.filled();
                got.push(copy);
            }
        }
        if got.is_empty() {
            return false;
        }
        self.blocks = got;
        self.publish_from(0);
        true
    }
}

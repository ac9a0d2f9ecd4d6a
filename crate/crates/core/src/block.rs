//! Items with an atomic deletion mark, and the sorted blocks an LSM is made of.
//!
//! A [`Block`] is built under exclusive access (`&mut self`), then frozen
//! behind an `Arc` and shared. After that the only mutation is a monotone
//! decrease of `filled` by [`Block::shrink`]. Storage is reclaimed by
//! reference counting: an item or block is freed only once no block, block
//! array, or handle can reach it, which rules out ABA on reused memory.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::sched::{self, Site};

/// Largest level a block may have; enough for 2^32 items.
pub const MAX_LEVELS: usize = 32;

/// Priority of an item. Smaller keys are served first.
pub type Key = u64;

/// A key with its payload and a logical deletion mark.
pub struct Item {
    key: Key,
    payload: u64,
    taken: AtomicBool,
}

impl Item {
    pub fn new(key: Key, payload: u64) -> Self {
        Self {
            key,
            payload,
            taken: AtomicBool::new(false),
        }
    }

    #[inline]
    pub fn key(&self) -> Key {
        self.key
    }

    #[inline]
    pub fn payload(&self) -> u64 {
        self.payload
    }

    #[inline]
    pub fn is_taken(&self) -> bool {
        self.taken.load(Ordering::Acquire)
    }

    /// Marks the item deleted. Exactly one caller per item ever gets `true`.
    pub fn take(&self) -> bool {
        sched::yield_point(Site::Take);
        // Read first so losers do not bounce the cache line.
        if self.taken.load(Ordering::Acquire) {
            return false;
        }
        !self.taken.swap(true, Ordering::AcqRel)
    }
}

impl fmt::Debug for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Item")
            .field("key", &self.key)
            .field("payload", &self.payload)
            .field("taken", &self.is_taken())
            .finish()
    }
}

/// Application predicate over `(key, payload)` marking items that may be
/// dropped whenever the structure copies or trims them.
pub type DeletionHook = dyn Fn(Key, u64) -> bool + Send + Sync;

/// Decides which items survive a copy, merge or shrink.
#[derive(Clone, Copy, Default)]
pub struct Liveness<'a> {
    hook: Option<&'a DeletionHook>,
}

impl<'a> Liveness<'a> {
    /// Only the deletion mark counts.
    pub const MARK_ONLY: Liveness<'static> = Liveness { hook: None };

    pub fn with_hook(hook: Option<&'a DeletionHook>) -> Self {
        Self { hook }
    }

    #[inline]
    pub fn is_dead(&self, item: &Item) -> bool {
        item.is_taken() || self.hook.is_some_and(|h| h(item.key, item.payload))
    }
}

/// A sorted run of item references, largest key first.
///
/// A level-`l` block has room for `2^l` items.
pub struct Block {
    level: u32,
    filled: AtomicUsize,
    items: Vec<Arc<Item>>,
    bloom: u64,
}

impl Block {
    pub fn new(level: u32) -> Self {
        assert!((level as usize) < MAX_LEVELS, "block level {level} out of range");
        Self {
            level,
            filled: AtomicUsize::new(0),
            items: Vec::with_capacity(1 << level),
            bloom: 0,
        }
    }

    /// A level-0 block holding a single fresh item.
    pub fn singleton(item: Arc<Item>, bloom: u64) -> Self {
        let mut b = Self::new(0);
        b.bloom = bloom;
        b.append(item, Liveness::MARK_ONLY);
        b
    }

    #[inline]
    pub fn level(&self) -> u32 {
        self.level
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        1 << self.level
    }

    #[inline]
    pub fn filled(&self) -> usize {
        self.filled.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.filled() == 0
    }

    /// Bloom filter over the handles that contributed items.
    #[inline]
    pub fn bloom(&self) -> u64 {
        self.bloom
    }

    pub fn set_bloom(&mut self, bloom: u64) {
        self.bloom = bloom;
    }

    /// Item at `index`. Indices below `filled()` are occupied; items beyond it
    /// were trimmed by a shrink but stay readable.
    #[inline]
    pub fn item(&self, index: usize) -> &Arc<Item> {
        &self.items[index]
    }

    /// Occupied prefix of the block, largest key first.
    pub fn items(&self) -> &[Arc<Item>] {
        &self.items[..self.filled()]
    }

    /// Smallest occupied item.
    pub fn tail(&self) -> Option<&Arc<Item>> {
        self.filled().checked_sub(1).map(|i| &self.items[i])
    }

    pub fn keys(&self) -> Vec<Key> {
        self.items().iter().map(|i| i.key()).collect()
    }

    /// Appends `item` unless it is dead. The item must not be larger than the
    /// current tail and the block must have room.
    pub fn append(&mut self, item: Arc<Item>, live: Liveness<'_>) {
        if live.is_dead(&item) {
            return;
        }
        let filled = *self.filled.get_mut();
        debug_assert!(filled < self.capacity(), "append to a full block");
        debug_assert!(
            filled == 0 || self.items[filled - 1].key() >= item.key(),
            "append breaks descending order"
        );
        self.items.truncate(filled);
        self.items.push(item);
        *self.filled.get_mut() = filled + 1;
    }

    /// Fresh block of `level` holding the live items of `self`, in order.
    pub fn copy(&self, level: u32, live: Liveness<'_>) -> Block {
        let mut nb = Block::new(level);
        nb.bloom = self.bloom;
        for item in self.items() {
            nb.append(item.clone(), live);
        }
        nb
    }

    /// Two-way merge of `b1` and `b2` into this empty block. On equal keys the
    /// item from `b1` goes first.
    pub fn merge_in(&mut self, b1: &Block, b2: &Block, live: Liveness<'_>) {
        debug_assert_eq!(*self.filled.get_mut(), 0, "merge target must be empty");
        self.bloom |= b1.bloom | b2.bloom;
        let (mut xs, mut ys) = (b1.items().iter().peekable(), b2.items().iter().peekable());
        loop {
            let next = match (xs.peek(), ys.peek()) {
                (Some(x), Some(y)) => {
                    if x.key() >= y.key() {
                        xs.next()
                    } else {
                        ys.next()
                    }
                }
                (Some(_), None) => xs.next(),
                (None, Some(_)) => ys.next(),
                (None, None) => break,
            };
            if let Some(item) = next {
                self.append(item.clone(), live);
            }
        }
    }

    /// Merges two blocks into a fresh one of the next level above both, then
    /// shrinks the result.
    pub fn merged(b1: &Block, b2: &Block, live: Liveness<'_>) -> Arc<Block> {
        let mut nb = Block::new(b1.level.max(b2.level) + 1);
        nb.merge_in(b1, b2, live);
        Arc::new(nb).shrink(live)
    }

    /// Trims dead items off the tail and drops to the smallest level that
    /// still fits. When the level changes the items are copied (which filters
    /// dead items anywhere in the block) and the copy is shrunk again.
    pub fn shrink(self: Arc<Self>, live: Liveness<'_>) -> Arc<Block> {
        let mut f = self.filled();
        while f > 0 && live.is_dead(&self.items[f - 1]) {
            f -= 1;
        }
        let mut level = self.level;
        while level > 0 && f <= 1 << (level - 1) {
            level -= 1;
        }
        if level < self.level {
            let mut nb = Block::new(level);
            nb.bloom = self.bloom;
            for item in &self.items[..f] {
                nb.append(item.clone(), live);
            }
            return Arc::new(nb).shrink(live);
        }
        // Concurrent shrinkers may race; keep the smallest count.
        self.filled.fetch_min(f, Ordering::AcqRel);
        self
    }

    /// Smallest live item, scanning up from the tail past dead ones.
    pub fn min_live(&self, live: Liveness<'_>) -> Option<&Arc<Item>> {
        self.items().iter().rev().find(|i| !live.is_dead(i))
    }

    /// Number of live items; a full scan.
    pub fn live_count(&self, live: Liveness<'_>) -> usize {
        self.items().iter().filter(|i| !live.is_dead(i)).count()
    }

    /// Occupied count minus the run of dead items at the tail.
    pub fn trimmed_len(&self, live: Liveness<'_>) -> usize {
        let items = self.items();
        let dead_tail = items.iter().rev().take_while(|i| live.is_dead(i)).count();
        items.len() - dead_tail
    }

    /// Checks the descending-order and level-fill invariants.
    pub fn is_well_formed(&self) -> bool {
        let items = self.items();
        items.len() <= self.capacity() && items.windows(2).all(|w| w[0].key() >= w[1].key())
    }
}

/// Restores strictly decreasing levels over `blocks` (largest first).
///
/// Walks from the smallest block up, shrinking each one and merging it with
/// already-processed neighbours whose level is not smaller. Empty blocks are
/// dropped. Returns the new list and whether any merge happened.
pub fn consolidate_blocks<'a>(
    blocks: impl DoubleEndedIterator<Item = &'a Arc<Block>>,
    live: Liveness<'_>,
) -> (Vec<Arc<Block>>, bool) {
    let mut stack: Vec<Arc<Block>> = Vec::with_capacity(MAX_LEVELS);
    let mut merged = false;
    for b in blocks.rev() {
        let mut cur = b.clone().shrink(live);
        if cur.is_empty() {
            continue;
        }
        while let Some(top) = stack.last() {
            if top.level() < cur.level() {
                break;
            }
            let top = stack.pop().expect("checked above");
            cur = Block::merged(&cur, &top, live);
            merged = true;
        }
        if !cur.is_empty() {
            stack.push(cur);
        }
    }
    stack.reverse();
    (stack, merged)
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Block")
            .field("level", &self.level)
            .field("keys", &self.keys())
            .finish()
    }
}

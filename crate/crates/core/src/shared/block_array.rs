use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::Rng;

use crate::block::{consolidate_blocks, Block, Item, Key, Liveness, MAX_LEVELS};
use crate::shared::bloom::BloomHasher;

/// Copy-on-write snapshot of the shared LSM.
///
/// Blocks are held largest level first. `pivots[i]` is the offset of the first
/// candidate in block `i`; the candidates (offsets `pivots[i]..filled`) are the
/// `k + 1` smallest keys as of the last [`BlockArray::calculate_pivots`].
/// Once published the array itself is never modified.
#[derive(Clone, Default)]
pub struct BlockArray {
    blocks: Vec<Arc<Block>>,
    pivots: Vec<usize>,
    pivot_fills: Vec<usize>,
    version: u64,
}

impl BlockArray {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn size(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// `filled` of every block at the time pivots were computed.
    pub fn pivot_fills(&self) -> &[usize] {
        &self.pivot_fills
    }

    /// Publication counter; each successful push bumps it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn set_version(&mut self, v: u64) {
        self.version = v;
    }

    pub fn levels(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.level()).collect()
    }

    /// Places `block` at its level position and consolidates.
    pub fn insert(&mut self, block: Arc<Block>, live: Liveness<'_>) {
        let pos = self.blocks.partition_point(|b| b.level() > block.level());
        let (front, back) = self.blocks.split_at(pos);
        let all = front.iter().chain(std::iter::once(&block)).chain(back);
        (self.blocks, _) = consolidate_blocks(all, live);
        self.pivots.clear();
        self.pivot_fills.clear();
    }

    /// Shrinks blocks, merges level collisions and drops empty blocks.
    /// Returns whether a merge happened. Pivots are left stale.
    pub fn consolidate(&mut self, live: Liveness<'_>) -> bool {
        let (blocks, merged) = consolidate_blocks(self.blocks.iter(), live);
        assert!(blocks.len() <= MAX_LEVELS);
        self.blocks = blocks;
        self.pivots.clear();
        self.pivot_fills.clear();
        merged
    }

    /// Selects the `k + 1` smallest keys by an ascending merge over the block
    /// tails and records, per block, the offset where its share begins.
    pub fn calculate_pivots(&mut self, k: usize) {
        self.pivot_fills.clear();
        self.pivot_fills.extend(self.blocks.iter().map(|b| b.filled()));
        // Each pivot starts at its block's end and moves left per key taken.
        self.pivots.clone_from(&self.pivot_fills);
        let tail_key = |blocks: &[Arc<Block>], i: usize, p: usize| blocks[i].item(p - 1).key();
        if k < 16 {
            // A scan over at most MAX_LEVELS tails beats heap upkeep here.
            for _ in 0..=k {
                let next = (0..self.blocks.len())
                    .filter(|&i| self.pivots[i] > 0)
                    .min_by_key(|&i| tail_key(&self.blocks, i, self.pivots[i]));
                let Some(i) = next else { break };
                self.pivots[i] -= 1;
            }
            return;
        }
        let mut heap: BinaryHeap<(Reverse<Key>, usize)> = BinaryHeap::with_capacity(self.blocks.len());
        heap.extend(
            self.pivots
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0)
                .map(|(i, &p)| (Reverse(tail_key(&self.blocks, i, p)), i)),
        );
        for _ in 0..=k {
            let Some((_, i)) = heap.pop() else { break };
            self.pivots[i] -= 1;
            if self.pivots[i] > 0 {
                heap.push((Reverse(tail_key(&self.blocks, i, self.pivots[i])), i));
            }
        }
    }

    /// Number of candidate positions given the current `filled` counts.
    pub fn candidate_count(&self) -> usize {
        self.ranges().sum()
    }

    fn ranges(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .zip(&self.pivots)
            .map(|(b, &p)| b.filled().saturating_sub(p))
    }

    /// Relaxed minimum: a uniformly random candidate, falling back to its
    /// block's tail if it has been taken. The smallest live key among blocks
    /// whose Bloom filter matches `caller_mask` wins if it is smaller.
    pub fn find_min<R: Rng>(&self, rng: &mut R, caller_mask: u64, live: Liveness<'_>) -> Option<Arc<Item>> {
        let total = self.candidate_count();
        let mut chosen = None;
        if total > 0 {
            let mut r = rng.random_range(0..total);
            for (i, range) in self.ranges().enumerate() {
                if range <= r {
                    r -= range;
                    continue;
                }
                let b = &self.blocks[i];
                let tail = self.pivots[i] + range - 1;
                if r != range - 1 {
                    let item = b.item(self.pivots[i] + r);
                    if !item.is_taken() {
                        chosen = Some(item.clone());
                        break;
                    }
                }
                chosen = Some(b.item(tail).clone());
                break;
            }
        }
        let local = self
            .blocks
            .iter()
            .filter(|b| BloomHasher::contains(b.bloom(), caller_mask))
            .filter_map(|b| b.min_live(live))
            .min_by_key(|i| i.key());
        match (chosen, local) {
            (Some(c), Some(l)) if l.key() < c.key() => Some(l.clone()),
            (None, Some(l)) => Some(l.clone()),
            (c, _) => c,
        }
    }

    /// All occupied keys of the array (taken ones included).
    pub fn keys(&self) -> Vec<Key> {
        self.blocks.iter().flat_map(|b| b.keys()).collect()
    }
}

impl std::fmt::Debug for BlockArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockArray")
            .field("version", &self.version)
            .field("blocks", &self.blocks)
            .field("pivots", &self.pivots)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    const LIVE: Liveness<'static> = Liveness::MARK_ONLY;

    fn block(level: u32, keys: &[Key]) -> (Arc<Block>, Vec<Arc<Item>>) {
        let items: Vec<_> = keys.iter().map(|&k| Arc::new(Item::new(k, k))).collect();
        let mut b = Block::new(level);
        for it in &items {
            b.append(it.clone(), LIVE);
        }
        (Arc::new(b), items)
    }

    fn array(blocks: &[Arc<Block>]) -> BlockArray {
        let mut a = BlockArray::new();
        a.blocks = blocks.to_vec();
        a
    }

    #[test]
    fn insert_places_block_by_level() {
        let mut a = BlockArray::new();
        a.insert(block(2, &[4, 3, 2]).0, LIVE);
        assert_eq!(a.size(), 1);

        let mut a = array(&[block(3, &[9, 8, 7, 6, 5]).0, block(1, &[2, 1]).0]);
        a.insert(block(2, &[4, 3, 3]).0, LIVE);
        assert_eq!(a.levels(), vec![3, 2, 1]);

        let mut a = array(&[block(2, &[9, 8, 7]).0]);
        a.insert(block(2, &[4, 3, 2]).0, LIVE);
        assert_eq!(a.levels(), vec![3]);
        assert_eq!(a.keys(), vec![9, 8, 7, 4, 3, 2]);
    }

    #[test]
    fn consolidate_shrinks_then_merges() {
        let (b1, its) = block(2, &[9, 7, 4, 2]);
        its[2].take();
        its[3].take();
        let mut a = array(&[b1, block(1, &[6, 5]).0]);
        assert!(a.consolidate(LIVE));
        assert_eq!(a.levels(), vec![2]);
        assert_eq!(a.keys(), vec![9, 7, 6, 5]);

        let mut a = array(&[block(2, &[9, 7, 4]).0, block(1, &[3, 2]).0, block(0, &[1]).0]);
        assert!(!a.consolidate(LIVE));
        assert_eq!(a.levels(), vec![2, 1, 0]);

        let (b1, i1) = block(2, &[9, 7, 4]);
        let (b2, i2) = block(0, &[1]);
        i1.iter().chain(&i2).for_each(|i| {
            i.take();
        });
        let mut a = array(&[b1, b2]);
        assert!(!a.consolidate(LIVE));
        assert_eq!(a.size(), 0);
    }

    #[test]
    fn pivots_cover_k_plus_one_smallest() {
        let mut a = array(&[block(3, &[18, 12, 11, 9, 7, 3]).0, block(2, &[13, 11, 8, 4]).0]);
        a.calculate_pivots(3);
        assert_eq!(a.pivots(), &[4, 2]);
        assert_eq!(a.candidate_count(), 4);

        let mut a = array(&[block(0, &[5]).0]);
        for k in [0, 1, 10] {
            a.calculate_pivots(k);
            assert_eq!((a.pivots(), a.candidate_count()), (&[0][..], 1));
        }

        let mut a = array(&[block(1, &[9, 7]).0, block(0, &[4]).0]);
        a.calculate_pivots(0);
        assert_eq!(a.candidate_count(), 1);
        let mut rng = SmallRng::seed_from_u64(0);
        assert_eq!(a.find_min(&mut rng, 0, LIVE).unwrap().key(), 4);
    }

    #[test]
    fn find_min_is_uniform_over_candidates() {
        let mut a = array(&[block(3, &[18, 12, 11, 9, 7, 3]).0, block(2, &[13, 11, 8, 4]).0]);
        a.calculate_pivots(3);
        let mut rng = SmallRng::seed_from_u64(42);
        let mut counts = std::collections::HashMap::new();
        let n = 100_000;
        for _ in 0..n {
            *counts.entry(a.find_min(&mut rng, 0, LIVE).unwrap().key()).or_insert(0usize) += 1;
        }
        let mut keys: Vec<_> = counts.keys().copied().collect();
        keys.sort_unstable();
        assert_eq!(keys, vec![3, 4, 7, 8]);
        for (_, c) in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn single_live_candidate_ignores_rng() {
        let mut a = array(&[block(0, &[5]).0]);
        a.calculate_pivots(4);
        for seed in 0..20 {
            let mut rng = SmallRng::seed_from_u64(seed);
            assert_eq!(a.find_min(&mut rng, 0, LIVE).unwrap().key(), 5);
        }
    }

    #[test]
    fn taken_candidate_falls_back_to_block_tail() {
        let (b, its) = block(2, &[9, 7, 6, 5]);
        its[1].take();
        its[2].take();
        let mut a = array(&[b]);
        a.calculate_pivots(3);
        for seed in 0..50 {
            let mut rng = SmallRng::seed_from_u64(seed);
            let k = a.find_min(&mut rng, 0, LIVE).unwrap().key();
            assert!(k == 9 || k == 5, "got {k}");
        }
    }

    #[test]
    fn bloom_match_prefers_callers_smaller_key() {
        let h = BloomHasher::new(1);
        let me = h.mask(3);
        let mut other = Block::new(1);
        for k in [9, 8] {
            other.append(Arc::new(Item::new(k, 0)), LIVE);
        }
        let mut mine = Block::new(0);
        mine.append(Arc::new(Item::new(6, 0)), LIVE);
        mine.set_bloom(me);
        // Only 8 is a candidate (k = 0 would pick 6, so pin pivots by hand).
        let mut a = array(&[Arc::new(other), Arc::new(mine)]);
        a.pivots = vec![1, 1];
        let mut rng = SmallRng::seed_from_u64(0);
        assert_eq!(a.find_min(&mut rng, 0, LIVE).unwrap().key(), 8);
        assert_eq!(a.find_min(&mut rng, me, LIVE).unwrap().key(), 6);
    }

    fn arb_array() -> impl Strategy<Value = Vec<Vec<Key>>> {
        prop::collection::vec(prop::collection::vec(0u64..40, 1..20), 1..6)
    }

    proptest! {
        #[test]
        fn candidates_are_k_plus_one_smallest(runs in arb_array(), k in 0usize..12) {
            let blocks: Vec<_> = runs.into_iter().map(|mut r| {
                r.sort_unstable_by(|a, b| b.cmp(a));
                let level = r.len().next_power_of_two().trailing_zeros();
                block(level, &r).0
            }).collect();
            let mut a = array(&blocks);
            a.calculate_pivots(k);
            let mut all = a.keys();
            all.sort_unstable();
            let c = a.candidate_count();
            prop_assert!(c >= 1 && c <= k + 1);
            prop_assert_eq!(c, all.len().min(k + 1));
            let bound = all[c - 1];
            for (b, &p) in a.blocks().iter().zip(a.pivots()) {
                for (pos, item) in b.items().iter().enumerate() {
                    if pos >= p {
                        prop_assert!(item.key() <= bound);
                    } else {
                        prop_assert!(item.key() >= bound);
                    }
                }
            }
        }
    }
}

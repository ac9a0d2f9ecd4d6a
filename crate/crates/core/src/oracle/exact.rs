use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::block::Key;

/// Exact sequential priority queue used as a reference.
#[derive(Debug, Default, Clone)]
pub struct ExactQueue {
    heap: BinaryHeap<Reverse<Key>>,
}

impl ExactQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Key) {
        self.heap.push(Reverse(key));
    }

    pub fn delete_min(&mut self) -> Option<Key> {
        self.heap.pop().map(|Reverse(k)| k)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_key_order_with_duplicates() {
        let mut q = ExactQueue::new();
        [5, 1, 3, 1].into_iter().for_each(|k| q.insert(k));
        let out: Vec<_> = std::iter::from_fn(|| q.delete_min()).collect();
        assert_eq!(out, vec![1, 1, 3, 5]);
        assert!(q.is_empty());
    }
}

//! The combined k-LSM priority queue.
//!
//! Each [`Handle`] owns a private LSM bounded by `k` items; blocks that
//! outgrow it move to the single shared k-LSM. `try_delete_min` takes the
//! smaller of the local minimum and a relaxed shared minimum, and spies on a
//! random other handle when both are empty. With `T` registered handles every
//! successful delete returns one of the `T*k + 1` smallest keys, and a handle
//! never skips a live key it inserted itself.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use arc_swap::ArcSwapOption;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::block::{DeletionHook, Item, Key, Liveness};
use crate::dist::{local_level_limit, DistLsm, DistSlots};
use crate::shared::bloom::BloomHasher;
use crate::shared::{BlockArray, Session, SharedKlsm};
use crate::Error;

/// Construction parameters of a queue.
#[derive(Debug, Clone)]
pub struct Config {
    /// Relaxation parameter.
    pub k: usize,
    /// Capacity of the handle registry.
    pub max_handles: usize,
    /// Seeds the Bloom-filter hash tables and per-handle generators.
    pub seed: u64,
}

impl Config {
    pub fn new(k: usize, max_handles: usize) -> Self {
        Self {
            k,
            max_handles,
            seed: 0x6b6c_736d,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

struct Inner {
    k: usize,
    level_limit: Option<u32>,
    seed: u64,
    shared: SharedKlsm,
    victims: Box<[OnceLock<Arc<DistSlots>>]>,
    registered: AtomicUsize,
    hasher: BloomHasher,
    hook: ArcSwapOption<Box<DeletionHook>>,
}

/// A relaxed concurrent priority queue. Cloning gives another reference to
/// the same queue; all access goes through registered [`Handle`]s.
#[derive(Clone)]
pub struct KLsm {
    inner: Arc<Inner>,
}

impl KLsm {
    pub fn new(k: usize, max_handles: usize) -> Self {
        Self::with_config(Config::new(k, max_handles))
    }

    pub fn with_config(cfg: Config) -> Self {
        Self {
            inner: Arc::new(Inner {
                k: cfg.k,
                level_limit: local_level_limit(cfg.k),
                seed: cfg.seed,
                shared: SharedKlsm::new(cfg.k),
                victims: (0..cfg.max_handles).map(|_| OnceLock::new()).collect(),
                registered: AtomicUsize::new(0),
                hasher: BloomHasher::new(cfg.seed),
                hook: ArcSwapOption::empty(),
            }),
        }
    }

    pub fn k(&self) -> usize {
        self.inner.k
    }

    pub fn max_handles(&self) -> usize {
        self.inner.victims.len()
    }

    /// Number of handles registered so far.
    pub fn handle_count(&self) -> usize {
        self.inner.registered.load(Ordering::Acquire).min(self.max_handles())
    }

    /// Relaxation bound `T * k` for the handles registered so far.
    pub fn rho(&self) -> usize {
        self.handle_count() * self.inner.k
    }

    /// Registers a new handle with a dense id.
    pub fn register(&self) -> Result<Handle, Error> {
        let id = self.inner.registered.fetch_add(1, Ordering::AcqRel);
        if id >= self.max_handles() {
            self.inner.registered.fetch_sub(1, Ordering::AcqRel);
            return Err(Error::RegistryFull(self.max_handles()));
        }
        let dist = DistLsm::new();
        self.inner.victims[id]
            .set(dist.slots().clone())
            .unwrap_or_else(|_| unreachable!("handle id {id} registered twice"));
        let seed = self.inner.seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Ok(Handle {
            id,
            bloom: self.inner.hasher.mask(id as u64),
            queue: self.clone(),
            dist,
            session: Session::default(),
            rng: SmallRng::seed_from_u64(seed),
        })
    }

    /// Installs a predicate marking items that copies, merges and shrinks
    /// may drop. Matching items can still be returned until purged.
    pub fn set_needs_deletion_hook<F>(&self, hook: F)
    where
        F: Fn(Key, u64) -> bool + Send + Sync + 'static,
    {
        self.inner.hook.store(Some(Arc::new(Box::new(hook))));
    }

    pub fn clear_needs_deletion_hook(&self) {
        self.inner.hook.store(None);
    }

    /// Item count within `rho()` of the number of live items, from block
    /// fill counts minus dead tail runs. Items copied by spies count twice.
    pub fn approx_size(&self) -> usize {
        let live = Liveness::MARK_ONLY;
        let shared: usize = self
            .inner
            .shared
            .load()
            .map_or(0, |a| a.blocks().iter().map(|b| b.trimmed_len(live)).sum());
        let local: usize = self
            .inner
            .victims
            .iter()
            .filter_map(OnceLock::get)
            .flat_map(|s| s.observe())
            .map(|b| b.trimmed_len(live))
            .sum();
        shared + local
    }

    /// Currently published shared array.
    pub fn shared_snapshot(&self) -> Option<Arc<BlockArray>> {
        self.inner.shared.load()
    }

    /// Spy-visible blocks of handle `id`.
    pub fn dist_view(&self, id: usize) -> Option<&Arc<DistSlots>> {
        self.inner.victims.get(id).and_then(OnceLock::get)
    }

    /// Successful shared publications so far.
    pub fn publications(&self) -> u64 {
        self.inner.shared.publications()
    }

    /// Shared publication attempts that lost a race.
    pub fn failed_publications(&self) -> u64 {
        self.inner.shared.failed_pushes()
    }
}

/// A single-owner session on a [`KLsm`]: the handle's private LSM, its view
/// of the shared LSM and its random generator. Use one handle per thread.
pub struct Handle {
    id: usize,
    bloom: u64,
    queue: KLsm,
    dist: DistLsm,
    session: Session,
    rng: SmallRng,
}

impl Handle {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn queue(&self) -> &KLsm {
        &self.queue
    }

    /// The handle's private LSM.
    pub fn dist(&self) -> &DistLsm {
        &self.dist
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Inserts a key. Always succeeds; on return the key is reachable by
    /// every handle.
    pub fn insert(&mut self, key: Key, payload: u64) {
        let inner = &*self.queue.inner;
        let hook = inner.hook.load();
        let live = Liveness::with_hook(hook.as_deref().map(|h| &**h));
        let item = Arc::new(Item::new(key, payload));
        if let Some(t) = self.dist.insert(item, self.bloom, inner.level_limit, live) {
            inner.shared.insert(&mut self.session, t.block.clone(), live);
            self.dist.finish_transfer(t);
        }
    }

    /// Removes and returns a key among the `rho + 1` smallest, or `None` if
    /// the queue looked empty. `None` may be spurious; callers that need
    /// emptiness should retry.
    pub fn try_delete_min(&mut self) -> Option<(Key, u64)> {
        let Handle {
            id,
            bloom,
            queue,
            dist,
            session,
            rng,
        } = self;
        let inner = &*queue.inner;
        let hook = inner.hook.load();
        let live = Liveness::with_hook(hook.as_deref().map(|h| &**h));
        let mut spied = false;
        loop {
            if let Some(item) = take_min(inner, dist, session, rng, *bloom, live) {
                return Some((item.key(), item.payload()));
            }
            if spied || !spy(inner, *id, dist, rng, live) {
                return None;
            }
            spied = true;
        }
    }
}

fn take_min(
    inner: &Inner,
    dist: &mut DistLsm,
    session: &mut Session,
    rng: &mut SmallRng,
    bloom: u64,
    live: Liveness<'_>,
) -> Option<Arc<Item>> {
    loop {
        if dist.needs_consolidation(live) {
            dist.consolidate(live);
        }
        let local = dist.find_min();
        let shared = inner.shared.find_min(session, rng, bloom, live);
        // Ties go to the local item.
        let item = match (local, shared) {
            (Some(l), Some(s)) if s.key() < l.key() => s,
            (Some(l), _) => l,
            (None, Some(s)) => s,
            (None, None) => return None,
        };
        if item.take() {
            return Some(item);
        }
    }
}

/// One spy attempt on a uniformly chosen other handle.
fn spy(inner: &Inner, id: usize, dist: &mut DistLsm, rng: &mut SmallRng, live: Liveness<'_>) -> bool {
    let n = inner.registered.load(Ordering::Acquire).min(inner.victims.len());
    if n < 2 || !dist.is_empty() {
        return false;
    }
    let mut victim = rng.random_range(0..n - 1);
    if victim >= id {
        victim += 1;
    }
    match inner.victims[victim].get() {
        Some(slots) => dist.spy(slots, inner.k, live),
        None => false,
    }
}

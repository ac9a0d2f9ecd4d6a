//! A lock-free relaxed priority queue built from log-structured merge trees.
//!
//! [`KLsm`] combines one private LSM per [`Handle`] with a shared,
//! copy-on-write LSM. Deletions return one of the `T*k + 1` smallest keys for
//! `T` handles and relaxation `k`; a handle never skips keys it inserted
//! itself. With `k = 0` and one handle the queue is exact.
//!
//! ```
//! use klsm::KLsm;
//!
//! let q = KLsm::new(4, 2);
//! let mut h = q.register().unwrap();
//! h.insert(3, 30);
//! h.insert(1, 10);
//! assert_eq!(h.try_delete_min(), Some((1, 10)));
//! ```
//!
//! The [`oracle`] module holds the reference checkers and a deterministic
//! multi-handle driver; [`bench`] holds the throughput and shortest-path
//! workloads.

pub mod bench;
pub mod block;
pub mod dist;
mod error;
pub mod oracle;
pub mod queue;
pub mod sched;
pub mod shared;

pub use block::{Block, Item, Key, Liveness, MAX_LEVELS};
pub use error::Error;
pub use queue::{Config, Handle, KLsm};

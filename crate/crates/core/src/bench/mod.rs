//! Throughput and single-source shortest path benchmarks.

mod graph;
mod sssp;
mod stats;
mod throughput;

use thiserror::Error;

pub use graph::{dijkstra_ref, gen_gnp, Graph, INFINITY, MAX_WEIGHT};
pub use sssp::{sssp_run, SsspResult};
pub use stats::Summary;
pub use throughput::{throughput_run, ThroughputConfig, ThroughputStats, KEY_RANGE};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Queue(#[from] crate::Error),
}

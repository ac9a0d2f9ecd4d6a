//! Throughput and shortest-path benchmarks for the k-LSM queue.
//!
//! Prints one CSV line per run. Throughput keys are uniform in `[0, 2^31)`
//! and deleted keys are not reinserted. SSSP graphs are directed
//! Erdős–Rényi graphs with weights uniform in `[1, 10^8]`, solved from node 0.
//! With `--reps R > 1`, run `i` uses seed `seed + i` and a mean with a 95%
//! confidence interval goes to standard error.

use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use klsm::bench::{dijkstra_ref, gen_gnp, sssp_run, throughput_run, Summary, ThroughputConfig, MAX_WEIGHT};

const HEADER: &str = "mode,threads,k,prefill_or_nodes,seed,duration_s,total_ops,ops_per_thread_per_s,extra_iterations";

#[derive(Parser)]
#[command(
    version,
    about = "Benchmarks for the k-LSM relaxed priority queue",
    after_help = "Throughput keys are uniform in [0, 2^31); deleted keys are not reinserted. \
SSSP graphs are directed Erdos-Renyi graphs with weights uniform in [1, 10^8], solved from node 0. \
With --reps R, run i uses seed+i and the mean with a 95% confidence interval goes to stderr."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Random insert/delete mix on a prefilled queue.
    Throughput {
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 1_000_000)]
        prefill: usize,
        /// Seconds per run.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of operations that insert.
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = 1)]
        reps: u64,
    },
    /// Label-correcting shortest paths from node 0.
    Sssp {
        /// Node count [default: 1000, or 10000 with --full-scale].
        #[arg(long)]
        nodes: Option<usize>,
        /// Edge probability [default: 0.05, or 0.5 with --full-scale].
        #[arg(long)]
        edge_prob: Option<f64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Compare distances with sequential Dijkstra; exit 1 on mismatch.
        #[arg(long)]
        verify: bool,
        /// Large-graph defaults (about 5e7 edges).
        #[arg(long)]
        full_scale: bool,
        #[arg(long, default_value_t = 1)]
        reps: u64,
    },
}

fn summarize(label: &str, samples: &[f64]) {
    if samples.len() > 1 {
        let s = Summary::of(samples);
        eprintln!("# {label}: mean {:.3} +/- {:.3} (95% CI, n={})", s.mean, s.ci95, s.n);
    }
}

fn run(cmd: Cmd) -> Result<bool, String> {
    println!("{HEADER}");
    match cmd {
        Cmd::Throughput { threads, k, prefill, duration, seed, ratio, reps } => {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err("duration must be positive".into());
            }
            let mut rates = Vec::new();
            for rep in 0..reps {
                let mut cfg = ThroughputConfig::new(threads, k);
                cfg.prefill = prefill;
                cfg.duration = Duration::from_secs_f64(duration);
                cfg.ratio = ratio;
                cfg.seed = seed + rep;
                let st = throughput_run(&cfg).map_err(|e| e.to_string())?;
                if !st.conserved() {
                    return Err(format!("item accounting mismatch: {st:?}"));
                }
                println!(
                    "throughput,{threads},{k},{prefill},{},{:.3},{},{:.1},",
                    cfg.seed,
                    st.elapsed.as_secs_f64(),
                    st.total_ops,
                    st.ops_per_thread_per_s
                );
                rates.push(st.ops_per_thread_per_s);
            }
            summarize("ops_per_thread_per_s", &rates);
            Ok(true)
        }
        Cmd::Sssp { nodes, edge_prob, threads, k, seed, verify, full_scale, reps } => {
            let nodes = nodes.unwrap_or(if full_scale { 10_000 } else { 1000 });
            let p = edge_prob.unwrap_or(if full_scale { 0.5 } else { 0.05 });
            if nodes == 0 {
                return Err("need at least one node".into());
            }
            let (mut rates, mut extras) = (Vec::new(), Vec::new());
            let mut all_match = true;
            for rep in 0..reps {
                let seed = seed + rep;
                let g = gen_gnp(nodes, p, seed, MAX_WEIGHT).map_err(|e| e.to_string())?;
                let r = sssp_run(&g, 0, threads, k).map_err(|e| e.to_string())?;
                let pops = r.iterations + r.stale_pops;
                let secs = r.elapsed.as_secs_f64();
                let rate = pops as f64 / threads as f64 / secs;
                println!(
                    "sssp,{threads},{k},{nodes},{seed},{secs:.3},{pops},{rate:.1},{}",
                    r.extra_iterations
                );
                if verify {
                    let expected = dijkstra_ref(&g, 0);
                    if let Some(v) = (0..nodes).find(|&v| r.dist[v] != expected[v]) {
                        eprintln!("seed {seed}: distance mismatch at node {v}: got {}, expected {}", r.dist[v], expected[v]);
                        all_match = false;
                    }
                }
                rates.push(rate);
                extras.push(r.extra_iterations as f64);
            }
            summarize("ops_per_thread_per_s", &rates);
            summarize("extra_iterations", &extras);
            Ok(all_match)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("klsm-bench: {e}");
            ExitCode::from(2)
        }
    }
}

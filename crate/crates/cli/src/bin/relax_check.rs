//! Checks a linearized trace against structural or temporal relaxation.
//!
//! Exit status: 0 when the trace passes, 1 on a violation, 2 when the trace
//! cannot be read or is malformed.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use klsm::oracle::{check, Mode, OpKind, Trace, TraceError, Verdict};

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Structural,
    Temporal,
}

/// Verify that a trace of `idx op handle key` lines (op one of I, D, F) is
/// rho-relaxed.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Relaxation bound.
    #[arg(long)]
    rho: usize,
    #[arg(long, value_enum, default_value = "structural")]
    mode: CliMode,
    /// Trace file, or `-` for standard input.
    tracefile: PathBuf,
}

fn read(path: &PathBuf) -> std::io::Result<String> {
    let mut s = String::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut s)?;
    } else {
        s = std::fs::read_to_string(path)?;
    }
    Ok(s)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match read(&args.tracefile) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("relax-check: {}: {e}", args.tracefile.display());
            return ExitCode::from(2);
        }
    };
    let (trace, lines) = match Trace::parse_with_lines(&text) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("relax-check: malformed trace: {e}");
            return ExitCode::from(2);
        }
    };
    let mode = match args.mode {
        CliMode::Structural => Mode::Structural,
        CliMode::Temporal => Mode::Temporal,
    };
    match check(&trace, args.rho, mode) {
        Ok(Verdict::Pass) => {
            println!("ok: {} records, rho {}", trace.len(), args.rho);
            ExitCode::SUCCESS
        }
        Ok(Verdict::Fail(v)) => {
            let what = match (mode, v.line.op) {
                (Mode::Structural, OpKind::Fail) => format!("failed with {} live items", v.measure - 1),
                (Mode::Structural, _) => format!("returned a key of rank {}", v.measure),
                (Mode::Temporal, _) => format!("skipped an item with {} later insertions", v.measure),
            };
            println!("violation at line {}: `{}` {what}, rho {}", lines[v.record], v.line, v.rho);
            ExitCode::from(1)
        }
        Err(e) => {
            let e = match e {
                TraceError::NotLive { record, key } => format!("line {}: key {key} is not live", lines[record]),
                TraceError::IndexOrder { record, idx } => {
                    format!("line {}: linearization index {idx} does not increase", lines[record])
                }
                other => other.to_string(),
            };
            eprintln!("relax-check: malformed trace: {e}");
            ExitCode::from(2)
        }
    }
}

//! Benchmark matrix runner and qlog analyzer.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use common::CliResult;
use nbquic::bench::matrix::{parse_modes, MatrixConfig};
use nbquic::bench::qlog::DEFAULT_STALL_THRESHOLD_MS;
use nbquic::bench::runner::{Harness, RunOptions};
use nbquic::bench::{analyze_qlog, emit_report};

#[derive(Parser, Debug)]
#[command(about = "HTTP/3 vs MQTT-over-QUIC benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the experiment matrix and write CSV/plot reports.
    Run(RunArgs),
    /// Extract the congestion window series and stalls from a qlog.
    Qlog(QlogArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Matrix file; the built-in matrix when absent.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u32>,
    /// Comma separated subset of h3,mq-ff,mq-ad.
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    qlog_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QlogArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STALL_THRESHOLD_MS)]
    stall_threshold_ms: f64,
}

fn artifacts() -> Vec<PathBuf> {
    let Some(dir) = std::env::current_exe().ok().and_then(|p| p.parent().map(Path::to_path_buf)) else {
        return vec![];
    };
    let ext = std::env::consts::EXE_SUFFIX;
    let mut v: Vec<PathBuf> =
        ["broker", "h3pub", "mqpub", "netlab", "bench"].iter().map(|b| dir.join(format!("{b}{ext}"))).collect();
    v.push(dir.join(format!("{}nbquic_ffi{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX)));
    v
}

async fn run(a: RunArgs) -> CliResult {
    let mut cfg = match &a.matrix {
        Some(p) => MatrixConfig::parse(&std::fs::read_to_string(p)?)?,
        None => MatrixConfig::default(),
    };
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(m) = &a.modes {
        cfg.modes = parse_modes(m)?;
    }
    let specs = cfg.build()?;
    let opts = RunOptions { parallelism: a.parallelism, qlog_dir: a.qlog_dir.clone(), ..Default::default() };
    let harness = Harness::new()?;
    let mut samples = Vec::new();
    let mut failed = 0;
    for (i, spec) in specs.iter().enumerate() {
        let t = Instant::now();
        let res = harness.run_experiment(spec, &opts).await;
        for f in &res.failures {
            eprintln!("excluded {} {} #{}: {}", f.experiment_id, f.mode, f.iteration, f.reason);
        }
        failed += res.failures.len();
        println!(
            "[{}/{}] {} {}: {} ok, {} excluded ({:.0} s)",
            i + 1,
            specs.len(),
            spec.id(),
            spec.mode,
            res.outputs.len(),
            res.failures.len(),
            t.elapsed().as_secs_f64()
        );
        samples.extend(res.samples());
    }
    let files = emit_report(&specs, &samples, &a.out_dir, &artifacts())?;
    println!("wrote {} files to {}; {failed} iterations excluded", files.len(), a.out_dir.display());
    Ok(())
}

fn qlog(a: QlogArgs) -> CliResult {
    let series = analyze_qlog(&std::fs::read_to_string(&a.input)?, a.stall_threshold_ms)?;
    let csv = series.to_csv();
    match &a.out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    eprintln!(
        "{} cwnd samples, {} stalls, {:.0} ms stalled",
        series.samples.len(),
        series.stalls.len(),
        series.total_stall_ms()
    );
    Ok(())
}

#[tokio::main]
async fn main() -> CliResult {
    common::init_logging();
    match Cli::parse().cmd {
        Cmd::Run(a) => run(a).await,
        Cmd::Qlog(a) => qlog(a),
    }
}

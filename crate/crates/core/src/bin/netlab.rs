//! UDP impairment proxy.

mod common;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use common::CliResult;
use nbquic::netlab::{start_proxy, ImpairmentSpec, LossDirection};
use nbquic::tuning::NetworkProfile;

#[derive(Parser, Debug)]
#[command(about = "Shapes UDP traffic between a client and an upstream server")]
struct Cli {
    #[arg(long)]
    listen: SocketAddr,
    #[arg(long)]
    upstream: String,
    /// Start from a named network profile (nbiot2); explicit flags override it.
    #[arg(long)]
    preset: Option<String>,
    /// One-way delay per direction.
    #[arg(long)]
    delay_ms: Option<f64>,
    #[arg(long)]
    jitter_ms: Option<f64>,
    #[arg(long)]
    loss_pct: Option<f64>,
    /// up, down or both
    #[arg(long)]
    loss_direction: Option<LossDirection>,
    #[arg(long)]
    rate_kbit_up: Option<f64>,
    #[arg(long)]
    rate_kbit_down: Option<f64>,
    #[arg(long)]
    mtu: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Counters CSV written on exit.
    #[arg(long)]
    counters_out: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> CliResult {
    common::init_logging();
    let cli = Cli::parse();
    let mut spec = match &cli.preset {
        Some(name) => ImpairmentSpec::from_profile(&NetworkProfile::by_name(name)?, 0.0, cli.seed),
        None => ImpairmentSpec { seed: cli.seed, ..Default::default() },
    };
    if let Some(v) = cli.delay_ms {
        spec.delay_ms = v;
    }
    if let Some(v) = cli.jitter_ms {
        spec.jitter_ms = v;
    }
    if let Some(v) = cli.loss_pct {
        spec.loss_pct = v;
    }
    if let Some(v) = cli.loss_direction {
        spec.loss_direction = v;
    }
    if cli.rate_kbit_up.is_some() {
        spec.rate_kbit_up = cli.rate_kbit_up;
    }
    if cli.rate_kbit_down.is_some() {
        spec.rate_kbit_down = cli.rate_kbit_down;
    }
    if let Some(v) = cli.mtu {
        spec.mtu = v;
    }
    spec.validate()?;
    let (_, upstream) = common::resolve(&cli.upstream).await?;
    let proxy = start_proxy(cli.listen, upstream, &spec, false).await?;
    tracing::info!(listen = %proxy.local_addr(), %upstream, ?spec, "proxy running");
    tokio::signal::ctrl_c().await?;
    proxy.shutdown();
    let csv = proxy.counters().to_csv();
    match &cli.counters_out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

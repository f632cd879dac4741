//! Pub/sub broker: HTTP/3 front end, optional MQTT-over-QUIC front end.

mod common;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::Parser;
use common::{CliResult, TuningArgs};
use nbquic::auth::CredentialStore;
use nbquic::broker::{BrokerConfig, BrokerShared};
use nbquic::events::EventRecorder;
use nbquic::pubsub::{Registry, RegistryConfig};
use nbquic::quic::ServerIdentity;

#[derive(Parser, Debug)]
#[command(about = "HTTP/3 publish-subscribe broker")]
struct Cli {
    #[arg(long, default_value = "0.0.0.0:4433")]
    listen: SocketAddr,
    /// Also serve MQTT over QUIC here.
    #[arg(long)]
    mq_listen: Option<SocketAddr>,
    /// Certificate chain (PEM). Without --cert/--key an in-memory
    /// self-signed certificate for localhost is used.
    #[arg(long, requires = "key")]
    cert: Option<PathBuf>,
    #[arg(long, requires = "cert")]
    key: Option<PathBuf>,
    /// Create a self-signed localhost certificate at --cert/--key first.
    #[arg(long, requires = "cert")]
    generate_cert: bool,
    /// `user:password` per line.
    #[arg(long)]
    creds: PathBuf,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Events kept per topic for late subscribers.
    #[arg(long)]
    retain: Option<usize>,
    #[arg(long)]
    qlog_dir: Option<PathBuf>,
    /// Written on shutdown.
    #[arg(long)]
    events_out: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> CliResult {
    common::init_logging();
    let cli = Cli::parse();
    let tuning = cli.tuning.load()?;
    let identity = match (&cli.cert, &cli.key) {
        (Some(c), Some(k)) => {
            if cli.generate_cert {
                ServerIdentity::generate_pem_files(&["localhost"], c, k)?;
            }
            ServerIdentity::from_pem_files(c, k)?
        }
        _ => ServerIdentity::self_signed(&["localhost"])?,
    };
    let mut registry_cfg = RegistryConfig::default();
    if let Some(r) = cli.retain {
        registry_cfg.retain_depth = r;
    }
    let creds = Arc::new(CredentialStore::load(&cli.creds)?);
    let events = EventRecorder::new(Instant::now());
    let shared = BrokerShared::with_events(
        Arc::new(Registry::new(registry_cfg)),
        creds,
        BrokerConfig { identity, tuning, qlog_dir: cli.qlog_dir.clone() },
        events.clone(),
    );
    let h3 = nbquic::h3::serve_broker(cli.listen, shared.clone()).await?;
    println!("h3 listening on {}", h3.local_addr());
    let mq = match cli.mq_listen {
        Some(addr) => {
            let s = nbquic::mq::serve_mq_broker(addr, shared.clone()).await?;
            println!("mqtt listening on {}", s.local_addr());
            Some(s)
        }
        None => None,
    };
    tokio::signal::ctrl_c().await?;
    h3.shutdown();
    if let Some(m) = &mq {
        m.shutdown();
    }
    common::write_events(cli.events_out.as_deref(), &events)?;
    let m = &shared.metrics;
    let get = |c: &std::sync::atomic::AtomicU64| c.load(std::sync::atomic::Ordering::Relaxed);
    println!(
        "connections={} requests={} governor_adverts={} stack_max_streams_frames={} mq_publishes={}",
        get(&m.connections),
        get(&m.requests),
        get(&m.governor_adverts),
        get(&m.stack_max_streams_frames),
        get(&m.mq_publishes)
    );
    Ok(())
}

//! MQTT-over-QUIC publisher.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use bytes::Bytes;
use clap::Parser;
use common::{CliResult, TrustArgs, TuningArgs};
use nbquic::events::EventRecorder;
use nbquic::mq::client::DEFAULT_INFLIGHT_WINDOW;
use nbquic::mq::{MqClientConfig, MqSession, QosMode};

#[derive(Parser, Debug)]
#[command(about = "MQTT over QUIC publisher")]
struct Cli {
    /// Broker MQTT front end, host:port.
    #[arg(long)]
    addr: String,
    #[arg(long)]
    topic: String,
    #[arg(long, default_value_t = 1)]
    count: u32,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    interval_ms: u64,
    /// 0 fire-and-forget, 1 acknowledged.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    qos: u8,
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    pass: Option<String>,
    #[arg(long, default_value = "mqpub")]
    client_id: String,
    #[arg(long, default_value_t = DEFAULT_INFLIGHT_WINDOW)]
    inflight: usize,
    #[command(flatten)]
    trust: TrustArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    initial_rtt_ms: Option<u64>,
    #[arg(long)]
    qlog_dir: Option<PathBuf>,
    #[arg(long)]
    events_out: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> CliResult {
    common::init_logging();
    let cli = Cli::parse();
    let (host, addr) = common::resolve(&cli.addr).await?;
    let mut tuning = cli.tuning.load()?;
    if let Some(ms) = cli.initial_rtt_ms {
        tuning.initial_rtt_guess_ms = ms;
    }
    let cfg = MqClientConfig {
        server_name: cli.trust.server_name.clone().unwrap_or(host),
        client_id: cli.client_id.clone(),
        user: cli.user.clone(),
        pass: cli.pass.clone(),
        tuning,
        trust: cli.trust.trust()?,
        qlog: common::client_qlog(cli.qlog_dir.as_deref(), "mqpub")?,
        bind: common::unspecified_for(&addr),
        inflight_window: cli.inflight,
    };
    let events = EventRecorder::new(Instant::now());
    let session = MqSession::connect(addr, cfg, events.clone()).await?;
    let qos = if cli.qos == 1 { QosMode::AcknowledgedDelivery } else { QosMode::FireAndForget };
    let start = Instant::now();
    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..cli.count {
        let payload = Bytes::from(common::payload(cli.size, i + 1));
        match qos {
            QosMode::FireAndForget => session.publish(&cli.topic, payload, qos, i as u64 + 1).await?,
            QosMode::AcknowledgedDelivery => {
                let (s, t) = (session.clone(), cli.topic.clone());
                tasks.spawn(async move { s.publish(&t, payload, qos, i as u64 + 1).await });
            }
        }
        tokio::time::sleep(Duration::from_millis(cli.interval_ms)).await;
    }
    let mut failures = 0;
    while let Some(r) = tasks.join_next().await {
        if let Err(e) = r? {
            eprintln!("publish failed: {e}");
            failures += 1;
        }
    }
    session.disconnect().await?;
    let elapsed = start.elapsed();
    session.close(Duration::from_millis(500)).await;
    common::write_events(cli.events_out.as_deref(), &events)?;
    println!(
        "published {} of {} (qos {}) in {:.0} ms, ttfdf {} ms",
        cli.count - failures,
        cli.count,
        cli.qos,
        elapsed.as_secs_f64() * 1000.0,
        events.snapshot().ttfdf_ms().map_or("n/a".into(), |t| format!("{t:.0}"))
    );
    if failures > 0 {
        return Err(format!("{failures} publishes failed").into());
    }
    Ok(())
}

//! HTTP/3 publisher and subscriber.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use common::{CliResult, TrustArgs, TuningArgs};
use nbquic::events::EventRecorder;
use nbquic::h3::route::parse_route;
use nbquic::h3::{H3ClientConfig, H3Session, WriteBufferPolicy};

#[derive(Parser, Debug)]
#[command(about = "HTTP/3 pub/sub client")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    Publish(PublishArgs),
    Subscribe(SubscribeArgs),
}

#[derive(Args, Debug)]
struct Conn {
    /// https://<host:port>/topics/<topic>
    #[arg(long)]
    url: String,
    #[arg(long)]
    user: String,
    #[arg(long)]
    pass: String,
    #[command(flatten)]
    trust: TrustArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Overrides the profile's initial RTT guess.
    #[arg(long)]
    initial_rtt_ms: Option<u64>,
    /// fixed or dynamic
    #[arg(long, default_value = "dynamic")]
    write_buffer: WriteBufferPolicy,
    #[arg(long)]
    qlog_dir: Option<PathBuf>,
    #[arg(long)]
    events_out: Option<PathBuf>,
    /// PUT the topic first.
    #[arg(long)]
    create: bool,
}

#[derive(Args, Debug)]
struct PublishArgs {
    #[command(flatten)]
    conn: Conn,
    #[arg(long, default_value_t = 1)]
    count: u32,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    interval_ms: u64,
}

#[derive(Args, Debug)]
struct SubscribeArgs {
    #[command(flatten)]
    conn: Conn,
    /// Event payloads, one per line; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many events.
    #[arg(long)]
    max_events: Option<u64>,
}

async fn open(conn: &Conn) -> CliResult<(H3Session, String, EventRecorder)> {
    let rest = conn
        .url
        .strip_prefix("https://")
        .ok_or("url must start with https://")?;
    let (hostport, path) = rest.split_at(rest.find('/').ok_or("url has no path")?);
    let route = parse_route("GET", path).map_err(|e| format!("{path}: {e:?}"))?;
    let (host, addr) = common::resolve(hostport).await?;
    let mut tuning = conn.tuning.load()?;
    if let Some(ms) = conn.initial_rtt_ms {
        tuning.initial_rtt_guess_ms = ms;
    }
    let cfg = H3ClientConfig {
        server_name: conn.trust.server_name.clone().unwrap_or(host),
        authority: hostport.to_string(),
        user: conn.user.clone(),
        pass: conn.pass.clone(),
        tuning,
        buffer_policy: conn.write_buffer,
        trust: conn.trust.trust()?,
        qlog: common::client_qlog(conn.qlog_dir.as_deref(), "h3pub")?,
        bind: common::unspecified_for(&addr),
    };
    let events = EventRecorder::new(Instant::now());
    let session = H3Session::connect(addr, cfg, events.clone()).await?;
    if conn.create {
        session.create_topic(&route.topic).await?;
    }
    Ok((session, route.topic, events))
}

async fn publish(a: PublishArgs) -> CliResult {
    let (session, topic, events) = open(&a.conn).await?;
    let start = Instant::now();
    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..a.count {
        let (s, t, p) = (session.clone(), topic.clone(), common::payload(a.size, i + 1));
        tasks.spawn(async move { s.publish(&t, &p, i as u64 + 1).await });
        tokio::time::sleep(Duration::from_millis(a.interval_ms)).await;
    }
    let mut failures = 0;
    while let Some(r) = tasks.join_next().await {
        if let Err(e) = r? {
            eprintln!("publish failed: {e}");
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    session.close(Duration::from_millis(500)).await;
    common::write_events(a.conn.events_out.as_deref(), &events)?;
    let log = events.snapshot();
    println!(
        "published {} of {} in {:.0} ms, ttfdf {} ms",
        a.count - failures,
        a.count,
        elapsed.as_secs_f64() * 1000.0,
        log.ttfdf_ms().map_or("n/a".into(), |t| format!("{t:.0}"))
    );
    if failures > 0 {
        return Err(format!("{failures} publishes failed").into());
    }
    Ok(())
}

async fn subscribe(a: SubscribeArgs) -> CliResult {
    let (session, topic, events) = open(&a.conn).await?;
    let mut sub = session.subscribe(&topic).await?;
    let mut out: Box<dyn Write + Send> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout()),
    };
    let mut n = 0;
    loop {
        tokio::select! {
            ev = sub.next() => match ev {
                Some(ev) => {
                    out.write_all(&ev.payload)?;
                    out.write_all(b"\n")?;
                    out.flush()?;
                    n += 1;
                    if a.max_events.is_some_and(|m| n >= m) {
                        break;
                    }
                }
                None => {
                    eprintln!("subscription ended: {:?}", sub.end_reason());
                    break;
                }
            },
            _ = tokio::signal::ctrl_c() => break,
        }
    }
    sub.cancel();
    session.close(Duration::from_millis(500)).await;
    common::write_events(a.conn.events_out.as_deref(), &events)?;
    Ok(())
}

#[tokio::main]
async fn main() -> CliResult {
    common::init_logging();
    match Cli::parse().cmd {
        Cmd::Publish(a) => publish(a).await,
        Cmd::Subscribe(a) => subscribe(a).await,
    }
}

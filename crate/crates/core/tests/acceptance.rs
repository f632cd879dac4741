//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any failed.

mod common;

use std::future::Future;
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nbquic::bench::matrix::{ExperimentClass, ExperimentSpec, Mode};
use nbquic::bench::runner::{ExperimentResult, Harness, Metric, RunOptions};
use nbquic::bench::{analyze_qlog, summarize, SummaryStats};
use nbquic::events::EventRecorder;
use nbquic::governor::{NewLimit, StreamBudget};
use nbquic::h3::H3Session;
use nbquic::netlab::{start_proxy, Direction, ImpairmentSpec, LossDirection};
use nbquic::pubsub::TopicName;
use nbquic::quic::{PacketKind, QlogSink};
use nbquic::tuning::TuningProfile;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tokio::net::UdpSocket;

type Check = Pin<Box<dyn Future<Output = Result<String, String>> + Send>>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

fn spec(mode: Mode, class: ExperimentClass, count: u32, size: usize, rtt: u64, loss: f64, iterations: u32) -> ExperimentSpec {
    ExperimentSpec {
        class,
        mode,
        message_count: count,
        message_size: size,
        interval_ms: 100,
        rtt_ms: rtt,
        loss_pct: loss,
        iterations,
        seed_base: 1000,
    }
}

async fn run(harness: &Harness, s: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentResult, String> {
    let r = harness.run_experiment(s, opts).await;
    for f in &r.failures {
        eprintln!("  excluded iteration: {f}");
    }
    ensure(!r.outputs.is_empty(), format!("{} {}: every iteration failed", s.id(), s.mode))?;
    Ok(r)
}

fn values(r: &ExperimentResult, m: Metric) -> Vec<f64> {
    r.outputs.iter().map(|o| m.value(&o.sample)).collect()
}

fn parallel(n: u32) -> RunOptions {
    RunOptions { parallelism: n as usize, ..Default::default() }
}

// 1
async fn ttfdf_gap() -> Result<String, String> {
    let h = Harness::new().map_err(|e| e.to_string())?;
    let mut med = Vec::new();
    for mode in Mode::ALL {
        let s = spec(mode, ExperimentClass::Load, 1, 32, 2000, 0.0, 20);
        let r = run(&h, &s, &parallel(20)).await?;
        ensure(r.outputs.len() >= 20, format!("{mode}: only {} iterations succeeded", r.outputs.len()))?;
        med.push(median(values(&r, Metric::Ttfdf)));
    }
    let (ff, ad) = (med[1] - med[0], med[2] - med[0]);
    let detail = format!("median ttfdf h3={:.0} mq-ff={:.0} mq-ad={:.0}; gaps {ff:.0}/{ad:.0} ms", med[0], med[1], med[2]);
    ensure((1700.0..=2300.0).contains(&ff) && (1700.0..=2300.0).contains(&ad), detail.clone())?;
    Ok(detail)
}

// 2
async fn exec_time_rtt_sweep() -> Result<String, String> {
    let h = Harness::new().map_err(|e| e.to_string())?;
    let rtts = [500u64, 1000, 1500, 2000];
    let mut adv_ff = Vec::new();
    let mut adv_ad = Vec::new();
    let mut detail = String::new();
    let mut failed = None;
    for rtt in rtts {
        let mut m = Vec::new();
        for mode in Mode::ALL {
            let s = spec(mode, ExperimentClass::Rtt, 50, 32, rtt, 0.0, 10);
            m.push(median(values(&run(&h, &s, &parallel(10)).await?, Metric::ExecTime)));
        }
        detail.push_str(&format!("rtt {rtt}: h3={:.0} ff={:.0} ad={:.0}; ", m[0], m[1], m[2]));
        if !(m[0] < m[1] && m[0] < m[2]) && failed.is_none() {
            failed = Some(format!("h3 not fastest at rtt {rtt}"));
        }
        adv_ff.push(m[1] - m[0]);
        adv_ad.push(m[2] - m[0]);
    }
    for adv in [&adv_ff, &adv_ad] {
        for w in adv.windows(2) {
            if w[1] < w[0] - 0.1 * w[0].abs() && failed.is_none() {
                failed = Some(format!("advantage shrank {:.0} -> {:.0}", w[0], w[1]));
            }
        }
    }
    match failed {
        Some(f) => Err(format!("{f}; {detail}")),
        None => Ok(detail),
    }
}

// 3
async fn packet_overhead() -> Result<String, String> {
    let h = Harness::new().map_err(|e| e.to_string())?;
    let mut med = Vec::new();
    for mode in Mode::ALL {
        let s = spec(mode, ExperimentClass::Load, 100, 32, 2000, 0.0, 5);
        med.push(median(values(&run(&h, &s, &parallel(5)).await?, Metric::DatagramsTotal)));
    }
    let detail = format!(
        "median datagrams h3={} mq-ff={} mq-ad={}; ratios {:.2}/{:.2}",
        med[0],
        med[1],
        med[2],
        med[0] / med[1],
        med[2] / med[1]
    );
    ensure(med[0] >= 1.2 * med[1] && med[2] >= 1.2 * med[1], detail.clone())?;
    Ok(detail)
}

/// ceil(p/4 * m) with integers only.
fn quarter_threshold(m: u64, quarters: u64) -> u64 {
    ((quarters * m).div_ceil(4)).max(1)
}

// 4
async fn governor_properties() -> Result<String, String> {
    let t0 = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 400, ..Config::default() });
    let strat = (1u64..=256, 1u64..=3).prop_flat_map(|(m, q)| (Just(m), Just(q), 0..=10 * m));
    runner
        .run(&strat, |(m, q, k)| {
            let mut b = StreamBudget::new(m, q as f64 / 4.0);
            let mut adverts = 0;
            for _ in 0..k {
                b.on_stream_opened();
                if b.on_stream_closed().is_some() {
                    adverts += 1;
                }
            }
            prop_assert_eq!(adverts, k / quarter_threshold(m, q));
            prop_assert_eq!(b.advertisements(), adverts);
            Ok(())
        })
        .map_err(|e| format!("count bound: {e}"))?;

    let strat = (1u64..=256, 1u64..=3, any::<u64>(), 1usize..2000);
    runner
        .run(&strat, |(m, q, seed, steps)| {
            let th = quarter_threshold(m, q);
            let mut b = StreamBudget::new(m, q as f64 / 4.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut open = 0u64;
            let mut last = m;
            for _ in 0..steps {
                let can_open = b.peer_available_streams() > 0;
                if can_open && (open == 0 || rng.random_bool(0.6)) {
                    b.on_stream_opened();
                    open += 1;
                } else {
                    prop_assert!(open > 0, "deadlock: nothing open and no credit");
                    open -= 1;
                    if let Some(NewLimit(l)) = b.on_stream_closed() {
                        prop_assert!(l > last);
                        last = l;
                    }
                }
                prop_assert!(b.closed_since_advert() < th);
                prop_assert!(b.advertised_limit() >= m);
                if b.peer_available_streams() == 0 {
                    // the peer can always close its way to the next advertisement
                    let need = th - b.closed_since_advert();
                    prop_assert!(open >= need);
                    let mut probe = b.clone();
                    let mut restored = false;
                    for _ in 0..need {
                        restored |= probe.on_stream_closed().is_some();
                    }
                    prop_assert!(restored);
                    prop_assert!(probe.peer_available_streams() >= th);
                }
            }
            Ok(())
        })
        .map_err(|e| format!("liveness: {e}"))?;

    let strat = (1u64..=4, 1u64..=3, 0u64..500).prop_filter("threshold of one", |(m, q, _)| quarter_threshold(*m, *q) == 1);
    runner
        .run(&strat, |(m, q, k)| {
            let mut b = StreamBudget::new(m, q as f64 / 4.0);
            let seq: Vec<u64> = (0..k).filter_map(|_| b.on_stream_closed().map(|NewLimit(l)| l)).collect();
            let baseline: Vec<u64> = (1..=k).map(|i| m + i).collect();
            prop_assert_eq!(seq, baseline);
            Ok(())
        })
        .map_err(|e| format!("1:1 equivalence: {e}"))?;
    let took = t0.elapsed();
    ensure(took < Duration::from_secs(10), format!("took {took:?}"))?;
    Ok(format!("3 properties x 400 cases in {:.1} s", took.as_secs_f64()))
}

// 5
async fn connection_auth() -> Result<String, String> {
    let broker = common::start_broker(TuningProfile::default()).await;
    let topic = TopicName::new("sensors").unwrap();
    broker.shared.registry.create_topic(&topic);
    let session = common::connect(&broker, "alice", "s3cret").await;
    let before = broker.shared.creds.verifications();
    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..50u64 {
        let s = session.clone();
        tasks.spawn(async move { s.publish("sensors", format!("m{i}").as_bytes(), i + 1).await });
    }
    while let Some(r) = tasks.join_next().await {
        r.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    }
    let headers_sent = session.stats().auth_headers_sent.load(std::sync::atomic::Ordering::Relaxed);
    let headers_seen = broker.shared.metrics.auth_headers_seen.load(std::sync::atomic::Ordering::Relaxed);
    let verifications = broker.shared.creds.verifications() - before;
    ensure(
        headers_sent == 1 && headers_seen == 1 && verifications == 1,
        format!("headers sent {headers_sent}, seen {headers_seen}, verifications {verifications}"),
    )?;
    session.close(Duration::from_millis(100)).await;

    let stats_before = broker.shared.registry.stats();
    let cfg = common::client_config(&broker, "alice", "wrong", TuningProfile::default());
    let bad = H3Session::connect(broker.h3.local_addr(), cfg, EventRecorder::new(Instant::now()))
        .await
        .map_err(|e| e.to_string())?;
    let r1 = bad.request("POST", "/topics/sensors", b"x").await.map_err(|e| e.to_string())?;
    let r2 = bad.request("PUT", "/topics/other", b"").await.map_err(|e| e.to_string())?;
    let r3 = bad.request("DELETE", "/topics/sensors", b"").await.map_err(|e| e.to_string())?;
    let after = broker.shared.registry.stats();
    ensure(
        [r1.status, r2.status, r3.status] == [401; 3],
        format!("statuses {} {} {}", r1.status, r2.status, r3.status),
    )?;
    ensure(after == stats_before, format!("registry changed: {stats_before:?} -> {after:?}"))?;
    Ok(format!("50 publishes: 1 header, 1 verification; wrong creds: 3x401, registry untouched ({} published)", after.published))
}

fn initials_before_first_reply(r: &ExperimentResult) -> Vec<usize> {
    r.outputs
        .iter()
        .map(|o| {
            let first_down = o
                .timeline
                .iter()
                .filter(|t| t.direction == Direction::Down)
                .filter_map(|t| t.delivered_ms())
                .fold(f64::INFINITY, f64::min);
            o.timeline
                .iter()
                .filter(|t| t.direction == Direction::Up && t.kind == PacketKind::Initial && t.arrival_ms < first_down)
                .count()
        })
        .collect()
}

// 6
async fn initial_rtt_guess() -> Result<String, String> {
    let h = Harness::new().map_err(|e| e.to_string())?;
    let s = spec(Mode::H3, ExperimentClass::Rtt, 1, 32, 2000, 0.0, 5);
    let mut counts = Vec::new();
    for guess in [100u64, 1500] {
        let opts = RunOptions {
            parallelism: 5,
            client_initial_rtt_ms: Some(guess),
            record_timeline: true,
            ..Default::default()
        };
        counts.push(initials_before_first_reply(&run(&h, &s, &opts).await?));
    }
    let detail = format!("initial datagrams before first reply: guess 100 ms {:?}, 1500 ms {:?}", counts[0], counts[1]);
    ensure(counts[0].iter().all(|&c| c >= 3) && counts[1].iter().all(|&c| c == 1), detail.clone())?;
    Ok(detail)
}

async fn echo(sock: UdpSocket, log: Arc<std::sync::Mutex<Vec<(Instant, usize)>>>) {
    let mut buf = vec![0u8; 65535];
    while let Ok((n, from)) = sock.recv_from(&mut buf).await {
        log.lock().unwrap().push((Instant::now(), n));
        let _ = sock.send_to(&buf[..n], from).await;
    }
}

fn throughput_kbit(arrivals: &[(Instant, usize)]) -> (f64, f64) {
    let first = arrivals[0].0;
    let last = arrivals.last().unwrap().0;
    let secs = (last - first).as_secs_f64();
    let bits: usize = arrivals[1..].iter().map(|a| a.1 * 8).sum();
    (bits as f64 / secs / 1000.0, secs)
}

// 7
async fn proxy_conformance() -> Result<String, String> {
    let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let mut detail = Vec::new();

    // saturate both directions: 200 kbit/s offered up, echoed back down
    let up_log = Arc::new(std::sync::Mutex::new(Vec::new()));
    let server = UdpSocket::bind(any).await.map_err(|e| e.to_string())?;
    let upstream = server.local_addr().unwrap();
    tokio::spawn(echo(server, up_log.clone()));
    let spec = ImpairmentSpec { rate_kbit_up: Some(159.0), rate_kbit_down: Some(127.0), ..Default::default() };
    let proxy = start_proxy(any, upstream, &spec, false).await.map_err(|e| e.to_string())?;
    let client = Arc::new(UdpSocket::bind(any).await.unwrap());
    client.connect(proxy.local_addr()).await.unwrap();
    let down_log = Arc::new(std::sync::Mutex::new(Vec::new()));
    let reader = {
        let (c, log) = (client.clone(), down_log.clone());
        tokio::spawn(async move {
            let mut buf = [0u8; 2048];
            while let Ok(n) = c.recv(&mut buf).await {
                log.lock().unwrap().push((Instant::now(), n));
            }
        })
    };
    let sent = 250;
    let mut tick = tokio::time::interval(Duration::from_millis(40));
    for _ in 0..sent {
        tick.tick().await;
        client.send(&[0u8; 1000]).await.unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(20);
    while down_log.lock().unwrap().len() < sent && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    reader.abort();
    let up = up_log.lock().unwrap().clone();
    let down = down_log.lock().unwrap().clone();
    ensure(up.len() == sent && down.len() == sent, format!("delivered up {} down {}", up.len(), down.len()))?;
    let (up_rate, up_secs) = throughput_kbit(&up);
    let (down_rate, down_secs) = throughput_kbit(&down);
    detail.push(format!("up {up_rate:.1} kbit/s over {up_secs:.1} s, down {down_rate:.1} kbit/s over {down_secs:.1} s"));
    ensure(up_secs >= 10.0 && down_secs >= 10.0, detail.join("; "))?;
    ensure(
        (up_rate / 159.0 - 1.0).abs() <= 0.05 && (down_rate / 127.0 - 1.0).abs() <= 0.05,
        detail.join("; "),
    )?;
    drop(proxy);

    // seeded loss
    let sink = UdpSocket::bind(any).await.unwrap();
    let spec = ImpairmentSpec { loss_pct: 4.0, seed: 42, loss_direction: LossDirection::Up, ..Default::default() };
    let proxy = start_proxy(any, sink.local_addr().unwrap(), &spec, false).await.map_err(|e| e.to_string())?;
    let client = UdpSocket::bind(any).await.unwrap();
    client.connect(proxy.local_addr()).await.unwrap();
    for i in 0..10_000u32 {
        client.send(&i.to_be_bytes()).await.unwrap();
        if i % 50 == 49 {
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    }
    let deadline = Instant::now() + Duration::from_secs(10);
    while proxy.counters().up.snapshot().offered() < 10_000 && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let c = proxy.counters().up.snapshot();
    let sigma = (10_000.0f64 * 0.04 * 0.96).sqrt();
    detail.push(format!("{} of {} dropped (3 sigma = {:.1})", c.datagrams_dropped_loss, c.offered(), 3.0 * sigma));
    ensure(c.offered() == 10_000, detail.join("; "))?;
    ensure((c.datagrams_dropped_loss as f64 - 400.0).abs() <= 3.0 * sigma, detail.join("; "))?;
    drop(proxy);
    drop(sink);

    // one-way delay
    let sink = UdpSocket::bind(any).await.unwrap();
    let spec = ImpairmentSpec { delay_ms: 1000.0, ..Default::default() };
    let proxy = start_proxy(any, sink.local_addr().unwrap(), &spec, false).await.map_err(|e| e.to_string())?;
    let client = UdpSocket::bind(any).await.unwrap();
    client.connect(proxy.local_addr()).await.unwrap();
    let mut sent_at = Vec::new();
    for i in 0..10u8 {
        sent_at.push(Instant::now());
        client.send(&[i; 32]).await.unwrap();
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let mut buf = [0u8; 64];
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (n, _) = tokio::time::timeout(Duration::from_secs(3), sink.recv_from(&mut buf))
            .await
            .map_err(|_| "delayed datagram never arrived".to_string())?
            .map_err(|e| e.to_string())?;
        let lat = sent_at[buf[0] as usize].elapsed().as_secs_f64() * 1000.0;
        ensure(n == 32, "truncated datagram")?;
        worst = worst.max((lat - 1000.0).abs());
    }
    detail.push(format!("worst one-way deviation {worst:.1} ms"));
    ensure(worst <= 15.0, detail.join("; "))?;
    Ok(detail.join("; "))
}

fn reference_summary(data: &[f64]) -> SummaryStats {
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = |s: &[f64]| {
        let n = s.len();
        if n.is_multiple_of(2) { (s[n / 2 - 1] + s[n / 2]) / 2.0 } else { s[n / 2] }
    };
    let n = v.len();
    let lower = &v[..n / 2];
    let upper = if n.is_multiple_of(2) { &v[n / 2..] } else { &v[n / 2 + 1..] };
    let (q1, q3) = (med(lower), med(upper));
    let iqr = q3 - q1;
    let is_out = |x: f64| x < q1 - 1.5 * iqr || x > q3 + 1.5 * iqr;
    let kept: Vec<f64> = v.iter().copied().filter(|&x| !is_out(x)).collect();
    SummaryStats {
        n,
        mean: v.iter().sum::<f64>() / n as f64,
        median: med(&v),
        q1,
        q3,
        whisker_low: kept[0],
        whisker_high: kept[kept.len() - 1],
        outliers: v.iter().copied().filter(|&x| is_out(x)).collect(),
    }
}

// 8
async fn statistics_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let n = rng.random_range(4..80);
        let heavy = rng.random_bool(0.3);
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1000.0);
                if heavy && rng.random_bool(0.1) { x * 50.0 } else { x.round() }
            })
            .collect();
        let got = summarize(&data).map_err(|e| e.to_string())?;
        let mut want = reference_summary(&data);
        // summation order may differ in the last bit
        if (got.mean - want.mean).abs() <= 1e-9 * want.mean.abs().max(1.0) {
            want.mean = got.mean;
        }
        ensure(got == want, format!("dataset {i} {data:?}: {got:?} != {want:?}"))?;
    }
    let s = summarize(&[1., 2., 3., 4., 5., 6., 7., 8., 9., 100.]).map_err(|e| e.to_string())?;
    ensure(
        s.median == 5.5 && s.q1 == 3.0 && s.q3 == 8.0 && s.outliers == [100.0],
        format!("worked example gave {s:?}"),
    )?;
    Ok("1000 random datasets match the reference; worked example exact".into())
}

fn synthetic_trace(path: &std::path::Path, blocked: bool) -> std::io::Result<()> {
    let start = Instant::now();
    let sink = QlogSink::create(path, "synthetic", "client", start)?;
    let at = |ms: u64| start + Duration::from_millis(ms);
    // blocked: last ack at 1010 ms, next send at 3310 ms
    let sends: Vec<u64> = if blocked {
        (0..=1000).step_by(50).chain((3310..6000).step_by(50)).collect()
    } else {
        (0..6000).step_by(50).collect()
    };
    for t in sends {
        sink.event(at(t), "transport:packet_sent", json!({"raw": {"length": 1200}}));
        sink.event(at(t), "recovery:metrics_updated", json!({"congestion_window": 14720, "bytes_in_flight": 2400}));
        sink.event(at(t + 10), "transport:packet_received", json!({"raw": {"length": 60}}));
    }
    sink.event(at(6100), "recovery:metrics_updated", json!({"bytes_in_flight": 0}));
    sink.flush()
}

// 9
async fn stall_detection() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let blocked = dir.path().join("blocked.qlog");
    synthetic_trace(&blocked, true).map_err(|e| e.to_string())?;
    let s = analyze_qlog(&std::fs::read_to_string(&blocked).unwrap(), 1000.0).map_err(|e| e.to_string())?;
    ensure(s.stalls.len() == 1, format!("{} stalls in blocked trace", s.stalls.len()))?;
    let d = s.stalls[0].duration_ms();
    ensure((d - 2300.0).abs() <= 50.0, format!("stall lasted {d:.1} ms"))?;
    let clean = dir.path().join("clean.qlog");
    synthetic_trace(&clean, false).map_err(|e| e.to_string())?;
    let c = analyze_qlog(&std::fs::read_to_string(&clean).unwrap(), 1000.0).map_err(|e| e.to_string())?;
    ensure(c.stalls.is_empty(), format!("{} stalls in clean trace", c.stalls.len()))?;
    Ok(format!("one stall of {d:.1} ms; clean trace has none"))
}

// 10
async fn loss_variability() -> Result<String, String> {
    let h = Harness::new().map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = true;
    for mode in Mode::ALL {
        let mut iqr = Vec::new();
        for loss in [0.0, 6.0] {
            let s = spec(mode, ExperimentClass::Loss, 50, 2048, 2000, loss, 20);
            let v = values(&run(&h, &s, &parallel(20)).await?, Metric::ExecTime);
            iqr.push(summarize(&v).map_err(|e| format!("{mode} loss {loss}: {e}"))?.iqr());
        }
        ok &= iqr[1] >= 2.0 * iqr[0];
        detail.push(format!("{mode} IQR {:.0} -> {:.0} ms", iqr[0], iqr[1]));
    }
    ensure(ok, detail.join("; "))?;
    Ok(detail.join("; "))
}

fn main() {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(tracing::Level::WARN).try_init();
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    type Criterion = (u32, &'static str, fn() -> Check);
    let criteria: Vec<Criterion> = vec![
        (4, "stream-credit governor properties", || Box::pin(governor_properties())),
        (5, "connection-level auth", || Box::pin(connection_auth())),
        (8, "statistics oracle", || Box::pin(statistics_oracle())),
        (9, "qlog stall detection", || Box::pin(stall_detection())),
        (7, "impairment proxy conformance", || Box::pin(proxy_conformance())),
        (6, "initial RTT guess and Initial datagrams", || Box::pin(initial_rtt_guess())),
        (1, "TtFDF gap", || Box::pin(ttfdf_gap())),
        (3, "packet overhead", || Box::pin(packet_overhead())),
        (2, "exec time ordering under RTT sweep", || Box::pin(exec_time_rtt_sweep())),
        (10, "loss-class variability", || Box::pin(loss_variability())),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (id, name, check) in criteria {
        let t = Instant::now();
        let outcome = rt.block_on(async { tokio::spawn(check()).await });
        let secs = t.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(Ok(d)) => format!("criterion {id:>2} PASS {name} ({secs:.0} s): {d}"),
            Ok(Err(d)) => {
                failed += 1;
                format!("criterion {id:>2} FAIL {name} ({secs:.0} s): {d}")
            }
            Err(e) => {
                failed += 1;
                format!("criterion {id:>2} FAIL {name} ({secs:.0} s): panicked: {e}")
            }
        };
        println!("{line}");
        lines.push((id, line));
    }
    lines.sort_by_key(|l| l.0);
    println!("\nacceptance summary:");
    for (_, l) in &lines {
        println!("{l}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

//! UDP impairment proxy. Each client address gets its own upstream socket so
//! replies can be routed back; both directions share one shaper each.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::net::UdpSocket;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::shaper::{Direction, DropReason, ImpairmentSpec, LinkShaper, Verdict};
use crate::quic::{classify_datagram, PacketKind};

const MAX_DATAGRAM: usize = 65_535;
const UNSET: u64 = u64::MAX;

#[derive(Debug, Default)]
pub struct DirectionCounters {
    pub datagrams_forwarded: AtomicU64,
    pub datagrams_dropped_loss: AtomicU64,
    pub datagrams_dropped_mtu: AtomicU64,
    pub bytes_forwarded: AtomicU64,
    first_us: AtomicU64,
    last_us: AtomicU64,
}

impl DirectionCounters {
    fn new() -> Self {
        Self { first_us: AtomicU64::new(UNSET), last_us: AtomicU64::new(UNSET), ..Default::default() }
    }

    fn on_arrival(&self, at_us: u64) {
        let _ = self.first_us.compare_exchange(UNSET, at_us, Ordering::Relaxed, Ordering::Relaxed);
        // fetch_max would keep UNSET forever
        let mut cur = self.last_us.load(Ordering::Relaxed);
        while cur == UNSET || cur < at_us {
            match self.last_us.compare_exchange_weak(cur, at_us, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => break,
                Err(v) => cur = v,
            }
        }
    }

    pub fn record(&self, size: usize, verdict: Verdict, at_us: u64) {
        self.on_arrival(at_us);
        match verdict {
            Verdict::Deliver { .. } => {
                self.datagrams_forwarded.fetch_add(1, Ordering::Relaxed);
                self.bytes_forwarded.fetch_add(size as u64, Ordering::Relaxed);
            }
            Verdict::Drop(DropReason::Loss) => {
                self.datagrams_dropped_loss.fetch_add(1, Ordering::Relaxed);
            }
            Verdict::Drop(DropReason::Mtu) => {
                self.datagrams_dropped_mtu.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let ms = |v: u64| (v != UNSET).then(|| v as f64 / 1000.0);
        CounterSnapshot {
            datagrams_forwarded: self.datagrams_forwarded.load(Ordering::Relaxed),
            datagrams_dropped_loss: self.datagrams_dropped_loss.load(Ordering::Relaxed),
            datagrams_dropped_mtu: self.datagrams_dropped_mtu.load(Ordering::Relaxed),
            bytes_forwarded: self.bytes_forwarded.load(Ordering::Relaxed),
            first_ms: ms(self.first_us.load(Ordering::Relaxed)),
            last_ms: ms(self.last_us.load(Ordering::Relaxed)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CounterSnapshot {
    pub datagrams_forwarded: u64,
    pub datagrams_dropped_loss: u64,
    pub datagrams_dropped_mtu: u64,
    pub bytes_forwarded: u64,
    pub first_ms: Option<f64>,
    pub last_ms: Option<f64>,
}

impl CounterSnapshot {
    pub fn offered(&self) -> u64 {
        self.datagrams_forwarded + self.datagrams_dropped_loss + self.datagrams_dropped_mtu
    }
}

#[derive(Debug)]
pub struct LinkCounters {
    pub up: DirectionCounters,
    pub down: DirectionCounters,
}

impl Default for LinkCounters {
    fn default() -> Self {
        Self { up: DirectionCounters::new(), down: DirectionCounters::new() }
    }
}

pub const COUNTERS_CSV_HEADER: &str =
    "direction,datagrams_forwarded,datagrams_dropped_loss,datagrams_dropped_mtu,bytes_forwarded,first_ms,last_ms";

impl LinkCounters {
    pub fn direction(&self, dir: Direction) -> &DirectionCounters {
        match dir {
            Direction::Up => &self.up,
            Direction::Down => &self.down,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COUNTERS_CSV_HEADER);
        out.push('\n');
        for dir in [Direction::Up, Direction::Down] {
            let s = self.direction(dir).snapshot();
            let _ = writeln!(
                out,
                "{dir},{},{},{},{},{:.3},{:.3}",
                s.datagrams_forwarded,
                s.datagrams_dropped_loss,
                s.datagrams_dropped_mtu,
                s.bytes_forwarded,
                s.first_ms.unwrap_or(0.0),
                s.last_ms.unwrap_or(0.0),
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// One offered datagram, times in ms since the proxy started.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimelineRecord {
    pub direction: Direction,
    pub arrival_ms: f64,
    pub size: usize,
    pub kind: PacketKind,
    pub verdict: Verdict,
}

impl TimelineRecord {
    pub fn delivered_ms(&self) -> Option<f64> {
        match self.verdict {
            Verdict::Deliver { at_ms } => Some(at_ms),
            Verdict::Drop(_) => None,
        }
    }
}

struct Pipeline {
    dir: Direction,
    shaper: Mutex<LinkShaper>,
    queue: mpsc::UnboundedSender<Scheduled>,
}

struct Scheduled {
    at: Instant,
    payload: Vec<u8>,
    out: Arc<UdpSocket>,
    target: Option<SocketAddr>,
}

struct State {
    start: Instant,
    counters: Arc<LinkCounters>,
    timeline: Option<Mutex<Vec<TimelineRecord>>>,
}

impl State {
    fn offer(&self, pipe: &Pipeline, payload: Vec<u8>, out: Arc<UdpSocket>, target: Option<SocketAddr>) {
        let now = Instant::now();
        let now_ms = now.duration_since(self.start).as_secs_f64() * 1000.0;
        let size = payload.len();
        // shaper decision and enqueue under one lock keeps queue order equal to arrival order
        let mut shaper = pipe.shaper.lock().unwrap();
        let verdict = shaper.forward(size, now_ms);
        self.counters.direction(pipe.dir).record(size, verdict, (now_ms * 1000.0) as u64);
        if let Some(t) = &self.timeline {
            t.lock().unwrap().push(TimelineRecord {
                direction: pipe.dir,
                arrival_ms: now_ms,
                size,
                kind: classify_datagram(&payload),
                verdict,
            });
        }
        if let Verdict::Deliver { at_ms } = verdict {
            let at = self.start + Duration::from_secs_f64(at_ms / 1000.0);
            let _ = pipe.queue.send(Scheduled { at, payload, out, target });
        }
        drop(shaper);
    }
}

async fn deliver(mut rx: mpsc::UnboundedReceiver<Scheduled>) {
    while let Some(s) = rx.recv().await {
        tokio::time::sleep_until(s.at.into()).await;
        let res = match s.target {
            Some(t) => s.out.send_to(&s.payload, t).await,
            None => s.out.send(&s.payload).await,
        };
        if let Err(e) = res {
            tracing::debug!("netlab send failed: {e}");
        }
    }
}

pub struct RunningProxy {
    local_addr: SocketAddr,
    state: Arc<State>,
    tasks: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl std::fmt::Debug for RunningProxy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunningProxy").field("local_addr", &self.local_addr).finish_non_exhaustive()
    }
}

impl RunningProxy {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn counters(&self) -> &Arc<LinkCounters> {
        &self.state.counters
    }

    pub fn start_instant(&self) -> Instant {
        self.state.start
    }

    /// Empty when the proxy was started without a timeline.
    pub fn timeline(&self) -> Vec<TimelineRecord> {
        self.state.timeline.as_ref().map(|t| t.lock().unwrap().clone()).unwrap_or_default()
    }

    pub fn shutdown(&self) {
        for t in self.tasks.lock().unwrap().drain(..) {
            t.abort();
        }
    }
}

impl Drop for RunningProxy {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn unspecified_like(addr: &SocketAddr) -> SocketAddr {
    let ip = match addr.ip() {
        IpAddr::V4(v) if v.is_loopback() => IpAddr::V4(Ipv4Addr::LOCALHOST),
        IpAddr::V4(_) => IpAddr::V4(Ipv4Addr::UNSPECIFIED),
        IpAddr::V6(v) if v.is_loopback() => IpAddr::V6(Ipv6Addr::LOCALHOST),
        IpAddr::V6(_) => IpAddr::V6(Ipv6Addr::UNSPECIFIED),
    };
    SocketAddr::new(ip, 0)
}

/// Binds `listen` and relays to `upstream` through the impairment model.
pub async fn start_proxy(
    listen: SocketAddr,
    upstream: SocketAddr,
    spec: &ImpairmentSpec,
    record_timeline: bool,
) -> io::Result<RunningProxy> {
    spec.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let front = Arc::new(UdpSocket::bind(listen).await?);
    let local_addr = front.local_addr()?;
    let state = Arc::new(State {
        start: Instant::now(),
        counters: Arc::new(LinkCounters::default()),
        timeline: record_timeline.then(|| Mutex::new(Vec::new())),
    });
    let tasks = Arc::new(Mutex::new(Vec::new()));
    let pipeline = |dir| {
        let (tx, rx) = mpsc::unbounded_channel();
        let handle = tokio::spawn(deliver(rx));
        (Arc::new(Pipeline { dir, shaper: Mutex::new(spec.shaper(dir)), queue: tx }), handle)
    };
    let (up, up_task) = pipeline(Direction::Up);
    let (down, down_task) = pipeline(Direction::Down);

    let accept_task = {
        let state = state.clone();
        let tasks = tasks.clone();
        tokio::spawn(async move {
            let mut clients: HashMap<SocketAddr, Arc<UdpSocket>> = HashMap::new();
            let mut buf = vec![0u8; MAX_DATAGRAM];
            loop {
                let (n, from) = match front.recv_from(&mut buf).await {
                    Ok(v) => v,
                    // ICMP errors surface here on some platforms
                    Err(e) => {
                        tracing::debug!("netlab recv: {e}");
                        continue;
                    }
                };
                let back = match clients.get(&from) {
                    Some(s) => s.clone(),
                    None => {
                        let sock = match UdpSocket::bind(unspecified_like(&upstream)).await {
                            Ok(s) => s,
                            Err(e) => {
                                tracing::warn!("netlab upstream bind: {e}");
                                continue;
                            }
                        };
                        if let Err(e) = sock.connect(upstream).await {
                            tracing::warn!("netlab upstream connect: {e}");
                            continue;
                        }
                        let sock = Arc::new(sock);
                        clients.insert(from, sock.clone());
                        let t = tokio::spawn(relay_down(sock.clone(), front.clone(), from, state.clone(), down.clone()));
                        tasks.lock().unwrap().push(t);
                        sock
                    }
                };
                state.offer(&up, buf[..n].to_vec(), back, None);
            }
        })
    };
    tasks.lock().unwrap().extend([up_task, down_task, accept_task]);
    tracing::info!(%local_addr, %upstream, "netlab proxy running");
    Ok(RunningProxy { local_addr, state, tasks })
}

async fn relay_down(
    sock: Arc<UdpSocket>,
    front: Arc<UdpSocket>,
    client: SocketAddr,
    state: Arc<State>,
    down: Arc<Pipeline>,
) {
    let mut buf = vec![0u8; MAX_DATAGRAM];
    loop {
        match sock.recv(&mut buf).await {
            Ok(n) => state.offer(&down, buf[..n].to_vec(), front.clone(), Some(client)),
            Err(e) => tracing::debug!("netlab upstream recv: {e}"),
        }
    }
}

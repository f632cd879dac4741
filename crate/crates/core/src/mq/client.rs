//! MQTT publisher over a single QUIC stream.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::{Bytes, BytesMut};
use quinn::{RecvStream, SendStream, VarInt};
use tokio::sync::{oneshot, Semaphore};

use super::packet::{Connect, MqttError, MqttPacket, Publish, QosMode, CONNACK_ACCEPTED};
use crate::events::{EndpointEvent, EventRecorder};
use crate::quic::{self, ConnectError, QlogTarget, QuicSetupError, ServerTrust, SocketTap, ALPN_MQTT};
use crate::tuning::TuningProfile;

pub const DEFAULT_INFLIGHT_WINDOW: usize = 16;
const MAX_PACKET: usize = 1 << 20;
const PUBACK_TIMEOUT_FLOOR: Duration = Duration::from_secs(1);

#[derive(Debug, thiserror::Error)]
pub enum MqError {
    #[error("setup: {0}")]
    Setup(#[from] QuicSetupError),
    #[error("{0}")]
    Connect(#[from] ConnectError),
    #[error("broker rejected CONNECT with return code {0}")]
    AuthRejected(u8),
    #[error("no PUBACK for packet {0} within deadline")]
    PubackTimeout(u16),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl From<MqttError> for MqError {
    fn from(e: MqttError) -> Self {
        Self::Protocol(e.to_string())
    }
}

macro_rules! transport_from {
    ($($t:ty),*) => {$(
        impl From<$t> for MqError {
            fn from(e: $t) -> Self {
                Self::Transport(e.to_string())
            }
        }
    )*};
}
transport_from!(quinn::ConnectionError, quinn::WriteError, quinn::ReadError, quinn::ClosedStream, quinn::StoppedError);

#[derive(Clone, Debug)]
pub struct MqClientConfig {
    pub server_name: String,
    pub client_id: String,
    pub user: Option<String>,
    pub pass: Option<String>,
    pub tuning: TuningProfile,
    pub trust: ServerTrust,
    pub qlog: QlogTarget,
    pub bind: SocketAddr,
    pub inflight_window: usize,
}

#[derive(Debug, Default)]
pub struct MqClientStats {
    pub publishes: AtomicU64,
    pub pubacks: AtomicU64,
    /// PUBACKs naming an id with nothing outstanding.
    pub unexpected_pubacks: AtomicU64,
    pub streams_opened: AtomicU64,
}

/// Outstanding QoS 1 packet identifiers.
#[derive(Debug, Default)]
struct InFlight {
    next: u16,
    waiting: HashMap<u16, oneshot::Sender<()>>,
}

impl InFlight {
    fn allocate(&mut self, tx: oneshot::Sender<()>) -> u16 {
        loop {
            self.next = self.next.wrapping_add(1);
            if self.next == 0 {
                self.next = 1;
            }
            if !self.waiting.contains_key(&self.next) {
                self.waiting.insert(self.next, tx);
                return self.next;
            }
        }
    }
}

struct Inner {
    endpoint: quinn::Endpoint,
    conn: quinn::Connection,
    tap: Arc<SocketTap>,
    send: tokio::sync::Mutex<SendStream>,
    inflight: Mutex<InFlight>,
    window: Semaphore,
    puback_timeout: Duration,
    events: EventRecorder,
    stats: Arc<MqClientStats>,
    reader: Mutex<Option<tokio::task::JoinHandle<()>>>,
}

#[derive(Clone)]
pub struct MqSession {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for MqSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MqSession")
            .field("remote", &self.inner.conn.remote_address())
            .finish_non_exhaustive()
    }
}

async fn read_packet(recv: &mut RecvStream, buf: &mut BytesMut) -> Result<Option<MqttPacket>, MqError> {
    loop {
        if let Some((p, used)) = MqttPacket::decode(buf, MAX_PACKET)? {
            let _ = buf.split_to(used);
            return Ok(Some(p));
        }
        match recv.read_chunk(64 * 1024, true).await? {
            Some(chunk) => buf.extend_from_slice(&chunk.bytes),
            None if buf.is_empty() => return Ok(None),
            None => return Err(MqError::Protocol("stream ended mid-packet".into())),
        }
    }
}

impl MqSession {
    /// Connects, sends CONNECT and waits for the CONNACK. Publishing is only
    /// possible after this returns.
    pub async fn connect(addr: SocketAddr, cfg: MqClientConfig, events: EventRecorder) -> Result<Self, MqError> {
        events.record(EndpointEvent::ConnStart);
        let tap = SocketTap::new();
        if let QlogTarget::Shared(sink) = &cfg.qlog {
            tap.attach_qlog(sink.clone());
        }
        let client = quic::client_config(&cfg.trust, &cfg.tuning, ALPN_MQTT, cfg.qlog.clone())?;
        let mut endpoint = quic::bind_endpoint(cfg.bind, None, tap.clone())?;
        endpoint.set_default_client_config(client);
        let conn = quic::connect_with_deadlines(&endpoint, addr, &cfg.server_name, &cfg.tuning, &tap).await?;
        if let Some(t) = tap.first_send() {
            events.record_at(EndpointEvent::FirstInitialSent, t);
        }
        events.record(EndpointEvent::HandshakeDone);

        let stats = Arc::new(MqClientStats::default());
        let (mut send, mut recv) = conn.open_bi().await?;
        stats.streams_opened.fetch_add(1, Ordering::Relaxed);
        let connect = MqttPacket::Connect(Connect {
            client_id: cfg.client_id.clone(),
            username: cfg.user.clone(),
            password: cfg.pass.as_ref().map(|p| Bytes::copy_from_slice(p.as_bytes())),
            keep_alive: 0,
            clean_session: true,
        });
        send.write_all(&connect.to_bytes()).await?;

        let mut buf = BytesMut::new();
        match read_packet(&mut recv, &mut buf).await? {
            Some(MqttPacket::ConnAck { code: CONNACK_ACCEPTED, .. }) => {}
            Some(MqttPacket::ConnAck { code, .. }) => {
                let _ = send.finish();
                conn.close(VarInt::from_u32(0), b"rejected");
                return Err(MqError::AuthRejected(code));
            }
            Some(other) => return Err(MqError::Protocol(format!("expected CONNACK, got {other:?}"))),
            None => return Err(MqError::Transport("stream closed before CONNACK".into())),
        }

        let window = cfg.inflight_window.max(1);
        let inner = Arc::new(Inner {
            endpoint,
            conn,
            tap,
            send: tokio::sync::Mutex::new(send),
            inflight: Mutex::new(InFlight::default()),
            window: Semaphore::new(window),
            puback_timeout: (cfg.tuning.expected_rtt().max(cfg.tuning.initial_rtt()) * 4).max(PUBACK_TIMEOUT_FLOOR),
            events,
            stats,
            reader: Mutex::new(None),
        });
        let reader = tokio::spawn(Self::read_loop(inner.clone(), recv, buf));
        *inner.reader.lock().unwrap() = Some(reader);
        Ok(Self { inner })
    }

    async fn read_loop(inner: Arc<Inner>, mut recv: RecvStream, mut buf: BytesMut) {
        loop {
            match read_packet(&mut recv, &mut buf).await {
                Ok(Some(MqttPacket::PubAck { packet_id })) => {
                    let waiter = inner.inflight.lock().unwrap().waiting.remove(&packet_id);
                    match waiter {
                        Some(tx) => {
                            inner.stats.pubacks.fetch_add(1, Ordering::Relaxed);
                            let _ = tx.send(());
                        }
                        None => {
                            inner.stats.unexpected_pubacks.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
                Ok(Some(other)) => tracing::debug!(?other, "ignoring packet from broker"),
                Ok(None) => return,
                Err(e) => {
                    tracing::debug!("mq read loop ended: {e}");
                    return;
                }
            }
        }
    }

    pub fn stats(&self) -> &MqClientStats {
        &self.inner.stats
    }

    pub fn tap(&self) -> &SocketTap {
        &self.inner.tap
    }

    pub fn events(&self) -> &EventRecorder {
        &self.inner.events
    }

    pub fn connection(&self) -> &quinn::Connection {
        &self.inner.conn
    }

    async fn write(&self, packet: &MqttPacket) -> Result<(), MqError> {
        let wire = packet.to_bytes();
        let mut send = self.inner.send.lock().await;
        send.write_all(&wire).await?;
        Ok(())
    }

    /// QoS 0 returns once the stream accepted the bytes; QoS 1 returns when
    /// the matching PUBACK arrives.
    pub async fn publish(&self, topic: &str, payload: Bytes, qos: QosMode, ordinal: u64) -> Result<(), MqError> {
        let inner = &self.inner;
        match qos {
            QosMode::FireAndForget => {
                let p = MqttPacket::Publish(Publish {
                    topic: topic.into(),
                    qos,
                    packet_id: None,
                    dup: false,
                    retain: false,
                    payload,
                });
                self.write(&p).await?;
                inner.events.record_once_at(EndpointEvent::FirstAppDataSent, Instant::now());
                inner.stats.publishes.fetch_add(1, Ordering::Relaxed);
                inner.events.record(EndpointEvent::RequestDone(ordinal));
                Ok(())
            }
            QosMode::AcknowledgedDelivery => {
                let _permit = inner.window.acquire().await.map_err(|_| MqError::Transport("session closed".into()))?;
                let (tx, rx) = oneshot::channel();
                let id = inner.inflight.lock().unwrap().allocate(tx);
                let p = MqttPacket::Publish(Publish {
                    topic: topic.into(),
                    qos,
                    packet_id: Some(id),
                    dup: false,
                    retain: false,
                    payload,
                });
                if let Err(e) = self.write(&p).await {
                    inner.inflight.lock().unwrap().waiting.remove(&id);
                    return Err(e);
                }
                inner.events.record_once_at(EndpointEvent::FirstAppDataSent, Instant::now());
                inner.stats.publishes.fetch_add(1, Ordering::Relaxed);
                match tokio::time::timeout(inner.puback_timeout, rx).await {
                    Ok(Ok(())) => {
                        inner.events.record(EndpointEvent::RequestDone(ordinal));
                        Ok(())
                    }
                    Ok(Err(_)) => Err(MqError::Transport("connection lost before PUBACK".into())),
                    Err(_) => {
                        inner.inflight.lock().unwrap().waiting.remove(&id);
                        Err(MqError::PubackTimeout(id))
                    }
                }
            }
        }
    }

    pub fn outstanding(&self) -> usize {
        self.inner.inflight.lock().unwrap().waiting.len()
    }

    /// Sends DISCONNECT, finishes the stream and waits until the broker has
    /// acknowledged everything written. Returns when that happened.
    pub async fn disconnect(&self) -> Result<Instant, MqError> {
        let mut send = self.inner.send.lock().await;
        send.write_all(&MqttPacket::Disconnect.to_bytes()).await?;
        send.finish()?;
        let _ = send.stopped().await?;
        Ok(Instant::now())
    }

    pub async fn close(&self, linger: Duration) {
        self.inner.conn.close(VarInt::from_u32(0), b"");
        self.inner.events.record(EndpointEvent::ConnClosed);
        if let Some(r) = self.inner.reader.lock().unwrap().take() {
            r.abort();
        }
        let _ = tokio::time::timeout(linger, self.inner.endpoint.wait_idle()).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_skip_zero_and_in_use() {
        let mut f = InFlight { next: 65534, ..Default::default() };
        let (a, _) = oneshot::channel();
        let (b, _) = oneshot::channel();
        let (c, _) = oneshot::channel();
        assert_eq!(f.allocate(a), 65535);
        assert_eq!(f.allocate(b), 1);
        f.next = 0;
        assert_eq!(f.allocate(c), 2);
    }
}

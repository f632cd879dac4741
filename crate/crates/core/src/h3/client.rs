//! HTTP/3 publisher/subscriber client.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use bytes::{Bytes, BytesMut};
use quinn::{RecvStream, VarInt};
use tokio::sync::watch;

use super::buffer::{BufferStats, WriteBufferPolicy};
use super::frame::{self, Frame, FrameReader};
use super::qpack;
use super::route::{self, RecordError};
use crate::auth::encode_basic_header;
use crate::events::{EndpointEvent, EventRecorder};
use crate::quic::{self, ConnectError, QlogTarget, QuicSetupError, ServerTrust, SocketTap, ALPN_H3};
use crate::tuning::TuningProfile;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("setup: {0}")]
    Setup(#[from] QuicSetupError),
    #[error("{0}")]
    Connect(#[from] ConnectError),
    #[error("unauthorized (401)")]
    Unauthorized,
    #[error("topic not found (404)")]
    TopicNotFound,
    #[error("unexpected status {0}")]
    Status(u16),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl From<quinn::ConnectionError> for ClientError {
    fn from(e: quinn::ConnectionError) -> Self {
        Self::Transport(e.to_string())
    }
}

impl From<quinn::WriteError> for ClientError {
    fn from(e: quinn::WriteError) -> Self {
        Self::Transport(e.to_string())
    }
}

impl From<quinn::ClosedStream> for ClientError {
    fn from(e: quinn::ClosedStream) -> Self {
        Self::Transport(e.to_string())
    }
}

impl From<frame::FrameError> for ClientError {
    fn from(e: frame::FrameError) -> Self {
        Self::Protocol(e.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct H3ClientConfig {
    pub server_name: String,
    /// Value of `:authority`.
    pub authority: String,
    pub user: String,
    pub pass: String,
    pub tuning: TuningProfile,
    pub buffer_policy: WriteBufferPolicy,
    pub trust: ServerTrust,
    pub qlog: QlogTarget,
    pub bind: SocketAddr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AuthState {
    Unauthenticated,
    /// A request carrying credentials is in flight.
    Pending,
    Authenticated,
}

#[derive(Debug, Default)]
pub struct ClientStats {
    pub requests: AtomicU64,
    pub auth_headers_sent: AtomicU64,
    pub publish_streams: AtomicU64,
    pub buffers: BufferStats,
}

#[derive(Debug)]
pub struct H3Response {
    pub status: u16,
    pub body: Bytes,
}

struct Inner {
    endpoint: quinn::Endpoint,
    conn: quinn::Connection,
    tap: Arc<SocketTap>,
    cfg: H3ClientConfig,
    auth: watch::Sender<AuthState>,
    events: EventRecorder,
    stats: ClientStats,
    _control: tokio::sync::Mutex<quinn::SendStream>,
}

/// One QUIC connection carrying any number of requests. Cheap to clone.
#[derive(Clone)]
pub struct H3Session {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for H3Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("H3Session")
            .field("remote", &self.inner.conn.remote_address())
            .finish_non_exhaustive()
    }
}

impl H3Session {
    /// Connects and performs the HTTP/3 control-stream setup. `events`
    /// receives `conn_start` now and the handshake milestones as they occur.
    pub async fn connect(addr: SocketAddr, cfg: H3ClientConfig, events: EventRecorder) -> Result<Self, ClientError> {
        events.record(EndpointEvent::ConnStart);
        let tap = SocketTap::new();
        if let QlogTarget::Shared(sink) = &cfg.qlog {
            tap.attach_qlog(sink.clone());
        }
        let client = quic::client_config(&cfg.trust, &cfg.tuning, ALPN_H3, cfg.qlog.clone())?;
        let mut endpoint = quic::bind_endpoint(cfg.bind, None, tap.clone())?;
        endpoint.set_default_client_config(client);
        let conn = quic::connect_with_deadlines(&endpoint, addr, &cfg.server_name, &cfg.tuning, &tap).await?;
        if let Some(t) = tap.first_send() {
            events.record_at(EndpointEvent::FirstInitialSent, t);
        }
        events.record(EndpointEvent::HandshakeDone);

        let mut control = conn.open_uni().await?;
        let mut buf = BytesMut::new();
        frame::put_varint(&mut buf, frame::STREAM_CONTROL).expect("small");
        Frame::Settings(vec![
            (frame::SETTING_QPACK_MAX_TABLE_CAPACITY, 0),
            (frame::SETTING_QPACK_BLOCKED_STREAMS, 0),
        ])
        .encode(&mut buf);
        control.write_all(&buf).await?;
        tokio::spawn(super::server::drain_uni_streams(conn.clone()));

        Ok(Self {
            inner: Arc::new(Inner {
                endpoint,
                conn,
                tap,
                auth: watch::Sender::new(AuthState::Unauthenticated),
                cfg,
                events,
                stats: ClientStats::default(),
                _control: tokio::sync::Mutex::new(control),
            }),
        })
    }

    pub fn stats(&self) -> &ClientStats {
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

    /// Whether this request should carry credentials. At most one request
    /// with credentials is outstanding; others wait for its outcome.
    async fn acquire_auth(&self) -> bool {
        let mut rx = self.inner.auth.subscribe();
        loop {
            let state = *rx.borrow_and_update();
            match state {
                AuthState::Authenticated => return false,
                AuthState::Unauthenticated => {
                    let won = self.inner.auth.send_if_modified(|s| {
                        if *s == AuthState::Unauthenticated {
                            *s = AuthState::Pending;
                            true
                        } else {
                            false
                        }
                    });
                    if won {
                        return true;
                    }
                    continue;
                }
                AuthState::Pending => {}
            }
            if rx.changed().await.is_err() {
                return true;
            }
        }
    }

    fn settle_auth(&self, with_credentials: bool, status: Option<u16>) {
        let next = match status {
            Some(s) if (200..300).contains(&s) && with_credentials => AuthState::Authenticated,
            Some(401) => AuthState::Unauthenticated,
            _ if with_credentials => AuthState::Unauthenticated,
            _ => return,
        };
        self.inner.auth.send_if_modified(|s| {
            if *s == AuthState::Authenticated && next != AuthState::Unauthenticated {
                return false;
            }
            if *s == next {
                return false;
            }
            *s = next;
            true
        });
    }

    /// Issues one request on a fresh stream and returns the response reader
    /// positioned after the response headers.
    async fn start_request(
        &self,
        method: &str,
        path: &str,
        body: &[u8],
    ) -> Result<(u16, FrameReader<RecvStream>, bool), ClientError> {
        let with_credentials = self.acquire_auth().await;
        let result = self.start_request_inner(method, path, body, with_credentials).await;
        if result.is_err() {
            self.settle_auth(with_credentials, None);
        }
        result.map(|(s, r)| (s, r, with_credentials))
    }

    async fn start_request_inner(
        &self,
        method: &str,
        path: &str,
        body: &[u8],
        with_credentials: bool,
    ) -> Result<(u16, FrameReader<RecvStream>), ClientError> {
        let inner = &self.inner;
        let auth_value = with_credentials.then(|| encode_basic_header(&inner.cfg.user, &inner.cfg.pass));
        let len = body.len().to_string();
        let mut fields: Vec<(&str, &str)> = vec![
            (":method", method),
            (":scheme", "https"),
            (":authority", &inner.cfg.authority),
            (":path", path),
        ];
        if let Some(v) = &auth_value {
            fields.push(("authorization", v));
        }
        if method == "POST" || method == "PUT" {
            fields.push(("content-length", &len));
        }
        let mut block = Vec::new();
        qpack::encode_field_section(&fields, &mut block);
        let headers = Frame::Headers(block.into()).to_bytes();
        let data_head = frame::varint_len(frame::FRAME_DATA) + frame::varint_len(body.len() as u64);
        let header_estimate = headers.len() + data_head;

        let mut wire = inner.cfg.buffer_policy.allocate(header_estimate, body.len(), &inner.stats.buffers);
        wire.extend_from_slice(&headers);
        if !body.is_empty() {
            let mut data = BytesMut::with_capacity(data_head);
            frame::put_varint(&mut data, frame::FRAME_DATA).expect("small");
            frame::put_varint(&mut data, body.len() as u64).expect("payload length");
            wire.extend_from_slice(&data);
            wire.extend_from_slice(body);
        }

        let (mut send, recv) = inner.conn.open_bi().await?;
        inner.stats.requests.fetch_add(1, Ordering::Relaxed);
        if with_credentials {
            inner.stats.auth_headers_sent.fetch_add(1, Ordering::Relaxed);
        }
        send.write_all(&wire).await?;
        send.finish()?;
        if method == "POST" {
            inner.stats.publish_streams.fetch_add(1, Ordering::Relaxed);
            inner.events.record_once_at(EndpointEvent::FirstAppDataSent, Instant::now());
        }

        let mut reader = FrameReader::new(recv);
        loop {
            match reader.next().await? {
                Some(Frame::Headers(block)) => {
                    let fields = qpack::decode_field_section(&block).map_err(|e| ClientError::Protocol(e.to_string()))?;
                    let status = fields
                        .iter()
                        .find(|(n, _)| n == ":status")
                        .and_then(|(_, v)| v.parse::<u16>().ok())
                        .ok_or_else(|| ClientError::Protocol("response without :status".into()))?;
                    if (100..200).contains(&status) {
                        continue;
                    }
                    return Ok((status, reader));
                }
                Some(Frame::Unknown(_)) => continue,
                Some(_) => return Err(ClientError::Protocol("response did not start with HEADERS".into())),
                None => return Err(ClientError::Transport("stream ended before response".into())),
            }
        }
    }

    /// Sends a request and reads the complete response.
    pub async fn request(&self, method: &str, path: &str, body: &[u8]) -> Result<H3Response, ClientError> {
        let (status, mut reader, with_credentials) = self.start_request(method, path, body).await?;
        self.settle_auth(with_credentials, Some(status));
        let mut out = BytesMut::new();
        while let Some(f) = reader.next().await? {
            if let Frame::Data(d) = f {
                out.extend_from_slice(&d);
            }
        }
        Ok(H3Response { status, body: out.freeze() })
    }

    pub async fn create_topic(&self, topic: &str) -> Result<u16, ClientError> {
        let r = self.request("PUT", &route::topic_path(topic), b"").await?;
        match r.status {
            200 | 201 => Ok(r.status),
            401 => Err(ClientError::Unauthorized),
            s => Err(ClientError::Status(s)),
        }
    }

    /// Publishes one event; `ordinal` labels the `request_done` event.
    pub async fn publish(&self, topic: &str, payload: &[u8], ordinal: u64) -> Result<u64, ClientError> {
        let r = self.request("POST", &route::topic_path(topic), payload).await?;
        match r.status {
            200 => {
                self.inner.events.record(EndpointEvent::RequestDone(ordinal));
                std::str::from_utf8(&r.body)
                    .ok()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| ClientError::Protocol("publish response without sequence".into()))
            }
            401 => Err(ClientError::Unauthorized),
            404 => Err(ClientError::TopicNotFound),
            s => Err(ClientError::Status(s)),
        }
    }

    /// Opens a long-lived GET on the topic.
    pub async fn subscribe(&self, topic: &str) -> Result<H3Subscription, ClientError> {
        let (status, reader, with_credentials) = self.start_request("GET", &route::topic_path(topic), b"").await?;
        self.settle_auth(with_credentials, Some(status));
        match status {
            200 => Ok(H3Subscription {
                reader,
                buf: BytesMut::new(),
                pending: std::collections::VecDeque::new(),
                ordinal: 0,
                ended: None,
            }),
            401 => Err(ClientError::Unauthorized),
            404 => Err(ClientError::TopicNotFound),
            s => Err(ClientError::Status(s)),
        }
    }

    /// Closes the connection and waits up to `linger` for the close to be
    /// sent.
    pub async fn close(&self, linger: std::time::Duration) {
        self.inner.conn.close(VarInt::from_u32(frame::H3_NO_ERROR), b"");
        self.inner.events.record(EndpointEvent::ConnClosed);
        let _ = tokio::time::timeout(linger, self.inner.endpoint.wait_idle()).await;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubscribedEvent {
    /// 1-based position in this subscription.
    pub ordinal: u64,
    pub payload: Bytes,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubscriptionEnd {
    /// The broker finished the stream (unsubscribe or topic deleted).
    Finished,
    StreamReset(String),
    Protocol(String),
}

pub struct H3Subscription {
    reader: FrameReader<RecvStream>,
    buf: BytesMut,
    pending: std::collections::VecDeque<Bytes>,
    ordinal: u64,
    ended: Option<SubscriptionEnd>,
}

impl H3Subscription {
    /// Next event in order; `None` once the subscription has ended.
    pub async fn next(&mut self) -> Option<SubscribedEvent> {
        loop {
            if let Some(payload) = self.pending.pop_front() {
                self.ordinal += 1;
                return Some(SubscribedEvent { ordinal: self.ordinal, payload });
            }
            if self.ended.is_some() {
                return None;
            }
            match self.reader.next().await {
                Ok(Some(Frame::Data(d))) => {
                    self.buf.extend_from_slice(&d);
                    match route::decode_records(&mut self.buf, 1 << 20) {
                        Ok(records) => self.pending.extend(records),
                        Err(e) => self.ended = Some(SubscriptionEnd::Protocol(e.to_string())),
                    }
                }
                Ok(Some(_)) => {}
                Ok(None) if self.buf.is_empty() => self.ended = Some(SubscriptionEnd::Finished),
                Ok(None) => self.ended = Some(SubscriptionEnd::Protocol(RecordError::Truncated.to_string())),
                Err(e) => self.ended = Some(SubscriptionEnd::StreamReset(e.to_string())),
            }
        }
    }

    pub fn end_reason(&self) -> Option<&SubscriptionEnd> {
        self.ended.as_ref()
    }

    /// Delivers every event to `on_event` in order until the subscription
    /// ends.
    pub async fn run<F: FnMut(SubscribedEvent)>(mut self, mut on_event: F) -> SubscriptionEnd {
        while let Some(ev) = self.next().await {
            on_event(ev);
        }
        self.ended.unwrap_or(SubscriptionEnd::Finished)
    }

    pub fn cancel(&mut self) {
        let _ = self.reader.get_mut().stop(VarInt::from_u32(frame::H3_REQUEST_CANCELLED));
    }
}

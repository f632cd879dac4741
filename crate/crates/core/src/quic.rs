//! QUIC endpoint construction shared by the HTTP/3 and MQTT endpoints.
//!
//! Applies a [`TuningProfile`] to quinn, wires TLS (ChaCha20-Poly1305
//! preferred, no early data) and instruments the UDP socket and congestion
//! controller so endpoints can timestamp their first Initial packet and emit
//! qlog traces.

use std::any::Any;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, IoSliceMut, Write};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::task::{Context, Poll};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use quinn::congestion::{Controller, ControllerFactory, CubicConfig};
use quinn::crypto::rustls::{QuicClientConfig, QuicServerConfig};
use quinn::udp::{RecvMeta, Transmit};
use quinn::{AckFrequencyConfig, AsyncUdpSocket, Endpoint, EndpointConfig, IdleTimeout, Runtime, TokioRuntime, TransportConfig, UdpPoller, VarInt};
use rustls::crypto::CryptoProvider;
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName, UnixTime};
use serde_json::{json, Value};

use crate::tuning::{CipherSuite, TuningProfile};

pub const ALPN_H3: &[u8] = b"h3";
pub const ALPN_MQTT: &[u8] = b"mqtt";

#[derive(Debug, thiserror::Error)]
pub enum QuicSetupError {
    #[error("tls: {0}")]
    Tls(#[from] rustls::Error),
    #[error("certificate: {0}")]
    Certificate(String),
    #[error("quic crypto config: {0}")]
    Crypto(String),
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Coarse QUIC packet class, readable from the unprotected first byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Initial,
    ZeroRtt,
    Handshake,
    Retry,
    VersionNegotiation,
    Short,
    Unknown,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::ZeroRtt => "0RTT",
            Self::Handshake => "handshake",
            Self::Retry => "retry",
            Self::VersionNegotiation => "version_negotiation",
            Self::Short => "1RTT",
            Self::Unknown => "unknown",
        }
    }
}

/// Classifies a datagram by its first (coalesced) packet.
pub fn classify_datagram(datagram: &[u8]) -> PacketKind {
    let Some(&first) = datagram.first() else {
        return PacketKind::Unknown;
    };
    if first & 0x80 == 0 {
        return PacketKind::Short;
    }
    if datagram.len() < 5 {
        return PacketKind::Unknown;
    }
    let version = u32::from_be_bytes([datagram[1], datagram[2], datagram[3], datagram[4]]);
    if version == 0 {
        return PacketKind::VersionNegotiation;
    }
    match (first >> 4) & 0x03 {
        0 => PacketKind::Initial,
        1 => PacketKind::ZeroRtt,
        2 => PacketKind::Handshake,
        _ => PacketKind::Retry,
    }
}

fn unix_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64() * 1000.0)
        .unwrap_or(0.0)
}

/// qlog 0.3 JSON-SEQ writer. Cheap to clone; all clones append to the same
/// trace.
#[derive(Clone)]
pub struct QlogSink {
    inner: Arc<Mutex<QlogInner>>,
}

struct QlogInner {
    start: Instant,
    out: Box<dyn Write + Send>,
    events: u64,
}

impl fmt::Debug for QlogSink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QlogSink").finish_non_exhaustive()
    }
}

impl QlogSink {
    pub fn new(out: Box<dyn Write + Send>, title: &str, vantage: &str, start: Instant) -> io::Result<Self> {
        let sink = Self {
            inner: Arc::new(Mutex::new(QlogInner { start, out, events: 0 })),
        };
        let header = json!({
            "qlog_version": "0.3",
            "qlog_format": "JSON-SEQ",
            "title": title,
            "trace": {
                "vantage_point": { "type": vantage },
                "common_fields": { "time_format": "relative", "reference_time": unix_ms() },
            },
        });
        sink.write_record(&header)?;
        Ok(sink)
    }

    pub fn create(path: &Path, title: &str, vantage: &str, start: Instant) -> io::Result<Self> {
        let file = BufWriter::new(File::create(path)?);
        Self::new(Box::new(file), title, vantage, start)
    }

    fn write_record(&self, value: &Value) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        inner.out.write_all(&[0x1e])?;
        serde_json::to_writer(&mut inner.out, value)?;
        inner.out.write_all(b"\n")
    }

    pub fn event(&self, at: Instant, name: &str, data: Value) {
        let time = {
            let mut inner = self.inner.lock().unwrap();
            inner.events += 1;
            at.saturating_duration_since(inner.start).as_secs_f64() * 1000.0
        };
        if let Err(e) = self.write_record(&json!({ "time": time, "name": name, "data": data })) {
            tracing::warn!("qlog write failed: {e}");
        }
    }

    pub fn events_written(&self) -> u64 {
        self.inner.lock().unwrap().events
    }

    pub fn flush(&self) -> io::Result<()> {
        self.inner.lock().unwrap().out.flush()
    }
}

/// Counters kept by [`TappedSocket`].
#[derive(Debug, Default)]
pub struct SocketTap {
    pub sent_datagrams: AtomicU64,
    pub sent_bytes: AtomicU64,
    pub recv_datagrams: AtomicU64,
    pub recv_bytes: AtomicU64,
    pub initial_sent: AtomicU64,
    first_send: OnceLock<Instant>,
    first_recv: OnceLock<Instant>,
    last_recv: Mutex<Option<Instant>>,
    qlog: OnceLock<QlogSink>,
}

impl SocketTap {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn attach_qlog(&self, sink: QlogSink) {
        let _ = self.qlog.set(sink);
    }

    pub fn first_send(&self) -> Option<Instant> {
        self.first_send.get().copied()
    }

    pub fn first_recv(&self) -> Option<Instant> {
        self.first_recv.get().copied()
    }

    pub fn last_recv(&self) -> Option<Instant> {
        *self.last_recv.lock().unwrap()
    }

    fn on_sent(&self, datagram: &[u8], now: Instant) {
        self.first_send.get_or_init(|| now);
        self.sent_datagrams.fetch_add(1, Ordering::Relaxed);
        self.sent_bytes.fetch_add(datagram.len() as u64, Ordering::Relaxed);
        let kind = classify_datagram(datagram);
        if kind == PacketKind::Initial {
            self.initial_sent.fetch_add(1, Ordering::Relaxed);
        }
        if let Some(q) = self.qlog.get() {
            q.event(
                now,
                "transport:packet_sent",
                json!({ "header": { "packet_type": kind.as_str() }, "raw": { "length": datagram.len() } }),
            );
        }
    }

    fn on_recv(&self, datagram: &[u8], now: Instant) {
        self.first_recv.get_or_init(|| now);
        *self.last_recv.lock().unwrap() = Some(now);
        self.recv_datagrams.fetch_add(1, Ordering::Relaxed);
        self.recv_bytes.fetch_add(datagram.len() as u64, Ordering::Relaxed);
        if let Some(q) = self.qlog.get() {
            q.event(
                now,
                "transport:packet_received",
                json!({ "header": { "packet_type": classify_datagram(datagram).as_str() }, "raw": { "length": datagram.len() } }),
            );
        }
    }
}

/// UDP socket wrapper that records every datagram crossing it. Segmentation
/// offload is disabled so each transmit is one datagram on the wire.
#[derive(Debug)]
pub struct TappedSocket {
    inner: Arc<dyn AsyncUdpSocket>,
    tap: Arc<SocketTap>,
}

impl AsyncUdpSocket for TappedSocket {
    fn create_io_poller(self: Arc<Self>) -> Pin<Box<dyn UdpPoller>> {
        self.inner.clone().create_io_poller()
    }

    fn try_send(&self, transmit: &Transmit) -> io::Result<()> {
        self.inner.try_send(transmit)?;
        let now = Instant::now();
        match transmit.segment_size {
            Some(seg) if seg > 0 => transmit.contents.chunks(seg).for_each(|d| self.tap.on_sent(d, now)),
            _ => self.tap.on_sent(transmit.contents, now),
        }
        Ok(())
    }

    fn poll_recv(
        &self,
        cx: &mut Context,
        bufs: &mut [IoSliceMut<'_>],
        meta: &mut [RecvMeta],
    ) -> Poll<io::Result<usize>> {
        let res = self.inner.poll_recv(cx, bufs, meta);
        if let Poll::Ready(Ok(n)) = &res {
            let now = Instant::now();
            for (buf, m) in bufs.iter().zip(meta.iter()).take(*n) {
                let data = &buf[..m.len];
                let stride = if m.stride == 0 { m.len.max(1) } else { m.stride };
                data.chunks(stride).for_each(|d| self.tap.on_recv(d, now));
            }
        }
        res
    }

    fn local_addr(&self) -> io::Result<SocketAddr> {
        self.inner.local_addr()
    }

    fn max_transmit_segments(&self) -> usize {
        1
    }

    fn max_receive_segments(&self) -> usize {
        self.inner.max_receive_segments()
    }

    fn may_fragment(&self) -> bool {
        self.inner.may_fragment()
    }
}

/// Where congestion-controller qlog events go.
#[derive(Clone, Debug, Default)]
pub enum QlogTarget {
    #[default]
    Off,
    /// Every connection appends to one trace (client endpoints).
    Shared(QlogSink),
    /// One file per connection in the directory (broker endpoints).
    PerConnection { dir: PathBuf, prefix: String },
}

#[derive(Debug)]
struct InstrumentedCubicFactory {
    cubic: Arc<CubicConfig>,
    target: QlogTarget,
    counter: AtomicU64,
}

impl ControllerFactory for InstrumentedCubicFactory {
    fn build(self: Arc<Self>, now: Instant, current_mtu: u16) -> Box<dyn Controller> {
        let inner = self.cubic.clone().build(now, current_mtu);
        let sink = match &self.target {
            QlogTarget::Off => None,
            QlogTarget::Shared(s) => Some(s.clone()),
            QlogTarget::PerConnection { dir, prefix } => {
                let n = self.counter.fetch_add(1, Ordering::Relaxed);
                let path = dir.join(format!("{prefix}-conn{n}.sqlog"));
                match QlogSink::create(&path, prefix, "server", now) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        tracing::warn!("cannot create {}: {e}", path.display());
                        None
                    }
                }
            }
        };
        Box::new(InstrumentedController {
            inner,
            sink,
            in_flight: 0,
            last_reported: (u64::MAX, u64::MAX),
        })
    }
}

/// CUBIC with qlog recovery events.
struct InstrumentedController {
    inner: Box<dyn Controller>,
    sink: Option<QlogSink>,
    in_flight: u64,
    last_reported: (u64, u64),
}

impl InstrumentedController {
    fn report(&mut self, now: Instant) {
        let Some(sink) = &self.sink else { return };
        let cwnd = self.inner.window();
        if self.last_reported == (cwnd, self.in_flight) {
            return;
        }
        self.last_reported = (cwnd, self.in_flight);
        sink.event(
            now,
            "recovery:metrics_updated",
            json!({ "congestion_window": cwnd, "bytes_in_flight": self.in_flight }),
        );
    }
}

impl Controller for InstrumentedController {
    fn on_sent(&mut self, now: Instant, bytes: u64, last_packet_number: u64) {
        self.in_flight += bytes;
        self.inner.on_sent(now, bytes, last_packet_number);
        self.report(now);
    }

    fn on_ack(&mut self, now: Instant, sent: Instant, bytes: u64, app_limited: bool, rtt: &quinn_proto::RttEstimator) {
        self.inner.on_ack(now, sent, bytes, app_limited, rtt);
    }

    fn on_end_acks(&mut self, now: Instant, in_flight: u64, app_limited: bool, largest_packet_num_acked: Option<u64>) {
        self.in_flight = in_flight;
        self.inner.on_end_acks(now, in_flight, app_limited, largest_packet_num_acked);
        self.report(now);
    }

    fn on_congestion_event(&mut self, now: Instant, sent: Instant, is_persistent_congestion: bool, lost_bytes: u64) {
        self.in_flight = self.in_flight.saturating_sub(lost_bytes);
        self.inner.on_congestion_event(now, sent, is_persistent_congestion, lost_bytes);
        if let Some(sink) = &self.sink {
            sink.event(
                now,
                "recovery:packet_lost",
                json!({ "trigger": "congestion_event", "lost_bytes": lost_bytes, "persistent": is_persistent_congestion }),
            );
        }
        self.report(now);
    }

    fn on_mtu_update(&mut self, new_mtu: u16) {
        self.inner.on_mtu_update(new_mtu);
    }

    fn window(&self) -> u64 {
        self.inner.window()
    }

    fn clone_box(&self) -> Box<dyn Controller> {
        Box::new(Self {
            inner: self.inner.clone_box(),
            sink: self.sink.clone(),
            in_flight: self.in_flight,
            last_reported: self.last_reported,
        })
    }

    fn initial_window(&self) -> u64 {
        self.inner.initial_window()
    }

    fn into_any(self: Box<Self>) -> Box<dyn Any> {
        self
    }
}


/// Builds the quinn transport configuration for a tuning profile.
pub fn transport_config(tuning: &TuningProfile, qlog: QlogTarget) -> TransportConfig {
    let mut tc = TransportConfig::default();
    tc.initial_rtt(tuning.initial_rtt());
    tc.max_concurrent_bidi_streams(VarInt::from_u64(tuning.max_incoming_streams).unwrap_or(VarInt::MAX));
    tc.max_concurrent_uni_streams(VarInt::from_u32(8));
    let idle = tuning.idle_timeout().max(tuning.handshake_idle_timeout());
    tc.max_idle_timeout(IdleTimeout::try_from(idle).ok());
    let mut ack = AckFrequencyConfig::default();
    ack.max_ack_delay(Some(tuning.max_ack_delay().max(Duration::from_millis(1))));
    tc.ack_frequency_config(Some(ack));
    if !tuning.pmtud_enabled {
        tc.mtu_discovery_config(None);
    }
    tc.enable_segmentation_offload(false);
    tc.congestion_controller_factory(Arc::new(InstrumentedCubicFactory {
        cubic: Arc::new(CubicConfig::default()),
        target: qlog,
        counter: AtomicU64::new(0),
    }));
    tc
}

/// Ring provider with `preferred` moved to the front. AES-128-GCM always
/// stays available because QUIC Initial packets are protected with it.
pub fn crypto_provider(preferred: CipherSuite) -> CryptoProvider {
    use rustls::crypto::ring::cipher_suite as cs;
    let mut provider = rustls::crypto::ring::default_provider();
    let first = match preferred {
        CipherSuite::ChaCha20Poly1305Sha256 => cs::TLS13_CHACHA20_POLY1305_SHA256,
        CipherSuite::Aes128GcmSha256 => cs::TLS13_AES_128_GCM_SHA256,
        CipherSuite::Aes256GcmSha384 => cs::TLS13_AES_256_GCM_SHA384,
    };
    let mut suites = vec![first];
    for s in [
        cs::TLS13_CHACHA20_POLY1305_SHA256,
        cs::TLS13_AES_128_GCM_SHA256,
        cs::TLS13_AES_256_GCM_SHA384,
    ] {
        if s.suite() != first.suite() {
            suites.push(s);
        }
    }
    provider.cipher_suites = suites;
    provider
}

/// Server certificate chain and key.
#[derive(Debug)]
pub struct ServerIdentity {
    pub cert_chain: Vec<CertificateDer<'static>>,
    pub key: PrivateKeyDer<'static>,
}

impl Clone for ServerIdentity {
    fn clone(&self) -> Self {
        Self {
            cert_chain: self.cert_chain.clone(),
            key: self.key.clone_key(),
        }
    }
}

impl ServerIdentity {
    pub fn self_signed(names: &[&str]) -> Result<Self, QuicSetupError> {
        let ck = rcgen::generate_simple_self_signed(names.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            .map_err(|e| QuicSetupError::Certificate(e.to_string()))?;
        let key = PrivateKeyDer::try_from(ck.signing_key.serialize_der())
            .map_err(|e| QuicSetupError::Certificate(e.to_string()))?;
        Ok(Self {
            cert_chain: vec![ck.cert.der().clone()],
            key,
        })
    }

    pub fn from_pem_files(cert: &Path, key: &Path) -> Result<Self, QuicSetupError> {
        let cert_chain = CertificateDer::pem_file_iter(cert)
            .map_err(|e| QuicSetupError::Certificate(format!("{}: {e}", cert.display())))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| QuicSetupError::Certificate(format!("{}: {e}", cert.display())))?;
        if cert_chain.is_empty() {
            return Err(QuicSetupError::Certificate(format!("{}: no certificates", cert.display())));
        }
        let key = PrivateKeyDer::from_pem_file(key)
            .map_err(|e| QuicSetupError::Certificate(format!("{}: {e}", key.display())))?;
        Ok(Self { cert_chain, key })
    }

    /// Writes a fresh self-signed certificate and key as PEM.
    pub fn generate_pem_files(names: &[&str], cert: &Path, key: &Path) -> Result<(), QuicSetupError> {
        let ck = rcgen::generate_simple_self_signed(names.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            .map_err(|e| QuicSetupError::Certificate(e.to_string()))?;
        std::fs::write(cert, ck.cert.pem())?;
        std::fs::write(key, ck.signing_key.serialize_pem())?;
        Ok(())
    }
}

/// How a client authenticates the server.
#[derive(Clone, Debug)]
pub enum ServerTrust {
    Roots(Vec<CertificateDer<'static>>),
    /// Accept any certificate. For desk experiments only.
    InsecureAnyCert,
}

impl ServerTrust {
    pub fn from_pem_file(path: &Path) -> Result<Self, QuicSetupError> {
        let certs = CertificateDer::pem_file_iter(path)
            .map_err(|e| QuicSetupError::Certificate(format!("{}: {e}", path.display())))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| QuicSetupError::Certificate(format!("{}: {e}", path.display())))?;
        Ok(Self::Roots(certs))
    }
}

pub fn server_config(
    identity: &ServerIdentity,
    tuning: &TuningProfile,
    alpn: &[u8],
    qlog: QlogTarget,
) -> Result<quinn::ServerConfig, QuicSetupError> {
    let mut tls = rustls::ServerConfig::builder_with_provider(Arc::new(crypto_provider(tuning.cipher_suite)))
        .with_protocol_versions(&[&rustls::version::TLS13])?
        .with_no_client_auth()
        .with_single_cert(identity.cert_chain.clone(), identity.key.clone_key())?;
    tls.alpn_protocols = vec![alpn.to_vec()];
    // connection-level auth relies on 0-RTT staying off
    tls.max_early_data_size = 0;
    let crypto = QuicServerConfig::try_from(tls).map_err(|e| QuicSetupError::Crypto(e.to_string()))?;
    let mut cfg = quinn::ServerConfig::with_crypto(Arc::new(crypto));
    cfg.transport_config(Arc::new(transport_config(tuning, qlog)));
    Ok(cfg)
}

pub fn client_config(
    trust: &ServerTrust,
    tuning: &TuningProfile,
    alpn: &[u8],
    qlog: QlogTarget,
) -> Result<quinn::ClientConfig, QuicSetupError> {
    let provider = Arc::new(crypto_provider(tuning.cipher_suite));
    let builder = rustls::ClientConfig::builder_with_provider(provider.clone())
        .with_protocol_versions(&[&rustls::version::TLS13])?;
    let mut tls = match trust {
        ServerTrust::Roots(certs) => {
            let mut roots = rustls::RootCertStore::empty();
            for c in certs {
                roots.add(c.clone())?;
            }
            builder.with_root_certificates(roots).with_no_client_auth()
        }
        ServerTrust::InsecureAnyCert => builder
            .dangerous()
            .with_custom_certificate_verifier(Arc::new(AnyCert(provider)))
            .with_no_client_auth(),
    };
    tls.alpn_protocols = vec![alpn.to_vec()];
    tls.enable_early_data = false;
    let crypto = QuicClientConfig::try_from(tls).map_err(|e| QuicSetupError::Crypto(e.to_string()))?;
    let mut cfg = quinn::ClientConfig::new(Arc::new(crypto));
    cfg.transport_config(Arc::new(transport_config(tuning, qlog)));
    Ok(cfg)
}

#[derive(Debug)]
struct AnyCert(Arc<CryptoProvider>);

impl rustls::client::danger::ServerCertVerifier for AnyCert {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<rustls::client::danger::ServerCertVerified, rustls::Error> {
        Ok(rustls::client::danger::ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &rustls::DigitallySignedStruct,
    ) -> Result<rustls::client::danger::HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls12_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &rustls::DigitallySignedStruct,
    ) -> Result<rustls::client::danger::HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls13_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn supported_verify_schemes(&self) -> Vec<rustls::SignatureScheme> {
        self.0.signature_verification_algorithms.supported_schemes()
    }
}

/// Binds a quinn endpoint on an instrumented socket.
pub fn bind_endpoint(
    addr: SocketAddr,
    server: Option<quinn::ServerConfig>,
    tap: Arc<SocketTap>,
) -> Result<Endpoint, QuicSetupError> {
    let socket = UdpSocket::bind(addr).map_err(|source| QuicSetupError::Bind { addr, source })?;
    socket.set_nonblocking(true)?;
    let runtime = Arc::new(TokioRuntime);
    let inner = runtime.wrap_udp_socket(socket)?;
    let socket: Arc<dyn AsyncUdpSocket> = Arc::new(TappedSocket { inner, tap });
    Ok(Endpoint::new_with_abstract_socket(
        EndpointConfig::default(),
        server,
        socket,
        runtime,
    )?)
}

#[derive(Debug, thiserror::Error)]
pub enum ConnectError {
    #[error("connect: {0}")]
    Connect(#[from] quinn::ConnectError),
    #[error("handshake: {0}")]
    Connection(#[from] quinn::ConnectionError),
    #[error("handshake exceeded {0:?}")]
    HandshakeTimeout(Duration),
    #[error("handshake idle for {0:?}")]
    HandshakeIdle(Duration),
}

/// Connects and enforces the profile's handshake deadlines: an overall
/// limit, and an idle limit on silence from the server during the handshake.
pub async fn connect_with_deadlines(
    endpoint: &Endpoint,
    addr: SocketAddr,
    server_name: &str,
    tuning: &TuningProfile,
    tap: &SocketTap,
) -> Result<quinn::Connection, ConnectError> {
    let started = Instant::now();
    let connecting = endpoint.connect(addr, server_name)?;
    let idle_limit = tuning.handshake_idle_timeout();
    let overall = tuning.handshake_timeout();
    let watchdog = async {
        loop {
            tokio::time::sleep(Duration::from_millis(100)).await;
            let last = tap.last_recv().filter(|t| *t >= started).unwrap_or(started);
            if last.elapsed() >= idle_limit {
                return ConnectError::HandshakeIdle(idle_limit);
            }
            if started.elapsed() >= overall {
                return ConnectError::HandshakeTimeout(overall);
            }
        }
    };
    tokio::select! {
        res = connecting => Ok(res?),
        err = watchdog => Err(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify() {
        assert_eq!(classify_datagram(&[0xc0, 0, 0, 0, 1]), PacketKind::Initial);
        assert_eq!(classify_datagram(&[0xe0, 0, 0, 0, 1]), PacketKind::Handshake);
        assert_eq!(classify_datagram(&[0xd0, 0, 0, 0, 1]), PacketKind::ZeroRtt);
        assert_eq!(classify_datagram(&[0xf0, 0, 0, 0, 1]), PacketKind::Retry);
        assert_eq!(classify_datagram(&[0xc0, 0, 0, 0, 0]), PacketKind::VersionNegotiation);
        assert_eq!(classify_datagram(&[0x40, 1, 2]), PacketKind::Short);
        assert_eq!(classify_datagram(&[]), PacketKind::Unknown);
    }

    #[test]
    fn chacha_is_preferred() {
        let p = crypto_provider(CipherSuite::ChaCha20Poly1305Sha256);
        assert_eq!(
            p.cipher_suites[0].suite(),
            rustls::CipherSuite::TLS13_CHACHA20_POLY1305_SHA256
        );
        assert!(p
            .cipher_suites
            .iter()
            .any(|s| s.suite() == rustls::CipherSuite::TLS13_AES_128_GCM_SHA256));
        assert_eq!(p.cipher_suites.len(), 3);
    }

    #[test]
    fn qlog_records_are_json_seq() {
        #[derive(Clone, Default)]
        struct Buf(Arc<Mutex<Vec<u8>>>);
        impl Write for Buf {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let buf = Buf::default();
        let start = Instant::now();
        let sink = QlogSink::new(Box::new(buf.clone()), "t", "client", start).unwrap();
        sink.event(start + Duration::from_millis(5), "transport:packet_sent", json!({"raw": {"length": 10}}));
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let records: Vec<Value> = text
            .split('\u{1e}')
            .filter(|r| !r.trim().is_empty())
            .map(|r| serde_json::from_str(r).unwrap())
            .collect();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0]["qlog_format"], "JSON-SEQ");
        assert_eq!(records[1]["time"], 5.0);
        assert_eq!(sink.events_written(), 1);
    }

    #[test]
    fn self_signed_configs_build() {
        let id = ServerIdentity::self_signed(&["localhost"]).unwrap();
        let tuning = TuningProfile::default();
        server_config(&id, &tuning, ALPN_H3, QlogTarget::Off).unwrap();
        client_config(&ServerTrust::Roots(id.cert_chain.clone()), &tuning, ALPN_H3, QlogTarget::Off).unwrap();
        client_config(&ServerTrust::InsecureAnyCert, &tuning, ALPN_MQTT, QlogTarget::Off).unwrap();
    }
}

//! State shared by the HTTP/3 and MQTT front ends of one broker process.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::auth::{ConnectionAuthCache, CredentialStore};
use crate::events::EventRecorder;
use crate::pubsub::Registry;
use crate::quic::{QuicSetupError, ServerIdentity};
use crate::tuning::TuningProfile;

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("bind failure on {addr}: {reason}")]
    BindFailure { addr: SocketAddr, reason: String },
    #[error("bad certificate: {0}")]
    BadCertificate(String),
}

impl BrokerError {
    pub(crate) fn from_setup(addr: SocketAddr, e: QuicSetupError) -> Self {
        match e {
            QuicSetupError::Bind { addr, source } => Self::BindFailure { addr, reason: source.to_string() },
            QuicSetupError::Io(e) => Self::BindFailure { addr, reason: e.to_string() },
            other => Self::BadCertificate(other.to_string()),
        }
    }
}

#[derive(Debug, Default)]
pub struct BrokerMetrics {
    pub connections: AtomicU64,
    pub requests: AtomicU64,
    pub auth_headers_seen: AtomicU64,
    /// MAX_STREAMS advertisements the high-watermark governor issued.
    pub governor_adverts: AtomicU64,
    /// MAX_STREAMS (bidi) frames the QUIC stack actually sent.
    pub stack_max_streams_frames: AtomicU64,
    /// Application streams accepted, all connections.
    pub app_streams: AtomicU64,
    /// Largest number of application streams any one connection opened.
    pub max_streams_per_conn: AtomicU64,
    pub mq_publishes: AtomicU64,
    pub mq_pubacks: AtomicU64,
    statuses: Mutex<BTreeMap<u16, u64>>,
}

impl BrokerMetrics {
    pub fn count_status(&self, status: u16) {
        *self.statuses.lock().unwrap().entry(status).or_default() += 1;
    }

    pub fn status_count(&self, status: u16) -> u64 {
        self.statuses.lock().unwrap().get(&status).copied().unwrap_or(0)
    }

    pub fn statuses(&self) -> BTreeMap<u16, u64> {
        self.statuses.lock().unwrap().clone()
    }

    pub(crate) fn on_connection_end(&self, conn: &quinn::Connection, governor_adverts: u64, streams: u64) {
        let stats = conn.stats();
        self.stack_max_streams_frames
            .fetch_add(stats.frame_tx.max_streams_bidi, Ordering::Relaxed);
        self.governor_adverts.fetch_add(governor_adverts, Ordering::Relaxed);
        self.max_streams_per_conn.fetch_max(streams, Ordering::Relaxed);
    }

    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }
}

#[derive(Clone, Debug)]
pub struct BrokerConfig {
    pub identity: ServerIdentity,
    pub tuning: TuningProfile,
    pub qlog_dir: Option<PathBuf>,
}

/// Everything a connection handler needs.
#[derive(Debug)]
pub struct BrokerShared {
    pub registry: Arc<Registry>,
    pub creds: Arc<CredentialStore>,
    pub auth_cache: ConnectionAuthCache,
    pub metrics: BrokerMetrics,
    pub events: Option<EventRecorder>,
    pub config: BrokerConfig,
}

impl BrokerShared {
    pub fn new(registry: Arc<Registry>, creds: Arc<CredentialStore>, config: BrokerConfig) -> Arc<Self> {
        Arc::new(Self {
            registry,
            creds,
            auth_cache: ConnectionAuthCache::new(),
            metrics: BrokerMetrics::default(),
            events: None,
            config,
        })
    }

    pub fn with_events(
        registry: Arc<Registry>,
        creds: Arc<CredentialStore>,
        config: BrokerConfig,
        events: EventRecorder,
    ) -> Arc<Self> {
        Arc::new(Self {
            registry,
            creds,
            auth_cache: ConnectionAuthCache::new(),
            metrics: BrokerMetrics::default(),
            events: Some(events),
            config,
        })
    }
}

/// Handle to a listening front end.
pub struct RunningService {
    pub(crate) endpoint: quinn::Endpoint,
    pub(crate) task: Option<tokio::task::JoinHandle<()>>,
    pub(crate) local_addr: SocketAddr,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn endpoint(&self) -> &quinn::Endpoint {
        &self.endpoint
    }

    pub fn shutdown(&self) {
        self.endpoint.close(0u32.into(), b"shutdown");
        if let Some(t) = &self.task {
            t.abort();
        }
    }

    /// Runs until the accept loop ends.
    pub async fn join(mut self) {
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.shutdown();
    }
}

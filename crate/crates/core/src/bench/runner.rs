//! Runs experiment iterations: fresh broker, proxy and client per iteration.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use tokio::task::JoinSet;

use super::matrix::{ExperimentSpec, Mode};
use crate::auth::CredentialStore;
use crate::broker::{BrokerConfig, BrokerShared, RunningService};
use crate::events::{EndpointEvent, EndpointEventLog, EventRecorder};
use crate::h3::{H3ClientConfig, H3Session, WriteBufferPolicy};
use crate::mq::{MqClientConfig, MqSession, QosMode};
use crate::netlab::{start_proxy, ImpairmentSpec, TimelineRecord};
use crate::pubsub::{Registry, RegistryConfig, TopicName};
use crate::quic::{QlogSink, QlogTarget, ServerIdentity, ServerTrust};
use crate::tuning::{derive_tuning, nbiot_profile, TuningProfile};

const TOPIC: &str = "bench";
const USER: &str = "bench";
const PASS: &str = "bench-secret";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSample {
    pub experiment_id: String,
    pub mode: Mode,
    pub iteration: u32,
    pub exec_time_ms: f64,
    pub ttfdf_ms: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub datagrams_up: u64,
    pub datagrams_down: u64,
    pub max_streams_adverts: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    ExecTime,
    Ttfdf,
    BytesUp,
    BytesDown,
    BytesTotal,
    DatagramsUp,
    DatagramsDown,
    DatagramsTotal,
    MaxStreamsAdverts,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Self::ExecTime,
        Self::Ttfdf,
        Self::BytesUp,
        Self::BytesDown,
        Self::BytesTotal,
        Self::DatagramsUp,
        Self::DatagramsDown,
        Self::DatagramsTotal,
        Self::MaxStreamsAdverts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ExecTime => "exec_time_ms",
            Self::Ttfdf => "ttfdf_ms",
            Self::BytesUp => "bytes_up",
            Self::BytesDown => "bytes_down",
            Self::BytesTotal => "bytes_total",
            Self::DatagramsUp => "datagrams_up",
            Self::DatagramsDown => "datagrams_down",
            Self::DatagramsTotal => "datagrams_total",
            Self::MaxStreamsAdverts => "max_streams_adverts",
        }
    }

    pub fn value(self, s: &MetricSample) -> f64 {
        match self {
            Self::ExecTime => s.exec_time_ms,
            Self::Ttfdf => s.ttfdf_ms,
            Self::BytesUp => s.bytes_up as f64,
            Self::BytesDown => s.bytes_down as f64,
            Self::BytesTotal => (s.bytes_up + s.bytes_down) as f64,
            Self::DatagramsUp => s.datagrams_up as f64,
            Self::DatagramsDown => s.datagrams_down as f64,
            Self::DatagramsTotal => (s.datagrams_up + s.datagrams_down) as f64,
            Self::MaxStreamsAdverts => s.max_streams_adverts as f64,
        }
    }
}

/// Values of one metric over samples of one experiment and mode.
pub fn metric_values(samples: &[MetricSample], experiment_id: &str, mode: Mode, metric: Metric) -> Vec<f64> {
    samples
        .iter()
        .filter(|s| s.experiment_id == experiment_id && s.mode == mode)
        .map(|s| metric.value(s))
        .collect()
}

#[derive(Clone, Debug, thiserror::Error, PartialEq)]
#[error("{experiment_id} {mode} iteration {iteration}: {reason}")]
pub struct IterationFailure {
    pub experiment_id: String,
    pub mode: Mode,
    pub iteration: u32,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Iterations of one experiment run concurrently, each with its own
    /// broker and proxy.
    pub parallelism: usize,
    /// Replaces the client's derived initial RTT guess.
    pub client_initial_rtt_ms: Option<u64>,
    pub record_timeline: bool,
    /// Client qlog per iteration.
    pub qlog_dir: Option<PathBuf>,
    pub retry_failed: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallelism: 1, client_initial_rtt_ms: None, record_timeline: false, qlog_dir: None, retry_failed: true }
    }
}

#[derive(Clone, Debug)]
pub struct IterationOutput {
    pub sample: MetricSample,
    pub client_events: EndpointEventLog,
    /// Empty unless `record_timeline` was set.
    pub timeline: Vec<TimelineRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentResult {
    pub outputs: Vec<IterationOutput>,
    pub failures: Vec<IterationFailure>,
}

impl ExperimentResult {
    pub fn samples(&self) -> Vec<MetricSample> {
        self.outputs.iter().map(|o| o.sample.clone()).collect()
    }
}

/// Network tuning both endpoints derive for an experiment.
pub fn experiment_tuning(spec: &ExperimentSpec) -> TuningProfile {
    derive_tuning(&nbiot_profile().with_rtt(spec.rtt_ms)).expect("NB-IoT profile with any rtt is valid")
}

#[derive(Clone)]
pub struct Harness {
    identity: ServerIdentity,
    creds: Arc<CredentialStore>,
}

impl std::fmt::Debug for Harness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Harness").finish_non_exhaustive()
    }
}

struct Fail(String);

impl<E: std::fmt::Display> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail(e.to_string())
    }
}

impl Harness {
    pub fn new() -> Result<Self, crate::quic::QuicSetupError> {
        let mut creds = CredentialStore::new();
        creds.insert(USER, PASS).expect("static credentials are valid");
        Ok(Self { identity: ServerIdentity::self_signed(&["localhost"])?, creds: Arc::new(creds) })
    }

    pub async fn run_iteration(
        &self,
        spec: &ExperimentSpec,
        iteration: u32,
        opts: &RunOptions,
    ) -> Result<IterationOutput, IterationFailure> {
        let fail = |reason: String| IterationFailure {
            experiment_id: spec.id(),
            mode: spec.mode,
            iteration,
            reason,
        };
        let tuning = experiment_tuning(spec);
        // handshake and retransmission budget plus the publishing schedule
        let budget = Duration::from_secs(60)
            + tuning.expected_rtt() * 30
            + Duration::from_millis(spec.interval_ms * spec.message_count as u64);
        match tokio::time::timeout(budget, self.iteration_body(spec, iteration, opts, tuning)).await {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(Fail(reason))) => Err(fail(reason)),
            Err(_) => Err(fail(format!("did not finish within {budget:?}"))),
        }
    }

    async fn iteration_body(
        &self,
        spec: &ExperimentSpec,
        iteration: u32,
        opts: &RunOptions,
        tuning: TuningProfile,
    ) -> Result<IterationOutput, Fail> {
        let registry = Arc::new(Registry::new(RegistryConfig::default()));
        let broker_events = EventRecorder::new(Instant::now());
        let shared = BrokerShared::with_events(
            registry.clone(),
            self.creds.clone(),
            BrokerConfig { identity: self.identity.clone(), tuning: tuning.clone(), qlog_dir: None },
            broker_events.clone(),
        );
        let any = "127.0.0.1:0".parse().expect("literal address");
        let service: RunningService = match spec.mode {
            Mode::H3 => {
                registry.create_topic(&TopicName::new(TOPIC).expect("static topic"));
                crate::h3::serve_broker(any, shared.clone()).await?
            }
            Mode::MqFf | Mode::MqAd => crate::mq::serve_mq_broker(any, shared.clone()).await?,
        };
        let net = nbiot_profile().with_rtt(spec.rtt_ms);
        let impairment = ImpairmentSpec::from_profile(&net, spec.loss_pct, spec.seed(iteration));
        let proxy = start_proxy(any, service.local_addr(), &impairment, opts.record_timeline).await?;

        let mut client_tuning = tuning.clone();
        if let Some(ms) = opts.client_initial_rtt_ms {
            client_tuning.initial_rtt_guess_ms = ms;
        }
        let qlog = match &opts.qlog_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}-{}-{iteration}.qlog", spec.id(), spec.mode));
                QlogTarget::Shared(QlogSink::create(&path, &spec.id(), "client", Instant::now())?)
            }
            None => QlogTarget::Off,
        };
        let trust = ServerTrust::Roots(self.identity.cert_chain.clone());
        let events = EventRecorder::new(Instant::now());
        let payload = Bytes::from(vec![0xa5u8; spec.message_size]);
        let interval = Duration::from_millis(spec.interval_ms);
        let linger = (tuning.expected_rtt() * 2).max(Duration::from_millis(200));

        let end = match spec.mode {
            Mode::H3 => {
                let cfg = H3ClientConfig {
                    server_name: "localhost".into(),
                    authority: "broker".into(),
                    user: USER.into(),
                    pass: PASS.into(),
                    tuning: client_tuning,
                    buffer_policy: WriteBufferPolicy::Dynamic,
                    trust,
                    qlog: qlog.clone(),
                    bind: any,
                };
                let session = H3Session::connect(proxy.local_addr(), cfg, events.clone()).await?;
                let mut tasks = JoinSet::new();
                for i in 0..spec.message_count {
                    let (s, p) = (session.clone(), payload.clone());
                    tasks.spawn(async move { s.publish(TOPIC, &p, i as u64 + 1).await });
                    tokio::time::sleep(interval).await;
                }
                while let Some(r) = tasks.join_next().await {
                    r??;
                }
                session.close(linger).await;
                None
            }
            Mode::MqFf | Mode::MqAd => {
                let cfg = MqClientConfig {
                    server_name: "localhost".into(),
                    client_id: format!("bench-{iteration}"),
                    user: Some(USER.into()),
                    pass: Some(PASS.into()),
                    tuning: client_tuning,
                    trust,
                    qlog: qlog.clone(),
                    bind: any,
                    inflight_window: crate::mq::client::DEFAULT_INFLIGHT_WINDOW,
                };
                let session = MqSession::connect(proxy.local_addr(), cfg, events.clone()).await?;
                let end = if spec.mode == Mode::MqFf {
                    for i in 0..spec.message_count {
                        session.publish(TOPIC, payload.clone(), QosMode::FireAndForget, i as u64 + 1).await?;
                        tokio::time::sleep(interval).await;
                    }
                    Some(session.disconnect().await?)
                } else {
                    let mut tasks = JoinSet::new();
                    for i in 0..spec.message_count {
                        let (s, p) = (session.clone(), payload.clone());
                        tasks.spawn(async move {
                            s.publish(TOPIC, p, QosMode::AcknowledgedDelivery, i as u64 + 1).await
                        });
                        tokio::time::sleep(interval).await;
                    }
                    while let Some(r) = tasks.join_next().await {
                        r??;
                    }
                    None
                };
                session.close(linger).await;
                end
            }
        };
        if let QlogTarget::Shared(sink) = &qlog {
            sink.flush()?;
        }

        // the broker's handler finishes once the close reaches it
        let deadline = Instant::now() + tuning.expected_rtt() * 2 + Duration::from_secs(2);
        while broker_events.snapshot().first(EndpointEvent::ConnClosed).is_none() && Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(20)).await;
        }

        let log = events.snapshot();
        let start = log
            .first(EndpointEvent::ConnStart)
            .ok_or_else(|| Fail("no conn_start event".into()))?;
        let end_ms = match end {
            Some(t) => t.saturating_duration_since(events.origin()).as_secs_f64() * 1000.0,
            None => log
                .last_request_done()
                .ok_or_else(|| Fail("no request completed".into()))?,
        };
        let ttfdf_ms = log.ttfdf_ms().ok_or_else(|| Fail("no application data sent".into()))?;
        let up = proxy.counters().up.snapshot();
        let down = proxy.counters().down.snapshot();
        let sample = MetricSample {
            experiment_id: spec.id(),
            mode: spec.mode,
            iteration,
            exec_time_ms: end_ms - start,
            ttfdf_ms,
            bytes_up: up.bytes_forwarded,
            bytes_down: down.bytes_forwarded,
            datagrams_up: up.datagrams_forwarded,
            datagrams_down: down.datagrams_forwarded,
            max_streams_adverts: shared.metrics.governor_adverts.load(std::sync::atomic::Ordering::Relaxed),
        };
        let timeline = proxy.timeline();
        proxy.shutdown();
        service.shutdown();
        Ok(IterationOutput { sample, client_events: log, timeline })
    }

    /// Runs every iteration of `spec`; a failed iteration is retried once and
    /// excluded if it fails again.
    pub async fn run_experiment(&self, spec: &ExperimentSpec, opts: &RunOptions) -> ExperimentResult {
        let mut result = ExperimentResult::default();
        let mut pending: Vec<u32> = (0..spec.iterations).collect();
        pending.reverse();
        let mut running = JoinSet::new();
        let width = opts.parallelism.max(1);
        loop {
            while running.len() < width {
                let Some(iteration) = pending.pop() else { break };
                let (h, s, o) = (self.clone(), spec.clone(), opts.clone());
                running.spawn(async move {
                    let mut r = h.run_iteration(&s, iteration, &o).await;
                    if let (Err(e), true) = (&r, o.retry_failed) {
                        tracing::warn!("retrying: {e}");
                        r = h.run_iteration(&s, iteration, &o).await;
                    }
                    r
                });
            }
            match running.join_next().await {
                Some(Ok(Ok(out))) => result.outputs.push(out),
                Some(Ok(Err(f))) => {
                    tracing::warn!("excluded: {f}");
                    result.failures.push(f);
                }
                Some(Err(e)) => result.failures.push(IterationFailure {
                    experiment_id: spec.id(),
                    mode: spec.mode,
                    iteration: u32::MAX,
                    reason: format!("iteration task panicked: {e}"),
                }),
                None => break,
            }
        }
        result.outputs.sort_by_key(|o| o.sample.iteration);
        result
    }
}

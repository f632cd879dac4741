#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use nbquic::auth::CredentialStore;
use nbquic::broker::{BrokerConfig, BrokerShared, RunningService};
use nbquic::events::EventRecorder;
use nbquic::h3::{H3ClientConfig, H3Session, WriteBufferPolicy};
use nbquic::mq::{MqClientConfig, MqSession};
use nbquic::pubsub::{Registry, RegistryConfig};
use nbquic::quic::{QlogTarget, ServerIdentity, ServerTrust};
use nbquic::tuning::TuningProfile;

pub struct Broker {
    pub shared: Arc<BrokerShared>,
    pub h3: RunningService,
    pub mq: RunningService,
    pub identity: ServerIdentity,
}

pub fn creds() -> Arc<CredentialStore> {
    Arc::new(CredentialStore::parse("alice:s3cret\nbob:hunter2\n").unwrap())
}

pub async fn start_broker(tuning: TuningProfile) -> Broker {
    let identity = ServerIdentity::self_signed(&["localhost"]).unwrap();
    let shared = BrokerShared::new(
        Arc::new(Registry::new(RegistryConfig::default())),
        creds(),
        BrokerConfig { identity: identity.clone(), tuning, qlog_dir: None },
    );
    let h3 = nbquic::h3::serve_broker("127.0.0.1:0".parse().unwrap(), shared.clone())
        .await
        .unwrap();
    let mq = nbquic::mq::serve_mq_broker("127.0.0.1:0".parse().unwrap(), shared.clone())
        .await
        .unwrap();
    Broker { shared, h3, mq, identity }
}

pub fn client_config(broker: &Broker, user: &str, pass: &str, tuning: TuningProfile) -> H3ClientConfig {
    H3ClientConfig {
        server_name: "localhost".into(),
        authority: broker.h3.local_addr().to_string(),
        user: user.into(),
        pass: pass.into(),
        tuning,
        buffer_policy: WriteBufferPolicy::Dynamic,
        trust: ServerTrust::Roots(broker.identity.cert_chain.clone()),
        qlog: QlogTarget::Off,
        bind: "127.0.0.1:0".parse().unwrap(),
    }
}

pub async fn connect(broker: &Broker, user: &str, pass: &str) -> H3Session {
    let addr: SocketAddr = broker.h3.local_addr();
    H3Session::connect(addr, client_config(broker, user, pass, TuningProfile::default()), EventRecorder::new(Instant::now()))
        .await
        .unwrap()
}

pub fn mq_config(broker: &Broker, user: Option<&str>, pass: Option<&str>) -> MqClientConfig {
    MqClientConfig {
        server_name: "localhost".into(),
        client_id: "test".into(),
        user: user.map(Into::into),
        pass: pass.map(Into::into),
        tuning: TuningProfile::default(),
        trust: ServerTrust::Roots(broker.identity.cert_chain.clone()),
        qlog: QlogTarget::Off,
        bind: "127.0.0.1:0".parse().unwrap(),
        inflight_window: nbquic::mq::client::DEFAULT_INFLIGHT_WINDOW,
    }
}

pub async fn mq_connect(broker: &Broker) -> MqSession {
    MqSession::connect(broker.mq.local_addr(), mq_config(broker, Some("alice"), Some("s3cret")), EventRecorder::new(Instant::now()))
        .await
        .unwrap()
}

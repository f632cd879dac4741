//! MQTT-over-QUIC broker front end sharing the pub/sub registry.

use std::net::SocketAddr;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use bytes::BytesMut;
use quinn::{RecvStream, SendStream, VarInt};

use super::packet::{MqttPacket, QosMode, CONNACK_ACCEPTED, CONNACK_BAD_CREDENTIALS, CONNACK_NOT_AUTHORIZED};
use crate::broker::{BrokerError, BrokerShared, RunningService};
use crate::events::EndpointEvent;
use crate::governor::{ConnectionGovernor, GovernorMode, StreamDirection};
use crate::pubsub::TopicName;
use crate::quic::{self, QlogTarget, SocketTap, ALPN_MQTT};

const MAX_PACKET: usize = 1 << 20;

pub async fn serve_mq_broker(listen: SocketAddr, shared: Arc<BrokerShared>) -> Result<RunningService, BrokerError> {
    let cfg = &shared.config;
    let qlog = match &cfg.qlog_dir {
        Some(dir) => QlogTarget::PerConnection { dir: dir.clone(), prefix: "mq-broker".into() },
        None => QlogTarget::Off,
    };
    let server = quic::server_config(&cfg.identity, &cfg.tuning, ALPN_MQTT, qlog)
        .map_err(|e| BrokerError::from_setup(listen, e))?;
    let endpoint = quic::bind_endpoint(listen, Some(server), SocketTap::new())
        .map_err(|e| BrokerError::from_setup(listen, e))?;
    let local_addr = endpoint.local_addr().map_err(|e| BrokerError::BindFailure {
        addr: listen,
        reason: e.to_string(),
    })?;
    let ep = endpoint.clone();
    let task = tokio::spawn(async move {
        while let Some(incoming) = ep.accept().await {
            let shared = shared.clone();
            tokio::spawn(async move {
                match incoming.await {
                    Ok(conn) => handle_connection(conn, shared).await,
                    Err(e) => tracing::debug!("mq handshake failed: {e}"),
                }
            });
        }
    });
    tracing::info!(%local_addr, "mq broker listening");
    Ok(RunningService { endpoint, task: Some(task), local_addr })
}

async fn handle_connection(conn: quinn::Connection, shared: Arc<BrokerShared>) {
    shared.metrics.connections.fetch_add(1, Ordering::Relaxed);
    if let Some(ev) = &shared.events {
        ev.record(EndpointEvent::HandshakeDone);
    }
    let tuning = &shared.config.tuning;
    let mut governor = ConnectionGovernor::new(
        GovernorMode::Shadow,
        tuning.max_incoming_streams,
        tuning.watermark_fraction,
        false,
    );
    let mut streams = 0u64;
    let mut session: Option<tokio::task::JoinHandle<()>> = None;
    let reason = loop {
        match conn.accept_bi().await {
            Ok((mut send, recv)) => {
                streams += 1;
                shared.metrics.app_streams.fetch_add(1, Ordering::Relaxed);
                governor.on_opened(StreamDirection::Bidi);
                if session.is_some() {
                    // the protocol runs on exactly one stream
                    let _ = send.reset(VarInt::from_u32(1));
                    governor.on_closed(StreamDirection::Bidi);
                    continue;
                }
                let shared = shared.clone();
                let conn = conn.clone();
                session = Some(tokio::spawn(async move {
                    if let Err(e) = run_session(send, recv, &shared).await {
                        tracing::debug!("mq session ended: {e}");
                        conn.close(VarInt::from_u32(1), b"protocol error");
                    }
                }));
            }
            Err(e) => break e,
        }
    };
    tracing::debug!("mq connection ended: {reason}");
    if let Some(s) = session {
        let _ = s.await;
        governor.on_closed(StreamDirection::Bidi);
    }
    shared.metrics.on_connection_end(&conn, governor.advertisements(), streams);
    if let Some(ev) = &shared.events {
        ev.record(EndpointEvent::ConnClosed);
    }
}

#[derive(Debug, thiserror::Error)]
enum SessionError {
    #[error("mqtt: {0}")]
    Mqtt(#[from] super::packet::MqttError),
    #[error("read: {0}")]
    Read(#[from] quinn::ReadError),
    #[error("write: {0}")]
    Write(#[from] quinn::WriteError),
    #[error("closed: {0}")]
    Closed(#[from] quinn::ClosedStream),
    #[error("{0}")]
    Protocol(String),
}

async fn next_packet(recv: &mut RecvStream, buf: &mut BytesMut) -> Result<Option<MqttPacket>, SessionError> {
    loop {
        if let Some((p, used)) = MqttPacket::decode(buf, MAX_PACKET)? {
            let _ = buf.split_to(used);
            return Ok(Some(p));
        }
        match recv.read_chunk(64 * 1024, true).await? {
            Some(chunk) => buf.extend_from_slice(&chunk.bytes),
            None if buf.is_empty() => return Ok(None),
            None => return Err(SessionError::Protocol("stream ended mid-packet".into())),
        }
    }
}

async fn run_session(mut send: SendStream, mut recv: RecvStream, shared: &BrokerShared) -> Result<(), SessionError> {
    let mut buf = BytesMut::new();
    let connect = match next_packet(&mut recv, &mut buf).await? {
        Some(MqttPacket::Connect(c)) => c,
        Some(other) => return Err(SessionError::Protocol(format!("expected CONNECT, got {other:?}"))),
        None => return Ok(()),
    };
    let code = match (&connect.username, &connect.password) {
        (Some(u), Some(p)) => match std::str::from_utf8(p) {
            Ok(p) if shared.creds.check_credentials(u, p) => CONNACK_ACCEPTED,
            _ => CONNACK_BAD_CREDENTIALS,
        },
        _ => CONNACK_NOT_AUTHORIZED,
    };
    send.write_all(&MqttPacket::ConnAck { session_present: false, code }.to_bytes())
        .await?;
    if code != CONNACK_ACCEPTED {
        tracing::info!(client = %connect.client_id, code, "CONNECT rejected");
        send.finish()?;
        let _ = recv.stop(VarInt::from_u32(0));
        return Ok(());
    }
    let m = &shared.metrics;
    while let Some(packet) = next_packet(&mut recv, &mut buf).await? {
        match packet {
            MqttPacket::Publish(p) => {
                m.mq_publishes.fetch_add(1, Ordering::Relaxed);
                let topic = TopicName::new(&p.topic)
                    .map_err(|e| SessionError::Protocol(format!("topic {:?}: {e}", p.topic)))?;
                shared.registry.create_topic(&topic);
                let seq = shared
                    .registry
                    .publish(&topic, p.payload)
                    .map_err(|e| SessionError::Protocol(e.to_string()))?;
                if let Some(ev) = &shared.events {
                    ev.record(EndpointEvent::RequestDone(seq));
                }
                if let (QosMode::AcknowledgedDelivery, Some(id)) = (p.qos, p.packet_id) {
                    send.write_all(&MqttPacket::PubAck { packet_id: id }.to_bytes()).await?;
                    m.mq_pubacks.fetch_add(1, Ordering::Relaxed);
                }
            }
            MqttPacket::Disconnect => break,
            other => return Err(SessionError::Protocol(format!("unexpected {other:?}"))),
        }
    }
    send.finish()?;
    Ok(())
}

//! HTTP/3 broker front end.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use bytes::{Bytes, BytesMut};
use quinn::{RecvStream, SendStream, VarInt};

use super::frame::{self, Frame, FrameReader};
use super::qpack;
use super::route::{self, ResponseBody};
use crate::auth::{authorize_request, AuthDecision, ConnectionKey};
use crate::broker::{BrokerError, BrokerShared, RunningService};
use crate::events::EndpointEvent;
use crate::governor::{ConnectionGovernor, GovernorMode, StreamDirection};
use crate::quic::{self, QlogTarget, SocketTap, ALPN_H3};

pub async fn serve_broker(listen: SocketAddr, shared: Arc<BrokerShared>) -> Result<RunningService, BrokerError> {
    let cfg = &shared.config;
    let qlog = match &cfg.qlog_dir {
        Some(dir) => QlogTarget::PerConnection { dir: dir.clone(), prefix: "h3-broker".into() },
        None => QlogTarget::Off,
    };
    let server = quic::server_config(&cfg.identity, &cfg.tuning, ALPN_H3, qlog)
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
                    Err(e) => tracing::debug!("h3 handshake failed: {e}"),
                }
            });
        }
    });
    tracing::info!(%local_addr, "h3 broker listening");
    Ok(RunningService { endpoint, task: Some(task), local_addr })
}

async fn open_control_stream(conn: &quinn::Connection) -> Result<SendStream, quinn::ConnectionError> {
    let mut send = conn.open_uni().await?;
    let mut buf = BytesMut::new();
    frame::put_varint(&mut buf, frame::STREAM_CONTROL).expect("small");
    Frame::Settings(vec![
        (frame::SETTING_QPACK_MAX_TABLE_CAPACITY, 0),
        (frame::SETTING_QPACK_BLOCKED_STREAMS, 0),
    ])
    .encode(&mut buf);
    if send.write_all(&buf).await.is_err() {
        tracing::debug!("control stream write failed");
    }
    Ok(send)
}

/// Reads the peer's unidirectional streams: the control stream is consumed
/// frame by frame, anything else is discarded.
pub(crate) async fn drain_uni_streams(conn: quinn::Connection) {
    while let Ok(mut recv) = conn.accept_uni().await {
        tokio::spawn(async move {
            let Ok(Some(ty)) = frame::read_varint(&mut recv).await else { return };
            if ty != frame::STREAM_CONTROL {
                let _ = recv.stop(VarInt::from_u32(frame::H3_NO_ERROR));
                return;
            }
            let mut reader = FrameReader::new(recv);
            while let Ok(Some(f)) = reader.next().await {
                tracing::trace!(?f, "control frame");
            }
        });
    }
}

async fn handle_connection(conn: quinn::Connection, shared: Arc<BrokerShared>) {
    let key = ConnectionKey(conn.stable_id() as u64);
    shared.metrics.connections.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    if let Some(ev) = &shared.events {
        ev.record(EndpointEvent::HandshakeDone);
    }
    let tuning = &shared.config.tuning;
    let governor = Arc::new(Mutex::new(ConnectionGovernor::new(
        GovernorMode::Shadow,
        tuning.max_incoming_streams,
        tuning.watermark_fraction,
        false,
    )));
    let control = open_control_stream(&conn).await.ok();
    tokio::spawn(drain_uni_streams(conn.clone()));
    let mut streams = 0u64;
    let reason = loop {
        match conn.accept_bi().await {
            Ok((send, recv)) => {
                streams += 1;
                shared.metrics.app_streams.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                governor.lock().unwrap().on_opened(StreamDirection::Bidi);
                let shared = shared.clone();
                let governor = governor.clone();
                tokio::spawn(async move {
                    if let Err(e) = handle_request(key, send, recv, &shared).await {
                        tracing::debug!(conn = key.0, "request failed: {e}");
                    }
                    if let Some(limit) = governor.lock().unwrap().on_closed(StreamDirection::Bidi) {
                        tracing::debug!(conn = key.0, limit = limit.0, "MAX_STREAMS watermark reached");
                    }
                });
            }
            Err(e) => break e,
        }
    };
    tracing::debug!(conn = key.0, "connection ended: {reason}");
    drop(control);
    let adverts = governor.lock().unwrap().advertisements();
    shared.metrics.on_connection_end(&conn, adverts, streams);
    shared.auth_cache.evict_connection(key);
    if let Some(ev) = &shared.events {
        ev.record(EndpointEvent::ConnClosed);
    }
}

#[derive(Debug, thiserror::Error)]
enum RequestError {
    #[error("frame: {0}")]
    Frame(#[from] frame::FrameError),
    #[error("qpack: {0}")]
    Qpack(#[from] qpack::QpackError),
    #[error("write: {0}")]
    Write(#[from] quinn::WriteError),
    #[error("closed stream: {0}")]
    Closed(#[from] quinn::ClosedStream),
    #[error("malformed request")]
    Malformed,
}

struct Request {
    method: String,
    path: String,
    authorization: Option<String>,
    body: Bytes,
    body_overflow: bool,
}

async fn read_request(recv: RecvStream, max_body: usize) -> Result<Request, RequestError> {
    let mut reader = FrameReader::new(recv);
    let fields = loop {
        match reader.next().await? {
            Some(Frame::Headers(block)) => break qpack::decode_field_section(&block)?,
            Some(Frame::Unknown(_)) => continue,
            _ => return Err(RequestError::Malformed),
        }
    };
    let (mut method, mut path, mut authorization) = (None, None, None);
    for (name, value) in fields {
        match name.as_str() {
            ":method" => method = Some(value),
            ":path" => path = Some(value),
            "authorization" => authorization = Some(value),
            _ => {}
        }
    }
    let mut body = BytesMut::new();
    let mut body_overflow = false;
    while let Some(f) = reader.next().await? {
        match f {
            Frame::Data(d) if !body_overflow => {
                if body.len() + d.len() > max_body {
                    body_overflow = true;
                    let _ = reader.get_mut().stop(VarInt::from_u32(frame::H3_NO_ERROR));
                    break;
                }
                body.extend_from_slice(&d);
            }
            Frame::Headers(_) => {} // trailers
            _ => {}
        }
    }
    Ok(Request {
        method: method.ok_or(RequestError::Malformed)?,
        path: path.ok_or(RequestError::Malformed)?,
        authorization,
        body: body.freeze(),
        body_overflow,
    })
}

fn response_head(status: u16, content_length: Option<usize>, extra: &[(&str, &str)]) -> BytesMut {
    let status = status.to_string();
    let len = content_length.map(|l| l.to_string());
    let mut fields: Vec<(&str, &str)> = vec![(":status", status.as_str())];
    if let Some(len) = &len {
        fields.push(("content-length", len.as_str()));
    }
    fields.extend_from_slice(extra);
    let mut block = Vec::new();
    qpack::encode_field_section(&fields, &mut block);
    let mut out = BytesMut::new();
    Frame::Headers(block.into()).encode(&mut out);
    out
}

async fn handle_request(
    key: ConnectionKey,
    mut send: SendStream,
    recv: RecvStream,
    shared: &BrokerShared,
) -> Result<(), RequestError> {
    let req = match read_request(recv, shared.registry.config().max_payload).await {
        Ok(r) => r,
        Err(e) => {
            let _ = send.reset(VarInt::from_u32(frame::H3_MESSAGE_ERROR));
            return Err(e);
        }
    };
    let m = &shared.metrics;
    m.requests.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    if req.authorization.is_some() {
        m.auth_headers_seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    }
    let status_only = |status: u16| response_head(status, Some(0), &[]);

    let decision = authorize_request(&shared.auth_cache, &shared.creds, key, req.authorization.as_deref());
    if let AuthDecision::Reject401(reason) = decision {
        tracing::debug!(conn = key.0, ?reason, "401");
        m.count_status(401);
        send.write_all(&response_head(401, Some(0), &[("www-authenticate", "Basic realm=\"nbquic\"")])).await?;
        send.finish()?;
        return Ok(());
    }
    let route = match route::parse_route(&req.method, &req.path) {
        Ok(r) => r,
        Err(e) => {
            m.count_status(e.status());
            send.write_all(&status_only(e.status())).await?;
            send.finish()?;
            return Ok(());
        }
    };
    if req.body_overflow {
        m.count_status(413);
        send.write_all(&status_only(413)).await?;
        send.finish()?;
        return Ok(());
    }
    let resp = route::route_request(&shared.registry, &route, req.body);
    m.count_status(resp.status);
    match resp.body {
        ResponseBody::Empty => {
            send.write_all(&status_only(resp.status)).await?;
        }
        ResponseBody::Full(body) => {
            if let (route::Method::Post, Some(ev)) = (route.method, &shared.events) {
                if let Ok(seq) = std::str::from_utf8(&body).unwrap_or("").parse() {
                    ev.record(EndpointEvent::RequestDone(seq));
                }
            }
            let mut out = response_head(resp.status, Some(body.len()), &[]);
            Frame::Data(body).encode(&mut out);
            send.write_all(&out).await?;
        }
        ResponseBody::Events(mut sub) => {
            send.write_all(&response_head(200, None, &[("content-type", "application/octet-stream")]))
                .await?;
            let handle = sub.handle().clone();
            loop {
                tokio::select! {
                    ev = sub.recv() => {
                        let Some(ev) = ev else { break };
                        let mut rec = BytesMut::with_capacity(ev.payload.len() + 4);
                        route::encode_record(&ev.payload, &mut rec);
                        let mut out = BytesMut::new();
                        Frame::Data(rec.freeze()).encode(&mut out);
                        if send.write_all(&out).await.is_err() {
                            let _ = shared.registry.unsubscribe(&handle);
                            return Ok(());
                        }
                    }
                    _ = send.stopped() => {
                        let _ = shared.registry.unsubscribe(&handle);
                        return Ok(());
                    }
                }
            }
        }
    }
    send.finish()?;
    Ok(())
}

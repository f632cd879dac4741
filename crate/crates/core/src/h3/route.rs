//! Mapping of HTTP requests on `/topics/{name}` onto registry operations.

use bytes::{Buf, Bytes, BytesMut};
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use crate::pubsub::{CreateOutcome, PubSubError, Registry, Subscription, TopicName};

pub const TOPICS_PREFIX: &str = "/topics/";

const PATH_SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Head,
    Put,
    Delete,
    Post,
    Get,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "HEAD" => Self::Head,
            "PUT" => Self::Put,
            "DELETE" => Self::Delete,
            "POST" => Self::Post,
            "GET" => Self::Get,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Head => "HEAD",
            Self::Put => "PUT",
            Self::Delete => "DELETE",
            Self::Post => "POST",
            Self::Get => "GET",
        }
    }
}

/// A request target. The topic is kept raw until routing so that PUT can
/// answer 400 for names the registry rejects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestRoute {
    pub method: Method,
    pub topic: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteError {
    NotFound,
    MethodNotAllowed,
}

impl RouteError {
    pub fn status(self) -> u16 {
        match self {
            Self::NotFound => 404,
            Self::MethodNotAllowed => 405,
        }
    }
}

pub fn topic_path(topic: &str) -> String {
    format!("{TOPICS_PREFIX}{}", utf8_percent_encode(topic, PATH_SEGMENT))
}

pub fn parse_route(method: &str, path: &str) -> Result<RequestRoute, RouteError> {
    let path = path.split(['?', '#']).next().unwrap_or("");
    let raw = path.strip_prefix(TOPICS_PREFIX).ok_or(RouteError::NotFound)?;
    if raw.is_empty() || raw.contains('/') {
        return Err(RouteError::NotFound);
    }
    let topic = percent_decode_str(raw)
        .decode_utf8()
        .map_err(|_| RouteError::NotFound)?
        .into_owned();
    let method = Method::parse(method).ok_or(RouteError::MethodNotAllowed)?;
    Ok(RequestRoute { method, topic })
}

pub enum ResponseBody {
    Empty,
    Full(Bytes),
    /// Unbounded body fed from a subscription.
    Events(Subscription),
}

impl std::fmt::Debug for ResponseBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Empty => f.write_str("Empty"),
            Self::Full(b) => write!(f, "Full({b:?})"),
            Self::Events(s) => write!(f, "Events({:?})", s.handle().id()),
        }
    }
}

#[derive(Debug)]
pub struct RouteResponse {
    pub status: u16,
    pub body: ResponseBody,
}

impl RouteResponse {
    fn status(status: u16) -> Self {
        Self { status, body: ResponseBody::Empty }
    }
}

/// Executes an authorized request against the registry.
pub fn route_request(registry: &Registry, route: &RequestRoute, body: Bytes) -> RouteResponse {
    let name = match TopicName::new(&route.topic) {
        Ok(n) => n,
        Err(_) if route.method == Method::Put => return RouteResponse::status(400),
        Err(_) => return RouteResponse::status(404),
    };
    match route.method {
        Method::Head => RouteResponse::status(if registry.topic_exists(&name) { 200 } else { 404 }),
        Method::Put => match registry.create_topic(&name) {
            CreateOutcome::Created => RouteResponse::status(201),
            CreateOutcome::AlreadyExists => RouteResponse::status(200),
        },
        Method::Delete => match registry.delete_topic(&name) {
            Ok(()) => RouteResponse::status(200),
            Err(_) => RouteResponse::status(404),
        },
        Method::Post => match registry.publish(&name, body) {
            Ok(seq) => RouteResponse {
                status: 200,
                body: ResponseBody::Full(Bytes::from(seq.to_string())),
            },
            Err(PubSubError::PayloadTooLarge { .. }) => RouteResponse::status(413),
            Err(_) => RouteResponse::status(404),
        },
        Method::Get => match registry.subscribe(&name) {
            Ok(sub) => RouteResponse {
                status: 200,
                body: ResponseBody::Events(sub),
            },
            Err(_) => RouteResponse::status(404),
        },
    }
}

/// Event record on a subscription stream: 4-byte big-endian length, payload.
pub fn encode_record(payload: &[u8], out: &mut BytesMut) {
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
}

/// Splits complete records off the front of `buf`.
pub fn decode_records(buf: &mut BytesMut, max_len: usize) -> Result<Vec<Bytes>, RecordError> {
    let mut out = Vec::new();
    while buf.len() >= 4 {
        let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
        if len > max_len {
            return Err(RecordError::TooLarge(len));
        }
        if buf.len() < 4 + len {
            break;
        }
        buf.advance(4);
        out.push(buf.split_to(len).freeze());
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("record of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("stream ended inside a record")]
    Truncated,
}

//! HTTP/3 frame and stream-type coding.

use bytes::{Buf, BufMut, Bytes, BytesMut};
use tokio::io::{AsyncRead, AsyncReadExt};

pub const FRAME_DATA: u64 = 0x0;
pub const FRAME_HEADERS: u64 = 0x1;
pub const FRAME_SETTINGS: u64 = 0x4;
pub const FRAME_GOAWAY: u64 = 0x7;

pub const STREAM_CONTROL: u64 = 0x00;
pub const STREAM_PUSH: u64 = 0x01;

pub const SETTING_QPACK_MAX_TABLE_CAPACITY: u64 = 0x01;
pub const SETTING_MAX_FIELD_SECTION_SIZE: u64 = 0x06;
pub const SETTING_QPACK_BLOCKED_STREAMS: u64 = 0x07;

pub const H3_NO_ERROR: u32 = 0x100;
pub const H3_GENERAL_PROTOCOL_ERROR: u32 = 0x101;
pub const H3_INTERNAL_ERROR: u32 = 0x102;
pub const H3_FRAME_UNEXPECTED: u32 = 0x105;
pub const H3_FRAME_ERROR: u32 = 0x106;
pub const H3_REQUEST_CANCELLED: u32 = 0x10c;
pub const H3_MESSAGE_ERROR: u32 = 0x10e;

/// Upper bound accepted for a single frame payload.
pub const MAX_FRAME_PAYLOAD: u64 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("varint out of range")]
    VarintRange,
    #[error("frame truncated")]
    Truncated,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u64),
    #[error("malformed {0} frame")]
    Malformed(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Data(Bytes),
    Headers(Bytes),
    Settings(Vec<(u64, u64)>),
    GoAway(u64),
    /// Reserved or unknown type; payload discarded.
    Unknown(u64),
}

pub fn varint_len(v: u64) -> usize {
    match v {
        0..=63 => 1,
        64..=16383 => 2,
        16384..=1_073_741_823 => 4,
        _ => 8,
    }
}

pub fn put_varint(buf: &mut impl BufMut, v: u64) -> Result<(), FrameError> {
    match varint_len(v) {
        1 => buf.put_u8(v as u8),
        2 => buf.put_u16(0x4000 | v as u16),
        4 => buf.put_u32(0x8000_0000 | v as u32),
        _ if v < (1 << 62) => buf.put_u64(0xc000_0000_0000_0000 | v),
        _ => return Err(FrameError::VarintRange),
    }
    Ok(())
}

/// Decodes a varint from the front of `buf` without consuming it.
pub fn peek_varint(buf: &[u8]) -> Option<(u64, usize)> {
    let first = *buf.first()?;
    let len = 1usize << (first >> 6);
    let bytes = buf.get(..len)?;
    let mut v = (first & 0x3f) as u64;
    for &b in &bytes[1..] {
        v = (v << 8) | b as u64;
    }
    Some((v, len))
}

pub async fn read_varint<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<u64>, FrameError> {
    let mut first = [0u8; 1];
    if r.read(&mut first).await? == 0 {
        return Ok(None);
    }
    let len = 1usize << (first[0] >> 6);
    let mut rest = [0u8; 7];
    r.read_exact(&mut rest[..len - 1]).await.map_err(|_| FrameError::Truncated)?;
    let mut v = (first[0] & 0x3f) as u64;
    for &b in &rest[..len - 1] {
        v = (v << 8) | b as u64;
    }
    Ok(Some(v))
}

fn frame_header(ty: u64, len: usize, out: &mut BytesMut) {
    put_varint(out, ty).expect("frame type in range");
    put_varint(out, len as u64).expect("frame length in range");
}

impl Frame {
    pub fn encode(&self, out: &mut BytesMut) {
        match self {
            Frame::Data(p) => {
                frame_header(FRAME_DATA, p.len(), out);
                out.extend_from_slice(p);
            }
            Frame::Headers(p) => {
                frame_header(FRAME_HEADERS, p.len(), out);
                out.extend_from_slice(p);
            }
            Frame::Settings(s) => {
                let mut body = BytesMut::new();
                for &(k, v) in s {
                    put_varint(&mut body, k).expect("setting id in range");
                    put_varint(&mut body, v).expect("setting value in range");
                }
                frame_header(FRAME_SETTINGS, body.len(), out);
                out.extend_from_slice(&body);
            }
            Frame::GoAway(id) => {
                frame_header(FRAME_GOAWAY, varint_len(*id), out);
                put_varint(out, *id).expect("stream id in range");
            }
            Frame::Unknown(ty) => frame_header(*ty, 0, out),
        }
    }

    pub fn to_bytes(&self) -> Bytes {
        let mut out = BytesMut::new();
        self.encode(&mut out);
        out.freeze()
    }

    fn from_parts(ty: u64, payload: Bytes) -> Result<Self, FrameError> {
        Ok(match ty {
            FRAME_DATA => Frame::Data(payload),
            FRAME_HEADERS => Frame::Headers(payload),
            FRAME_SETTINGS => {
                let mut s = Vec::new();
                let mut p = &payload[..];
                while !p.is_empty() {
                    let (k, a) = peek_varint(p).ok_or(FrameError::Malformed("SETTINGS"))?;
                    p = &p[a..];
                    let (v, b) = peek_varint(p).ok_or(FrameError::Malformed("SETTINGS"))?;
                    p = &p[b..];
                    s.push((k, v));
                }
                Frame::Settings(s)
            }
            FRAME_GOAWAY => {
                let (id, n) = peek_varint(&payload).ok_or(FrameError::Malformed("GOAWAY"))?;
                if n != payload.len() {
                    return Err(FrameError::Malformed("GOAWAY"));
                }
                Frame::GoAway(id)
            }
            other => Frame::Unknown(other),
        })
    }

    /// Parses one frame from the front of `buf`, or `None` if incomplete.
    pub fn parse(buf: &mut BytesMut) -> Result<Option<Self>, FrameError> {
        let Some((ty, a)) = peek_varint(buf) else { return Ok(None) };
        let Some((len, b)) = peek_varint(&buf[a..]) else { return Ok(None) };
        if len > MAX_FRAME_PAYLOAD {
            return Err(FrameError::TooLarge(len));
        }
        if buf.len() < a + b + len as usize {
            return Ok(None);
        }
        buf.advance(a + b);
        let payload = buf.split_to(len as usize).freeze();
        Self::from_parts(ty, payload).map(Some)
    }
}

/// Incremental frame reader over any byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: BytesMut,
}

impl<R: AsyncRead + Unpin> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: BytesMut::with_capacity(4096),
        }
    }

    pub fn with_buffered(inner: R, buf: BytesMut) -> Self {
        Self { inner, buf }
    }

    pub fn get_mut(&mut self) -> &mut R {
        &mut self.inner
    }

    /// Next frame; `None` on clean end of stream between frames.
    pub async fn next(&mut self) -> Result<Option<Frame>, FrameError> {
        loop {
            if let Some(f) = Frame::parse(&mut self.buf)? {
                return Ok(Some(f));
            }
            if self.buf.capacity() - self.buf.len() < 1024 {
                self.buf.reserve(4096);
            }
            if self.inner.read_buf(&mut self.buf).await? == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(FrameError::Truncated)
                };
            }
        }
    }
}

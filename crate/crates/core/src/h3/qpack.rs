//! QPACK field-section coding restricted to the static table.
//!
//! The encoder never references the dynamic table and the decoder rejects
//! any field line that does, which matches advertising a table capacity of 0.

use super::huffman;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QpackError {
    #[error("truncated field section")]
    Truncated,
    #[error("integer overflow")]
    IntegerOverflow,
    #[error("dynamic table reference")]
    DynamicReference,
    #[error("static index {0} out of range")]
    BadStaticIndex(u64),
    #[error("huffman: {0}")]
    Huffman(#[from] huffman::HuffmanError),
    #[error("field is not valid utf-8")]
    NotUtf8,
}

pub type FieldLine = (String, String);

#[rustfmt::skip]
pub const STATIC_TABLE: [(&str, &str); 99] = [
    (":authority", ""),
    (":path", "/"),
    ("age", "0"),
    ("content-disposition", ""),
    ("content-length", "0"),
    ("cookie", ""),
    ("date", ""),
    ("etag", ""),
    ("if-modified-since", ""),
    ("if-none-match", ""),
    ("last-modified", ""),
    ("link", ""),
    ("location", ""),
    ("referer", ""),
    ("set-cookie", ""),
    (":method", "CONNECT"),
    (":method", "DELETE"),
    (":method", "GET"),
    (":method", "HEAD"),
    (":method", "OPTIONS"),
    (":method", "POST"),
    (":method", "PUT"),
    (":scheme", "http"),
    (":scheme", "https"),
    (":status", "103"),
    (":status", "200"),
    (":status", "304"),
    (":status", "404"),
    (":status", "503"),
    ("accept", "*/*"),
    ("accept", "application/dns-message"),
    ("accept-encoding", "gzip, deflate, br"),
    ("accept-ranges", "bytes"),
    ("access-control-allow-headers", "cache-control"),
    ("access-control-allow-headers", "content-type"),
    ("access-control-allow-origin", "*"),
    ("cache-control", "max-age=0"),
    ("cache-control", "max-age=2592000"),
    ("cache-control", "max-age=604800"),
    ("cache-control", "no-cache"),
    ("cache-control", "no-store"),
    ("cache-control", "public, max-age=31536000"),
    ("content-encoding", "br"),
    ("content-encoding", "gzip"),
    ("content-type", "application/dns-message"),
    ("content-type", "application/javascript"),
    ("content-type", "application/json"),
    ("content-type", "application/x-www-form-urlencoded"),
    ("content-type", "image/gif"),
    ("content-type", "image/jpeg"),
    ("content-type", "image/png"),
    ("content-type", "text/css"),
    ("content-type", "text/html; charset=utf-8"),
    ("content-type", "text/plain"),
    ("content-type", "text/plain;charset=utf-8"),
    ("range", "bytes=0-"),
    ("strict-transport-security", "max-age=31536000"),
    ("strict-transport-security", "max-age=31536000; includesubdomains"),
    ("strict-transport-security", "max-age=31536000; includesubdomains; preload"),
    ("vary", "accept-encoding"),
    ("vary", "origin"),
    ("x-content-type-options", "nosniff"),
    ("x-xss-protection", "1; mode=block"),
    (":status", "100"),
    (":status", "204"),
    (":status", "206"),
    (":status", "302"),
    (":status", "400"),
    (":status", "403"),
    (":status", "421"),
    (":status", "425"),
    (":status", "500"),
    ("accept-language", ""),
    ("access-control-allow-credentials", "FALSE"),
    ("access-control-allow-credentials", "TRUE"),
    ("access-control-allow-headers", "*"),
    ("access-control-allow-methods", "get"),
    ("access-control-allow-methods", "get, post, options"),
    ("access-control-allow-methods", "options"),
    ("access-control-expose-headers", "content-length"),
    ("access-control-request-headers", "content-type"),
    ("access-control-request-method", "get"),
    ("access-control-request-method", "post"),
    ("alt-svc", "clear"),
    ("authorization", ""),
    ("content-security-policy", "script-src 'none'; object-src 'none'; base-uri 'none'"),
    ("early-data", "1"),
    ("expect-ct", ""),
    ("forwarded", ""),
    ("if-range", ""),
    ("origin", ""),
    ("purpose", "prefetch"),
    ("server", ""),
    ("timing-allow-origin", "*"),
    ("upgrade-insecure-requests", "1"),
    ("user-agent", ""),
    ("x-forwarded-for", ""),
    ("x-frame-options", "deny"),
    ("x-frame-options", "sameorigin"),
];

/// Appends a prefixed integer. `flags` holds the bits above the prefix.
pub fn encode_int(value: u64, prefix_bits: u8, flags: u8, out: &mut Vec<u8>) {
    let max = (1u64 << prefix_bits) - 1;
    if value < max {
        out.push(flags | value as u8);
        return;
    }
    out.push(flags | max as u8);
    let mut rest = value - max;
    while rest >= 128 {
        out.push((rest % 128) as u8 | 0x80);
        rest /= 128;
    }
    out.push(rest as u8);
}

/// Reads a prefixed integer, returning it and the bytes consumed.
pub fn decode_int(buf: &[u8], prefix_bits: u8) -> Result<(u64, usize), QpackError> {
    let first = *buf.first().ok_or(QpackError::Truncated)?;
    let max = (1u64 << prefix_bits) - 1;
    let mut value = first as u64 & max;
    if value < max {
        return Ok((value, 1));
    }
    let mut shift = 0u32;
    for (i, &b) in buf[1..].iter().enumerate() {
        if shift > 56 {
            return Err(QpackError::IntegerOverflow);
        }
        value = value
            .checked_add(((b & 0x7f) as u64) << shift)
            .ok_or(QpackError::IntegerOverflow)?;
        if b & 0x80 == 0 {
            return Ok((value, i + 2));
        }
        shift += 7;
    }
    Err(QpackError::Truncated)
}

/// String literal with its H flag placed just above a `prefix_bits` length.
fn encode_str(s: &[u8], prefix_bits: u8, flags: u8, out: &mut Vec<u8>) {
    let hlen = huffman::encoded_len(s);
    if hlen < s.len() {
        encode_int(hlen as u64, prefix_bits, flags | (1 << prefix_bits), out);
        huffman::encode(s, out);
    } else {
        encode_int(s.len() as u64, prefix_bits, flags, out);
        out.extend_from_slice(s);
    }
}

fn decode_str(buf: &[u8], prefix_bits: u8) -> Result<(String, usize), QpackError> {
    let first = *buf.first().ok_or(QpackError::Truncated)?;
    let huff = first & (1 << prefix_bits) != 0;
    let (len, n) = decode_int(buf, prefix_bits)?;
    let end = n.checked_add(usize::try_from(len).map_err(|_| QpackError::IntegerOverflow)?)
        .ok_or(QpackError::IntegerOverflow)?;
    let raw = buf.get(n..end).ok_or(QpackError::Truncated)?;
    let bytes = if huff { huffman::decode(raw)? } else { raw.to_vec() };
    Ok((String::from_utf8(bytes).map_err(|_| QpackError::NotUtf8)?, end))
}

fn static_lookup(name: &str, value: &str) -> (Option<usize>, Option<usize>) {
    let mut name_idx = None;
    for (i, (n, v)) in STATIC_TABLE.iter().enumerate() {
        if *n == name {
            if *v == value {
                return (Some(i), Some(i));
            }
            name_idx.get_or_insert(i);
        }
    }
    (None, name_idx)
}

pub fn encode_field_section(fields: &[(&str, &str)], out: &mut Vec<u8>) {
    // Required Insert Count 0, Delta Base 0
    out.extend_from_slice(&[0, 0]);
    for &(name, value) in fields {
        match static_lookup(name, value) {
            (Some(i), _) => encode_int(i as u64, 6, 0b1100_0000, out),
            (None, Some(i)) => {
                encode_int(i as u64, 4, 0b0101_0000, out);
                encode_str(value.as_bytes(), 7, 0, out);
            }
            (None, None) => {
                encode_str(name.as_bytes(), 3, 0b0010_0000, out);
                encode_str(value.as_bytes(), 7, 0, out);
            }
        }
    }
}

pub fn decode_field_section(buf: &[u8]) -> Result<Vec<FieldLine>, QpackError> {
    let (ric, n) = decode_int(buf, 8)?;
    if ric != 0 {
        return Err(QpackError::DynamicReference);
    }
    let (_base, m) = decode_int(buf.get(n..).ok_or(QpackError::Truncated)?, 7)?;
    let mut pos = n + m;
    let mut fields = Vec::new();
    let lookup = |i: u64| {
        STATIC_TABLE
            .get(i as usize)
            .ok_or(QpackError::BadStaticIndex(i))
    };
    while pos < buf.len() {
        let rest = &buf[pos..];
        let b = rest[0];
        if b & 0x80 != 0 {
            if b & 0x40 == 0 {
                return Err(QpackError::DynamicReference);
            }
            let (i, n) = decode_int(rest, 6)?;
            let (name, value) = lookup(i)?;
            fields.push((name.to_string(), value.to_string()));
            pos += n;
        } else if b & 0x40 != 0 {
            if b & 0x10 == 0 {
                return Err(QpackError::DynamicReference);
            }
            let (i, n) = decode_int(rest, 4)?;
            let (name, _) = lookup(i)?;
            let (value, m) = decode_str(&rest[n..], 7)?;
            fields.push((name.to_string(), value));
            pos += n + m;
        } else if b & 0x20 != 0 {
            let (name, n) = decode_str(rest, 3)?;
            let (value, m) = decode_str(&rest[n..], 7)?;
            fields.push((name, value));
            pos += n + m;
        } else {
            return Err(QpackError::DynamicReference);
        }
    }
    Ok(fields)
}

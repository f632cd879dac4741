//! MQTT 3.1.1 control packets (the subset used by the baseline).

use bytes::{BufMut, Bytes, BytesMut};

pub const PROTOCOL_NAME: &str = "MQTT";
pub const PROTOCOL_LEVEL: u8 = 4;
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

pub const CONNACK_ACCEPTED: u8 = 0;
pub const CONNACK_BAD_CREDENTIALS: u8 = 4;
pub const CONNACK_NOT_AUTHORIZED: u8 = 5;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MqttError {
    #[error("malformed packet: {0}")]
    MalformedPacket(&'static str),
    #[error("unsupported packet type {0}")]
    UnsupportedType(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QosMode {
    FireAndForget,
    AcknowledgedDelivery,
}

impl QosMode {
    pub fn level(self) -> u8 {
        match self {
            Self::FireAndForget => 0,
            Self::AcknowledgedDelivery => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub username: Option<String>,
    pub password: Option<Bytes>,
    pub keep_alive: u16,
    pub clean_session: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub qos: QosMode,
    /// Present exactly when `qos` is acknowledged delivery; never zero.
    pub packet_id: Option<u16>,
    pub dup: bool,
    pub retain: bool,
    pub payload: Bytes,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MqttPacket {
    Connect(Connect),
    ConnAck { session_present: bool, code: u8 },
    Publish(Publish),
    PubAck { packet_id: u16 },
    Disconnect,
}

/// Minimal-length remaining-length encoding.
pub fn encode_remaining_length(mut len: usize, out: &mut BytesMut) {
    assert!(len <= MAX_REMAINING_LENGTH, "remaining length out of range");
    loop {
        let mut byte = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            byte |= 0x80;
        }
        out.put_u8(byte);
        if len == 0 {
            break;
        }
    }
}

/// Decodes a remaining length: `Ok(None)` if more bytes are needed.
pub fn decode_remaining_length(buf: &[u8]) -> Result<Option<(usize, usize)>, MqttError> {
    let mut value = 0usize;
    for i in 0..4 {
        let Some(&b) = buf.get(i) else { return Ok(None) };
        value |= ((b & 0x7f) as usize) << (7 * i);
        if b & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
    }
    Err(MqttError::MalformedPacket("remaining length longer than 4 bytes"))
}

fn put_str(out: &mut BytesMut, s: &[u8]) {
    out.put_u16(s.len() as u16);
    out.put_slice(s);
}

impl MqttPacket {
    pub fn encode(&self, out: &mut BytesMut) {
        let mut body = BytesMut::new();
        let first = match self {
            MqttPacket::Connect(c) => {
                put_str(&mut body, PROTOCOL_NAME.as_bytes());
                body.put_u8(PROTOCOL_LEVEL);
                let mut flags = 0u8;
                if c.username.is_some() {
                    flags |= 0x80;
                }
                if c.password.is_some() {
                    flags |= 0x40;
                }
                if c.clean_session {
                    flags |= 0x02;
                }
                body.put_u8(flags);
                body.put_u16(c.keep_alive);
                put_str(&mut body, c.client_id.as_bytes());
                if let Some(u) = &c.username {
                    put_str(&mut body, u.as_bytes());
                }
                if let Some(p) = &c.password {
                    put_str(&mut body, p);
                }
                0x10
            }
            MqttPacket::ConnAck { session_present, code } => {
                body.put_u8(*session_present as u8);
                body.put_u8(*code);
                0x20
            }
            MqttPacket::Publish(p) => {
                put_str(&mut body, p.topic.as_bytes());
                if let Some(id) = p.packet_id {
                    body.put_u16(id);
                }
                body.put_slice(&p.payload);
                0x30 | (p.dup as u8) << 3 | p.qos.level() << 1 | p.retain as u8
            }
            MqttPacket::PubAck { packet_id } => {
                body.put_u16(*packet_id);
                0x40
            }
            MqttPacket::Disconnect => 0xe0,
        };
        out.put_u8(first);
        encode_remaining_length(body.len(), out);
        out.put_slice(&body);
    }

    pub fn to_bytes(&self) -> Bytes {
        let mut out = BytesMut::new();
        self.encode(&mut out);
        out.freeze()
    }

    /// Parses one packet from the front of `buf`. Returns the packet and the
    /// bytes consumed, or `None` if the packet is incomplete.
    pub fn decode(buf: &[u8], max_len: usize) -> Result<Option<(Self, usize)>, MqttError> {
        let Some(&first) = buf.first() else { return Ok(None) };
        let ty = first >> 4;
        if !matches!(ty, 1..=4 | 14) {
            return Err(MqttError::UnsupportedType(ty));
        }
        let Some((len, n)) = decode_remaining_length(&buf[1..])? else { return Ok(None) };
        if len > max_len {
            return Err(MqttError::MalformedPacket("packet exceeds size limit"));
        }
        let total = 1 + n + len;
        let Some(body) = buf.get(1 + n..total) else { return Ok(None) };
        let flags = first & 0x0f;
        let packet = match ty {
            1 => decode_connect(flags, body)?,
            2 => {
                if flags != 0 || body.len() != 2 || body[0] & 0xfe != 0 {
                    return Err(MqttError::MalformedPacket("CONNACK"));
                }
                MqttPacket::ConnAck { session_present: body[0] == 1, code: body[1] }
            }
            3 => decode_publish(flags, body)?,
            4 => {
                if flags != 0 || body.len() != 2 {
                    return Err(MqttError::MalformedPacket("PUBACK"));
                }
                MqttPacket::PubAck { packet_id: u16::from_be_bytes([body[0], body[1]]) }
            }
            _ => {
                if flags != 0 || !body.is_empty() {
                    return Err(MqttError::MalformedPacket("DISCONNECT"));
                }
                MqttPacket::Disconnect
            }
        };
        Ok(Some((packet, total)))
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, MqttError> {
        let (&b, rest) = self.0.split_first().ok_or(MqttError::MalformedPacket("truncated"))?;
        self.0 = rest;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, MqttError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self) -> Result<&'a [u8], MqttError> {
        let len = self.u16()? as usize;
        if self.0.len() < len {
            return Err(MqttError::MalformedPacket("truncated string"));
        }
        let (s, rest) = self.0.split_at(len);
        self.0 = rest;
        Ok(s)
    }

    fn string(&mut self) -> Result<String, MqttError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| MqttError::MalformedPacket("string is not utf-8"))
    }
}

fn decode_connect(flags: u8, body: &[u8]) -> Result<MqttPacket, MqttError> {
    if flags != 0 {
        return Err(MqttError::MalformedPacket("CONNECT flags"));
    }
    let mut c = Cursor(body);
    if c.bytes()? != PROTOCOL_NAME.as_bytes() {
        return Err(MqttError::MalformedPacket("protocol name"));
    }
    if c.u8()? != PROTOCOL_LEVEL {
        return Err(MqttError::MalformedPacket("protocol level"));
    }
    let cf = c.u8()?;
    // reserved bit set, will flags (unsupported) or password without user
    if cf & 0x01 != 0 || cf & 0x3c != 0 || (cf & 0x40 != 0 && cf & 0x80 == 0) {
        return Err(MqttError::MalformedPacket("connect flags"));
    }
    let keep_alive = c.u16()?;
    let client_id = c.string()?;
    let username = if cf & 0x80 != 0 { Some(c.string()?) } else { None };
    let password = if cf & 0x40 != 0 { Some(Bytes::copy_from_slice(c.bytes()?)) } else { None };
    if !c.0.is_empty() {
        return Err(MqttError::MalformedPacket("trailing CONNECT bytes"));
    }
    Ok(MqttPacket::Connect(Connect {
        client_id,
        username,
        password,
        keep_alive,
        clean_session: cf & 0x02 != 0,
    }))
}

fn decode_publish(flags: u8, body: &[u8]) -> Result<MqttPacket, MqttError> {
    let qos = match (flags >> 1) & 0x03 {
        0 => QosMode::FireAndForget,
        1 => QosMode::AcknowledgedDelivery,
        2 => return Err(MqttError::MalformedPacket("QoS 2 not supported")),
        _ => return Err(MqttError::MalformedPacket("QoS 3")),
    };
    let dup = flags & 0x08 != 0;
    if dup && qos == QosMode::FireAndForget {
        return Err(MqttError::MalformedPacket("DUP on QoS 0"));
    }
    let mut c = Cursor(body);
    let topic = c.string()?;
    if topic.is_empty() {
        return Err(MqttError::MalformedPacket("empty topic"));
    }
    let packet_id = match qos {
        QosMode::FireAndForget => None,
        QosMode::AcknowledgedDelivery => match c.u16()? {
            0 => return Err(MqttError::MalformedPacket("zero packet identifier")),
            id => Some(id),
        },
    };
    Ok(MqttPacket::Publish(Publish {
        topic,
        qos,
        packet_id,
        dup,
        retain: flags & 0x01 != 0,
        payload: Bytes::copy_from_slice(c.0),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Remaining-length encoding written straight from the protocol's
    /// pseudo-code, used as an oracle.
    fn oracle_varint(mut x: usize) -> Vec<u8> {
        let mut out = vec![];
        loop {
            let mut encoded = x % 128;
            x /= 128;
            if x > 0 {
                encoded |= 128;
            }
            out.push(encoded as u8);
            if x == 0 {
                return out;
            }
        }
    }

    fn rl(len: usize) -> Vec<u8> {
        let mut out = BytesMut::new();
        encode_remaining_length(len, &mut out);
        out.to_vec()
    }

    #[test]
    fn remaining_length_examples() {
        assert_eq!(rl(321), [0xc1, 0x02]);
        assert_eq!(rl(0), [0x00]);
        assert_eq!(rl(127), [0x7f]);
        assert_eq!(rl(128), [0x80, 0x01]);
        assert_eq!(rl(MAX_REMAINING_LENGTH), [0xff, 0xff, 0xff, 0x7f]);
        assert_eq!(
            decode_remaining_length(&[0xff, 0xff, 0xff, 0xff, 0x01]),
            Err(MqttError::MalformedPacket("remaining length longer than 4 bytes"))
        );
        assert_eq!(decode_remaining_length(&[0x80]), Ok(None));
    }

    #[test]
    fn publish_qos1_round_trip() {
        let p = MqttPacket::Publish(Publish {
            topic: "t".into(),
            qos: QosMode::AcknowledgedDelivery,
            packet_id: Some(7),
            dup: false,
            retain: false,
            payload: Bytes::from(vec![0xab; 32]),
        });
        let wire = p.to_bytes();
        assert_eq!(wire[0], 0x32);
        assert_eq!(MqttPacket::decode(&wire, 1 << 20).unwrap(), Some((p, wire.len())));
    }

    #[test]
    fn connect_wire_format() {
        let p = MqttPacket::Connect(Connect {
            client_id: "c".into(),
            username: Some("u".into()),
            password: Some(Bytes::from_static(b"p")),
            keep_alive: 60,
            clean_session: true,
        });
        let wire = p.to_bytes();
        assert_eq!(
            &wire[..],
            &[0x10, 19, 0, 4, b'M', b'Q', b'T', b'T', 4, 0xc2, 0, 60, 0, 1, b'c', 0, 1, b'u', 0, 1, b'p'][..]
        );
        assert_eq!(MqttPacket::decode(&wire, 1024).unwrap().unwrap().0, p);
    }

    #[test]
    fn fixed_packets() {
        assert_eq!(&MqttPacket::Disconnect.to_bytes()[..], &[0xe0, 0x00]);
        assert_eq!(&MqttPacket::PubAck { packet_id: 0x1234 }.to_bytes()[..], &[0x40, 2, 0x12, 0x34]);
        assert_eq!(
            &MqttPacket::ConnAck { session_present: false, code: 4 }.to_bytes()[..],
            &[0x20, 2, 0, 4]
        );
    }

    #[test]
    fn rejects_invalid() {
        assert_eq!(MqttPacket::decode(&[0x80, 0], 10), Err(MqttError::UnsupportedType(8)));
        assert_eq!(MqttPacket::decode(&[0x00, 0], 10), Err(MqttError::UnsupportedType(0)));
        assert!(MqttPacket::decode(&[0x36, 3, 0, 1, b't'], 10).is_err());
        assert!(MqttPacket::decode(&[0x32, 5, 0, 1, b't', 0, 0], 10).is_err());
        assert!(MqttPacket::decode(&[0x38, 3, 0, 1, b't'], 10).is_err());
        assert!(MqttPacket::decode(&[0xe1, 0], 10).is_err());
        assert_eq!(MqttPacket::decode(&[0x30, 5, 0, 1], 10), Ok(None));
    }

    fn arb_packet() -> impl Strategy<Value = MqttPacket> {
        let publish = (
            "[a-z/]{1,30}",
            any::<bool>(),
            1u16..,
            any::<bool>(),
            any::<bool>(),
            proptest::collection::vec(any::<u8>(), 0..300),
        )
            .prop_map(|(topic, qos1, id, dup, retain, payload)| {
                MqttPacket::Publish(Publish {
                    topic,
                    qos: if qos1 { QosMode::AcknowledgedDelivery } else { QosMode::FireAndForget },
                    packet_id: qos1.then_some(id),
                    dup: dup && qos1,
                    retain,
                    payload: payload.into(),
                })
            });
        let connect = (
            "[a-z0-9]{0,23}",
            proptest::option::of("[a-z]{1,10}"),
            proptest::collection::vec(any::<u8>(), 0..20),
            any::<u16>(),
            any::<bool>(),
        )
            .prop_map(|(client_id, username, pw, keep_alive, clean_session)| {
                let password = username.as_ref().map(|_| Bytes::from(pw));
                MqttPacket::Connect(Connect { client_id, username, password, keep_alive, clean_session })
            });
        prop_oneof![
            publish,
            connect,
            (any::<bool>(), 0u8..6).prop_map(|(s, code)| MqttPacket::ConnAck { session_present: s, code }),
            any::<u16>().prop_map(|packet_id| MqttPacket::PubAck { packet_id }),
            Just(MqttPacket::Disconnect),
        ]
    }

    proptest! {
        #[test]
        fn remaining_length_matches_oracle(len in 0usize..=MAX_REMAINING_LENGTH) {
            let enc = rl(len);
            prop_assert_eq!(&enc, &oracle_varint(len));
            prop_assert_eq!(decode_remaining_length(&enc).unwrap(), Some((len, enc.len())));
        }

        #[test]
        fn round_trip(p in arb_packet()) {
            let wire = p.to_bytes();
            prop_assert_eq!(MqttPacket::decode(&wire, 1 << 20).unwrap(), Some((p, wire.len())));
            // every strict prefix is incomplete, never an error
            for cut in 0..wire.len() {
                prop_assert_eq!(MqttPacket::decode(&wire[..cut], 1 << 20), Ok(None));
            }
        }

        #[test]
        fn decoder_total(data in proptest::collection::vec(any::<u8>(), 0..128)) {
            if let Ok(Some((_, used))) = MqttPacket::decode(&data, 1 << 20) {
                prop_assert!(used <= data.len());
            }
        }
    }
}

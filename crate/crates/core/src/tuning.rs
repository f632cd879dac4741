//! QUIC tuning profile and network profiles.
//!
//! A [`TuningProfile`] is derived from the expected network conditions: ACK
//! delay, the initial RTT guess and the idle/handshake timers all scale with
//! the path RTT so high-latency links are not mistaken for dead ones.

use std::fmt;
use std::path::Path;
use std::time::Duration;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TuningError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("unknown profile {0:?} (expected nbiot2 or loopback)")]
    UnknownProfile(String),
    #[error("config line {line}: {reason}")]
    BadConfig { line: usize, reason: String },
    #[error("reading config: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkProfile {
    pub name: String,
    pub downlink_kbit: f64,
    pub uplink_kbit: f64,
    pub rtt_ms: u64,
    pub mtu: usize,
}

impl NetworkProfile {
    pub fn validate(&self) -> Result<(), TuningError> {
        if !(self.downlink_kbit > 0.0 && self.uplink_kbit > 0.0) {
            return Err(TuningError::InvalidProfile("rates must be positive".into()));
        }
        if self.mtu < 1200 {
            return Err(TuningError::InvalidProfile(format!(
                "mtu {} is below the QUIC minimum of 1200",
                self.mtu
            )));
        }
        Ok(())
    }

    pub fn with_rtt(mut self, rtt_ms: u64) -> Self {
        self.rtt_ms = rtt_ms;
        self
    }

    pub fn by_name(name: &str) -> Result<Self, TuningError> {
        match name {
            "nbiot2" | "nbiot" => Ok(nbiot_profile()),
            "loopback" => Ok(loopback_profile()),
            other => Err(TuningError::UnknownProfile(other.to_owned())),
        }
    }
}

/// NB-IoT Cat NB2: 127 kbit/s down (broker side), 159 kbit/s up (publisher
/// side), 2 s RTT split evenly between the directions, 1500 byte MTU.
pub fn nbiot_profile() -> NetworkProfile {
    NetworkProfile {
        name: "nbiot2".into(),
        downlink_kbit: 127.0,
        uplink_kbit: 159.0,
        rtt_ms: 2000,
        mtu: 1500,
    }
}

pub fn loopback_profile() -> NetworkProfile {
    NetworkProfile {
        name: "loopback".into(),
        downlink_kbit: 1_000_000.0,
        uplink_kbit: 1_000_000.0,
        rtt_ms: 0,
        mtu: 1500,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CipherSuite {
    ChaCha20Poly1305Sha256,
    Aes128GcmSha256,
    Aes256GcmSha384,
}

impl CipherSuite {
    pub fn iana_name(self) -> &'static str {
        match self {
            Self::ChaCha20Poly1305Sha256 => "TLS_CHACHA20_POLY1305_SHA256",
            Self::Aes128GcmSha256 => "TLS_AES_128_GCM_SHA256",
            Self::Aes256GcmSha384 => "TLS_AES_256_GCM_SHA384",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Self::ChaCha20Poly1305Sha256,
            Self::Aes128GcmSha256,
            Self::Aes256GcmSha384,
        ]
        .into_iter()
        .find(|c| c.iana_name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for CipherSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.iana_name())
    }
}

pub const MIN_INITIAL_RTT_MS: u64 = 100;
pub const MAX_INITIAL_RTT_MS: u64 = 10_000;

/// Every transport knob the endpoints tune. All durations are milliseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningProfile {
    pub expected_rtt_ms: u64,
    pub initial_rtt_guess_ms: u64,
    pub max_ack_delay_ms: u64,
    pub handshake_timeout_ms: u64,
    pub handshake_idle_timeout_ms: u64,
    pub min_remote_idle_timeout_ms: u64,
    pub max_incoming_streams: u64,
    pub watermark_fraction: f64,
    pub cipher_suite: CipherSuite,
    pub qpack_dynamic_table: bool,
    pub zero_rtt_enabled: bool,
    pub pmtud_enabled: bool,
}

impl Default for TuningProfile {
    fn default() -> Self {
        derive_tuning(&loopback_profile()).expect("loopback profile is valid")
    }
}

impl TuningProfile {
    pub fn by_name(name: &str) -> Result<Self, TuningError> {
        derive_tuning(&NetworkProfile::by_name(name)?)
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        let bad = |m: String| Err(TuningError::InvalidProfile(m));
        if !(MIN_INITIAL_RTT_MS..=MAX_INITIAL_RTT_MS).contains(&self.initial_rtt_guess_ms) {
            return bad(format!(
                "initial_rtt_guess {} ms outside [{MIN_INITIAL_RTT_MS}, {MAX_INITIAL_RTT_MS}]",
                self.initial_rtt_guess_ms
            ));
        }
        if self.zero_rtt_enabled {
            // connection-level auth would be replayable
            return bad("0-RTT must stay disabled while connection-level auth is on".into());
        }
        if self.qpack_dynamic_table {
            return bad("QPACK dynamic table is not supported".into());
        }
        if self.handshake_idle_timeout_ms < 2 * self.expected_rtt_ms {
            return bad("handshake_idle_timeout must be at least 2x expected_rtt".into());
        }
        if self.handshake_timeout_ms < self.handshake_idle_timeout_ms {
            return bad("handshake_timeout must be >= handshake_idle_timeout".into());
        }
        if !(self.watermark_fraction > 0.0 && self.watermark_fraction <= 1.0) {
            return bad("watermark_fraction must be in (0, 1]".into());
        }
        if self.max_incoming_streams == 0 {
            return bad("max_incoming_streams must be positive".into());
        }
        Ok(())
    }

    pub fn expected_rtt(&self) -> Duration {
        Duration::from_millis(self.expected_rtt_ms)
    }

    pub fn initial_rtt(&self) -> Duration {
        Duration::from_millis(self.initial_rtt_guess_ms)
    }

    pub fn max_ack_delay(&self) -> Duration {
        Duration::from_millis(self.max_ack_delay_ms)
    }

    pub fn handshake_timeout(&self) -> Duration {
        Duration::from_millis(self.handshake_timeout_ms)
    }

    pub fn handshake_idle_timeout(&self) -> Duration {
        Duration::from_millis(self.handshake_idle_timeout_ms)
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_millis(self.min_remote_idle_timeout_ms)
    }

    /// Applies `key = value` overrides, one per line; `#` starts a comment.
    /// Keys are the field names of this struct without unit suffixes.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), TuningError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| TuningError::BadConfig {
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || -> Result<u64, TuningError> {
                value
                    .parse::<u64>()
                    .map_err(|_| err(format!("{key}: expected an integer, got {value:?}")))
            };
            let boolean = || -> Result<bool, TuningError> {
                value
                    .parse::<bool>()
                    .map_err(|_| err(format!("{key}: expected true/false, got {value:?}")))
            };
            match key {
                "expected_rtt" => self.expected_rtt_ms = int()?,
                "initial_rtt_guess" => self.initial_rtt_guess_ms = int()?,
                "max_ack_delay" => self.max_ack_delay_ms = int()?,
                "handshake_timeout" => self.handshake_timeout_ms = int()?,
                "handshake_idle_timeout" => self.handshake_idle_timeout_ms = int()?,
                "min_remote_idle_timeout" => self.min_remote_idle_timeout_ms = int()?,
                "max_incoming_streams" => self.max_incoming_streams = int()?,
                "watermark_fraction" => {
                    self.watermark_fraction = value
                        .parse()
                        .map_err(|_| err(format!("watermark_fraction: bad number {value:?}")))?
                }
                "cipher_suite" => {
                    self.cipher_suite = CipherSuite::parse(value)
                        .ok_or_else(|| err(format!("unknown cipher suite {value:?}")))?
                }
                "qpack_dynamic_table" => self.qpack_dynamic_table = boolean()?,
                "zero_rtt_enabled" => self.zero_rtt_enabled = boolean()?,
                "pmtud_enabled" => self.pmtud_enabled = boolean()?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        self.validate()
    }

    pub fn load_overrides(&mut self, path: &Path) -> Result<(), TuningError> {
        let text = std::fs::read_to_string(path).map_err(|e| TuningError::Io(e.to_string()))?;
        self.apply_overrides(&text)
    }
}

/// Derives the transport tuning for a network. Pure and deterministic.
pub fn derive_tuning(net: &NetworkProfile) -> Result<TuningProfile, TuningError> {
    net.validate()?;
    let rtt = net.rtt_ms;
    let profile = TuningProfile {
        expected_rtt_ms: rtt,
        max_ack_delay_ms: rtt.div_ceil(2),
        initial_rtt_guess_ms: (rtt * 3 / 4).clamp(MIN_INITIAL_RTT_MS, MAX_INITIAL_RTT_MS),
        handshake_idle_timeout_ms: (4 * rtt).max(10_000),
        handshake_timeout_ms: (10 * rtt).max(20_000),
        min_remote_idle_timeout_ms: (15 * rtt).max(30_000),
        max_incoming_streams: 100,
        watermark_fraction: 0.5,
        cipher_suite: CipherSuite::ChaCha20Poly1305Sha256,
        qpack_dynamic_table: false,
        zero_rtt_enabled: false,
        pmtud_enabled: true,
    };
    profile.validate()?;
    Ok(profile)
}

/// Time the client waits before re-sending its first Initial packet.
pub fn initial_retransmit_deadline(t: &TuningProfile) -> Duration {
    2 * t.initial_rtt()
}

//! Per-direction link model: uniform loss, MTU limit, rate serialization,
//! fixed delay with uniform jitter, FIFO delivery.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tuning::NetworkProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Client towards server.
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which directions the loss rate applies to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossDirection {
    #[default]
    Up,
    Down,
    Both,
}

impl LossDirection {
    pub fn applies(self, dir: Direction) -> bool {
        matches!(
            (self, dir),
            (Self::Both, _) | (Self::Up, Direction::Up) | (Self::Down, Direction::Down)
        )
    }
}

impl FromStr for LossDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "up" => Ok(Self::Up),
            "down" => Ok(Self::Down),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown loss direction {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ImpairmentError {
    #[error("invalid impairment: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpairmentSpec {
    /// One-way delay, applied in each direction.
    pub delay_ms: f64,
    /// Half-width of the uniform jitter.
    pub jitter_ms: f64,
    pub loss_pct: f64,
    pub loss_direction: LossDirection,
    /// `None` means unthrottled.
    pub rate_kbit_up: Option<f64>,
    pub rate_kbit_down: Option<f64>,
    pub seed: u64,
    pub mtu: usize,
}

impl Default for ImpairmentSpec {
    fn default() -> Self {
        Self {
            delay_ms: 0.0,
            jitter_ms: 0.0,
            loss_pct: 0.0,
            loss_direction: LossDirection::Up,
            rate_kbit_up: None,
            rate_kbit_down: None,
            seed: 0,
            mtu: 1500,
        }
    }
}

impl ImpairmentSpec {
    /// RTT split evenly across the two directions, rates and MTU from the
    /// profile.
    pub fn from_profile(p: &NetworkProfile, loss_pct: f64, seed: u64) -> Self {
        Self {
            delay_ms: p.rtt_ms as f64 / 2.0,
            loss_pct,
            rate_kbit_up: Some(p.uplink_kbit),
            rate_kbit_down: Some(p.downlink_kbit),
            seed,
            mtu: p.mtu,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ImpairmentError> {
        let bad = |m: &str| Err(ImpairmentError::Invalid(m.into()));
        if !(self.delay_ms >= 0.0 && self.delay_ms.is_finite()) {
            return bad("delay must be a non-negative number");
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms <= self.delay_ms) {
            return bad("jitter must be within [0, delay]");
        }
        if !(0.0..=100.0).contains(&self.loss_pct) {
            return bad("loss_pct must be within [0, 100]");
        }
        for r in [self.rate_kbit_up, self.rate_kbit_down].into_iter().flatten() {
            if !(r > 0.0 && r.is_finite()) {
                return bad("rate must be positive");
            }
        }
        if self.mtu == 0 {
            return bad("mtu must be positive");
        }
        Ok(())
    }

    pub fn rate(&self, dir: Direction) -> Option<f64> {
        match dir {
            Direction::Up => self.rate_kbit_up,
            Direction::Down => self.rate_kbit_down,
        }
    }

    pub fn shaper(&self, dir: Direction) -> LinkShaper {
        LinkShaper::new(self, dir)
    }
}

/// Time to clock `size` bytes onto a link of `rate_kbit` kbit/s.
pub fn serialization_delay(size: usize, rate_kbit: f64) -> Duration {
    assert!(rate_kbit > 0.0, "rate must be positive");
    Duration::from_secs_f64(size as f64 * 8.0 / (rate_kbit * 1000.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Loss,
    Mtu,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    /// Deliver at this many ms on the shaper's clock.
    Deliver { at_ms: f64 },
    Drop(DropReason),
}

#[derive(Clone, Debug)]
pub struct LinkShaper {
    rng: ChaCha8Rng,
    loss_p: f64,
    delay_ms: f64,
    jitter_ms: f64,
    rate_kbit: Option<f64>,
    mtu: usize,
    busy_until_ms: f64,
    last_delivery_ms: f64,
}

impl LinkShaper {
    pub fn new(spec: &ImpairmentSpec, dir: Direction) -> Self {
        let stream = match dir {
            Direction::Up => 0x7570,
            Direction::Down => 0x646f_776e,
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ stream),
            loss_p: if spec.loss_direction.applies(dir) { spec.loss_pct / 100.0 } else { 0.0 },
            delay_ms: spec.delay_ms,
            jitter_ms: spec.jitter_ms,
            rate_kbit: spec.rate(dir),
            mtu: spec.mtu,
            busy_until_ms: f64::NEG_INFINITY,
            last_delivery_ms: f64::NEG_INFINITY,
        }
    }

    /// Decides the fate of a datagram of `size` bytes arriving at `now_ms`.
    /// Calls must be made in arrival order with non-decreasing `now_ms`.
    pub fn forward(&mut self, size: usize, now_ms: f64) -> Verdict {
        let roll: f64 = self.rng.random();
        if roll < self.loss_p {
            return Verdict::Drop(DropReason::Loss);
        }
        if size > self.mtu {
            return Verdict::Drop(DropReason::Mtu);
        }
        let departed = match self.rate_kbit {
            Some(rate) => {
                let start = now_ms.max(self.busy_until_ms);
                self.busy_until_ms = start + serialization_delay(size, rate).as_secs_f64() * 1000.0;
                self.busy_until_ms
            }
            None => now_ms,
        };
        let jitter = if self.jitter_ms > 0.0 {
            self.rng.random_range(-self.jitter_ms..=self.jitter_ms)
        } else {
            0.0
        };
        let at_ms = (departed + self.delay_ms + jitter).max(self.last_delivery_ms).max(now_ms);
        self.last_delivery_ms = at_ms;
        Verdict::Deliver { at_ms }
    }
}

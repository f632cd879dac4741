//! High-watermark MAX_STREAMS advertisement policy.
//!
//! Instead of granting one new stream credit per closed stream, the server
//! waits until a fixed fraction of the originally negotiated limit has been
//! closed and then replaces all of those credits in a single advertisement.

/// A MAX_STREAMS value (cumulative stream count).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NewLimit(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamDirection {
    Bidi,
    Uni,
}

/// Whether the budget drives the transport or only mirrors it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GovernorMode {
    Enforcing,
    /// The stack issues its own MAX_STREAMS; the governor counts what it
    /// would have sent.
    Shadow,
}

/// Number of closes that triggers an advertisement: `ceil(fraction * M)`,
/// never less than one.
pub fn watermark_threshold(negotiated_max: u64, fraction: f64) -> u64 {
    // the epsilon keeps products like 0.1 * 30 from rounding up to 4
    let raw = (fraction * negotiated_max as f64 - 1e-9).ceil();
    (raw.max(1.0) as u64).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamBudget {
    negotiated_max: u64,
    watermark_fraction: f64,
    threshold: u64,
    closed_total: u64,
    closed_since_advert: u64,
    opened_total: u64,
    advertised_limit: u64,
    advertisements: u64,
}

impl StreamBudget {
    /// # Panics
    /// If `negotiated_max` is zero or `fraction` is outside `(0, 1]`.
    pub fn new(negotiated_max: u64, fraction: f64) -> Self {
        assert!(negotiated_max >= 1, "negotiated stream limit must be at least 1");
        assert!(
            fraction > 0.0 && fraction <= 1.0,
            "watermark fraction must be in (0, 1]"
        );
        Self {
            negotiated_max,
            watermark_fraction: fraction,
            threshold: watermark_threshold(negotiated_max, fraction),
            closed_total: 0,
            closed_since_advert: 0,
            opened_total: 0,
            advertised_limit: negotiated_max,
            advertisements: 0,
        }
    }

    pub fn negotiated_max(&self) -> u64 {
        self.negotiated_max
    }

    pub fn watermark_fraction(&self) -> f64 {
        self.watermark_fraction
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn closed_total(&self) -> u64 {
        self.closed_total
    }

    pub fn closed_since_advert(&self) -> u64 {
        self.closed_since_advert
    }

    pub fn opened_total(&self) -> u64 {
        self.opened_total
    }

    pub fn advertised_limit(&self) -> u64 {
        self.advertised_limit
    }

    /// Advertisements emitted beyond the initial transport parameter.
    pub fn advertisements(&self) -> u64 {
        self.advertisements
    }

    pub fn on_stream_opened(&mut self) {
        self.opened_total += 1;
    }

    pub fn on_stream_closed(&mut self) -> Option<NewLimit> {
        self.closed_total += 1;
        self.closed_since_advert += 1;
        if self.closed_since_advert < self.threshold {
            return None;
        }
        self.advertised_limit += self.closed_since_advert;
        self.closed_since_advert = 0;
        self.advertisements += 1;
        Some(NewLimit(self.advertised_limit))
    }

    /// Streams the peer may still open under the current advertisement.
    pub fn peer_available_streams(&self) -> u64 {
        self.advertised_limit.saturating_sub(self.opened_total)
    }
}

/// Advertisements avoided relative to announcing a new limit on every close.
pub fn frames_saved(closed_total: u64, negotiated_max: u64, fraction: f64) -> u64 {
    let threshold = watermark_threshold(negotiated_max.max(1), fraction);
    closed_total - closed_total / threshold
}

/// Per-connection pair of budgets. Only peer-initiated bidirectional streams
/// are governed unless `govern_uni` is set.
#[derive(Clone, Debug)]
pub struct ConnectionGovernor {
    pub mode: GovernorMode,
    pub bidi: StreamBudget,
    pub uni: Option<StreamBudget>,
}

impl ConnectionGovernor {
    pub fn new(mode: GovernorMode, negotiated_max: u64, fraction: f64, govern_uni: bool) -> Self {
        Self {
            mode,
            bidi: StreamBudget::new(negotiated_max, fraction),
            uni: govern_uni.then(|| StreamBudget::new(negotiated_max, fraction)),
        }
    }

    fn budget(&mut self, dir: StreamDirection) -> Option<&mut StreamBudget> {
        match dir {
            StreamDirection::Bidi => Some(&mut self.bidi),
            StreamDirection::Uni => self.uni.as_mut(),
        }
    }

    pub fn on_opened(&mut self, dir: StreamDirection) {
        if let Some(b) = self.budget(dir) {
            b.on_stream_opened();
        }
    }

    pub fn on_closed(&mut self, dir: StreamDirection) -> Option<NewLimit> {
        self.budget(dir).and_then(StreamBudget::on_stream_closed)
    }

    pub fn advertisements(&self) -> u64 {
        self.bidi.advertisements() + self.uni.as_ref().map_or(0, StreamBudget::advertisements)
    }
}

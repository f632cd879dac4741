//! qlog congestion analysis: cwnd/in-flight series and send/receive stalls.
//! Reads JSON-SEQ (0.3/0.4) and contained JSON (`traces[].events`).

use serde_json::Value;

pub const DEFAULT_STALL_THRESHOLD_MS: f64 = 1000.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QlogError {
    #[error("unparseable trace: {0}")]
    UnparseableTrace(String),
    #[error("unsupported qlog schema: {0}")]
    UnsupportedSchema(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CwndSample {
    pub t_ms: f64,
    pub cwnd: u64,
    pub bytes_in_flight: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketEventKind {
    Sent,
    Received,
    Lost,
}

impl PacketEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sent => "packet_sent",
            Self::Received => "packet_received",
            Self::Lost => "packet_lost",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketEvent {
    pub t_ms: f64,
    pub kind: PacketEventKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stall {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl Stall {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CongestionSeries {
    pub samples: Vec<CwndSample>,
    pub events: Vec<PacketEvent>,
    pub stalls: Vec<Stall>,
}

impl CongestionSeries {
    pub fn total_stall_ms(&self) -> f64 {
        self.stalls.iter().map(Stall::duration_ms).fold(0.0, |a, b| a + b)
    }

    /// `t_ms,cwnd,bytes_in_flight` rows followed by a blank line and the
    /// stall list.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ms,cwnd,bytes_in_flight\n");
        for s in &self.samples {
            out.push_str(&format!("{:.3},{},{}\n", s.t_ms, s.cwnd, s.bytes_in_flight));
        }
        out.push_str("\nstall_start_ms,stall_end_ms,duration_ms\n");
        for s in &self.stalls {
            out.push_str(&format!("{:.3},{:.3},{:.3}\n", s.start_ms, s.end_ms, s.duration_ms()));
        }
        out
    }
}

fn check_version(v: &Value) -> Result<(), QlogError> {
    match v.get("qlog_version").and_then(Value::as_str) {
        None => Err(QlogError::UnsupportedSchema("missing qlog_version".into())),
        Some(ver) if ver.starts_with("0.3") || ver.starts_with("0.4") => Ok(()),
        Some(ver) => Err(QlogError::UnsupportedSchema(format!("qlog_version {ver}"))),
    }
}

fn parse_events(text: &str) -> Result<Vec<Value>, QlogError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('\u{1e}') {
        let mut records = trimmed
            .split('\u{1e}')
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .map(|r| serde_json::from_str::<Value>(r).map_err(|e| QlogError::UnparseableTrace(e.to_string())));
        let header = records
            .next()
            .ok_or_else(|| QlogError::UnparseableTrace("empty JSON-SEQ stream".into()))??;
        check_version(&header)?;
        return records.collect();
    }
    let root: Value = serde_json::from_str(trimmed).map_err(|e| QlogError::UnparseableTrace(e.to_string()))?;
    check_version(&root)?;
    let traces = root
        .get("traces")
        .and_then(Value::as_array)
        .ok_or_else(|| QlogError::UnsupportedSchema("no traces array".into()))?;
    let mut out = Vec::new();
    for t in traces {
        if let Some(ev) = t.get("events").and_then(Value::as_array) {
            out.extend(ev.iter().cloned());
        }
    }
    Ok(out)
}

fn event_name(ev: &Value) -> Option<String> {
    if let Some(n) = ev.get("name").and_then(Value::as_str) {
        return Some(n.to_string());
    }
    let cat = ev.get("category")?.as_str()?;
    let ty = ev.get("event")?.as_str()?;
    Some(format!("{cat}:{ty}"))
}

pub fn analyze_qlog(text: &str, stall_threshold_ms: f64) -> Result<CongestionSeries, QlogError> {
    let mut series = CongestionSeries::default();
    let (mut cwnd, mut in_flight) = (0u64, 0u64);
    for ev in parse_events(text)? {
        let Some(name) = event_name(&ev) else { continue };
        let t_ms = ev
            .get("time")
            .and_then(Value::as_f64)
            .ok_or_else(|| QlogError::UnparseableTrace(format!("event {name} without numeric time")))?;
        let data = ev.get("data").cloned().unwrap_or(Value::Null);
        match name.as_str() {
            "recovery:metrics_updated" => {
                if let Some(c) = data.get("congestion_window").and_then(Value::as_u64) {
                    cwnd = c;
                }
                if let Some(b) = data.get("bytes_in_flight").and_then(Value::as_u64) {
                    in_flight = b;
                }
                series.samples.push(CwndSample { t_ms, cwnd, bytes_in_flight: in_flight });
            }
            "transport:packet_sent" => series.events.push(PacketEvent { t_ms, kind: PacketEventKind::Sent }),
            "transport:packet_received" => series.events.push(PacketEvent { t_ms, kind: PacketEventKind::Received }),
            "recovery:packet_lost" => series.events.push(PacketEvent { t_ms, kind: PacketEventKind::Lost }),
            _ => {}
        }
    }
    series.samples.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
    series.events.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
    series.stalls = find_stalls(&series.samples, &series.events, stall_threshold_ms);
    Ok(series)
}

/// Maximal intervals with no send/receive activity during which
/// bytes_in_flight stays positive.
pub fn find_stalls(samples: &[CwndSample], events: &[PacketEvent], threshold_ms: f64) -> Vec<Stall> {
    let activity: Vec<f64> = events
        .iter()
        .filter(|e| e.kind != PacketEventKind::Lost)
        .map(|e| e.t_ms)
        .collect();
    let in_flight_at = |t: f64| -> u64 {
        let i = samples.partition_point(|s| s.t_ms <= t);
        if i == 0 { 0 } else { samples[i - 1].bytes_in_flight }
    };
    let mut stalls = Vec::new();
    for w in activity.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < threshold_ms {
            continue;
        }
        // split the quiet gap at in-flight changes
        let mut start = (in_flight_at(a) > 0).then_some(a);
        let lo = samples.partition_point(|s| s.t_ms <= a);
        let hi = samples.partition_point(|s| s.t_ms < b);
        for s in &samples[lo..hi] {
            match (start, s.bytes_in_flight > 0) {
                (None, true) => start = Some(s.t_ms),
                (Some(st), false) => {
                    if s.t_ms - st >= threshold_ms {
                        stalls.push(Stall { start_ms: st, end_ms: s.t_ms });
                    }
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(st) = start {
            if b - st >= threshold_ms {
                stalls.push(Stall { start_ms: st, end_ms: b });
            }
        }
    }
    stalls
}

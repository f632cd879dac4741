//! Endpoint instrumentation: timestamps of connection milestones.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EndpointEvent {
    ConnStart,
    FirstInitialSent,
    HandshakeDone,
    FirstAppDataSent,
    RequestDone(u64),
    ConnClosed,
}

impl fmt::Display for EndpointEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ConnStart => f.write_str("conn_start"),
            Self::FirstInitialSent => f.write_str("first_initial_sent"),
            Self::HandshakeDone => f.write_str("handshake_done"),
            Self::FirstAppDataSent => f.write_str("first_app_data_sent"),
            Self::RequestDone(seq) => write!(f, "request_done:{seq}"),
            Self::ConnClosed => f.write_str("conn_closed"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub event: EndpointEvent,
    pub t_ms: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EventLogError {
    #[error("event log not monotonic at record {index} ({event})")]
    InvariantViolation { index: usize, event: String },
}

/// Ordered event log, times in ms relative to the log's origin.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EndpointEventLog {
    records: Vec<EventRecord>,
}

impl EndpointEventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<EventRecord>) -> Self {
        Self { records }
    }

    pub fn push(&mut self, event: EndpointEvent, t_ms: f64) {
        self.records.push(EventRecord { event, t_ms });
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn first(&self, event: EndpointEvent) -> Option<f64> {
        self.records.iter().find(|r| r.event == event).map(|r| r.t_ms)
    }

    pub fn last_request_done(&self) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| matches!(r.event, EndpointEvent::RequestDone(_)))
            .map(|r| r.t_ms)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
    }

    /// First Initial to first application data.
    pub fn ttfdf_ms(&self) -> Option<f64> {
        Some(self.first(EndpointEvent::FirstAppDataSent)? - self.first(EndpointEvent::FirstInitialSent)?)
    }

    pub fn check_monotonic(&self) -> Result<(), EventLogError> {
        for (i, w) in self.records.windows(2).enumerate() {
            if w[1].t_ms < w[0].t_ms {
                return Err(EventLogError::InvariantViolation {
                    index: i + 1,
                    event: w[1].event.to_string(),
                });
            }
        }
        let app_data = self
            .records
            .iter()
            .filter(|r| r.event == EndpointEvent::FirstAppDataSent)
            .count();
        if app_data > 1 {
            let index = self
                .records
                .iter()
                .rposition(|r| r.event == EndpointEvent::FirstAppDataSent)
                .unwrap_or(0);
            return Err(EventLogError::InvariantViolation {
                index,
                event: "first_app_data_sent".into(),
            });
        }
        Ok(())
    }

    /// Sorted copy; events recorded from different tasks can land slightly
    /// out of order.
    pub fn sorted(&self) -> Self {
        let mut records = self.records.clone();
        records.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
        Self { records }
    }

    pub fn to_csv(&self) -> Result<String, EventLogError> {
        self.check_monotonic()?;
        let mut out = String::from("event,t_ms\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.3}\n", r.event, r.t_ms));
        }
        Ok(out)
    }
}

/// Shared recorder used by endpoint tasks.
#[derive(Clone, Debug)]
pub struct EventRecorder {
    origin: Instant,
    log: Arc<Mutex<EndpointEventLog>>,
}

impl EventRecorder {
    pub fn new(origin: Instant) -> Self {
        Self {
            origin,
            log: Arc::default(),
        }
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }

    pub fn record_at(&self, event: EndpointEvent, at: Instant) {
        let t = at.saturating_duration_since(self.origin).as_secs_f64() * 1000.0;
        self.log.lock().unwrap().push(event, t);
    }

    pub fn record(&self, event: EndpointEvent) {
        self.record_at(event, Instant::now());
    }

    /// Records `event` unless it is already present.
    pub fn record_once_at(&self, event: EndpointEvent, at: Instant) -> bool {
        let t = at.saturating_duration_since(self.origin).as_secs_f64() * 1000.0;
        let mut log = self.log.lock().unwrap();
        if log.first(event).is_some() {
            return false;
        }
        log.push(event, t);
        true
    }

    pub fn snapshot(&self) -> EndpointEventLog {
        self.log.lock().unwrap().sorted()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ttfdf_from_log() {
        let mut log = EndpointEventLog::new();
        log.push(EndpointEvent::ConnStart, 0.0);
        log.push(EndpointEvent::FirstInitialSent, 0.0);
        log.push(EndpointEvent::FirstAppDataSent, 2100.0);
        assert_eq!(log.ttfdf_ms(), Some(2100.0));
        let csv = log.to_csv().unwrap();
        assert_eq!(
            csv,
            "event,t_ms\nconn_start,0.000\nfirst_initial_sent,0.000\nfirst_app_data_sent,2100.000\n"
        );
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(EndpointEventLog::new().to_csv().unwrap(), "event,t_ms\n");
    }

    #[test]
    fn non_monotonic_refused() {
        let mut log = EndpointEventLog::new();
        log.push(EndpointEvent::ConnStart, 10.0);
        log.push(EndpointEvent::FirstInitialSent, 5.0);
        assert!(matches!(log.to_csv(), Err(EventLogError::InvariantViolation { index: 1, .. })));
    }

    #[test]
    fn duplicate_first_app_data_refused() {
        let mut log = EndpointEventLog::new();
        log.push(EndpointEvent::FirstAppDataSent, 1.0);
        log.push(EndpointEvent::FirstAppDataSent, 2.0);
        assert!(log.check_monotonic().is_err());
    }

    #[test]
    fn recorder_once() {
        let origin = Instant::now();
        let r = EventRecorder::new(origin);
        assert!(r.record_once_at(EndpointEvent::FirstAppDataSent, origin));
        assert!(!r.record_once_at(EndpointEvent::FirstAppDataSent, origin));
        r.record_at(EndpointEvent::RequestDone(3), origin);
        assert_eq!(r.snapshot().records().len(), 2);
        assert_eq!(r.snapshot().last_request_done(), Some(0.0));
    }
}

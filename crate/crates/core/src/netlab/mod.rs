//! Datagram impairment proxy.

mod proxy;
mod shaper;

pub use proxy::{
    start_proxy, CounterSnapshot, DirectionCounters, LinkCounters, RunningProxy, TimelineRecord, COUNTERS_CSV_HEADER,
};
pub use shaper::{
    serialization_delay, Direction, DropReason, ImpairmentError, ImpairmentSpec, LinkShaper, LossDirection, Verdict,
};

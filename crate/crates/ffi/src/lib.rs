//! C ABI over the broker core. Handles are opaque pointers owned by the
//! caller and released with the matching `*_free`. Every function returns an
//! `NbqStatus`; results come back through out-parameters.

#![allow(clippy::missing_safety_doc)]

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use nbquic::bench::stats::{summarize, StatsError};
use nbquic::governor::{frames_saved, watermark_threshold, StreamBudget};
use nbquic::netlab::{DropReason, ImpairmentSpec, LinkShaper, LossDirection, Verdict};
use nbquic::pubsub::{CreateOutcome, Event, PubSubError, Registry, RegistryConfig, Subscription, TopicName};
use nbquic::tuning::{derive_tuning, NetworkProfile};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NbqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidTopic = 3,
    NotFound = 4,
    PayloadTooLarge = 5,
    Empty = 6,
    Closed = 7,
    BufferTooSmall = 8,
    InsufficientData = 9,
    Panic = 255,
}

pub struct NbqRegistry {
    inner: Arc<Registry>,
}

pub struct NbqSubscription {
    registry: Arc<Registry>,
    sub: Subscription,
    pending: Option<Event>,
}

pub struct NbqStreamBudget {
    inner: StreamBudget,
}

pub struct NbqShaper {
    inner: LinkShaper,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct NbqTuning {
    pub expected_rtt_ms: u64,
    pub initial_rtt_guess_ms: u64,
    pub max_ack_delay_ms: u64,
    pub handshake_timeout_ms: u64,
    pub handshake_idle_timeout_ms: u64,
    pub min_remote_idle_timeout_ms: u64,
    pub max_incoming_streams: u64,
    pub watermark_fraction: f64,
    pub pmtud_enabled: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct NbqSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

/// Loss direction: 0 up, 1 down, 2 both. Rates of 0 mean unlimited.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct NbqImpairment {
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_pct: f64,
    pub loss_direction: u32,
    pub rate_kbit_up: f64,
    pub rate_kbit_down: f64,
    pub mtu: usize,
    pub seed: u64,
}

/// Shaper verdicts.
pub const NBQ_DELIVER: u32 = 0;
pub const NBQ_DROP_LOSS: u32 = 1;
pub const NBQ_DROP_MTU: u32 = 2;

fn guard(f: impl FnOnce() -> NbqStatus) -> NbqStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(NbqStatus::Panic)
}

impl From<PubSubError> for NbqStatus {
    fn from(e: PubSubError) -> Self {
        match e {
            PubSubError::InvalidName(_) => Self::InvalidTopic,
            PubSubError::NotFound | PubSubError::Unknown => Self::NotFound,
            PubSubError::PayloadTooLarge { .. } => Self::PayloadTooLarge,
        }
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return NbqStatus::from(e),
        }
    };
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(r) => r,
            None => return NbqStatus::NullPointer,
        }
    };
}

unsafe fn topic(name: *const c_char) -> Result<TopicName, NbqStatus> {
    if name.is_null() {
        return Err(NbqStatus::NullPointer);
    }
    let s = CStr::from_ptr(name).to_str().map_err(|_| NbqStatus::InvalidTopic)?;
    TopicName::new(s).map_err(NbqStatus::from)
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], NbqStatus> {
    match (data.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(NbqStatus::NullPointer),
        (false, n) => Ok(std::slice::from_raw_parts(data, n)),
    }
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn nbq_status_str(status: NbqStatus) -> *const c_char {
    let s: &'static CStr = match status {
        NbqStatus::Ok => c"ok",
        NbqStatus::NullPointer => c"null pointer",
        NbqStatus::InvalidArgument => c"invalid argument",
        NbqStatus::InvalidTopic => c"invalid topic name",
        NbqStatus::NotFound => c"not found",
        NbqStatus::PayloadTooLarge => c"payload too large",
        NbqStatus::Empty => c"no event queued",
        NbqStatus::Closed => c"subscription closed",
        NbqStatus::BufferTooSmall => c"buffer too small",
        NbqStatus::InsufficientData => c"insufficient data",
        NbqStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

#[no_mangle]
pub extern "C" fn nbq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Zero for any size argument selects the default.
#[no_mangle]
pub unsafe extern "C" fn nbq_registry_new(
    retain_depth: usize,
    max_payload: usize,
    subscriber_queue: usize,
    out: *mut *mut NbqRegistry,
) -> NbqStatus {
    guard(|| {
        let out = deref!(out);
        let d = RegistryConfig::default();
        let cfg = RegistryConfig {
            retain_depth: if retain_depth == 0 { d.retain_depth } else { retain_depth },
            max_payload: if max_payload == 0 { d.max_payload } else { max_payload },
            subscriber_queue: if subscriber_queue == 0 { d.subscriber_queue } else { subscriber_queue },
        };
        *out = Box::into_raw(Box::new(NbqRegistry { inner: Arc::new(Registry::new(cfg)) }));
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_registry_free(reg: *mut NbqRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// `created` receives 1 for a new topic, 0 if it already existed.
#[no_mangle]
pub unsafe extern "C" fn nbq_registry_create_topic(
    reg: *const NbqRegistry,
    name: *const c_char,
    created: *mut bool,
) -> NbqStatus {
    guard(|| {
        let Some(reg) = reg.as_ref() else { return NbqStatus::NullPointer };
        let t = tri!(topic(name));
        let outcome = reg.inner.create_topic(&t);
        if let Some(c) = created.as_mut() {
            *c = outcome == CreateOutcome::Created;
        }
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_registry_delete_topic(reg: *const NbqRegistry, name: *const c_char) -> NbqStatus {
    guard(|| {
        let Some(reg) = reg.as_ref() else { return NbqStatus::NullPointer };
        let t = tri!(topic(name));
        tri!(reg.inner.delete_topic(&t));
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_registry_publish(
    reg: *const NbqRegistry,
    name: *const c_char,
    data: *const u8,
    len: usize,
    seq: *mut u64,
) -> NbqStatus {
    guard(|| {
        let Some(reg) = reg.as_ref() else { return NbqStatus::NullPointer };
        let t = tri!(topic(name));
        let payload = tri!(bytes(data, len));
        let s = tri!(reg.inner.publish(&t, bytes::Bytes::copy_from_slice(payload)));
        if let Some(out) = seq.as_mut() {
            *out = s;
        }
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_registry_subscriber_count(
    reg: *const NbqRegistry,
    name: *const c_char,
    count: *mut usize,
) -> NbqStatus {
    guard(|| {
        let Some(reg) = reg.as_ref() else { return NbqStatus::NullPointer };
        let count = deref!(count);
        let t = tri!(topic(name));
        *count = tri!(reg.inner.subscriber_count(&t));
        NbqStatus::Ok
    })
}

/// The subscription keeps the registry alive until it is freed.
#[no_mangle]
pub unsafe extern "C" fn nbq_subscribe(
    reg: *const NbqRegistry,
    name: *const c_char,
    out: *mut *mut NbqSubscription,
) -> NbqStatus {
    guard(|| {
        let Some(reg) = reg.as_ref() else { return NbqStatus::NullPointer };
        let out = deref!(out);
        let t = tri!(topic(name));
        let sub = tri!(reg.inner.subscribe(&t));
        *out = Box::into_raw(Box::new(NbqSubscription { registry: reg.inner.clone(), sub, pending: None }));
        NbqStatus::Ok
    })
}

/// Copies the next event into `buf`. `len` always receives the payload size;
/// on `BufferTooSmall` the event stays queued for a retry with a larger
/// buffer. `Empty` means nothing is queued yet, `Closed` that the topic is
/// gone or the subscriber fell behind.
#[no_mangle]
pub unsafe extern "C" fn nbq_subscription_next(
    sub: *mut NbqSubscription,
    buf: *mut u8,
    cap: usize,
    len: *mut usize,
    seq: *mut u64,
) -> NbqStatus {
    guard(|| {
        let sub = deref!(sub);
        let len = deref!(len);
        if sub.pending.is_none() {
            sub.pending = match sub.sub.try_recv() {
                Ok(Some(ev)) => Some(ev),
                Ok(None) => return NbqStatus::Empty,
                Err(()) => return NbqStatus::Closed,
            };
        }
        let ev = sub.pending.as_ref().unwrap();
        *len = ev.payload.len();
        if ev.payload.len() > cap {
            return NbqStatus::BufferTooSmall;
        }
        if !ev.payload.is_empty() {
            if buf.is_null() {
                return NbqStatus::NullPointer;
            }
            std::ptr::copy_nonoverlapping(ev.payload.as_ptr(), buf, ev.payload.len());
        }
        if let Some(s) = seq.as_mut() {
            *s = ev.seq;
        }
        sub.pending = None;
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_subscription_free(sub: *mut NbqSubscription) {
    if !sub.is_null() {
        let s = Box::from_raw(sub);
        let _ = s.registry.unsubscribe(s.sub.handle());
    }
}

#[no_mangle]
pub unsafe extern "C" fn nbq_stream_budget_new(
    negotiated_max: u64,
    fraction: f64,
    out: *mut *mut NbqStreamBudget,
) -> NbqStatus {
    guard(|| {
        let out = deref!(out);
        if negotiated_max == 0 || !(fraction > 0.0 && fraction <= 1.0) {
            return NbqStatus::InvalidArgument;
        }
        *out = Box::into_raw(Box::new(NbqStreamBudget { inner: StreamBudget::new(negotiated_max, fraction) }));
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_stream_budget_free(b: *mut NbqStreamBudget) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

#[no_mangle]
pub unsafe extern "C" fn nbq_stream_budget_opened(b: *mut NbqStreamBudget) -> NbqStatus {
    guard(|| {
        deref!(b).inner.on_stream_opened();
        NbqStatus::Ok
    })
}

/// `new_limit` is set to the MAX_STREAMS value to send, or 0 when no
/// advertisement is due.
#[no_mangle]
pub unsafe extern "C" fn nbq_stream_budget_closed(b: *mut NbqStreamBudget, new_limit: *mut u64) -> NbqStatus {
    guard(|| {
        let b = deref!(b);
        let out = deref!(new_limit);
        *out = b.inner.on_stream_closed().map_or(0, |l| l.0);
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_stream_budget_available(b: *const NbqStreamBudget) -> u64 {
    b.as_ref().map_or(0, |b| b.inner.peer_available_streams())
}

#[no_mangle]
pub unsafe extern "C" fn nbq_stream_budget_advertisements(b: *const NbqStreamBudget) -> u64 {
    b.as_ref().map_or(0, |b| b.inner.advertisements())
}

#[no_mangle]
pub unsafe extern "C" fn nbq_watermark_threshold(negotiated_max: u64, fraction: f64, out: *mut u64) -> NbqStatus {
    guard(|| {
        let out = deref!(out);
        if negotiated_max == 0 || !(fraction > 0.0 && fraction <= 1.0) {
            return NbqStatus::InvalidArgument;
        }
        *out = watermark_threshold(negotiated_max, fraction);
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_frames_saved(
    closed_total: u64,
    negotiated_max: u64,
    fraction: f64,
    out: *mut u64,
) -> NbqStatus {
    guard(|| {
        let out = deref!(out);
        if negotiated_max == 0 || !(fraction > 0.0 && fraction <= 1.0) {
            return NbqStatus::InvalidArgument;
        }
        *out = frames_saved(closed_total, negotiated_max, fraction);
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_derive_tuning(
    downlink_kbit: f64,
    uplink_kbit: f64,
    rtt_ms: u64,
    mtu: usize,
    out: *mut NbqTuning,
) -> NbqStatus {
    guard(|| {
        let out = deref!(out);
        let net = NetworkProfile { name: "ffi".into(), downlink_kbit, uplink_kbit, rtt_ms, mtu };
        let Ok(t) = derive_tuning(&net) else { return NbqStatus::InvalidArgument };
        *out = NbqTuning {
            expected_rtt_ms: t.expected_rtt_ms,
            initial_rtt_guess_ms: t.initial_rtt_guess_ms,
            max_ack_delay_ms: t.max_ack_delay_ms,
            handshake_timeout_ms: t.handshake_timeout_ms,
            handshake_idle_timeout_ms: t.handshake_idle_timeout_ms,
            min_remote_idle_timeout_ms: t.min_remote_idle_timeout_ms,
            max_incoming_streams: t.max_incoming_streams,
            watermark_fraction: t.watermark_fraction,
            pmtud_enabled: t.pmtud_enabled,
        };
        NbqStatus::Ok
    })
}

/// Box-plot summary. Needs at least four finite samples.
#[no_mangle]
pub unsafe extern "C" fn nbq_summarize(data: *const f64, n: usize, out: *mut NbqSummary) -> NbqStatus {
    guard(|| {
        let out = deref!(out);
        if data.is_null() && n > 0 {
            return NbqStatus::NullPointer;
        }
        let v = if n == 0 { &[][..] } else { std::slice::from_raw_parts(data, n) };
        let s = match summarize(v) {
            Ok(s) => s,
            Err(StatsError::InsufficientData(_)) => return NbqStatus::InsufficientData,
            Err(StatsError::NonFinite(_)) => return NbqStatus::InvalidArgument,
        };
        *out = NbqSummary {
            n: s.n,
            mean: s.mean,
            median: s.median,
            q1: s.q1,
            q3: s.q3,
            whisker_low: s.whisker_low,
            whisker_high: s.whisker_high,
            outliers: s.outliers.len(),
        };
        NbqStatus::Ok
    })
}

/// Writes `Basic <base64>` plus a NUL terminator. `len` receives the length
/// without the terminator, also when the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn nbq_encode_basic_header(
    user: *const c_char,
    pass: *const c_char,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> NbqStatus {
    guard(|| {
        if user.is_null() || pass.is_null() {
            return NbqStatus::NullPointer;
        }
        let len = deref!(len);
        let (Ok(u), Ok(p)) = (CStr::from_ptr(user).to_str(), CStr::from_ptr(pass).to_str()) else {
            return NbqStatus::InvalidArgument;
        };
        let h = nbquic::auth::encode_basic_header(u, p);
        *len = h.len();
        if h.len() + 1 > cap {
            return NbqStatus::BufferTooSmall;
        }
        if buf.is_null() {
            return NbqStatus::NullPointer;
        }
        std::ptr::copy_nonoverlapping(h.as_ptr().cast(), buf, h.len());
        *buf.add(h.len()) = 0;
        NbqStatus::Ok
    })
}

/// One direction of the link emulator as a pure function of time, for
/// offline simulation. `direction`: 0 up, 1 down.
#[no_mangle]
pub unsafe extern "C" fn nbq_shaper_new(
    spec: *const NbqImpairment,
    direction: u32,
    out: *mut *mut NbqShaper,
) -> NbqStatus {
    guard(|| {
        let Some(s) = spec.as_ref() else { return NbqStatus::NullPointer };
        let out = deref!(out);
        let rate = |r: f64| (r > 0.0).then_some(r);
        let loss_direction = match s.loss_direction {
            0 => LossDirection::Up,
            1 => LossDirection::Down,
            2 => LossDirection::Both,
            _ => return NbqStatus::InvalidArgument,
        };
        let dir = match direction {
            0 => nbquic::netlab::Direction::Up,
            1 => nbquic::netlab::Direction::Down,
            _ => return NbqStatus::InvalidArgument,
        };
        let spec = ImpairmentSpec {
            delay_ms: s.delay_ms,
            jitter_ms: s.jitter_ms,
            loss_pct: s.loss_pct,
            loss_direction,
            rate_kbit_up: rate(s.rate_kbit_up),
            rate_kbit_down: rate(s.rate_kbit_down),
            seed: s.seed,
            mtu: if s.mtu == 0 { ImpairmentSpec::default().mtu } else { s.mtu },
        };
        if spec.validate().is_err() {
            return NbqStatus::InvalidArgument;
        }
        *out = Box::into_raw(Box::new(NbqShaper { inner: spec.shaper(dir) }));
        NbqStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn nbq_shaper_free(s: *mut NbqShaper) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// `verdict` receives one of `NBQ_DELIVER`, `NBQ_DROP_LOSS`, `NBQ_DROP_MTU`;
/// `deliver_at_ms` is only written on delivery.
#[no_mangle]
pub unsafe extern "C" fn nbq_shaper_forward(
    s: *mut NbqShaper,
    size: usize,
    now_ms: f64,
    verdict: *mut u32,
    deliver_at_ms: *mut f64,
) -> NbqStatus {
    guard(|| {
        let s = deref!(s);
        let verdict = deref!(verdict);
        if !now_ms.is_finite() {
            return NbqStatus::InvalidArgument;
        }
        match s.inner.forward(size, now_ms) {
            Verdict::Deliver { at_ms } => {
                *verdict = NBQ_DELIVER;
                if let Some(d) = deliver_at_ms.as_mut() {
                    *d = at_ms;
                }
            }
            Verdict::Drop(DropReason::Loss) => *verdict = NBQ_DROP_LOSS,
            Verdict::Drop(DropReason::Mtu) => *verdict = NBQ_DROP_MTU,
        }
        NbqStatus::Ok
    })
}

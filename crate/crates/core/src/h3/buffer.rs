//! Sizing of the per-request write buffer.

use std::sync::atomic::{AtomicU64, Ordering};

pub const FIXED_CAPACITY: usize = 8192;
pub const DYNAMIC_FLOOR: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WriteBufferPolicy {
    Fixed,
    #[default]
    Dynamic,
}

impl WriteBufferPolicy {
    pub fn capacity(self, header_estimate: usize, body_len: usize) -> usize {
        match self {
            Self::Fixed => FIXED_CAPACITY,
            Self::Dynamic => (header_estimate + body_len)
                .next_power_of_two()
                .clamp(DYNAMIC_FLOOR, FIXED_CAPACITY),
        }
    }

    /// A fresh buffer for one request, recorded in `stats`.
    pub fn allocate(self, header_estimate: usize, body_len: usize, stats: &BufferStats) -> Vec<u8> {
        let cap = self.capacity(header_estimate, body_len);
        stats.allocations.fetch_add(1, Ordering::Relaxed);
        stats.bytes_allocated.fetch_add(cap as u64, Ordering::Relaxed);
        Vec::with_capacity(cap)
    }
}

impl std::str::FromStr for WriteBufferPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(format!("unknown buffer policy {other:?}")),
        }
    }
}

#[derive(Debug, Default)]
pub struct BufferStats {
    pub allocations: AtomicU64,
    pub bytes_allocated: AtomicU64,
}

impl BufferStats {
    pub fn bytes(&self) -> u64 {
        self.bytes_allocated.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_publish_gets_floor() {
        assert_eq!(WriteBufferPolicy::Dynamic.capacity(224, 32), 256);
        assert_eq!(WriteBufferPolicy::Dynamic.capacity(60, 32), 256);
        assert_eq!(WriteBufferPolicy::Dynamic.capacity(225, 32), 512);
        assert_eq!(WriteBufferPolicy::Fixed.capacity(60, 32), 8192);
        assert_eq!(WriteBufferPolicy::Dynamic.capacity(100, 60_000), 8192);
    }

    #[test]
    fn accounting_ratio() {
        let (fixed, dynamic) = (BufferStats::default(), BufferStats::default());
        for _ in 0..100 {
            WriteBufferPolicy::Fixed.allocate(80, 32, &fixed);
            WriteBufferPolicy::Dynamic.allocate(80, 32, &dynamic);
        }
        assert!(dynamic.bytes() * 8192 <= fixed.bytes() * 256);
    }

    proptest! {
        #[test]
        fn dynamic_dominated_and_sufficient(header in 0usize..256, body in 0usize..=7936) {
            let d = WriteBufferPolicy::Dynamic.capacity(header, body);
            prop_assert!(d <= WriteBufferPolicy::Fixed.capacity(header, body));
            prop_assert!(d >= DYNAMIC_FLOOR);
            if header + body <= FIXED_CAPACITY {
                prop_assert!(d >= header + body);
            }
        }
    }
}

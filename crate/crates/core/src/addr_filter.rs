//! Byte-shift-independent (BSI) address detection for 32-bit arenas.
//!
//! A 32-bit address whose four bytes are equal reads back as the same value
//! at every byte shift, so a chunk placed over such an address can be
//! targeted by a spray that survives byte-granularity randomization. The
//! filter inspects the span handed to the caller by stepping the
//! most-significant byte of the span start: the only BSI candidate with a
//! given MSB is `MSB * 0x01010101`, and candidates are checked in increasing
//! order until one passes the end of the span.

use serde::Serialize;
use thiserror::Error;

/// Spacing between consecutive BSI addresses.
pub const BSI_STRIDE: u64 = 0x0101_0101;

/// Spacing between consecutive half-period addresses (`0xAABBAABB`).
pub const HALF_PERIOD_STRIDE: u64 = 0x0001_0001;

const ADDRESS_LIMIT: u64 = 1 << 32;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("range {start:#x} + {len:#x} wraps the 32-bit address space")]
pub struct RangeError {
    pub start: u32,
    pub len: u64,
}

/// A non-wrapping byte range in a 32-bit address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct AddressRange {
    start: u32,
    len: u64,
}

impl AddressRange {
    pub fn new(start: u32, len: u64) -> Result<Self, RangeError> {
        match (start as u64).checked_add(len) {
            Some(end) if end <= ADDRESS_LIMIT => Ok(Self { start, len }),
            _ => Err(RangeError { start, len }),
        }
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// One past the last byte; may equal `2^32`.
    pub fn end(&self) -> u64 {
        self.start as u64 + self.len
    }

    pub fn contains(&self, addr: u32) -> bool {
        (self.start as u64..self.end()).contains(&(addr as u64))
    }
}

/// True iff all four bytes of `addr` are equal.
pub fn is_bsi_address(addr: u32) -> bool {
    addr == (addr >> 24) * BSI_STRIDE as u32
}

/// True iff the upper and lower halves of `addr` are equal, e.g. `0x35343534`.
/// Every BSI address is also half-period.
pub fn is_half_period_address(addr: u32) -> bool {
    addr >> 16 == addr & 0xFFFF
}

/// Outcome of one MSB-stepping scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsiScan {
    pub contains: bool,
    /// Number of `MSB * 0x01010101` candidates evaluated.
    pub candidates: u32,
}

/// MSB-stepping scan of `range` for a BSI address.
pub fn scan_bsi(range: AddressRange) -> BsiScan {
    let end = range.end();
    let mut msb = (range.start() >> 24) as u64;
    let mut candidates = 0;
    while msb <= 0xFF {
        let candidate = msb * BSI_STRIDE;
        candidates += 1;
        if candidate >= end {
            break;
        }
        if candidate >= range.start() as u64 {
            return BsiScan {
                contains: true,
                candidates,
            };
        }
        msb += 1;
    }
    BsiScan {
        contains: false,
        candidates,
    }
}

/// True iff some address in `range` is byte-shift-independent.
pub fn range_contains_bsi(range: AddressRange) -> bool {
    scan_bsi(range).contains
}

/// True iff some address in `range` is half-period (includes all BSI).
pub fn range_contains_half_period(range: AddressRange) -> bool {
    let first = (range.start() as u64).div_ceil(HALF_PERIOD_STRIDE) * HALF_PERIOD_STRIDE;
    first < range.end() && first < ADDRESS_LIMIT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterVerdict {
    Accept,
    Quarantine,
}

/// Per-arena filter state: mode flags plus work counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SlotFilter {
    enabled: bool,
    strict: bool,
    /// Spans inspected.
    pub spans_checked: u64,
    /// BSI candidates evaluated across all scans.
    pub candidate_checks: u64,
    /// Spans rejected.
    pub rejections: u64,
}

impl SlotFilter {
    pub fn new(enabled: bool, strict: bool) -> Self {
        Self {
            enabled,
            strict,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// Judges the span `[slot.start + offset, +size)` that would be handed
    /// out from `slot`. Zero-size requests are judged on their first byte.
    ///
    /// Requests of `0x01010101` bytes or more always cover a BSI address and
    /// are accepted without inspection.
    pub fn filter_slot(&mut self, slot: AddressRange, offset: u64, size: u64) -> FilterVerdict {
        if !self.enabled || size >= BSI_STRIDE {
            return FilterVerdict::Accept;
        }
        debug_assert!(offset + size.max(1) <= slot.len());
        let span = match AddressRange::new(slot.start().wrapping_add(offset as u32), size.max(1)) {
            Ok(span) => span,
            Err(_) => return FilterVerdict::Quarantine,
        };
        self.spans_checked += 1;
        let scan = scan_bsi(span);
        self.candidate_checks += scan.candidates as u64;
        let reject = scan.contains || (self.strict && range_contains_half_period(span));
        if reject {
            self.rejections += 1;
            FilterVerdict::Quarantine
        } else {
            FilterVerdict::Accept
        }
    }
}

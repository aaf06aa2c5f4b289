//! Serializable arena and replay statistics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassOccupancy {
    pub max_size: u64,
    pub stride: u64,
    pub live: u64,
    pub capacity: u64,
    pub quarantined: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounters {
    pub enabled: bool,
    pub spans_checked: u64,
    pub candidate_checks: u64,
    pub rejections: u64,
}

/// Snapshot of an arena.
///
/// Byte totals, straddle counts and promotion figures describe the live set.
/// `offset_histogram`, `aligned_requests` and `total_allocations` accumulate
/// over the arena's lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaStats {
    pub live_allocations: u64,
    /// Requested bytes of live chunks.
    pub live_bytes: u64,
    pub reserved_bytes: u64,
    /// `reserved_bytes / live_bytes`, or 1.0 when nothing is requested.
    pub overhead_ratio: f64,
    pub offset_histogram: Vec<u64>,
    pub line_straddles: u64,
    pub page_straddles: u64,
    pub per_class: Vec<ClassOccupancy>,
    pub large_live: u64,
    pub large_reserved: u64,
    pub padding_bytes: u64,
    pub promotions: u64,
    pub promotion_bytes: u64,
    pub aligned_live: u64,
    pub aligned_requests: u64,
    pub total_allocations: u64,
    pub quarantined: u64,
    pub filter: FilterCounters,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive upper bound; a power of two.
    pub bucket_max: u64,
    pub count: u64,
}

/// Result of replaying a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    #[serde(flatten)]
    pub arena: ArenaStats,
    pub peak_reserved: u64,
    /// Requested sizes of every alloc and realloc event.
    pub histogram: Vec<HistogramBucket>,
}

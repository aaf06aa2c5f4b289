//! Size-class table with border-free slot geometry.
//!
//! Candidate strides follow jemalloc-style spacing (16, 24, 32, 48, 64, 96,
//! ...). A stride is kept only if its slots are border-free by construction:
//! strides up to the cache line must divide the line, strides up to the page
//! must divide the page. Runs are one page long and page aligned, so slot `i`
//! of a run starts at `run + i * stride` and never crosses the relevant
//! border. A request whose nearest candidate stride was dropped is promoted
//! to the next kept stride and the promotion is accounted.

use serde::Serialize;

use crate::config::ArenaConfig;

/// Which border a class's slots are guaranteed not to cross.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    /// Every slot lies within one cache line.
    Line,
    /// Every slot lies within one page.
    Page,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SizeClass {
    /// Largest request served, after subtracting the per-chunk padding.
    pub max_size: u64,
    pub stride: u64,
    pub slots_per_run: u64,
    pub tier: Tier,
}

/// Where a request of a given size goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Slot {
        class: usize,
        /// Bytes added by promoting past a dropped candidate stride.
        promotion_bytes: u64,
    },
    Large {
        reserved: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeClassTable {
    classes: Vec<SizeClass>,
    candidates: Vec<u64>,
    padding: u64,
    page_size: u64,
}

/// Geometric candidate strides up to and including `page_size`.
pub fn candidate_strides(page_size: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut base = 16u64;
    while base <= page_size {
        out.push(base);
        let mid = base + base / 2;
        if mid <= page_size {
            out.push(mid);
        }
        base *= 2;
    }
    out
}

impl SizeClassTable {
    pub fn new(cfg: &ArenaConfig) -> Self {
        let padding = cfg.padding();
        let candidates = candidate_strides(cfg.page_size);
        let classes = candidates
            .iter()
            .copied()
            .filter(|&stride| stride > padding)
            .filter_map(|stride| {
                let tier = if stride <= cfg.cache_line {
                    cfg.cache_line
                        .is_multiple_of(stride)
                        .then_some(Tier::Line)?
                } else {
                    cfg.page_size.is_multiple_of(stride).then_some(Tier::Page)?
                };
                Some(SizeClass {
                    max_size: stride - padding,
                    stride,
                    slots_per_run: cfg.page_size / stride,
                    tier,
                })
            })
            .collect();
        Self {
            classes,
            candidates,
            padding,
            page_size: cfg.page_size,
        }
    }

    pub fn classes(&self) -> &[SizeClass] {
        &self.classes
    }

    pub fn get(&self, index: usize) -> &SizeClass {
        &self.classes[index]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn padding(&self) -> u64 {
        self.padding
    }

    /// Maps a request size to its slot class, or to the large region.
    pub fn place(&self, size: u64) -> Placement {
        let need = size.saturating_add(self.padding).max(1);
        if need > self.page_size {
            return Placement::Large {
                reserved: round_up(need, self.page_size),
            };
        }
        let class = self
            .classes
            .iter()
            .position(|c| c.stride >= need)
            .expect("page-sized class always exists");
        let nominal = self.nominal_stride(need);
        Placement::Slot {
            class,
            promotion_bytes: self.classes[class].stride - nominal,
        }
    }

    /// Slot class for an explicitly aligned request. Offsets are not applied
    /// to such requests, so no padding is reserved.
    pub fn place_aligned(&self, size: u64, align: u64) -> Option<Placement> {
        if !align.is_power_of_two() || align > self.page_size {
            return None;
        }
        let need = size.max(1).max(align);
        if need > self.page_size {
            return Some(Placement::Large {
                reserved: round_up(need, self.page_size),
            });
        }
        let class = self
            .classes
            .iter()
            .position(|c| c.stride >= need && c.stride % align == 0)?;
        Some(Placement::Slot {
            class,
            promotion_bytes: 0,
        })
    }

    /// Reservation a request would get from the candidate strides alone,
    /// before any promotion.
    pub fn nominal_reservation(&self, need: u64) -> u64 {
        let need = need.max(1);
        if need > self.page_size {
            round_up(need, self.page_size)
        } else {
            self.nominal_stride(need)
        }
    }

    /// Extra nominal reservation caused by the per-chunk padding.
    pub fn padding_bytes(&self, size: u64) -> u64 {
        self.nominal_reservation(size.saturating_add(self.padding)) - self.nominal_reservation(size)
    }

    fn nominal_stride(&self, need: u64) -> u64 {
        *self
            .candidates
            .iter()
            .find(|&&s| s >= need)
            .expect("need bounded by page size")
    }
}

pub(crate) fn round_up(value: u64, to: u64) -> u64 {
    value.div_ceil(to) * to
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(line: u64, randomize: bool) -> SizeClassTable {
        SizeClassTable::new(&ArenaConfig {
            cache_line: line,
            randomize,
            ..ArenaConfig::default()
        })
    }

    #[test]
    fn candidates_are_geometric() {
        assert_eq!(
            candidate_strides(4096),
            [16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512, 768, 1024, 1536, 2048, 3072, 4096]
        );
    }

    #[test]
    fn default_table_keeps_dividing_strides() {
        let t = table(64, true);
        let strides: Vec<u64> = t.classes().iter().map(|c| c.stride).collect();
        assert_eq!(strides, [16, 32, 64, 128, 256, 512, 1024, 2048, 4096]);
        assert_eq!(t.get(0).max_size, 8);
        assert_eq!(t.get(2).tier, Tier::Line);
        assert_eq!(t.get(3).tier, Tier::Page);
    }

    #[test]
    fn classes_strictly_increase() {
        for line in [16, 32, 64, 128, 256] {
            let t = table(line, true);
            assert!(t
                .classes()
                .windows(2)
                .all(|w| w[0].max_size < w[1].max_size));
        }
    }

    #[test]
    fn wide_line_rebuilds_table() {
        let t = table(128, true);
        for c in t.classes() {
            if c.max_size + 8 <= 128 {
                assert_eq!(c.tier, Tier::Line);
                for slot in 0..c.slots_per_run {
                    let start = slot * c.stride;
                    assert_eq!(start / 128, (start + c.stride - 1) / 128);
                }
            }
        }
    }

    #[test]
    fn promotion_of_dropped_candidates() {
        let t = table(64, true);
        // 40 + 8 = 48, nominally a 48-byte slot that cannot divide a line
        assert_eq!(
            t.place(40),
            Placement::Slot {
                class: 2,
                promotion_bytes: 16
            }
        );
        // 24 + 8 = 32 fits exactly
        assert_eq!(
            t.place(24),
            Placement::Slot {
                class: 1,
                promotion_bytes: 0
            }
        );
    }

    #[test]
    fn zero_size_uses_smallest_class() {
        assert!(matches!(
            table(64, true).place(0),
            Placement::Slot { class: 0, .. }
        ));
        assert!(matches!(
            table(64, false).place(0),
            Placement::Slot { class: 0, .. }
        ));
    }

    #[test]
    fn large_boundary() {
        let t = table(64, true);
        assert!(matches!(t.place(4088), Placement::Slot { class: 8, .. }));
        assert_eq!(t.place(4089), Placement::Large { reserved: 8192 });
        assert!(matches!(
            table(64, false).place(4096),
            Placement::Slot { .. }
        ));
    }

    #[test]
    fn padding_bytes_baseline_is_zero() {
        let t = table(64, false);
        assert!((0..5000).all(|s| t.padding_bytes(s) == 0));
        let t = table(64, true);
        assert_eq!(t.padding_bytes(16), 8); // 16 -> 24
        assert_eq!(t.padding_bytes(20), 8); // 24 -> 32
        assert_eq!(t.padding_bytes(100), 0); // 128 either way
    }

    #[test]
    fn aligned_placement() {
        let t = table(64, true);
        assert_eq!(
            t.place_aligned(10, 64),
            Some(Placement::Slot {
                class: 2,
                promotion_bytes: 0
            })
        );
        assert_eq!(t.place_aligned(10, 3), None);
        assert_eq!(t.place_aligned(10, 8192), None);
    }
}

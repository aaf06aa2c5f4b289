//! Test-only oracles shared by the integration suites.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ruma::{Allocation, Arena, ArenaConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Inclusive-exclusive spans of live allocations, keyed by start, for
/// O(log n) overlap checks independent of the arena's own bookkeeping.
#[derive(Default)]
pub struct SpanIndex {
    spans: BTreeMap<u64, u64>,
}

impl SpanIndex {
    /// Inserts `[start, start + max(len, 1))`, returning false on overlap.
    pub fn insert(&mut self, start: u64, len: u64) -> bool {
        let end = start + len.max(1);
        if let Some((_, &prev_end)) = self.spans.range(..=start).next_back() {
            if prev_end > start {
                return false;
            }
        }
        if let Some((&next, _)) = self.spans.range(start..).next() {
            if next < end {
                return false;
            }
        }
        self.spans.insert(start, end);
        true
    }

    pub fn remove(&mut self, start: u64) {
        self.spans.remove(&start).expect("span present");
    }
}

/// Border rules recomputed from first principles.
pub fn straddles_line(a: &Allocation, line: u64) -> bool {
    a.requested > 0 && a.start / line != (a.start + a.requested - 1) / line
}

pub fn straddles_page(a: &Allocation, page: u64) -> bool {
    a.requested > 0 && a.start / page != (a.start + a.requested - 1) / page
}

/// Pearson chi-square statistic against a uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// Upper critical value of chi-square with `df` degrees of freedom.
pub fn chi_square_critical(df: usize, significance: f64) -> f64 {
    ChiSquared::new(df as f64)
        .unwrap()
        .inverse_cdf(1.0 - significance)
}

#[derive(Default, Debug)]
pub struct OpReport {
    pub ops: u64,
    pub allocs: u64,
    pub frees: u64,
    pub reallocs: u64,
    pub line_violations: u64,
    pub page_violations: u64,
    pub overlaps: u64,
    pub bsi_spans: u64,
    pub line_checked: u64,
    pub page_checked: u64,
}

fn random_size(rng: &mut ChaCha8Rng) -> u64 {
    match rng.random_range(0..100) {
        0..=54 => rng.random_range(0..=64),
        55..=94 => rng.random_range(65..=4096),
        _ => rng.random_range(4097..=20_000),
    }
}

fn check(report: &mut OpReport, idx: &mut SpanIndex, a: &Allocation, cfg: &ArenaConfig) {
    let w = cfg.pointer_width.bytes();
    if a.requested + w <= cfg.cache_line {
        report.line_checked += 1;
        report.line_violations += straddles_line(a, cfg.cache_line) as u64;
    } else if a.requested + w <= cfg.page_size {
        report.page_checked += 1;
        report.page_violations += straddles_page(a, cfg.page_size) as u64;
    }
    if !idx.insert(a.start, a.requested) {
        report.overlaps += 1;
    }
    if cfg.filter_bsi && cfg.address_space_bits == 32 && a.requested < 0x0101_0101 {
        let hit = (a.start..a.start + a.requested.max(1)).any(|addr| {
            let b = (addr as u32).to_le_bytes();
            b.iter().all(|&x| x == b[0])
        });
        report.bsi_spans += hit as u64;
    }
}

/// Drives `ops` random alloc/free/realloc operations and checks every
/// returned chunk against border, overlap and BSI oracles.
pub fn random_ops(cfg: ArenaConfig, ops: u64, seed: u64, max_live: usize) -> (Arena, OpReport) {
    let mut arena = Arena::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: Vec<Allocation> = Vec::new();
    let mut idx = SpanIndex::default();
    let mut report = OpReport::default();
    for _ in 0..ops {
        report.ops += 1;
        let roll = rng.random_range(0..100);
        let pressure = live.len() >= max_live;
        if live.is_empty() || (roll < 50 && !pressure) {
            let a = arena.alloc(random_size(&mut rng)).unwrap();
            check(&mut report, &mut idx, &a, &cfg);
            live.push(a);
            report.allocs += 1;
        } else if roll < 80 || pressure {
            let i = rng.random_range(0..live.len());
            let a = live.swap_remove(i);
            idx.remove(a.start);
            arena.free(a.id).unwrap();
            report.frees += 1;
        } else {
            let i = rng.random_range(0..live.len());
            let old = live[i];
            let new = arena.realloc(old.id, random_size(&mut rng)).unwrap();
            check(&mut report, &mut idx, &new, &cfg);
            idx.remove(old.start);
            live[i] = new;
            report.reallocs += 1;
        }
    }
    (arena, report)
}

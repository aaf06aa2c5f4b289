//! Pointer-spray attack model.
//!
//! An attacker fills memory with a repeated pointer-width pattern and then
//! dereferences a dangling or out-of-bounds pointer into it. Under
//! word-granularity randomization the read lands on a pattern boundary; under
//! byte granularity it lands at a uniform shift `s` and reads the pattern
//! rotated by `s` bytes. The attack succeeds only if the rotated value still
//! equals the crafted pointer.
//!
//! Sprayed memory is modeled little-endian: byte `i` of the pattern is bits
//! `8i..8i+8` of its value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::PointerWidth;

/// Two-sided z quantile for 99% confidence.
const Z_99: f64 = 2.575_829_303_548_900_4;

/// Fixed partitioning of Monte Carlo trials so results do not depend on the
/// worker count.
const MC_PARTITIONS: u64 = 64;

/// Chains up to this length are enumerated exhaustively.
pub const MAX_ENUMERATED_CHAIN: u32 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SprayError {
    #[error("pattern {value:#x} does not fit in {width} bytes")]
    PatternTooWide { value: u64, width: PointerWidth },
    #[error("granularity {granularity} must be 1 or divide the pointer width {width}")]
    Granularity {
        granularity: u64,
        width: PointerWidth,
    },
    #[error("chain length must be at least 1")]
    EmptyChain,
    #[error("operation requires a single dereference, got a chain of {0}")]
    NotSingle(u32),
    #[error("Monte Carlo needs at least one trial")]
    NoTrials,
}

/// Payload repeated across the sprayed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SprayPattern {
    value: u64,
    width: PointerWidth,
}

impl SprayPattern {
    pub fn new(value: u64, width: PointerWidth) -> Result<Self, SprayError> {
        if width == PointerWidth::Four && value > u32::MAX as u64 {
            return Err(SprayError::PatternTooWide { value, width });
        }
        Ok(Self { value, width })
    }

    /// A pattern made of one repeated byte.
    pub fn repeated_byte(byte: u8, width: PointerWidth) -> Self {
        let value = u64::from_le_bytes([byte; 8]);
        Self {
            value: if width == PointerWidth::Four {
                value & 0xFFFF_FFFF
            } else {
                value
            },
            width,
        }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn width(&self) -> PointerWidth {
        self.width
    }

    /// Little-endian byte encoding.
    pub fn bytes(&self) -> Vec<u8> {
        self.value.to_le_bytes()[..self.width.usize()].to_vec()
    }

    /// True iff every byte rotation of the pattern reads back unchanged,
    /// i.e. all bytes are equal.
    pub fn is_shift_invariant(&self) -> bool {
        let bytes = self.bytes();
        bytes.iter().all(|&b| b == bytes[0])
    }

    /// True iff all bytes are pairwise distinct.
    pub fn bytes_distinct(&self) -> bool {
        let bytes = self.bytes();
        (0..bytes.len()).all(|i| !bytes[i + 1..].contains(&bytes[i]))
    }
}

/// Value read at byte shift `s` from an endless repetition of `pattern`.
/// Shifts wrap modulo the pointer width.
pub fn read_at_shift(pattern: SprayPattern, shift: u64) -> u64 {
    let s = (shift % pattern.width.bytes()) as u32;
    match pattern.width {
        PointerWidth::Four => (pattern.value as u32).rotate_right(8 * s) as u64,
        PointerWidth::Eight => pattern.value.rotate_right(8 * s),
    }
}

/// What counts as a successful dereference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessPredicate {
    /// The value read equals the crafted pointer.
    #[default]
    ExactMatch,
    /// The value read is itself invariant under every byte rotation, so it
    /// would have been read identically at any shift.
    ShiftInvariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttackScenario {
    /// Shift step: 1 for byte-granularity randomization, the pointer width
    /// for conventional word granularity.
    pub granularity: u64,
    /// Number of independent crafted-pointer dereferences that must all hit.
    pub chain_length: u32,
    pub pattern: SprayPattern,
    pub predicate: SuccessPredicate,
}

impl AttackScenario {
    pub fn new(
        pattern: SprayPattern,
        granularity: u64,
        chain_length: u32,
    ) -> Result<Self, SprayError> {
        let s = Self {
            granularity,
            chain_length,
            pattern,
            predicate: SuccessPredicate::ExactMatch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_predicate(mut self, predicate: SuccessPredicate) -> Self {
        self.predicate = predicate;
        self
    }

    pub fn pointer_width(&self) -> PointerWidth {
        self.pattern.width
    }

    pub fn validate(&self) -> Result<(), SprayError> {
        let w = self.pattern.width.bytes();
        if self.granularity == 0 || !w.is_multiple_of(self.granularity) {
            return Err(SprayError::Granularity {
                granularity: self.granularity,
                width: self.pattern.width,
            });
        }
        if self.chain_length == 0 {
            return Err(SprayError::EmptyChain);
        }
        Ok(())
    }

    /// The shifts a single dereference can land on, each equally likely.
    pub fn shifts(&self) -> impl Iterator<Item = u64> + Clone {
        (0..self.pattern.width.bytes()).step_by(self.granularity as usize)
    }

    pub fn hits(&self, shift: u64) -> bool {
        let read = read_at_shift(self.pattern, shift);
        match self.predicate {
            SuccessPredicate::ExactMatch => read == self.pattern.value,
            SuccessPredicate::ShiftInvariant => SprayPattern {
                value: read,
                ..self.pattern
            }
            .is_shift_invariant(),
        }
    }

    fn hit_table(&self) -> Vec<bool> {
        self.shifts().map(|s| self.hits(s)).collect()
    }
}

/// Exact outcome count over the shift set of one dereference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShiftCount {
    pub matching: u64,
    pub shifts: u64,
}

impl ShiftCount {
    pub fn probability(&self) -> f64 {
        self.matching as f64 / self.shifts as f64
    }
}

/// Attack success probability of a single dereference, by enumeration of
/// the shift set.
pub fn single_deref_success(scenario: &AttackScenario) -> Result<ShiftCount, SprayError> {
    scenario.validate()?;
    if scenario.chain_length != 1 {
        return Err(SprayError::NotSingle(scenario.chain_length));
    }
    Ok(stage_count(scenario))
}

fn stage_count(scenario: &AttackScenario) -> ShiftCount {
    let table = scenario.hit_table();
    ShiftCount {
        matching: table.iter().filter(|&&h| h).count() as u64,
        shifts: table.len() as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainOutcome {
    pub probability: f64,
    /// Successful shift tuples; `None` when the closed form was used.
    pub successes: Option<u64>,
    pub tuples: Option<u64>,
}

/// Success probability of a chain of independent dereferences. Chains up to
/// [`MAX_ENUMERATED_CHAIN`] are enumerated over the tree of shift tuples;
/// longer ones use the per-stage probability raised to the chain length.
pub fn chained_success(scenario: &AttackScenario) -> Result<ChainOutcome, SprayError> {
    scenario.validate()?;
    let k = scenario.chain_length;
    let table = scenario.hit_table();
    if k > MAX_ENUMERATED_CHAIN {
        let p = stage_count(scenario).probability();
        return Ok(ChainOutcome {
            probability: p.powi(k as i32),
            successes: None,
            tuples: None,
        });
    }
    let n = table.len() as u64;
    let successes = count_successful_tuples(&table, k);
    let tuples = n.pow(k);
    Ok(ChainOutcome {
        probability: successes as f64 / tuples as f64,
        successes: Some(successes),
        tuples: Some(tuples),
    })
}

/// Depth-first walk over shift tuples of length `k`. A missed stage fails
/// every completion of its prefix, so that subtree is skipped; the last stage
/// is counted directly from the table. Every success is visited.
fn count_successful_tuples(table: &[bool], k: u32) -> u64 {
    let last: u64 = table.iter().filter(|&&h| h).count() as u64;
    fn walk(table: &[bool], depth: u32, last: u64) -> u64 {
        if depth == 1 {
            return last;
        }
        table
            .iter()
            .filter(|&&h| h)
            .map(|_| walk(table, depth - 1, last))
            .sum()
    }
    walk(table, k, last)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    /// Wilson 99% interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wilson score interval at 99% confidence.
pub fn wilson_99(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_99 * Z_99;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_99 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Simulates `trials` attacks, each drawing an independent uniform shift per
/// chain stage. Trials are split into fixed partitions, each seeded from
/// `seed` on its own ChaCha stream, and run in parallel.
pub fn monte_carlo(
    scenario: &AttackScenario,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate, SprayError> {
    scenario.validate()?;
    if trials == 0 {
        return Err(SprayError::NoTrials);
    }
    let table = scenario.hit_table();
    let n = table.len();
    let k = scenario.chain_length;
    let successes: u64 = (0..MC_PARTITIONS)
        .into_par_iter()
        .map(|part| {
            let share = trials / MC_PARTITIONS + (part < trials % MC_PARTITIONS) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(part);
            (0..share)
                .filter(|_| (0..k).all(|_| table[rng.random_range(0..n)]))
                .count() as u64
        })
        .sum();
    let (ci_low, ci_high) = wilson_99(successes, trials);
    Ok(MonteCarloEstimate {
        trials,
        successes,
        estimate: successes as f64 / trials as f64,
        ci_low,
        ci_high,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakClass {
    PointerLike,
    Other,
}

/// Classifies leaked words the way a tagged-pointer leak analysis does:
/// a word with its least significant bit set is taken for a pointer.
pub fn leak_classify(words: &[u64]) -> Vec<LeakClass> {
    words
        .iter()
        .map(|&w| {
            if w & 1 == 1 {
                LeakClass::PointerLike
            } else {
                LeakClass::Other
            }
        })
        .collect()
}

/// Re-reads a little-endian word dump as 8-byte words starting `shift` bytes
/// in, as an attacker would see it if the dump were byte-shifted.
pub fn reread_at_shift(words: &[u64], shift: usize) -> Vec<u64> {
    let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    bytes
        .get(shift..)
        .unwrap_or(&[])
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GENERIC: u64 = 0xdead_beef_cafe_babe;

    fn buffer_read(p: SprayPattern, s: usize) -> u64 {
        let w = p.width().usize();
        let buf: Vec<u8> = p.bytes().repeat(2);
        let mut word = [0u8; 8];
        word[..w].copy_from_slice(&buf[s..s + w]);
        u64::from_le_bytes(word)
    }

    fn scenario(value: u64, width: PointerWidth, g: u64, k: u32) -> AttackScenario {
        AttackScenario::new(SprayPattern::new(value, width).unwrap(), g, k).unwrap()
    }

    #[test]
    fn zero_shift_identity() {
        let p = SprayPattern::new(GENERIC, PointerWidth::Eight).unwrap();
        assert_eq!(read_at_shift(p, 0), GENERIC);
    }

    #[test]
    fn shift_matches_buffer_construction() {
        for (value, width) in [
            (GENERIC, PointerWidth::Eight),
            (0x1122_3344, PointerWidth::Four),
        ] {
            let p = SprayPattern::new(value, width).unwrap();
            for s in 0..width.usize() {
                assert_eq!(read_at_shift(p, s as u64), buffer_read(p, s));
            }
        }
        let p = SprayPattern::new(GENERIC, PointerWidth::Eight).unwrap();
        // bytes be ba fe ca ef be ad de, read from index 1
        assert_eq!(read_at_shift(p, 1), 0xbede_adbe_efca_feba);
    }

    #[test]
    fn repeated_byte_is_invariant() {
        let p = SprayPattern::repeated_byte(0x97, PointerWidth::Eight);
        assert_eq!(p.value(), 0x9797_9797_9797_9797);
        assert!((0..8).all(|s| read_at_shift(p, s) == p.value()));
    }

    #[test]
    fn single_deref_examples() {
        let p = |w, g| {
            single_deref_success(&scenario(
                if w == PointerWidth::Four {
                    0xcafe_babe
                } else {
                    GENERIC
                },
                w,
                g,
                1,
            ))
            .unwrap()
            .probability()
        };
        assert_eq!(p(PointerWidth::Eight, 1), 0.125);
        assert_eq!(p(PointerWidth::Four, 1), 0.25);
        assert_eq!(p(PointerWidth::Eight, 8), 1.0);
        let bsi = scenario(0x9797_9797_9797_9797, PointerWidth::Eight, 1, 1);
        assert_eq!(single_deref_success(&bsi).unwrap().probability(), 1.0);
    }

    #[test]
    fn single_requires_chain_of_one() {
        let s = scenario(GENERIC, PointerWidth::Eight, 1, 2);
        assert_eq!(single_deref_success(&s), Err(SprayError::NotSingle(2)));
    }

    #[test]
    fn chained_examples() {
        let c = chained_success(&scenario(0xcafe_babe, PointerWidth::Four, 1, 2)).unwrap();
        assert_eq!((c.successes, c.tuples), (Some(1), Some(16)));
        assert_eq!(c.probability, 0.0625);
        let c = chained_success(&scenario(0xcafe_babe, PointerWidth::Four, 1, 4)).unwrap();
        assert_eq!(c.probability, 0.003_906_25);
        let c = chained_success(&scenario(0xcafe_babe, PointerWidth::Four, 1, 12)).unwrap();
        assert_eq!(c.successes, None);
        assert_eq!(c.probability, 0.25f64.powi(12));
        let c = chained_success(&scenario(0x3535_3535, PointerWidth::Four, 1, 12)).unwrap();
        assert_eq!(c.probability, 1.0);
    }

    #[test]
    fn invalid_scenarios() {
        let p = SprayPattern::new(GENERIC, PointerWidth::Eight).unwrap();
        assert!(matches!(
            AttackScenario::new(p, 3, 1),
            Err(SprayError::Granularity { .. })
        ));
        assert!(matches!(
            AttackScenario::new(p, 0, 1),
            Err(SprayError::Granularity { .. })
        ));
        assert_eq!(AttackScenario::new(p, 1, 0), Err(SprayError::EmptyChain));
        assert!(SprayPattern::new(GENERIC, PointerWidth::Four).is_err());
    }

    #[test]
    fn shift_invariant_predicate() {
        let s = scenario(GENERIC, PointerWidth::Eight, 1, 1)
            .with_predicate(SuccessPredicate::ShiftInvariant);
        assert_eq!(single_deref_success(&s).unwrap().matching, 0);
        let s = scenario(0x4141_4141, PointerWidth::Four, 1, 1)
            .with_predicate(SuccessPredicate::ShiftInvariant);
        assert_eq!(single_deref_success(&s).unwrap().probability(), 1.0);
    }

    #[test]
    fn monte_carlo_deterministic_and_exact_cases() {
        let s = scenario(0xcafe_babe, PointerWidth::Four, 4, 3);
        let est = monte_carlo(&s, 10_000, 3).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.ci_high, 1.0);
        let s = scenario(GENERIC, PointerWidth::Eight, 1, 1);
        assert_eq!(
            monte_carlo(&s, 50_000, 9).unwrap(),
            monte_carlo(&s, 50_000, 9).unwrap()
        );
        assert_eq!(monte_carlo(&s, 0, 9), Err(SprayError::NoTrials));
    }

    #[test]
    fn wilson_brackets_half() {
        let (lo, hi) = wilson_99(500, 1000);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn leak_examples() {
        assert_eq!(
            leak_classify(&[0x0000_02d2_e910_6a41]),
            [LeakClass::PointerLike]
        );
        assert_eq!(leak_classify(&[0x100]), [LeakClass::Other]);
        let dump = [
            0x0000_02d2_e910_6a41,
            0x0000_0000_0000_0100,
            0x1122_3344_5566_7788,
        ];
        let shifted = reread_at_shift(&dump, 1);
        assert_eq!(shifted.len(), 2);
        assert_ne!(leak_classify(&dump[..2]), leak_classify(&shifted));
    }
}

//! Allocation traces: text format, synthetic generation and replay.
//!
//! One event per line, tokens separated by whitespace, `#` to end of line is
//! a comment:
//!
//! ```text
//! a <id> <size>   # allocate
//! r <id> <size>   # reallocate, id stays the same
//! f <id>          # free
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::arena::{AllocError, AllocId, Arena};
use crate::config::{ArenaConfig, ConfigError};
use crate::stats::{HistogramBucket, ReplayStats};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceEvent {
    Alloc { id: String, size: u64 },
    Free { id: String },
    Realloc { id: String, size: u64 },
}

impl TraceEvent {
    pub fn id(&self) -> &str {
        match self {
            TraceEvent::Alloc { id, .. }
            | TraceEvent::Free { id }
            | TraceEvent::Realloc { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceErrorKind {
    #[error("unknown event kind `{0}`")]
    UnknownKind(String),
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("invalid size `{0}`")]
    BadSize(String),
    #[error("unexpected token `{0}`")]
    Extra(String),
    #[error("id `{0}` is already live")]
    DuplicateLive(String),
    #[error("id `{0}` is not live")]
    NotLive(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}, column {column}: {kind}")]
pub struct TraceError {
    pub line: usize,
    pub column: usize,
    pub kind: TraceErrorKind,
}

fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line
        .char_indices()
        .chain(std::iter::once((line.len(), ' ')))
    {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    out
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

/// Parses a trace and checks that every free/realloc names a live id and no
/// alloc reuses a live one.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    let mut live: HashSet<String> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = tokens(strip_comment(raw));
        let Some(&(kind_col, kind)) = toks.first() else {
            continue;
        };
        let err = |column, kind| TraceError { line, column, kind };
        let end_col = raw.len() + 1;
        let (id_col, id) = *toks
            .get(1)
            .ok_or_else(|| err(end_col, TraceErrorKind::Missing("id")))?;
        let size = |expect_size: bool| -> Result<Option<u64>, TraceError> {
            if !expect_size {
                return match toks.get(2) {
                    Some(&(c, t)) => Err(err(c, TraceErrorKind::Extra(t.to_string()))),
                    None => Ok(None),
                };
            }
            let &(col, tok) = toks
                .get(2)
                .ok_or_else(|| err(end_col, TraceErrorKind::Missing("size")))?;
            if let Some(&(c, t)) = toks.get(3) {
                return Err(err(c, TraceErrorKind::Extra(t.to_string())));
            }
            tok.parse()
                .map(Some)
                .map_err(|_| err(col, TraceErrorKind::BadSize(tok.to_string())))
        };
        let event = match kind {
            "a" => {
                let size = size(true)?.expect("size present");
                if !live.insert(id.to_string()) {
                    return Err(err(id_col, TraceErrorKind::DuplicateLive(id.to_string())));
                }
                TraceEvent::Alloc {
                    id: id.to_string(),
                    size,
                }
            }
            "f" => {
                size(false)?;
                if !live.remove(id) {
                    return Err(err(id_col, TraceErrorKind::NotLive(id.to_string())));
                }
                TraceEvent::Free { id: id.to_string() }
            }
            "r" => {
                let size = size(true)?.expect("size present");
                if !live.contains(id) {
                    return Err(err(id_col, TraceErrorKind::NotLive(id.to_string())));
                }
                TraceEvent::Realloc {
                    id: id.to_string(),
                    size,
                }
            }
            other => {
                return Err(err(
                    kind_col,
                    TraceErrorKind::UnknownKind(other.to_string()),
                ))
            }
        };
        events.push(event);
    }
    Ok(events)
}

/// Renders events in canonical form: one event per line, single spaces.
pub fn serialize_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = match e {
            TraceEvent::Alloc { id, size } => writeln!(out, "a {id} {size}"),
            TraceEvent::Free { id } => writeln!(out, "f {id}"),
            TraceEvent::Realloc { id, size } => writeln!(out, "r {id} {size}"),
        };
    }
    out
}

/// Drops comments and blank lines and collapses whitespace.
pub fn normalize_trace(text: &str) -> String {
    let mut out = String::new();
    for raw in text.lines() {
        let toks: Vec<&str> = tokens(strip_comment(raw))
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        if !toks.is_empty() {
            out.push_str(&toks.join(" "));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("event {event}: {source}")]
    Alloc {
        /// 1-based event index.
        event: usize,
        #[source]
        source: AllocError,
    },
    #[error("event {event}: id `{id}` is not live")]
    NotLive { event: usize, id: String },
}

/// Power-of-two size histogram.
pub fn size_histogram(sizes: impl IntoIterator<Item = u64>) -> Vec<HistogramBucket> {
    let mut buckets: BTreeMap<u64, u64> = BTreeMap::new();
    for s in sizes {
        *buckets.entry(s.max(1).next_power_of_two()).or_default() += 1;
    }
    buckets
        .into_iter()
        .map(|(bucket_max, count)| HistogramBucket { bucket_max, count })
        .collect()
}

/// Replays `events` into a fresh arena and returns the arena with its stats.
pub fn replay_into(
    events: &[TraceEvent],
    cfg: ArenaConfig,
) -> Result<(Arena, ReplayStats), ReplayError> {
    let mut arena = Arena::new(cfg)?;
    let mut handles: HashMap<&str, AllocId> = HashMap::new();
    let mut sizes = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let event = i + 1;
        let alloc_err = |source| ReplayError::Alloc { event, source };
        let not_live = || ReplayError::NotLive {
            event,
            id: e.id().to_string(),
        };
        match e {
            TraceEvent::Alloc { id, size } => {
                let a = arena.alloc(*size).map_err(alloc_err)?;
                handles.insert(id, a.id);
                sizes.push(*size);
            }
            TraceEvent::Free { id } => {
                let h = handles.remove(id.as_str()).ok_or_else(not_live)?;
                arena.free(h).map_err(alloc_err)?;
            }
            TraceEvent::Realloc { id, size } => {
                let h = handles.get_mut(id.as_str()).ok_or_else(not_live)?;
                *h = arena.realloc(*h, *size).map_err(alloc_err)?.id;
                sizes.push(*size);
            }
        }
    }
    let stats = ReplayStats {
        arena: arena.stats(),
        peak_reserved: arena.peak_reserved(),
        histogram: size_histogram(sizes),
    };
    Ok((arena, stats))
}

pub fn replay(events: &[TraceEvent], cfg: ArenaConfig) -> Result<ReplayStats, ReplayError> {
    replay_into(events, cfg).map(|(_, stats)| stats)
}

/// Parameters of the synthetic trace generator.
///
/// Sizes are log-uniform on `[min_size, max_size]`, which puts most of the
/// mass on the small end; with probability `tail_probability` a size is
/// instead drawn uniformly from `(max_size, tail_max]`. Each step allocates
/// with probability `alloc_weight`, otherwise frees or (with probability
/// `realloc_weight`) reallocates a uniformly chosen live id. These are
/// synthetic parameters, not fitted to any captured workload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticTrace {
    pub events: usize,
    pub seed: u64,
    pub min_size: u64,
    pub max_size: u64,
    pub tail_probability: f64,
    pub tail_max: u64,
    pub alloc_weight: f64,
    pub realloc_weight: f64,
}

impl SyntheticTrace {
    /// The bundled small-object workload: 100,000 events with sizes 16..=128.
    pub fn small_objects() -> Self {
        Self {
            events: 100_000,
            seed: 0x5EED,
            min_size: 16,
            max_size: 128,
            tail_probability: 0.0,
            tail_max: 4096,
            alloc_weight: 0.55,
            realloc_weight: 0.10,
        }
    }

    fn size(&self, rng: &mut ChaCha8Rng) -> u64 {
        if self.tail_probability > 0.0 && rng.random_bool(self.tail_probability) {
            return rng.random_range(self.max_size + 1..=self.tail_max.max(self.max_size + 1));
        }
        let (lo, hi) = ((self.min_size.max(1)) as f64, (self.max_size + 1) as f64);
        let x = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        (x.floor() as u64).clamp(self.min_size, self.max_size)
    }

    pub fn generate(&self) -> Vec<TraceEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut live: Vec<String> = Vec::new();
        let mut next = 0u64;
        let mut out = Vec::with_capacity(self.events);
        for _ in 0..self.events {
            if live.is_empty() || rng.random_bool(self.alloc_weight) {
                let id = next.to_string();
                next += 1;
                out.push(TraceEvent::Alloc {
                    id: id.clone(),
                    size: self.size(&mut rng),
                });
                live.push(id);
            } else {
                let idx = rng.random_range(0..live.len());
                if rng.random_bool(self.realloc_weight) {
                    out.push(TraceEvent::Realloc {
                        id: live[idx].clone(),
                        size: self.size(&mut rng),
                    });
                } else {
                    out.push(TraceEvent::Free {
                        id: live.swap_remove(idx),
                    });
                }
            }
        }
        out
    }
}

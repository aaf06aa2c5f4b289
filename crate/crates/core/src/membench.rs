//! Alignment-penalty microbenchmark.
//!
//! Times a tight loop of `unroll` identical accesses of `width` bytes at one
//! of four controlled offsets inside a page-aligned buffer:
//!
//! * `A`  aligned to the access width,
//! * `U`  misaligned but inside one cache line,
//! * `BC` crossing a cache-line border inside one page,
//! * `BP` crossing a page border.
//!
//! Absolute timings are hardware dependent; the report carries the ratios
//! against `A` and flags the expected orderings as pass/warn.

use std::alloc::{self, Layout};
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::arena::crosses_border;

pub const DEFAULT_ITERATIONS: u64 = 134_217_728;
pub const DEFAULT_UNROLL: u32 = 48;
pub const COPY_BYTES: usize = 1 << 20;
pub const COPY_ITERATIONS: u64 = 100_000;

/// A timed loop must run for at least this many timer ticks.
const MIN_TICKS: u32 = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("access width {width} unsupported for a {cache_line}-byte cache line (need 2..cache_line, power of two, at most 16)")]
    Width { width: usize, cache_line: u64 },
    #[error(
        "iterations ({iterations}) must be non-zero and at least the unroll factor ({unroll})"
    )]
    Iterations { iterations: u64, unroll: u32 },
    #[error("offset {offset} does not realize class {class:?} for width {width}")]
    Offset {
        class: AccessClass,
        offset: u64,
        width: usize,
    },
    #[error("timer resolution {resolution:?} too coarse: loop took {elapsed:?}")]
    TimerResolution {
        resolution: Duration,
        elapsed: Duration,
    },
    #[error("buffer allocation failed")]
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AccessClass {
    A,
    U,
    BC,
    BP,
}

impl AccessClass {
    pub const ALL: [AccessClass; 4] = [
        AccessClass::A,
        AccessClass::U,
        AccessClass::BC,
        AccessClass::BP,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AccessClass::A => "A",
            AccessClass::U => "U",
            AccessClass::BC => "BC",
            AccessClass::BP => "BP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Load,
    Store,
    LoadStore,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Load, OpKind::Store, OpKind::LoadStore];

    pub fn label(self) -> &'static str {
        match self {
            OpKind::Load => "load",
            OpKind::Store => "store",
            OpKind::LoadStore => "load-store",
        }
    }
}

/// Classifies the byte span of an access against the borders.
pub fn classify_span(offset: u64, width: usize, cache_line: u64, page_size: u64) -> AccessClass {
    let w = width as u64;
    if crosses_border(offset, w, page_size) {
        AccessClass::BP
    } else if crosses_border(offset, w, cache_line) {
        AccessClass::BC
    } else if !offset.is_multiple_of(w) {
        AccessClass::U
    } else {
        AccessClass::A
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OffsetPlan {
    pub a: u64,
    pub u: u64,
    pub bc: u64,
    pub bp: u64,
}

impl OffsetPlan {
    pub fn get(&self, class: AccessClass) -> u64 {
        match class {
            AccessClass::A => self.a,
            AccessClass::U => self.u,
            AccessClass::BC => self.bc,
            AccessClass::BP => self.bp,
        }
    }
}

fn check_width(width: usize, cache_line: u64) -> Result<(), BenchError> {
    if !(2..=16).contains(&width) || !width.is_power_of_two() || width as u64 >= cache_line {
        return Err(BenchError::Width { width, cache_line });
    }
    Ok(())
}

/// Offsets (relative to a page-aligned buffer) that realize each class.
/// Each is re-classified before being returned.
pub fn plan_offsets(
    width: usize,
    cache_line: u64,
    page_size: u64,
) -> Result<OffsetPlan, BenchError> {
    check_width(width, cache_line)?;
    let half = width as u64 / 2;
    let plan = OffsetPlan {
        a: 0,
        u: 1,
        bc: cache_line - half,
        bp: page_size - half,
    };
    for class in AccessClass::ALL {
        let offset = plan.get(class);
        if classify_span(offset, width, cache_line, page_size) != class {
            return Err(BenchError::Offset {
                class,
                offset,
                width,
            });
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSpec {
    pub widths: Vec<usize>,
    pub ops: Vec<OpKind>,
    pub iterations: u64,
    pub unroll: u32,
    pub cache_line: u64,
    pub page_size: u64,
    /// Scale applied to the bulk-copy iteration count; 0 skips the copy study.
    pub copy_scale: f64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            widths: vec![8],
            ops: OpKind::ALL.to_vec(),
            iterations: DEFAULT_ITERATIONS,
            unroll: DEFAULT_UNROLL,
            cache_line: 64,
            page_size: 4096,
            copy_scale: 0.0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.iterations == 0 || self.iterations < self.unroll as u64 || self.unroll == 0 {
            return Err(BenchError::Iterations {
                iterations: self.iterations,
                unroll: self.unroll,
            });
        }
        for &w in &self.widths {
            plan_offsets(w, self.cache_line, self.page_size)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchCell {
    pub class: AccessClass,
    pub width: usize,
    pub op: OpKind,
    pub offset: u64,
    pub seconds: f64,
    /// Time relative to class `A` of the same width and op.
    pub ratio: f64,
    pub penalty_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CopyCell {
    pub src_offset: u64,
    pub dst_offset: u64,
    pub bytes: usize,
    pub iterations: u64,
    pub seconds: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingCheck {
    pub width: usize,
    pub op: OpKind,
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub cache_line: u64,
    pub page_size: u64,
    pub timer_resolution_ns: u64,
    pub pinned: bool,
    pub arch: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub iterations: u64,
    pub unroll: u32,
    pub cells: Vec<BenchCell>,
    pub copies: Vec<CopyCell>,
    pub checks: Vec<OrderingCheck>,
}

impl BenchReport {
    pub fn cell(&self, class: AccessClass, width: usize, op: OpKind) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.class == class && c.width == width && c.op == op)
    }

    /// CSV with columns `class,width,op,seconds,ratio`. Bulk-copy rows use
    /// `copy-<src>-<dst>` as the class and the copy size as the width.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,width,op,seconds,ratio\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.6}",
                c.class.label(),
                c.width,
                c.op.label(),
                c.seconds,
                c.ratio
            );
        }
        for c in &self.copies {
            let _ = writeln!(
                out,
                "copy-{}-{},{},bulk-copy,{:.9},{:.6}",
                c.src_offset, c.dst_offset, c.bytes, c.seconds, c.ratio
            );
        }
        out
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

/// Page-aligned scratch buffer, zeroed so every page is touched up front.
struct Buffer {
    ptr: *mut u8,
    layout: Layout,
}

impl Buffer {
    fn new(len: usize, align: usize) -> Result<Self, BenchError> {
        let layout = Layout::from_size_align(len, align).map_err(|_| BenchError::Buffer)?;
        // SAFETY: non-zero size.
        let ptr = unsafe { alloc::alloc_zeroed(layout) };
        if ptr.is_null() {
            return Err(BenchError::Buffer);
        }
        Ok(Self { ptr, layout })
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        // SAFETY: allocated with this layout in `Buffer::new`.
        unsafe { alloc::dealloc(self.ptr, self.layout) }
    }
}

macro_rules! access_loop {
    ($ty:ty, $p:expr, $outer:expr, $unroll:expr, $op:expr) => {{
        let p = $p as *mut $ty;
        match $op {
            OpKind::Load => {
                for _ in 0..$outer {
                    for _ in 0..$unroll {
                        // SAFETY: `p` points inside the buffer with room for one value.
                        black_box(unsafe { black_box(p).read_unaligned() });
                    }
                }
            }
            OpKind::Store => {
                for i in 0..$outer {
                    for _ in 0..$unroll {
                        // SAFETY: as above.
                        unsafe { black_box(p).write_unaligned(black_box(i as $ty)) };
                    }
                }
            }
            OpKind::LoadStore => {
                for _ in 0..$outer {
                    for _ in 0..$unroll {
                        // SAFETY: as above.
                        unsafe {
                            let q = black_box(p);
                            q.write_unaligned(q.read_unaligned().wrapping_add(1));
                        }
                    }
                }
            }
        }
    }};
}

fn time_access(
    buf: &Buffer,
    offset: u64,
    width: usize,
    op: OpKind,
    outer: u64,
    unroll: u32,
) -> Duration {
    // SAFETY: offset + width stays within the two-page buffer.
    let p = unsafe { buf.ptr.add(offset as usize) };
    let start = Instant::now();
    match width {
        2 => access_loop!(u16, p, outer, unroll, op),
        4 => access_loop!(u32, p, outer, unroll, op),
        8 => access_loop!(u64, p, outer, unroll, op),
        16 => access_loop!(u128, p, outer, unroll, op),
        _ => unreachable!("width validated"),
    }
    start.elapsed()
}

fn ordering_checks(report: &BenchReport, width: usize, op: OpKind) -> Vec<OrderingCheck> {
    let ratio = |class| report.cell(class, width, op).map_or(f64::NAN, |c| c.ratio);
    let (u, bc, bp) = (
        ratio(AccessClass::U),
        ratio(AccessClass::BC),
        ratio(AccessClass::BP),
    );
    let check = |name, ok: bool, detail: String| OrderingCheck {
        width,
        op,
        name,
        status: if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Warn
        },
        detail,
    };
    vec![
        check(
            "unaligned-inside-line-free",
            u <= 1.10,
            format!("U/A = {u:.3} (expected ~1.0)"),
        ),
        check(
            "border-cache-elevated",
            bc > u,
            format!("BC/A = {bc:.3} vs U/A = {u:.3}"),
        ),
        check(
            "border-page-highest",
            bp >= bc,
            format!("BP/A = {bp:.3} vs BC/A = {bc:.3}"),
        ),
    ]
}

/// Runs every (width, op, class) cell and the optional bulk-copy study.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let resolution = timer_resolution();
    let buf = Buffer::new(2 * spec.page_size as usize, spec.page_size as usize)?;
    let outer = spec.iterations / spec.unroll as u64;

    let mut report = BenchReport {
        environment: Environment {
            cache_line: spec.cache_line,
            page_size: spec.page_size,
            timer_resolution_ns: resolution.as_nanos() as u64,
            pinned: false,
            arch: std::env::consts::ARCH,
        },
        iterations: spec.iterations,
        unroll: spec.unroll,
        cells: Vec::new(),
        copies: Vec::new(),
        checks: Vec::new(),
    };

    for &width in &spec.widths {
        let plan = plan_offsets(width, spec.cache_line, spec.page_size)?;
        for &op in &spec.ops {
            let mut times = Vec::with_capacity(4);
            for class in AccessClass::ALL {
                let elapsed = time_access(&buf, plan.get(class), width, op, outer, spec.unroll);
                if elapsed < resolution * MIN_TICKS {
                    return Err(BenchError::TimerResolution {
                        resolution,
                        elapsed,
                    });
                }
                times.push((class, elapsed.as_secs_f64()));
            }
            let base = times[0].1;
            for (class, seconds) in times {
                let ratio = seconds / base;
                report.cells.push(BenchCell {
                    class,
                    width,
                    op,
                    offset: plan.get(class),
                    seconds,
                    ratio,
                    penalty_pct: (ratio - 1.0) * 100.0,
                });
            }
            let checks = ordering_checks(&report, width, op);
            report.checks.extend(checks);
        }
    }

    if spec.copy_scale > 0.0 {
        report.copies = run_copy_study(spec.copy_scale, resolution)?;
    }
    Ok(report)
}

/// Bulk copies of [`COPY_BYTES`] with aligned and misaligned endpoints.
fn run_copy_study(scale: f64, resolution: Duration) -> Result<Vec<CopyCell>, BenchError> {
    let iterations = ((COPY_ITERATIONS as f64 * scale).round() as u64).max(1);
    let src = Buffer::new(COPY_BYTES + 64, 4096)?;
    let dst = Buffer::new(COPY_BYTES + 64, 4096)?;
    let mut cells: Vec<CopyCell> = Vec::new();
    for (src_offset, dst_offset) in [(0u64, 0u64), (1, 0), (0, 1), (1, 1)] {
        let start = Instant::now();
        for _ in 0..iterations {
            // SAFETY: both buffers have COPY_BYTES + 64 bytes and are distinct.
            unsafe {
                std::ptr::copy_nonoverlapping(
                    black_box(src.ptr.add(src_offset as usize)),
                    black_box(dst.ptr.add(dst_offset as usize)),
                    COPY_BYTES,
                );
            }
            black_box(dst.ptr);
        }
        let elapsed = start.elapsed();
        if elapsed < resolution * MIN_TICKS {
            return Err(BenchError::TimerResolution {
                resolution,
                elapsed,
            });
        }
        let seconds = elapsed.as_secs_f64();
        let ratio = cells.first().map_or(1.0, |a| seconds / a.seconds);
        cells.push(CopyCell {
            src_offset,
            dst_offset,
            bytes: COPY_BYTES,
            iterations,
            seconds,
            ratio,
        });
    }
    Ok(cells)
}

/// Cells whose timing moved by more than `tolerance` (fractional) between two
/// runs of the same spec.
pub fn unstable_cells(
    a: &BenchReport,
    b: &BenchReport,
    tolerance: f64,
) -> Vec<(AccessClass, usize, OpKind)> {
    a.cells
        .iter()
        .filter_map(|x| {
            let y = b.cell(x.class, x.width, x.op)?;
            ((x.seconds - y.seconds).abs() / x.seconds > tolerance)
                .then_some((x.class, x.width, x.op))
        })
        .collect()
}

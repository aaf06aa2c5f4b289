//! The `ruma` command line.
//!
//! Exit codes: 0 on success, 1 on a positive domain verdict (for example
//! `filter-check` finding a BSI address), 2 on usage or input errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::addr_filter::{range_contains_half_period, scan_bsi, AddressRange};
use crate::config::{parse_u64, ArenaConfig, PointerWidth};
use crate::membench::{run_bench, BenchSpec, OpKind, DEFAULT_ITERATIONS, DEFAULT_UNROLL};
use crate::spray::{chained_success, monte_carlo, AttackScenario, SprayPattern};
use crate::trace::{parse_trace, replay, serialize_trace, SyntheticTrace, TraceEvent};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ruma",
    version,
    about = "Byte-granularity heap randomization toolkit",
    disable_help_subcommand = true
)]
pub struct Cli {
    /// Root seed for every random choice (falls back to RUMA_SEED)
    #[arg(long, global = true, env = "RUMA_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Emit compact single-line JSON instead of pretty-printed JSON
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay an allocation trace through an arena and print its stats
    Replay(ReplayArgs),
    /// Compute exact and Monte Carlo pointer-spray success probabilities
    SpraySim(SprayArgs),
    /// Run the alignment microbenchmark
    Bench(BenchArgs),
    /// Check whether a 32-bit address range covers a BSI address
    FilterCheck(FilterArgs),
    /// Generate a synthetic small-object trace
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trace file to replay
    #[arg(long)]
    pub trace: PathBuf,
    /// Byte-granularity randomization
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub randomize: Switch,
    /// Arena config file (key=value)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pointer width in bytes (4 or 8)
    #[arg(long)]
    pub width: Option<u64>,
    /// Address-space width in bits (32 or 64)
    #[arg(long)]
    pub bits: Option<u32>,
    /// Exclude byte-shift-independent addresses (32-bit only)
    #[arg(long)]
    pub filter_bsi: bool,
}

#[derive(Debug, Args)]
pub struct SprayArgs {
    /// Pointer width in bytes (4 or 8)
    #[arg(long, default_value_t = 8)]
    pub width: u64,
    /// Randomization granularity in bytes
    #[arg(long, default_value_t = 1)]
    pub granularity: u64,
    /// Number of chained crafted-pointer dereferences
    #[arg(long, default_value_t = 1)]
    pub chain: u32,
    /// Sprayed pointer value in hex
    #[arg(long, default_value = "deadbeefcafebabe")]
    pub pattern: String,
    /// Monte Carlo trials
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Access width in bytes; repeat for several widths
    #[arg(long, default_values_t = [8usize])]
    pub width: Vec<usize>,
    /// Timed accesses per cell
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iters: u64,
    /// Back-to-back repetitions of the access per loop turn
    #[arg(long, default_value_t = DEFAULT_UNROLL)]
    pub unroll: u32,
    /// Scale factor for the 100,000-iteration bulk copy study (0 skips it)
    #[arg(long, default_value_t = 0.001)]
    pub scale: f64,
    /// Write the cells as CSV to this path
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Cache line size in bytes
    #[arg(long, default_value_t = 64)]
    pub cache_line: u64,
    /// Page size in bytes
    #[arg(long, default_value_t = 4096)]
    pub page_size: u64,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Range start, hex
    #[arg(long)]
    pub start: String,
    /// Range length in bytes (decimal or 0x-hex)
    #[arg(long)]
    pub len: String,
    /// Also flag half-period addresses such as 0x35343534
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    /// Number of events
    #[arg(long, default_value_t = 100_000)]
    pub events: usize,
    /// Smallest request size
    #[arg(long, default_value_t = 16)]
    pub min_size: u64,
    /// Largest request size
    #[arg(long, default_value_t = 128)]
    pub max_size: u64,
    /// Output path; the trace goes to stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

fn parse_hex(value: &str) -> Result<u64, Failure> {
    let digits = value.trim_start_matches("0x").trim_start_matches("0X");
    u64::from_str_radix(&digits.replace('_', ""), 16)
        .map_err(|e| usage(format!("invalid hex value `{value}`: {e}")))
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn emit(cli: &Cli, out: &mut dyn Write, value: &impl Serialize) -> Result<(), Failure> {
    let text = if cli.json {
        serde_json::to_string(value)
    } else {
        serde_json::to_string_pretty(value)
    }
    .map_err(usage)?;
    writeln!(out, "{text}").map_err(usage)
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match &cli.command {
        Command::Replay(args) => {
            let mut cfg = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    ArenaConfig::from_kv(&text).map_err(usage)?
                }
                None => ArenaConfig::default(),
            };
            cfg.randomize = args.randomize == Switch::On;
            cfg.rng_seed = cli.seed;
            if let Some(w) = args.width {
                cfg.pointer_width = PointerWidth::try_from(w).map_err(usage)?;
            }
            if let Some(bits) = args.bits {
                cfg.address_space_bits = bits;
            }
            cfg.filter_bsi |= args.filter_bsi;
            cfg.validate().map_err(usage)?;
            let text = std::fs::read_to_string(&args.trace)
                .map_err(|e| usage(format!("{}: {e}", args.trace.display())))?;
            let events = parse_trace(&text).map_err(usage)?;
            let stats = replay(&events, cfg).map_err(usage)?;
            emit(cli, out, &stats)?;
            Ok(EXIT_OK)
        }
        Command::SpraySim(args) => {
            let width = PointerWidth::try_from(args.width).map_err(usage)?;
            let pattern = SprayPattern::new(parse_hex(&args.pattern)?, width).map_err(usage)?;
            let scenario =
                AttackScenario::new(pattern, args.granularity, args.chain).map_err(usage)?;
            let exact = chained_success(&scenario).map_err(usage)?;
            let mc = monte_carlo(&scenario, args.trials, cli.seed).map_err(usage)?;
            emit(
                cli,
                out,
                &json!({
                    "width": args.width,
                    "granularity": args.granularity,
                    "chain": args.chain,
                    "pattern": format!("{:x}", pattern.value()),
                    "seed": cli.seed,
                    "exact": exact.probability,
                    "successes_exact": exact.successes,
                    "tuples": exact.tuples,
                    "trials": mc.trials,
                    "successes": mc.successes,
                    "estimate": mc.estimate,
                    "ci_low": mc.ci_low,
                    "ci_high": mc.ci_high,
                }),
            )?;
            Ok(EXIT_OK)
        }
        Command::Bench(args) => {
            let spec = BenchSpec {
                widths: args.width.clone(),
                ops: OpKind::ALL.to_vec(),
                iterations: args.iters,
                unroll: args.unroll,
                cache_line: args.cache_line,
                page_size: args.page_size,
                copy_scale: args.scale,
            };
            let report = run_bench(&spec).map_err(usage)?;
            if let Some(path) = &args.csv {
                std::fs::write(path, report.to_csv())
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            }
            emit(cli, out, &report)?;
            Ok(EXIT_OK)
        }
        Command::FilterCheck(args) => {
            let start = parse_hex(&args.start)?;
            let start = u32::try_from(start)
                .map_err(|_| usage(format!("start {start:#x} exceeds 32 bits")))?;
            let len = parse_u64(&args.len).map_err(usage)?;
            let range = AddressRange::new(start, len).map_err(usage)?;
            let scan = scan_bsi(range);
            let half_period = range_contains_half_period(range);
            let flagged = scan.contains || (args.strict && half_period);
            emit(
                cli,
                out,
                &json!({
                    "start": format!("{start:#010x}"),
                    "len": len,
                    "contains": scan.contains,
                    "candidates": scan.candidates,
                    "strict": args.strict,
                    "half_period": half_period,
                    "flagged": flagged,
                }),
            )?;
            Ok(if flagged { EXIT_VERDICT } else { EXIT_OK })
        }
        Command::GenTrace(args) => {
            if args.min_size > args.max_size {
                return Err(usage("--min-size exceeds --max-size"));
            }
            let params = SyntheticTrace {
                events: args.events,
                seed: cli.seed,
                min_size: args.min_size,
                max_size: args.max_size,
                ..SyntheticTrace::small_objects()
            };
            let events = params.generate();
            let text = serialize_trace(&events);
            match &args.out {
                Some(path) => {
                    std::fs::write(path, &text)
                        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    let count = |f: fn(&TraceEvent) -> bool| events.iter().filter(|e| f(e)).count();
                    emit(
                        cli,
                        out,
                        &json!({
                            "path": path.display().to_string(),
                            "events": events.len(),
                            "allocs": count(|e| matches!(e, TraceEvent::Alloc { .. })),
                            "frees": count(|e| matches!(e, TraceEvent::Free { .. })),
                            "reallocs": count(|e| matches!(e, TraceEvent::Realloc { .. })),
                            "generator": params,
                        }),
                    )?;
                }
                None => out.write_all(text.as_bytes()).map_err(usage)?,
            }
            Ok(EXIT_OK)
        }
    }
}

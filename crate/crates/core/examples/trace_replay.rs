//! Generate a synthetic trace, round-trip it through text, and replay it with
//! and without randomization.

use ruma::trace::{parse_trace, replay, serialize_trace, SyntheticTrace};
use ruma::ArenaConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let events = SyntheticTrace {
        events: 20_000,
        ..SyntheticTrace::small_objects()
    }
    .generate();
    let text = serialize_trace(&events);
    println!(
        "first lines:\n{}",
        text.lines().take(4).collect::<Vec<_>>().join("\n")
    );
    let parsed = parse_trace(&text)?;
    assert_eq!(parsed, events);

    for randomize in [false, true] {
        let stats = replay(
            &parsed,
            ArenaConfig {
                randomize,
                ..ArenaConfig::default()
            },
        )?;
        println!(
            "\nrandomize {randomize}: {} live, overhead {:.4}x, peak reserved {} B",
            stats.arena.live_allocations, stats.arena.overhead_ratio, stats.peak_reserved
        );
        println!("  offsets: {:?}", stats.arena.offset_histogram);
    }
    let stats = replay(&parsed, ArenaConfig::default())?;
    println!("\nsize histogram:");
    for b in &stats.histogram {
        println!("  <= {:>4}: {}", b.bucket_max, b.count);
    }
    Ok(())
}

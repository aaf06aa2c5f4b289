//! Allocate a handful of chunks and show where the randomized offsets put them.

use ruma::{Arena, ArenaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut arena = Arena::new(ArenaConfig {
        rng_seed: 42,
        ..ArenaConfig::default()
    })?;

    println!("size classes:");
    for c in arena.size_classes().classes() {
        println!(
            "  max {:>5}  stride {:>5}  {} per run  {:?}",
            c.max_size, c.stride, c.slots_per_run, c.tier
        );
    }

    println!(
        "\n{:>6} {:>16} {:>7} {:>9} {:>9}",
        "size", "start", "offset", "reserved", "promoted"
    );
    let mut ids = Vec::new();
    for size in [1, 8, 24, 40, 56, 100, 500, 3000, 9000] {
        let a = arena.alloc(size)?;
        println!(
            "{:>6} {:>#16x} {:>7} {:>9} {:>9}",
            size, a.start, a.offset, a.reserved, a.promotion_bytes
        );
        ids.push(a.id);
    }

    // A freed slot is reused, but with a freshly drawn offset.
    let first = arena.get(ids[2]).copied().expect("live");
    arena.free(first.id)?;
    let again = arena.alloc(24)?;
    println!(
        "\nreused slot {:#x}: offset {} -> {}",
        again.slot_base, first.offset, again.offset
    );

    let grown = arena.realloc(ids[0], 200)?;
    println!("realloc 1 -> 200 bytes moved to {:#x}", grown.start);

    let stats = arena.stats();
    println!(
        "\nlive {} chunks, {} B requested, {} B reserved (overhead {:.3}x)",
        stats.live_allocations, stats.live_bytes, stats.reserved_bytes, stats.overhead_ratio
    );
    arena.check_invariants()?;
    Ok(())
}

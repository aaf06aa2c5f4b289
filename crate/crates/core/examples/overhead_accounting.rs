//! Every extra byte reserved by randomization is either per-chunk padding or
//! a class promotion; this prints the ledger for the small-object workload.

use ruma::trace::{replay, SyntheticTrace};
use ruma::ArenaConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let events = SyntheticTrace::small_objects().generate();
    let on = replay(&events, ArenaConfig::default())?.arena;
    let off = replay(
        &events,
        ArenaConfig {
            randomize: false,
            ..ArenaConfig::default()
        },
    )?
    .arena;

    let delta = on.reserved_bytes as i64 - off.reserved_bytes as i64;
    let explained =
        on.padding_bytes as i64 + on.promotion_bytes as i64 - off.promotion_bytes as i64;
    println!("live requested       {:>10} B", on.live_bytes);
    println!(
        "reserved (baseline)  {:>10} B  overhead {:.4}x",
        off.reserved_bytes, off.overhead_ratio
    );
    println!(
        "reserved (random)    {:>10} B  overhead {:.4}x",
        on.reserved_bytes, on.overhead_ratio
    );
    println!("delta                {delta:>10} B");
    println!("  padding            {:>10} B", on.padding_bytes);
    println!("  promotions         {:>10} B", on.promotion_bytes);
    println!("  baseline promotions {:>9} B", off.promotion_bytes);
    println!(
        "explained            {explained:>10} B  ({})",
        if delta == explained {
            "exact"
        } else {
            "MISMATCH"
        }
    );
    Ok(())
}

//! In a 32-bit address space a repeated-byte address (0x41414141, ...) reads
//! the same at every byte shift. The filter keeps chunks off those addresses.

use ruma::addr_filter::scan_bsi;
use ruma::{is_bsi_address, AddressRange, Arena, ArenaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (start, len) in [
        (0x4141_4100u32, 0x100u64),
        (0x4141_4142, 0x100),
        (0x1000_0000, 0x0200_0000),
    ] {
        let scan = scan_bsi(AddressRange::new(start, len)?);
        println!(
            "[{start:#010x}, +{len:#x}) contains BSI: {:<5} ({} candidate checks)",
            scan.contains, scan.candidates
        );
    }

    // The arena straddles 0x11111111, 0x12121212 and 0x13131313.
    let cfg = ArenaConfig {
        base_address: Some(0x1111_0000),
        arena_capacity: 0x0300_0000,
        ..ArenaConfig::filtered_32()
    };
    for filter_bsi in [false, true] {
        let mut arena = Arena::new(ArenaConfig {
            filter_bsi,
            ..cfg.clone()
        })?;
        let mut on_bsi = 0;
        let mut live = std::collections::VecDeque::new();
        for i in 0..200_000u64 {
            let a = arena.alloc(16 + (i * 7919) % 4000)?;
            on_bsi += (a.start..a.end().max(a.start + 1)).any(|x| is_bsi_address(x as u32)) as u32;
            live.push_back(a.id);
            if live.len() > 4000 {
                arena.free(live.pop_front().expect("non-empty"))?;
            }
        }
        let f = arena.stats().filter;
        println!(
            "filter {:<5}: {on_bsi} chunks cover a BSI address; {} spans checked, {} rejected",
            filter_bsi, f.spans_checked, f.rejections
        );
    }
    Ok(())
}

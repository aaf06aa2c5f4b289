//! Backed mode: chunks are real memory, so data can be written and read back.

use ruma::{Arena, ArenaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut arena = Arena::new(ArenaConfig {
        backed: true,
        arena_capacity: 4 << 20,
        ..ArenaConfig::default()
    })?;
    println!("backing region at {:#x}", arena.base());

    let greeting = arena.alloc(13)?;
    arena
        .bytes_mut(greeting.id)?
        .copy_from_slice(b"hello, arena!");
    println!(
        "wrote {:?} at {:#x} (start mod 8 = {})",
        std::str::from_utf8(arena.bytes(greeting.id)?)?,
        greeting.start,
        greeting.start % 8
    );

    // realloc copies the old contents into the new chunk.
    let longer = arena.realloc(greeting.id, 40)?;
    arena.bytes_mut(longer.id)?[13..].copy_from_slice(b" and 27 more bytes of room.");
    println!(
        "after realloc: {:?}",
        std::str::from_utf8(arena.bytes(longer.id)?)?
    );

    // Aligned requests skip randomization and honour the alignment.
    let vec = arena.alloc_aligned(64, 32)?;
    println!(
        "aligned(32) chunk at {:#x}, offset {}",
        vec.start, vec.offset
    );

    let mut line_straddles = 0;
    for i in 0..10_000u64 {
        let a = arena.alloc(i % 56)?;
        line_straddles += (a.requested > 0 && a.start / 64 != (a.end() - 1) / 64) as u32;
        arena.free(a.id)?;
    }
    println!("10000 small chunks, {line_straddles} cache-line straddles");
    Ok(())
}

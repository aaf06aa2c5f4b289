mod common;

use common::{chi_square_critical, chi_square_uniform, random_ops, straddles_line, straddles_page};
use proptest::prelude::*;
use ruma::arena::crosses_border;
use ruma::size_class::Tier;
use ruma::{AllocError, Arena, ArenaConfig, PointerWidth};

fn cfg() -> ArenaConfig {
    ArenaConfig {
        arena_capacity: 1 << 30,
        ..ArenaConfig::default()
    }
}

#[test]
fn wide_cache_line_table_has_no_straddling_slot() {
    let c = ArenaConfig {
        cache_line: 128,
        ..cfg()
    };
    let arena = Arena::new(c).unwrap();
    for class in arena.size_classes().classes() {
        if class.max_size + 8 <= 128 {
            assert_eq!(class.tier, Tier::Line);
        }
        for slot in 0..class.slots_per_run {
            let start = slot * class.stride;
            match class.tier {
                Tier::Line => assert!(!crosses_border(start, class.stride, 128)),
                Tier::Page => assert!(!crosses_border(start, class.stride, 4096)),
            }
        }
    }
    let mut arena = Arena::new(ArenaConfig {
        cache_line: 128,
        ..cfg()
    })
    .unwrap();
    for size in 0..=120 {
        let a = arena.alloc(size).unwrap();
        assert!(!straddles_line(&a, 128), "{a:?}");
    }
}

#[test]
fn offset_residues_uniform_for_size_24() {
    let mut arena = Arena::new(cfg()).unwrap();
    let mut counts = [0u64; 8];
    for _ in 0..80_000 {
        let a = arena.alloc(24).unwrap();
        counts[(a.start % 8) as usize] += 1;
    }
    let stat = chi_square_uniform(&counts);
    assert!(
        stat < chi_square_critical(7, 0.001),
        "chi2 = {stat}, counts = {counts:?}"
    );
}

#[test]
fn reused_slot_gets_fresh_offset() {
    // Same slot every round; the drawn offset must still be uniform.
    let mut arena = Arena::new(cfg()).unwrap();
    let mut counts = [0u64; 8];
    let first = arena.alloc(24).unwrap();
    arena.free(first.id).unwrap();
    for _ in 0..40_000 {
        let b = arena.alloc(24).unwrap();
        assert_eq!(b.slot_base, first.slot_base);
        counts[b.offset as usize] += 1;
        arena.free(b.id).unwrap();
    }
    assert!(chi_square_uniform(&counts) < chi_square_critical(7, 0.001));
}

#[test]
fn thousand_small_chunks_accounting() {
    let mut arena = Arena::new(cfg()).unwrap();
    let allocs: Vec<_> = (0..1000).map(|_| arena.alloc(24).unwrap()).collect();
    let stats = arena.stats();
    assert_eq!(stats.line_straddles, 0);
    let requested: u64 = allocs.iter().map(|a| a.requested).sum();
    let reserved: u64 = allocs.iter().map(|a| a.reserved).sum();
    assert!(allocs.iter().all(|a| a.reserved >= a.requested + 8));
    assert_eq!(stats.live_bytes, requested);
    assert_eq!(stats.reserved_bytes, reserved);
    assert_eq!(stats.overhead_ratio, reserved as f64 / requested as f64);
    assert_eq!(stats.offset_histogram.iter().sum::<u64>(), 1000);
}

#[test]
fn straddle_counts_match_recount() {
    let (arena, _) = random_ops(cfg(), 20_000, 5, 2_000);
    let stats = arena.stats();
    let line = arena
        .live_allocations()
        .filter(|a| straddles_line(a, 64))
        .count() as u64;
    let page = arena
        .live_allocations()
        .filter(|a| straddles_page(a, 4096))
        .count() as u64;
    assert_eq!((stats.line_straddles, stats.page_straddles), (line, page));
    let occupancy: u64 = stats.per_class.iter().map(|c| c.live).sum::<u64>() + stats.large_live;
    assert_eq!(occupancy, stats.live_allocations);
}

#[test]
fn random_ops_keep_invariants_both_widths() {
    for (width, bits) in [(PointerWidth::Eight, 64), (PointerWidth::Four, 32)] {
        let c = ArenaConfig {
            pointer_width: width,
            address_space_bits: bits,
            arena_capacity: 1 << 28,
            ..ArenaConfig::default()
        };
        let (arena, r) = random_ops(c, 50_000, 11, 3_000);
        assert_eq!(
            (r.line_violations, r.page_violations, r.overlaps),
            (0, 0, 0)
        );
        assert!(r.line_checked > 1000 && r.page_checked > 1000);
        arena.check_invariants().unwrap();
    }
}

#[test]
fn reserved_space_bound() {
    let mut arena = Arena::new(cfg()).unwrap();
    for size in 0..6000u64 {
        let a = arena.alloc(size).unwrap();
        let need = size + 8;
        let bound = if need <= 4096 {
            need.max(16).next_power_of_two()
        } else {
            need.div_ceil(4096) * 4096
        };
        assert!(a.reserved <= bound, "{a:?}");
        assert!(a.reserved >= need);
    }
}

#[test]
fn backed_mode_data_integrity() {
    let mut arena = Arena::new(ArenaConfig {
        backed: true,
        arena_capacity: 16 << 20,
        ..ArenaConfig::default()
    })
    .unwrap();
    assert!(arena.is_backed());
    let mut keep = Vec::new();
    for i in 0..500u64 {
        let size = 1 + (i * 37) % 5000;
        let a = arena.alloc(size).unwrap();
        let fill = (i % 251) as u8;
        arena.bytes_mut(a.id).unwrap().fill(fill);
        keep.push((a.id, fill));
        let junk = arena.alloc(size / 2 + 1).unwrap();
        arena.bytes_mut(junk.id).unwrap().fill(0xEE);
        arena.free(junk.id).unwrap();
    }
    for (i, (id, fill)) in keep.iter_mut().enumerate() {
        if i % 3 == 0 {
            let old_len = arena.get(*id).unwrap().requested;
            let new = arena.realloc(*id, old_len + 100).unwrap();
            assert!(arena.bytes(new.id).unwrap()[..old_len as usize]
                .iter()
                .all(|b| b == fill));
            arena.bytes_mut(new.id).unwrap()[old_len as usize..].fill(*fill);
            *id = new.id;
        }
    }
    for (id, fill) in &keep {
        assert!(arena.bytes(*id).unwrap().iter().all(|b| b == fill));
    }
    arena.check_invariants().unwrap();
}

#[test]
fn backed_mode_matches_border_rules_on_real_addresses() {
    let mut arena = Arena::new(ArenaConfig {
        backed: true,
        arena_capacity: 8 << 20,
        ..ArenaConfig::default()
    })
    .unwrap();
    assert_eq!(arena.base() % 4096, 0);
    for size in 0..3000 {
        let a = arena.alloc(size).unwrap();
        if size + 8 <= 64 {
            assert!(!straddles_line(&a, 64));
        } else if size + 8 <= 4096 {
            assert!(!straddles_page(&a, 4096));
        }
    }
}

#[test]
fn capacity_exhaustion_is_not_config_error() {
    let mut arena = Arena::new(ArenaConfig {
        arena_capacity: 4096 * 2,
        ..ArenaConfig::default()
    })
    .unwrap();
    let mut n = 0;
    let err = loop {
        match arena.alloc(1000) {
            Ok(_) => n += 1,
            Err(e) => break e,
        }
    };
    assert_eq!(n, 8);
    assert!(matches!(err, AllocError::OutOfCapacity { .. }));
}

#[derive(Debug, Clone)]
enum Op {
    Alloc(u64),
    Free(usize),
    Realloc(usize, u64),
}

fn op() -> impl Strategy<Value = Op> {
    let size = prop_oneof![0u64..=64, 65u64..=4096, 4097u64..=12_000];
    prop_oneof![
        3 => size.clone().prop_map(Op::Alloc),
        2 => any::<usize>().prop_map(Op::Free),
        1 => (any::<usize>(), size).prop_map(|(i, s)| Op::Realloc(i, s)),
    ]
}

fn run_ops(cfg: ArenaConfig, ops: &[Op]) -> (Arena, Vec<u64>) {
    let mut arena = Arena::new(cfg).unwrap();
    let mut live = Vec::new();
    let mut starts = Vec::new();
    for op in ops {
        match *op {
            Op::Alloc(s) => {
                let a = arena.alloc(s).unwrap();
                starts.push(a.start);
                live.push(a.id);
            }
            Op::Free(i) if !live.is_empty() => {
                let id = live.swap_remove(i % live.len());
                arena.free(id).unwrap();
            }
            Op::Realloc(i, s) if !live.is_empty() => {
                let i = i % live.len();
                let a = arena.realloc(live[i], s).unwrap();
                starts.push(a.start);
                live[i] = a.id;
            }
            _ => {}
        }
        arena.check_invariants().unwrap();
    }
    (arena, starts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariants_hold_after_every_mutation(ops in prop::collection::vec(op(), 1..200), seed: u64) {
        run_ops(ArenaConfig { rng_seed: seed, ..cfg() }, &ops);
    }

    #[test]
    fn same_seed_same_addresses(ops in prop::collection::vec(op(), 1..150), seed: u64) {
        let c = ArenaConfig { rng_seed: seed, ..cfg() };
        prop_assert_eq!(run_ops(c.clone(), &ops).1, run_ops(c, &ops).1);
    }

    #[test]
    fn baseline_starts_word_aligned(ops in prop::collection::vec(op(), 1..150), four: bool) {
        let c = ArenaConfig {
            randomize: false,
            pointer_width: if four { PointerWidth::Four } else { PointerWidth::Eight },
            ..cfg()
        };
        let w = c.pointer_width.bytes();
        let (_, starts) = run_ops(c, &ops);
        prop_assert!(starts.iter().all(|s| s % w == 0));
    }
}

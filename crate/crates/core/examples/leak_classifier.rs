//! A leak analysis that tags words by their low bit gets confused once the
//! dump is read at a byte shift.

use ruma::spray::{leak_classify, reread_at_shift, LeakClass};

fn main() {
    // Tagged pointers (low bit set) interleaved with small even integers.
    let dump: Vec<u64> = (0..16u64)
        .map(|i| {
            let mix = i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            if i % 2 == 0 {
                0x0000_7f00_0000_0001 | (mix >> 24 & 0xff_ffff_fff0)
            } else {
                (mix >> 40) & !1
            }
        })
        .collect();
    let truth = leak_classify(&dump);
    for shift in 0..8 {
        let view = reread_at_shift(&dump, shift);
        let seen = leak_classify(&view);
        let agree = seen.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let pointers = seen
            .iter()
            .filter(|c| **c == LeakClass::PointerLike)
            .count();
        println!(
            "shift {shift}: {} words, {pointers} look like pointers, {agree}/{} match the unshifted labels",
            view.len(),
            seen.len()
        );
    }
}

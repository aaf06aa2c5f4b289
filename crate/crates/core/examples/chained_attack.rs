//! Exploits that chain several crafted pointers must win every shift.

use ruma::spray::{chained_success, AttackScenario, SprayPattern};
use ruma::PointerWidth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for width in [PointerWidth::Four, PointerWidth::Eight] {
        let pattern = match width {
            PointerWidth::Four => SprayPattern::new(0x1234_5678, width)?,
            PointerWidth::Eight => SprayPattern::new(0x0123_4567_89ab_cdef, width)?,
        };
        println!("w = {}:", width.bytes());
        for k in 1..=10 {
            let out = chained_success(&AttackScenario::new(pattern, 1, k)?)?;
            let how = match (out.successes, out.tuples) {
                (Some(s), Some(t)) => format!("{s}/{t} shift tuples"),
                _ => "closed form".to_string(),
            };
            println!("  k = {k:>2}: {:>12.3e}  ({how})", out.probability);
        }
    }
    Ok(())
}

//! How much byte-granularity randomization costs a pointer-spraying attacker.

use ruma::spray::{chained_success, monte_carlo, AttackScenario, SprayPattern};
use ruma::PointerWidth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        (0xdead_beef_cafe_babe, PointerWidth::Eight),
        (0x0c0d_0e0f, PointerWidth::Four),
        (0x4141_4141_4141_4141, PointerWidth::Eight),
        (0x4141_4141, PointerWidth::Four),
    ];
    println!(
        "{:<20} {:>3} {:>12} {:>12} {:>22}",
        "pattern", "g", "exact", "estimate", "99% CI"
    );
    for (value, width) in cases {
        let pattern = SprayPattern::new(value, width)?;
        let mut g = width.bytes();
        while g >= 1 {
            let s = AttackScenario::new(pattern, g, 1)?;
            let exact = chained_success(&s)?.probability;
            let mc = monte_carlo(&s, 200_000, 7)?;
            println!(
                "{:<20} {:>3} {:>12.6} {:>12.6}   [{:.6}, {:.6}]",
                format!("{value:#x}"),
                g,
                exact,
                mc.estimate,
                mc.ci_low,
                mc.ci_high
            );
            g /= 2;
        }
    }
    println!("\nrepeated-byte patterns are immune to the shift; distinct bytes leave 1/w.");
    Ok(())
}

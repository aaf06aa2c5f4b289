//! Short run of the alignment microbenchmark. Pass an iteration count to
//! override the default (2^22).

use ruma::membench::{run_bench, BenchSpec, CheckStatus, OpKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1 << 22);
    let report = run_bench(&BenchSpec {
        widths: vec![4, 8, 16],
        ops: OpKind::ALL.to_vec(),
        iterations,
        unroll: 48,
        cache_line: 64,
        page_size: 4096,
        copy_scale: 0.001,
    })?;
    print!("{}", report.to_csv());
    println!();
    for check in &report.checks {
        let tag = if check.status == CheckStatus::Pass {
            "pass"
        } else {
            "warn"
        };
        println!(
            "[{tag}] w={} {:?} {}: {}",
            check.width, check.op, check.name, check.detail
        );
    }
    Ok(())
}

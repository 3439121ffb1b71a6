//! Time the attention phases over a small grid and check how they scale.
//!
//! ```text
//! cargo run --release --example wta_benchmark
//! ```

use swta::harness::{benchmark_wta, records_to_csv, scaling_verdicts, BenchCell, BenchOptions};

fn main() -> swta::Result<()> {
    let cells = [
        BenchCell { t: 15, k: 3, d: 64 },
        BenchCell { t: 30, k: 3, d: 64 },
        BenchCell { t: 15, k: 3, d: 128 },
    ];
    let records = benchmark_wta(&cells, &BenchOptions::default())?;
    print!("{}", records_to_csv(&records));
    for v in scaling_verdicts(&records) {
        println!(
            "{:<32} {:?} -> {:?}: {:.2} in [{}, {}] {}",
            v.check,
            (v.base.t, v.base.d),
            (v.scaled.t, v.scaled.d),
            v.ratio,
            v.low,
            v.high,
            if v.pass { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}

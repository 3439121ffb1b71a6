//! Split a snippet into segments and draw one frame from each.
//!
//! ```text
//! cargo run --example sparse_sampling -- [T=15] [K=3]
//! ```

use swta::sampler::SegmentPlan;

fn main() -> swta::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let t = args.first().copied().unwrap_or(15);
    let k = args.get(1).copied().unwrap_or(3);
    let plan = SegmentPlan::new(t, k)?;
    println!("T={t} K={k} segments {:?}", plan.segments());
    for seed in 0..5 {
        println!("seed {seed}: frames {:?}", plan.sample(seed).indices);
    }
    Ok(())
}

//! How the bound of a sampled range workload approaches that of the full one.

use matmech::experiment::{sampled_curves, SamplingSweep};
use matmech::workload::{SamplingMode, DEFAULT_BIAS};

fn main() -> matmech::Result<()> {
    let sweep = SamplingSweep {
        shape: vec![128],
        sizes: vec![10, 30, 100, 300, 1000, 3000],
        modes: vec![SamplingMode::Uniform, SamplingMode::Biased { beta: DEFAULT_BIAS }],
    };
    let points = sampled_curves(&sweep, &[1, 2, 3])?;
    println!("per-query bound of the sample / per-query bound of all ranges");
    for p in points {
        println!("{:>8} {:>6}  {:.4}  [{:.4}, {:.4}]", p.mode, p.size, p.ratio, p.min, p.max);
    }
    Ok(())
}

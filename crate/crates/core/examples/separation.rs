//! Splitting a two-marginal range workload into one-dimensional problems.
//!
//! `cargo run --release --example separation -- 16`

use std::time::Instant;

use matmech::error::{total_error, PrivacyParams};
use matmech::lsa::{design, LsaConfig};
use matmech::scaling::{design_separated, separate};
use matmech::workload::{range_marginals, DomainShape};

fn main() -> matmech::Result<()> {
    let d: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let shape = DomainShape::new(vec![d, d])?;
    let w = range_marginals(&shape, &[0, 1])?;
    let p = PrivacyParams::Normalized;
    let config = LsaConfig::default();

    let plan = separate(&w)?;
    for c in &plan.components {
        println!("dimension {}: {} queries", c.dimension, c.queries.len());
    }
    let sep = design_separated(&plan, &w, &config, &p)?;
    println!(
        "separated: error {:.6e} (component accounting {:.6e}), q0 share {:.4}, {:.3}s",
        sep.composite_error, sep.component_total, sep.q0_fraction, sep.wall_seconds
    );

    let started = Instant::now();
    let joint = design(&w, &config)?;
    let joint_err = total_error(&w, &joint, &p)?;
    let joint_time = started.elapsed().as_secs_f64();
    println!("joint:     error {joint_err:.6e}, {joint_time:.3}s");
    println!(
        "error ratio {:.4}, speedup {:.1}x",
        sep.composite_error / joint_err,
        joint_time / sep.wall_seconds
    );
    Ok(())
}

//! Two-phase design over merged cells on a skew-sampled range workload.
//!
//! `cargo run --release --example generalization -- 256 8`

use std::time::Instant;

use matmech::error::{error_ratio, total_error, PrivacyParams};
use matmech::lsa::{design, LsaConfig};
use matmech::scaling::{default_group_count, design_generalized, generalize};
use matmech::strategy::wavelet_strategy;
use matmech::workload::{sample_range_workload, DomainShape, SamplingMode, DEFAULT_BIAS};

fn main() -> matmech::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let n = args.next().flatten().unwrap_or(128);
    let m = args.next().flatten().unwrap_or(default_group_count(n));
    let w = sample_range_workload(
        &DomainShape::line(n)?,
        4 * n,
        SamplingMode::Biased { beta: DEFAULT_BIAS },
        11,
    )?;
    let p = PrivacyParams::Normalized;
    let config = LsaConfig::default();

    let g = design_generalized(&generalize(&w, m)?, &w, &config)?;
    println!(
        "generalized (m = {m}): ratio {:.4}, {} phase-1 levels, {} phase-2 levels, {:.2}s",
        error_ratio(&w, &g.strategy)?,
        g.phase1.levels_accepted,
        g.phase2_levels,
        g.wall_seconds
    );

    let started = Instant::now();
    let plain = design(&w, &config)?;
    let plain_time = started.elapsed().as_secs_f64();
    println!("plain:            ratio {:.4}, {plain_time:.2}s", error_ratio(&w, &plain)?);
    println!("wavelet:          ratio {:.4}", error_ratio(&w, &wavelet_strategy(n)?)?);
    println!(
        "generalized / plain error {:.4}, speedup {:.1}x",
        total_error(&w, &g.strategy, &p)? / total_error(&w, &plain, &p)?,
        plain_time / g.wall_seconds
    );
    Ok(())
}

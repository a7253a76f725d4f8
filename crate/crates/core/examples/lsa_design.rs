//! Level selection on all one-dimensional ranges, with the per-level log.
//!
//! `cargo run --release --example lsa_design -- 128`

use matmech::error::{error_ratio, svd_bound, PrivacyParams};
use matmech::lsa::{design_with_log, LsaConfig};
use matmech::strategy::is_column_uniform;
use matmech::workload::{build_all_range, DomainShape};

fn main() -> matmech::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let w = build_all_range(&DomainShape::line(n)?, false)?;
    let (a, log) = design_with_log(&w, &LsaConfig::default())?;
    let bound = svd_bound(&w, &PrivacyParams::Normalized);

    println!("n = {n}, bound {bound:.6e}");
    for (level, err) in log.error_trajectory.iter().enumerate() {
        let size = if level == 0 { 1 } else { log.level_sizes[level - 1] };
        println!("  level {level:>3}  {size:>5} queries  error {err:.6e}  ratio {:.4}", err / bound);
    }
    println!(
        "{} levels, {} rows ({} before merging), ratio {:.4}, column uniform {}, {:.2}s",
        log.levels_accepted,
        a.row_count(),
        log.raw_rows,
        error_ratio(&w, &a)?,
        is_column_uniform(a.rows(), 2, 1e-9),
        log.wall_seconds
    );

    // A level cap trades error for a shorter run.
    let capped = matmech::lsa::design(&w, &LsaConfig::with_max_levels(3)?)?;
    println!("capped at 3 levels: ratio {:.4}", error_ratio(&w, &capped)?);
    Ok(())
}

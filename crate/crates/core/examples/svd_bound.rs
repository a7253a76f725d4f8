//! Singular value bound for range and predicate workloads.
//!
//! `cargo run --release --example svd_bound`

use std::time::Instant;

use matmech::error::{svd_bound, svdb_achievable, PrivacyParams};
use matmech::workload::{build_all_range, gram_all_predicate, DomainShape, Workload};

fn main() -> matmech::Result<()> {
    let p = PrivacyParams::Normalized;
    for dims in [vec![1024], vec![32, 32], vec![4, 2]] {
        let shape = DomainShape::new(dims.clone())?;
        let started = Instant::now();
        let w = build_all_range(&shape, false)?;
        let bound = svd_bound(&w, &p);
        println!(
            "AllRange{dims:?}: {} queries, bound {bound:.6e} ({:.2}s)",
            w.query_count().unwrap_or(0),
            started.elapsed().as_secs_f64()
        );
    }

    // AllPredicate has a closed form, and the bound is attained.
    for n in [4usize, 8, 16] {
        let w = Workload::from_gram(DomainShape::line(n)?, gram_all_predicate(n), Some(1 << n))?;
        let nf = n as f64;
        let closed = 2f64.powi(n as i32 - 2) / nf * (nf - 1.0 + (nf + 1.0).sqrt()).powi(2);
        println!(
            "AllPredicate({n}): bound {:.6}, closed form {closed:.6}, achievable {}",
            svd_bound(&w, &p),
            svdb_achievable(&w, 1e-9)
        );
    }

    // With real privacy parameters the bound scales by 2 ln(2/δ)/ε².
    let w = build_all_range(&DomainShape::line(64)?, false)?;
    let real = PrivacyParams::approximate(0.5, 1e-6)?;
    println!(
        "AllRange(64) at eps=0.5, delta=1e-6: bound {:.6e} (P = {:.3})",
        svd_bound(&w, &real),
        real.factor()
    );
    Ok(())
}

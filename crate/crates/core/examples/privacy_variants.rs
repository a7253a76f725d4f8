//! Pure ε (Laplace, L1) against (ε,δ) (Gaussian, L2) for the same strategy.

use matmech::error::{compare_variants, total_error, PrivacyParams};
use matmech::strategy::{hierarchical_strategy, identity_strategy, wavelet_strategy};
use matmech::workload::{build_all_range, DomainShape};

fn main() -> matmech::Result<()> {
    let n = 1024;
    let w = build_all_range(&DomainShape::line(n)?, false)?;
    let delta = 2.0 / (n * n) as f64;
    println!("strategy         L1      L2  rule says    lower          pure error  (eps,delta) error");
    for a in [identity_strategy(n)?, hierarchical_strategy(n, 2)?, wavelet_strategy(n)?] {
        let c = compare_variants(&a, n)?;
        let pure = total_error(&w, &a, &PrivacyParams::pure(1.0)?)?;
        let approx = total_error(&w, &a, &PrivacyParams::approximate(1.0, delta)?)?;
        println!(
            "{:<12} {:>6.2} {:>7.3}  {:<11}  {:<11}  {pure:>13.5e}  {approx:>13.5e}",
            a.name(),
            c.l1,
            c.l2,
            format!("{:?}", c.rule_prediction),
            format!("{:?}", c.lower)
        );
    }
    Ok(())
}

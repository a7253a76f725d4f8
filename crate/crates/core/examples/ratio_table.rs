//! Error ratios of standard strategies against the singular value bound.
//!
//! `cargo run --release --example ratio_table`

use matmech::error::{error_ratio, ErrorReport, PrivacyParams};
use matmech::strategy::{hierarchical_strategy, identity_strategy, wavelet_strategy, Strategy};
use matmech::workload::{build_all_range, DomainShape};

fn main() -> matmech::Result<()> {
    println!("{}", ErrorReport::CSV_HEADER);
    for n in [256usize, 1024] {
        let shape = DomainShape::line(n)?;
        let w = build_all_range(&shape, false)?;
        let strategies = [
            Strategy::from_gram(shape.clone(), w.gram())?.with_name("workload"),
            identity_strategy(n)?,
            hierarchical_strategy(n, 2)?,
            wavelet_strategy(n)?,
        ];
        for a in &strategies {
            let r = ErrorReport::evaluate(&format!("allrange[{n}]"), &w, a, &PrivacyParams::Normalized)?;
            println!("{}", r.csv_row());
        }
    }

    // Two dimensions: Kronecker products of the one-dimensional strategies.
    let shape = DomainShape::new(vec![32, 32])?;
    let w = build_all_range(&shape, false)?;
    let h = Strategy::kronecker(&[hierarchical_strategy(32, 2)?, hierarchical_strategy(32, 2)?])?;
    let haar = Strategy::kronecker(&[wavelet_strategy(32)?, wavelet_strategy(32)?])?;
    let id = Strategy::new(shape.clone(), identity_strategy(1024)?.rows().clone())?;
    for (name, a) in [("identity", &id), ("hierarchical", &h), ("wavelet", &haar)] {
        println!("allrange[32x32] {name}: ratio {:.4}", error_ratio(&w, a)?);
    }
    Ok(())
}

//! Merging parallel strategy rows keeps the error and can lower L1 sensitivity.

use nalgebra::DMatrix;

use matmech::error::{total_error, PrivacyParams};
use matmech::strategy::{reduce_redundancy, Strategy, PARALLEL_TOL};
use matmech::workload::{build_all_range, DomainShape};

fn main() -> matmech::Result<()> {
    let shape = DomainShape::line(4)?;
    // Two half-domain totals, then every cell twice.
    let mut rows = DMatrix::zeros(10, 4);
    rows.view_mut((0, 0), (1, 2)).fill(1.0);
    rows.view_mut((1, 2), (1, 2)).fill(1.0);
    rows.view_mut((2, 0), (4, 4)).copy_from(&DMatrix::identity(4, 4));
    rows.view_mut((6, 0), (4, 4)).copy_from(&DMatrix::identity(4, 4));
    let y1 = Strategy::new(shape.clone(), rows)?;
    let y2 = reduce_redundancy(&y1, PARALLEL_TOL)?;
    println!("before:{:.3}after:{:.3}", y1.rows(), y2.rows());

    let w = build_all_range(&shape, false)?;
    for p in [PrivacyParams::Normalized, PrivacyParams::pure(1.0)?] {
        println!(
            "{p:?}: error {:.6} -> {:.6}",
            total_error(&w, &y1, &p)?,
            total_error(&w, &y2, &p)?
        );
    }
    println!("L1 sensitivity {} -> {:.4}", y1.l1_sensitivity(), y2.l1_sensitivity());
    Ok(())
}

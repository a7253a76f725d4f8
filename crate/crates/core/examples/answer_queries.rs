//! Answering a small workload over (gradyear × gender) cells with the
//! matrix mechanism, and checking that the answers are consistent.

use nalgebra::DMatrix;

use matmech::error::{query_error, PrivacyParams};
use matmech::mechanism::{
    consistency_check, gaussian_mechanism, matrix_mechanism, CellVector, Provenance, Randomness,
};
use matmech::strategy::Strategy;
use matmech::workload::{DomainShape, Workload};

fn main() -> matmech::Result<()> {
    // Cells: (2011,M), (2011,F), ..., (2014,M), (2014,F).
    let shape = DomainShape::new(vec![4, 2])?;
    #[rustfmt::skip]
    let w = Workload::from_rows(shape.clone(), DMatrix::from_row_slice(5, 8, &[
        1., 1., 1., 1., 1., 1., 1., 1.,   // all students
        1., 1., 1., 1., 0., 0., 0., 0.,   // graduating 2011-2012
        0., 1., 0., 1., 0., 0., 0., 0.,   // female, 2011-2012
        1., 0., 1., 0., 0., 0., 0., 0.,   // male, 2011-2012
        0., 0., 0., 0., 1., 1., -1., -1., // 2013 minus 2014
    ]))?;
    let x = CellVector::new(shape.clone(), vec![12., 9., 15., 11., 8., 14., 10., 13.], Provenance::Ingested)?;

    // Strategy: the total, two halves, and the cells.
    let mut rows = DMatrix::zeros(11, 8);
    rows.row_mut(0).fill(1.0);
    rows.view_mut((1, 0), (1, 4)).fill(1.0);
    rows.view_mut((2, 4), (1, 4)).fill(1.0);
    rows.view_mut((3, 0), (8, 8)).copy_from(&DMatrix::identity(8, 8));
    let a = Strategy::new(shape, rows)?.with_name("total+halves+cells");

    let privacy = PrivacyParams::approximate(1.0, 1e-4)?;
    let exact = matrix_mechanism(&w, &a, &x, &privacy, Randomness::Zero)?;
    let noisy = matrix_mechanism(&w, &a, &x, &privacy, Randomness::seeded(2024))?;
    let direct = gaussian_mechanism(&w, &x, 1.0, 1e-4, Randomness::seeded(2024))?;

    println!("query   exact   matrix mech   expected sd   direct");
    for (i, q) in w.require_rows()?.row_iter().enumerate() {
        let sd = query_error(&a, &q.transpose(), &privacy)?.sqrt();
        println!(
            "Q{}   {:>7.1}   {:>11.3}   {:>11.3}   {:>7.3}",
            i + 1,
            exact.answers[i],
            noisy.answers[i],
            sd,
            direct.answers[i]
        );
    }
    let a = &noisy.answers;
    println!("Q2 - (Q3 + Q4) = {:.2e}", a[1] - a[2] - a[3]);
    println!("matrix mechanism consistent: {}", consistency_check(a, &w)?);
    println!("direct answers consistent:   {}", consistency_check(&direct.answers, &w)?);
    Ok(())
}

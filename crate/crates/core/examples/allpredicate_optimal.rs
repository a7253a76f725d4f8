//! The optimal strategy for a variable-agnostic workload.

use matmech::error::{svd_bound, total_error, PrivacyParams};
use matmech::strategy::{is_variable_agnostic, variable_agnostic_optimal};
use matmech::workload::{gram_all_predicate, DomainShape, Workload};

fn main() -> matmech::Result<()> {
    let p = PrivacyParams::Normalized;
    for n in [4usize, 8, 16, 32, 64] {
        let gram = gram_all_predicate(n);
        let form = is_variable_agnostic(&gram, 1e-12).expect("AllPredicate is variable-agnostic");
        let a = variable_agnostic_optimal(form)?;
        let w = Workload::from_gram(DomainShape::line(n)?, gram, None)?;
        let err = total_error(&w, &a, &p)?;
        let bound = svd_bound(&w, &p);
        println!(
            "n={n:>2}  a={:<9.3e} b={:<9.3e} error {err:.6e}  bound {bound:.6e}  rel gap {:.1e}",
            form.a,
            form.b,
            (err - bound).abs() / bound
        );
    }
    Ok(())
}

//! Noise primitives and the matrix mechanism with least-squares inference.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::PrivacyParams;
use crate::errors::{Error, Result};
use crate::io;
use crate::strategy::{self, Strategy};
use crate::workload::{DomainShape, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ingested,
    Synthetic,
    Inferred,
}

/// Cell counts over a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVector {
    shape: DomainShape,
    x: DVector<f64>,
    provenance: Provenance,
}

impl CellVector {
    pub fn new(shape: DomainShape, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != shape.n() {
            return Err(Error::Shape(format!(
                "{} values for a domain of {} cells",
                values.len(),
                shape.n()
            )));
        }
        if provenance == Provenance::Ingested
            && values.iter().any(|&v| v < 0.0 || v.fract() != 0.0)
        {
            return Err(Error::Argument("ingested counts must be nonnegative integers".into()));
        }
        Ok(Self {
            shape,
            x: DVector::from_vec(values),
            provenance,
        })
    }

    /// Reads a single-column CSV of counts.
    pub fn from_csv(path: &Path, shape: DomainShape) -> Result<Self> {
        let v = io::read_vector_csv(path)?;
        Self::new(shape, v.as_slice().to_vec(), Provenance::Synthetic)
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Noise distribution; `sigma` is a standard deviation, `b` a Laplace scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "lowercase")]
pub enum Noise {
    Gaussian { sigma: f64 },
    Laplace { b: f64 },
    Zero,
}

impl Noise {
    pub fn variance(&self) -> f64 {
        match *self {
            Noise::Gaussian { sigma } => sigma * sigma,
            Noise::Laplace { b } => 2.0 * b * b,
            Noise::Zero => 0.0,
        }
    }

    /// Noise calibrated to a query matrix with the given sensitivities.
    pub fn calibrated(privacy: &PrivacyParams, l1: f64, l2: f64) -> Self {
        match *privacy {
            PrivacyParams::Pure { epsilon } => Noise::Laplace { b: l1 / epsilon },
            _ => Noise::Gaussian {
                sigma: l2 * privacy.factor().sqrt(),
            },
        }
    }
}

/// Where the random bits come from. Trials derived from one seed use
/// distinct ChaCha streams, so results do not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Randomness {
    Seeded { seed: u64, stream: u64 },
    /// Emits exact zeros regardless of the distribution.
    Zero,
}

impl Randomness {
    pub fn seeded(seed: u64) -> Self {
        Randomness::Seeded { seed, stream: 0 }
    }

    pub fn trial(seed: u64, index: u64) -> Self {
        Randomness::Seeded { seed, stream: index }
    }
}

/// A noise distribution bound to its source of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub noise: Noise,
    pub randomness: Randomness,
}

impl NoiseSource {
    pub fn new(noise: Noise, randomness: Randomness) -> Self {
        Self { noise, randomness }
    }

    pub fn sample(&self, len: usize) -> DVector<f64> {
        let (seed, stream) = match (self.noise, self.randomness) {
            (Noise::Zero, _) | (_, Randomness::Zero) => return DVector::zeros(len),
            (_, Randomness::Seeded { seed, stream }) => (seed, stream),
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        match self.noise {
            Noise::Gaussian { sigma } => DVector::from_fn(len, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }),
            Noise::Laplace { b } => DVector::from_fn(len, |_, _| {
                // Inverse CDF on u ∈ (−1/2, 1/2).
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }),
            Noise::Zero => unreachable!(),
        }
    }
}

/// Answers returned by a mechanism run, with the noise that produced them.
#[derive(Debug, Clone)]
pub struct MechanismOutput {
    pub answers: DVector<f64>,
    /// Least-squares cell estimate; absent for the direct mechanisms.
    pub estimate: Option<CellVector>,
    pub noise: NoiseSource,
}

fn check_cells(w: &Workload, x: &CellVector) -> Result<()> {
    if w.n() != x.values().len() {
        return Err(Error::Shape(format!(
            "workload has {} cells, data has {}",
            w.n(),
            x.values().len()
        )));
    }
    Ok(())
}

/// `Wx + N(σ)^m` with `σ = ‖W‖₂ √(2 ln(2/δ)) / ε`.
pub fn gaussian_mechanism(
    w: &Workload,
    x: &CellVector,
    epsilon: f64,
    delta: f64,
    randomness: Randomness,
) -> Result<MechanismOutput> {
    let privacy = PrivacyParams::approximate(epsilon, delta)?;
    let rows = w.require_rows()?;
    check_cells(w, x)?;
    let noise = Noise::calibrated(&privacy, 0.0, strategy::l2_sensitivity(rows));
    let source = NoiseSource::new(noise, randomness);
    Ok(MechanismOutput {
        answers: rows * x.values() + source.sample(rows.nrows()),
        estimate: None,
        noise: source,
    })
}

/// `Wx + Laplace(b)^m` with `b = ‖W‖₁ / ε`.
pub fn laplace_mechanism(
    w: &Workload,
    x: &CellVector,
    epsilon: f64,
    randomness: Randomness,
) -> Result<MechanismOutput> {
    let privacy = PrivacyParams::pure(epsilon)?;
    let rows = w.require_rows()?;
    check_cells(w, x)?;
    let noise = Noise::calibrated(&privacy, strategy::l1_sensitivity(rows), 0.0);
    let source = NoiseSource::new(noise, randomness);
    Ok(MechanismOutput {
        answers: rows * x.values() + source.sample(rows.nrows()),
        estimate: None,
        noise: source,
    })
}

/// A workload and strategy with the strategy Gram factorized, ready for
/// repeated runs.
pub struct MatrixMechanism<'a> {
    workload: &'a Workload,
    strategy: &'a Strategy,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> MatrixMechanism<'a> {
    pub fn new(workload: &'a Workload, strategy: &'a Strategy) -> Result<Self> {
        workload.require_rows()?;
        if workload.n() != strategy.n() {
            return Err(Error::Shape(format!(
                "workload has {} cells, strategy has {}",
                workload.n(),
                strategy.n()
            )));
        }
        let chol = strategy
            .gram()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Rank("strategy Gram is not positive definite".into()))?;
        Ok(Self {
            workload,
            strategy,
            chol,
        })
    }

    pub fn noise(&self, privacy: &PrivacyParams) -> Noise {
        Noise::calibrated(
            privacy,
            self.strategy.l1_sensitivity(),
            self.strategy.l2_sensitivity(),
        )
    }

    /// `y = Ax + z`, `x̂ = (AᵀA)⁻¹Aᵀy`, answers `W x̂`.
    pub fn run(
        &self,
        x: &CellVector,
        privacy: &PrivacyParams,
        randomness: Randomness,
    ) -> Result<MechanismOutput> {
        check_cells(self.workload, x)?;
        let a = self.strategy.rows();
        let source = NoiseSource::new(self.noise(privacy), randomness);
        let y = a * x.values() + source.sample(a.nrows());
        let x_hat = self.chol.solve(&a.tr_mul(&y));
        let answers = self.workload.require_rows()? * &x_hat;
        Ok(MechanismOutput {
            answers,
            estimate: Some(CellVector {
                shape: x.shape().clone(),
                x: x_hat,
                provenance: Provenance::Inferred,
            }),
            noise: source,
        })
    }

    /// Noisy strategy answers only, for callers that need `y` itself.
    pub fn noisy_strategy_answers(
        &self,
        x: &CellVector,
        privacy: &PrivacyParams,
        randomness: Randomness,
    ) -> DVector<f64> {
        let a = self.strategy.rows();
        a * x.values() + NoiseSource::new(self.noise(privacy), randomness).sample(a.nrows())
    }

    /// Least-squares estimate from strategy answers `y`.
    pub fn infer(&self, y: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(&self.strategy.rows().tr_mul(y))
    }
}

/// One-shot [`MatrixMechanism`] run.
pub fn matrix_mechanism(
    w: &Workload,
    a: &Strategy,
    x: &CellVector,
    privacy: &PrivacyParams,
    randomness: Randomness,
) -> Result<MechanismOutput> {
    MatrixMechanism::new(w, a)?.run(x, privacy, randomness)
}

/// Triples `(i, j, k)` with `w_k = w_i + w_j` (`i ≤ j`, `k` distinct from both),
/// matched up to `1e-9` of the largest entry.
pub fn additive_relations(w: &Workload) -> Result<Vec<(usize, usize, usize)>> {
    let rows = w.require_rows()?;
    let m = rows.nrows();
    let quantum = 1e-9 * rows.amax().max(1.0);
    let key = |v: &mut dyn Iterator<Item = f64>| -> Vec<i64> {
        v.map(|x| (x / quantum).round() as i64).collect()
    };
    let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for k in 0..m {
        index.entry(key(&mut rows.row(k).iter().copied())).or_default().push(k);
    }
    let mut relations = Vec::new();
    for i in 0..m {
        for j in i..m {
            let sum = key(&mut rows.row(i).iter().zip(rows.row(j).iter()).map(|(a, b)| a + b));
            if let Some(ks) = index.get(&sum) {
                relations.extend(ks.iter().filter(|&&k| k != i && k != j).map(|&k| (i, j, k)));
            }
        }
    }
    Ok(relations)
}

/// True when every additive relation among workload rows also holds among
/// the answers, within `1e-9` of the largest answer magnitude.
pub fn consistency_check(answers: &DVector<f64>, w: &Workload) -> Result<bool> {
    if answers.len() != w.require_rows()?.nrows() {
        return Err(Error::Shape("one answer per workload row expected".into()));
    }
    let tol = 1e-9 * answers.amax().max(1.0);
    Ok(additive_relations(w)?
        .into_iter()
        .all(|(i, j, k)| (answers[i] + answers[j] - answers[k]).abs() <= tol))
}

/// Metadata written next to answer files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub privacy: PrivacyParams,
    pub noise: NoiseSource,
    pub l1_sensitivity: f64,
    pub l2_sensitivity: f64,
    pub consistent: Option<bool>,
}

impl RunMetadata {
    pub fn new(privacy: PrivacyParams, noise: NoiseSource, a: &DMatrix<f64>) -> Self {
        Self {
            privacy,
            noise,
            l1_sensitivity: strategy::l1_sensitivity(a),
            l2_sensitivity: strategy::l2_sensitivity(a),
            consistent: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{hierarchical_strategy, identity_strategy};
    use crate::workload::build_all_range;

    fn line(n: usize) -> DomainShape {
        DomainShape::line(n).unwrap()
    }

    fn data(v: &[f64]) -> CellVector {
        CellVector::new(line(v.len()), v.to_vec(), Provenance::Synthetic).unwrap()
    }

    #[test]
    fn cell_vector_validation() {
        assert!(CellVector::new(line(2), vec![1.0], Provenance::Synthetic).is_err());
        assert!(CellVector::new(line(2), vec![1.0, -1.0], Provenance::Ingested).is_err());
        assert!(CellVector::new(line(2), vec![1.5, 1.0], Provenance::Ingested).is_err());
        assert!(CellVector::new(line(2), vec![1.5, -1.0], Provenance::Synthetic).is_ok());
    }

    #[test]
    fn gaussian_sigma_example() {
        let w = Workload::from_rows(line(2), DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let delta = 2.0 / std::f64::consts::E.powi(2);
        let out = gaussian_mechanism(&w, &data(&[3.0, 4.0]), 1.0, delta, Randomness::seeded(1)).unwrap();
        assert_eq!(out.noise.noise, Noise::Gaussian { sigma: 2.0 });
        let exact = gaussian_mechanism(&w, &data(&[3.0, 4.0]), 1.0, delta, Randomness::Zero).unwrap();
        assert_eq!(exact.answers[0], 7.0);
    }

    #[test]
    fn laplace_scale() {
        let h = hierarchical_strategy(4, 2).unwrap();
        let w = Workload::from_rows(line(4), h.rows().clone()).unwrap();
        let out = laplace_mechanism(&w, &data(&[1., 2., 3., 4.]), 2.0, Randomness::Zero).unwrap();
        assert_eq!(out.noise.noise, Noise::Laplace { b: 1.5 });
        assert_eq!(out.answers.as_slice(), &[10., 3., 7., 1., 2., 3., 4.]);
    }

    #[test]
    fn seeds_are_deterministic() {
        let src = NoiseSource::new(Noise::Gaussian { sigma: 1.0 }, Randomness::seeded(9));
        assert_eq!(src.sample(5), src.sample(5));
        let other = NoiseSource::new(Noise::Gaussian { sigma: 1.0 }, Randomness::trial(9, 1));
        assert_ne!(src.sample(5), other.sample(5));
    }

    #[test]
    fn laplace_variance() {
        let src = NoiseSource::new(Noise::Laplace { b: 1.0 }, Randomness::seeded(4));
        let z = src.sample(200_000);
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((var - 2.0).abs() < 0.06, "variance {var}");
    }

    #[test]
    fn zero_noise_matrix_mechanism_is_exact() {
        let w = build_all_range(&line(4), true).unwrap();
        let a = hierarchical_strategy(4, 2).unwrap();
        let x = data(&[1., 0., 5., 2.]);
        let out = matrix_mechanism(&w, &a, &x, &PrivacyParams::Normalized, Randomness::Zero).unwrap();
        let est = out.estimate.unwrap();
        assert!((est.values() - x.values()).amax() < 1e-12);
        assert_eq!(est.provenance(), Provenance::Inferred);
        assert!((out.answers - w.rows().unwrap() * x.values()).amax() < 1e-12);
    }

    #[test]
    fn residual_is_orthogonal() {
        let w = build_all_range(&line(8), true).unwrap();
        let a = hierarchical_strategy(8, 2).unwrap();
        let mm = MatrixMechanism::new(&w, &a).unwrap();
        let x = data(&[3., 1., 4., 1., 5., 9., 2., 6.]);
        let y = mm.noisy_strategy_answers(&x, &PrivacyParams::Normalized, Randomness::seeded(2));
        let x_hat = mm.infer(&y);
        let r = a.rows().tr_mul(&(a.rows() * &x_hat - &y));
        assert!(r.amax() <= 1e-8 * y.amax());
    }

    #[test]
    fn identity_strategy_adds_cell_noise() {
        let w = build_all_range(&line(4), true).unwrap();
        let a = identity_strategy(4).unwrap();
        let x = data(&[1., 2., 3., 4.]);
        let out = matrix_mechanism(&w, &a, &x, &PrivacyParams::Normalized, Randomness::seeded(3)).unwrap();
        let z = NoiseSource::new(Noise::Gaussian { sigma: 1.0 }, Randomness::seeded(3)).sample(4);
        let expected = w.rows().unwrap() * (x.values() + z);
        assert!((out.answers - expected).amax() < 1e-12);
    }

    #[test]
    fn consistency() {
        let w = build_all_range(&line(4), true).unwrap();
        assert!(!additive_relations(&w).unwrap().is_empty());
        let a = hierarchical_strategy(4, 2).unwrap();
        let x = data(&[1., 2., 3., 4.]);
        let mm = matrix_mechanism(&w, &a, &x, &PrivacyParams::Normalized, Randomness::seeded(5)).unwrap();
        assert!(consistency_check(&mm.answers, &w).unwrap());
        let direct = gaussian_mechanism(&w, &x, 1.0, 1e-3, Randomness::seeded(5)).unwrap();
        assert!(!consistency_check(&direct.answers, &w).unwrap());

        let single = Workload::from_rows(line(2), DMatrix::from_row_slice(1, 2, &[1., 1.])).unwrap();
        assert!(consistency_check(&DVector::from_vec(vec![3.3]), &single).unwrap());
    }
}

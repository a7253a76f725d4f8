//! Random range workloads.
//!
//! The biased mode weights a range by `exp(β · ‖center(q) − center(domain)‖₁ / n)`,
//! so ranges centred near the domain boundary are drawn more often than ones
//! near the middle. The weight factorizes over dimensions, so each interval is
//! drawn independently.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{DomainShape, RangeQuery, Workload};
use crate::errors::{Error, Result};

/// Default bias strength for [`SamplingMode::Biased`].
pub const DEFAULT_BIAS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum SamplingMode {
    Uniform,
    Biased { beta: f64 },
}

impl SamplingMode {
    fn beta(&self) -> f64 {
        match self {
            SamplingMode::Uniform => 0.0,
            SamplingMode::Biased { beta } => *beta,
        }
    }
}

/// Draws `count` ranges i.i.d.; reproducible for a fixed `seed`.
pub fn sample_ranges(
    shape: &DomainShape,
    count: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<RangeQuery>> {
    if count == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let beta = mode.beta();
    if !beta.is_finite() {
        return Err(Error::Argument(format!("bias {beta} is not finite")));
    }
    let n = shape.n() as f64;
    let per_dim: Vec<(Vec<(usize, usize)>, WeightedIndex<f64>)> = shape
        .dims()
        .iter()
        .map(|&d| {
            let mid = (d as f64 + 1.0) / 2.0;
            let intervals: Vec<(usize, usize)> = (1..=d)
                .flat_map(|l| (l..=d).map(move |u| (l, u)))
                .collect();
            let weights: Vec<f64> = intervals
                .iter()
                .map(|&(l, u)| {
                    let center = (l + u) as f64 / 2.0;
                    (beta * (center - mid).abs() / n).exp()
                })
                .collect();
            let dist = WeightedIndex::new(&weights).expect("positive finite weights");
            (intervals, dist)
        })
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let bounds = per_dim
                .iter()
                .map(|(intervals, dist)| intervals[dist.sample(&mut rng)])
                .collect();
            RangeQuery::from_bounds_unchecked(bounds)
        })
        .collect())
}

/// [`sample_ranges`] materialized as a dense workload.
pub fn sample_range_workload(
    shape: &DomainShape,
    count: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Workload> {
    let ranges = sample_ranges(shape, count, mode, seed)?;
    Workload::from_ranges(shape.clone(), &ranges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::all_ranges;
    use std::collections::HashMap;

    #[test]
    fn reproducible_under_seed() {
        let s = DomainShape::line(8).unwrap();
        let a = sample_ranges(&s, 3, SamplingMode::Uniform, 11).unwrap();
        let b = sample_ranges(&s, 3, SamplingMode::Uniform, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for q in &a {
            assert!(RangeQuery::new(&s, q.bounds().to_vec()).is_ok());
        }
        let c = sample_ranges(&s, 3, SamplingMode::Uniform, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_count_rejected() {
        let s = DomainShape::line(8).unwrap();
        assert!(sample_ranges(&s, 0, SamplingMode::Uniform, 1).is_err());
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let s = DomainShape::line(4).unwrap();
        let draws = 10_000;
        let sample = sample_ranges(&s, draws, SamplingMode::Uniform, 5).unwrap();
        let mut counts: HashMap<RangeQuery, usize> = HashMap::new();
        for q in sample {
            *counts.entry(q).or_default() += 1;
        }
        let ranges = all_ranges(&s);
        let p = 1.0 / ranges.len() as f64;
        let expected = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for r in &ranges {
            let c = *counts.get(r).unwrap_or(&0) as f64;
            assert!((c - expected).abs() <= 3.0 * sd, "range {r:?}: {c} vs {expected}");
            chi2 += (c - expected).powi(2) / expected;
        }
        // 9 degrees of freedom; the 0.999 quantile is 27.88.
        assert!(chi2 < 27.88, "chi-square {chi2}");
    }

    #[test]
    fn biased_mode_pushes_centres_outward() {
        let s = DomainShape::line(64).unwrap();
        let mean_offset = |mode| {
            let qs = sample_ranges(&s, 20_000, mode, 3).unwrap();
            qs.iter().map(|q| (q.center()[0] - 32.5).abs()).sum::<f64>() / qs.len() as f64
        };
        let uniform = mean_offset(SamplingMode::Uniform);
        let biased = mean_offset(SamplingMode::Biased { beta: DEFAULT_BIAS });
        assert!(biased > uniform, "biased {biased} <= uniform {uniform}");
    }
}

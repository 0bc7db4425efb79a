//! Across-seed aggregation with percentile bootstrap intervals.

use mavic_core::seeded_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    /// Percentile bootstrap interval of the mean; absent below two values.
    pub ci: Option<(f64, f64)>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean, sample std and a `level` percentile bootstrap CI over `values`.
///
/// The input is sorted first so the result does not depend on seed order,
/// down to the last bit. Returns `None` for an empty slice.
pub fn aggregate(values: &[f64], resamples: usize, level: f64, seed: u64) -> Option<Aggregate> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some(Aggregate {
            n,
            mean,
            std: 0.0,
            ci: None,
        });
    }
    let std = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut rng = seeded_rng(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| sorted[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Some(Aggregate {
        n,
        mean,
        std,
        ci: Some((quantile(&means, alpha), quantile(&means, 1.0 - alpha))),
    })
}

/// [`aggregate`] with 10,000 resamples at 95%.
pub fn aggregate_default(values: &[f64], seed: u64) -> Option<Aggregate> {
    aggregate(values, DEFAULT_RESAMPLES, DEFAULT_LEVEL, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn empty_and_single() {
        assert!(aggregate_default(&[], 0).is_none());
        let a = aggregate_default(&[4.0], 0).unwrap();
        assert_eq!((a.mean, a.std, a.ci), (4.0, 0.0, None));
    }
}

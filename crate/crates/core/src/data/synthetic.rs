use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::derive_seed;
use crate::{Error, Result};

const DRAW: u64 = 1;
const NOISE: u64 = 2;
const OUTLIERS: u64 = 3;

/// Two three-feature Gaussian branches with a cosine target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub means1: Vec<f64>,
    pub stds1: Vec<f64>,
    pub means2: Vec<f64>,
    pub stds2: Vec<f64>,
    /// Fraction of entries per feature that receive additive noise.
    pub noise_level: f64,
    /// Fraction of rows that receive an outlier shift.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            means1: vec![1.0, 5.0, 9.0],
            stds1: vec![0.1, 0.2, 0.3],
            means2: vec![3.0, 7.0, 2.0],
            stds2: vec![0.2, 0.4, 0.1],
            noise_level: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must lie in [0, 1]")))
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        fraction("noise_level", self.noise_level)?;
        fraction("outlier_fraction", self.outlier_fraction)?;
        if self.means1.len() != self.stds1.len() || self.means2.len() != self.stds2.len() {
            return Err(Error::invalid("each branch needs one std per mean"));
        }
        if self.means1.is_empty() || self.means2.is_empty() {
            return Err(Error::invalid("each branch needs at least one feature"));
        }
        if self.stds1.iter().chain(&self.stds2).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("standard deviations must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.means1.len() + self.means2.len()
    }

    /// Branch 1 then branch 2, contiguous.
    pub fn feature_groups(&self) -> Vec<Vec<usize>> {
        let d1 = self.means1.len();
        vec![(0..d1).collect(), (d1..self.n_features()).collect()]
    }
}

/// `0.3 Σ cos²(x¹) + 0.7 Σ cos(x²)`.
pub fn synthetic_target(x1: &[f64], x2: &[f64]) -> f64 {
    0.3 * x1.iter().map(|v| v.cos().powi(2)).sum::<f64>() + 0.7 * x2.iter().map(|v| v.cos()).sum::<f64>()
}

/// Draws the clean inputs, computes the target, then perturbs the inputs
/// only. Ranges for the perturbations come from the clean inputs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Array2<f64>, Array1<f64>)> {
    spec.validate()?;
    let means: Vec<f64> = spec.means1.iter().chain(&spec.means2).copied().collect();
    let stds: Vec<f64> = spec.stds1.iter().chain(&spec.stds2).copied().collect();
    let dists: Vec<Normal<f64>> = means
        .iter()
        .zip(&stds)
        .map(|(&m, &s)| Normal::new(m, s).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, DRAW, 0));
    let d = means.len();
    let mut x = Array2::zeros((spec.n_samples, d));
    for mut row in x.rows_mut() {
        for (v, dist) in row.iter_mut().zip(&dists) {
            *v = dist.sample(&mut rng);
        }
    }
    let d1 = spec.means1.len();
    let y: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| {
            let r = r.to_vec();
            synthetic_target(&r[..d1], &r[d1..])
        })
        .collect();
    let range = column_ranges(x.view());
    let x = inject_noise_with_range(x.view(), spec.noise_level, &range, derive_seed(spec.seed, NOISE, 0))?;
    let x = inject_outliers_with_range(x.view(), spec.outlier_fraction, &range, derive_seed(spec.seed, OUTLIERS, 0))?;
    Ok((x, y))
}

/// `max − min` of every column; zero for an empty matrix.
pub fn column_ranges(x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.axis_iter(Axis(1))
        .map(|c| {
            if c.is_empty() {
                return 0.0;
            }
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .collect()
}

fn count_of(level: f64, n: usize) -> usize {
    ((level * n as f64).round() as usize).min(n)
}

/// Adds `N(0.1R_j, (0.1R_j)²)` to a seeded random fraction `level` of the
/// entries of every column `j`, with `R_j` the column's own range.
pub fn inject_noise(x: ArrayView2<'_, f64>, level: f64, seed: u64) -> Result<Array2<f64>> {
    inject_noise_with_range(x, level, &column_ranges(x), seed)
}

pub fn inject_noise_with_range(x: ArrayView2<'_, f64>, level: f64, range: &[f64], seed: u64) -> Result<Array2<f64>> {
    fraction("noise level", level)?;
    if range.len() != x.ncols() {
        return Err(Error::shape("one range per column is required"));
    }
    let mut out = x.to_owned();
    let n = x.nrows();
    let m = count_of(level, n);
    for (j, &r) in range.iter().enumerate() {
        if m == 0 || !(r > 0.0) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE, j as u64));
        let dist = Normal::new(0.1 * r, 0.1 * r).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rows = index::sample(&mut rng, n, m).into_vec();
        rows.sort_unstable();
        for i in rows {
            out[[i, j]] += dist.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Adds `N(R_j, (0.1R_j)²)` to every column of a seeded random fraction of
/// the rows.
pub fn inject_outliers(x: ArrayView2<'_, f64>, fraction_rows: f64, seed: u64) -> Result<Array2<f64>> {
    inject_outliers_with_range(x, fraction_rows, &column_ranges(x), seed)
}

pub fn inject_outliers_with_range(
    x: ArrayView2<'_, f64>,
    fraction_rows: f64,
    range: &[f64],
    seed: u64,
) -> Result<Array2<f64>> {
    fraction("outlier fraction", fraction_rows)?;
    if range.len() != x.ncols() {
        return Err(Error::shape("one range per column is required"));
    }
    let mut out = x.to_owned();
    let n = x.nrows();
    let m = count_of(fraction_rows, n);
    if m == 0 {
        return Ok(out);
    }
    let dists: Vec<Option<Normal<f64>>> = range
        .iter()
        .map(|&r| (r > 0.0).then(|| Normal::new(r, 0.1 * r).expect("positive range")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, OUTLIERS, 0));
    let mut rows = index::sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    for i in rows {
        for (j, dist) in dists.iter().enumerate() {
            if let Some(dist) = dist {
                out[[i, j]] += dist.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn target_examples() {
        assert_abs_diff_eq!(synthetic_target(&[0.0; 3], &[0.0; 3]), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(synthetic_target(&[FRAC_PI_2; 3], &[FRAC_PI_2; 3]), 0.0, epsilon = 1e-15);
        let at_means = synthetic_target(&[1.0, 5.0, 9.0], &[3.0, 7.0, 2.0]);
        assert_abs_diff_eq!(at_means, -0.095_801_203_769_925_46, epsilon = 1e-14);
        assert_abs_diff_eq!(at_means, -0.09581, epsilon = 1e-4);
    }

    #[test]
    fn clean_rows_satisfy_the_target_formula() {
        let spec = SyntheticSpec {
            n_samples: 500,
            seed: 4,
            ..Default::default()
        };
        let (x, y) = generate_synthetic(&spec).unwrap();
        assert_eq!(x.dim(), (500, 6));
        for (row, &t) in x.rows().into_iter().zip(&y) {
            let r = row.to_vec();
            assert_abs_diff_eq!(synthetic_target(&r[..3], &r[3..]), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SyntheticSpec {
            n_samples: 200,
            noise_level: 0.1,
            outlier_fraction: 0.05,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 12, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().0, generate_synthetic(&other).unwrap().0);
    }

    #[test]
    fn perturbations_leave_targets_clean() {
        let clean = SyntheticSpec {
            n_samples: 300,
            seed: 2,
            ..Default::default()
        };
        let noisy = SyntheticSpec {
            noise_level: 0.15,
            outlier_fraction: 0.1,
            ..clean.clone()
        };
        let (xc, yc) = generate_synthetic(&clean).unwrap();
        let (xn, yn) = generate_synthetic(&noisy).unwrap();
        assert_eq!(yc, yn);
        assert_ne!(xc, xn);
    }

    #[test]
    fn zero_levels_and_constant_columns_are_untouched() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        assert_eq!(inject_noise(x.view(), 0.0, 1).unwrap(), x);
        assert_eq!(inject_outliers(x.view(), 0.0, 1).unwrap(), x);
        let noisy = inject_noise(x.view(), 1.0, 1).unwrap();
        assert_eq!(noisy.column(1), x.column(1));
        let out = inject_outliers(x.view(), 1.0, 1).unwrap();
        assert_eq!(out.column(1), x.column(1));
        assert!(inject_noise(x.view(), 1.5, 1).is_err());
    }

    #[test]
    fn noise_fraction_is_exact_per_column() {
        let x = Array2::from_shape_fn((200, 3), |(i, j)| (i * (j + 1)) as f64);
        let noisy = inject_noise(x.view(), 0.1, 5).unwrap();
        for j in 0..3 {
            let changed = noisy.column(j).iter().zip(x.column(j)).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 20);
        }
    }

    fn unit_range_column(n: usize) -> Array2<f64> {
        // Range exactly 1: alternating 0/1 entries.
        Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64)
    }

    #[test]
    fn noise_shift_statistics() {
        let n = 100_000;
        let x = unit_range_column(n);
        let shifted = inject_noise(x.view(), 1.0, 21).unwrap();
        let d = &shifted - &x;
        let mean = d.mean().unwrap();
        // Shifts are N(0.1, 0.1²): three standard errors.
        assert!((mean - 0.1).abs() <= 3.0 * 0.1 / (n as f64).sqrt(), "{mean}");
        let sd = d.std(0.0);
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn outlier_shift_statistics() {
        let n = 100_000;
        let x = unit_range_column(n);
        let shifted = inject_outliers(x.view(), 1.0, 22).unwrap();
        let mean = (&shifted - &x).mean().unwrap();
        assert!((mean - 1.0).abs() <= 3.0 * 0.1 / (n as f64).sqrt(), "{mean}");
    }
}

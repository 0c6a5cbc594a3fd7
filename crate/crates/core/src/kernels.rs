//! Nyström approximation of RBF kernels over sketched pseudo-landmarks, and a
//! multi-bandwidth RBF bank on raw inputs.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lowrank::pinv_half;
use crate::sketch::{sketch_rows, SketchSpec};
use crate::stream::{BlockSource, InMemory};

/// Default number of stacked hash functions for landmark sketching.
pub const DEFAULT_LANDMARK_STACKS: usize = 4;
/// Exponents of the bandwidth bank, `2σ² = 2^p·γ`.
pub const BANK_EXPONENTS: RangeInclusive<i32> = -2..=10;

#[derive(Debug, Clone)]
pub struct RbfFeatureMap {
    pub landmarks: DMatrix<f64>,
    pub sigma_sq: f64,
    /// `Q·Λ^{-1/2}` of the landmark kernel.
    pub whitener: DMatrix<f64>,
    pub kept_rank: usize,
}

/// `exp(−‖a_i − b_j‖² / 2σ²)` for all row pairs.
pub fn rbf_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma_sq: f64) -> DMatrix<f64> {
    let an: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let bn: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let mut k = a * b.transpose();
    let denom = 2.0 * sigma_sq;
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let d = (an[i] + bn[j] - 2.0 * k[(i, j)]).max(0.0);
            k[(i, j)] = (-d / denom).exp();
        }
    }
    k
}

/// `max_i ‖x_i‖² / 2`.
pub fn rbf_sigma_heuristic(x: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::DegenerateFeatures("no rows".into()));
    }
    let s = x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max) / 2.0;
    if s <= 0.0 {
        return Err(Error::DegenerateFeatures("all rows are zero".into()));
    }
    Ok(s)
}

pub fn fit_rbf_nystrom(x: &DMatrix<f64>, spec: &SketchSpec, sigma_sq: f64, eig_tol: f64) -> Result<RbfFeatureMap> {
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    if spec.n_input() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "landmark sketch hashes {} samples, features have {}",
            spec.n_input(),
            x.nrows()
        )));
    }
    let landmarks = sketch_rows(spec, &InMemory::new(x, x.nrows()))?;
    from_landmarks(landmarks, sigma_sq, eig_tol)
}

fn from_landmarks(landmarks: DMatrix<f64>, sigma_sq: f64, eig_tol: f64) -> Result<RbfFeatureMap> {
    let w = rbf_kernel(&landmarks, &landmarks, sigma_sq);
    let half = pinv_half(&w, eig_tol)?;
    if half.lambda_max <= 0.0 || half.rank() == 0 {
        return Err(Error::DegenerateFeatures("landmark kernel is numerically zero".into()));
    }
    Ok(RbfFeatureMap {
        kept_rank: half.rank(),
        whitener: half.whitener(),
        landmarks,
        sigma_sq,
    })
}

impl RbfFeatureMap {
    pub fn input_dim(&self) -> usize {
        self.landmarks.ncols()
    }

    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "RBF map expects {} columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(rbf_kernel(x, &self.landmarks, self.sigma_sq) * &self.whitener)
    }

    /// Apply the map block by block.
    pub fn transform(&self, source: &dyn BlockSource) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(source.n_rows(), self.kept_rank);
        let mut at = 0;
        source.visit_blocks(&mut |block| {
            let e = self.embed(block)?;
            if at + e.nrows() > out.nrows() {
                return Err(Error::RowCountMismatch {
                    expected: out.nrows(),
                    actual: at + e.nrows(),
                });
            }
            out.rows_mut(at, e.nrows()).copy_from(&e);
            at += e.nrows();
            Ok(())
        })?;
        if at != out.nrows() {
            return Err(Error::RowCountMismatch {
                expected: out.nrows(),
                actual: at,
            });
        }
        Ok(out)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median squared distance over distinct pairs `i < j`; when there are more
/// than `max_pairs` pairs, over a seeded uniform sample of `max_pairs` pairs.
pub fn median_bandwidth(x: &DMatrix<f64>, max_pairs: usize, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::SingleSample);
    }
    let sq = |i: usize, j: usize| (x.row(i) - x.row(j)).norm_squared();
    let total = n * (n - 1) / 2;
    let mut d: Vec<f64> = if total <= max_pairs.max(1) {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| sq(i, j))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_pairs)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                sq(i, j)
            })
            .collect()
    };
    Ok(median(&mut d))
}

/// One Nyström map per exponent `p`, with `2σ² = 2^p·γ`. All maps share the
/// landmarks `S·X`.
pub fn rbf_kernel_bank(
    x: &DMatrix<f64>,
    gamma: f64,
    exponents: RangeInclusive<i32>,
    spec: &SketchSpec,
    eig_tol: f64,
) -> Result<Vec<RbfFeatureMap>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth gamma must be positive, got {gamma}"
        )));
    }
    if spec.n_input() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "landmark sketch hashes {} samples, input has {}",
            spec.n_input(),
            x.nrows()
        )));
    }
    let landmarks = sketch_rows(spec, &InMemory::new(x, x.nrows()))?;
    let ps: Vec<i32> = exponents.collect();
    ps.par_iter()
        .map(|&p| from_landmarks(landmarks.clone(), 2f64.powi(p - 1) * gamma, eig_tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::DEFAULT_EIG_TOL;
    use crate::sketch::make_sketch;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    /// Kernel entries computed pair by pair from the definition.
    fn naive_kernel(x: &DMatrix<f64>, sigma_sq: f64) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.nrows(), |i, j| {
            (-(x.row(i) - x.row(j)).norm_squared() / (2.0 * sigma_sq)).exp()
        })
    }

    #[test]
    fn sigma_heuristic_values() {
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 1.0]);
        assert_eq!(rbf_sigma_heuristic(&x).unwrap(), 12.5);
        let unit = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        assert!((rbf_sigma_heuristic(&unit).unwrap() - 0.5).abs() < 1e-15);
        assert!((rbf_sigma_heuristic(&(&x * 3.0)).unwrap() - 12.5 * 9.0).abs() < 1e-12);
        assert!(matches!(
            rbf_sigma_heuristic(&DMatrix::zeros(3, 2)),
            Err(Error::DegenerateFeatures(_))
        ));
    }

    #[test]
    fn full_landmarks_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 60, 5);
        let sigma = rbf_sigma_heuristic(&x).unwrap();
        let map = fit_rbf_nystrom(&x, &SketchSpec::identity(60).unwrap(), sigma, DEFAULT_EIG_TOL).unwrap();
        let e = map.embed(&x).unwrap();
        let exact = naive_kernel(&x, sigma);
        assert!((&e * e.transpose() - &exact).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn diagonal_never_exceeds_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 80, 4);
        let spec = make_sketch(5, 80, 16, 4).unwrap();
        let map = fit_rbf_nystrom(&x, &spec, 2.0, DEFAULT_EIG_TOL).unwrap();
        let probe = gaussian(&mut rng, 40, 4);
        let e = map.embed(&probe).unwrap();
        for r in e.row_iter() {
            assert!(r.norm_squared() <= 1.0 + 1e-6);
        }
        let g = &e * e.transpose();
        assert!(g.symmetric_eigenvalues().min() >= -1e-8);
    }

    #[test]
    fn landmark_ms_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut rng, 1500, 3);
        let spec = make_sketch(5, 1500, 1024, 4).unwrap();
        let map = fit_rbf_nystrom(&x, &spec, 3.0, DEFAULT_EIG_TOL).unwrap();
        assert_eq!(map.landmarks.nrows(), 1024);
    }

    #[test]
    fn landmark_rows_reproduce_truncated_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(&mut rng, 50, 3);
        let spec = make_sketch(6, 50, 12, 4).unwrap();
        let map = fit_rbf_nystrom(&x, &spec, 1.5, DEFAULT_EIG_TOL).unwrap();
        let e = map.embed(&map.landmarks).unwrap();
        let w = rbf_kernel(&map.landmarks, &map.landmarks, 1.5);
        let half = pinv_half(&w, DEFAULT_EIG_TOL).unwrap();
        // W·Q·Λ^{-1}·Qᵀ·W is the PSD truncation of W
        let truncated = &w * half.pinv() * &w;
        assert!((&e * e.transpose() - truncated).amax() < 1e-8);
    }

    #[test]
    fn block_transform_matches_whole() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(&mut rng, 45, 3);
        let spec = make_sketch(7, 45, 8, 4).unwrap();
        let map = fit_rbf_nystrom(&x, &spec, 1.0, DEFAULT_EIG_TOL).unwrap();
        let whole = map.transform(&InMemory::new(&x, 45)).unwrap();
        let blocks = map.transform(&InMemory::new(&x, 4)).unwrap();
        assert!((whole - blocks).amax() < 1e-12);
    }

    #[test]
    fn far_point_embeds_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut rng, 30, 2);
        let spec = make_sketch(7, 30, 8, 4).unwrap();
        let map = fit_rbf_nystrom(&x, &spec, 0.5, DEFAULT_EIG_TOL).unwrap();
        let far = DMatrix::from_row_slice(1, 2, &[1e4, -1e4]);
        assert!(map.embed(&far).unwrap().amax() < 1e-300);
        assert!(map.embed(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn median_bandwidth_cases() {
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        assert_eq!(median_bandwidth(&two, 100, 0).unwrap(), 4.0);
        let same = DMatrix::from_element(5, 3, 1.5);
        assert_eq!(median_bandwidth(&same, 100, 0).unwrap(), 0.0);
        assert!(matches!(
            median_bandwidth(&DMatrix::zeros(1, 2), 10, 0),
            Err(Error::SingleSample)
        ));
    }

    #[test]
    fn subsampled_median_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gaussian(&mut rng, 100, 5);
        // oracle: enumerate every ordered pair explicitly
        let mut all = Vec::new();
        for i in 0..100 {
            for j in 0..100 {
                if i < j {
                    all.push((x.row(i) - x.row(j)).norm_squared());
                }
            }
        }
        let full = median(&mut all);
        assert_eq!(median_bandwidth(&x, usize::MAX, 0).unwrap(), full);
        let sub = median_bandwidth(&x, 2000, 11).unwrap();
        assert!((sub - full).abs() / full < 0.10);
    }

    #[test]
    fn bank_has_thirteen_maps_with_bandwidths() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = gaussian(&mut rng, 40, 3);
        let spec = make_sketch(1, 40, 8, 4).unwrap();
        let bank = rbf_kernel_bank(&x, 2.0, BANK_EXPONENTS, &spec, DEFAULT_EIG_TOL).unwrap();
        assert_eq!(bank.len(), 13);
        for (map, p) in bank.iter().zip(-2..=10) {
            assert!((2.0 * map.sigma_sq - 2f64.powi(p) * 2.0).abs() < 1e-12);
        }
        assert!(rbf_kernel_bank(&x, 0.0, BANK_EXPONENTS, &spec, DEFAULT_EIG_TOL).is_err());
    }

    #[test]
    fn bank_extremes_on_dense_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = DMatrix::from_fn(40, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let mut x = gaussian(&mut rng, 40, 3) * 3.0;
        x.column_mut(0).axpy(6.0, &t.column(0), 1.0);
        let gamma = median_bandwidth(&x, usize::MAX, 0).unwrap();
        // narrow bandwidth on spread data: near identity
        let spread = gaussian(&mut rng, 40, 10);
        let g_spread = median_bandwidth(&spread, usize::MAX, 0).unwrap();
        let narrow = naive_kernel(&spread, 2f64.powi(-2 - 1) * g_spread);
        let diag: f64 = narrow.diagonal().sum() / 40.0;
        let off = (narrow.sum() - narrow.diagonal().sum()) / (40.0 * 39.0);
        assert!(diag / off > 10.0);
        // alignment with the balanced ±1 target decays as the kernel flattens
        let tt = &t * t.transpose();
        let align = |k: &DMatrix<f64>| k.dot(&tt) / k.norm();
        let mut prev = f64::INFINITY;
        for p in 2..=10 {
            let a = align(&naive_kernel(&x, 2f64.powi(p - 1) * gamma));
            assert!(a <= prev + 1e-12);
            prev = a;
        }
        let ones = naive_kernel(&x, 2f64.powi(40) * gamma);
        assert!((ones.min() - 1.0).abs() < 1e-9);
    }
}

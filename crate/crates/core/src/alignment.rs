//! Layer selection by kernel-target alignment.
//!
//! The weights `μ ≥ 0, ‖μ‖ = 1` maximize `⟨K, YYᵀ⟩_F / ‖K‖_F` for
//! `K = Σ μ_l X̃_l X̃_lᵀ`. This equals `μ = v/‖v‖` where `v` minimizes
//! `vᵀMv − 2vᵀa` over `v ≥ 0`, with `M_kl = ‖X̃_kᵀX̃_l‖²_F` and
//! `a_l = ‖X̃_lᵀY‖²_F`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::LowRankFeatures;

/// Relative threshold below which weights are dropped from the support.
pub const SUPPORT_EPS: f64 = 1e-8;
pub const DEFAULT_QP_TOL: f64 = 1e-12;
pub const DEFAULT_QP_MAX_ITER: usize = 100_000;

/// One-hot label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: DMatrix<f64>,
    classes: Vec<usize>,
}

impl LabelMatrix {
    pub fn from_classes(classes: &[usize], n_classes: usize) -> Result<Self> {
        let mut data = DMatrix::zeros(classes.len(), n_classes);
        for (i, &c) in classes.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: n_classes,
                });
            }
            data[(i, c)] = 1.0;
        }
        Ok(Self {
            data,
            classes: classes.to_vec(),
        })
    }

    pub fn from_dense(data: DMatrix<f64>) -> Result<Self> {
        let mut classes = Vec::with_capacity(data.nrows());
        for (i, row) in data.row_iter().enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(j, _)| j)
                .collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != row.len() {
                return Err(Error::InvalidParameter(format!("row {i} is not one-hot")));
            }
            classes.push(ones[0]);
        }
        Ok(Self { data, classes })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.data.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let classes: Vec<usize> = rows.iter().map(|&r| self.classes[r]).collect();
        Self::from_classes(&classes, self.n_classes()).expect("subset of valid labels")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProblem {
    pub gram_stats: DMatrix<f64>,
    pub target_stats: DVector<f64>,
}

impl AlignmentProblem {
    pub fn n_layers(&self) -> usize {
        self.target_stats.len()
    }

    /// `vᵀMv − 2vᵀa`.
    pub fn qp_objective(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.gram_stats * v)[(0, 0)] - 2.0 * v.dot(&self.target_stats)
    }

    /// `μᵀa / √(μᵀMμ)`, the alignment of the combined kernel with `YYᵀ`.
    pub fn alignment(&self, mu: &DVector<f64>) -> f64 {
        let quad = (mu.transpose() * &self.gram_stats * mu)[(0, 0)];
        if quad <= 0.0 {
            return 0.0;
        }
        mu.dot(&self.target_stats) / quad.sqrt()
    }

    /// Largest KKT violation of `v` for the nonnegative QP, using the
    /// gradient `2(Mv − a)`.
    pub fn kkt_residual(&self, v: &DVector<f64>) -> f64 {
        let g = (&self.gram_stats * v - &self.target_stats) * 2.0;
        v.iter()
            .zip(g.iter())
            .map(|(&vi, &gi)| if vi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentWeights {
    pub mu: Vec<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
    /// Unnormalized QP minimizer.
    pub v: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl AlignmentWeights {
    /// Support indices ordered by decreasing weight (ties by index).
    pub fn support_by_weight(&self) -> Vec<usize> {
        let mut s = self.support.clone();
        s.sort_by(|&a, &b| self.mu[b].total_cmp(&self.mu[a]).then(a.cmp(&b)));
        s
    }
}

fn squared_cross_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a.transpose() * b).norm_squared()
}

pub fn build_gram_stats(features: &[LowRankFeatures], y: &LabelMatrix) -> Result<AlignmentProblem> {
    if features.is_empty() {
        return Err(Error::InvalidParameter("at least one layer is required".into()));
    }
    let n = y.n_rows();
    if let Some(f) = features.iter().find(|f| f.n_rows() != n) {
        return Err(Error::SampleCountMismatch(format!(
            "layer {} has {} rows, labels have {n}",
            f.layer_id,
            f.n_rows()
        )));
    }
    let l = features.len();
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|k| (k..l).map(move |j| (k, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(k, j)| squared_cross_norm(&features[k].data, &features[j].data))
        .collect();
    let mut gram = DMatrix::zeros(l, l);
    for (&(k, j), v) in pairs.iter().zip(values) {
        gram[(k, j)] = v;
        gram[(j, k)] = v;
    }
    let target = DVector::from_iterator(l, features.iter().map(|f| squared_cross_norm(&f.data, y.data())));
    Ok(AlignmentProblem {
        gram_stats: gram,
        target_stats: target,
    })
}

/// Solve `M_PP z = a_P` on the index set `p`; `None` if numerically singular.
fn solve_restricted(problem: &AlignmentProblem, p: &[usize]) -> Option<DVector<f64>> {
    let k = p.len();
    let sub = DMatrix::from_fn(k, k, |i, j| problem.gram_stats[(p[i], p[j])]);
    let rhs = DVector::from_iterator(k, p.iter().map(|&i| problem.target_stats[i]));
    if let Some(ch) = sub.clone().cholesky() {
        return Some(ch.solve(&rhs));
    }
    sub.lu().solve(&rhs)
}

/// Active-set refinement started from the support of a projected-gradient
/// iterate. Returns `None` when it cannot certify a KKT point.
fn polish(problem: &AlignmentProblem, start: &DVector<f64>) -> Option<DVector<f64>> {
    let l = problem.n_layers();
    let scale = problem.target_stats.amax().max(problem.gram_stats.amax());
    let eps = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut active: Vec<bool> = start.iter().map(|&v| v > 0.0).collect();
    for _ in 0..4 * l + 4 {
        let p: Vec<usize> = (0..l).filter(|&i| active[i]).collect();
        let mut v = DVector::zeros(l);
        if !p.is_empty() {
            let z = solve_restricted(problem, &p)?;
            if let Some((worst, _)) = z
                .iter()
                .enumerate()
                .filter(|(_, &zi)| zi <= 0.0)
                .min_by(|a, b| a.1.total_cmp(b.1))
            {
                active[p[worst]] = false;
                continue;
            }
            for (&i, &zi) in p.iter().zip(z.iter()) {
                v[i] = zi;
            }
        }
        let g = &problem.gram_stats * &v - &problem.target_stats;
        match (0..l)
            .filter(|&i| !active[i] && g[i] < -eps)
            .min_by(|&a, &b| g[a].total_cmp(&g[b]))
        {
            Some(j) => active[j] = true,
            None => return Some(v),
        }
    }
    None
}

/// Nonnegative QP by projected gradient (step `1/λ_max(M)` on `Mv − a`)
/// followed by an active-set polish of the identified support.
pub fn solve_nn_quadratic(problem: &AlignmentProblem, tol: f64, max_iter: usize) -> Result<AlignmentWeights> {
    let l = problem.n_layers();
    if l == 0 || problem.gram_stats.shape() != (l, l) {
        return Err(Error::DimensionMismatch("alignment problem is malformed".into()));
    }
    if problem.target_stats.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "target statistics must be finite and nonnegative".into(),
        ));
    }
    if problem.target_stats.iter().all(|&x| x == 0.0) {
        return Err(Error::NoSignal);
    }
    let sym = (&problem.gram_stats + problem.gram_stats.transpose()) * 0.5;
    let lambda_max = sym.clone().symmetric_eigenvalues().max();
    if lambda_max <= 0.0 {
        return Err(Error::ZeroKernel);
    }
    let step = 1.0 / lambda_max;

    let mut v = DVector::zeros(l);
    let mut f = problem.qp_objective(&v);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let grad = &problem.gram_stats * &v - &problem.target_stats;
        let next = (&v - grad * step).map(|x| x.max(0.0));
        let f_next = problem.qp_objective(&next);
        v = next;
        let change = (f - f_next).abs();
        f = f_next;
        if change < tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    if let Some(p) = polish(problem, &v) {
        if problem.qp_objective(&p) <= f + 1e-12 * f.abs().max(1.0) {
            v = p;
            converged = true;
        }
    }
    if !converged {
        warn!("alignment QP did not converge in {max_iter} iterations; using best iterate");
    }

    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::EmptySupport);
    }
    let mut mu = &v / norm;
    let cutoff = SUPPORT_EPS * mu.max();
    mu.iter_mut().for_each(|m| {
        if *m < cutoff {
            *m = 0.0
        }
    });
    mu /= mu.norm();
    let support: Vec<usize> = (0..l).filter(|&i| mu[i] > 0.0).collect();
    Ok(AlignmentWeights {
        objective: problem.alignment(&mu),
        mu: mu.iter().copied().collect(),
        support,
        v: v.iter().copied().collect(),
        converged,
        iterations,
    })
}

/// `⟨K, YYᵀ⟩_F / ‖K‖_F` from precomputed statistics.
pub fn alignment_score(inner_with_target: f64, kernel_norm: f64) -> Result<f64> {
    if !(kernel_norm > 0.0) {
        return Err(Error::ZeroKernel);
    }
    Ok(inner_with_target / kernel_norm)
}

/// Alignment of `K = X·Xᵀ` with `YYᵀ`, computed from the factor `X`.
pub fn factor_alignment(x: &DMatrix<f64>, y: &LabelMatrix) -> Result<f64> {
    let inner = (x.transpose() * y.data()).norm_squared();
    let norm = (x.transpose() * x).norm();
    alignment_score(inner, norm)
}

/// `[√μ_l · X̃_l]` over the support, in layer order.
pub fn concat_weighted(features: &[LowRankFeatures], weights: &AlignmentWeights) -> Result<DMatrix<f64>> {
    if weights.mu.len() != features.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} layers",
            weights.mu.len(),
            features.len()
        )));
    }
    concat_subset(features, weights, &weights.support)
}

/// `[√μ_l · X̃_l]` for the listed layers, in the given order.
pub fn concat_subset(
    features: &[LowRankFeatures],
    weights: &AlignmentWeights,
    layers: &[usize],
) -> Result<DMatrix<f64>> {
    if layers.is_empty() {
        return Err(Error::EmptySupport);
    }
    let n = features[layers[0]].n_rows();
    if layers.iter().any(|&l| features[l].n_rows() != n) {
        return Err(Error::SampleCountMismatch("layers disagree on sample count".into()));
    }
    let width: usize = layers.iter().map(|&l| features[l].data.ncols()).sum();
    let mut out = DMatrix::zeros(n, width);
    let mut at = 0;
    for &l in layers {
        let block = &features[l].data;
        out.columns_mut(at, block.ncols())
            .copy_from(&(block * weights.mu[l].sqrt()));
        at += block.ncols();
    }
    Ok(out)
}

/// `‖X_φᵀ Q_Y‖²_F / ‖X_φ‖²_F` where `Q_Y` spans the label columns.
pub fn r_squared_diagnostic(x_phi: &DMatrix<f64>, y: &LabelMatrix) -> f64 {
    let total = x_phi.norm_squared();
    if total == 0.0 || y.n_rows() == 0 {
        return 0.0;
    }
    let qr = y.data().clone().qr();
    let r = qr.r();
    let q = qr.q();
    let rmax = r.diagonal().amax();
    let keep: Vec<usize> = (0..r.nrows().min(r.ncols()))
        .filter(|&k| r[(k, k)].abs() > 1e-12 * rmax)
        .collect();
    let explained: f64 = keep
        .iter()
        .map(|&k| (x_phi.transpose() * q.column(k)).norm_squared())
        .sum();
    explained / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn lr(data: DMatrix<f64>, id: usize) -> LowRankFeatures {
        let r = data.ncols();
        LowRankFeatures {
            data,
            layer_id: id,
            kept_rank: r,
            eig_tol: 1e-10,
        }
    }

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> LabelMatrix {
        let cls: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        LabelMatrix::from_classes(&cls, c).unwrap()
    }

    fn problem(m: DMatrix<f64>, a: Vec<f64>) -> AlignmentProblem {
        AlignmentProblem {
            gram_stats: m,
            target_stats: DVector::from_vec(a),
        }
    }

    #[test]
    fn label_matrix_validation() {
        assert!(matches!(
            LabelMatrix::from_classes(&[0, 3], 3),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        let y = LabelMatrix::from_classes(&[1, 0, 2], 3).unwrap();
        assert_eq!(LabelMatrix::from_dense(y.data().clone()).unwrap(), y);
        let mut bad = y.data().clone();
        bad[(0, 0)] = 1.0;
        assert!(LabelMatrix::from_dense(bad).is_err());
    }

    #[test]
    fn gram_stats_orthonormal_single_layer() {
        let (q, _) = DMatrix::<f64>::identity(6, 6).qr().unpack();
        let x = q.columns(0, 3).into_owned();
        let y = LabelMatrix::from_classes(&[0, 1, 0, 1, 0, 1], 2).unwrap();
        let p = build_gram_stats(&[lr(x, 0)], &y).unwrap();
        assert!((p.gram_stats[(0, 0)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gram_stats_orthogonal_layers() {
        let mut a = DMatrix::zeros(4, 1);
        a[(0, 0)] = 1.0;
        let mut b = DMatrix::zeros(4, 1);
        b[(1, 0)] = 1.0;
        let y = LabelMatrix::from_classes(&[0, 1, 0, 1], 2).unwrap();
        let p = build_gram_stats(&[lr(a, 0), lr(b, 1)], &y).unwrap();
        assert_eq!(p.gram_stats[(0, 1)], 0.0);
        assert_eq!(p.gram_stats[(1, 0)], 0.0);
    }

    #[test]
    fn gram_stats_match_dense_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feats: Vec<_> = (0..3).map(|i| lr(gaussian(&mut rng, 25, 3 + i), i)).collect();
        let y = labels(&mut rng, 25, 4);
        let p = build_gram_stats(&feats, &y).unwrap();
        let yy = y.data() * y.data().transpose();
        for k in 0..3 {
            let kk = &feats[k].data * feats[k].data.transpose();
            assert!((kk.dot(&yy) - p.target_stats[k]).abs() < 1e-8);
            for l in 0..3 {
                let kl = &feats[l].data * feats[l].data.transpose();
                assert!((kk.dot(&kl) - p.gram_stats[(k, l)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gram_stats_sample_mismatch() {
        let y = LabelMatrix::from_classes(&[0, 1], 2).unwrap();
        let f = lr(DMatrix::zeros(3, 1), 0);
        assert!(matches!(build_gram_stats(&[f], &y), Err(Error::SampleCountMismatch(_))));
    }

    #[test]
    fn single_layer_weight_is_one() {
        let w = solve_nn_quadratic(&problem(DMatrix::from_element(1, 1, 7.0), vec![2.0]), 1e-12, 1000).unwrap();
        assert_eq!(w.mu, vec![1.0]);
        assert_eq!(w.support, vec![0]);
    }

    #[test]
    fn decoupled_coordinates() {
        let w = solve_nn_quadratic(&problem(DMatrix::identity(2, 2), vec![1.0, 0.0]), 1e-12, 1000).unwrap();
        assert_eq!(w.mu, vec![1.0, 0.0]);
        assert!((w.v[0] - 1.0).abs() < 1e-12);
        assert_eq!(w.v[1], 0.0);
    }

    #[test]
    fn zero_target_has_no_signal() {
        assert!(matches!(
            solve_nn_quadratic(&problem(DMatrix::identity(2, 2), vec![0.0, 0.0]), 1e-12, 10),
            Err(Error::NoSignal)
        ));
    }

    #[test]
    fn kkt_and_normalization_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let l = rng.random_range(2..8);
            let b = DMatrix::from_fn(l, l + 2, |_, _| rng.random::<f64>());
            let m = &b * b.transpose();
            let a: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let p = problem(m, a);
            let w = solve_nn_quadratic(&p, DEFAULT_QP_TOL, DEFAULT_QP_MAX_ITER).unwrap();
            let mu = DVector::from_vec(w.mu.clone());
            assert!((mu.norm() - 1.0).abs() < 1e-10);
            assert!(mu.iter().all(|&x| x >= 0.0));
            assert!(!w.support.is_empty());
            assert!(p.kkt_residual(&DVector::from_vec(w.v.clone())) < 1e-8);
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<_> = (0..4).map(|i| lr(gaussian(&mut rng, 30, 4), i)).collect();
        let y = labels(&mut rng, 30, 3);
        let scaled: Vec<_> = feats.iter().map(|f| lr(&f.data * 3.5, f.layer_id)).collect();
        let w1 = solve_nn_quadratic(
            &build_gram_stats(&feats, &y).unwrap(),
            DEFAULT_QP_TOL,
            DEFAULT_QP_MAX_ITER,
        )
        .unwrap();
        let w2 = solve_nn_quadratic(
            &build_gram_stats(&scaled, &y).unwrap(),
            DEFAULT_QP_TOL,
            DEFAULT_QP_MAX_ITER,
        )
        .unwrap();
        assert_eq!(w1.support, w2.support);
        for (a, b) in w1.mu.iter().zip(&w2.mu) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn concentrates_on_label_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = labels(&mut rng, 60, 3);
        // layer 0 spans exactly the label columns, layer 1 is orthogonal to them
        let signal = y.data().clone();
        let mut noise = gaussian(&mut rng, 60, 5);
        let q = y.data().clone().qr().q();
        noise -= &q * (q.transpose() * &noise);
        let w = solve_nn_quadratic(
            &build_gram_stats(&[lr(signal, 0), lr(noise, 1)], &y).unwrap(),
            DEFAULT_QP_TOL,
            DEFAULT_QP_MAX_ITER,
        )
        .unwrap();
        assert!(w.mu[0] > 0.99);
    }

    #[test]
    fn score_identities() {
        let y = LabelMatrix::from_classes(&[0, 1, 1, 0, 2], 3).unwrap();
        let yy = y.data() * y.data().transpose();
        let s = alignment_score(yy.dot(&yy), yy.norm()).unwrap();
        assert!((s - yy.norm()).abs() < 1e-12);
        // a factor of YYᵀ is Y itself
        assert!((factor_alignment(y.data(), &y).unwrap() - yy.norm()).abs() < 1e-12);
        let k = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.0 }) * 3.0;
        let s1 = alignment_score(k.dot(&yy), k.norm()).unwrap();
        let k3 = &k * 3.0;
        let s3 = alignment_score(k3.dot(&yy), k3.norm()).unwrap();
        assert!((s1 - s3).abs() < 1e-12);
        assert_eq!(alignment_score(0.0, 2.0).unwrap(), 0.0);
        assert!(matches!(alignment_score(1.0, 0.0), Err(Error::ZeroKernel)));
    }

    #[test]
    fn concat_single_layer_and_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats = vec![lr(gaussian(&mut rng, 10, 3), 0), lr(gaussian(&mut rng, 10, 4), 1)];
        let w = AlignmentWeights {
            mu: vec![1.0, 0.0],
            support: vec![0],
            objective: 0.0,
            v: vec![1.0, 0.0],
            converged: true,
            iterations: 1,
        };
        assert_eq!(concat_weighted(&feats, &w).unwrap(), feats[0].data);

        let h = 1.0 / 2f64.sqrt();
        let w = AlignmentWeights {
            mu: vec![h, h],
            support: vec![0, 1],
            ..w
        };
        let x = concat_weighted(&feats, &w).unwrap();
        assert_eq!(x.ncols(), 7);
        let g0 = &feats[0].data * feats[0].data.transpose();
        let g1 = &feats[1].data * feats[1].data.transpose();
        let expected = (g0 + g1) * h;
        assert!((&x * x.transpose() - expected).amax() < 1e-10);

        let empty = AlignmentWeights { support: vec![], ..w };
        assert!(matches!(concat_weighted(&feats, &empty), Err(Error::EmptySupport)));
    }

    #[test]
    fn r_squared_cases() {
        let y = LabelMatrix::from_classes(&[0, 1, 0, 1, 2, 2], 3).unwrap();
        let inside = y.data() * DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 + 0.5);
        assert!((r_squared_diagnostic(&inside, &y) - 1.0).abs() < 1e-12);
        let q = y.data().clone().qr().q();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut orth = gaussian(&mut rng, 6, 2);
        orth -= &q * (q.transpose() * &orth);
        assert!(r_squared_diagnostic(&orth, &y).abs() < 1e-12);
    }

    #[test]
    fn r_squared_matches_dense_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // class 3 is empty: YYᵀ has rank 3
        let y = labels(&mut rng, 20, 3);
        let y = LabelMatrix::from_classes(y.classes(), 4).unwrap();
        let x = gaussian(&mut rng, 20, 5);
        let eig = (y.data() * y.data().transpose()).symmetric_eigen();
        let mut num = 0.0;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l > 1e-9 {
                num += (x.transpose() * eig.eigenvectors.column(k)).norm_squared();
            }
        }
        let oracle = num / x.norm_squared();
        assert!((r_squared_diagnostic(&x, &y) - oracle).abs() < 1e-8);
    }
}

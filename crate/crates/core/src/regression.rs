//! Closed-form ridge regression (primal and dual), transductive ridge
//! regression with pseudo-labels, and cross-validation of the knobs.

use std::io::{Read, Write};

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::LabelMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const DEFAULT_BETA_GRID: [f64; 4] = [0.0, 0.1, 1.0, 10.0];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    Auto,
    Primal,
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
enum Coefficients {
    /// `D x c` weights.
    Primal(DMatrix<f64>),
    /// `N x c` dual coefficients with the `N x D` training design.
    Dual { coef: DMatrix<f64>, train: DMatrix<f64> },
}

/// Parameters of the second stage of a transductive fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransductiveParams {
    pub beta: f64,
    pub beta_prime: f64,
    /// Ridge strength of the stage-1 pseudo-labeler.
    pub stage1_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    coefficients: Coefficients,
    /// Ridge strength; `1` for a transductive fit (identity regularizer).
    pub alpha: f64,
    pub class_count: usize,
    pub transductive: Option<TransductiveParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionScores {
    pub scores: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// First index attaining the row maximum.
pub fn first_argmax<'a>(row: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, &v) in row.into_iter().enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

impl PredictionScores {
    pub fn new(scores: DMatrix<f64>) -> Self {
        let labels = scores.row_iter().map(|r| first_argmax(r.iter())).collect();
        Self { scores, labels }
    }

    pub fn n_rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        accuracy(&self.labels, truth)
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Solve `A·X = B` for symmetric positive-definite `A`.
fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = a.cholesky().ok_or(Error::SingularSystem)?;
    Ok(ch.solve(b))
}

fn add_ridge(mut m: DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        m[(i, i)] += alpha;
    }
    m
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

pub fn fit_ridge(x: &DMatrix<f64>, y: &LabelMatrix, alpha: f64, mode: SolveMode) -> Result<RidgeModel> {
    check_alpha(alpha)?;
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "design must be non-empty, got {n}x{d}"
        )));
    }
    if y.n_rows() != n {
        return Err(Error::SampleCountMismatch(format!(
            "{n} rows of features, {} labels",
            y.n_rows()
        )));
    }
    let mode = match mode {
        SolveMode::Auto if n >= d => SolveMode::Primal,
        SolveMode::Auto => SolveMode::Dual,
        m => m,
    };
    let coefficients = match mode {
        SolveMode::Primal => {
            let gram = add_ridge(x.transpose() * x, alpha);
            Coefficients::Primal(spd_solve(gram, &(x.transpose() * y.data()))?)
        }
        _ => {
            let gram = add_ridge(x * x.transpose(), alpha);
            Coefficients::Dual {
                coef: spd_solve(gram, y.data())?,
                train: x.clone(),
            }
        }
    };
    Ok(RidgeModel {
        coefficients,
        alpha,
        class_count: y.n_classes(),
        transductive: None,
    })
}

impl RidgeModel {
    pub fn mode(&self) -> SolveMode {
        match self.coefficients {
            Coefficients::Primal(_) => SolveMode::Primal,
            Coefficients::Dual { .. } => SolveMode::Dual,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.coefficients {
            Coefficients::Primal(w) => w.nrows(),
            Coefficients::Dual { train, .. } => train.ncols(),
        }
    }

    /// Primal weights, forming `Xᵀ·A` for a dual model.
    pub fn weights(&self) -> DMatrix<f64> {
        match &self.coefficients {
            Coefficients::Primal(w) => w.clone(),
            Coefficients::Dual { coef, train } => train.transpose() * coef,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<PredictionScores> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let scores = match &self.coefficients {
            Coefficients::Primal(w) => x * w,
            Coefficients::Dual { coef, train } => (x * train.transpose()) * coef,
        };
        Ok(PredictionScores::new(scores))
    }

    /// Binary export: magic `SKRM`, u32 version, u8 mode (0 primal, 1 dual),
    /// then u64 rows, cols, class count, f64 alpha, and the row-major
    /// weights (`rows x cols`); a dual model is followed by u64 rows, cols
    /// and the row-major training design. All little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let put_matrix = |w: &mut W, m: &DMatrix<f64>| -> Result<()> {
            w.write_all(&(m.nrows() as u64).to_le_bytes())?;
            w.write_all(&(m.ncols() as u64).to_le_bytes())?;
            Ok(())
        };
        let put_values = |w: &mut W, m: &DMatrix<f64>| -> Result<()> {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    w.write_all(&m[(r, c)].to_le_bytes())?;
                }
            }
            Ok(())
        };
        w.write_all(b"SKRM")?;
        w.write_all(&1u32.to_le_bytes())?;
        let (tag, coef) = match &self.coefficients {
            Coefficients::Primal(m) => (0u8, m),
            Coefficients::Dual { coef, .. } => (1u8, coef),
        };
        w.write_all(&[tag])?;
        put_matrix(w, coef)?;
        w.write_all(&(self.class_count as u64).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        put_values(w, coef)?;
        if let Coefficients::Dual { train, .. } = &self.coefficients {
            put_matrix(w, train)?;
            put_values(w, train)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        fn u64_of<R: Read>(r: &mut R) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        fn f64_of<R: Read>(r: &mut R) -> Result<f64> {
            Ok(f64::from_bits(u64_of(r)?))
        }
        fn matrix_of<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                vals.push(f64_of(r)?);
            }
            Ok(DMatrix::from_row_slice(rows, cols, &vals))
        }
        let mut head = [0u8; 9];
        r.read_exact(&mut head)?;
        if &head[..4] != b"SKRM" || u32::from_le_bytes(head[4..8].try_into().unwrap()) != 1 {
            return Err(Error::InvalidParameter("not a ridge model blob".into()));
        }
        let rows = u64_of(r)? as usize;
        let cols = u64_of(r)? as usize;
        let class_count = u64_of(r)? as usize;
        let alpha = f64_of(r)?;
        let coef = matrix_of(r, rows, cols)?;
        let coefficients = match head[8] {
            0 => Coefficients::Primal(coef),
            1 => {
                let tr = u64_of(r)? as usize;
                let tc = u64_of(r)? as usize;
                Coefficients::Dual {
                    coef,
                    train: matrix_of(r, tr, tc)?,
                }
            }
            t => return Err(Error::InvalidParameter(format!("unknown model mode tag {t}"))),
        };
        Ok(Self {
            coefficients,
            alpha,
            class_count,
            transductive: None,
        })
    }
}

/// One-hot rows at the first argmax.
pub fn pseudo_label(scores: &PredictionScores) -> LabelMatrix {
    LabelMatrix::from_classes(&scores.labels, scores.scores.ncols()).expect("argmax is a valid column")
}

/// `W = (β′X′ᵀX′ + βXᵀX + I)⁻¹(β′X′ᵀY′ + βXᵀY)` with `Y′` the pseudo-labels
/// of `x_unlabeled` from a ridge fit on the labeled data.
pub fn fit_transductive(
    x: &DMatrix<f64>,
    y: &LabelMatrix,
    x_unlabeled: &DMatrix<f64>,
    beta: f64,
    beta_prime: f64,
    alpha: f64,
) -> Result<RidgeModel> {
    fit_transductive_with(x, y, x_unlabeled, beta, beta_prime, alpha, &pseudo_label)
}

/// [`fit_transductive`] with a custom pseudo-labeler for the stage-1 scores.
pub fn fit_transductive_with(
    x: &DMatrix<f64>,
    y: &LabelMatrix,
    x_unlabeled: &DMatrix<f64>,
    beta: f64,
    beta_prime: f64,
    alpha: f64,
    labeler: &(dyn Fn(&PredictionScores) -> LabelMatrix + Sync),
) -> Result<RidgeModel> {
    if !(beta >= 0.0 && beta_prime >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta and beta_prime must be nonnegative, got {beta}, {beta_prime}"
        )));
    }
    check_alpha(alpha)?;
    if beta_prime > 0.0 && x_unlabeled.nrows() == 0 {
        return Err(Error::NoUnlabeled);
    }
    let d = x.ncols();
    if x_unlabeled.nrows() > 0 && x_unlabeled.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "labeled data has {d} features, unlabeled has {}",
            x_unlabeled.ncols()
        )));
    }
    let mut lhs = add_ridge(x.transpose() * x * beta, 1.0);
    let mut rhs = x.transpose() * y.data() * beta;
    if beta_prime > 0.0 {
        let stage1 = fit_ridge(x, y, alpha, SolveMode::Primal)?;
        let pseudo = labeler(&stage1.predict(x_unlabeled)?);
        lhs += x_unlabeled.transpose() * x_unlabeled * beta_prime;
        rhs += x_unlabeled.transpose() * pseudo.data() * beta_prime;
    }
    Ok(RidgeModel {
        coefficients: Coefficients::Primal(spd_solve(lhs, &rhs)?),
        alpha: 1.0,
        class_count: y.n_classes(),
        transductive: Some(TransductiveParams {
            beta,
            beta_prime,
            stage1_alpha: alpha,
        }),
    })
}

/// Seeded k-fold split, stratified by class when every class has at least
/// `folds` members. Returns the validation indices of each fold (ascending).
pub fn kfold_indices(classes: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = classes.len();
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::InvalidParameter(format!(
            "{n} samples cannot fill {folds} folds"
        )));
    }
    let n_classes = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in classes.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stratified = by_class.iter().all(|g| g.is_empty() || g.len() >= folds);
    let mut out = vec![Vec::new(); folds];
    if stratified {
        let mut next = 0;
        for group in &mut by_class {
            group.shuffle(&mut rng);
            for &i in group.iter() {
                out[next % folds].push(i);
                next += 1;
            }
        }
    } else {
        warn!("a class has fewer than {folds} samples; falling back to unstratified folds");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for (k, i) in all.into_iter().enumerate() {
            out[k % folds].push(i);
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn rows_of(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx)
}

/// Mean validation accuracy per grid point, folds evaluated in parallel.
fn cv_scores<F>(n: usize, folds: &[Vec<usize>], grid_len: usize, eval: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<f64> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..grid_len)
        .flat_map(|g| (0..folds.len()).map(move |f| (g, f)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| eval(g, &complement(n, &folds[f]), &folds[f]))
        .collect::<Result<_>>()?;
    Ok(accs
        .chunks(folds.len())
        .map(|c| c.iter().sum::<f64>() / folds.len() as f64)
        .collect())
}

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome<T> {
    pub best: T,
    pub mean_accuracy: f64,
    pub grid_scores: Vec<(T, f64)>,
}

/// Grid point with the highest mean validation accuracy; ties go to the
/// larger α.
pub fn cross_validate_alpha(
    x: &DMatrix<f64>,
    y: &LabelMatrix,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<CvOutcome<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("alpha grid is empty".into()));
    }
    for &a in grid {
        check_alpha(a)?;
    }
    if grid.len() == 1 {
        return Ok(CvOutcome {
            best: grid[0],
            mean_accuracy: f64::NAN,
            grid_scores: vec![(grid[0], f64::NAN)],
        });
    }
    let folds = kfold_indices(y.classes(), folds.min(y.n_rows()), seed)?;
    let scores = cv_scores(x.nrows(), &folds, grid.len(), |g, train, val| {
        let model = fit_ridge(&rows_of(x, train), &y.select(train), grid[g], SolveMode::Auto)?;
        let pred = model.predict(&rows_of(x, val))?;
        Ok(pred.accuracy(y.select(val).classes()))
    })?;
    let mut best = 0;
    for g in 1..grid.len() {
        let better = scores[g] > scores[best] || (scores[g] == scores[best] && grid[g] > grid[best]);
        if better {
            best = g;
        }
    }
    Ok(CvOutcome {
        best: grid[best],
        mean_accuracy: scores[best],
        grid_scores: grid.iter().copied().zip(scores).collect(),
    })
}

/// Select `(β, β′)` by mean labeled-fold validation accuracy; ties go to the
/// smaller β′, then the larger β.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_betas(
    x: &DMatrix<f64>,
    y: &LabelMatrix,
    x_unlabeled: &DMatrix<f64>,
    folds: usize,
    beta_grid: &[f64],
    beta_prime_grid: &[f64],
    alpha: f64,
    seed: u64,
) -> Result<CvOutcome<(f64, f64)>> {
    cross_validate_betas_with(
        x,
        y,
        x_unlabeled,
        folds,
        beta_grid,
        beta_prime_grid,
        alpha,
        seed,
        &pseudo_label,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn cross_validate_betas_with(
    x: &DMatrix<f64>,
    y: &LabelMatrix,
    x_unlabeled: &DMatrix<f64>,
    folds: usize,
    beta_grid: &[f64],
    beta_prime_grid: &[f64],
    alpha: f64,
    seed: u64,
    labeler: &(dyn Fn(&PredictionScores) -> LabelMatrix + Sync),
) -> Result<CvOutcome<(f64, f64)>> {
    if beta_grid.is_empty() || beta_prime_grid.is_empty() {
        return Err(Error::InvalidParameter("beta grids must be non-empty".into()));
    }
    let pairs: Vec<(f64, f64)> = beta_grid
        .iter()
        .flat_map(|&b| beta_prime_grid.iter().map(move |&bp| (b, bp)))
        .collect();
    let folds = kfold_indices(y.classes(), folds.min(y.n_rows()), seed)?;
    let scores = cv_scores(x.nrows(), &folds, pairs.len(), |g, train, val| {
        let (b, bp) = pairs[g];
        let model = fit_transductive_with(&rows_of(x, train), &y.select(train), x_unlabeled, b, bp, alpha, labeler)?;
        let pred = model.predict(&rows_of(x, val))?;
        Ok(pred.accuracy(y.select(val).classes()))
    })?;
    let mut best = 0;
    for g in 1..pairs.len() {
        let (b, bp) = pairs[g];
        let (bb, bbp) = pairs[best];
        let better = scores[g] > scores[best] || (scores[g] == scores[best] && (bp < bbp || (bp == bbp && b > bb)));
        if better {
            best = g;
        }
    }
    Ok(CvOutcome {
        best: pairs[best],
        mean_accuracy: scores[best],
        grid_scores: pairs.into_iter().zip(scores).collect(),
    })
}

//! Nyström features for the linear kernel of one layer.
//!
//! With `B = S·X` the layer's sketch and `C = B·Bᵀ = Q Λ Qᵀ`, the features
//! `X̃ = X·Bᵀ·Q·Λ^{-1/2}` satisfy `X̃·X̃ᵀ = X·Bᵀ·C^†·B·Xᵀ`. Fitting needs one
//! pass over `X` (for `B`), applying the map needs a second.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sketch::SketchSpec;
use crate::stream::BlockSource;

/// Default relative eigenvalue truncation threshold.
pub const DEFAULT_EIG_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-8;

/// Truncated eigenbasis of a PSD matrix with the inverse square roots of the
/// kept eigenvalues, in descending eigenvalue order.
#[derive(Debug, Clone)]
pub struct HalfPinv {
    pub basis: DMatrix<f64>,
    pub inv_sqrt: DVector<f64>,
    pub lambda_max: f64,
}

impl HalfPinv {
    pub fn rank(&self) -> usize {
        self.inv_sqrt.len()
    }

    /// `Q · diag(Λ^{-1/2})`.
    pub fn whitener(&self) -> DMatrix<f64> {
        let mut w = self.basis.clone();
        for (mut col, s) in w.column_iter_mut().zip(self.inv_sqrt.iter()) {
            col *= *s;
        }
        w
    }

    /// `Q · Λ^{-1} · Qᵀ`, the truncated pseudo-inverse.
    pub fn pinv(&self) -> DMatrix<f64> {
        let w = self.whitener();
        &w * w.transpose()
    }
}

fn check_eig_tol(eig_tol: f64) -> Result<()> {
    if !(eig_tol > 0.0 && eig_tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eig_tol must lie in (0, 1), got {eig_tol}"
        )));
    }
    Ok(())
}

/// Eigendecompose symmetric `c`, keeping eigenpairs with
/// `λ ≥ eig_tol·λ_max` and `λ > 0`.
pub fn pinv_half(c: &DMatrix<f64>, eig_tol: f64) -> Result<HalfPinv> {
    check_eig_tol(eig_tol)?;
    if !c.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {:?}",
            c.shape()
        )));
    }
    let n = c.nrows();
    let scale = c.amax();
    if scale > 0.0 {
        let asym = (c - c.transpose()).amax() / scale;
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
    }
    if n == 0 || scale == 0.0 {
        return Ok(HalfPinv {
            basis: DMatrix::zeros(n, 0),
            inv_sqrt: DVector::zeros(0),
            lambda_max: 0.0,
        });
    }
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda_max = eig.eigenvalues[order[0]];
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| {
            let l = eig.eigenvalues[i];
            l > 0.0 && l >= eig_tol * lambda_max
        })
        .collect();
    let mut basis = DMatrix::zeros(n, kept.len());
    let mut inv_sqrt = DVector::zeros(kept.len());
    for (k, &i) in kept.iter().enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(i));
        inv_sqrt[k] = 1.0 / eig.eigenvalues[i].sqrt();
    }
    Ok(HalfPinv {
        basis,
        inv_sqrt,
        lambda_max,
    })
}

/// Low-rank linear-kernel features of one layer (`N x r`).
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFeatures {
    pub data: DMatrix<f64>,
    pub layer_id: usize,
    pub kept_rank: usize,
    pub eig_tol: f64,
}

impl LowRankFeatures {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }
}

/// The fitted map `x ↦ x·Bᵀ·Q·Λ^{-1/2}` for one layer.
#[derive(Debug, Clone)]
pub struct LinearNystromMap {
    /// `d_l x r` projection `Bᵀ·Q·Λ^{-1/2}`.
    pub projection: DMatrix<f64>,
    pub layer_id: usize,
    pub eig_tol: f64,
}

impl LinearNystromMap {
    /// Build the map from an already accumulated sketch `B = S·X`.
    pub fn from_sketch(sketched: &DMatrix<f64>, eig_tol: f64, layer_id: usize) -> Result<Self> {
        let gram = sketched * sketched.transpose();
        let half = pinv_half(&gram, eig_tol)?;
        if half.lambda_max <= 0.0 {
            return Err(Error::DegenerateSketch(half.lambda_max));
        }
        let projection = sketched.transpose() * half.whitener();
        Ok(Self {
            projection,
            layer_id,
            eig_tol,
        })
    }

    /// First streaming pass: accumulate `S·X` and fit.
    pub fn fit(source: &dyn BlockSource, spec: &SketchSpec, eig_tol: f64, layer_id: usize) -> Result<Self> {
        check_eig_tol(eig_tol)?;
        if spec.n_input() != source.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "sketch hashes {} samples, layer {layer_id} has {}",
                spec.n_input(),
                source.n_rows()
            )));
        }
        let sketched = crate::sketch::sketch_rows(spec, source)?;
        Self::from_sketch(&sketched, eig_tol, layer_id)
    }

    pub fn kept_rank(&self) -> usize {
        self.projection.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "layer {} map expects {} columns, got {}",
                self.layer_id,
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(x * &self.projection)
    }

    /// Second streaming pass: project every block.
    pub fn transform(&self, source: &dyn BlockSource) -> Result<LowRankFeatures> {
        let mut data = DMatrix::zeros(source.n_rows(), self.kept_rank());
        let mut at = 0;
        source.visit_blocks(&mut |block| {
            let out = self.apply(block)?;
            if at + out.nrows() > data.nrows() {
                return Err(Error::RowCountMismatch {
                    expected: data.nrows(),
                    actual: at + out.nrows(),
                });
            }
            data.rows_mut(at, out.nrows()).copy_from(&out);
            at += out.nrows();
            Ok(())
        })?;
        if at != data.nrows() {
            return Err(Error::RowCountMismatch {
                expected: data.nrows(),
                actual: at,
            });
        }
        Ok(LowRankFeatures {
            data,
            layer_id: self.layer_id,
            kept_rank: self.kept_rank(),
            eig_tol: self.eig_tol,
        })
    }
}

/// Fit and apply the linear Nyström map in two passes over `source`.
pub fn nystrom_linear_features(
    source: &dyn BlockSource,
    spec: &SketchSpec,
    eig_tol: f64,
    layer_id: usize,
) -> Result<LowRankFeatures> {
    LinearNystromMap::fit(source, spec, eig_tol, layer_id)?.transform(source)
}

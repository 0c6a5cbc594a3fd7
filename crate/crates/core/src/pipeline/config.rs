use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{temperature_grid, DEFAULT_BINS, DEFAULT_TEMPERATURE_POINTS};
use crate::error::{Error, Result};
use crate::kernels::DEFAULT_LANDMARK_STACKS;
use crate::lowrank::DEFAULT_EIG_TOL;
use crate::regression::{DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID, DEFAULT_FOLDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Supervised,
    Semi,
    AblationAccumulate,
    AblationIndividual,
    BaselineRandproj,
    BaselineRbfBank,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::Semi => "semi",
            Mode::AblationAccumulate => "ablation-accumulate",
            Mode::AblationIndividual => "ablation-individual",
            Mode::BaselineRandproj => "baseline-randproj",
            Mode::BaselineRbfBank => "baseline-rbf-bank",
        }
    }
}

/// Training fractions from 2% to 100%, roughly evenly spaced in log scale.
pub const DEFAULT_PORTIONS: [f64; 6] = [0.02, 0.043, 0.093, 0.2, 0.43, 1.0];

pub fn default_portions() -> Vec<f64> {
    DEFAULT_PORTIONS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for TemperatureGrid {
    fn default() -> Self {
        Self {
            lo: 1e-2,
            hi: 1e2,
            points: DEFAULT_TEMPERATURE_POINTS,
        }
    }
}

impl TemperatureGrid {
    pub fn values(&self) -> Vec<f64> {
        temperature_grid(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Sketch buckets `M` per layer.
    pub buckets: usize,
    /// Stacked CountSketches `s` per layer sketch.
    pub stacks: usize,
    /// RBF landmark count `M_s = ms_factor · M`, rounded up to a multiple of
    /// `landmark_stacks`.
    pub ms_factor: f64,
    pub landmark_stacks: usize,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub beta_prime_grid: Vec<f64>,
    pub portions: Vec<f64>,
    pub labels_per_class: Vec<usize>,
    pub seed: u64,
    pub trials: usize,
    pub skip_rbf: bool,
    /// Fixed `σ²` instead of the max-norm heuristic.
    pub sigma_sq: Option<f64>,
    pub eig_tol: f64,
    pub n_bins: usize,
    pub temperature: TemperatureGrid,
    pub cv_folds: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub block_rows: usize,
    /// Pair budget of the median-bandwidth estimate.
    pub median_pairs: usize,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Supervised,
            buckets: 512,
            stacks: 4,
            ms_factor: 2.0,
            landmark_stacks: DEFAULT_LANDMARK_STACKS,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            beta_prime_grid: DEFAULT_BETA_GRID.to_vec(),
            portions: default_portions(),
            labels_per_class: vec![2, 5, 10, 20, 50, 100],
            seed: 0,
            trials: 5,
            skip_rbf: false,
            sigma_sq: None,
            eig_tol: DEFAULT_EIG_TOL,
            n_bins: DEFAULT_BINS,
            temperature: TemperatureGrid::default(),
            cv_folds: DEFAULT_FOLDS,
            qp_tol: crate::alignment::DEFAULT_QP_TOL,
            qp_max_iter: crate::alignment::DEFAULT_QP_MAX_ITER,
            block_rows: 4096,
            median_pairs: 100_000,
            manifest: None,
            out_dir: None,
            cache_dir: None,
        }
    }
}

fn positive_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!(
            "{name} must be a non-empty list of positive values"
        )));
    }
    Ok(())
}

fn nonneg_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!(
            "{name} must be a non-empty list of nonnegative values"
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stacks == 0 || self.buckets < self.stacks || !self.buckets.is_multiple_of(self.stacks) {
            return Err(Error::Config(format!(
                "buckets ({}) must be a positive multiple of stacks ({})",
                self.buckets, self.stacks
            )));
        }
        if !(self.ms_factor > 0.0) || !self.ms_factor.is_finite() {
            return Err(Error::Config(format!(
                "ms_factor must be positive, got {}",
                self.ms_factor
            )));
        }
        if self.landmark_stacks == 0 {
            return Err(Error::Config("landmark_stacks must be positive".into()));
        }
        if self.portions.is_empty() || self.portions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Config("every portion must lie in (0, 1]".into()));
        }
        positive_grid("alpha_grid", &self.alpha_grid)?;
        nonneg_grid("beta_grid", &self.beta_grid)?;
        nonneg_grid("beta_prime_grid", &self.beta_prime_grid)?;
        if self.mode == Mode::Semi && (self.labels_per_class.is_empty() || self.labels_per_class.contains(&0)) {
            return Err(Error::Config(
                "labels_per_class must be a non-empty list of positive counts".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        if let Some(s) = self.sigma_sq {
            if !(s > 0.0) {
                return Err(Error::Config(format!("sigma_sq must be positive, got {s}")));
            }
        }
        if !(self.eig_tol > 0.0 && self.eig_tol < 1.0) {
            return Err(Error::Config(format!(
                "eig_tol must lie in (0, 1), got {}",
                self.eig_tol
            )));
        }
        if self.n_bins == 0 {
            return Err(Error::Config("n_bins must be positive".into()));
        }
        let t = &self.temperature;
        if !(t.lo > 0.0 && t.hi >= t.lo) || t.points == 0 {
            return Err(Error::Config(
                "temperature grid must satisfy 0 < lo <= hi, points >= 1".into(),
            ));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if self.block_rows == 0 || self.median_pairs == 0 {
            return Err(Error::Config("block_rows and median_pairs must be positive".into()));
        }
        Ok(())
    }

    /// `M_s`, rounded up to a multiple of the landmark stack count.
    pub fn landmark_buckets(&self) -> usize {
        let raw = (self.ms_factor * self.buckets as f64).round().max(1.0) as usize;
        raw.div_ceil(self.landmark_stacks) * self.landmark_stacks
    }

    /// Copy without filesystem paths, for run records.
    pub fn knobs(&self) -> Self {
        Self {
            manifest: None,
            out_dir: None,
            cache_dir: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portion_sweep_is_log_linear() {
        let p = default_portions();
        assert_eq!((p[0], p[5]), (0.02, 1.0));
        let ratio = (1.0f64 / 0.02).powf(0.2);
        for w in p.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 0.1 * ratio);
        }
    }

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.landmark_buckets(), 1024);
        assert_eq!(c.temperature.values().len(), 50);
    }

    #[test]
    fn invariants_enforced() {
        let bad = [
            RunConfig {
                buckets: 6,
                ..Default::default()
            },
            RunConfig {
                ms_factor: 0.0,
                ..Default::default()
            },
            RunConfig {
                portions: vec![0.0],
                ..Default::default()
            },
            RunConfig {
                portions: vec![1.5],
                ..Default::default()
            },
            RunConfig {
                alpha_grid: vec![],
                ..Default::default()
            },
            RunConfig {
                mode: Mode::Semi,
                labels_per_class: vec![],
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn json_round_trip_and_partial() {
        let c: RunConfig = serde_json::from_str(r#"{"mode": "baseline-rbf-bank", "buckets": 64}"#).unwrap();
        assert_eq!(c.mode, Mode::BaselineRbfBank);
        assert_eq!(c.buckets, 64);
        assert_eq!(c.stacks, 4);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bukets": 64}"#).is_err());
    }

    #[test]
    fn landmark_rounding() {
        let c = RunConfig {
            buckets: 10,
            stacks: 2,
            ms_factor: 1.5,
            ..Default::default()
        };
        assert_eq!(c.landmark_buckets(), 16);
    }
}

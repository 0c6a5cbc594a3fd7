//! Synthetic layered features for desk-scale experiments.
//!
//! Layer `l` of sample `i` is `signal_l · m_l[y_i] + shared · z_i A_l + ε`
//! where `m_l[k]` are random unit class directions, `z_i` is a
//! class-independent latent shared by all layers and `ε` is unit Gaussian
//! noise. Layers with zero signal carry no label information.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{self, LayerEntry, Manifest, RawEntry, SplitFiles};
use crate::npy;
use crate::sketch::derive_seed;

const SHARED_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub layer_dims: Vec<usize>,
    /// Class-mean norm per layer; `0` gives a pure-noise layer.
    pub signal: Vec<f64>,
    pub shared: f64,
    /// Dimension of the raw-input arrays; `0` skips them.
    pub raw_dim: usize,
    pub raw_signal: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 1000,
            n_test: 500,
            n_classes: 5,
            layer_dims: vec![64, 128, 96, 32],
            signal: vec![0.0, 0.0, 5.0, 0.0],
            shared: 1.0,
            raw_dim: 0,
            raw_signal: 1.5,
        }
    }
}

impl SynthSpec {
    /// Default spec with the signal confined to `layer`.
    pub fn single_signal(seed: u64, layer_dims: Vec<usize>, layer: usize, strength: f64) -> Self {
        let mut signal = vec![0.0; layer_dims.len()];
        signal[layer] = strength;
        Self {
            seed,
            layer_dims,
            signal,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.n_classes == 0 {
            return Err(Error::InvalidParameter(
                "sample and class counts must be positive".into(),
            ));
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::InvalidParameter("layer dimensions must be positive".into()));
        }
        if self.signal.len() != self.layer_dims.len() {
            return Err(Error::InvalidParameter(format!(
                "{} signal strengths for {} layers",
                self.signal.len(),
                self.layer_dims.len()
            )));
        }
        Ok(())
    }
}

/// In-memory synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub train: Vec<DMatrix<f64>>,
    pub test: Vec<DMatrix<f64>>,
    pub raw: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn balanced_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % c).collect();
    y.shuffle(rng);
    y
}

fn unit_rows(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}

fn layer(
    rng: &mut ChaCha8Rng,
    labels: &[usize],
    latent: &DMatrix<f64>,
    means: &DMatrix<f64>,
    loading: &DMatrix<f64>,
    signal: f64,
) -> DMatrix<f64> {
    let d = means.ncols();
    let mut x = latent * loading;
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            x[(i, j)] += signal * means[(y, j)] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    x
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let train_labels = balanced_labels(&mut rng, spec.n_train, spec.n_classes);
    let test_labels = balanced_labels(&mut rng, spec.n_test, spec.n_classes);
    let latent_train = DMatrix::from_fn(spec.n_train, SHARED_RANK, |_, _| rng.sample::<f64, _>(StandardNormal));
    let latent_test = DMatrix::from_fn(spec.n_test, SHARED_RANK, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (l, &d) in spec.layer_dims.iter().enumerate() {
        let mut lr = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1 + l as u64));
        let means = unit_rows(&mut lr, spec.n_classes, d);
        let loading = unit_rows(&mut lr, SHARED_RANK, d) * spec.shared;
        train.push(layer(
            &mut lr,
            &train_labels,
            &latent_train,
            &means,
            &loading,
            spec.signal[l],
        ));
        test.push(layer(
            &mut lr,
            &test_labels,
            &latent_test,
            &means,
            &loading,
            spec.signal[l],
        ));
    }
    let raw = (spec.raw_dim > 0).then(|| {
        let mut rr = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
        let means = unit_rows(&mut rr, spec.n_classes, spec.raw_dim);
        let loading = unit_rows(&mut rr, SHARED_RANK, spec.raw_dim) * spec.shared;
        let a = layer(&mut rr, &train_labels, &latent_train, &means, &loading, spec.raw_signal);
        let b = layer(&mut rr, &test_labels, &latent_test, &means, &loading, spec.raw_signal);
        (a, b)
    });
    Ok(SynthData {
        train_labels,
        test_labels,
        train,
        test,
        raw,
    })
}

/// Generate and write float32 arrays plus `manifest.json` under `dir`.
pub fn synth_features(spec: &SynthSpec, dir: &Path) -> Result<PathBuf> {
    let data = generate(spec)?;
    fs::create_dir_all(dir)?;
    let mut layers = Vec::new();
    for (l, (tr, te)) in data.train.iter().zip(&data.test).enumerate() {
        let train = PathBuf::from(format!("layer_{l:02}_train.npy"));
        let test = PathBuf::from(format!("layer_{l:02}_test.npy"));
        npy::write_f32(dir.join(&train), tr)?;
        npy::write_f32(dir.join(&test), te)?;
        layers.push(LayerEntry {
            id: l,
            dim: tr.ncols(),
            train,
            test,
        });
    }
    npy::write_labels(dir.join("labels_train.npy"), &data.train_labels)?;
    npy::write_labels(dir.join("labels_test.npy"), &data.test_labels)?;
    let raw = match &data.raw {
        Some((a, b)) => {
            npy::write_f32(dir.join("raw_train.npy"), a)?;
            npy::write_f32(dir.join("raw_test.npy"), b)?;
            Some(RawEntry {
                dim: a.ncols(),
                train: "raw_train.npy".into(),
                test: "raw_test.npy".into(),
            })
        }
        None => None,
    };
    let m = Manifest {
        dataset: format!("synth-{}", spec.seed),
        n_train: spec.n_train,
        n_test: spec.n_test,
        n_classes: spec.n_classes,
        dtype: "float32".into(),
        layers,
        labels: SplitFiles {
            train: "labels_train.npy".into(),
            test: "labels_test.npy".into(),
        },
        raw,
        producer: serde_json::json!({ "generator": "synth", "spec": spec }),
    };
    manifest::write_manifest(dir, &m)
}

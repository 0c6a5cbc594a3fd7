//! Dataset manifest: a JSON index of per-layer feature arrays.
//!
//! ```json
//! {
//!   "dataset": "cifar10",
//!   "n_train": 50000,
//!   "n_test": 10000,
//!   "n_classes": 10,
//!   "dtype": "float32",
//!   "layers": [
//!     {"id": 0, "dim": 65536, "train": "layer_00_train.npy", "test": "layer_00_test.npy"}
//!   ],
//!   "labels": {"train": "labels_train.npy", "test": "labels_test.npy"},
//!   "raw": {"dim": 3072, "train": "raw_train.npy", "test": "raw_test.npy"},
//!   "producer": {"model": "resnet18"}
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `raw` and
//! `producer` are optional.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy::{self, NpyFile};
use crate::stream::{BlockSource, NpyRows};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: usize,
    pub dim: usize,
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub dim: usize,
    pub train: PathBuf,
    pub test: PathBuf,
}

fn default_dtype() -> String {
    "float32".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    pub layers: Vec<LayerEntry>,
    pub labels: SplitFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawEntry>,
    #[serde(default)]
    pub producer: serde_json::Value,
}

/// A manifest whose files were all checked, with loaded labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

impl Dataset {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn n_layers(&self) -> usize {
        self.manifest.layers.len()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes
    }

    pub fn layer_train(&self, l: usize) -> PathBuf {
        self.resolve(&self.manifest.layers[l].train)
    }

    pub fn layer_test(&self, l: usize) -> PathBuf {
        self.resolve(&self.manifest.layers[l].test)
    }
}

fn check_array(path: &Path, context: &str, expected: &[usize]) -> Result<NpyFile> {
    let file = NpyFile::open(path)?;
    let found = file.shape().to_vec();
    let matches = found == expected || (expected.len() == 1 && found == [expected[0], 1]);
    if !matches {
        return Err(Error::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_vec(),
            found,
        });
    }
    Ok(file)
}

fn check_finite(path: &Path, context: &str) -> Result<()> {
    let src = NpyRows::open(path, None, 4096)?;
    src.visit_blocks(&mut |b| {
        if b.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteData(context.to_string()))
        }
    })
}

fn check_features(path: &Path, context: &str, rows: usize, dim: usize) -> Result<()> {
    let file = check_array(path, context, &[rows, dim])?;
    if !file.dtype().is_float() {
        return Err(Error::Manifest(format!(
            "{context}: feature arrays must be float32 or float64"
        )));
    }
    check_finite(path, context)
}

fn check_labels(path: &Path, context: &str, rows: usize, classes: usize) -> Result<Vec<usize>> {
    check_array(path, context, &[rows])?;
    let labels = npy::read_labels(path)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Manifest(format!(
            "{context}: label {bad} out of range for {classes} classes"
        )));
    }
    Ok(labels)
}

/// Parse and eagerly validate a manifest: every file exists, has the
/// declared shape and holds finite values. Layer order is kept as written.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(manifest, root)
}

pub fn validate(manifest: Manifest, root: PathBuf) -> Result<Dataset> {
    let m = &manifest;
    if m.layers.is_empty() {
        return Err(Error::Manifest("layer list is empty".into()));
    }
    if m.n_train == 0 || m.n_test == 0 {
        return Err(Error::Manifest("n_train and n_test must be positive".into()));
    }
    if m.n_classes == 0 {
        return Err(Error::Manifest("n_classes must be positive".into()));
    }
    if m.dtype != "float32" && m.dtype != "float64" {
        return Err(Error::Manifest(format!("unsupported dtype {:?}", m.dtype)));
    }
    let mut seen = HashSet::new();
    for layer in &m.layers {
        if !seen.insert(layer.id) {
            return Err(Error::Manifest(format!("duplicate layer id {}", layer.id)));
        }
        if layer.dim == 0 {
            return Err(Error::Manifest(format!("layer {} has zero dimension", layer.id)));
        }
    }
    let ds = Dataset {
        manifest: manifest.clone(),
        root,
        train_labels: Vec::new(),
        test_labels: Vec::new(),
    };
    for layer in &m.layers {
        let id = layer.id;
        check_features(
            &ds.resolve(&layer.train),
            &format!("layer {id} train"),
            m.n_train,
            layer.dim,
        )?;
        check_features(
            &ds.resolve(&layer.test),
            &format!("layer {id} test"),
            m.n_test,
            layer.dim,
        )?;
    }
    if let Some(raw) = &m.raw {
        check_features(&ds.resolve(&raw.train), "raw train", m.n_train, raw.dim)?;
        check_features(&ds.resolve(&raw.test), "raw test", m.n_test, raw.dim)?;
    }
    let train_labels = check_labels(&ds.resolve(&m.labels.train), "train labels", m.n_train, m.n_classes)?;
    let test_labels = check_labels(&ds.resolve(&m.labels.test), "test labels", m.n_test, m.n_classes)?;
    Ok(Dataset {
        train_labels,
        test_labels,
        ..ds
    })
}

/// Write `manifest` as `dir/manifest.json` via a temporary file and rename.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(manifest)?)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

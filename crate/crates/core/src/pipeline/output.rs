use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::error::{Error, Result};
use crate::npy;
use crate::regression::SolveMode;

pub const RESULTS_FILE: &str = "results.json";
pub const LOG_FILE: &str = "run.log";
pub const PREDICTIONS_FILE: &str = "predictions.npy";
pub const PREDICTIONS_META_FILE: &str = "predictions.json";
pub const MODEL_FILE: &str = "model.bin";

/// Metadata written next to exported training-set scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub dataset: String,
    pub seed: u64,
    pub portion: f64,
    pub n_rows: usize,
    pub n_classes: usize,
    pub layer_ids: Vec<usize>,
    pub mu: Vec<f64>,
    pub alpha: f64,
    pub sigma_sq: Option<f64>,
    pub temperature: f64,
    pub feature_dim: usize,
    pub solve_mode: SolveMode,
    /// Training rows behind the scores when a subsample was used.
    pub rows: Option<Vec<usize>>,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AccuracyRow {
    portion: f64,
    trial: usize,
    seed: u64,
    n_train: usize,
    accuracy: f64,
    alpha: f64,
    sigma_sq: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow {
    portion: f64,
    trials: usize,
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct MuRow {
    portion: f64,
    trial: usize,
    layer_id: usize,
    mu: f64,
}

#[derive(Serialize)]
struct EceRow {
    portion: f64,
    trial: usize,
    temperature: f64,
    train_ece_before: f64,
    train_ece_after: f64,
    test_ece_before: f64,
    test_ece_after: f64,
}

#[derive(Serialize)]
struct AblationRow<'a> {
    kind: &'a str,
    trial: usize,
    step: usize,
    layers: String,
    accuracy: f64,
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

/// Write `results.json`, the CSV series produced by the run and `run.log`
/// under `dir`. Returns the written paths.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let results = dir.join(RESULTS_FILE);
    fs::write(&results, serde_json::to_string_pretty(result)?)?;
    written.push(results);

    let mut series = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = dir.join(name);
        f(&p)?;
        written.push(p);
        Ok(())
    };
    if !result.trials.is_empty() {
        series("accuracy.csv", &|p| {
            write_csv(
                p,
                result.trials.iter().map(|t| AccuracyRow {
                    portion: t.portion,
                    trial: t.trial,
                    seed: t.seed,
                    n_train: t.n_train,
                    accuracy: t.accuracy,
                    alpha: t.alpha,
                    sigma_sq: t.sigma_sq,
                }),
            )
        })?;
        series("accuracy_summary.csv", &|p| {
            write_csv(
                p,
                result.summary.iter().map(|s| SummaryRow {
                    portion: s.portion,
                    trials: s.accuracies.len(),
                    mean: s.mean,
                    std: s.std,
                }),
            )
        })?;
        series("mu.csv", &|p| {
            write_csv(
                p,
                result.trials.iter().flat_map(|t| {
                    result.layer_ids.iter().zip(&t.mu).map(move |(&id, &mu)| MuRow {
                        portion: t.portion,
                        trial: t.trial,
                        layer_id: id,
                        mu,
                    })
                }),
            )
        })?;
        series("ece.csv", &|p| {
            write_csv(
                p,
                result.trials.iter().map(|t| EceRow {
                    portion: t.portion,
                    trial: t.trial,
                    temperature: t.calibration.temperature,
                    train_ece_before: t.calibration.train_ece_before,
                    train_ece_after: t.calibration.train_ece_after,
                    test_ece_before: t.calibration.test_ece_before,
                    test_ece_after: t.calibration.test_ece_after,
                }),
            )
        })?;
    }
    if !result.ablation.is_empty() {
        series("ablation.csv", &|p| {
            write_csv(
                p,
                result.ablation.iter().map(|a| AblationRow {
                    kind: match a.kind {
                        super::AblationKind::Accumulate => "accumulate",
                        super::AblationKind::Individual => "individual",
                    },
                    trial: a.trial,
                    step: a.step,
                    layers: join_ids(&a.layers),
                    accuracy: a.accuracy,
                }),
            )
        })?;
    }
    if !result.semi.is_empty() {
        series("semi.csv", &|p| write_csv(p, &result.semi))?;
    }
    if !result.baseline.is_empty() {
        series("baseline.csv", &|p| write_csv(p, &result.baseline))?;
    }
    series("timings.csv", &|p| write_csv(p, &result.timings))?;

    let log = dir.join(LOG_FILE);
    let mut w = BufWriter::new(File::create(&log)?);
    for line in &result.log {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    written.push(log);
    Ok(written)
}

/// Write the training-set score matrix (`predictions.npy`), its metadata
/// (`predictions.json`) and the ridge model blob (`model.bin`) under `dir`.
pub fn export_predictions(result: &RunResult, dir: &Path) -> Result<PathBuf> {
    let bundle = result
        .export
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("run result carries no training predictions".into()))?;
    fs::create_dir_all(dir)?;
    let scores = dir.join(PREDICTIONS_FILE);
    npy::write_f64(&scores, &bundle.scores)?;
    fs::write(
        dir.join(PREDICTIONS_META_FILE),
        serde_json::to_string_pretty(&bundle.meta)?,
    )?;
    let mut w = BufWriter::new(File::create(dir.join(MODEL_FILE))?);
    bundle.model.write_to(&mut w)?;
    w.flush()?;
    Ok(scores)
}

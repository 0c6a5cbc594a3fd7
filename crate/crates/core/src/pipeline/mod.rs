//! Experiment orchestration: per-layer sketching, layer alignment, RBF
//! features, ridge fits, calibration and result emission.

mod config;
mod output;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{default_portions, Mode, RunConfig, TemperatureGrid, DEFAULT_PORTIONS};
pub use output::{export_predictions, write_outputs, ExportMeta, PREDICTIONS_FILE, RESULTS_FILE};

use crate::alignment::{build_gram_stats, concat_subset, solve_nn_quadratic, AlignmentWeights, LabelMatrix};
use crate::calibration::{ece, fit_temperature, scores_to_confidence};
use crate::error::{Error, Result};
use crate::kernels::{fit_rbf_nystrom, median_bandwidth, rbf_kernel_bank, rbf_sigma_heuristic, BANK_EXPONENTS};
use crate::lowrank::{LinearNystromMap, LowRankFeatures};
use crate::manifest::Dataset;
use crate::regression::{
    cross_validate_alpha, cross_validate_betas, fit_ridge, fit_transductive, PredictionScores, RidgeModel, SolveMode,
};
use crate::sketch::{derive_seed, make_sketch, sketch_features, FeatureMatrix, RowSketcher};
use crate::stream::{BlockCache, BlockSource, InMemory, NpyRows};

const SUBSAMPLE_TAG: u64 = 1;
const RBF_TAG: u64 = 2;
const CV_TAG: u64 = 3;
const MEDIAN_TAG: u64 = 4;
const BANK_TAG: u64 = 5;
const LAYER_TAG: u64 = 1 << 32;

static CACHE_COUNTER: AtomicUsize = AtomicUsize::new(0);

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub temperature: f64,
    pub train_ece_before: f64,
    pub train_ece_after: f64,
    pub test_ece_before: f64,
    pub test_ece_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub portion: f64,
    pub trial: usize,
    pub seed: u64,
    pub n_train: usize,
    pub accuracy: f64,
    pub alpha: f64,
    /// Weight per manifest layer, in manifest order.
    pub mu: Vec<f64>,
    /// Layer ids with nonzero weight.
    pub support: Vec<usize>,
    pub kept_ranks: Vec<usize>,
    pub sigma_sq: Option<f64>,
    pub feature_dim: usize,
    pub calibration: CalibrationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortionSummary {
    pub portion: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Accumulate,
    Individual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub kind: AblationKind,
    pub trial: usize,
    pub seed: u64,
    pub step: usize,
    /// Layer ids used at this step.
    pub layers: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiRecord {
    pub labels_per_class: usize,
    pub trial: usize,
    pub seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub alpha: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub supervised_accuracy: f64,
    pub semi_accuracy: f64,
    pub relative_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub method: String,
    pub portion: f64,
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub job: String,
    pub stage: String,
    pub seconds: f64,
}

/// Training-set scores of one fitted model, kept for export.
#[derive(Debug, Clone)]
pub struct ExportBundle {
    pub scores: DMatrix<f64>,
    pub model: RidgeModel,
    pub meta: ExportMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub dataset: String,
    pub n_classes: usize,
    pub layer_ids: Vec<usize>,
    pub config: RunConfig,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<PortionSummary>,
    pub ablation: Vec<AblationRecord>,
    pub semi: Vec<SemiRecord>,
    pub baseline: Vec<BaselineRecord>,
    /// Wall-clock stage timings; excluded from reproducibility comparisons.
    pub timings: Vec<StageTiming>,
    #[serde(skip)]
    pub export: Option<ExportBundle>,
    #[serde(skip)]
    pub log: Vec<String>,
}

impl RunResult {
    fn new(mode: Mode, ds: &Dataset, cfg: &RunConfig) -> Self {
        Self {
            mode,
            dataset: ds.manifest.dataset.clone(),
            n_classes: ds.n_classes(),
            layer_ids: ds.manifest.layers.iter().map(|l| l.id).collect(),
            config: RunConfig { mode, ..cfg.knobs() },
            trials: Vec::new(),
            summary: Vec::new(),
            ablation: Vec::new(),
            semi: Vec::new(),
            baseline: Vec::new(),
            timings: Vec::new(),
            export: None,
            log: Vec::new(),
        }
    }
}

/// Stage timer that also labels errors with the failing stage.
struct Timer {
    job: String,
    stages: Vec<StageTiming>,
}

impl Timer {
    fn new(job: String) -> Self {
        Self {
            job,
            stages: Vec::new(),
        }
    }

    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(Error::at(stage));
        self.stages.push(StageTiming {
            job: self.job.clone(),
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

struct RunLog(Mutex<Vec<String>>);

impl RunLog {
    fn new() -> Self {
        Self(Mutex::new(Vec::new()))
    }

    fn record(&self, msg: String) {
        info!("{msg}");
        self.0.lock().unwrap().push(msg);
    }

    fn into_lines(self) -> Vec<String> {
        self.0.into_inner().unwrap()
    }
}

/// Seeded per-class subsample keeping `round(portion·n_c)` (at least one)
/// samples of every class; `None` when `portion = 1`.
pub fn stratified_subset(labels: &[usize], portion: f64, seed: u64) -> Option<Vec<usize>> {
    if portion >= 1.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for group in class_groups(labels) {
        if group.is_empty() {
            continue;
        }
        let mut group = group;
        group.shuffle(&mut rng);
        let k = ((portion * group.len() as f64).round() as usize).clamp(1, group.len());
        out.extend_from_slice(&group[..k]);
    }
    out.sort_unstable();
    Some(out)
}

/// Seeded selection of exactly `k` samples per class.
pub fn per_class_subset(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = class_groups(labels);
    groups.resize(n_classes.max(groups.len()), Vec::new());
    let mut out = Vec::new();
    for (class, mut group) in groups.into_iter().enumerate() {
        if group.len() < k {
            return Err(Error::ClassExhausted {
                class,
                available: group.len(),
                requested: k,
            });
        }
        group.shuffle(&mut rng);
        out.extend_from_slice(&group[..k]);
    }
    out.sort_unstable();
    Ok(out)
}

fn class_groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let c = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        groups[y].push(i);
    }
    groups
}

fn select_labels(labels: &[usize], rows: Option<&[usize]>) -> Vec<usize> {
    match rows {
        Some(r) => r.iter().map(|&i| labels[i]).collect(),
        None => labels.to_vec(),
    }
}

fn cache_dir(cfg: &RunConfig) -> PathBuf {
    let root = cfg.cache_dir.clone().unwrap_or_else(BlockCache::default_root);
    let n = CACHE_COUNTER.fetch_add(1, Ordering::Relaxed);
    root.join(format!("{}-{n}", std::process::id()))
}

struct LayerSet {
    train: Vec<LowRankFeatures>,
    test: Vec<LowRankFeatures>,
}

/// Fit the linear Nyström map on the selected training rows of layer `l`
/// and embed both splits. Multi-block sources are spilled to the block
/// cache on the sketching pass and replayed for the projection pass.
fn lowrank_layer(
    ds: &Dataset,
    cfg: &RunConfig,
    l: usize,
    rows: Option<&[usize]>,
    seed: u64,
) -> Result<(LowRankFeatures, LowRankFeatures)> {
    let id = ds.manifest.layers[l].id;
    let src = NpyRows::open(ds.layer_train(l), rows.map(<[usize]>::to_vec), cfg.block_rows)?;
    let spec = make_sketch(
        derive_seed(seed, LAYER_TAG + l as u64),
        src.n_rows(),
        cfg.buckets,
        cfg.stacks,
    )?;
    let test_src = NpyRows::open(ds.layer_test(l), None, cfg.block_rows)?;
    if src.n_rows() <= cfg.block_rows {
        let x = src.collect()?;
        let map = LinearNystromMap::fit(&InMemory::new(&x, cfg.block_rows), &spec, cfg.eig_tol, id)?;
        return Ok((
            map.transform(&InMemory::new(&x, cfg.block_rows))?,
            map.transform(&test_src)?,
        ));
    }
    let mut sketcher = RowSketcher::new(&spec);
    let cache = BlockCache::fill(cache_dir(cfg), &src, &mut |b| sketcher.push_block(b))?;
    let map = LinearNystromMap::from_sketch(&sketcher.finish()?, cfg.eig_tol, id)?;
    Ok((map.transform(&cache)?, map.transform(&test_src)?))
}

fn lowrank_layers(ds: &Dataset, cfg: &RunConfig, rows: Option<&[usize]>, seed: u64) -> Result<LayerSet> {
    let pairs: Vec<_> = (0..ds.n_layers())
        .into_par_iter()
        .map(|l| lowrank_layer(ds, cfg, l, rows, seed))
        .collect::<Result<_>>()?;
    let (train, test) = pairs.into_iter().unzip();
    Ok(LayerSet { train, test })
}

/// Feature hashing `X_l S_l` per layer with the same seeds as the low-rank
/// route.
fn randproj_layers(ds: &Dataset, cfg: &RunConfig, rows: Option<&[usize]>, seed: u64) -> Result<LayerSet> {
    let pairs: Vec<_> = (0..ds.n_layers())
        .into_par_iter()
        .map(|l| {
            let entry = &ds.manifest.layers[l];
            let spec = make_sketch(
                derive_seed(seed, LAYER_TAG + l as u64),
                entry.dim,
                cfg.buckets,
                cfg.stacks,
            )?;
            let hash = |path: PathBuf, rows: Option<&[usize]>| -> Result<LowRankFeatures> {
                let x = NpyRows::open(path, rows.map(<[usize]>::to_vec), cfg.block_rows)?.collect()?;
                let data = sketch_features(&spec, &FeatureMatrix::new(x, entry.id)?)?;
                Ok(LowRankFeatures {
                    kept_rank: data.ncols(),
                    data,
                    layer_id: entry.id,
                    eig_tol: cfg.eig_tol,
                })
            };
            Ok((hash(ds.layer_train(l), rows)?, hash(ds.layer_test(l), None)?))
        })
        .collect::<Result<_>>()?;
    let (train, test) = pairs.into_iter().unzip();
    Ok(LayerSet { train, test })
}

fn align(cfg: &RunConfig, features: &[LowRankFeatures], y: &LabelMatrix) -> Result<AlignmentWeights> {
    let problem = build_gram_stats(features, y)?;
    solve_nn_quadratic(&problem, cfg.qp_tol, cfg.qp_max_iter)
}

/// Ridge fit with cross-validated α on (optionally RBF-embedded) features.
struct Evaluation {
    accuracy: f64,
    alpha: f64,
    sigma_sq: Option<f64>,
    feature_dim: usize,
    model: RidgeModel,
    train_scores: PredictionScores,
    calibration: CalibrationRecord,
}

fn rbf_embed(
    cfg: &RunConfig,
    x_train: DMatrix<f64>,
    x_test: DMatrix<f64>,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<f64>)> {
    if cfg.skip_rbf {
        return Ok((x_train, x_test, None));
    }
    let sigma_sq = match cfg.sigma_sq {
        Some(s) => s,
        None => rbf_sigma_heuristic(&x_train)?,
    };
    let spec = make_sketch(
        derive_seed(seed, RBF_TAG),
        x_train.nrows(),
        cfg.landmark_buckets(),
        cfg.landmark_stacks,
    )?;
    let map = fit_rbf_nystrom(&x_train, &spec, sigma_sq, cfg.eig_tol)?;
    Ok((map.embed(&x_train)?, map.embed(&x_test)?, Some(sigma_sq)))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &RunConfig,
    timer: &mut Timer,
    x_train: DMatrix<f64>,
    x_test: DMatrix<f64>,
    y_train: &LabelMatrix,
    y_test: &[usize],
    seed: u64,
    rbf: bool,
) -> Result<Evaluation> {
    let (z_train, z_test, sigma_sq) = if rbf {
        timer.stage("rbf", || rbf_embed(cfg, x_train, x_test, seed))?
    } else {
        (x_train, x_test, None)
    };
    let cv = timer.stage("cv", || {
        cross_validate_alpha(
            &z_train,
            y_train,
            cfg.cv_folds,
            &cfg.alpha_grid,
            derive_seed(seed, CV_TAG),
        )
    })?;
    let model = timer.stage("fit", || fit_ridge(&z_train, y_train, cv.best, SolveMode::Auto))?;
    let (train_scores, test_scores) =
        timer.stage("predict", || Ok((model.predict(&z_train)?, model.predict(&z_test)?)))?;
    let calibration = timer.stage("calibration", || {
        let grid = cfg.temperature.values();
        let fitted = fit_temperature(&train_scores.scores, y_train.classes(), cfg.n_bins, &grid)?;
        let t = fitted.temperature;
        let test_ece = |t: f64| -> Result<f64> {
            Ok(ece(&scores_to_confidence(&test_scores.scores, t)?, y_test, cfg.n_bins)?.ece)
        };
        let train_before = ece(
            &scores_to_confidence(&train_scores.scores, 1.0)?,
            y_train.classes(),
            cfg.n_bins,
        )?;
        Ok(CalibrationRecord {
            temperature: t,
            train_ece_before: train_before.ece,
            train_ece_after: fitted.ece,
            test_ece_before: test_ece(1.0)?,
            test_ece_after: test_ece(t)?,
        })
    })?;
    Ok(Evaluation {
        accuracy: test_scores.accuracy(y_test),
        alpha: cv.best,
        sigma_sq,
        feature_dim: z_train.ncols(),
        model,
        train_scores,
        calibration,
    })
}

fn layer_ids(layers: &LayerSet, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| layers.train[i].layer_id).collect()
}

struct MethodOutcome {
    weights: AlignmentWeights,
    eval: Evaluation,
}

/// Alignment, weighted concatenation and evaluation of a layer set.
fn run_method(
    cfg: &RunConfig,
    timer: &mut Timer,
    layers: &LayerSet,
    y_train: &LabelMatrix,
    y_test: &[usize],
    seed: u64,
    rbf: bool,
) -> Result<MethodOutcome> {
    let weights = timer.stage("alignment", || align(cfg, &layers.train, y_train))?;
    let (x_train, x_test) = timer.stage("concat", || {
        Ok((
            concat_subset(&layers.train, &weights, &weights.support)?,
            concat_subset(&layers.test, &weights, &weights.support)?,
        ))
    })?;
    let eval = evaluate(cfg, timer, x_train, x_test, y_train, y_test, seed, rbf)?;
    Ok(MethodOutcome { weights, eval })
}

fn summarize(trials: &[TrialRecord], portions: &[f64]) -> Vec<PortionSummary> {
    portions
        .iter()
        .map(|&p| {
            let acc: Vec<f64> = trials.iter().filter(|t| t.portion == p).map(|t| t.accuracy).collect();
            let n = acc.len() as f64;
            let mean = acc.iter().sum::<f64>() / n;
            let var = if acc.len() > 1 {
                acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            PortionSummary {
                portion: p,
                accuracies: acc,
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

fn prepare(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    cfg.validate()?;
    if ds.n_classes() < 2 {
        return Err(Error::Manifest("at least two classes are required".into()));
    }
    Ok(())
}

fn jobs(cfg: &RunConfig, portions: &[f64]) -> Vec<(f64, usize)> {
    portions
        .iter()
        .flat_map(|&p| (0..cfg.trials).map(move |t| (p, t)))
        .collect()
}

/// One supervised trial at one training portion.
fn supervised_trial(
    cfg: &RunConfig,
    ds: &Dataset,
    portion: f64,
    trial: usize,
    log: &RunLog,
) -> Result<(TrialRecord, Vec<StageTiming>, ExportBundle)> {
    let seed = trial_seed(cfg.seed, trial);
    let mut timer = Timer::new(format!("portion={portion} trial={trial}"));
    let rows = stratified_subset(&ds.train_labels, portion, derive_seed(seed, SUBSAMPLE_TAG));
    let labels = select_labels(&ds.train_labels, rows.as_deref());
    let y = LabelMatrix::from_classes(&labels, ds.n_classes())?;
    let layers = timer.stage("lowrank", || lowrank_layers(ds, cfg, rows.as_deref(), seed))?;
    let out = run_method(cfg, &mut timer, &layers, &y, &ds.test_labels, seed, !cfg.skip_rbf)?;
    let record = TrialRecord {
        portion,
        trial,
        seed,
        n_train: labels.len(),
        accuracy: out.eval.accuracy,
        alpha: out.eval.alpha,
        mu: out.weights.mu.clone(),
        support: layer_ids(&layers, &out.weights.support),
        kept_ranks: layers.train.iter().map(|f| f.kept_rank).collect(),
        sigma_sq: out.eval.sigma_sq,
        feature_dim: out.eval.feature_dim,
        calibration: out.eval.calibration.clone(),
    };
    log.record(format!(
        "supervised portion={portion} trial={trial} n={} accuracy={:.4} alpha={} support={:?}",
        record.n_train, record.accuracy, record.alpha, record.support
    ));
    let bundle = ExportBundle {
        meta: ExportMeta {
            dataset: ds.manifest.dataset.clone(),
            seed,
            portion,
            n_rows: out.eval.train_scores.n_rows(),
            n_classes: ds.n_classes(),
            layer_ids: layer_ids(&layers, &(0..layers.train.len()).collect::<Vec<_>>()),
            mu: out.weights.mu,
            alpha: out.eval.alpha,
            sigma_sq: out.eval.sigma_sq,
            temperature: out.eval.calibration.temperature,
            feature_dim: out.eval.feature_dim,
            solve_mode: out.eval.model.mode(),
            rows: rows.clone(),
        },
        scores: out.eval.train_scores.scores,
        model: out.eval.model,
    };
    Ok((record, timer.stages, bundle))
}

/// Full method over the configured portions and trials.
pub fn run_supervised(cfg: &RunConfig, ds: &Dataset) -> Result<RunResult> {
    prepare(cfg, ds)?;
    let log = RunLog::new();
    let jobs = jobs(cfg, &cfg.portions);
    let outs: Vec<_> = jobs
        .par_iter()
        .map(|&(p, t)| supervised_trial(cfg, ds, p, t, &log))
        .collect::<Result<_>>()?;
    let mut result = RunResult::new(Mode::Supervised, ds, cfg);
    let top = cfg.portions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (record, timings, bundle) in outs {
        if record.trial == 0 && record.portion == top && result.export.is_none() {
            result.export = Some(bundle);
        }
        result.trials.push(record);
        result.timings.extend(timings);
    }
    result.summary = summarize(&result.trials, &cfg.portions);
    for s in &result.summary {
        log.record(format!(
            "portion={} mean accuracy={:.4} std={:.4}",
            s.portion, s.mean, s.std
        ));
    }
    result.log = log.into_lines();
    Ok(result)
}

fn semi_trial(
    cfg: &RunConfig,
    ds: &Dataset,
    k: usize,
    trial: usize,
    log: &RunLog,
) -> Result<(SemiRecord, Vec<StageTiming>)> {
    let seed = trial_seed(cfg.seed, trial);
    let mut timer = Timer::new(format!("labels_per_class={k} trial={trial}"));
    let labeled = timer.stage("subsample", || {
        per_class_subset(&ds.train_labels, ds.n_classes(), k, derive_seed(seed, SUBSAMPLE_TAG))
    })?;
    let mut is_labeled = vec![false; ds.train_labels.len()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled: Vec<usize> = (0..is_labeled.len()).filter(|&i| !is_labeled[i]).collect();
    let y = LabelMatrix::from_classes(&select_labels(&ds.train_labels, Some(&labeled)), ds.n_classes())?;
    let layers = timer.stage("lowrank", || lowrank_layers(ds, cfg, None, seed))?;
    let labeled_feats: Vec<LowRankFeatures> = layers
        .train
        .iter()
        .map(|f| LowRankFeatures {
            data: f.data.select_rows(&labeled),
            layer_id: f.layer_id,
            kept_rank: f.kept_rank,
            eig_tol: f.eig_tol,
        })
        .collect();
    let weights = timer.stage("alignment", || align(cfg, &labeled_feats, &y))?;
    let (x_all, x_test) = timer.stage("concat", || {
        Ok((
            concat_subset(&layers.train, &weights, &weights.support)?,
            concat_subset(&layers.test, &weights, &weights.support)?,
        ))
    })?;
    let (z_all, z_test, _) = if cfg.skip_rbf {
        (x_all, x_test, None)
    } else {
        timer.stage("rbf", || rbf_embed(cfg, x_all, x_test, seed))?
    };
    let z_lab = z_all.select_rows(&labeled);
    let z_unl = z_all.select_rows(&unlabeled);
    let alpha = timer.stage("cv", || {
        cross_validate_alpha(&z_lab, &y, cfg.cv_folds, &cfg.alpha_grid, derive_seed(seed, CV_TAG)).map(|c| c.best)
    })?;
    let sup = timer.stage("fit", || fit_ridge(&z_lab, &y, alpha, SolveMode::Auto))?;
    let sup_acc = sup.predict(&z_test)?.accuracy(&ds.test_labels);
    let betas = timer.stage("cv-beta", || {
        cross_validate_betas(
            &z_lab,
            &y,
            &z_unl,
            cfg.cv_folds,
            &cfg.beta_grid,
            &cfg.beta_prime_grid,
            alpha,
            derive_seed(seed, CV_TAG),
        )
    })?;
    let (beta, beta_prime) = betas.best;
    let semi = timer.stage("fit-transductive", || {
        fit_transductive(&z_lab, &y, &z_unl, beta, beta_prime, alpha)
    })?;
    let semi_acc = semi.predict(&z_test)?.accuracy(&ds.test_labels);
    let record = SemiRecord {
        labels_per_class: k,
        trial,
        seed,
        n_labeled: labeled.len(),
        n_unlabeled: unlabeled.len(),
        alpha,
        beta,
        beta_prime,
        supervised_accuracy: sup_acc,
        semi_accuracy: semi_acc,
        relative_improvement: if sup_acc > 0.0 {
            (semi_acc - sup_acc) / sup_acc
        } else {
            0.0
        },
    };
    log.record(format!(
        "semi labels_per_class={k} trial={trial} supervised={sup_acc:.4} semi={semi_acc:.4} beta={beta} beta_prime={beta_prime}"
    ));
    Ok((record, timer.stages))
}

/// Transductive regression with `labels_per_class` labeled samples per class
/// and the rest of the training set unlabeled.
pub fn run_semi(cfg: &RunConfig, ds: &Dataset) -> Result<RunResult> {
    prepare(cfg, ds)?;
    let log = RunLog::new();
    let jobs: Vec<(usize, usize)> = cfg
        .labels_per_class
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let outs: Vec<_> = jobs
        .par_iter()
        .map(|&(k, t)| semi_trial(cfg, ds, k, t, &log))
        .collect::<Result<_>>()?;
    let mut result = RunResult::new(Mode::Semi, ds, cfg);
    for (record, timings) in outs {
        result.semi.push(record);
        result.timings.extend(timings);
    }
    result.log = log.into_lines();
    Ok(result)
}

fn ablation_trial(
    cfg: &RunConfig,
    ds: &Dataset,
    trial: usize,
    log: &RunLog,
) -> Result<(Vec<AblationRecord>, Vec<StageTiming>)> {
    let seed = trial_seed(cfg.seed, trial);
    let mut timer = Timer::new(format!("ablation trial={trial}"));
    let y = LabelMatrix::from_classes(&ds.train_labels, ds.n_classes())?;
    let layers = timer.stage("lowrank", || lowrank_layers(ds, cfg, None, seed))?;
    let weights = timer.stage("alignment", || align(cfg, &layers.train, &y))?;
    let order = weights.support_by_weight();
    let (kind, subsets): (AblationKind, Vec<Vec<usize>>) = match cfg.mode {
        Mode::AblationIndividual => (AblationKind::Individual, order.iter().map(|&l| vec![l]).collect()),
        _ => (
            AblationKind::Accumulate,
            (1..=order.len())
                .map(|k| {
                    let mut s = order[..k].to_vec();
                    s.sort_unstable();
                    s
                })
                .collect(),
        ),
    };
    let mut records = Vec::new();
    for (step, subset) in subsets.iter().enumerate() {
        let x_train = concat_subset(&layers.train, &weights, subset)?;
        let x_test = concat_subset(&layers.test, &weights, subset)?;
        let eval = evaluate(
            cfg,
            &mut timer,
            x_train,
            x_test,
            &y,
            &ds.test_labels,
            seed,
            !cfg.skip_rbf,
        )?;
        let ids = layer_ids(&layers, subset);
        log.record(format!(
            "ablation {kind:?} trial={trial} step={} layers={ids:?} accuracy={:.4}",
            step + 1,
            eval.accuracy
        ));
        records.push(AblationRecord {
            kind,
            trial,
            seed,
            step: step + 1,
            layers: ids,
            accuracy: eval.accuracy,
        });
    }
    Ok((records, timer.stages))
}

/// Accumulated (μ-sorted prefixes) or individual-layer evaluation on the full
/// training set, according to `cfg.mode`.
pub fn run_ablation(cfg: &RunConfig, ds: &Dataset) -> Result<RunResult> {
    if !matches!(cfg.mode, Mode::AblationAccumulate | Mode::AblationIndividual) {
        return Err(Error::Config(format!(
            "mode {} is not an ablation mode",
            cfg.mode.as_str()
        )));
    }
    prepare(cfg, ds)?;
    let log = RunLog::new();
    let outs: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| ablation_trial(cfg, ds, t, &log))
        .collect::<Result<_>>()?;
    let mut result = RunResult::new(cfg.mode, ds, cfg);
    for (records, timings) in outs {
        result.ablation.extend(records);
        result.timings.extend(timings);
    }
    result.log = log.into_lines();
    Ok(result)
}

fn read_rows(path: PathBuf, rows: Option<&[usize]>, block_rows: usize) -> Result<DMatrix<f64>> {
    NpyRows::open(path, rows.map(<[usize]>::to_vec), block_rows)?.collect()
}

fn rbf_bank_layers(ds: &Dataset, cfg: &RunConfig, rows: Option<&[usize]>, seed: u64) -> Result<LayerSet> {
    let raw = ds
        .manifest
        .raw
        .as_ref()
        .ok_or_else(|| Error::Manifest("the rbf-bank baseline needs raw input arrays".into()))?;
    let x = read_rows(ds.resolve(&raw.train), rows, cfg.block_rows)?;
    let x_test = read_rows(ds.resolve(&raw.test), None, cfg.block_rows)?;
    let gamma = median_bandwidth(&x, cfg.median_pairs, derive_seed(seed, MEDIAN_TAG))?;
    let spec = make_sketch(
        derive_seed(seed, BANK_TAG),
        x.nrows(),
        cfg.landmark_buckets(),
        cfg.landmark_stacks,
    )?;
    let bank = rbf_kernel_bank(&x, gamma, BANK_EXPONENTS, &spec, cfg.eig_tol)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, map) in bank.iter().enumerate() {
        for (dst, src) in [(&mut train, &x), (&mut test, &x_test)] {
            let data = map.embed(src)?;
            dst.push(LowRankFeatures {
                kept_rank: data.ncols(),
                data,
                layer_id: k,
                eig_tol: cfg.eig_tol,
            });
        }
    }
    Ok(LayerSet { train, test })
}

fn baseline_trial(
    cfg: &RunConfig,
    ds: &Dataset,
    portion: f64,
    trial: usize,
    log: &RunLog,
) -> Result<(Vec<BaselineRecord>, Vec<StageTiming>)> {
    let seed = trial_seed(cfg.seed, trial);
    let mut timer = Timer::new(format!("baseline portion={portion} trial={trial}"));
    let rows = stratified_subset(&ds.train_labels, portion, derive_seed(seed, SUBSAMPLE_TAG));
    let y = LabelMatrix::from_classes(&select_labels(&ds.train_labels, rows.as_deref()), ds.n_classes())?;
    let main = timer.stage("lowrank", || lowrank_layers(ds, cfg, rows.as_deref(), seed))?;
    let main_out = run_method(cfg, &mut timer, &main, &y, &ds.test_labels, seed, !cfg.skip_rbf)?;
    let (method, other) = match cfg.mode {
        Mode::BaselineRbfBank => (
            "rbf-bank",
            timer.stage("rbf-bank", || rbf_bank_layers(ds, cfg, rows.as_deref(), seed))?,
        ),
        _ => (
            "randproj",
            timer.stage("randproj", || randproj_layers(ds, cfg, rows.as_deref(), seed))?,
        ),
    };
    // the bank already is a kernel approximation: no second RBF stage
    let rbf = cfg.mode != Mode::BaselineRbfBank && !cfg.skip_rbf;
    let other_out = run_method(cfg, &mut timer, &other, &y, &ds.test_labels, seed, rbf)?;
    log.record(format!(
        "baseline portion={portion} trial={trial} nystrom={:.4} {method}={:.4}",
        main_out.eval.accuracy, other_out.eval.accuracy
    ));
    let rec = |method: &str, e: &Evaluation| BaselineRecord {
        method: method.to_string(),
        portion,
        trial,
        seed,
        accuracy: e.accuracy,
        feature_dim: e.feature_dim,
    };
    Ok((
        vec![rec("nystrom", &main_out.eval), rec(method, &other_out.eval)],
        timer.stages,
    ))
}

/// Paired comparison of the method against feature hashing or an RBF kernel
/// bank on raw inputs, according to `cfg.mode`.
pub fn run_baselines(cfg: &RunConfig, ds: &Dataset) -> Result<RunResult> {
    if !matches!(cfg.mode, Mode::BaselineRandproj | Mode::BaselineRbfBank) {
        return Err(Error::Config(format!(
            "mode {} is not a baseline mode",
            cfg.mode.as_str()
        )));
    }
    prepare(cfg, ds)?;
    let log = RunLog::new();
    let outs: Vec<_> = jobs(cfg, &cfg.portions)
        .par_iter()
        .map(|&(p, t)| baseline_trial(cfg, ds, p, t, &log))
        .collect::<Result<_>>()?;
    let mut result = RunResult::new(cfg.mode, ds, cfg);
    for (records, timings) in outs {
        result.baseline.extend(records);
        result.timings.extend(timings);
    }
    result.log = log.into_lines();
    Ok(result)
}

/// Dispatch on `cfg.mode`.
pub fn run(cfg: &RunConfig, ds: &Dataset) -> Result<RunResult> {
    match cfg.mode {
        Mode::Supervised => run_supervised(cfg, ds),
        Mode::Semi => run_semi(cfg, ds),
        Mode::AblationAccumulate | Mode::AblationIndividual => run_ablation(cfg, ds),
        Mode::BaselineRandproj | Mode::BaselineRbfBank => run_baselines(cfg, ds),
    }
}

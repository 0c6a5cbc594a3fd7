use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sketchfer::lowrank::{nystrom_linear_features, DEFAULT_EIG_TOL};
use sketchfer::manifest::load_manifest;
use sketchfer::npy;
use sketchfer::pipeline::{export_predictions, run_supervised, ExportMeta, RunConfig};
use sketchfer::regression::RidgeModel;
use sketchfer::sketch::make_sketch;
use sketchfer::stream::InMemory;
use sketchfer::synth::{synth_features, SynthSpec};

fn small_spec() -> SynthSpec {
    SynthSpec {
        n_train: 300,
        n_test: 100,
        n_classes: 3,
        layer_dims: vec![16, 24, 8],
        signal: vec![0.0, 4.0, 1.0],
        ..SynthSpec::default()
    }
}

fn small_config() -> RunConfig {
    RunConfig {
        buckets: 32,
        portions: vec![1.0],
        trials: 1,
        ..RunConfig::default()
    }
}

#[test]
fn exported_scores_round_trip_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = load_manifest(synth_features(&small_spec(), tmp.path()).unwrap()).unwrap();
    let result = run_supervised(&small_config(), &ds).unwrap();
    let out = tmp.path().join("out");
    let path = export_predictions(&result, &out).unwrap();

    let bundle = result.export.as_ref().unwrap();
    let back = npy::read_f64(&path).unwrap();
    assert_eq!(back.shape(), (300, 3));
    assert!(back
        .iter()
        .zip(bundle.scores.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    let meta: ExportMeta =
        serde_json::from_str(&std::fs::read_to_string(out.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(meta, bundle.meta);
    assert_eq!(meta.mu, result.trials[0].mu);

    let model = RidgeModel::read_from(&mut BufReader::new(File::open(out.join("model.bin")).unwrap())).unwrap();
    assert_eq!(model.weights(), bundle.model.weights());
}

#[test]
fn streamed_layers_match_in_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = load_manifest(synth_features(&small_spec(), tmp.path()).unwrap()).unwrap();
    let whole = run_supervised(&small_config(), &ds).unwrap();
    let cfg = RunConfig {
        block_rows: 64,
        cache_dir: Some(tmp.path().join("cache")),
        ..small_config()
    };
    let streamed = run_supervised(&cfg, &ds).unwrap();
    let (a, b) = (&whole.trials[0], &streamed.trials[0]);
    assert_eq!(a.kept_ranks, b.kept_ranks);
    assert!((a.accuracy - b.accuracy).abs() < 1e-12);
    for (x, y) in a.mu.iter().zip(&b.mu) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
    let cache = tmp.path().join("cache");
    assert!(!cache.exists() || std::fs::read_dir(&cache).unwrap().next().is_none());
}

fn best_of_three(x: &DMatrix<f64>, m: usize) -> f64 {
    (0..3)
        .map(|seed| {
            let spec = make_sketch(seed, x.nrows(), m, 4).unwrap();
            let start = Instant::now();
            nystrom_linear_features(&InMemory::new(x, 1024), &spec, DEFAULT_EIG_TOL, 0).unwrap();
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn lowrank_cost_grows_linearly_in_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let small = DMatrix::from_fn(4000, 64, |_, _| rng.sample(StandardNormal));
    let large = DMatrix::from_fn(16000, 64, |_, _| rng.sample(StandardNormal));
    let (ts, tl) = (best_of_three(&small, 64), best_of_three(&large, 64));
    // four times the rows, with a factor-two allowance
    assert!(tl < 8.0 * ts + 0.05, "{ts:.4} s -> {tl:.4} s");
}

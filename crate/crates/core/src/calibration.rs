//! Softmax confidences, expected calibration error and temperature scaling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::first_argmax;

pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_TEMPERATURE_POINTS: usize = 50;

/// Row-wise `softmax(scores / t)`, shifted by the row maximum.
pub fn scores_to_confidence(scores: &DMatrix<f64>, temperature: f64) -> Result<DMatrix<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let mut out = scores / temperature;
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let z = row.sum();
        row /= z;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub n_bins: usize,
    pub temperature: f64,
    pub bins: Vec<BinStat>,
}

/// Bin `b` covers `(b/n, (b+1)/n]` with edges evaluated in floating point;
/// confidence `0` falls in bin `0`.
pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let edge = |b: usize| b as f64 / n;
    let mut b = ((confidence * n).ceil() as usize).saturating_sub(1).min(n_bins - 1);
    while b > 0 && confidence <= edge(b) {
        b -= 1;
    }
    while b + 1 < n_bins && confidence > edge(b + 1) {
        b += 1;
    }
    b
}

/// Equal-width ECE of the top-class confidence.
pub fn ece(probs: &DMatrix<f64>, labels: &[usize], n_bins: usize) -> Result<CalibrationReport> {
    ece_at(probs, labels, n_bins, 1.0)
}

fn ece_at(probs: &DMatrix<f64>, labels: &[usize], n_bins: usize, temperature: f64) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be positive".into()));
    }
    let (n, c) = probs.shape();
    if labels.len() != n {
        return Err(Error::SampleCountMismatch(format!(
            "{n} rows of scores, {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (i, row) in probs.row_iter().enumerate() {
        let k = first_argmax(row.iter());
        let p = row[k];
        let b = bin_index(p, n_bins);
        count[b] += 1;
        conf_sum[b] += p;
        hits[b] += usize::from(k == labels[i]);
    }
    let mut total = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            if count[b] == 0 {
                return BinStat {
                    count: 0,
                    mean_confidence: 0.0,
                    accuracy: 0.0,
                };
            }
            let conf = conf_sum[b] / count[b] as f64;
            let acc = hits[b] as f64 / count[b] as f64;
            total += count[b] as f64 / n as f64 * (acc - conf).abs();
            BinStat {
                count: count[b],
                mean_confidence: conf,
                accuracy: acc,
            }
        })
        .collect();
    Ok(CalibrationReport {
        ece: if n == 0 { 0.0 } else { total },
        n_bins,
        temperature,
        bins,
    })
}

/// `points` log-spaced temperatures over `[lo, hi]`.
pub fn temperature_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

pub fn default_temperature_grid() -> Vec<f64> {
    temperature_grid(1e-2, 1e2, DEFAULT_TEMPERATURE_POINTS)
}

/// Temperature minimizing ECE over `grid` plus `t = 1`; ties go to the
/// temperature closest to 1 in log scale.
pub fn fit_temperature(
    scores: &DMatrix<f64>,
    labels: &[usize],
    n_bins: usize,
    grid: &[f64],
) -> Result<CalibrationReport> {
    let mut best = ece_at(&scores_to_confidence(scores, 1.0)?, labels, n_bins, 1.0)?;
    for &t in grid {
        let r = ece_at(&scores_to_confidence(scores, t)?, labels, n_bins, t)?;
        if r.ece < best.ece || (r.ece == best.ece && t.ln().abs() < best.temperature.ln().abs()) {
            best = r;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1000001, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.95, 10), 9);
        // 1/3 sits exactly on the edge 5/15
        assert_eq!(1.0f64 / 3.0, 5.0 / 15.0);
        assert_eq!(bin_index(1.0 / 3.0, 15), 4);
        for n in 1..40 {
            for k in 0..=n {
                let e = k as f64 / n as f64;
                assert_eq!(bin_index(e, n), k.saturating_sub(1), "{k}/{n}");
            }
        }
    }

    #[test]
    fn uniform_scores() {
        let p = scores_to_confidence(&DMatrix::zeros(3, 4), 2.0).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable() {
        let s = DMatrix::from_row_slice(1, 3, &[1000.0, 999.0, -1000.0]);
        let p = scores_to_confidence(&s, 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.row(0).sum() - 1.0).abs() < 1e-15);
        assert!(scores_to_confidence(&s, 0.0).is_err());
        assert!(scores_to_confidence(&s, -1.0).is_err());
    }

    #[test]
    fn perfectly_calibrated_bin() {
        // four samples at confidence 0.75, three correct
        let p = DMatrix::from_row_slice(4, 2, &[0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25]);
        let r = ece(&p, &[0, 0, 0, 1], 10).unwrap();
        assert!(r.ece.abs() < 1e-15);
        let r = ece(&p, &[0, 0, 0, 0], 10).unwrap();
        assert!((r.ece - 0.25).abs() < 1e-15);
        assert_eq!(r.bins[7].count, 4);
    }

    #[test]
    fn rejects_bad_labels() {
        let p = DMatrix::from_element(2, 2, 0.5);
        assert!(matches!(
            ece(&p, &[0, 2], 5),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(ece(&p, &[0], 5).is_err());
    }

    #[test]
    fn grid_spacing() {
        let g = default_temperature_grid();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 1e-2).abs() < 1e-15 && (g[49] - 1e2).abs() < 1e-10);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-9));
    }

    #[test]
    fn overconfident_scores_get_softened() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let mut s = DMatrix::zeros(n, 3);
        let mut labels = Vec::new();
        for i in 0..n {
            let truth = rng.random_range(0..3);
            // 60% correct but very confident predictions
            let pred = if rng.random::<f64>() < 0.6 {
                truth
            } else {
                (truth + 1) % 3
            };
            s[(i, pred)] = 10.0;
            labels.push(truth);
        }
        let before = ece(&scores_to_confidence(&s, 1.0).unwrap(), &labels, 15).unwrap();
        let after = fit_temperature(&s, &labels, 15, &default_temperature_grid()).unwrap();
        assert!(after.temperature > 1.0);
        assert!(after.ece < before.ece / 2.0);
    }

    #[test]
    fn tie_prefers_unit_temperature() {
        // all-equal scores: every temperature gives the same ECE
        let s = DMatrix::zeros(6, 2);
        let r = fit_temperature(&s, &[0, 1, 0, 1, 0, 1], 15, &default_temperature_grid()).unwrap();
        assert_eq!(r.temperature, 1.0);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 12), t in 0.01f64..100.0) {
            let s = DMatrix::from_row_slice(3, 4, &vals);
            let p = scores_to_confidence(&s, t).unwrap();
            for r in p.row_iter() {
                prop_assert!((r.sum() - 1.0).abs() < 1e-12);
            }
            for i in 0..3 {
                prop_assert_eq!(first_argmax(p.row(i).iter()), first_argmax(s.row(i).iter()));
            }
        }

        #[test]
        fn ece_in_unit_interval(vals in proptest::collection::vec(-5.0f64..5.0, 30), labels in proptest::collection::vec(0usize..3, 10)) {
            let p = scores_to_confidence(&DMatrix::from_row_slice(10, 3, &vals), 1.0).unwrap();
            let r = ece(&p, &labels, 15).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.ece));
            prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 10);
        }
    }
}

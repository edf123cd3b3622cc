//! One-class anomaly detectors trained on normal rows only.
//!
//! Every detector maps a row to a score in [0, 1], higher meaning more
//! anomalous, and carries a threshold calibrated on its training rows.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sense::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum OneClassError {
    #[error("training needs at least {1} rows, got {0}")]
    TooFewRows(usize, usize),
    #[error("training data has no features")]
    EmptySchema,
    #[error("row has {0} values, model expects {1}")]
    Width(usize, usize),
    #[error("dataset schema differs from the model schema")]
    Schema,
    #[error("non-finite value in feature {0}")]
    NonFinite(usize),
    #[error("invalid detector parameters: {0}")]
    Params(String),
    #[error("per-feature scores are only defined for univariate-density models")]
    NotUnivariate,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed model file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    UnivariateDensity,
    KnnDensity,
    HypersphereBoundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub bins: usize,
    /// Histogram range padding as a share of the training range.
    pub margin: f64,
    pub k: usize,
    /// Training-score quantile used as the detection threshold.
    pub calibration_quantile: f64,
    pub min_rows: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            bins: 20,
            margin: 0.1,
            k: 5,
            calibration_quantile: 0.99,
            min_rows: 20,
        }
    }
}

impl DetectorParams {
    fn validate(&self) -> Result<(), OneClassError> {
        if self.bins == 0 || self.k == 0 {
            return Err(OneClassError::Params("bins and k must be positive".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(OneClassError::Params("margin must be non-negative".into()));
        }
        if !(self.calibration_quantile > 0.0 && self.calibration_quantile <= 1.0) {
            return Err(OneClassError::Params("calibration_quantile must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Normalized distance assigned to any deviation on a feature that was
/// constant in training.
const CONSTANT_DEVIATION: f64 = 1e3;

fn same_value(x: f64, c: f64) -> bool {
    (x - c).abs() <= 1e-9 * c.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Histogram {
    Constant { value: f64 },
    Bins { lo: f64, hi: f64, probs: Vec<f64>, max_prob: f64 },
}

impl Histogram {
    fn fit(values: &[f64], bins: usize, margin: f64) -> Histogram {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if same_value(max, min) {
            return Histogram::Constant { value: min };
        }
        let pad = (max - min) * margin;
        let (lo, hi) = (min - pad, max + pad);
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[bin_of(v, lo, hi, bins)] += 1;
        }
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / values.len() as f64).collect();
        let max_prob = probs.iter().cloned().fold(0.0, f64::max);
        Histogram::Bins { lo, hi, probs, max_prob }
    }

    fn score(&self, x: f64) -> f64 {
        match self {
            Histogram::Constant { value } => {
                if same_value(x, *value) {
                    0.0
                } else {
                    1.0
                }
            }
            Histogram::Bins { lo, hi, probs, max_prob } => {
                if x < *lo || x > *hi {
                    1.0
                } else {
                    1.0 - probs[bin_of(x, *lo, *hi, probs.len())] / max_prob
                }
            }
        }
    }
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((x - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0) as usize
}

/// Per-feature z-scoring fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                std[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        for (j, s) in std.iter_mut().enumerate() {
            *s = s.sqrt();
            if *s <= 1e-12 * mean[j].abs().max(1.0) {
                *s = 0.0;
            }
        }
        Standardizer { mean, std }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.std[j] > 0.0 {
                    (x - self.mean[j]) / self.std[j]
                } else if same_value(x, self.mean[j]) {
                    0.0
                } else {
                    CONSTANT_DEVIATION
                }
            })
            .collect()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Maps a raw distance to [0, 1] so that `reference` lands on 0.5.
fn squash(raw: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        1.0 - (-(raw / reference).powi(2)).exp2()
    } else if raw > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Piecewise-linear map of a score in [0, 1] that sends `reference` to 0.5
/// and keeps 0 and 1 fixed.
fn stretch(raw: f64, reference: f64) -> f64 {
    if raw <= reference {
        if reference > 0.0 {
            0.5 * raw / reference
        } else {
            0.0
        }
    } else if reference < 1.0 {
        0.5 + 0.5 * (raw - reference) / (1.0 - reference)
    } else {
        1.0
    }
}

/// Linear-interpolated quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + (v[i + 1] - v[i]) * frac
    } else {
        v[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Body {
    UnivariateDensity {
        features: Vec<Histogram>,
        reference: f64,
    },
    KnnDensity {
        scaler: Standardizer,
        k: usize,
        train: Vec<Vec<f64>>,
        reference: f64,
    },
    HypersphereBoundary {
        scaler: Standardizer,
        center: Vec<f64>,
        radius: f64,
        reference: f64,
    },
}

const MODEL_FORMAT: &str = "probenids-model v1";

/// A trained detector. Immutable once trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyModel {
    format: String,
    schema: Vec<String>,
    params: DetectorParams,
    threshold: f64,
    body: Body,
}

impl AnomalyModel {
    pub fn train(kind: DetectorKind, data: &Dataset, params: &DetectorParams) -> Result<AnomalyModel, OneClassError> {
        params.validate()?;
        if data.schema.is_empty() {
            return Err(OneClassError::EmptySchema);
        }
        let min_rows = match kind {
            DetectorKind::KnnDensity => params.min_rows.max(params.k + 1),
            _ => params.min_rows,
        };
        if data.len() < min_rows {
            return Err(OneClassError::TooFewRows(data.len(), min_rows));
        }
        for row in &data.rows {
            check_row(row, data.width())?;
        }
        let rows = &data.rows;
        let d = data.width();
        let body = match kind {
            DetectorKind::UnivariateDensity => {
                let features: Vec<Histogram> = (0..d)
                    .map(|j| {
                        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                        Histogram::fit(&col, params.bins, params.margin)
                    })
                    .collect();
                let raw: Vec<f64> = rows.iter().map(|r| mean_feature_score(&features, r)).collect();
                Body::UnivariateDensity {
                    reference: quantile(&raw, params.calibration_quantile),
                    features,
                }
            }
            DetectorKind::KnnDensity => {
                let scaler = Standardizer::fit(rows);
                let train: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
                let raw: Vec<f64> = (0..train.len())
                    .map(|i| kth_distance(&train, &train[i], params.k, Some(i)))
                    .collect();
                Body::KnnDensity {
                    scaler,
                    k: params.k,
                    reference: quantile(&raw, params.calibration_quantile),
                    train,
                }
            }
            DetectorKind::HypersphereBoundary => {
                let scaler = Standardizer::fit(rows);
                let z: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
                let center = enclosing_center(&z);
                let radius = z.iter().map(|p| distance(p, &center)).fold(0.0, f64::max);
                let raw: Vec<f64> = z.iter().map(|p| sphere_raw(p, &center, radius)).collect();
                Body::HypersphereBoundary {
                    scaler,
                    reference: quantile(&raw, params.calibration_quantile),
                    center,
                    radius,
                }
            }
        };
        let mut model = AnomalyModel {
            format: MODEL_FORMAT.into(),
            schema: data.schema.clone(),
            params: *params,
            threshold: 0.0,
            body,
        };
        let train_scores: Vec<f64> = match &model.body {
            Body::KnnDensity { train, k, reference, .. } => (0..train.len())
                .map(|i| squash(kth_distance(train, &train[i], *k, Some(i)), *reference))
                .collect(),
            _ => rows.iter().map(|r| model.score_unchecked(r)).collect(),
        };
        model.threshold = quantile(&train_scores, params.calibration_quantile);
        Ok(model)
    }

    pub fn kind(&self) -> DetectorKind {
        match self.body {
            Body::UnivariateDensity { .. } => DetectorKind::UnivariateDensity,
            Body::KnnDensity { .. } => DetectorKind::KnnDensity,
            Body::HypersphereBoundary { .. } => DetectorKind::HypersphereBoundary,
        }
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    /// Scores at or above this are anomalous.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn score(&self, row: &[f64]) -> Result<f64, OneClassError> {
        check_row(row, self.schema.len())?;
        Ok(self.score_unchecked(row))
    }

    /// Scores every row of `data`, whose schema must match the model's.
    pub fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>, OneClassError> {
        if data.schema != self.schema {
            return Err(OneClassError::Schema);
        }
        data.rows.iter().map(|r| self.score(r)).collect()
    }

    /// Score of each feature on its own; univariate-density models only.
    pub fn feature_scores(&self, row: &[f64]) -> Result<Vec<f64>, OneClassError> {
        check_row(row, self.schema.len())?;
        match &self.body {
            Body::UnivariateDensity { features, .. } => {
                Ok(features.iter().zip(row).map(|(h, &x)| h.score(x)).collect())
            }
            _ => Err(OneClassError::NotUnivariate),
        }
    }

    /// Score before calibration: the mean feature score for
    /// univariate-density, the distance for the other kinds.
    pub fn raw_score(&self, row: &[f64]) -> Result<f64, OneClassError> {
        check_row(row, self.schema.len())?;
        Ok(match &self.body {
            Body::UnivariateDensity { features, .. } => mean_feature_score(features, row),
            Body::KnnDensity { scaler, k, train, .. } => kth_distance(train, &scaler.apply(row), *k, None),
            Body::HypersphereBoundary {
                scaler, center, radius, ..
            } => sphere_raw(&scaler.apply(row), center, *radius),
        })
    }

    fn score_unchecked(&self, row: &[f64]) -> f64 {
        let s = match &self.body {
            Body::UnivariateDensity { features, reference } => stretch(mean_feature_score(features, row), *reference),
            Body::KnnDensity {
                scaler,
                k,
                train,
                reference,
            } => squash(kth_distance(train, &scaler.apply(row), *k, None), *reference),
            Body::HypersphereBoundary {
                scaler,
                center,
                radius,
                reference,
            } => squash(sphere_raw(&scaler.apply(row), center, *radius), *reference),
        };
        s.clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<AnomalyModel, OneClassError> {
        let m: AnomalyModel = serde_json::from_str(text).map_err(|e| OneClassError::Format(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(OneClassError::Format(format!("unsupported format `{}`", m.format)));
        }
        Ok(m)
    }

    pub fn write(&self, path: &FsPath) -> Result<(), OneClassError> {
        std::fs::write(path, self.to_json()).map_err(|e| OneClassError::Io(e.to_string()))
    }

    pub fn read(path: &FsPath) -> Result<AnomalyModel, OneClassError> {
        let text = std::fs::read_to_string(path).map_err(|e| OneClassError::Io(e.to_string()))?;
        AnomalyModel::from_json(&text)
    }
}

fn mean_feature_score(features: &[Histogram], row: &[f64]) -> f64 {
    features.iter().zip(row).map(|(h, &x)| h.score(x)).sum::<f64>() / features.len() as f64
}

fn check_row(row: &[f64], width: usize) -> Result<(), OneClassError> {
    if row.len() != width {
        return Err(OneClassError::Width(row.len(), width));
    }
    match row.iter().position(|v| !v.is_finite()) {
        Some(j) => Err(OneClassError::NonFinite(j)),
        None => Ok(()),
    }
}

/// Distance from `x` to its k-th nearest training row, skipping row `skip`.
fn kth_distance(train: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> f64 {
    let mut d: Vec<f64> = train
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, t)| distance(t, x))
        .collect();
    let k = k.min(d.len());
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Approximate minimum enclosing ball center: repeatedly step toward the
/// farthest point with a shrinking step.
fn enclosing_center(points: &[Vec<f64>]) -> Vec<f64> {
    const ITERATIONS: usize = 200;
    let mut c = points[0].clone();
    for i in 1..=ITERATIONS {
        let far = points
            .iter()
            .max_by(|a, b| distance(a, &c).total_cmp(&distance(b, &c)))
            .expect("non-empty");
        let step = 1.0 / (i as f64 + 1.0);
        for (cj, fj) in c.iter_mut().zip(far) {
            *cj += (fj - *cj) * step;
        }
    }
    c
}

/// Distance from the center relative to the ball radius.
fn sphere_raw(z: &[f64], center: &[f64], radius: f64) -> f64 {
    let r = distance(z, center);
    if radius > 0.0 {
        r / radius
    } else if r > 1e-12 {
        CONSTANT_DEVIATION
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const KINDS: [DetectorKind; 3] = [
        DetectorKind::UnivariateDensity,
        DetectorKind::KnnDensity,
        DetectorKind::HypersphereBoundary,
    ];

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        let d = rows[0].len();
        let mut ds = Dataset::new((0..d).map(|j| format!("f{j}")).collect());
        ds.time_units = (0..rows.len() as u64).collect();
        ds.rows = rows;
        ds
    }

    fn gaussian(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(5.0, 2.0).unwrap();
        dataset((0..n).map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect()).collect())
    }

    #[test]
    fn constant_training_data_scores_same_point_zero() {
        let ds = dataset(vec![vec![3.0, -1.0]; 30]);
        for kind in KINDS {
            let m = AnomalyModel::train(kind, &ds, &DetectorParams::default()).unwrap();
            assert_eq!(m.score(&[3.0, -1.0]).unwrap(), 0.0, "{kind:?}");
            assert_eq!(m.score(&[3.5, -1.0]).unwrap() > 0.4, true, "{kind:?}");
        }
    }

    #[test]
    fn far_point_scores_high_for_every_kind() {
        let ds = gaussian(400, 1, 1);
        let mean = ds.rows.iter().map(|r| r[0]).sum::<f64>() / 400.0;
        let std = (ds.rows.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / 400.0).sqrt();
        for kind in KINDS {
            let m = AnomalyModel::train(kind, &ds, &DetectorParams::default()).unwrap();
            let s = m.score(&[mean + 10.0 * std]).unwrap();
            // closed forms: outside the padded range for the histogram;
            // 1 - 2^-(r/r99)^2 with r >> r99 for the two distance kinds
            assert!(s >= 0.9, "{kind:?} {s}");
        }
    }

    #[test]
    fn medoid_scores_below_half() {
        let ds = gaussian(200, 3, 2);
        let medoid = ds
            .rows
            .iter()
            .min_by(|a, b| {
                let ca: f64 = ds.rows.iter().map(|r| distance(a, r)).sum();
                let cb: f64 = ds.rows.iter().map(|r| distance(b, r)).sum();
                ca.total_cmp(&cb)
            })
            .unwrap()
            .clone();
        for kind in KINDS {
            let m = AnomalyModel::train(kind, &ds, &DetectorParams::default()).unwrap();
            assert!(m.score(&medoid).unwrap() < 0.5, "{kind:?}");
        }
    }

    #[test]
    fn univariate_score_matches_histogram_oracle() {
        let ds = gaussian(100, 2, 3);
        let m = AnomalyModel::train(DetectorKind::UnivariateDensity, &ds, &DetectorParams::default()).unwrap();
        let x = [5.3, 1.0];
        let mut total = 0.0;
        for j in 0..2 {
            let col: Vec<f64> = ds.rows.iter().map(|r| r[j]).collect();
            let (min, max) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            let (lo, hi) = (min - 0.1 * (max - min), max + 0.1 * (max - min));
            let width = (hi - lo) / 20.0;
            let mut counts = [0usize; 20];
            for v in &col {
                counts[(((v - lo) / width) as usize).min(19)] += 1;
            }
            let peak = *counts.iter().max().unwrap() as f64;
            let own = counts[(((x[j] - lo) / width) as usize).min(19)] as f64;
            let f = if x[j] < lo || x[j] > hi { 1.0 } else { 1.0 - own / peak };
            assert!((m.feature_scores(&x).unwrap()[j] - f).abs() < 1e-12);
            total += f;
        }
        assert!((m.raw_score(&x).unwrap() - total / 2.0).abs() < 1e-12);
    }

    #[test]
    fn univariate_calibration_sends_training_quantile_to_half() {
        let ds = gaussian(200, 3, 8);
        let m = AnomalyModel::train(DetectorKind::UnivariateDensity, &ds, &DetectorParams::default()).unwrap();
        let mut raw: Vec<f64> = ds.rows.iter().map(|r| m.raw_score(r).unwrap()).collect();
        raw.sort_by(f64::total_cmp);
        let pos = 0.99 * 199.0;
        let i = pos as usize;
        let r99 = raw[i] + (raw[i + 1] - raw[i]) * (pos - i as f64);
        for row in &ds.rows {
            let x = m.raw_score(row).unwrap();
            let want = if x <= r99 { 0.5 * x / r99 } else { 0.5 + 0.5 * (x - r99) / (1.0 - r99) };
            assert!((m.score(row).unwrap() - want).abs() < 1e-12);
        }
        // the threshold lies between the two calibrated scores around r99
        let below = 0.5 * raw[i] / r99;
        let above = 0.5 + 0.5 * (raw[i + 1] - r99) / (1.0 - r99);
        assert!(below <= m.threshold() && m.threshold() <= above);
    }

    #[test]
    fn knn_with_k1_on_a_training_point_is_zero() {
        let ds = gaussian(50, 2, 4);
        let params = DetectorParams {
            k: 1,
            ..DetectorParams::default()
        };
        let m = AnomalyModel::train(DetectorKind::KnnDensity, &ds, &params).unwrap();
        assert_eq!(m.score(&ds.rows[7]).unwrap(), 0.0);
    }

    #[test]
    fn json_round_trip_scores_identically() {
        let ds = gaussian(80, 3, 5);
        let probe = [4.1, 9.7, 5.5];
        for kind in KINDS {
            let m = AnomalyModel::train(kind, &ds, &DetectorParams::default()).unwrap();
            let back = AnomalyModel::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.score(&probe).unwrap().to_bits(), m.score(&probe).unwrap().to_bits());
        }
    }

    #[test]
    fn held_out_normal_rows_stay_below_threshold() {
        let train = gaussian(600, 4, 6);
        let test = gaussian(600, 4, 7);
        for kind in KINDS {
            let m = AnomalyModel::train(kind, &train, &DetectorParams::default()).unwrap();
            let below = m
                .score_dataset(&test)
                .unwrap()
                .iter()
                .filter(|&&s| s < m.threshold())
                .count();
            assert!(below as f64 >= 0.95 * 600.0, "{kind:?}: {below}");
        }
    }

    #[test]
    fn errors_are_reported() {
        let ds = gaussian(10, 2, 8);
        assert_eq!(
            AnomalyModel::train(DetectorKind::UnivariateDensity, &ds, &DetectorParams::default()),
            Err(OneClassError::TooFewRows(10, 20))
        );
        let ds = gaussian(30, 2, 8);
        let m = AnomalyModel::train(DetectorKind::KnnDensity, &ds, &DetectorParams::default()).unwrap();
        assert_eq!(m.score(&[1.0]), Err(OneClassError::Width(1, 2)));
        assert_eq!(m.feature_scores(&[1.0, 2.0]), Err(OneClassError::NotUnivariate));
        assert_eq!(m.score(&[f64::NAN, 1.0]), Err(OneClassError::NonFinite(0)));
        let mut other = ds.clone();
        other.schema[0] = "g".into();
        assert_eq!(m.score_dataset(&other), Err(OneClassError::Schema));
    }

    proptest! {
        #[test]
        fn univariate_score_grows_with_deviation(j in 0usize..3, a in 0.0f64..30.0, b in 0.0f64..30.0) {
            let ds = gaussian(60, 3, 9);
            let m = AnomalyModel::train(DetectorKind::UnivariateDensity, &ds, &DetectorParams::default()).unwrap();
            let (near, far) = (a.min(b), a.max(b));
            let max_j = ds.rows.iter().map(|r| r[j]).fold(f64::MIN, f64::max);
            let base = [5.0, 5.0, 5.0];
            let mut x1 = base;
            let mut x2 = base;
            x1[j] = max_j + near;
            x2[j] = max_j + far;
            prop_assert!(m.score(&x2).unwrap() >= m.score(&x1).unwrap());
        }

        #[test]
        fn affine_rescaling_leaves_scores_unchanged(
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
            x in proptest::collection::vec(-5.0f64..15.0, 2),
        ) {
            let ds = gaussian(60, 2, 10);
            let mut scaled = ds.clone();
            for r in &mut scaled.rows {
                r[0] = r[0] * scale + shift;
            }
            let xs = [x[0] * scale + shift, x[1]];
            for kind in KINDS {
                let a = AnomalyModel::train(kind, &ds, &DetectorParams::default()).unwrap();
                let b = AnomalyModel::train(kind, &scaled, &DetectorParams::default()).unwrap();
                let (sa, sb) = (a.score(&x).unwrap(), b.score(&xs).unwrap());
                prop_assert!((sa - sb).abs() < 1e-6, "{:?}: {} vs {}", kind, sa, sb);
            }
        }

        #[test]
        fn scores_stay_in_unit_interval(x in proptest::collection::vec(-1e6f64..1e6, 3)) {
            let ds = gaussian(40, 3, 11);
            for kind in KINDS {
                let m = AnomalyModel::train(kind, &ds, &DetectorParams::default()).unwrap();
                let s = m.score(&x).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}

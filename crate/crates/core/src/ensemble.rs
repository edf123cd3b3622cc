//! Combining Sensor scores into one network-wide anomaly score.
//!
//! Each window's Sensor scores are summarized by seven aggregate features,
//! which a one-class combiner turns into the ensemble prediction `EP`. The
//! network anomaly score `NAS` then accumulates weighted changes of `EP`
//! over a sliding history and is compared against a threshold.

use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oneclass::{AnomalyModel, DetectorKind, DetectorParams, OneClassError};
use crate::sense::{Dataset, Label};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("no Sensor scores to combine")]
    Empty,
    #[error("{0} weights for {1} scores")]
    Weights(usize, usize),
    #[error("history window must be even and at least 2, got {0}")]
    Window(usize),
    #[error("need {0} past values, got {1}")]
    History(usize, usize),
    #[error("Sensor `{0}`: {1}")]
    Sensor(String, OneClassError),
    #[error("combiner: {0}")]
    Combiner(OneClassError),
    #[error("expected {0} Sensor datasets, got {1}")]
    SensorCount(usize, usize),
    #[error("Sensor datasets cover different windows")]
    Misaligned,
    #[error("invalid ensemble config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed file: {0}")]
    Format(String),
}

pub const META_FEATURES: [&str; 7] = [
    "mean",
    "median",
    "min",
    "max",
    "variance",
    "share_at_least_half",
    "weighted_mean",
];

/// The seven aggregates of one window's Sensor scores. `weights` are the
/// members' reliabilities.
pub fn meta_features(scores: &[f64], weights: &[f64]) -> Result<[f64; 7], EnsembleError> {
    if scores.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if weights.len() != scores.len() {
        return Err(EnsembleError::Weights(weights.len(), scores.len()));
    }
    let n = scores.len() as f64;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = scores.iter().sum::<f64>() / n;
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    let variance = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let share = scores.iter().filter(|&&s| s >= 0.5).count() as f64 / n;
    let wsum: f64 = weights.iter().sum();
    let weighted = if wsum > 0.0 {
        scores.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>() / wsum
    } else {
        mean
    };
    Ok([mean, median, sorted[0], sorted[sorted.len() - 1], variance, share, weighted])
}

/// Weighted difference between the newer and older halves of the last `p`
/// values of `history` (oldest first), normalized so that a 0 to 1 step
/// gives exactly 1.
pub fn delta(history: &[f64], p: usize) -> Result<f64, EnsembleError> {
    if p < 2 || !p.is_multiple_of(2) {
        return Err(EnsembleError::Window(p));
    }
    if history.len() < p {
        return Err(EnsembleError::History(p, history.len()));
    }
    let h = &history[history.len() - p..];
    let half = p / 2;
    let mut num = 0.0;
    for i in 0..half {
        num += (h[half + i] - h[i]) / (half - i) as f64;
    }
    let den: f64 = (1..=half).map(|i| 1.0 / i as f64).sum();
    Ok(num / den)
}

pub fn nas_step(prev: f64, history: &[f64], xi: f64, p: usize) -> Result<f64, EnsembleError> {
    Ok((prev + xi * delta(history, p)?).clamp(0.0, 1.0))
}

pub fn classify(nas: f64, theta: f64) -> bool {
    nas >= theta
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NasConfig {
    pub xi: f64,
    pub p: usize,
    pub theta: f64,
}

impl Default for NasConfig {
    fn default() -> Self {
        NasConfig {
            xi: 0.25,
            p: 8,
            theta: 0.75,
        }
    }
}

impl NasConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(self.xi > 0.0) {
            return Err(EnsembleError::Config("xi must be positive".into()));
        }
        if self.p < 2 || !self.p.is_multiple_of(2) {
            return Err(EnsembleError::Window(self.p));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(EnsembleError::Config("theta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// NAS for every step of `ep`. The first value is 0 and the history is
/// padded with the first EP until `p` values exist.
pub fn nas_series(ep: &[f64], cfg: &NasConfig) -> Result<Vec<f64>, EnsembleError> {
    cfg.validate()?;
    let Some(&first) = ep.first() else {
        return Ok(Vec::new());
    };
    let mut padded = vec![first; cfg.p];
    padded.extend_from_slice(ep);
    let mut nas = Vec::with_capacity(ep.len());
    let mut prev = 0.0;
    nas.push(prev);
    for t in 1..ep.len() {
        // history EP_{t-p} .. EP_{t-1} sits at padded[t .. t + p]
        prev = nas_step(prev, &padded[t..t + cfg.p], cfg.xi, cfg.p)?;
        nas.push(prev);
    }
    Ok(nas)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub detector: DetectorKind,
    pub combiner: DetectorKind,
    pub params: DetectorParams,
    /// Contiguous folds used to produce out-of-fold Sensor scores for
    /// training the combiner.
    pub folds: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            detector: DetectorKind::UnivariateDensity,
            combiner: DetectorKind::UnivariateDensity,
            params: DetectorParams::default(),
            folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorMember {
    pub id: String,
    pub model: AnomalyModel,
}

/// Trained Sensor models, their reliabilities and the combiner.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<SensorMember>,
    /// Share of out-of-fold training rows each member scored as normal.
    pub weights: Vec<f64>,
    pub combiner: AnomalyModel,
}

fn fold_bounds(n: usize, folds: usize) -> Vec<(usize, usize)> {
    (0..folds).map(|f| (f * n / folds, (f + 1) * n / folds)).collect()
}

fn check_aligned(data: &[&Dataset]) -> Result<usize, EnsembleError> {
    let first = data.first().ok_or(EnsembleError::Empty)?;
    if data.iter().any(|d| d.time_units != first.time_units) {
        return Err(EnsembleError::Misaligned);
    }
    Ok(first.len())
}

impl Ensemble {
    /// Trains one model per Sensor on its normal rows, then the combiner on
    /// meta features of out-of-fold Sensor scores.
    pub fn train(sensors: &[(String, Dataset)], cfg: &EnsembleConfig) -> Result<Ensemble, EnsembleError> {
        if cfg.folds < 2 {
            return Err(EnsembleError::Config("folds must be at least 2".into()));
        }
        let n = check_aligned(&sensors.iter().map(|(_, d)| d).collect::<Vec<_>>())?;
        let fold_params = DetectorParams {
            min_rows: 1,
            ..cfg.params
        };
        let bounds = fold_bounds(n, cfg.folds);
        let mut oof = vec![vec![0.0; sensors.len()]; n];
        let mut weights = Vec::with_capacity(sensors.len());
        let mut members = Vec::with_capacity(sensors.len());
        for (s, (id, data)) in sensors.iter().enumerate() {
            let err = |e| EnsembleError::Sensor(id.clone(), e);
            let model = AnomalyModel::train(cfg.detector, data, &cfg.params).map_err(err)?;
            let mut normal = 0usize;
            for &(lo, hi) in &bounds {
                let rest: Vec<usize> = (0..lo).chain(hi..n).collect();
                let m = AnomalyModel::train(cfg.detector, &data.select(&rest), &fold_params).map_err(err)?;
                for i in lo..hi {
                    let score = m.score(&data.rows[i]).map_err(err)?;
                    oof[i][s] = score;
                    if score < m.threshold() {
                        normal += 1;
                    }
                }
            }
            weights.push(normal as f64 / n as f64);
            members.push(SensorMember { id: id.clone(), model });
        }
        let mut meta = Dataset::new(META_FEATURES.iter().map(|s| s.to_string()).collect());
        meta.time_units = sensors[0].1.time_units.clone();
        meta.rows = oof
            .iter()
            .map(|row| meta_features(row, &weights).map(|m| m.to_vec()))
            .collect::<Result<_, _>>()?;
        let combiner = AnomalyModel::train(cfg.combiner, &meta, &cfg.params).map_err(EnsembleError::Combiner)?;
        Ok(Ensemble {
            members,
            weights,
            combiner,
        })
    }

    /// Ensemble prediction for one window's Sensor scores.
    pub fn predict(&self, scores: &[f64]) -> Result<f64, EnsembleError> {
        let meta = meta_features(scores, &self.weights)?;
        self.combiner.score(&meta).map_err(EnsembleError::Combiner)
    }

    /// Scores aligned per-Sensor datasets (same order as the members) and
    /// runs the NAS recurrence over them.
    pub fn score(&self, data: &[Dataset], nas: &NasConfig) -> Result<ScoreSeries, EnsembleError> {
        if data.len() != self.members.len() {
            return Err(EnsembleError::SensorCount(self.members.len(), data.len()));
        }
        let n = check_aligned(&data.iter().collect::<Vec<_>>())?;
        let mut sensor_scores = vec![Vec::with_capacity(self.members.len()); n];
        for (m, d) in self.members.iter().zip(data) {
            let scores = m
                .model
                .score_dataset(d)
                .map_err(|e| EnsembleError::Sensor(m.id.clone(), e))?;
            for (row, s) in sensor_scores.iter_mut().zip(scores) {
                row.push(s);
            }
        }
        let ep: Vec<f64> = sensor_scores
            .iter()
            .map(|s| self.predict(s))
            .collect::<Result<_, _>>()?;
        let nas_values = nas_series(&ep, nas)?;
        Ok(ScoreSeries {
            sensor_ids: self.members.iter().map(|m| m.id.clone()).collect(),
            time_units: data[0].time_units.clone(),
            predicted: nas_values.iter().map(|&v| classify(v, nas.theta)).collect(),
            sensor_scores,
            ep,
            nas: nas_values,
            labels: data[0].labels.clone(),
            suspects: vec![Vec::new(); n],
        })
    }

    /// Writes one JSON model per member, the combiner and the member list.
    pub fn write_dir(&self, dir: &FsPath) -> Result<(), EnsembleError> {
        fs::create_dir_all(dir).map_err(io)?;
        for m in &self.members {
            fs::write(dir.join(format!("sensor-{}.json", m.id)), m.model.to_json()).map_err(io)?;
        }
        fs::write(dir.join("combiner.json"), self.combiner.to_json()).map_err(io)?;
        let index = EnsembleIndex {
            format: ENSEMBLE_FORMAT.into(),
            members: self.members.iter().map(|m| m.id.clone()).collect(),
            weights: self.weights.clone(),
        };
        fs::write(
            dir.join("ensemble.json"),
            serde_json::to_string_pretty(&index).expect("index serializes"),
        )
        .map_err(io)
    }

    pub fn read_dir(dir: &FsPath) -> Result<Ensemble, EnsembleError> {
        let text = fs::read_to_string(dir.join("ensemble.json")).map_err(io)?;
        let index: EnsembleIndex = serde_json::from_str(&text).map_err(|e| EnsembleError::Format(e.to_string()))?;
        if index.format != ENSEMBLE_FORMAT || index.weights.len() != index.members.len() {
            return Err(EnsembleError::Format("bad ensemble index".into()));
        }
        let members = index
            .members
            .iter()
            .map(|id| {
                let model = AnomalyModel::read(&dir.join(format!("sensor-{id}.json")))
                    .map_err(|e| EnsembleError::Sensor(id.clone(), e))?;
                Ok(SensorMember { id: id.clone(), model })
            })
            .collect::<Result<_, EnsembleError>>()?;
        let combiner = AnomalyModel::read(&dir.join("combiner.json")).map_err(EnsembleError::Combiner)?;
        Ok(Ensemble {
            members,
            weights: index.weights,
            combiner,
        })
    }
}

const ENSEMBLE_FORMAT: &str = "probenids-ensemble v1";

#[derive(Serialize, Deserialize)]
struct EnsembleIndex {
    format: String,
    members: Vec<String>,
    weights: Vec<f64>,
}

fn io(e: std::io::Error) -> EnsembleError {
    EnsembleError::Io(e.to_string())
}

/// Per-window detector output.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub sensor_ids: Vec<String>,
    pub time_units: Vec<u64>,
    /// `[window][sensor]`
    pub sensor_scores: Vec<Vec<f64>>,
    pub ep: Vec<f64>,
    pub nas: Vec<f64>,
    /// `nas >= theta`
    pub predicted: Vec<bool>,
    pub labels: Option<Vec<Label>>,
    /// Routers localized per window, by id.
    pub suspects: Vec<Vec<String>>,
}

const SERIES_HEADER: &str = "# probenids-series v1";

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.ep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ep.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SERIES_HEADER}\n");
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["time_unit".to_string()];
        header.extend(self.sensor_ids.iter().cloned());
        header.extend(["ep", "nas", "prediction", "label", "suspects"].map(String::from));
        w.write_record(&header).expect("in-memory write");
        for i in 0..self.len() {
            let mut rec = vec![self.time_units[i].to_string()];
            rec.extend(self.sensor_scores[i].iter().map(|s| s.to_string()));
            rec.push(self.ep[i].to_string());
            rec.push(self.nas[i].to_string());
            rec.push(if self.predicted[i] { "attack" } else { "normal" }.to_string());
            rec.push(match self.labels.as_ref().map(|l| l[i]) {
                Some(Label::Attack) => "attack".into(),
                Some(Label::Normal) => "normal".into(),
                None => String::new(),
            });
            rec.push(self.suspects[i].join(";"));
            w.write_record(&rec).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    pub fn from_csv(text: &str) -> Result<ScoreSeries, EnsembleError> {
        let bad = |m: String| EnsembleError::Format(m);
        let body = text
            .strip_prefix(SERIES_HEADER)
            .and_then(|t| t.strip_prefix('\n'))
            .ok_or_else(|| bad(format!("expected header `{SERIES_HEADER}`")))?;
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
        let n = header.len();
        if n < 6 || &header[0] != "time_unit" || &header[n - 5] != "ep" {
            return Err(bad("unexpected columns".into()));
        }
        let sensors = n - 6;
        let mut s = ScoreSeries {
            sensor_ids: (1..=sensors).map(|i| header[i].to_string()).collect(),
            time_units: Vec::new(),
            sensor_scores: Vec::new(),
            ep: Vec::new(),
            nas: Vec::new(),
            predicted: Vec::new(),
            labels: None,
            suspects: Vec::new(),
        };
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}`")));
        let mut labels = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            s.time_units
                .push(rec[0].parse().map_err(|_| bad(format!("bad time unit `{}`", &rec[0])))?);
            s.sensor_scores
                .push((1..=sensors).map(|i| num(&rec[i])).collect::<Result<_, _>>()?);
            s.ep.push(num(&rec[n - 5])?);
            s.nas.push(num(&rec[n - 4])?);
            s.predicted.push(&rec[n - 3] == "attack");
            labels.push(match &rec[n - 2] {
                "attack" => Some(Label::Attack),
                "normal" => Some(Label::Normal),
                _ => None,
            });
            let sus = &rec[n - 1];
            s.suspects.push(if sus.is_empty() {
                Vec::new()
            } else {
                sus.split(';').map(str::to_string).collect()
            });
        }
        if !labels.is_empty() && labels.iter().all(Option::is_some) {
            s.labels = Some(labels.into_iter().flatten().collect());
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_scores_give_zero_meta() {
        assert_eq!(meta_features(&[0.0; 4], &[1.0; 4]).unwrap(), [0.0; 7]);
    }

    #[test]
    fn two_sensor_meta_by_hand() {
        let m = meta_features(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m, [0.5, 0.5, 0.0, 1.0, 0.25, 0.5, 0.5]);
        let w = meta_features(&[0.0, 1.0], &[1.0, 3.0]).unwrap();
        assert_eq!(w[6], 0.75);
        assert_eq!(meta_features(&[], &[]), Err(EnsembleError::Empty));
    }

    #[test]
    fn delta_on_step_and_constant() {
        let step = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert!((delta(&step, 8).unwrap() - 1.0).abs() < 1e-12);
        assert!(delta(&[0.4; 8], 8).unwrap().abs() < 1e-12);
        assert_eq!(delta(&[0.0; 3], 4), Err(EnsembleError::History(4, 3)));
        assert_eq!(delta(&[0.0; 8], 3), Err(EnsembleError::Window(3)));
    }

    #[test]
    fn nas_clamps_and_thresholds() {
        let step = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(nas_step(0.9, &step, 1.0, 4).unwrap(), 1.0);
        assert_eq!(nas_step(0.3, &[0.2; 4], 0.25, 4).unwrap(), 0.3);
        assert!(!classify(0.74, 0.75));
        assert!(classify(0.75, 0.75));
        assert!(classify(1.0, 0.75));
    }

    #[test]
    fn sustained_step_crosses_threshold_when_the_recurrence_says_so() {
        let mut ep = vec![0.0; 20];
        ep.extend(vec![1.0; 20]);
        let cfg = NasConfig::default();
        let nas = nas_series(&ep, &cfg).unwrap();
        // independent iteration of the recurrence
        let mut prev = 0.0;
        let mut first = None;
        for t in 1..ep.len() {
            let hist: Vec<f64> = (t as i64 - 8..t as i64).map(|i| ep[i.max(0) as usize]).collect();
            let (old, new) = hist.split_at(4);
            let num: f64 = (0..4).map(|i| (new[i] - old[i]) / (4 - i) as f64).sum();
            let den = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
            prev = (prev + 0.25 * num / den).clamp(0.0, 1.0);
            assert!((nas[t] - prev).abs() < 1e-12);
            if first.is_none() && prev >= 0.75 {
                first = Some(t);
            }
        }
        assert_eq!(first, Some(24));
        assert_eq!(nas.iter().position(|&v| classify(v, 0.75)), Some(24));
    }

    fn sensor_data(seed: u64, n: usize) -> Dataset {
        let mut ds = Dataset::new(vec!["x".into(), "y".into()]);
        ds.time_units = (0..n as u64).collect();
        ds.rows = (0..n)
            .map(|i| {
                let v = ((i as u64 * 7919 + seed * 104729) % 1000) as f64 / 1000.0;
                vec![v, 1.0 - v * v]
            })
            .collect();
        ds
    }

    fn trained() -> (Ensemble, Vec<(String, Dataset)>) {
        let sensors: Vec<(String, Dataset)> = (0..4).map(|s| (format!("S{}", s + 1), sensor_data(s, 200))).collect();
        (Ensemble::train(&sensors, &EnsembleConfig::default()).unwrap(), sensors)
    }

    #[test]
    fn combiner_flags_unseen_max_score() {
        let (e, _) = trained();
        let meta_max = e.combiner.schema().iter().position(|s| s == "max").unwrap();
        assert_eq!(meta_max, 3);
        let low = e.predict(&[0.1, 0.1, 0.1, 0.1]).unwrap();
        let high = e.predict(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(high >= 0.9, "{high}");
        assert!(low < high);
    }

    #[test]
    fn constant_meta_training_gives_zero_ep() {
        let rows = vec![vec![0.2; 7]; 30];
        let mut meta = Dataset::new(META_FEATURES.iter().map(|s| s.to_string()).collect());
        meta.time_units = (0..30).collect();
        meta.rows = rows;
        let m = AnomalyModel::train(DetectorKind::UnivariateDensity, &meta, &DetectorParams::default()).unwrap();
        assert_eq!(m.score(&[0.2; 7]).unwrap(), 0.0);
        let mut high = [0.2; 7];
        high[3] = 1.0;
        assert!(m.score(&high).unwrap() > 0.0);
    }

    #[test]
    fn scoring_prefix_gives_identical_ep() {
        let (e, sensors) = trained();
        let data: Vec<Dataset> = sensors.iter().map(|(_, d)| d.clone()).collect();
        let full = e.score(&data, &NasConfig::default()).unwrap();
        let idx: Vec<usize> = (0..50).collect();
        let prefix: Vec<Dataset> = data.iter().map(|d| d.select(&idx)).collect();
        let part = e.score(&prefix, &NasConfig::default()).unwrap();
        assert_eq!(part.ep[..], full.ep[..50]);
        assert_eq!(part.nas[..], full.nas[..50]);
    }

    #[test]
    fn ensemble_and_series_round_trip() {
        let (e, sensors) = trained();
        let dir = tempfile::tempdir().unwrap();
        e.write_dir(dir.path()).unwrap();
        assert_eq!(Ensemble::read_dir(dir.path()).unwrap(), e);
        let data: Vec<Dataset> = sensors.iter().map(|(_, d)| d.clone()).collect();
        let mut s = e.score(&data, &NasConfig::default()).unwrap();
        s.suspects[3] = vec!["R1".into(), "R2".into()];
        assert_eq!(ScoreSeries::from_csv(&s.to_csv()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn delta_is_antisymmetric(h in proptest::collection::vec(0.0f64..1.0, 8)) {
            let mut swapped = h[4..].to_vec();
            swapped.extend_from_slice(&h[..4]);
            let a = delta(&h, 8).unwrap();
            let b = delta(&swapped, 8).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn nas_stays_in_unit_interval(ep in proptest::collection::vec(0.0f64..=1.0, 1..200), xi in 0.01f64..5.0) {
            let nas = nas_series(&ep, &NasConfig { xi, ..NasConfig::default() }).unwrap();
            prop_assert!(nas.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn meta_is_permutation_invariant(mut s in proptest::collection::vec(0.0f64..=1.0, 1..12), seed in 0u64..1000) {
            let w = vec![1.0; s.len()];
            let a = meta_features(&s, &w).unwrap();
            let n = s.len();
            s.rotate_left(seed as usize % n);
            s.reverse();
            let b = meta_features(&s, &w).unwrap();
            for k in 0..7 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }
}

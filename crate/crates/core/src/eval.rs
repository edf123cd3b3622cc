//! Detection metrics: confusion counts, ROC/AUC and time to detect.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{0} predictions for {1} labels")]
    Length(usize, usize),
    #[error("ROC needs both classes in the labels")]
    SingleClass,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn error(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// True positive rate.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f_score(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Confusion counts of binary predictions, `true` meaning attack.
pub fn confusion_metrics(predicted: &[bool], actual: &[bool]) -> Result<Confusion, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::Length(predicted.len(), actual.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// ROC curve as (FPR, TPR) points from (0, 0) to (1, 1), one point per
/// distinct score threshold, and its trapezoidal area.
pub fn roc_auc(scores: &[f64], actual: &[bool]) -> Result<(Vec<(f64, f64)>, f64), EvalError> {
    if scores.len() != actual.len() {
        return Err(EvalError::Length(scores.len(), actual.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let pos = actual.iter().filter(|&&a| a).count() as f64;
    let neg = actual.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if actual[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("starts at origin");
        let (x1, y1) = (fp / neg, tp / pos);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok((points, auc))
}

/// Contiguous `[start, end)` runs of `true`.
pub fn attack_windows(actual: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in actual.iter().enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, actual.len()));
    }
    out
}

/// Steps from each window's start to the first attack prediction inside
/// it; `None` when the window is missed.
pub fn time_to_detect(predicted: &[bool], windows: &[(usize, usize)]) -> Vec<Option<usize>> {
    windows
        .iter()
        .map(|&(s, e)| (s..e.min(predicted.len())).find(|&i| predicted[i]).map(|i| i - s))
        .collect()
}

/// Everything reported for one evaluated series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub error: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub f_score: f64,
    /// AUC of the ensemble prediction; absent for single-class series.
    pub auc: Option<f64>,
    pub auc_nas: Option<f64>,
    /// Time to detect per attack window, in classification windows.
    pub time_to_detect: Vec<Option<usize>>,
    pub al_score_mean: Option<f64>,
    pub al_score_windows: usize,
}

impl MetricsReport {
    /// Builds the report from NAS-level predictions, EP and NAS scores, the
    /// ground truth and the per-window AL-Scores of detected windows.
    pub fn build(
        predicted: &[bool],
        ep: &[f64],
        nas: &[f64],
        actual: &[bool],
        al_scores: &[f64],
    ) -> Result<MetricsReport, EvalError> {
        let c = confusion_metrics(predicted, actual)?;
        let auc = match roc_auc(ep, actual) {
            Ok((_, a)) => Some(a),
            Err(EvalError::SingleClass) => None,
            Err(e) => return Err(e),
        };
        let auc_nas = match roc_auc(nas, actual) {
            Ok((_, a)) => Some(a),
            Err(EvalError::SingleClass) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            confusion: c,
            error: c.error(),
            precision: c.precision(),
            recall: c.recall(),
            fpr: c.fpr(),
            f_score: c.f_score(),
            auc,
            auc_nas,
            time_to_detect: time_to_detect(predicted, &attack_windows(actual)),
            al_score_mean: if al_scores.is_empty() {
                None
            } else {
                Some(al_scores.iter().sum::<f64>() / al_scores.len() as f64)
            },
            al_score_windows: al_scores.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<MetricsReport, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Two-column CSV of ROC points.
pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mann_whitney(scores: &[f64], actual: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &a) in actual.iter().enumerate() {
            for (j, &b) in actual.iter().enumerate() {
                if a && !b {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn confusion_hand_cases() {
        let c = confusion_metrics(&[true, false, true, false], &[true, false, false, true]).unwrap();
        assert_eq!(c, Confusion { tp: 1, tn: 1, fp: 1, fn_: 1 });
        assert_eq!((c.error(), c.precision(), c.recall(), c.f_score()), (0.5, 0.5, 0.5, 0.5));
        let perfect = confusion_metrics(&[true, false], &[true, false]).unwrap();
        assert_eq!((perfect.error(), perfect.f_score()), (0.0, 1.0));
        let none = confusion_metrics(&[false, false], &[false, false]).unwrap();
        assert_eq!(none.f_score(), 0.0);
        assert_eq!(confusion_metrics(&[], &[]), Err(EvalError::Empty));
        assert_eq!(confusion_metrics(&[true], &[]), Err(EvalError::Length(1, 0)));
    }

    #[test]
    fn separable_scores_have_unit_auc() {
        let (pts, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass));
    }

    fn rand_strata(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>()) / n as f64).collect();
        for i in (1..n).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        v
    }

    #[test]
    fn label_independent_scores_give_half() {
        // both classes draw from the same uniform distribution, stratified
        // within each class to keep the estimator's spread small
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let actual: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.5)).collect();
        let pos = actual.iter().filter(|&&a| a).count();
        let mut strata = [rand_strata(&mut rng, 1000 - pos), rand_strata(&mut rng, pos)];
        let scores: Vec<f64> = actual.iter().map(|&a| strata[a as usize].pop().unwrap()).collect();
        let (_, auc) = roc_auc(&scores, &actual).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "{auc}");
    }

    #[test]
    fn four_point_toy_matches_pairwise_count() {
        let s = [0.3, 0.7, 0.7, 0.1];
        let a = [false, true, false, true];
        assert!((roc_auc(&s, &a).unwrap().1 - mann_whitney(&s, &a)).abs() < 1e-12);
    }

    #[test]
    fn time_to_detect_cases() {
        let mut p = vec![false; 120];
        p[105] = true;
        assert_eq!(time_to_detect(&p, &[(100, 120)]), vec![Some(5)]);
        assert_eq!(time_to_detect(&p, &[(105, 110)]), vec![Some(0)]);
        assert_eq!(time_to_detect(&p, &[(10, 20)]), vec![None]);
        assert_eq!(attack_windows(&[false, true, true, false, true]), vec![(1, 3), (4, 5)]);
    }

    proptest! {
        #[test]
        fn auc_matches_mann_whitney(
            data in proptest::collection::vec((0u8..6, any::<bool>()), 4..30)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let actual: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(actual.iter().any(|&a| a) && actual.iter().any(|&a| !a));
            let (pts, auc) = roc_auc(&scores, &actual).unwrap();
            prop_assert!((auc - mann_whitney(&scores, &actual)).abs() < 1e-9);
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            prop_assert!((roc_auc(&squashed, &actual).unwrap().1 - auc).abs() < 1e-12);
        }

        #[test]
        fn rates_follow_their_definitions(
            pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..50)
        ) {
            let (p, a): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let c = confusion_metrics(&p, &a).unwrap();
            prop_assert_eq!(c.recall(), ratio(c.tp, c.tp + c.fn_));
            prop_assert_eq!(c.fpr(), ratio(c.fp, c.fp + c.tn));
            prop_assert_eq!(c.error(), (c.fp + c.fn_) as f64 / p.len() as f64);
        }
    }
}

//! Monte Carlo dropout uncertainty and threshold-based out-of-distribution
//! decisions.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::features::ChromaClip;
use crate::rng;

/// How per-class variances across passes collapse to one score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceAggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    /// Stochastic forward passes per clip.
    pub passes: usize,
    /// Percentile of in-distribution validation scores used as threshold.
    pub percentile: f64,
    pub aggregation: VarianceAggregation,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            passes: 50,
            percentile: 95.0,
            aggregation: VarianceAggregation::Mean,
        }
    }
}

impl OodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::Config("ood passes must be at least 1".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::Config(format!("ood percentile {} outside (0, 100)", self.percentile)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub clip_id: u64,
    pub score: f64,
    pub passes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodDecision {
    pub clip_id: u64,
    pub is_ood: bool,
    pub threshold: f64,
}

/// Population variance of each class probability across passes, aggregated.
pub fn variance_score(passes: &[Vec<f64>], aggregation: VarianceAggregation) -> Result<f64> {
    let Some(first) = passes.first() else {
        return Err(Error::Input("variance of zero passes".into()));
    };
    let k = first.len();
    if k == 0 || passes.iter().any(|p| p.len() != k) {
        return Err(Error::Input("passes disagree on the number of classes".into()));
    }
    let n = passes.len() as f64;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let shift = first[c];
        let mean = passes.iter().map(|p| p[c] - shift).sum::<f64>() / n;
        let var = passes.iter().map(|p| (p[c] - shift - mean).powi(2)).sum::<f64>() / n;
        per_class.push(var);
    }
    Ok(match aggregation {
        VarianceAggregation::Mean => per_class.iter().sum::<f64>() / k as f64,
        VarianceAggregation::Max => per_class.iter().copied().fold(0.0, f64::max),
    })
}

/// Dropout seed for one pass over one clip.
pub fn pass_seed(seed: u64, clip_id: u64, pass: usize) -> u64 {
    rng::derive(seed, &[0x00d, clip_id, pass as u64])
}

/// Score each clip by the spread of `passes` dropout-perturbed predictions.
/// Seeds depend only on `(seed, clip_id, pass)`, so scores do not depend on
/// clip order.
pub fn mc_scores(
    model: &ClassifierModel,
    clips: &[ChromaClip],
    passes: usize,
    seed: u64,
    aggregation: VarianceAggregation,
) -> Result<Vec<UncertaintyScore>> {
    if passes == 0 {
        return Err(Error::Config("MC dropout needs at least one pass".into()));
    }
    clips
        .iter()
        .map(|clip| {
            let probs = model.predict_proba_passes(clip, passes, |p| pass_seed(seed, clip.clip_id, p))?;
            Ok(UncertaintyScore {
                clip_id: clip.clip_id,
                score: variance_score(&probs, aggregation)?,
                passes,
            })
        })
        .collect()
}

/// Percentile with linear interpolation between closest ranks
/// (rank `p/100 · (n-1)` in the sorted values).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Config(format!("percentile {p} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

pub const MIN_CALIBRATION_SCORES: usize = 10;

/// Threshold at the given percentile of in-distribution scores.
pub fn calibrate_threshold(id_scores: &[f64], pct: f64) -> Result<f64> {
    if !(pct > 0.0 && pct < 100.0) {
        return Err(Error::Config(format!("calibration percentile {pct} outside (0, 100)")));
    }
    if id_scores.len() < MIN_CALIBRATION_SCORES {
        return Err(Error::Input(format!(
            "threshold calibration needs at least {MIN_CALIBRATION_SCORES} scores, got {}",
            id_scores.len()
        )));
    }
    percentile(id_scores, pct)
}

/// A clip is out of distribution when its score exceeds the threshold.
pub fn decide(scores: &[UncertaintyScore], threshold: f64) -> Vec<OodDecision> {
    scores
        .iter()
        .map(|s| OodDecision {
            clip_id: s.clip_id,
            is_ood: s.score > threshold,
            threshold,
        })
        .collect()
}

/// Percentage of decisions that match the truth flags.
pub fn ood_accuracy(decisions: &[bool], truth: &[bool]) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Input("accuracy of zero decisions".into()));
    }
    if decisions.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} decisions for {} truth flags",
            decisions.len(),
            truth.len()
        )));
    }
    let hits = decisions.iter().zip(truth).filter(|(d, t)| d == t).count();
    Ok(100.0 * hits as f64 / decisions.len() as f64)
}

pub fn scores_csv(scores: &[UncertaintyScore]) -> String {
    let mut s = String::from("clip_id,score,T\n");
    for u in scores {
        s.push_str(&format!("{},{},{}\n", u.clip_id, u.score, u.passes));
    }
    s
}

pub fn decisions_csv(decisions: &[OodDecision]) -> String {
    let mut s = String::from("clip_id,is_ood,threshold\n");
    for d in decisions {
        s.push_str(&format!("{},{},{}\n", d.clip_id, d.is_ood as u8, d.threshold));
    }
    s
}

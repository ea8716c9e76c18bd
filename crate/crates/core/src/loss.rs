//! Joint training objective: smooth-L1 localisation, softmax class confidence
//! over positives, and sigmoid cross-entropy activity confidence against the
//! IoU soft labels, with hard negative mining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::PredictionVector;
use crate::spans::{MatchResult, Offsets};

/// Clamp applied to activity probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub loc: f64,
    pub conf: f64,
    pub act: f64,
    pub total: f64,
}

impl LossReport {
    pub fn from_components(loc: f64, conf: f64, act: f64, w: &LossWeights) -> Self {
        LossReport {
            loc,
            conf,
            act,
            total: loc + w.alpha * conf + w.beta * act,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loc.is_finite() && self.conf.is_finite() && self.act.is_finite() && self.total.is_finite()
    }
}

/// Training targets for a batch, flattened over all windows' default spans.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTargets {
    /// Matched 1-based class per span, `None` for negatives.
    pub classes: Vec<Option<usize>>,
    pub offsets: Vec<Option<Offsets>>,
    pub soft_labels: Vec<f64>,
    /// Negatives chosen by hard negative mining.
    pub mined: Vec<bool>,
}

impl BatchTargets {
    /// Targets for one window with an explicit set of mined negatives.
    pub fn new(matched: &MatchResult, mined: &[usize]) -> Self {
        let mut flags = vec![false; matched.len()];
        for &i in mined {
            debug_assert!(!matched.is_positive(i), "mined span {i} is positive");
            flags[i] = true;
        }
        BatchTargets {
            classes: matched.assignment.iter().map(|a| a.map(|a| a.class)).collect(),
            offsets: matched.target_offsets.clone(),
            soft_labels: matched.soft_labels.clone(),
            mined: flags,
        }
    }

    /// Mines negatives per window from the current activity scores and
    /// concatenates the windows in order.
    pub fn mine_and_concat<'a>(
        windows: impl IntoIterator<Item = (&'a MatchResult, &'a [f64])>,
    ) -> Self {
        let mut out = BatchTargets::default();
        for (matched, act_scores) in windows {
            let mined = hard_negative_mining(act_scores, matched);
            out.extend(BatchTargets::new(matched, &mined));
        }
        out
    }

    pub fn extend(&mut self, other: BatchTargets) {
        self.classes.extend(other.classes);
        self.offsets.extend(other.offsets);
        self.soft_labels.extend(other.soft_labels);
        self.mined.extend(other.mined);
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.classes.iter().filter(|c| c.is_some()).count()
    }

    pub fn num_mined(&self) -> usize {
        self.mined.iter().filter(|&&m| m).count()
    }

    /// `N = N_pos + N_neg`, the activity-loss normaliser.
    pub fn num_active(&self) -> usize {
        self.num_positives() + self.num_mined()
    }

    fn in_act_loss(&self, i: usize) -> bool {
        self.classes[i].is_some() || self.mined[i]
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Binary cross-entropy of one span's activity probability against its soft label.
pub fn span_activity_loss(act: f64, soft_label: f64) -> f64 {
    let c = act.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(soft_label * c.ln() + (1.0 - soft_label) * (1.0 - c).ln())
}

fn log_softmax(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn localization_loss(predictions: &[PredictionVector], targets: &BatchTargets) -> f64 {
    let n_pos = targets.num_positives();
    if n_pos == 0 {
        return 0.0;
    }
    let sum: f64 = predictions
        .iter()
        .zip(&targets.offsets)
        .filter_map(|(p, t)| t.map(|t| (p, t)))
        .map(|(p, t)| smooth_l1(p.offsets.center - t.center) + smooth_l1(p.offsets.length - t.length))
        .sum();
    sum / n_pos as f64
}

pub fn class_confidence_loss(predictions: &[PredictionVector], targets: &BatchTargets) -> f64 {
    let n_pos = targets.num_positives();
    if n_pos == 0 {
        return 0.0;
    }
    let sum: f64 = predictions
        .iter()
        .zip(&targets.classes)
        .filter_map(|(p, c)| c.map(|c| -log_softmax(&p.class_scores, c - 1)))
        .sum();
    sum / n_pos as f64
}

pub fn activity_confidence_loss(predictions: &[PredictionVector], targets: &BatchTargets) -> f64 {
    let n = targets.num_active();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..targets.len())
        .filter(|&i| targets.in_act_loss(i))
        .map(|i| span_activity_loss(predictions[i].act_score, targets.soft_labels[i]))
        .sum();
    sum / n as f64
}

/// Picks `min(N_pos, #negatives)` negatives with the largest activity loss
/// (one negative when there are no positives). Ties go to the lower index.
pub fn hard_negative_mining(act_scores: &[f64], matched: &MatchResult) -> Vec<usize> {
    debug_assert_eq!(act_scores.len(), matched.len());
    let mut negatives: Vec<(usize, f64)> = (0..matched.len())
        .filter(|&i| !matched.is_positive(i))
        .map(|i| (i, span_activity_loss(act_scores[i], matched.soft_labels[i])))
        .collect();
    let n_pos = matched.num_positives();
    let want = if n_pos == 0 { 1 } else { n_pos }.min(negatives.len());
    negatives.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    negatives.truncate(want);
    negatives.into_iter().map(|(i, _)| i).collect()
}

pub fn total_loss(
    predictions: &[PredictionVector],
    targets: &BatchTargets,
    weights: &LossWeights,
) -> Result<LossReport> {
    if predictions.len() != targets.len() {
        return Err(Error::input(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(LossReport::from_components(
        localization_loss(predictions, targets),
        class_confidence_loss(predictions, targets),
        activity_confidence_loss(predictions, targets),
        weights,
    ))
}

/// Gradient of the total loss with respect to one prediction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub class_scores: Vec<f64>,
    /// With respect to the clamped activity probability.
    pub act_score: f64,
    /// With respect to the pre-sigmoid activity logit, ignoring the clamp.
    pub act_logit: f64,
    pub offsets: Offsets,
}

impl PredictionGrad {
    fn zero(k: usize) -> Self {
        PredictionGrad {
            class_scores: vec![0.0; k],
            act_score: 0.0,
            act_logit: 0.0,
            offsets: Offsets::default(),
        }
    }
}

/// Analytical gradient of [`total_loss`] for every prediction.
pub fn loss_gradients(
    predictions: &[PredictionVector],
    targets: &BatchTargets,
    weights: &LossWeights,
) -> Vec<PredictionGrad> {
    let n_pos = targets.num_positives();
    let n_act = targets.num_active();
    let mut grads: Vec<PredictionGrad> = predictions
        .iter()
        .map(|p| PredictionGrad::zero(p.class_scores.len()))
        .collect();

    for (i, (p, g)) in predictions.iter().zip(grads.iter_mut()).enumerate() {
        if let (Some(class), Some(t)) = (targets.classes[i], targets.offsets[i]) {
            let scale = 1.0 / n_pos as f64;
            g.offsets.center = scale * smooth_l1_grad(p.offsets.center - t.center);
            g.offsets.length = scale * smooth_l1_grad(p.offsets.length - t.length);
            let probs = softmax(&p.class_scores);
            for (k, (gk, pk)) in g.class_scores.iter_mut().zip(probs).enumerate() {
                let onehot = if k + 1 == class { 1.0 } else { 0.0 };
                *gk = weights.alpha * scale * (pk - onehot);
            }
        }
        if targets.in_act_loss(i) {
            let scale = weights.beta / n_act as f64;
            let s = targets.soft_labels[i];
            let c = p.act_score;
            if c > PROB_EPS && c < 1.0 - PROB_EPS {
                g.act_score = -scale * (s / c - (1.0 - s) / (1.0 - c));
            }
            g.act_logit = scale * (c - s);
        }
    }
    grads
}

//! Predictive entropy over the candidate-answer logits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// Below this, `p ln p` is taken as zero.
const P_FLOOR: f64 = 1e-300;

pub type Logits = BTreeMap<Label, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub probs: BTreeMap<Label, f64>,
}

impl LabelDistribution {
    pub fn prob(&self, label: Label) -> f64 {
        self.probs.get(&label).copied().unwrap_or(0.0)
    }

    /// Most probable label; ties resolve to the earlier label.
    pub fn argmax(&self) -> Label {
        let mut best: Option<(Label, f64)> = None;
        for (&l, &p) in &self.probs {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((l, p));
            }
        }
        best.map(|(l, _)| l).unwrap_or(Label::Supports)
    }
}

/// Entropy in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UncertaintyScore(pub f64);

impl UncertaintyScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Softmax with max-subtraction.
pub fn label_distribution(logits: &Logits) -> Result<LabelDistribution> {
    if logits.is_empty() {
        return Err(Error::Numeric("no candidate logits".into()));
    }
    if let Some((l, v)) = logits.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("logit for {l} is {v}")));
    }
    let max = logits.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<(Label, f64)> = logits.iter().map(|(&l, &v)| (l, (v - max).exp())).collect();
    let z: f64 = exps.iter().map(|(_, e)| e).sum();
    Ok(LabelDistribution {
        probs: exps.into_iter().map(|(l, e)| (l, e / z)).collect(),
    })
}

pub fn predictive_entropy(dist: &LabelDistribution) -> UncertaintyScore {
    let h = dist
        .probs
        .values()
        .filter(|&&p| p >= P_FLOOR)
        .map(|&p| -p * p.ln())
        .sum::<f64>();
    UncertaintyScore(h.max(0.0))
}

/// `|u - u'|`.
pub fn absolute_entropy_change(u: UncertaintyScore, u_perturbed: UncertaintyScore) -> f64 {
    (u.0 - u_perturbed.0).abs()
}

/// Convenience: logits straight to entropy.
pub fn uncertainty_of(logits: &Logits) -> Result<UncertaintyScore> {
    Ok(predictive_entropy(&label_distribution(logits)?))
}

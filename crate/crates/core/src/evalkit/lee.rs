//! Label-explanation entailment: does the explanation entail its own verdict?

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::label::Label;
use crate::nle::NLEOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entailment {
    Entailment,
    Neutral,
    Contradiction,
}

impl fmt::Display for Entailment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Entailment::Entailment => "entailment",
            Entailment::Neutral => "neutral",
            Entailment::Contradiction => "contradiction",
        })
    }
}

/// Premise/hypothesis classifier.
pub trait EntailmentScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<Entailment>;
}

pub fn hypothesis(label: Label) -> &'static str {
    match label {
        Label::Supports => "The claim is supported by the evidence.",
        Label::Refutes => "The claim is refuted by the evidence.",
        Label::Neutral => "The claim is neutral to the evidence.",
    }
}

/// Keyword rules: the premise entails a verdict hypothesis when it uses that
/// verdict's vocabulary, contradicts it when it only uses another verdict's,
/// and is neutral otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordScorer;

impl KeywordScorer {
    fn keywords(label: Label) -> &'static [&'static str] {
        match label {
            Label::Supports => &["support"],
            Label::Refutes => &["refute", "contradict"],
            Label::Neutral => &["neutral", "unrelated", "insufficient"],
        }
    }

    fn label_of(hypothesis: &str) -> Option<Label> {
        let h = hypothesis.to_lowercase();
        Label::ALL
            .into_iter()
            .find(|&l| h == self::hypothesis(l).to_lowercase())
    }
}

impl EntailmentScorer for KeywordScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<Entailment> {
        let target = Self::label_of(hypothesis).ok_or_else(|| {
            crate::error::Error::Validation(format!("keyword scorer cannot read hypothesis {hypothesis:?}"))
        })?;
        let p = premise.to_lowercase();
        let uses = |l: Label| Self::keywords(l).iter().any(|k| p.contains(k));
        Ok(if uses(target) {
            Entailment::Entailment
        } else if Label::ALL.into_iter().any(|l| l != target && uses(l)) {
            Entailment::Contradiction
        } else {
            Entailment::Neutral
        })
    }
}

/// Whether the explanation entails the hypothesis built from its own prediction.
pub fn lee_judgement(output: &NLEOutput, scorer: &dyn EntailmentScorer) -> Result<bool> {
    Ok(scorer.score(&output.explanation, hypothesis(output.prediction))? == Entailment::Entailment)
}

/// Fraction of outputs judged entailment. Scorer failures are skipped with a
/// warning; `None` when nothing could be scored.
pub fn lee_score(outputs: &[NLEOutput], scorer: &dyn EntailmentScorer) -> Option<f64> {
    let (mut entailed, mut scored) = (0usize, 0usize);
    for o in outputs {
        match lee_judgement(o, scorer) {
            Ok(e) => {
                scored += 1;
                entailed += usize::from(e);
            }
            Err(e) => log::warn!("entailment scorer failed; skipping output ({e})"),
        }
    }
    (scored > 0).then(|| entailed as f64 / scored as f64)
}

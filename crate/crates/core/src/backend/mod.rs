//! Instrumented language-model interface.
//!
//! A backend exposes three things the pipeline needs from a white-box model:
//! answer logits (optionally with one head zero-ablated), the final layer's
//! per-head attention, and generation with optional attention steering.
//! [`MockBackend`] implements it from a scenario fixture; a real model adapter
//! plugs in behind the same trait.

mod cache;
mod mock;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use cache::CachedBackend;
pub use mock::{HeadEffect, MockBackend, MockFixture, Scenario, SyntheticModel, WordEntry, DEFAULT_STEER_THRESHOLD};

use crate::assemble::AssembledInput;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::tokenizer::Tokenizer;
use crate::uncertainty::Logits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.head)
    }
}

/// Row-stochastic attention over prompt tokens for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    pub head: HeadId,
    pub weights: Vec<Vec<f64>>,
}

impl AttentionMatrix {
    /// Checks squareness, non-negativity and row sums within 1e-6.
    pub fn new(head: HeadId, weights: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "attention row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&w| !w.is_finite() || w < 0.0) {
                return Err(Error::Validation(format!(
                    "attention row {i} has a negative or non-finite weight"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("attention row {i} sums to {s}")));
            }
        }
        Ok(AttentionMatrix { head, weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    pub heads: BTreeSet<HeadId>,
    pub target_indices: BTreeSet<usize>,
    pub beta: f64,
}

impl SteeringSpec {
    pub fn validate(&self, prompt_len: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Validation(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if let Some(&i) = self.target_indices.iter().find(|&&i| i >= prompt_len) {
            return Err(Error::Validation(format!(
                "target index {i} outside prompt of {prompt_len} tokens"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadAblationSpec {
    pub head: HeadId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub greedy: bool,
    pub seed: u64,
    pub max_new_tokens: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            greedy: true,
            seed: 0,
            max_new_tokens: 256,
        }
    }
}

/// A white-box model. Implementations may hold mutable state internally but
/// callers treat one instance as a serialized session.
pub trait Backend: Send {
    fn id(&self) -> &str;

    fn tokenizer(&self) -> &dyn Tokenizer;

    fn layer_count(&self) -> usize;

    fn heads_per_layer(&self) -> usize;

    /// One logit per candidate, read at the answer position.
    fn answer_logits(
        &self,
        input: &AssembledInput,
        candidates: &[Label],
        ablation: Option<HeadAblationSpec>,
    ) -> Result<Logits>;

    /// One matrix per final-layer head, in head order.
    fn final_layer_attention(&self, _input: &AssembledInput) -> Result<Vec<AttentionMatrix>> {
        Err(Error::Capability("final-layer attention"))
    }

    fn generate(
        &self,
        input: &AssembledInput,
        steering: Option<&SteeringSpec>,
        decode: &DecodeParams,
    ) -> Result<String>;

    fn all_heads(&self) -> Vec<HeadId> {
        (0..self.layer_count())
            .flat_map(|l| (0..self.heads_per_layer()).map(move |h| HeadId::new(l, h)))
            .collect()
    }

    fn final_layer_heads(&self) -> Vec<HeadId> {
        let last = self.layer_count().saturating_sub(1);
        (0..self.heads_per_layer()).map(|h| HeadId::new(last, h)).collect()
    }

    fn check_head(&self, head: HeadId) -> Result<()> {
        if head.layer >= self.layer_count() || head.head >= self.heads_per_layer() {
            return Err(Error::Validation(format!(
                "head {head} outside {}x{} model",
                self.layer_count(),
                self.heads_per_layer()
            )));
        }
        Ok(())
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }

    fn layer_count(&self) -> usize {
        (**self).layer_count()
    }

    fn heads_per_layer(&self) -> usize {
        (**self).heads_per_layer()
    }

    fn answer_logits(
        &self,
        input: &AssembledInput,
        candidates: &[Label],
        ablation: Option<HeadAblationSpec>,
    ) -> Result<Logits> {
        (**self).answer_logits(input, candidates, ablation)
    }

    fn final_layer_attention(&self, input: &AssembledInput) -> Result<Vec<AttentionMatrix>> {
        (**self).final_layer_attention(input)
    }

    fn generate(
        &self,
        input: &AssembledInput,
        steering: Option<&SteeringSpec>,
        decode: &DecodeParams,
    ) -> Result<String> {
        (**self).generate(input, steering, decode)
    }
}

/// Answer logits over all three labels.
pub fn logits_for(backend: &dyn Backend, input: &AssembledInput, ablation: Option<HeadAblationSpec>) -> Result<Logits> {
    backend.answer_logits(input, &Label::ALL, ablation)
}

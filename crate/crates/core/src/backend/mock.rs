//! Deterministic scenario-driven backend.
//!
//! Behaviour comes from two layers, checked in order:
//!
//! 1. **Scenarios** keyed by [`AssembledInput::input_hash`]: hand-set logits,
//!    per-head ablated logits, final-layer attention matrices and canned
//!    continuations for one exact prompt.
//! 2. A **synthetic model** used for any prompt without a scenario. It is a
//!    bag-of-words scorer: each listed word adds a weight vector to the answer
//!    logits, ablating a head scales the word contribution by `1 - effect`,
//!    the most effective final-layer head attends between same-group words
//!    across parts, and generation quotes spans it finds in the prompt.
//!
//! Both layers are pure functions of the prompt, so replays are bit-exact.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AttentionMatrix, Backend, DecodeParams, HeadAblationSpec, HeadId, SteeringSpec};
use crate::assemble::AssembledInput;
use crate::error::{Error, Result};
use crate::instance::PartId;
use crate::label::Label;
use crate::nle::{NEW_INSTANCE, SPAN_LIST};
use crate::tokenizer::{Tokenizer, WordTokenizer};
use crate::uncertainty::{label_distribution, Logits};

pub const DEFAULT_STEER_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default = "default_id")]
    pub backend_id: String,
    pub layers: usize,
    pub heads: usize,
    #[serde(default = "yes")]
    pub attention_access: bool,
    /// Mean steered target mass at which generation switches to the steered text.
    #[serde(default = "default_threshold")]
    pub steer_threshold: f64,
    #[serde(default)]
    pub synthetic: SyntheticModel,
    #[serde(default)]
    pub scenarios: BTreeMap<String, Scenario>,
}

fn default_id() -> String {
    "mock".to_string()
}

fn yes() -> bool {
    true
}

fn default_threshold() -> f64 {
    DEFAULT_STEER_THRESHOLD
}

impl MockFixture {
    pub fn new(layers: usize, heads: usize) -> Self {
        MockFixture {
            backend_id: default_id(),
            layers,
            heads,
            attention_access: true,
            steer_threshold: DEFAULT_STEER_THRESHOLD,
            synthetic: SyntheticModel::default(),
            scenarios: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }
}

/// Exact-prompt overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Logits>,
    /// Keyed by `"layer:head"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ablated_logits: BTreeMap<String, Logits>,
    /// One matrix per final-layer head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steered_continuation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEntry {
    /// Logit contribution in label order (Supports, Refutes, Neutral).
    pub weights: [f64; 3],
    /// Words sharing a group attend to each other across parts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEffect {
    pub head: HeadId,
    /// Fraction of the word contribution removed when this head is ablated.
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    #[serde(default)]
    pub bias: [f64; 3],
    #[serde(default)]
    pub words: BTreeMap<String, WordEntry>,
    #[serde(default)]
    pub head_effects: Vec<HeadEffect>,
    /// Unnormalized weight of a same-group partner relative to self-attention.
    #[serde(default = "default_affinity")]
    pub affinity: f64,
}

fn default_affinity() -> f64 {
    4.0
}

impl Default for SyntheticModel {
    fn default() -> Self {
        SyntheticModel {
            bias: [0.0; 3],
            words: BTreeMap::new(),
            head_effects: Vec::new(),
            affinity: default_affinity(),
        }
    }
}

impl SyntheticModel {
    fn effect(&self, head: HeadId) -> f64 {
        self.head_effects
            .iter()
            .find(|e| e.head == head)
            .map_or(0.0, |e| e.effect)
    }

    fn entry(&self, input: &AssembledInput, token: usize) -> Option<&WordEntry> {
        self.words.get(&input.word(token))
    }

    fn logits(&self, input: &AssembledInput, ablation: Option<HeadId>) -> [f64; 3] {
        let mut words = [0.0; 3];
        for r in &input.part_offsets {
            for t in r.start..r.end {
                if let Some(e) = self.entry(input, t) {
                    for (w, e) in words.iter_mut().zip(e.weights) {
                        *w += e;
                    }
                }
            }
        }
        let keep = 1.0 - ablation.map_or(0.0, |h| self.effect(h));
        std::array::from_fn(|k| self.bias[k] + keep * words[k])
    }

    fn group_attention(&self, input: &AssembledInput) -> Vec<Vec<f64>> {
        let n = input.len();
        let groups: Vec<Option<(u32, PartId)>> = (0..n)
            .map(|t| {
                let part = input.part_of(t)?;
                let g = self.entry(input, t)?.group?;
                Some((g, part))
            })
            .collect();
        (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                if let Some((g, p)) = groups[i] {
                    for (j, other) in groups.iter().enumerate() {
                        if matches!(other, Some((g2, p2)) if *g2 == g && *p2 != p) {
                            row[j] = self.affinity;
                        }
                    }
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect()
    }
}

enum Weights {
    Uniform(usize),
    Dense(Vec<Vec<f64>>),
}

/// Backend over a [`MockFixture`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    fixture: MockFixture,
    tokenizer: WordTokenizer,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        MockBackend {
            fixture,
            tokenizer: WordTokenizer,
        }
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    fn scenario(&self, input: &AssembledInput) -> Option<&Scenario> {
        if self.fixture.scenarios.is_empty() {
            return None;
        }
        self.fixture.scenarios.get(&input.input_hash())
    }

    fn raw_logits(&self, input: &AssembledInput, ablation: Option<HeadId>) -> Logits {
        if let Some(sc) = self.scenario(input) {
            if let Some(h) = ablation {
                if let Some(l) = sc.ablated_logits.get(&h.to_string()) {
                    return l.clone();
                }
            }
            if let Some(l) = &sc.logits {
                return l.clone();
            }
        }
        let v = self.fixture.synthetic.logits(input, ablation);
        Label::ALL.iter().map(|&l| (l, v[l.index()])).collect()
    }

    /// Final-layer head with the largest ablation effect; ties to the lowest index.
    fn pattern_head(&self) -> usize {
        let last = self.fixture.layers.saturating_sub(1);
        let mut best = (0, f64::NEG_INFINITY);
        for h in 0..self.fixture.heads {
            let e = self.fixture.synthetic.effect(HeadId::new(last, h));
            if e > best.1 {
                best = (h, e);
            }
        }
        best.0
    }

    fn head_weights(&self, input: &AssembledInput, head: HeadId) -> Result<Weights> {
        let last = self.fixture.layers.saturating_sub(1);
        if head.layer == last {
            if let Some(mats) = self.scenario(input).and_then(|s| s.attention.as_ref()) {
                let w = mats
                    .get(head.head)
                    .ok_or_else(|| Error::Backend(format!("scenario lacks attention for head {head}")))?;
                return Ok(Weights::Dense(w.clone()));
            }
            if head.head == self.pattern_head() {
                return Ok(Weights::Dense(self.fixture.synthetic.group_attention(input)));
            }
        }
        Ok(Weights::Uniform(input.len()))
    }

    fn head_attention(&self, input: &AssembledInput, head: HeadId) -> Result<AttentionMatrix> {
        match self.head_weights(input, head)? {
            Weights::Dense(w) => AttentionMatrix::new(head, w),
            Weights::Uniform(n) => Ok(AttentionMatrix {
                head,
                weights: vec![vec![1.0 / n as f64; n]; n],
            }),
        }
    }

    /// Mean target mass of one head before and after steering. A row with
    /// target mass `t` and remaining mass `o` keeps `t / (t + beta o)`, which
    /// is what [`crate::steering::steer_matrix`] followed by
    /// [`crate::steering::target_mass`] computes without
    /// materializing the steered matrix.
    fn steered_mass(&self, input: &AssembledInput, head: HeadId, spec: &SteeringSpec) -> Result<(f64, f64)> {
        let after = |t: f64, o: f64| {
            let z = t + spec.beta * o;
            if z > 0.0 {
                t / z
            } else {
                t
            }
        };
        Ok(match self.head_weights(input, head)? {
            Weights::Uniform(0) => (0.0, 0.0),
            Weights::Uniform(n) => {
                let k = spec.target_indices.range(..n).count() as f64;
                let n = n as f64;
                (k / n, after(k / n, (n - k) / n))
            }
            Weights::Dense(rows) => {
                if rows.is_empty() {
                    return Ok((0.0, 0.0));
                }
                let (mut before, mut steered) = (0.0, 0.0);
                for row in &rows {
                    let t: f64 = spec.target_indices.range(..row.len()).map(|&j| row[j]).sum();
                    let o = row.iter().sum::<f64>() - t;
                    before += t;
                    steered += after(t, o.max(0.0));
                }
                let n = rows.len() as f64;
                (before / n, steered / n)
            }
        })
    }

    fn steering_switches(&self, input: &AssembledInput, spec: &SteeringSpec) -> Result<bool> {
        if spec.heads.is_empty() || spec.target_indices.is_empty() {
            return Ok(false);
        }
        let (mut before, mut after) = (0.0, 0.0);
        for &h in &spec.heads {
            let (b, a) = self.steered_mass(input, h, spec)?;
            before += b;
            after += a;
        }
        let k = spec.heads.len() as f64;
        let (before, after) = (before / k, after / k);
        Ok(after >= self.fixture.steer_threshold && after > before + 1e-12)
    }

    fn synthetic_text(&self, input: &AssembledInput, steered: bool) -> String {
        let v = self.fixture.synthetic.logits(input, None);
        let logits: Logits = Label::ALL.iter().map(|&l| (l, v[l.index()])).collect();
        let prediction = label_distribution(&logits)
            .map(|d| d.argmax())
            .unwrap_or(Label::Neutral);

        let provided = provided_spans(&input.prompt_text);
        let distractors = self.distractor_pairs(input);
        let quoted: Vec<(String, String, String)> = match (provided.is_empty(), steered) {
            (true, _) => distractors,
            (false, true) => provided,
            (false, false) => provided
                .into_iter()
                .take(1)
                .chain(distractors.into_iter().take(1))
                .collect(),
        };

        let mut text = format!("[Prediction: {prediction}] [Explanation: ");
        if quoted.is_empty() {
            text.push_str("No specific span interaction stands out.");
        } else {
            text.push_str("The confidence hinges on ");
            let items: Vec<String> = quoted
                .iter()
                .map(|(a, b, rel)| format!("\"{a}\" - \"{b}\" ({rel})"))
                .collect();
            text.push_str(&items.join("; "));
            text.push('.');
        }
        text.push_str(match prediction {
            Label::Supports => " Overall the evidence supports the claim.]",
            Label::Refutes => " Overall the evidence refutes the claim.]",
            Label::Neutral => " Overall the evidence is neutral to the claim.]",
        });
        text
    }

    /// The first unlisted word of at least four letters in each part, paired
    /// claim-to-evidence. Used where the model is not pointed at spans.
    fn distractor_pairs(&self, input: &AssembledInput) -> Vec<(String, String, String)> {
        let first_plain = |part: PartId| -> Option<String> {
            let r = input.part_range(part)?;
            (r.start..r.end).map(|t| input.word(t)).find(|w| {
                w.chars().count() >= 4
                    && w.chars().all(char::is_alphabetic)
                    && !self.fixture.synthetic.words.contains_key(w)
            })
        };
        let Some(claim) = first_plain(PartId::Claim) else {
            return Vec::new();
        };
        input
            .part_offsets
            .iter()
            .filter(|r| r.part != PartId::Claim)
            .filter_map(|r| first_plain(r.part))
            .map(|w| (claim.clone(), w, "unrelated".to_string()))
            .collect()
    }
}

/// Span pairs listed after the span marker of the last new-instance block.
fn provided_spans(prompt: &str) -> Vec<(String, String, String)> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    let re = LINE.get_or_init(|| {
        Regex::new(r"(?m)^\s*\d+\.\s*''(.*?)''\s*-\s*''(.*?)''\s*\([^)]*\)\s*relation:\s*(\w+)").unwrap()
    });
    let tail = match prompt.rfind(NEW_INSTANCE) {
        Some(i) => &prompt[i..],
        None => return Vec::new(),
    };
    let Some(m) = tail.find(SPAN_LIST) else {
        return Vec::new();
    };
    re.captures_iter(&tail[m..])
        .map(|c| (c[1].to_string(), c[2].to_string(), c[3].to_string()))
        .collect()
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.fixture.backend_id
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn layer_count(&self) -> usize {
        self.fixture.layers
    }

    fn heads_per_layer(&self) -> usize {
        self.fixture.heads
    }

    fn answer_logits(
        &self,
        input: &AssembledInput,
        candidates: &[Label],
        ablation: Option<HeadAblationSpec>,
    ) -> Result<Logits> {
        if candidates.is_empty() {
            return Err(Error::Validation("no candidate labels".into()));
        }
        if let Some(a) = ablation {
            self.check_head(a.head)?;
        }
        let all = self.raw_logits(input, ablation.map(|a| a.head));
        candidates
            .iter()
            .map(|l| {
                all.get(l)
                    .map(|&v| (*l, v))
                    .ok_or_else(|| Error::Backend(format!("no logit for candidate {l}")))
            })
            .collect()
    }

    fn final_layer_attention(&self, input: &AssembledInput) -> Result<Vec<AttentionMatrix>> {
        if !self.fixture.attention_access {
            return Err(Error::Capability("final-layer attention"));
        }
        self.final_layer_heads()
            .into_iter()
            .map(|h| self.head_attention(input, h))
            .collect()
    }

    fn generate(
        &self,
        input: &AssembledInput,
        steering: Option<&SteeringSpec>,
        _decode: &DecodeParams,
    ) -> Result<String> {
        let switched = match steering {
            Some(spec) => {
                spec.validate(input.len())?;
                for &h in &spec.heads {
                    self.check_head(h)?;
                }
                self.steering_switches(input, spec)?
            }
            None => false,
        };
        let text = match self.scenario(input) {
            Some(sc) if switched && sc.steered_continuation.is_some() => sc.steered_continuation.clone(),
            Some(sc) => sc.continuation.clone(),
            None => None,
        }
        .unwrap_or_else(|| self.synthetic_text(input, switched));
        if text.trim().is_empty() {
            return Err(Error::Generation("backend produced an empty continuation".into()));
        }
        Ok(text)
    }
}

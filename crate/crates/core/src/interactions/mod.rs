//! Span interactions between input parts, read off one final-layer head.
//!
//! For each part pair the head's attention is symmetrized into a bipartite
//! cross-score matrix, Louvain splits the positively weighted tokens into
//! communities, and every community yields span pairs from its contiguous
//! runs. A span pair's importance is the mean cross score over its block.

mod louvain;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use louvain::{louvain, modularity, WeightedGraph};

use crate::assemble::{find_range, AssembledInput, PartRange, PartSpan};
use crate::backend::{logits_for, AttentionMatrix, Backend, HeadAblationSpec, HeadId};
use crate::error::{Error, Result};
use crate::instance::{PartId, PartPair};
use crate::relations::RelationLabel;
use crate::uncertainty::label_distribution;

pub const LOUVAIN_RESOLUTION: f64 = 1.0;

/// Top-k for two-evidence inputs.
pub const DEFAULT_TOP_K: usize = 3;

/// Symmetrized attention between the tokens of two parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossScores {
    pub pair: PartPair,
    pub from: PartRange,
    pub to: PartRange,
    /// `scores[p][q]` for the `p`-th token of `from` and `q`-th of `to`.
    pub scores: Vec<Vec<f64>>,
}

impl CrossScores {
    /// Builds scores over explicit ranges. Rows follow `from`, columns `to`.
    pub fn new(pair: PartPair, from: PartRange, to: PartRange, scores: Vec<Vec<f64>>) -> Result<Self> {
        if from.part != pair.from || to.part != pair.to {
            return Err(Error::Validation(format!("ranges do not match pair {pair}")));
        }
        if scores.len() != from.len() || scores.iter().any(|r| r.len() != to.len()) {
            return Err(Error::Validation(format!(
                "cross scores must be {}x{}",
                from.len(),
                to.len()
            )));
        }
        if scores.iter().flatten().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(Error::Validation("cross scores must be finite and non-negative".into()));
        }
        Ok(CrossScores { pair, from, to, scores })
    }

    /// Score between absolute token indices `p` (in `from`) and `q` (in `to`).
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.scores[p - self.from.start][q - self.to.start]
    }

    pub fn is_all_zero(&self) -> bool {
        self.scores.iter().flatten().all(|&s| s == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanInteraction {
    pub pair: PartPair,
    pub span_a: PartSpan,
    pub span_b: PartSpan,
    pub importance: f64,
    pub relation: Option<RelationLabel>,
    /// Set when the relation is a fallback after labeler failure.
    #[serde(default)]
    pub flagged: bool,
}

impl SpanInteraction {
    fn key(&self) -> (PartPair, usize, usize, usize, usize) {
        (
            self.pair,
            self.span_a.start,
            self.span_a.end,
            self.span_b.start,
            self.span_b.end,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionSet {
    pub interactions: Vec<SpanInteraction>,
    /// Part layout of the prompt the token indices refer to.
    pub source_offsets: Vec<PartRange>,
}

impl InteractionSet {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SpanInteraction> {
        self.interactions.iter()
    }

    /// Moves every span onto the layout of another prompt built from the same instance.
    pub fn rebase(&self, to: &AssembledInput) -> Result<InteractionSet> {
        let interactions = self
            .interactions
            .iter()
            .map(|it| {
                Ok(SpanInteraction {
                    span_a: it.span_a.rebase(&self.source_offsets, to)?,
                    span_b: it.span_b.rebase(&self.source_offsets, to)?,
                    ..it.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(InteractionSet {
            interactions,
            source_offsets: to.part_offsets.clone(),
        })
    }
}

/// Final-layer head whose zero-ablation moves the predicted label's
/// probability the most. Ties go to the lowest head index.
pub fn select_answer_head(backend: &dyn Backend, input: &AssembledInput) -> Result<HeadId> {
    let base = label_distribution(&logits_for(backend, input, None)?)?;
    let predicted = base.argmax();
    let p0 = base.prob(predicted);
    let mut best: Option<(HeadId, f64)> = None;
    for head in backend.final_layer_heads() {
        let ablated = label_distribution(&logits_for(backend, input, Some(HeadAblationSpec { head }))?)?;
        let delta = (p0 - ablated.prob(predicted)).abs();
        if best.is_none_or(|(_, d)| delta > d) {
            best = Some((head, delta));
        }
    }
    best.map(|(h, _)| h)
        .ok_or(Error::Capability("a final layer with at least one head"))
}

/// `scores[p][q] = (A[p][q] + A[q][p]) / 2` over the pair's cross block.
pub fn symmetrize(attention: &AttentionMatrix, pair: PartPair, offsets: &[PartRange]) -> Result<CrossScores> {
    let range = |part: PartId| -> Result<PartRange> {
        let r = find_range(offsets, part).ok_or_else(|| Error::Validation(format!("no offsets for part {part}")))?;
        if r.is_empty() {
            return Err(Error::Validation(format!("part {part} has an empty token range")));
        }
        if r.end > attention.dim() {
            return Err(Error::Validation(format!(
                "part {part} range ends at {} beyond a {}-token matrix",
                r.end,
                attention.dim()
            )));
        }
        Ok(r)
    };
    let (from, to) = (range(pair.from)?, range(pair.to)?);
    let scores = (from.start..from.end)
        .map(|p| {
            (to.start..to.end)
                .map(|q| 0.5 * (attention.get(p, q) + attention.get(q, p)))
                .collect()
        })
        .collect();
    Ok(CrossScores { pair, from, to, scores })
}

/// Louvain communities over the bipartite graph of positive cross scores.
/// Each community is a set of absolute token indices; tokens without any
/// positive edge are left out. Communities are ordered by lowest token.
pub fn detect_communities(scores: &CrossScores, seed: u64) -> Vec<BTreeSet<usize>> {
    let (nf, nt) = (scores.from.len(), scores.to.len());
    let mut graph = WeightedGraph::new(nf + nt);
    for (p, row) in scores.scores.iter().enumerate() {
        for (q, &w) in row.iter().enumerate() {
            graph.add_edge(p, nf + q, w);
        }
    }
    if graph.total_weight() <= 0.0 {
        return Vec::new();
    }
    let membership = louvain(&graph, LOUVAIN_RESOLUTION, seed);
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (node, &c) in membership.iter().enumerate() {
        if graph.degree(node) <= 0.0 {
            continue;
        }
        let token = if node < nf {
            scores.from.start + node
        } else {
            scores.to.start + node - nf
        };
        groups.entry(c).or_default().insert(token);
    }
    let mut out: Vec<BTreeSet<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g.first().copied());
    out
}

/// Maximal runs of consecutive indices, as `[start, end)`.
fn runs(tokens: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for t in tokens {
        match out.last_mut() {
            Some((_, end)) if *end == t => *end += 1,
            _ => out.push((t, t + 1)),
        }
    }
    out
}

/// Span pairs of one community: the cross product of its contiguous runs in
/// the pair's first part with those in the second. One-sided communities give none.
pub fn communities_to_spans(
    community: &BTreeSet<usize>,
    pair: PartPair,
    input: &AssembledInput,
) -> Result<Vec<(PartSpan, PartSpan)>> {
    let range = |part| {
        input
            .part_range(part)
            .ok_or_else(|| Error::Validation(format!("no part {part} in prompt")))
    };
    let (from, to) = (range(pair.from)?, range(pair.to)?);
    let side_a = runs(community.iter().copied().filter(|&t| from.contains(t)));
    let side_b = runs(community.iter().copied().filter(|&t| to.contains(t)));
    let mut out = Vec::with_capacity(side_a.len() * side_b.len());
    for &(a0, a1) in &side_a {
        for &(b0, b1) in &side_b {
            out.push((input.span(pair.from, a0, a1)?, input.span(pair.to, b0, b1)?));
        }
    }
    Ok(out)
}

/// Mean cross score over `span_a × span_b`.
pub fn span_importance(scores: &CrossScores, span_a: &PartSpan, span_b: &PartSpan) -> Result<f64> {
    for (span, range) in [(span_a, &scores.from), (span_b, &scores.to)] {
        if span.is_empty() {
            return Err(Error::Validation(format!("empty span in part {}", span.part)));
        }
        if span.part != range.part || span.start < range.start || span.end > range.end {
            return Err(Error::Validation(format!(
                "span {}[{}, {}) outside part {} range [{}, {})",
                span.part, span.start, span.end, range.part, range.start, range.end
            )));
        }
    }
    let mut sum = 0.0;
    for p in span_a.indices() {
        for q in span_b.indices() {
            sum += scores.get(p, q);
        }
    }
    Ok(sum / (span_a.len() * span_b.len()) as f64)
}

/// Unordered part pairs in prompt order: claim pairs first, then evidence pairs.
pub fn part_pairs_of(offsets: &[PartRange]) -> Vec<PartPair> {
    let mut parts: Vec<PartId> = offsets.iter().map(|r| r.part).collect();
    parts.sort();
    let mut out = Vec::new();
    for (i, &a) in parts.iter().enumerate() {
        for &b in &parts[i + 1..] {
            out.push(PartPair { from: a, to: b });
        }
    }
    out
}

/// Interactions of one pair given its cross scores. Duplicates keep the max importance.
pub fn pair_interactions(scores: &CrossScores, input: &AssembledInput, seed: u64) -> Result<Vec<SpanInteraction>> {
    let mut out: Vec<SpanInteraction> = Vec::new();
    let mut seen: BTreeMap<(PartPair, usize, usize, usize, usize), usize> = BTreeMap::new();
    for community in detect_communities(scores, seed) {
        for (span_a, span_b) in communities_to_spans(&community, scores.pair, input)? {
            let importance = span_importance(scores, &span_a, &span_b)?;
            let it = SpanInteraction {
                pair: scores.pair,
                span_a,
                span_b,
                importance,
                relation: None,
                flagged: false,
            };
            match seen.get(&it.key()) {
                Some(&i) => out[i].importance = out[i].importance.max(importance),
                None => {
                    seen.insert(it.key(), out.len());
                    out.push(it);
                }
            }
        }
    }
    Ok(out)
}

/// Interactions across every part pair, read from the answer head.
pub fn extract_interactions(backend: &dyn Backend, input: &AssembledInput, seed: u64) -> Result<InteractionSet> {
    let evidence = input
        .part_offsets
        .iter()
        .filter(|r| matches!(r.part, PartId::Evidence(_)))
        .count();
    if evidence < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 evidence parts, found {evidence}"
        )));
    }
    let head = select_answer_head(backend, input)?;
    let matrices = backend.final_layer_attention(input)?;
    let attention = matrices
        .iter()
        .find(|m| m.head == head)
        .ok_or_else(|| Error::Backend(format!("no attention returned for head {head}")))?;
    if attention.dim() != input.len() {
        return Err(Error::Backend(format!(
            "attention is {0}x{0} for a {1}-token prompt",
            attention.dim(),
            input.len()
        )));
    }
    let mut interactions = Vec::new();
    for pair in part_pairs_of(&input.part_offsets) {
        let scores = symmetrize(attention, pair, &input.part_offsets)?;
        interactions.extend(pair_interactions(&scores, input, seed)?);
    }
    Ok(InteractionSet {
        interactions,
        source_offsets: input.part_offsets.clone(),
    })
}

fn ranked(interactions: &mut [SpanInteraction]) {
    interactions.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then_with(|| a.pair.cmp(&b.pair))
            .then_with(|| a.span_a.start.cmp(&b.span_a.start))
            .then_with(|| a.span_b.start.cmp(&b.span_b.start))
            .then_with(|| a.key().cmp(&b.key()))
    });
}

/// The `k` most important interactions, highest first.
pub fn top_k(set: &InteractionSet, k: usize) -> InteractionSet {
    let mut interactions = set.interactions.clone();
    ranked(&mut interactions);
    interactions.truncate(k);
    InteractionSet {
        interactions,
        source_offsets: set.source_offsets.clone(),
    }
}

/// Interactions placed in the span prompt: the global top three for two
/// evidence passages, otherwise the best interaction of each part pair.
pub fn select_for_prompt(set: &InteractionSet, evidence_count: usize) -> InteractionSet {
    if evidence_count <= 2 {
        return top_k(set, DEFAULT_TOP_K);
    }
    let mut best: BTreeMap<PartPair, SpanInteraction> = BTreeMap::new();
    let mut sorted = set.interactions.clone();
    ranked(&mut sorted);
    for it in sorted {
        best.entry(it.pair).or_insert(it);
    }
    let mut interactions: Vec<_> = best.into_values().collect();
    ranked(&mut interactions);
    InteractionSet {
        interactions,
        source_offsets: set.source_offsets.clone(),
    }
}

/// Cached extraction result for one instance and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionDump {
    pub instance_id: String,
    pub seed: u64,
    pub head: Option<HeadId>,
    pub set: InteractionSet,
}

impl InteractionDump {
    pub fn path(dir: &Path, instance_id: &str, seed: u64) -> PathBuf {
        let safe: String = instance_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let tag = &crate::assemble::hash_text(instance_id)[..8];
        dir.join(format!("interactions-{safe}-{tag}-{seed}.json"))
    }

    pub fn load(dir: &Path, instance_id: &str, seed: u64) -> Result<Option<Self>> {
        let path = Self::path(dir, instance_id, seed);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::file(path, e)),
        }
    }

    pub fn store(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = Self::path(dir, &self.instance_id, self.seed);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }
}

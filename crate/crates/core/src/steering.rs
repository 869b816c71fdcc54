//! Uncertainty-driven head ranking and span-targeted attention reweighting.
//!
//! Heads are ranked by the mean absolute entropy change their zero-ablation
//! causes over a validation sample. During generation the top heads have
//! their attention to non-target tokens scaled by `beta` and each row
//! renormalized:
//!
//! ```text
//! Ã[i][j] = A[i][j] / Z[i]          for j in targets
//! Ã[i][j] = beta * A[i][j] / Z[i]   otherwise
//! Z[i]    = Σ_{j∈targets} A[i][j] + beta * Σ_{j∉targets} A[i][j]
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_input, PromptTemplate};
use crate::backend::{logits_for, AttentionMatrix, Backend, HeadAblationSpec, HeadId, SteeringSpec};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::interactions::InteractionSet;
use crate::uncertainty::{absolute_entropy_change, uncertainty_of};

/// Validation sample size used when ranking heads.
pub const DEFAULT_SAMPLE_SIZE: usize = 300;
/// Number of heads steered during generation.
pub const DEFAULT_HEAD_COUNT: usize = 100;
pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRanking {
    /// Descending by impact; ties in (layer, head) order.
    pub entries: Vec<(HeadId, f64)>,
}

impl HeadRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        self.entries.iter().map(|(h, _)| *h)
    }
}

/// Cache key and payload for a stored ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingCacheEntry {
    pub dataset_id: String,
    pub backend_id: String,
    pub sample_size: usize,
    pub seed: u64,
    pub ranking: HeadRanking,
}

impl RankingCacheEntry {
    pub fn file_name(dataset_id: &str, backend_id: &str, sample_size: usize, seed: u64) -> String {
        let key = crate::assemble::hash_text(&format!("{dataset_id}\u{0}{backend_id}\u{0}{sample_size}\u{0}{seed}"));
        format!("head-ranking-{}.json", &key[..16])
    }

    /// Loads a cached ranking if one exists for exactly this key.
    pub fn load(
        dir: &Path,
        dataset_id: &str,
        backend_id: &str,
        sample_size: usize,
        seed: u64,
    ) -> Result<Option<HeadRanking>> {
        let path = dir.join(Self::file_name(dataset_id, backend_id, sample_size, seed));
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let entry: RankingCacheEntry = serde_json::from_str(&text)?;
        let matches = entry.dataset_id == dataset_id
            && entry.backend_id == backend_id
            && entry.sample_size == sample_size
            && entry.seed == seed;
        Ok(matches.then_some(entry.ranking))
    }

    pub fn store(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join(Self::file_name(
            &self.dataset_id,
            &self.backend_id,
            self.sample_size,
            self.seed,
        ));
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(&path, e))
    }
}

/// Ranks every head of every layer by mean `|u(X) - u_ablated(X)|` over a
/// seeded sample of at most `sample_size` validation instances.
pub fn rank_heads(
    backend: &dyn Backend,
    validation: &[Instance],
    sample_size: usize,
    seed: u64,
) -> Result<HeadRanking> {
    if validation.is_empty() {
        return Err(Error::Validation("head ranking needs validation instances".into()));
    }
    if sample_size == 0 {
        return Err(Error::Validation("sample size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..validation.len()).collect();
    if sample_size < validation.len() {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(sample_size);
        order.sort_unstable();
    }

    let heads = backend.all_heads();
    let mut totals = vec![0.0; heads.len()];
    for &idx in &order {
        let inst = &validation[idx];
        let input = assemble_input(inst, backend.tokenizer(), &PromptTemplate::scoring(inst), None)?;
        let base = uncertainty_of(&logits_for(backend, &input, None)?)?;
        for (k, &head) in heads.iter().enumerate() {
            let ablated = uncertainty_of(&logits_for(backend, &input, Some(HeadAblationSpec { head }))?)?;
            totals[k] += absolute_entropy_change(base, ablated);
        }
    }
    let n = order.len() as f64;
    let mut entries: Vec<(HeadId, f64)> = heads.into_iter().zip(totals.into_iter().map(|t| t / n)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(HeadRanking { entries })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetIndexSet {
    pub indices: BTreeSet<usize>,
}

/// Every token index inside either span of any selected interaction.
pub fn target_indices(selected: &InteractionSet) -> Result<TargetIndexSet> {
    if selected.is_empty() {
        return Err(Error::Validation("no interactions selected for steering".into()));
    }
    let indices = selected
        .iter()
        .flat_map(|it| it.span_a.indices().chain(it.span_b.indices()))
        .collect();
    Ok(TargetIndexSet { indices })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("beta must lie in (0, 1], got {beta}")))
    }
}

/// Reweights one row in place. A row with zero total mass is left untouched.
pub fn steer_row(row: &mut [f64], targets: &BTreeSet<usize>, beta: f64) {
    let z: f64 = row
        .iter()
        .enumerate()
        .map(|(j, &a)| if targets.contains(&j) { a } else { beta * a })
        .sum();
    if z <= 0.0 {
        return;
    }
    for (j, a) in row.iter_mut().enumerate() {
        let scale = if targets.contains(&j) { 1.0 } else { beta };
        *a = scale * *a / z;
    }
}

pub fn steer_matrix(a: &AttentionMatrix, targets: &TargetIndexSet, beta: f64) -> Result<AttentionMatrix> {
    check_beta(beta)?;
    let mut weights = a.weights.clone();
    if beta < 1.0 {
        for row in &mut weights {
            steer_row(row, &targets.indices, beta);
        }
    }
    Ok(AttentionMatrix { head: a.head, weights })
}

/// Mean over rows of the attention mass falling on `targets`.
pub fn target_mass(a: &AttentionMatrix, targets: &BTreeSet<usize>) -> f64 {
    if a.dim() == 0 {
        return 0.0;
    }
    let total: f64 = a
        .weights
        .iter()
        .map(|row| targets.iter().filter(|&&j| j < row.len()).map(|&j| row[j]).sum::<f64>())
        .sum();
    total / a.dim() as f64
}

/// Top `head_count` heads of the ranking plus the targets; clipped with a
/// warning when the ranking is shorter.
pub fn steering_spec(
    ranking: &HeadRanking,
    targets: &TargetIndexSet,
    head_count: usize,
    beta: f64,
) -> Result<SteeringSpec> {
    check_beta(beta)?;
    if head_count > ranking.len() {
        log::warn!(
            "requested {head_count} steered heads but only {} are ranked; steering all of them",
            ranking.len()
        );
    }
    Ok(SteeringSpec {
        heads: ranking.heads().take(head_count).collect(),
        target_indices: targets.indices.clone(),
        beta,
    })
}

/// Ranked heads plus steering strength, resolved per prompt into a [`SteeringSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub ranking: HeadRanking,
    pub head_count: usize,
    pub beta: f64,
}

impl SteeringPlan {
    pub fn new(ranking: HeadRanking, head_count: usize, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if head_count == 0 {
            return Err(Error::Validation("steering needs at least one head".into()));
        }
        Ok(SteeringPlan {
            ranking,
            head_count,
            beta,
        })
    }

    /// Spec targeting `selected`, whose token indices must refer to the prompt being steered.
    pub fn spec_for(&self, selected: &InteractionSet) -> Result<SteeringSpec> {
        steering_spec(&self.ranking, &target_indices(selected)?, self.head_count, self.beta)
    }
}

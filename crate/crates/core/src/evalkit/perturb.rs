//! Counterfactual modifier insertion.
//!
//! Four noun or verb sites are drawn across the claim and evidence; each
//! gets three modifiers from the matching pool (adjectives before nouns,
//! adverbs before verbs), giving twelve perturbed copies of the instance.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_input, PromptTemplate};
use crate::backend::{logits_for, Backend};
use crate::error::{Error, Result};
use crate::instance::{Instance, PartId};
use crate::uncertainty::{absolute_entropy_change, uncertainty_of, UncertaintyScore};

pub const SITES_PER_INSTANCE: usize = 4;
pub const MODIFIERS_PER_SITE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Other,
}

pub trait PosTagger: Send + Sync {
    /// One tag per word.
    fn tag(&self, words: &[&str]) -> Vec<PosTag>;
}

/// Case-insensitive word table; unknown words are [`PosTag::Other`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LookupTagger {
    table: HashMap<String, PosTag>,
}

impl LookupTagger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, tag: PosTag) {
        self.table.insert(word.to_lowercase(), tag);
    }

    /// Tab-separated `word<TAB>NOUN|VERB` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = LookupTagger::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(word), Some(tag), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(i, "expected `word<TAB>tag`"));
            };
            let tag = match tag.trim().to_ascii_uppercase().as_str() {
                "NOUN" => PosTag::Noun,
                "VERB" => PosTag::Verb,
                "OTHER" => PosTag::Other,
                other => return Err(Error::parse(i, format!("unknown tag {other:?}"))),
            };
            t.insert(word.trim(), tag);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    /// Small built-in table of common nouns and verbs.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/pos_lexicon.tsv")).expect("bundled table parses")
    }
}

impl PosTagger for LookupTagger {
    fn tag(&self, words: &[&str]) -> Vec<PosTag> {
        words
            .iter()
            .map(|w| self.table.get(&w.to_lowercase()).copied().unwrap_or(PosTag::Other))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifierLexicon {
    adjectives: Vec<String>,
    adverbs: Vec<String>,
}

impl ModifierLexicon {
    /// Lowercases, sorts and deduplicates both pools; neither may end up empty.
    pub fn new(
        adjectives: impl IntoIterator<Item = String>,
        adverbs: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let clean = |words: Vec<String>, what: &str| -> Result<Vec<String>> {
            let mut w: Vec<String> = words
                .into_iter()
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            w.sort();
            w.dedup();
            if w.is_empty() {
                return Err(Error::Validation(format!("{what} list is empty")));
            }
            if let Some(bad) = w.iter().find(|s| s.chars().any(char::is_whitespace)) {
                return Err(Error::Validation(format!("{what} entry {bad:?} is not a single word")));
            }
            Ok(w)
        };
        Ok(ModifierLexicon {
            adjectives: clean(adjectives.into_iter().collect(), "adjective")?,
            adverbs: clean(adverbs.into_iter().collect(), "adverb")?,
        })
    }

    /// Reads `adjectives.txt` and `adverbs.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<String>> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
            Ok(text.lines().map(str::to_string).collect())
        };
        Self::new(read("adjectives.txt")?, read("adverbs.txt")?)
    }

    pub fn builtin() -> Self {
        let lines = |s: &str| s.lines().map(str::to_string).collect::<Vec<_>>();
        Self::new(
            lines(include_str!("../../data/adjectives.txt")),
            lines(include_str!("../../data/adverbs.txt")),
        )
        .expect("bundled lexicon is valid")
    }

    pub fn adjectives(&self) -> &[String] {
        &self.adjectives
    }

    pub fn adverbs(&self) -> &[String] {
        &self.adverbs
    }

    fn pool(&self, tag: PosTag) -> &[String] {
        match tag {
            PosTag::Noun => &self.adjectives,
            PosTag::Verb => &self.adverbs,
            PosTag::Other => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub instance_id: String,
    pub part: PartId,
    /// Index of the modified word within its part.
    pub site: usize,
    pub tag: PosTag,
    pub inserted: String,
    /// Byte offset of the inserted word in the perturbed part text.
    pub offset: usize,
    pub perturbed_instance: Instance,
    pub delta_u: Option<f64>,
    pub mention: Option<bool>,
}

impl Perturbation {
    /// The original instance, recovered by deleting the inserted word and its trailing space.
    pub fn restore(&self) -> Result<Instance> {
        let mut out = self.perturbed_instance.clone();
        let text = out
            .part_text_mut(self.part)
            .ok_or_else(|| Error::Validation(format!("perturbation names missing part {}", self.part)))?;
        let end = self.offset + self.inserted.len() + 1;
        if text.get(self.offset..end) != Some(&format!("{} ", self.inserted)) {
            return Err(Error::Validation(format!(
                "perturbed text has no {:?} at byte {}",
                self.inserted, self.offset
            )));
        }
        text.replace_range(self.offset..end, "");
        Ok(out)
    }
}

/// Words of a text with their byte offsets.
pub(crate) fn words(text: &str) -> Vec<(usize, &str)> {
    static WORD: OnceLock<Regex> = OnceLock::new();
    let re = WORD.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:['’][\p{L}]+)*").unwrap());
    re.find_iter(text).map(|m| (m.start(), m.as_str())).collect()
}

struct Site {
    part: PartId,
    word: usize,
    offset: usize,
    tag: PosTag,
}

/// Twelve perturbations for instances with at least four noun or verb sites;
/// three per available site otherwise. Deterministic for a fixed seed.
pub fn generate_perturbations(
    instance: &Instance,
    tagger: &dyn PosTagger,
    lexicon: &ModifierLexicon,
    seed: u64,
) -> Vec<Perturbation> {
    let mut sites = Vec::new();
    for part in instance.parts() {
        let text = instance.part_text(part).unwrap_or_default();
        let ws = words(text);
        let surface: Vec<&str> = ws.iter().map(|&(_, w)| w).collect();
        for (i, tag) in tagger.tag(&surface).into_iter().enumerate() {
            if tag != PosTag::Other {
                sites.push(Site {
                    part,
                    word: i,
                    offset: ws[i].0,
                    tag,
                });
            }
        }
    }
    if sites.len() < SITES_PER_INSTANCE {
        log::warn!(
            "instance {} has {} eligible sites; producing {} perturbations",
            instance.id,
            sites.len(),
            sites.len() * MODIFIERS_PER_SITE
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<&Site> = sites.choose_multiple(&mut rng, SITES_PER_INSTANCE).collect();
    chosen.sort_by_key(|s| (s.part, s.word));

    let mut out = Vec::with_capacity(chosen.len() * MODIFIERS_PER_SITE);
    for site in chosen {
        let pool = lexicon.pool(site.tag);
        for word in pool.choose_multiple(&mut rng, MODIFIERS_PER_SITE) {
            let mut perturbed = instance.clone();
            if let Some(text) = perturbed.part_text_mut(site.part) {
                text.insert_str(site.offset, &format!("{word} "));
            }
            out.push(Perturbation {
                instance_id: instance.id.clone(),
                part: site.part,
                site: site.word,
                tag: site.tag,
                inserted: word.clone(),
                offset: site.offset,
                perturbed_instance: perturbed,
                delta_u: None,
                mention: None,
            });
        }
    }
    out
}

/// Fills `delta_u` from the scoring prompt of the perturbed instance.
/// `Ok(None)` when the perturbed prompt no longer fits `max_tokens`.
pub fn score_perturbation(
    backend: &dyn Backend,
    original_u: UncertaintyScore,
    perturbation: &Perturbation,
    max_tokens: Option<usize>,
) -> Result<Option<Perturbation>> {
    let inst = &perturbation.perturbed_instance;
    let input = match assemble_input(inst, backend.tokenizer(), &PromptTemplate::scoring(inst), max_tokens) {
        Ok(i) => i,
        Err(e @ Error::Truncation { .. }) => {
            log::warn!(
                "dropping perturbation {:?} of {}: {e}",
                perturbation.inserted,
                perturbation.instance_id
            );
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let u = uncertainty_of(&logits_for(backend, &input, None)?)?;
    Ok(Some(Perturbation {
        delta_u: Some(absolute_entropy_change(original_u, u)),
        ..perturbation.clone()
    }))
}

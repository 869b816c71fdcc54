//! Word mentions and span-pair coverage in explanation text.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::InteractionSet;
use crate::nle::NLEOutput;

/// Whether `word` occurs in the explanation as a whole word, ignoring case.
pub fn mention_flag(nle: &NLEOutput, word: &str) -> bool {
    contains_phrase(&nle.explanation, word)
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Case- and whitespace-insensitive phrase search. Where the phrase starts
/// or ends with a word character, the neighbouring character must not be one.
pub fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let needle = normalize(phrase);
    if needle.is_empty() {
        return false;
    }
    let hay = normalize(haystack);
    let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let first_is_word = word(needle.chars().next());
    let last_is_word = word(needle.chars().next_back());
    let mut from = 0;
    while let Some(i) = hay[from..].find(&needle) {
        let start = from + i;
        let end = start + needle.len();
        let before_ok = !first_is_word || !word(hay[..start].chars().next_back());
        let after_ok = !last_is_word || !word(hay[end..].chars().next());
        if before_ok && after_ok {
            return true;
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Quoted `"A" - "B"` pairs in free text. Straight, doubled-single and curly quotes are accepted.
pub fn quoted_pairs(text: &str) -> Vec<(String, String)> {
    static PAIR: OnceLock<Regex> = OnceLock::new();
    let re = PAIR.get_or_init(|| {
        let quoted = |n: &str| format!(r#"(?:"(?P<{n}1>[^"]+)"|''(?P<{n}2>.+?)''|“(?P<{n}3>[^”]+)”)"#);
        Regex::new(&format!(r"{}\s*[-–]\s*{}", quoted("a"), quoted("b"))).unwrap()
    });
    re.captures_iter(text)
        .map(|c| {
            let side = |n: &str| {
                (1..=3)
                    .find_map(|k| c.name(&format!("{n}{k}")))
                    .map_or("", |m| m.as_str())
                    .trim()
                    .to_string()
            };
            (side("a"), side("b"))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMentions {
    /// Indices into the reference set, ascending.
    pub mentioned: Vec<usize>,
    /// Quoted pairs matching no reference interaction, deduplicated.
    pub extraneous: Vec<(String, String)>,
}

/// A reference interaction is mentioned when both span texts appear in the
/// explanation. Quoted pairs that match no reference pair in either order
/// are extraneous.
pub fn extract_mentioned_spans(nle: &NLEOutput, reference: &InteractionSet) -> SpanMentions {
    let text = &nle.explanation;
    let mentioned = reference
        .iter()
        .enumerate()
        .filter(|(_, it)| contains_phrase(text, &it.span_a.text) && contains_phrase(text, &it.span_b.text))
        .map(|(i, _)| i)
        .collect();
    let known: BTreeSet<(String, String)> = reference
        .iter()
        .flat_map(|it| {
            let (a, b) = (normalize(&it.span_a.text), normalize(&it.span_b.text));
            [(a.clone(), b.clone()), (b, a)]
        })
        .collect();
    let mut seen = BTreeSet::new();
    let mut extraneous = Vec::new();
    for (a, b) in quoted_pairs(text) {
        let key = (normalize(&a), normalize(&b));
        if !known.contains(&key) && seen.insert(key) {
            extraneous.push((a, b));
        }
    }
    SpanMentions { mentioned, extraneous }
}

pub fn span_coverage(mentioned: usize, reference_size: usize) -> Result<f64> {
    if reference_size == 0 {
        return Err(Error::Validation(
            "span coverage needs a non-empty reference set".into(),
        ));
    }
    if mentioned > reference_size {
        return Err(Error::Validation(format!(
            "{mentioned} mentioned of only {reference_size}"
        )));
    }
    Ok(mentioned as f64 / reference_size as f64)
}

/// Share of extraneous pairs among all mentioned pairs; 0 when nothing is mentioned.
pub fn span_extraneous(extraneous: usize, total_mentioned_pairs: usize) -> f64 {
    if total_mentioned_pairs == 0 {
        0.0
    } else {
        extraneous as f64 / total_mentioned_pairs as f64
    }
}

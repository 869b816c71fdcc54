//! Part-aware prompt assembly.
//!
//! A [`PromptTemplate`] is a sequence of literal text and part placeholders.
//! Assembly renders it for an instance, tokenizes the whole prompt once and
//! maps each part's byte range onto a token range. A part whose boundary
//! falls inside a token is an error; offsets downstream must be exact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::instance::{Instance, PartId};
use crate::tokenizer::{Token, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Text(String),
    Part(PartId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, s: impl Into<String>) -> Self {
        let s = s.into();
        if s.is_empty() {
            return self;
        }
        if let Some(Segment::Text(last)) = self.segments.last_mut() {
            last.push_str(&s);
        } else {
            self.segments.push(Segment::Text(s));
        }
        self
    }

    pub fn part(mut self, part: PartId) -> Self {
        self.segments.push(Segment::Part(part));
        self
    }

    /// `Claim: …` / `Evidence i: …` lines followed by an answer cue.
    pub fn scoring(instance: &Instance) -> Self {
        let mut t = PromptTemplate::new().text("Claim: ").part(PartId::Claim);
        for i in 0..instance.evidence.len() {
            t = t.text(format!("\nEvidence {}: ", i + 1)).part(PartId::Evidence(i));
        }
        t.text("\nAnswer (Supports, Refutes or Neutral):")
    }

    /// Parts joined by `separator` with no other text.
    pub fn concatenation(instance: &Instance, separator: &str) -> Self {
        let mut t = PromptTemplate::new();
        for (i, part) in instance.parts().into_iter().enumerate() {
            if i > 0 {
                t = t.text(separator);
            }
            t = t.part(part);
        }
        t
    }

    /// Renders the prompt and returns the byte range of every part placeholder.
    pub fn render(&self, instance: &Instance) -> Result<(String, Vec<ByteRange>)> {
        let mut out = String::new();
        let mut ranges = Vec::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(s) => out.push_str(s),
                Segment::Part(p) => {
                    if ranges.iter().any(|(q, _, _)| q == p) {
                        return Err(Error::Assembly(format!("part {p} placed twice")));
                    }
                    let text = instance
                        .part_text(*p)
                        .ok_or_else(|| Error::Assembly(format!("instance {} has no part {p}", instance.id)))?;
                    let start = out.len();
                    out.push_str(text);
                    ranges.push((*p, start, out.len()));
                }
            }
        }
        Ok((out, ranges))
    }

    pub fn render_text(&self, instance: &Instance) -> Result<String> {
        self.render(instance).map(|(s, _)| s)
    }
}

/// Byte range `[start, end)` of one part in rendered prompt text.
pub type ByteRange = (PartId, usize, usize);

/// Token range `[start, end)` of one part in an assembled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRange {
    pub part: PartId,
    pub start: usize,
    pub end: usize,
}

impl PartRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, token: usize) -> bool {
        (self.start..self.end).contains(&token)
    }
}

/// Looks up a part's range in an offset table.
pub fn find_range(ranges: &[PartRange], part: PartId) -> Option<PartRange> {
    ranges.iter().find(|r| r.part == part).copied()
}

/// A contiguous token span inside one part.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartSpan {
    pub part: PartId,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl PartSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    /// Moves the span to the same part-relative position in another prompt
    /// assembled from the same instance. The detokenized text must agree.
    pub fn rebase(&self, from: &[PartRange], to: &AssembledInput) -> Result<PartSpan> {
        let src = find_range(from, self.part)
            .ok_or_else(|| Error::Assembly(format!("source layout lacks part {}", self.part)))?;
        let dst = to
            .part_range(self.part)
            .ok_or_else(|| Error::Assembly(format!("target prompt lacks part {}", self.part)))?;
        if self.start < src.start || self.end > src.end {
            return Err(Error::Assembly(format!(
                "span [{}, {}) outside part {} range [{}, {})",
                self.start, self.end, self.part, src.start, src.end
            )));
        }
        let start = dst.start + (self.start - src.start);
        let end = dst.start + (self.end - src.start);
        if end > dst.end {
            return Err(Error::Assembly(format!(
                "part {} tokenizes differently in target prompt",
                self.part
            )));
        }
        let rebased = to.span(self.part, start, end)?;
        if rebased.text != self.text {
            return Err(Error::Assembly(format!(
                "rebased span text {:?} differs from {:?}",
                rebased.text, self.text
            )));
        }
        Ok(rebased)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledInput {
    pub prompt_text: String,
    pub token_ids: Vec<u32>,
    pub tokens: Vec<Token>,
    /// Claim first, then evidence in order; disjoint.
    pub part_offsets: Vec<PartRange>,
}

impl AssembledInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn part_range(&self, part: PartId) -> Option<PartRange> {
        find_range(&self.part_offsets, part)
    }

    pub fn part_of(&self, token: usize) -> Option<PartId> {
        self.part_offsets.iter().find(|r| r.contains(token)).map(|r| r.part)
    }

    /// Visible text of tokens `[start, end)`, without the first token's leading whitespace.
    pub fn detokenize(&self, start: usize, end: usize) -> String {
        if start >= end || end > self.tokens.len() {
            return String::new();
        }
        self.prompt_text[self.tokens[start].core_start..self.tokens[end - 1].end].to_string()
    }

    /// Lowercased visible text of one token.
    pub fn word(&self, token: usize) -> String {
        self.tokens[token].core(&self.prompt_text).to_lowercase()
    }

    pub fn span(&self, part: PartId, start: usize, end: usize) -> Result<PartSpan> {
        let range = self
            .part_range(part)
            .ok_or_else(|| Error::Validation(format!("no part {part} in prompt")))?;
        if start >= end || start < range.start || end > range.end {
            return Err(Error::Validation(format!(
                "span [{start}, {end}) not inside part {part} range [{}, {})",
                range.start, range.end
            )));
        }
        Ok(PartSpan {
            part,
            start,
            end,
            text: self.detokenize(start, end),
        })
    }

    /// Content hash of the prompt text, used as the fixture and cache key.
    pub fn input_hash(&self) -> String {
        hash_text(&self.prompt_text)
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn assemble_input(
    instance: &Instance,
    tokenizer: &dyn Tokenizer,
    template: &PromptTemplate,
    max_tokens: Option<usize>,
) -> Result<AssembledInput> {
    let (prompt_text, byte_ranges) = template.render(instance)?;
    let tokens = tokenizer.tokenize(&prompt_text);
    if let Some(max) = max_tokens {
        if tokens.len() > max {
            return Err(Error::Truncation {
                needed: tokens.len(),
                max,
            });
        }
    }

    let mut part_offsets = Vec::with_capacity(byte_ranges.len());
    for (part, bs, be) in byte_ranges {
        let mut first = None;
        let mut last = 0;
        for (i, t) in tokens.iter().enumerate() {
            if t.core_start == t.end {
                continue;
            }
            let inside = t.core_start >= bs && t.core_start < be;
            let straddles_start = t.core_start < bs && t.end > bs;
            if straddles_start || (inside && t.end > be) {
                return Err(Error::Assembly(format!(
                    "token {:?} crosses the boundary of part {part}",
                    t.core(&prompt_text)
                )));
            }
            if inside {
                first.get_or_insert(i);
                last = i + 1;
            }
        }
        let start = first.ok_or_else(|| Error::Assembly(format!("part {part} has no tokens")))?;
        part_offsets.push(PartRange { part, start, end: last });
    }
    part_offsets.sort_by_key(|r| r.part);
    for w in part_offsets.windows(2) {
        if w[0].end > w[1].start {
            return Err(Error::Assembly(format!(
                "parts {} and {} are out of order in the template",
                w[0].part, w[1].part
            )));
        }
    }

    Ok(AssembledInput {
        token_ids: tokens.iter().map(|t| t.id).collect(),
        tokens,
        prompt_text,
        part_offsets,
    })
}

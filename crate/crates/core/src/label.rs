//! The three-way verdict space and raw-label normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fact-checking verdict. Declaration order is the iteration order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Supports,
    Refutes,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Supports, Label::Refutes, Label::Neutral];

    /// Surface form used in prompts and model output, e.g. `Supports`.
    pub fn as_word(self) -> &'static str {
        match self {
            Label::Supports => "Supports",
            Label::Refutes => "Refutes",
            Label::Neutral => "Neutral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_word())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supports" => Ok(Label::Supports),
            "refutes" => Ok(Label::Refutes),
            "neutral" => Ok(Label::Neutral),
            _ => Err(Error::UnmappedLabel(s.to_string())),
        }
    }
}

/// Raw dataset label → canonical [`Label`] table.
///
/// Keys are matched after trimming and ASCII lowercasing. The on-disk form is
/// a two-column UTF-8 text file: everything before the last whitespace run is
/// the raw label, the final column is the canonical label name. Blank lines
/// and lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    entries: BTreeMap<String, Label>,
}

impl Default for LabelMap {
    /// Canonical names plus the common past-tense and "not enough info" spellings.
    fn default() -> Self {
        let mut map = LabelMap::empty();
        for (raw, label) in [
            ("supports", Label::Supports),
            ("supported", Label::Supports),
            ("support", Label::Supports),
            ("refutes", Label::Refutes),
            ("refuted", Label::Refutes),
            ("refute", Label::Refutes),
            ("neutral", Label::Neutral),
            ("nei", Label::Neutral),
            ("not enough info", Label::Neutral),
        ] {
            map.insert(raw, label);
        }
        map
    }
}

impl LabelMap {
    pub fn empty() -> Self {
        LabelMap {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, raw: &str, label: Label) {
        self.entries.insert(normalize_key(raw), label);
    }

    pub fn get(&self, raw: &str) -> Option<Label> {
        self.entries.get(&normalize_key(raw)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = LabelMap::empty();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let split = line
                .rfind(char::is_whitespace)
                .ok_or_else(|| Error::parse(lineno + 1, "expected `<raw label> <canonical label>`"))?;
            let (raw, canonical) = line.split_at(split);
            let label: Label = canonical
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno + 1, format!("unknown canonical label {:?}", canonical.trim())))?;
            map.insert(raw.trim(), label);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }
}

fn normalize_key(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

/// Maps a raw dataset label onto the three-way label space.
pub fn merge_raw_label(raw: &str, mapping: &LabelMap) -> Result<Label> {
    mapping.get(raw).ok_or_else(|| Error::UnmappedLabel(raw.to_string()))
}

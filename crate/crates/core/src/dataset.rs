//! Newline-delimited JSON dataset ingestion.
//!
//! One record per line: `{"id": ..., "claim": "...", "evidence": ["...", ...], "label": "..."}`.
//! `label` may be absent or null. Blank lines are skipped.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::label::{merge_raw_label, LabelMap};

/// Schema of a dataset file. Both variants share the record layout and
/// differ only in how raw labels are normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Labels already in (or close to) the three-way space; uses [`LabelMap::default`].
    Jsonl,
    /// Fine-grained labels merged through a user-supplied table.
    Mapped(LabelMap),
}

impl DatasetFormat {
    fn mapping(&self) -> LabelMap {
        match self {
            DatasetFormat::Jsonl => LabelMap::default(),
            DatasetFormat::Mapped(map) => map.clone(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    claim: String,
    evidence: Vec<String>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    claim: &'a str,
    evidence: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'static str>,
}

pub fn load_dataset(path: &Path, format: &DatasetFormat) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_dataset(&text, format)
}

/// Record indices in errors are zero-based over non-blank lines.
pub fn parse_dataset(text: &str, format: &DatasetFormat) -> Result<Vec<Instance>> {
    let mapping = format.mapping();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Ingest {
                index,
                message: e.to_string(),
            })?;
            let id = match raw.id {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                other => {
                    return Err(Error::Ingest {
                        index,
                        message: format!("id must be a string or number, got {other}"),
                    })
                }
            };
            let gold = raw
                .label
                .as_deref()
                .map(|l| merge_raw_label(l, &mapping))
                .transpose()
                .map_err(|e| Error::Ingest {
                    index,
                    message: e.to_string(),
                })?;
            Instance::new(id, raw.claim, raw.evidence, gold)
        })
        .collect()
}

pub fn write_dataset(path: &Path, instances: &[Instance]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for inst in instances {
        let rec = OutRecord {
            id: &inst.id,
            claim: &inst.claim,
            evidence: &inst.evidence,
            label: inst.gold.map(|l| match l {
                crate::Label::Supports => "SUPPORTS",
                crate::Label::Refutes => "REFUTES",
                crate::Label::Neutral => "NEUTRAL",
            }),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Label;

    const THREE: &str = r#"{"id": "a", "claim": "c1", "evidence": ["e1", "e2"], "label": "supports"}
{"id": 2, "claim": "c2", "evidence": ["e1", "e2", "e3"], "label": "refuted"}

{"id": "c", "claim": "c3", "evidence": ["e1", "e2"]}
"#;

    #[test]
    fn three_valid_records() {
        let got = parse_dataset(THREE, &DatasetFormat::Jsonl).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].gold, Some(Label::Supports));
        assert_eq!(got[1].id, "2");
        assert_eq!(got[1].gold, Some(Label::Refutes));
        assert_eq!(got[2].gold, None);
    }

    #[test]
    fn single_evidence_is_a_validation_error() {
        let err = parse_dataset(
            r#"{"id": "x", "claim": "c", "evidence": ["only"]}"#,
            &DatasetFormat::Jsonl,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_record_names_index() {
        let text = "{\"id\": \"a\", \"claim\": \"c\", \"evidence\": [\"x\", \"y\"]}\n{not json}\n";
        match parse_dataset(text, &DatasetFormat::Jsonl).unwrap_err() {
            Error::Ingest { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mapped_format_uses_table() {
        let map = LabelMap::parse("mostly false REFUTES\n").unwrap();
        let text = r#"{"id": "a", "claim": "c", "evidence": ["x", "y"], "label": "Mostly False"}"#;
        let got = parse_dataset(text, &DatasetFormat::Mapped(map)).unwrap();
        assert_eq!(got[0].gold, Some(Label::Refutes));

        let unmapped = parse_dataset(text, &DatasetFormat::Jsonl).unwrap_err();
        assert!(unmapped.to_string().contains("Mostly False"));
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let instances = parse_dataset(THREE, &DatasetFormat::Jsonl).unwrap();
        write_dataset(&path, &instances).unwrap();
        let again = load_dataset(&path, &DatasetFormat::Jsonl).unwrap();
        assert_eq!(instances, again);
        assert_eq!(again, load_dataset(&path, &DatasetFormat::Jsonl).unwrap());
    }
}

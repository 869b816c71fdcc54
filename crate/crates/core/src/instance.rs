use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// A claim with two or more evidence passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub claim: String,
    pub evidence: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        claim: impl Into<String>,
        evidence: Vec<String>,
        gold: Option<Label>,
    ) -> Result<Self> {
        let instance = Instance {
            id: id.into(),
            claim: claim.into(),
            evidence,
            gold,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.claim.trim().is_empty() {
            return Err(Error::Validation(format!("instance {}: empty claim", self.id)));
        }
        if self.evidence.len() < 2 {
            return Err(Error::Validation(format!(
                "instance {}: needs at least 2 evidence passages, got {}",
                self.id,
                self.evidence.len()
            )));
        }
        if let Some(i) = self.evidence.iter().position(|e| e.trim().is_empty()) {
            return Err(Error::Validation(format!(
                "instance {}: evidence {} is empty",
                self.id,
                i + 1
            )));
        }
        Ok(())
    }

    /// Claim first, then evidence in order.
    pub fn parts(&self) -> Vec<PartId> {
        std::iter::once(PartId::Claim)
            .chain((0..self.evidence.len()).map(PartId::Evidence))
            .collect()
    }

    pub fn part_text(&self, part: PartId) -> Option<&str> {
        match part {
            PartId::Claim => Some(&self.claim),
            PartId::Evidence(i) => self.evidence.get(i).map(String::as_str),
        }
    }

    pub fn part_text_mut(&mut self, part: PartId) -> Option<&mut String> {
        match part {
            PartId::Claim => Some(&mut self.claim),
            PartId::Evidence(i) => self.evidence.get_mut(i),
        }
    }

    /// All unordered part pairs: claim-evidence pairs first, then evidence-evidence.
    pub fn part_pairs(&self) -> Vec<PartPair> {
        let parts = self.parts();
        let mut pairs = Vec::new();
        for (i, &a) in parts.iter().enumerate() {
            for &b in &parts[i + 1..] {
                pairs.push(PartPair { from: a, to: b });
            }
        }
        pairs
    }
}

/// One input part. Evidence indices are zero-based; display is one-based (`E1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartId {
    Claim,
    Evidence(usize),
}

impl PartId {
    pub fn tag(self) -> String {
        match self {
            PartId::Claim => "C".to_string(),
            PartId::Evidence(i) => format!("E{}", i + 1),
        }
    }
}

impl fmt::Display for PartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Two distinct parts, `from` preceding `to` in prompt order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartPair {
    pub from: PartId,
    pub to: PartId,
}

impl PartPair {
    pub fn new(from: PartId, to: PartId) -> Result<Self> {
        if from == to {
            return Err(Error::Validation(format!(
                "part pair needs distinct parts, got {from} twice"
            )));
        }
        let (from, to) = if from < to { (from, to) } else { (to, from) };
        Ok(PartPair { from, to })
    }

    /// Prompt tag such as `C-E1` or `E1-E2`.
    pub fn tag(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }
}

impl fmt::Display for PartPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("evidence {i}")).collect()
    }

    #[test]
    fn rejects_single_evidence() {
        assert!(Instance::new("a", "claim", ev(1), None).is_err());
        assert!(Instance::new("a", "  ", ev(2), None).is_err());
        assert!(Instance::new("a", "c", vec!["x".into(), " ".into()], None).is_err());
    }

    #[test]
    fn pairs_for_two_and_three_evidence() {
        let two = Instance::new("a", "c", ev(2), None).unwrap();
        let tags: Vec<_> = two.part_pairs().iter().map(PartPair::tag).collect();
        assert_eq!(tags, ["C-E1", "C-E2", "E1-E2"]);

        let three = Instance::new("a", "c", ev(3), None).unwrap();
        assert_eq!(three.part_pairs().len(), 6);
    }

    #[test]
    fn pair_is_normalized() {
        let p = PartPair::new(PartId::Evidence(1), PartId::Claim).unwrap();
        assert_eq!(p.tag(), "C-E2");
        assert!(PartPair::new(PartId::Claim, PartId::Claim).is_err());
    }
}

//! Agree / disagree / unrelated labeling of span interactions.
//!
//! All of an instance's span pairs go to the labeler in one three-shot prompt
//! with the full claim and evidence as context; the reply carries one
//! numbered `relation:` line per pair.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::assemble::hash_text;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::interactions::InteractionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Agree,
    Disagree,
    Unrelated,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 3] = [RelationLabel::Agree, RelationLabel::Disagree, RelationLabel::Unrelated];

    pub fn as_word(self) -> &'static str {
        match self {
            RelationLabel::Agree => "agree",
            RelationLabel::Disagree => "disagree",
            RelationLabel::Unrelated => "unrelated",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_word())
    }
}

impl FromStr for RelationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agree" => Ok(RelationLabel::Agree),
            "disagree" => Ok(RelationLabel::Disagree),
            "unrelated" => Ok(RelationLabel::Unrelated),
            other => Err(Error::Validation(format!("unknown relation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelerRequest {
    pub claim: String,
    pub evidence: Vec<String>,
    pub span_pairs: Vec<(String, String)>,
}

impl LabelerRequest {
    pub fn validate(&self) -> Result<()> {
        if self.span_pairs.is_empty() {
            return Err(Error::Validation("labeler request has no span pairs".into()));
        }
        if let Some(i) = self
            .span_pairs
            .iter()
            .position(|(a, b)| a.trim().is_empty() || b.trim().is_empty())
        {
            return Err(Error::Validation(format!("span pair {} has empty text", i + 1)));
        }
        Ok(())
    }
}

struct Shot {
    claim: &'static str,
    evidence: [&'static str; 2],
    pairs: [(&'static str, &'static str, RelationLabel); 3],
}

const SHOTS: [Shot; 3] = [
    Shot {
        claim: "Vitamin C supplements prevent the common cold.",
        evidence: [
            "A meta-analysis found that regular vitamin C supplementation did not reduce cold incidence in the general population.",
            "In regular users, vitamin C slightly shortened the duration of colds.",
        ],
        pairs: [
            ("prevent the common cold", "did not reduce cold incidence", RelationLabel::Disagree),
            ("Vitamin C supplements", "regular vitamin C supplementation", RelationLabel::Agree),
            ("did not reduce cold incidence", "slightly shortened the duration", RelationLabel::Unrelated),
        ],
    },
    Shot {
        claim: "Face masks reduce the spread of respiratory viruses.",
        evidence: [
            "Community trials showed that masks lowered transmission of influenza-like illness.",
            "Mask wearing was associated with fewer infections among household contacts.",
        ],
        pairs: [
            ("reduce the spread", "lowered transmission", RelationLabel::Agree),
            ("respiratory viruses", "fewer infections", RelationLabel::Agree),
            ("lowered transmission", "fewer infections", RelationLabel::Agree),
        ],
    },
    Shot {
        claim: "Drinking coffee causes dehydration.",
        evidence: [
            "Moderate coffee intake provides hydration similar to water.",
            "High doses of caffeine have a mild diuretic effect.",
        ],
        pairs: [
            ("causes dehydration", "hydration similar to water", RelationLabel::Disagree),
            ("causes dehydration", "mild diuretic effect", RelationLabel::Agree),
            ("hydration similar to water", "mild diuretic effect", RelationLabel::Disagree),
        ],
    },
];

pub(crate) fn count_word(n: usize) -> String {
    match n {
        2 => "two".into(),
        3 => "three".into(),
        4 => "four".into(),
        5 => "five".into(),
        6 => "six".into(),
        n => n.to_string(),
    }
}

/// `E1, E2` style list of evidence tags.
pub(crate) fn evidence_tags(n: usize) -> String {
    (1..=n).map(|i| format!("E{i}")).collect::<Vec<_>>().join(", ")
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn unquote(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn build_labeler_prompt(request: &LabelerRequest) -> Result<String> {
    request.validate()?;
    let n = request.evidence.len();
    let mut p = String::new();
    let _ = write!(
        p,
        "You are a helpful assistant. Your task:\n\n\
         1. Read the claim and its {} evidence passages ({}).\n\
         2. For each supplied span interaction, decide whether the two spans\n   \
         AGREE, DISAGREE, or are UNRELATED, taking the full context into account.\n\
         3. Output the span pairs exactly as given, followed by\n   \
         \"relation: agree|disagree|unrelated\".\n\n\
         Return format:\n  \
         1. \"SPAN A\" - \"SPAN B\"  relation: <agree|disagree|unrelated>\n  \
         2. ...\n  \
         3. ...\n",
        count_word(n),
        evidence_tags(n)
    );
    for (k, shot) in SHOTS.iter().enumerate() {
        let _ = write!(
            p,
            "\n### SHOT {}{}\n",
            k + 1,
            if k == 0 { "  (annotated example)" } else { "" }
        );
        let _ = writeln!(p, "Claim: {}", shot.claim);
        for (i, e) in shot.evidence.iter().enumerate() {
            let _ = writeln!(p, "Evidence {}: {e}", i + 1);
        }
        p.push_str("\nSpan interactions (to be labelled):\n");
        for (i, (a, b, _)) in shot.pairs.iter().enumerate() {
            let _ = writeln!(p, "  {}. {} - {}", i + 1, quote(a), quote(b));
        }
        p.push_str("\nExpected output:\n");
        for (i, (a, b, rel)) in shot.pairs.iter().enumerate() {
            let _ = writeln!(p, "  {}. {} - {}  relation: {rel}", i + 1, quote(a), quote(b));
        }
    }
    p.push_str("\n### NEW INSTANCE  (pre-filled for each new example)\n");
    let _ = writeln!(p, "Claim: {}", request.claim);
    for (i, e) in request.evidence.iter().enumerate() {
        let _ = writeln!(p, "Evidence {}: {e}", i + 1);
    }
    p.push_str("Span interactions:\n");
    for (i, (a, b)) in request.span_pairs.iter().enumerate() {
        let _ = writeln!(p, "  {}. {} - {}", i + 1, quote(a), quote(b));
    }
    Ok(p)
}

/// Reads one label per requested pair, matched by item number.
pub fn parse_labeler_output(text: &str, expected: usize) -> Result<Vec<RelationLabel>> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    let re = LINE.get_or_init(|| Regex::new(r"(?mi)^\s*(\d+)\s*[.)].*?relation\s*:\s*<?\s*([A-Za-z]+)").unwrap());
    let mut found: BTreeMap<usize, &str> = BTreeMap::new();
    for c in re.captures_iter(text) {
        if let Ok(i) = c[1].parse::<usize>() {
            found.entry(i).or_insert(c.get(2).map_or("", |m| m.as_str()));
        }
    }
    (1..=expected)
        .map(|i| {
            let word = found
                .get(&i)
                .ok_or_else(|| Error::parse(i, "no relation line for this pair"))?;
            word.parse()
                .map_err(|_| Error::parse(i, format!("unknown relation {word:?}")))
        })
        .collect()
}

/// Text-in/text-out model endpoint.
pub trait TextEndpoint: Send {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<T: TextEndpoint + ?Sized> TextEndpoint for Box<T> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// Memoizes completions by prompt hash, in memory and optionally on disk.
pub struct CachedEndpoint<E> {
    inner: E,
    dir: Option<std::path::PathBuf>,
    memory: Mutex<HashMap<String, String>>,
}

impl<E: TextEndpoint> CachedEndpoint<E> {
    pub fn new(inner: E, dir: Option<std::path::PathBuf>) -> Self {
        CachedEndpoint {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
        }
    }
}

impl<E: TextEndpoint> TextEndpoint for CachedEndpoint<E> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let key = hash_text(prompt);
        if let Some(hit) = self.memory.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("labeler-{}.txt", &key[..32])));
        if let Some(p) = &path {
            if let Ok(text) = std::fs::read_to_string(p) {
                self.memory.lock().unwrap().insert(key, text.clone());
                return Ok(text);
            }
        }
        let text = self.inner.complete(prompt)?;
        if let Some(p) = &path {
            if let Some(d) = p.parent() {
                std::fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
            }
            std::fs::write(p, &text).map_err(|e| Error::file(p, e))?;
        }
        self.memory.lock().unwrap().insert(key, text.clone());
        Ok(text)
    }
}

const NEGATIONS: &[&str] = &[
    "not", "no", "never", "none", "neither", "nor", "without", "cannot", "nothing", "t",
];

fn has_negation(text: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| NEGATIONS.contains(&w.to_lowercase().as_str()))
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Rule-based labeler: identical texts agree, a negation on one side only
/// disagrees, anything else is unrelated. A pure function of the span texts.
pub fn rule_relation(a: &str, b: &str) -> RelationLabel {
    if normalize(a) == normalize(b) {
        RelationLabel::Agree
    } else if has_negation(a) != has_negation(b) {
        RelationLabel::Disagree
    } else {
        RelationLabel::Unrelated
    }
}

/// [`TextEndpoint`] that answers labeler prompts with [`rule_relation`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLabeler;

impl TextEndpoint for MockLabeler {
    fn complete(&self, prompt: &str) -> Result<String> {
        static PAIR: OnceLock<Regex> = OnceLock::new();
        let re = PAIR.get_or_init(|| {
            Regex::new(r#"(?m)^\s*(\d+)\.\s*"((?:[^"\\]|\\.)*)"\s*-\s*"((?:[^"\\]|\\.)*)"\s*$"#).unwrap()
        });
        let start = prompt
            .rfind("### NEW INSTANCE")
            .ok_or_else(|| Error::Labeling("prompt has no new-instance block".into()))?;
        let mut out = String::new();
        for c in re.captures_iter(&prompt[start..]) {
            let (a, b) = (unquote(&c[2]), unquote(&c[3]));
            let _ = writeln!(
                out,
                "  {}. {} - {}  relation: {}",
                &c[1],
                quote(&a),
                quote(&b),
                rule_relation(&a, &b)
            );
        }
        Ok(out)
    }
}

/// Fills every interaction's relation. An endpoint that fails twice leaves
/// every interaction `unrelated` and flagged; a malformed reply is an error.
pub fn label_interactions(
    labeler: &dyn TextEndpoint,
    instance: &Instance,
    interactions: &InteractionSet,
) -> Result<InteractionSet> {
    let mut out = interactions.clone();
    if out.is_empty() {
        return Ok(out);
    }
    let request = LabelerRequest {
        claim: instance.claim.clone(),
        evidence: instance.evidence.clone(),
        span_pairs: out
            .iter()
            .map(|it| (it.span_a.text.clone(), it.span_b.text.clone()))
            .collect(),
    };
    let prompt = build_labeler_prompt(&request)?;
    let reply = match labeler.complete(&prompt) {
        Ok(r) => Ok(r),
        Err(first) => {
            log::warn!("labeler failed for {} ({first}); retrying once", instance.id);
            labeler.complete(&prompt)
        }
    };
    match reply {
        Ok(text) => {
            let labels = parse_labeler_output(&text, out.len())
                .map_err(|e| Error::Labeling(format!("instance {}: {e}", instance.id)))?;
            for (it, rel) in out.interactions.iter_mut().zip(labels) {
                it.relation = Some(rel);
                it.flagged = false;
            }
        }
        Err(e) => {
            log::warn!(
                "labeler failed twice for {} ({e}); marking interactions unrelated",
                instance.id
            );
            for it in out.interactions.iter_mut() {
                it.relation = Some(RelationLabel::Unrelated);
                it.flagged = true;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{PartRange, PartSpan};
    use crate::instance::{PartId, PartPair};
    use crate::interactions::SpanInteraction;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn request(pairs: &[(&str, &str)]) -> LabelerRequest {
        LabelerRequest {
            claim: "Zinc cures colds.".into(),
            evidence: vec!["Zinc shortens colds.".into(), "Zinc does not cure colds.".into()],
            span_pairs: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    #[test]
    fn prompt_numbers_pairs() {
        let p = build_labeler_prompt(&request(&[("a", "b"), ("c", "d"), ("e", "f")])).unwrap();
        let tail = &p[p.find("### NEW INSTANCE").unwrap()..];
        assert!(tail.contains("  1. \"a\" - \"b\"\n  2. \"c\" - \"d\"\n  3. \"e\" - \"f\"\n"));
        assert!(tail.contains("Evidence 2: Zinc does not cure colds."));
        assert!(p.contains("its two evidence passages (E1, E2)"));
        assert!(p.contains("### SHOT 3"));
    }

    #[test]
    fn single_pair_and_quote_escaping() {
        let p = build_labeler_prompt(&request(&[("say \"hi\"", "b")])).unwrap();
        let tail = &p[p.find("### NEW INSTANCE").unwrap()..];
        assert!(tail.contains(r#"  1. "say \"hi\"" - "b""#));
        assert!(!tail.contains("  2."));
        assert!(build_labeler_prompt(&request(&[])).is_err());
    }

    #[test]
    fn parses_return_format() {
        assert_eq!(
            parse_labeler_output("1. \"A\" - \"B\"  relation: agree", 1).unwrap(),
            [RelationLabel::Agree]
        );
        assert_eq!(
            parse_labeler_output(
                "  1. \"x\" - \"y\"  relation: unrelated\n  2. \"p\" - \"q\" relation: <disagree>",
                2
            )
            .unwrap(),
            [RelationLabel::Unrelated, RelationLabel::Disagree]
        );
        let err = parse_labeler_output("1. \"A\" - \"B\"  relation: maybe", 1).unwrap_err();
        assert!(matches!(err, Error::Parse { index: 1, .. }));
        let err = parse_labeler_output("1. \"A\" - \"B\"  relation: agree", 2).unwrap_err();
        assert!(matches!(err, Error::Parse { index: 2, .. }));
    }

    #[test]
    fn rule_table() {
        assert_eq!(rule_relation("Zinc", "zinc"), RelationLabel::Agree);
        assert_eq!(rule_relation("cures colds", "does not cure"), RelationLabel::Disagree);
        assert_eq!(rule_relation("cures colds", "shortens colds"), RelationLabel::Unrelated);
        assert_eq!(rule_relation("no effect", "never helps"), RelationLabel::Unrelated);
        assert_eq!(rule_relation("can't help", "helps"), RelationLabel::Disagree);
    }

    fn set(pairs: &[(&str, &str)]) -> InteractionSet {
        let span = |part, t: &str, k: usize| PartSpan {
            part,
            start: k,
            end: k + 1,
            text: t.to_string(),
        };
        InteractionSet {
            interactions: pairs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| SpanInteraction {
                    pair: PartPair::new(PartId::Claim, PartId::Evidence(0)).unwrap(),
                    span_a: span(PartId::Claim, a, k),
                    span_b: span(PartId::Evidence(0), b, 10 + k),
                    importance: 1.0 - k as f64 * 0.1,
                    relation: None,
                    flagged: false,
                })
                .collect(),
            source_offsets: vec![
                PartRange {
                    part: PartId::Claim,
                    start: 0,
                    end: 5,
                },
                PartRange {
                    part: PartId::Evidence(0),
                    start: 10,
                    end: 15,
                },
            ],
        }
    }

    fn instance() -> Instance {
        Instance::new(
            "i",
            "Zinc cures colds.",
            vec!["Zinc shortens colds.".into(), "not so".into()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn mock_labeler_fills_relations_in_order() {
        let s = set(&[("Zinc", "Zinc"), ("cures", "does not cure"), ("cures", "shortens")]);
        let out = label_interactions(&MockLabeler, &instance(), &s).unwrap();
        let rels: Vec<_> = out.iter().map(|i| i.relation.unwrap()).collect();
        assert_eq!(
            rels,
            [RelationLabel::Agree, RelationLabel::Disagree, RelationLabel::Unrelated]
        );
        for (a, b) in out.iter().zip(s.iter()) {
            assert_eq!(
                (&a.span_a, &a.span_b, a.importance),
                (&b.span_a, &b.span_b, b.importance)
            );
        }
    }

    #[test]
    fn empty_set_passes_through() {
        let out = label_interactions(&MockLabeler, &instance(), &set(&[])).unwrap();
        assert!(out.is_empty());
    }

    struct Short;
    impl TextEndpoint for Short {
        fn complete(&self, _: &str) -> Result<String> {
            Ok("1. \"a\" - \"b\" relation: agree".into())
        }
    }

    #[test]
    fn short_reply_is_a_labeling_error() {
        let err = label_interactions(&Short, &instance(), &set(&[("a", "b"), ("c", "d")])).unwrap_err();
        assert!(matches!(err, Error::Labeling(_)));
    }

    struct Flaky(AtomicUsize, usize);
    impl TextEndpoint for Flaky {
        fn complete(&self, p: &str) -> Result<String> {
            if self.0.fetch_add(1, Ordering::SeqCst) < self.1 {
                Err(Error::Backend("down".into()))
            } else {
                MockLabeler.complete(p)
            }
        }
    }

    #[test]
    fn one_failure_is_retried() {
        let f = Flaky(AtomicUsize::new(0), 1);
        let out = label_interactions(&f, &instance(), &set(&[("Zinc", "zinc")])).unwrap();
        assert_eq!(out.interactions[0].relation, Some(RelationLabel::Agree));
        assert!(!out.interactions[0].flagged);
        assert_eq!(f.0.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn persistent_failure_flags_unrelated() {
        let f = Flaky(AtomicUsize::new(0), usize::MAX);
        let out = label_interactions(&f, &instance(), &set(&[("Zinc", "zinc")])).unwrap();
        assert_eq!(out.interactions[0].relation, Some(RelationLabel::Unrelated));
        assert!(out.interactions[0].flagged);
    }

    #[test]
    fn cache_serves_repeat_prompts() {
        let f = Flaky(AtomicUsize::new(0), 0);
        let dir = tempfile::tempdir().unwrap();
        let c = CachedEndpoint::new(f, Some(dir.path().to_path_buf()));
        let a = c.complete("### NEW INSTANCE\n  1. \"a\" - \"a\"\n").unwrap();
        let b = c.complete("### NEW INSTANCE\n  1. \"a\" - \"a\"\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(c.inner.0.load(Ordering::SeqCst), 1);
    }

    proptest! {
        #[test]
        fn compliant_reply_round_trips(pairs in prop::collection::vec(("[a-zA-Z \"']{1,12}", "[a-zA-Z \"']{1,12}"), 1..6)) {
            let pairs: Vec<(String, String)> = pairs
                .into_iter()
                .map(|(a, b)| (format!("x{a}"), format!("y{b}")))
                .collect();
            let req = LabelerRequest { claim: "c".into(), evidence: vec!["e".into(), "f".into()], span_pairs: pairs.clone() };
            let prompt = build_labeler_prompt(&req).unwrap();
            let reply = MockLabeler.complete(&prompt).unwrap();
            let labels = parse_labeler_output(&reply, pairs.len()).unwrap();
            prop_assert_eq!(labels.len(), pairs.len());
            for ((a, b), l) in pairs.iter().zip(labels) {
                prop_assert_eq!(l, rule_relation(a, b));
            }
        }
    }
}

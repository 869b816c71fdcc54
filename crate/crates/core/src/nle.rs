//! Explanation prompts, generation and output parsing.
//!
//! Both prompts are three-shot and ask for `[Prediction] [Explanation]`. The
//! span-guided prompt additionally lists the selected span interactions with
//! their part-pair tags and relations; the baseline prompt asks the model to
//! find the influential interactions itself.

use std::fmt;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_input, AssembledInput, PromptTemplate};
use crate::backend::{Backend, DecodeParams, SteeringSpec};
use crate::error::{Error, Result};
use crate::instance::{Instance, PartId, PartPair};
use crate::interactions::InteractionSet;
use crate::label::Label;
use crate::relations::{count_word, RelationLabel};
use crate::steering::SteeringPlan;

pub(crate) const NEW_INSTANCE: &str = "### NEW INSTANCE";
pub(crate) const SPAN_LIST: &str = "Span interactions (pre-filled):";
const ANSWER_CUE: &str = "Your answer:";
const FORMAT_REMINDER: &str =
    "Reply in the return format only, exactly as: [Prediction: Supports|Refutes|Neutral] [Explanation: ...]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptKind {
    Baseline,
    SpanGuided,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Baseline => "baseline",
            PromptKind::SpanGuided => "span_guided",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NLEOutput {
    pub prediction: Label,
    pub explanation: String,
    pub raw: String,
    pub kind: PromptKind,
    pub steered: bool,
}

struct Shot {
    claim: &'static str,
    evidence: [&'static str; 2],
    spans: [(&'static str, &'static str, &'static str, RelationLabel); 3],
    prediction: Label,
    explanation: &'static str,
}

const SHOTS: [Shot; 3] = [
    Shot {
        claim: "Vitamin C supplements prevent the common cold.",
        evidence: [
            "A meta-analysis found that regular vitamin C supplementation did not reduce cold incidence in the general population.",
            "In regular users, vitamin C slightly shortened the duration of colds.",
        ],
        spans: [
            ("prevent the common cold", "did not reduce cold incidence", "C-E1", RelationLabel::Disagree),
            ("prevent", "shortened the duration", "C-E2", RelationLabel::Unrelated),
            ("did not reduce cold incidence", "slightly shortened the duration", "E1-E2", RelationLabel::Unrelated),
        ],
        prediction: Label::Refutes,
        explanation: "\"prevent the common cold\" is directly contradicted by \"did not reduce cold incidence\", which drives the verdict. \"shortened the duration\" concerns a different outcome than \"prevent\", so it neither rescues the claim nor adds doubt. The two evidence passages describe separate effects, leaving the disagreement with E1 decisive and confidence fairly high.",
    },
    Shot {
        claim: "Face masks reduce the spread of respiratory viruses.",
        evidence: [
            "Community trials showed that masks lowered transmission of influenza-like illness.",
            "Mask wearing was associated with fewer infections among household contacts.",
        ],
        spans: [
            ("reduce the spread", "lowered transmission", "C-E1", RelationLabel::Agree),
            ("respiratory viruses", "fewer infections", "C-E2", RelationLabel::Agree),
            ("lowered transmission", "fewer infections", "E1-E2", RelationLabel::Agree),
        ],
        prediction: Label::Supports,
        explanation: "\"reduce the spread\" agrees with \"lowered transmission\" and \"respiratory viruses\" lines up with \"fewer infections\". Because \"lowered transmission\" and \"fewer infections\" also agree across the two passages, every interaction points the same way and confidence is high.",
    },
    Shot {
        claim: "Drinking coffee causes dehydration.",
        evidence: [
            "Moderate coffee intake provides hydration similar to water.",
            "High doses of caffeine have a mild diuretic effect.",
        ],
        spans: [
            ("causes dehydration", "hydration similar to water", "C-E1", RelationLabel::Disagree),
            ("causes dehydration", "mild diuretic effect", "C-E2", RelationLabel::Agree),
            ("hydration similar to water", "mild diuretic effect", "E1-E2", RelationLabel::Disagree),
        ],
        prediction: Label::Neutral,
        explanation: "\"causes dehydration\" clashes with \"hydration similar to water\" but partly agrees with \"mild diuretic effect\". The evidence passages disagree with each other on \"hydration similar to water\" versus \"mild diuretic effect\", so the interactions pull in opposite directions and confidence stays low.",
    },
];

/// `Claim-Evidence 1` style name of a part pair.
fn pair_name(pair: PartPair) -> String {
    let name = |p: PartId| match p {
        PartId::Claim => "Claim".to_string(),
        PartId::Evidence(i) => format!("Evidence {}", i + 1),
    };
    format!("{}-{}", name(pair.from), name(pair.to))
}

fn pair_list(pairs: &[PartPair]) -> String {
    let names: Vec<String> = pairs.iter().map(|&p| pair_name(p)).collect();
    match names.len() {
        0 => String::new(),
        1 => names[0].clone(),
        n => format!("{}, and {}", names[..n - 1].join(", "), names[n - 1]),
    }
}

fn header(instance: &Instance, guided: bool) -> String {
    let n = instance.evidence.len();
    let pairs = instance.part_pairs();
    let k = if n <= 2 { 3 } else { pairs.len() };
    let task = if guided {
        format!(
            "2. Explain your prediction's uncertainty by referring to the {} span\n   interactions provided below ({})",
            count_word(k),
            pair_list(&pairs)
        )
    } else {
        format!(
            "2. Explain your prediction's uncertainty by identifying the {} most\n   influential span interactions from {},",
            count_word(k),
            pair_list(&pairs)
        )
    };
    format!(
        "You are a helpful assistant. Your tasks:\n\
         1. Determine the relationship between the claim and the {} evidence passages.\n\
         {task} and describing how each interaction's relation\n   \
         (agree, disagree, or unrelated) affects your overall confidence.\n\
         Return format: [Prediction] [Explanation]\n",
        count_word(n)
    )
}

fn shots(guided: bool) -> String {
    let mut s = String::new();
    for (k, shot) in SHOTS.iter().enumerate() {
        let _ = write!(s, "\n### SHOT {}\nInput{}\n", k + 1, if guided { ":" } else { "" });
        let _ = writeln!(s, "  Claim: {}", shot.claim);
        for (i, e) in shot.evidence.iter().enumerate() {
            let _ = writeln!(s, "  Evidence {}: {e}", i + 1);
        }
        if guided {
            s.push_str("  Span interactions:\n");
            for (i, (a, b, tag, rel)) in shot.spans.iter().enumerate() {
                let _ = writeln!(s, "    {}. ''{a}'' - ''{b}''  ({tag})  relation: {rel}", i + 1);
            }
        }
        let _ = writeln!(
            s,
            "Output{}\n  {}",
            if guided { ":" } else { "" },
            format_output(shot.prediction, shot.explanation)
        );
    }
    s
}

fn new_instance_block(instance: &Instance, mut t: PromptTemplate) -> PromptTemplate {
    t = t.text(format!("\n{NEW_INSTANCE}\nClaim: ")).part(PartId::Claim);
    for i in 0..instance.evidence.len() {
        t = t.text(format!("\nEvidence {}: ", i + 1)).part(PartId::Evidence(i));
    }
    t.text("\n")
}

fn answer_cue(t: PromptTemplate, reminder: bool) -> PromptTemplate {
    if reminder {
        t.text(format!("{FORMAT_REMINDER}\n{ANSWER_CUE}"))
    } else {
        t.text(ANSWER_CUE)
    }
}

pub fn baseline_template(instance: &Instance, reminder: bool) -> PromptTemplate {
    let t = PromptTemplate::new().text(header(instance, false)).text(shots(false));
    answer_cue(new_instance_block(instance, t), reminder)
}

/// Span-guided template. Every interaction needs a relation; span texts are inserted verbatim.
pub fn span_template(instance: &Instance, selected: &InteractionSet, reminder: bool) -> Result<PromptTemplate> {
    if selected.is_empty() {
        return Err(Error::Validation("span prompt needs at least one interaction".into()));
    }
    let mut list = format!("{SPAN_LIST}\n");
    for (i, it) in selected.iter().enumerate() {
        let rel = it.relation.ok_or_else(|| {
            Error::Validation(format!(
                "interaction {} ({}) has no relation label",
                i + 1,
                it.pair.tag()
            ))
        })?;
        let _ = writeln!(
            list,
            "    {}. ''{}'' - ''{}''  ({})  relation: {rel}",
            i + 1,
            it.span_a.text,
            it.span_b.text,
            it.pair.tag()
        );
    }
    let t = PromptTemplate::new().text(header(instance, true)).text(shots(true));
    Ok(answer_cue(new_instance_block(instance, t).text(list), reminder))
}

pub fn build_baseline_prompt(instance: &Instance) -> Result<String> {
    baseline_template(instance, false).render_text(instance)
}

pub fn build_span_prompt(instance: &Instance, selected: &InteractionSet) -> Result<String> {
    span_template(instance, selected, false)?.render_text(instance)
}

/// `[Prediction: X] [Explanation: ...]`
pub fn format_output(prediction: Label, explanation: &str) -> String {
    format!("[Prediction: {prediction}] [Explanation: {explanation}]")
}

/// Verdict from the first prediction bracket; explanation from the next
/// bracket through the last closing bracket of the text, trimmed.
pub fn parse_prediction_and_explanation(raw: &str) -> Result<(Label, String)> {
    static PRED: OnceLock<Regex> = OnceLock::new();
    static EXPL: OnceLock<Regex> = OnceLock::new();
    let pred =
        PRED.get_or_init(|| Regex::new(r"(?i)\[\s*(?:prediction\s*:\s*)?(supports|refutes|neutral)\s*\]").unwrap());
    let expl = EXPL.get_or_init(|| Regex::new(r"(?is)^\s*\[\s*(?:explanation\s*:)?").unwrap());

    let m = pred
        .captures(raw)
        .ok_or_else(|| Error::parse(0, "no [Prediction] bracket with Supports, Refutes or Neutral"))?;
    let prediction: Label = m[1].parse()?;
    let rest = &raw[m.get(0).unwrap().end()..];
    let open = expl
        .find(rest)
        .ok_or_else(|| Error::parse(0, "no [Explanation] bracket after the prediction"))?;
    let body = &rest[open.end()..];
    let body = match body.rfind(']') {
        Some(i) => &body[..i],
        None => body,
    };
    let explanation = body.trim();
    if explanation.is_empty() {
        return Err(Error::parse(0, "empty explanation"));
    }
    Ok((prediction, explanation.to_string()))
}

fn nle_input(
    backend: &dyn Backend,
    instance: &Instance,
    kind: PromptKind,
    selected: Option<&InteractionSet>,
    reminder: bool,
) -> Result<AssembledInput> {
    let template = match kind {
        PromptKind::Baseline => baseline_template(instance, reminder),
        PromptKind::SpanGuided => span_template(
            instance,
            selected.ok_or_else(|| Error::Validation("span-guided generation needs interactions".into()))?,
            reminder,
        )?,
    };
    assemble_input(instance, backend.tokenizer(), &template, None)
}

/// Prompt the explanation is generated from, assembled for `backend`.
pub fn assemble_nle_prompt(
    backend: &dyn Backend,
    instance: &Instance,
    kind: PromptKind,
    selected: Option<&InteractionSet>,
) -> Result<AssembledInput> {
    nle_input(backend, instance, kind, selected, false)
}

/// Generates and parses one explanation. Steering applies to span-guided
/// prompts only, targeting the selected spans at their positions in the
/// generation prompt. A reply that does not parse is retried once with a
/// format reminder.
pub fn generate_nle(
    backend: &dyn Backend,
    instance: &Instance,
    kind: PromptKind,
    selected: Option<&InteractionSet>,
    steering: Option<&SteeringPlan>,
    decode: &DecodeParams,
) -> Result<NLEOutput> {
    if steering.is_some() && kind != PromptKind::SpanGuided {
        return Err(Error::Validation("steering requires the span-guided prompt".into()));
    }
    let mut last_error = None;
    for reminder in [false, true] {
        let input = nle_input(backend, instance, kind, selected, reminder)?;
        let spec: Option<SteeringSpec> = match (steering, selected) {
            (Some(plan), Some(sel)) => Some(plan.spec_for(&sel.rebase(&input)?)?),
            _ => None,
        };
        let raw = backend.generate(&input, spec.as_ref(), decode)?;
        match parse_prediction_and_explanation(&raw) {
            Ok((prediction, explanation)) => {
                return Ok(NLEOutput {
                    prediction,
                    explanation,
                    raw,
                    kind,
                    steered: spec.is_some(),
                })
            }
            Err(e) => {
                log::warn!("unparseable explanation for {} ({e})", instance.id);
                last_error = Some(e);
            }
        }
    }
    Err(Error::Generation(format!(
        "no parseable explanation for {} after a retry: {}",
        instance.id,
        last_error.map(|e| e.to_string()).unwrap_or_default()
    )))
}

//! Automatic evaluation: counterfactual faithfulness, span fidelity and
//! label-explanation entailment.

mod cct;
mod lee;
mod perturb;
mod spans;

pub use cct::{cct_significance, entropy_cct, entropy_cct_of, CCTResult};
pub use lee::{hypothesis, lee_judgement, lee_score, Entailment, EntailmentScorer, KeywordScorer};
pub use perturb::{
    generate_perturbations, score_perturbation, LookupTagger, ModifierLexicon, Perturbation, PosTag, PosTagger,
    MODIFIERS_PER_SITE, SITES_PER_INSTANCE,
};
pub use spans::{
    contains_phrase, extract_mentioned_spans, mention_flag, quoted_pairs, span_coverage, span_extraneous, SpanMentions,
};

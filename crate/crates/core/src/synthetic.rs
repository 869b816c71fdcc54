//! Seeded synthetic corpus for the mock backend.
//!
//! Every instance has the shape
//!
//! ```text
//! claim:  <anchor> <verb> the <noun>, the <noun> and the <noun>.
//! ev 1:   Reports tie <anchor> to a surge in <bridge> across regions.
//! ev 2:   Separate <bridge> records show mixed outcomes overall.
//! ```
//!
//! Anchors link the claim to the first passage and bridges link the two
//! passages, so extraction finds one span pair for each. Only claim words are
//! tagged, so every perturbation lands in the claim. Salient modifiers carry
//! logit weight and share a group with `surge`: inserting one moves the
//! entropy and creates a new span pair that a steered explanation quotes.
//! Neutral modifiers are unknown to the model and leave the logits untouched.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{HeadEffect, HeadId, MockFixture, SyntheticModel, WordEntry};
use crate::dataset::write_dataset;
use crate::error::{Error, Result};
use crate::evalkit::{LookupTagger, ModifierLexicon, PosTag};
use crate::instance::Instance;
use crate::label::Label;
use crate::pipeline::{RunConfig, SteeringConfig};

pub const SALIENT_ADJECTIVES: [&str; 2] = ["potent", "fierce"];
pub const SALIENT_ADVERBS: [&str; 2] = ["sharply", "boldly"];
pub const NEUTRAL_ADJECTIVES: [&str; 4] = ["pale", "quiet", "hollow", "gentle"];
pub const NEUTRAL_ADVERBS: [&str; 4] = ["softly", "slowly", "plainly", "idly"];
pub const PARTNER: &str = "surge";

const ANCHOR_GROUP: u32 = 1;
const BRIDGE_GROUP: u32 = 2;
const SALIENT_GROUP: u32 = 3;

const ANCHORS: [(&str, [f64; 3]); 5] = [
    ("vaccine", [1.4, 0.0, 0.3]),
    ("zinc", [0.9, 0.2, 0.1]),
    ("fluoride", [0.3, 1.1, 0.2]),
    ("ozone", [0.1, 0.4, 1.0]),
    ("aspirin", [1.0, 0.8, 0.0]),
];
const BRIDGES: [(&str, [f64; 3]); 3] = [
    ("trials", [0.0, 0.6, 0.4]),
    ("cohort", [0.3, 0.0, 0.5]),
    ("dosage", [0.2, 0.5, 0.0]),
];
const SALIENT_WEIGHTS: [[f64; 3]; 4] = [[0.0, 1.2, 0.0], [0.0, 0.0, 1.3], [1.1, 0.0, 0.0], [0.0, 0.9, 0.6]];
const NOUNS: [&str; 8] = [
    "harbor", "meadow", "lantern", "orchard", "glacier", "canyon", "village", "river",
];
const VERBS: [&str; 6] = ["protects", "weakens", "shields", "harms", "helps", "alters"];

/// Mean steered target mass the synthetic fixture needs before generation
/// switches to quoting every provided span. Span prompts carry three shots,
/// so a handful of target tokens among several hundred only reach a few
/// tenths of the mass at the default strength.
pub const SYNTHETIC_STEER_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub instances: Vec<Instance>,
    pub fixture: MockFixture,
    pub tagger: LookupTagger,
    pub lexicon: ModifierLexicon,
}

pub fn is_salient(word: &str) -> bool {
    SALIENT_ADJECTIVES.contains(&word) || SALIENT_ADVERBS.contains(&word)
}

/// Two-layer, four-head mock whose final-layer head 2 carries the group
/// attention and most of the ablation effect.
pub fn synthetic_fixture() -> MockFixture {
    let mut words = BTreeMap::new();
    let mut put = |w: &str, weights: [f64; 3], group: u32| {
        words.insert(
            w.to_string(),
            WordEntry {
                weights,
                group: Some(group),
            },
        );
    };
    for (w, weights) in ANCHORS {
        put(w, weights, ANCHOR_GROUP);
    }
    for (w, weights) in BRIDGES {
        put(w, weights, BRIDGE_GROUP);
    }
    put(PARTNER, [0.1, 0.1, 0.1], SALIENT_GROUP);
    for (w, weights) in SALIENT_ADJECTIVES.iter().chain(&SALIENT_ADVERBS).zip(SALIENT_WEIGHTS) {
        put(w, weights, SALIENT_GROUP);
    }
    let mut fixture = MockFixture::new(2, 4);
    fixture.backend_id = "mock-synthetic".into();
    fixture.steer_threshold = SYNTHETIC_STEER_THRESHOLD;
    fixture.synthetic = SyntheticModel {
        bias: [0.2, 0.0, 0.4],
        words,
        head_effects: vec![
            HeadEffect {
                head: HeadId::new(1, 2),
                effect: 0.6,
            },
            HeadEffect {
                head: HeadId::new(0, 1),
                effect: 0.3,
            },
        ],
        ..SyntheticModel::default()
    };
    fixture
}

pub fn synthetic_tagger() -> LookupTagger {
    let mut t = LookupTagger::new();
    for w in NOUNS {
        t.insert(w, PosTag::Noun);
    }
    for w in VERBS {
        t.insert(w, PosTag::Verb);
    }
    t
}

pub fn synthetic_lexicon() -> Result<ModifierLexicon> {
    let own = |a: &[&str], b: &[&str]| a.iter().chain(b).map(|w| w.to_string()).collect::<Vec<_>>();
    ModifierLexicon::new(
        own(&SALIENT_ADJECTIVES, &NEUTRAL_ADJECTIVES),
        own(&SALIENT_ADVERBS, &NEUTRAL_ADVERBS),
    )
}

/// `n` instances with ids `syn-000`, `syn-001`, ...; gold labels follow the
/// dominant anchor weight.
pub fn synthetic_corpus(n: usize, seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let (anchor, weights) = ANCHORS[i % ANCHORS.len()];
        let (bridge, _) = *BRIDGES.choose(&mut rng).expect("bridges");
        let verb = *VERBS.choose(&mut rng).expect("verbs");
        let nouns: Vec<&str> = NOUNS.choose_multiple(&mut rng, 3).copied().collect();
        let gold = Label::ALL
            .into_iter()
            .max_by(|a, b| weights[a.index()].total_cmp(&weights[b.index()]))
            .expect("labels");
        instances.push(Instance::new(
            format!("syn-{i:03}"),
            format!(
                "{anchor} {verb} the {}, the {} and the {}.",
                nouns[0], nouns[1], nouns[2]
            ),
            vec![
                format!("Reports tie {anchor} to a {PARTNER} in {bridge} across regions."),
                format!("Separate {bridge} records show mixed outcomes overall."),
            ],
            Some(gold),
        )?);
    }
    Ok(SyntheticCorpus {
        instances,
        fixture: synthetic_fixture(),
        tagger: synthetic_tagger(),
        lexicon: synthetic_lexicon()?,
    })
}

/// Writes a synthetic corpus with its fixture, tagger table and modifier
/// lists to `dir` and returns a run configuration over them. Outputs go to
/// `dir/out` and caches to `dir/cache`.
pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> Result<RunConfig> {
    let corpus = synthetic_corpus(n, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::file(&path, e))
    };
    let lines = |words: &[&str]| words.iter().map(|w| format!("{w}\n")).collect::<String>();
    let mut table = String::new();
    for w in NOUNS {
        table.push_str(&format!("{w}\tNOUN\n"));
    }
    for w in VERBS {
        table.push_str(&format!("{w}\tVERB\n"));
    }
    write("pos_lexicon.tsv", table)?;
    write(
        "adjectives.txt",
        lines(&[&SALIENT_ADJECTIVES[..], &NEUTRAL_ADJECTIVES[..]].concat()),
    )?;
    write(
        "adverbs.txt",
        lines(&[&SALIENT_ADVERBS[..], &NEUTRAL_ADVERBS[..]].concat()),
    )?;
    let dataset = dir.join("synthetic.jsonl");
    write_dataset(&dataset, &corpus.instances)?;
    let fixture = dir.join("fixture.json");
    corpus.fixture.save(&fixture)?;

    let mut config = RunConfig::new(dataset, fixture, dir.join("out"));
    config.steering = Some(SteeringConfig {
        head_count: 4,
        ..SteeringConfig::default()
    });
    config.pos_lexicon = Some(dir.join("pos_lexicon.tsv"));
    config.lexicon_dir = Some(dir.to_path_buf());
    config.cache_dir = Some(dir.join("cache"));
    Ok(config)
}

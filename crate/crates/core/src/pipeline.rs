//! Run orchestration: per-instance scoring, extraction, labeling, explanation
//! and evaluation across methods, on a bounded worker pool.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_input, hash_text, AssembledInput, PromptTemplate};
use crate::backend::{logits_for, Backend, CachedBackend, DecodeParams, MockBackend, MockFixture};
use crate::dataset::{load_dataset, DatasetFormat};
use crate::error::{Error, Result};
use crate::evalkit::{
    extract_mentioned_spans, generate_perturbations, lee_judgement, mention_flag, score_perturbation, span_coverage,
    span_extraneous, EntailmentScorer, KeywordScorer, LookupTagger, ModifierLexicon, PosTagger,
};
use crate::instance::Instance;
use crate::interactions::{extract_interactions, select_for_prompt, top_k, InteractionDump, InteractionSet};
use crate::label::{Label, LabelMap};
use crate::nle::{generate_nle, NLEOutput, PromptKind};
use crate::relations::{label_interactions, CachedEndpoint, MockLabeler, TextEndpoint};
use crate::report::{summarize, EvalReport, InstanceFailure, InstanceRow, PerturbationRow, SpanMetric};
use crate::steering::{
    rank_heads, RankingCacheEntry, SteeringPlan, DEFAULT_BETA, DEFAULT_HEAD_COUNT, DEFAULT_SAMPLE_SIZE,
};
use crate::uncertainty::{label_distribution, predictive_entropy, LabelDistribution};

/// Share of instances allowed to fail before a run is aborted.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "span")]
    Span,
    #[serde(rename = "span+steering")]
    SpanSteering,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Span, Method::SpanSteering];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Span => "span",
            Method::SpanSteering => "span+steering",
        }
    }

    pub fn kind(self) -> PromptKind {
        match self {
            Method::Baseline => PromptKind::Baseline,
            Method::Span | Method::SpanSteering => PromptKind::SpanGuided,
        }
    }

    pub fn uses_spans(self) -> bool {
        self != Method::Baseline
    }

    pub fn steered(self) -> bool {
        self == Method::SpanSteering
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "span" => Ok(Method::Span),
            "span+steering" | "span-steering" | "steering" => Ok(Method::SpanSteering),
            other => Err(Error::Validation(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Seeds {
    /// Louvain node order.
    pub extraction: u64,
    /// Perturbation sites and modifiers, mixed with each instance id.
    pub perturbation: u64,
    /// Head-ranking sample.
    pub ranking: u64,
    pub decode: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub beta: f64,
    pub head_count: usize,
    /// Validation instances sampled for head ranking.
    pub sample_size: usize,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            beta: DEFAULT_BETA,
            head_count: DEFAULT_HEAD_COUNT,
            sample_size: DEFAULT_SAMPLE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Only `mock` is built in; other backends are supplied through [`Resources`].
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
}

/// Relation labeler. `rule` is the built-in rule labeler; `http` names an
/// OpenAI-compatible chat endpoint that the caller supplies through
/// [`Resources::with_labeler`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LabelerConfig {
    #[default]
    Rule,
    Http {
        url: String,
        model: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Raw-to-canonical label table; plain three-way labels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<PathBuf>,
    /// Head-ranking pool; the evaluated dataset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub labeler: LabelerConfig,
    pub methods: Vec<Method>,
    /// Interactions per span prompt; three for two evidence passages and one
    /// per part pair beyond that when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Required when `methods` contains span+steering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering: Option<SteeringConfig>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    /// Directory with adjectives.txt and adverbs.txt; the bundled lists when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_dir: Option<PathBuf>,
    /// Word/tag table for the lookup tagger; the bundled table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Mock backend, all three methods, default steering and seeds.
    pub fn new(dataset: impl Into<PathBuf>, fixture: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            label_map: None,
            validation: None,
            backend: BackendConfig {
                id: "mock".into(),
                fixture: Some(fixture.into()),
            },
            labeler: LabelerConfig::Rule,
            methods: Method::ALL.to_vec(),
            k: None,
            steering: Some(SteeringConfig::default()),
            seeds: Seeds::default(),
            max_tokens: None,
            lexicon_dir: None,
            pos_lexicon: None,
            cache_dir: None,
            out_dir: out_dir.into(),
            workers: 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Validation("no methods configured".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Validation("methods listed twice".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        if self.methods.contains(&Method::SpanSteering) {
            let s = self
                .steering
                .ok_or_else(|| Error::Validation("span+steering needs steering settings".into()))?;
            if !(s.beta > 0.0 && s.beta <= 1.0) {
                return Err(Error::Validation(format!("beta {} outside (0, 1]", s.beta)));
            }
            if s.head_count == 0 || s.sample_size == 0 {
                return Err(Error::Validation("head count and sample size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn dataset_format(&self) -> Result<DatasetFormat> {
        Ok(match &self.label_map {
            Some(p) => DatasetFormat::Mapped(LabelMap::load(p)?),
            None => DatasetFormat::Jsonl,
        })
    }

    /// Content address of everything that determines the results: file
    /// contents rather than paths, and no output or cache locations.
    pub fn config_hash(&self) -> Result<String> {
        let content = |p: &Option<PathBuf>| -> Result<Option<String>> { p.as_ref().map(|p| file_hash(p)).transpose() };
        let lexicon = match &self.lexicon_dir {
            Some(d) => Some((
                file_hash(&d.join("adjectives.txt"))?,
                file_hash(&d.join("adverbs.txt"))?,
            )),
            None => None,
        };
        let view = serde_json::json!({
            "dataset": file_hash(&self.dataset)?,
            "label_map": content(&self.label_map)?,
            "validation": content(&self.validation)?,
            "backend": self.backend.id,
            "fixture": content(&self.backend.fixture)?,
            "labeler": self.labeler,
            "methods": self.methods,
            "k": self.k,
            "steering": self.methods.contains(&Method::SpanSteering).then_some(self.steering).flatten(),
            "seeds": self.seeds,
            "max_tokens": self.max_tokens,
            "lexicon": lexicon,
            "pos_lexicon": content(&self.pos_lexicon)?,
        });
        Ok(hash_text(&view.to_string())[..16].to_string())
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hash_text(&String::from_utf8_lossy(&bytes)))
}

pub type BackendFactory = Box<dyn Fn() -> Result<Box<dyn Backend>> + Send + Sync>;
pub type LabelerFactory = Box<dyn Fn() -> Result<Box<dyn TextEndpoint>> + Send + Sync>;

/// Pluggable pieces of a run. Factories are called once per worker so each
/// worker holds its own backend session and labeler.
pub struct Resources {
    pub backend: BackendFactory,
    pub labeler: LabelerFactory,
    pub tagger: Box<dyn PosTagger>,
    pub lexicon: ModifierLexicon,
    pub scorer: Box<dyn EntailmentScorer>,
}

impl Resources {
    /// Built-in pieces: the mock backend from the configured fixture, the
    /// rule labeler, the lookup tagger and the keyword entailment scorer.
    /// Backend and labeler calls are cached under `cache_dir` when set.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        if config.labeler != LabelerConfig::Rule {
            return Err(Error::Validation(
                "only the rule labeler is built in; supply others through Resources::with_labeler".into(),
            ));
        }
        Self::with_labeler(config, Box::new(|| Ok(Box::new(MockLabeler) as Box<dyn TextEndpoint>)))
    }

    /// Built-in pieces around a caller-supplied labeler, cached like the rule one.
    pub fn with_labeler(config: &RunConfig, endpoint: LabelerFactory) -> Result<Self> {
        if config.backend.id != "mock" {
            return Err(Error::Validation(format!(
                "backend {:?} is not built in; supply it through Resources",
                config.backend.id
            )));
        }
        let path = config
            .backend
            .fixture
            .as_ref()
            .ok_or_else(|| Error::Validation("the mock backend needs a fixture file".into()))?;
        let fixture = MockFixture::load(path)?;
        let backend_cache = config.cache_dir.as_ref().map(|d| d.join("backend"));
        let backend: BackendFactory = Box::new(move || {
            let mock = MockBackend::new(fixture.clone());
            Ok(match &backend_cache {
                Some(dir) => Box::new(CachedBackend::new(mock, dir)?) as Box<dyn Backend>,
                None => Box::new(mock),
            })
        });
        let labeler_cache = config.cache_dir.as_ref().map(|d| d.join("labeler"));
        let labeler: LabelerFactory = Box::new(move || {
            Ok(Box::new(CachedEndpoint::new(endpoint()?, labeler_cache.clone())) as Box<dyn TextEndpoint>)
        });
        let tagger = match &config.pos_lexicon {
            Some(p) => LookupTagger::load(p)?,
            None => LookupTagger::builtin(),
        };
        let lexicon = match &config.lexicon_dir {
            Some(d) => ModifierLexicon::load(d)?,
            None => ModifierLexicon::builtin(),
        };
        Ok(Resources {
            backend,
            labeler,
            tagger: Box::new(tagger),
            lexicon,
            scorer: Box::new(KeywordScorer),
        })
    }
}

/// Uncertainty of one instance under the scoring prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub uncertainty: f64,
    pub distribution: LabelDistribution,
    pub prediction: Label,
}

pub fn scoring_input(backend: &dyn Backend, instance: &Instance, max_tokens: Option<usize>) -> Result<AssembledInput> {
    assemble_input(
        instance,
        backend.tokenizer(),
        &PromptTemplate::scoring(instance),
        max_tokens,
    )
}

pub fn score_instance(backend: &dyn Backend, instance: &Instance, max_tokens: Option<usize>) -> Result<ScoreRecord> {
    let input = scoring_input(backend, instance, max_tokens)?;
    let distribution = label_distribution(&logits_for(backend, &input, None)?)?;
    Ok(ScoreRecord {
        instance_id: instance.id.clone(),
        uncertainty: predictive_entropy(&distribution).value(),
        prediction: distribution.argmax(),
        distribution,
    })
}

/// Seed for one instance's perturbations, independent of run order.
pub fn perturbation_seed(base: u64, instance_id: &str) -> u64 {
    let h = hash_text(&format!("{base}\u{0}{instance_id}"));
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// One worker's session.
struct Session<'a> {
    backend: Box<dyn Backend>,
    labeler: Box<dyn TextEndpoint>,
    resources: &'a Resources,
    config: &'a RunConfig,
    plan: Option<&'a SteeringPlan>,
    decode: DecodeParams,
}

impl Session<'_> {
    fn interactions(&self, instance: &Instance, dump: bool) -> Result<InteractionSet> {
        let seed = self.config.seeds.extraction;
        let dir = self
            .config
            .cache_dir
            .as_ref()
            .map(|d| d.join("interactions"))
            .filter(|_| dump);
        let key = format!(
            "{}-{}",
            instance.id,
            &hash_text(&serde_json::to_string(instance)?)[..12]
        );
        if let Some(d) = &dir {
            if let Some(hit) = InteractionDump::load(d, &key, seed)? {
                return Ok(hit.set);
            }
        }
        let input = scoring_input(self.backend.as_ref(), instance, self.config.max_tokens)?;
        let set = extract_interactions(self.backend.as_ref(), &input, seed)?;
        if let Some(d) = &dir {
            InteractionDump {
                instance_id: key,
                seed,
                head: None,
                set: set.clone(),
            }
            .store(d)?;
        }
        Ok(set)
    }

    /// Extracted, selected and labeled interactions for the span prompt.
    fn selection(&self, instance: &Instance, dump: bool) -> Result<InteractionSet> {
        let all = self.interactions(instance, dump)?;
        let chosen = match self.config.k {
            Some(k) => top_k(&all, k),
            None => select_for_prompt(&all, instance.evidence.len()),
        };
        if chosen.is_empty() {
            return Err(Error::Validation(format!(
                "instance {} yields no span interactions",
                instance.id
            )));
        }
        label_interactions(self.labeler.as_ref(), instance, &chosen)
    }

    fn explain(&self, instance: &Instance, method: Method, selected: Option<&InteractionSet>) -> Result<NLEOutput> {
        let selected = selected.filter(|_| method.uses_spans());
        let plan = self.plan.filter(|_| method.steered());
        generate_nle(
            self.backend.as_ref(),
            instance,
            method.kind(),
            selected,
            plan,
            &self.decode,
        )
    }

    fn needs_spans(&self) -> bool {
        self.config.methods.iter().any(|m| m.uses_spans())
    }

    fn process(&self, instance: &Instance) -> Result<Vec<InstanceRow>> {
        let score = score_instance(self.backend.as_ref(), instance, self.config.max_tokens)?;
        let selected = self.needs_spans().then(|| self.selection(instance, true)).transpose()?;

        let seed = perturbation_seed(self.config.seeds.perturbation, &instance.id);
        let mut scored = Vec::new();
        for p in generate_perturbations(instance, self.resources.tagger.as_ref(), &self.resources.lexicon, seed) {
            let u = crate::uncertainty::UncertaintyScore(score.uncertainty);
            if let Some(p) = score_perturbation(self.backend.as_ref(), u, &p, self.config.max_tokens)? {
                scored.push(p);
            }
        }
        // Each perturbed input reruns the whole method, extraction included.
        let mut mentions = vec![Vec::with_capacity(scored.len()); self.config.methods.len()];
        for p in &scored {
            let sel = self
                .needs_spans()
                .then(|| self.selection(&p.perturbed_instance, false))
                .transpose()?;
            for (m, &method) in self.config.methods.iter().enumerate() {
                let nle = self.explain(&p.perturbed_instance, method, sel.as_ref())?;
                mentions[m].push(mention_flag(&nle, &p.inserted));
            }
        }

        let mut rows = Vec::with_capacity(self.config.methods.len());
        for (m, &method) in self.config.methods.iter().enumerate() {
            let nle = self.explain(instance, method, selected.as_ref())?;
            let (span_coverage_v, span_extraneous_v, reference_size, mentioned, extraneous) =
                match (&selected, method.uses_spans()) {
                    (Some(reference), true) => {
                        let found = extract_mentioned_spans(&nle, reference);
                        let (hit, extra) = (found.mentioned.len(), found.extraneous.len());
                        (
                            SpanMetric::Value(span_coverage(hit, reference.len())?),
                            SpanMetric::Value(span_extraneous(extra, hit + extra)),
                            Some(reference.len()),
                            Some(hit),
                            Some(extra),
                        )
                    }
                    _ => (SpanMetric::NotApplicable, SpanMetric::NotApplicable, None, None, None),
                };
            let lee = match lee_judgement(&nle, self.resources.scorer.as_ref()) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("entailment scoring failed for {} ({method}): {e}", instance.id);
                    None
                }
            };
            rows.push(InstanceRow {
                instance_id: instance.id.clone(),
                method,
                gold: instance.gold,
                uncertainty: score.uncertainty,
                model_prediction: score.prediction,
                prediction: nle.prediction,
                explanation: nle.explanation,
                steered: nle.steered,
                reference: selected.as_ref().filter(|_| method.uses_spans()).map(|s| {
                    s.iter()
                        .map(|it| (it.span_a.text.clone(), it.span_b.text.clone()))
                        .collect()
                }),
                reference_size,
                mentioned,
                extraneous,
                span_coverage: span_coverage_v,
                span_extraneous: span_extraneous_v,
                lee,
                perturbations: scored
                    .iter()
                    .zip(&mentions[m])
                    .map(|(p, &mention)| PerturbationRow {
                        part: p.part,
                        site: p.site,
                        inserted: p.inserted.clone(),
                        delta_u: p.delta_u.unwrap_or(0.0),
                        mention,
                    })
                    .collect(),
            });
        }
        Ok(rows)
    }
}

/// Dataset content address used to key the head-ranking cache.
pub fn dataset_id(path: &Path) -> Result<String> {
    Ok(file_hash(path)?[..16].to_string())
}

/// Steering plan for the run, from cache when possible.
pub fn steering_plan(
    config: &RunConfig,
    resources: &Resources,
    instances: &[Instance],
    dataset_id: &str,
) -> Result<Option<SteeringPlan>> {
    if !config.methods.contains(&Method::SpanSteering) {
        return Ok(None);
    }
    let s = config
        .steering
        .ok_or_else(|| Error::Validation("span+steering needs steering settings".into()))?;
    let backend = (resources.backend)()?;
    let validation = match &config.validation {
        Some(p) => load_dataset(p, &config.dataset_format()?)?,
        None => instances.to_vec(),
    };
    let pool_id = match &config.validation {
        Some(p) => crate::pipeline::dataset_id(p)?,
        None => dataset_id.to_string(),
    };
    let seed = config.seeds.ranking;
    let dir = config.cache_dir.as_ref().map(|d| d.join("ranking"));
    let cached = match &dir {
        Some(d) => RankingCacheEntry::load(d, &pool_id, backend.id(), s.sample_size, seed)?,
        None => None,
    };
    let ranking = match cached {
        Some(r) => r,
        None => {
            let r = rank_heads(backend.as_ref(), &validation, s.sample_size, seed)?;
            if let Some(d) = &dir {
                RankingCacheEntry {
                    dataset_id: pool_id,
                    backend_id: backend.id().to_string(),
                    sample_size: s.sample_size,
                    seed,
                    ranking: r.clone(),
                }
                .store(d)?;
            }
            r
        }
    };
    Ok(Some(SteeringPlan::new(ranking, s.head_count, s.beta)?))
}

/// Runs `work` over `items` on `workers` threads, each with its own session.
/// Results come back in input order.
fn pooled<'a, T, R: Send>(
    workers: usize,
    items: &[T],
    open: &(dyn Fn() -> Result<Session<'a>> + Sync),
    work: &(dyn Fn(&Session<'a>, &T) -> R + Sync),
) -> Result<Vec<R>>
where
    T: Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let threads = workers.clamp(1, items.len().max(1));
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| -> Result<()> {
                    let session = open()?;
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= items.len() {
                            return Ok(());
                        }
                        let r = work(&session, &items[i]);
                        slots.lock().expect("result slots")[i] = Some(r);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| Error::Run("worker panicked".into()))??;
        }
        Ok(())
    })?;
    Ok(slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect())
}

fn open_session<'a>(
    config: &'a RunConfig,
    resources: &'a Resources,
    plan: Option<&'a SteeringPlan>,
) -> Result<Session<'a>> {
    Ok(Session {
        backend: (resources.backend)()?,
        labeler: (resources.labeler)()?,
        resources,
        config,
        plan,
        decode: DecodeParams {
            seed: config.seeds.decode,
            ..DecodeParams::default()
        },
    })
}

/// Evaluates `instances` under every configured method.
pub fn run_instances(
    config: &RunConfig,
    resources: &Resources,
    instances: &[Instance],
    dataset_id: &str,
) -> Result<EvalReport> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::Validation("dataset has no instances".into()));
    }
    let plan = steering_plan(config, resources, instances, dataset_id)?;
    let open = || open_session(config, resources, plan.as_ref());
    let results = pooled(config.workers, instances, &open, &|s: &Session<'_>, inst: &Instance| {
        s.process(inst)
    })?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (inst, r) in instances.iter().zip(results) {
        match r {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => {
                log::warn!("instance {} failed: {e}", inst.id);
                failures.push(InstanceFailure {
                    instance_id: inst.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let rate = failures.len() as f64 / instances.len() as f64;
    if rate > MAX_FAILURE_RATE {
        return Err(Error::Run(format!(
            "{} of {} instances failed; first: {}: {}",
            failures.len(),
            instances.len(),
            failures[0].instance_id,
            failures[0].error
        )));
    }
    let methods = config
        .methods
        .iter()
        .map(|&m| summarize(m, &rows))
        .collect::<Result<Vec<_>>>()?;
    let backend_id = (resources.backend)()?.id().to_string();
    Ok(EvalReport {
        config_hash: config.config_hash()?,
        seeds: config.seeds,
        dataset_id: dataset_id.to_string(),
        backend_id,
        instance_count: instances.len(),
        methods,
        rows,
        failures,
    })
}

/// Loads the configured dataset and evaluates it.
pub fn run_pipeline(config: &RunConfig, resources: &Resources) -> Result<EvalReport> {
    config.validate()?;
    let instances = load_dataset(&config.dataset, &config.dataset_format()?)?;
    run_instances(config, resources, &instances, &dataset_id(&config.dataset)?)
}

/// Intermediate stages, each writing one JSONL artifact to the output
/// directory. Later stages recompute earlier ones through the caches, so
/// with a cache directory no backend or labeler call is repeated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Score,
    Extract,
    Label,
    Explain,
}

impl Stage {
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Ingest => "instances.jsonl",
            Stage::Score => "scores.jsonl",
            Stage::Extract => "interactions.jsonl",
            Stage::Label => "labeled.jsonl",
            Stage::Explain => "explanations.jsonl",
        }
    }
}

#[derive(Serialize)]
struct SetRecord<'a> {
    instance_id: &'a str,
    interactions: &'a InteractionSet,
}

#[derive(Serialize)]
struct ExplanationRecord<'a> {
    instance_id: &'a str,
    method: Method,
    output: &'a NLEOutput,
}

/// Runs one stage over the dataset and returns the artifact path. Failing
/// instances are logged and left out of the artifact.
pub fn run_stage(config: &RunConfig, resources: &Resources, stage: Stage) -> Result<PathBuf> {
    config.validate()?;
    let instances = load_dataset(&config.dataset, &config.dataset_format()?)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::file(&config.out_dir, e))?;
    let path = config.out_dir.join(stage.artifact());
    let lines: Vec<Result<Vec<String>>> = match stage {
        Stage::Ingest => instances.iter().map(|i| Ok(vec![serde_json::to_string(i)?])).collect(),
        _ => {
            let plan = if stage == Stage::Explain {
                steering_plan(config, resources, &instances, &dataset_id(&config.dataset)?)?
            } else {
                None
            };
            let open = || open_session(config, resources, plan.as_ref());
            pooled(
                config.workers,
                &instances,
                &open,
                &|s: &Session<'_>, inst: &Instance| stage_lines(s, inst, stage),
            )?
        }
    };
    let mut out = String::new();
    for (inst, r) in instances.iter().zip(lines) {
        match r {
            Ok(ls) => ls.into_iter().for_each(|l| {
                out.push_str(&l);
                out.push('\n');
            }),
            Err(e) => log::warn!("instance {} failed at {stage:?}: {e}", inst.id),
        }
    }
    std::fs::write(&path, out).map_err(|e| Error::file(&path, e))?;
    Ok(path)
}

fn stage_lines(s: &Session<'_>, inst: &Instance, stage: Stage) -> Result<Vec<String>> {
    Ok(match stage {
        Stage::Ingest => vec![serde_json::to_string(inst)?],
        Stage::Score => vec![serde_json::to_string(&score_instance(
            s.backend.as_ref(),
            inst,
            s.config.max_tokens,
        )?)?],
        Stage::Extract => {
            let set = s.interactions(inst, true)?;
            vec![serde_json::to_string(&SetRecord {
                instance_id: &inst.id,
                interactions: &set,
            })?]
        }
        Stage::Label => {
            let set = s.selection(inst, true)?;
            vec![serde_json::to_string(&SetRecord {
                instance_id: &inst.id,
                interactions: &set,
            })?]
        }
        Stage::Explain => {
            let selected = s.needs_spans().then(|| s.selection(inst, true)).transpose()?;
            s.config
                .methods
                .iter()
                .map(|&method| {
                    let output = s.explain(inst, method, selected.as_ref())?;
                    Ok(serde_json::to_string(&ExplanationRecord {
                        instance_id: &inst.id,
                        method,
                        output: &output,
                    })?)
                })
                .collect::<Result<Vec<_>>>()?
        }
    })
}

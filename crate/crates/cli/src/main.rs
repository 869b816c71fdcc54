//! `spanwise`: run the pipeline stages, evaluate methods and emit reports.

mod http;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spanwise_core::pipeline::{
    run_pipeline, run_stage, LabelerConfig, LabelerFactory, Method, Resources, RunConfig, Stage, SteeringConfig,
};
use spanwise_core::relations::TextEndpoint;
use spanwise_core::report::{emit_report, EvalReport};
use spanwise_core::synthetic::write_synthetic;

use crate::http::HttpLabeler;

#[derive(Parser)]
#[command(
    name = "spanwise",
    version,
    about = "Span-interaction explanations for claim/evidence verdicts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset and write instances.jsonl.
    Ingest(RunArgs),
    /// Score predictive uncertainty per instance.
    Score(RunArgs),
    /// Extract span interactions from the answer head.
    Extract(RunArgs),
    /// Select interactions and label their relations.
    Label(RunArgs),
    /// Generate explanations under every configured method.
    Explain(RunArgs),
    /// Run the full evaluation and write report.json.
    Evaluate(RunArgs),
    /// Emit tables and plots from a saved report.json.
    Report(ReportArgs),
    /// Every stage, the evaluation and the report.
    All(RunArgs),
    /// Write a seeded synthetic corpus and a ready-to-run config.json.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL dataset of {id, claim, evidence, gold} records.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Tab-separated raw-to-canonical label table.
    #[arg(long)]
    label_map: Option<PathBuf>,
    /// Head-ranking pool; the dataset itself when absent.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    backend: Option<String>,
    /// Mock backend fixture.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Comma-separated subset of baseline, span, span+steering.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Interactions per span prompt.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    head_count: Option<usize>,
    /// Validation instances sampled for head ranking.
    #[arg(long)]
    sample_size: Option<usize>,
    /// Sets every seed at once; the specific seed flags take precedence.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    extraction_seed: Option<u64>,
    #[arg(long)]
    perturbation_seed: Option<u64>,
    #[arg(long)]
    ranking_seed: Option<u64>,
    #[arg(long)]
    decode_seed: Option<u64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Directory with adjectives.txt and adverbs.txt.
    #[arg(long)]
    lexicon_dir: Option<PathBuf>,
    /// Word/tag table for the lookup tagger.
    #[arg(long)]
    pos_lexicon: Option<PathBuf>,
    /// Cache directory; defaults to <out-dir>/cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Chat-completions URL of a relation labeler; the rule labeler when absent.
    /// The bearer token is read from SPANWISE_LABELER_KEY.
    #[arg(long)]
    labeler_url: Option<String>,
    /// Model name sent to the labeler endpoint.
    #[arg(long, requires = "labeler_url")]
    labeler_model: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report; <out-dir>/report.json when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => {
                let dataset = self.dataset.clone().context("--dataset or --config is required")?;
                let fixture = self.fixture.clone().context("--fixture or --config is required")?;
                RunConfig::new(dataset, fixture, "out")
            }
        };
        let set = |slot: &mut PathBuf, v: &Option<PathBuf>| {
            if let Some(v) = v {
                slot.clone_from(v);
            }
        };
        set(&mut c.dataset, &self.dataset);
        set(&mut c.out_dir, &self.out_dir);
        for (slot, v) in [
            (&mut c.label_map, &self.label_map),
            (&mut c.validation, &self.validation),
            (&mut c.backend.fixture, &self.fixture),
            (&mut c.lexicon_dir, &self.lexicon_dir),
            (&mut c.pos_lexicon, &self.pos_lexicon),
            (&mut c.cache_dir, &self.cache_dir),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        if let Some(b) = &self.backend {
            c.backend.id.clone_from(b);
        }
        if let Some(m) = &self.methods {
            c.methods.clone_from(m);
        }
        c.k = self.k.or(c.k);
        c.max_tokens = self.max_tokens.or(c.max_tokens);
        c.workers = self.workers.unwrap_or(c.workers);
        if self.beta.is_some() || self.head_count.is_some() || self.sample_size.is_some() {
            let s = c.steering.get_or_insert_with(SteeringConfig::default);
            s.beta = self.beta.unwrap_or(s.beta);
            s.head_count = self.head_count.unwrap_or(s.head_count);
            s.sample_size = self.sample_size.unwrap_or(s.sample_size);
        }
        if let Some(s) = self.seed {
            c.seeds.extraction = s;
            c.seeds.perturbation = s;
            c.seeds.ranking = s;
            c.seeds.decode = s;
        }
        for (slot, v) in [
            (&mut c.seeds.extraction, self.extraction_seed),
            (&mut c.seeds.perturbation, self.perturbation_seed),
            (&mut c.seeds.ranking, self.ranking_seed),
            (&mut c.seeds.decode, self.decode_seed),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(url) = &self.labeler_url {
            c.labeler = LabelerConfig::Http {
                url: url.clone(),
                model: self
                    .labeler_model
                    .clone()
                    .context("--labeler-url needs --labeler-model")?,
            };
        }
        if c.cache_dir.is_none() {
            c.cache_dir = Some(c.out_dir.join("cache"));
        }
        c.validate()?;
        Ok(c)
    }
}

fn resources(config: &RunConfig) -> Result<Resources> {
    Ok(match &config.labeler {
        LabelerConfig::Rule => Resources::from_config(config)?,
        LabelerConfig::Http { url, model } => {
            let (url, model) = (url.clone(), model.clone());
            let factory: LabelerFactory =
                Box::new(move || Ok(Box::new(HttpLabeler::new(&url, &model)?) as Box<dyn TextEndpoint>));
            Resources::with_labeler(config, factory)?
        }
    })
}

fn write_report(report: &EvalReport, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn evaluate(config: &RunConfig) -> Result<EvalReport> {
    let report = run_pipeline(config, &resources(config)?)?;
    for f in &report.failures {
        log::warn!("skipped {}: {}", f.instance_id, f.error);
    }
    println!("{}", write_report(&report, &config.out_dir)?.display());
    Ok(report)
}

fn emit(report: &EvalReport, out_dir: &Path) -> Result<()> {
    for path in emit_report(report, out_dir)? {
        println!("{}", path.display());
    }
    for m in &report.methods {
        let faith = m.faithfulness.map_or("n/a".to_string(), |f| format!("{:.4}", f.r_pb));
        log::info!(
            "{}: faithfulness {faith}, coverage {}, extraneous {}",
            m.method,
            m.span_coverage,
            m.span_extraneous
        );
    }
    Ok(())
}

fn stage(args: &RunArgs, stage: Stage) -> Result<()> {
    let config = args.config()?;
    println!("{}", run_stage(&config, &resources(&config)?, stage)?.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => stage(&a, Stage::Ingest),
        Command::Score(a) => stage(&a, Stage::Score),
        Command::Extract(a) => stage(&a, Stage::Extract),
        Command::Label(a) => stage(&a, Stage::Label),
        Command::Explain(a) => stage(&a, Stage::Explain),
        Command::Evaluate(a) => evaluate(&a.config()?).map(drop),
        Command::Report(a) => {
            let path = a.report.unwrap_or_else(|| a.out_dir.join("report.json"));
            let report = EvalReport::load(&path).with_context(|| format!("loading {}", path.display()))?;
            emit(&report, &a.out_dir)
        }
        Command::All(a) => {
            let config = a.config()?;
            let res = resources(&config)?;
            for s in [
                Stage::Ingest,
                Stage::Score,
                Stage::Extract,
                Stage::Label,
                Stage::Explain,
            ] {
                println!("{}", run_stage(&config, &res, s)?.display());
            }
            emit(&run_pipeline(&config, &res)?, &config.out_dir)
        }
        Command::Synth(a) => {
            if a.n == 0 {
                bail!("--n must be at least 1");
            }
            let config = write_synthetic(&a.out, a.n, a.seed)?;
            let path = a.out.join("config.json");
            config.save(&path)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

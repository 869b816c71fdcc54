//! Per-instance rows, per-method aggregates and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evalkit::{entropy_cct, CCTResult};
use crate::instance::PartId;
use crate::label::Label;
use crate::pipeline::{Method, Seeds};

/// A span metric, or the explicit `"n/a"` marker for methods without spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpanMetric {
    NotApplicable,
    Value(f64),
}

impl SpanMetric {
    pub fn value(self) -> Option<f64> {
        match self {
            SpanMetric::Value(v) => Some(v),
            SpanMetric::NotApplicable => None,
        }
    }

    pub fn is_applicable(self) -> bool {
        self != SpanMetric::NotApplicable
    }
}

impl std::fmt::Display for SpanMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpanMetric::Value(v) => write!(f, "{v:.4}"),
            SpanMetric::NotApplicable => f.write_str("n/a"),
        }
    }
}

impl Serialize for SpanMetric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SpanMetric::Value(v) => s.serialize_f64(*v),
            SpanMetric::NotApplicable => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for SpanMetric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(SpanMetric::Value(v)),
            Repr::Text(t) if t == "n/a" => Ok(SpanMetric::NotApplicable),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"n/a\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub part: PartId,
    pub site: usize,
    pub inserted: String,
    pub delta_u: f64,
    /// Whether the explanation of the perturbed input mentions `inserted`.
    pub mention: bool,
}

/// One instance under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: String,
    pub method: Method,
    pub gold: Option<Label>,
    pub uncertainty: f64,
    /// Argmax of the scoring distribution.
    pub model_prediction: Label,
    /// Verdict stated in the explanation output.
    pub prediction: Label,
    pub explanation: String,
    pub steered: bool,
    /// Span texts given to the span prompt; absent for the baseline.
    pub reference: Option<Vec<(String, String)>>,
    pub reference_size: Option<usize>,
    pub mentioned: Option<usize>,
    pub extraneous: Option<usize>,
    pub span_coverage: SpanMetric,
    pub span_extraneous: SpanMetric,
    /// Absent when the entailment scorer failed.
    pub lee: Option<bool>,
    pub perturbations: Vec<PerturbationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub instances: usize,
    pub perturbations: usize,
    /// Entropy-CCT pooled over every perturbation of every instance.
    pub faithfulness: Option<CCTResult>,
    pub span_coverage: SpanMetric,
    pub span_extraneous: SpanMetric,
    pub lee: Option<f64>,
    pub lee_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seeds: Seeds,
    pub dataset_id: String,
    pub backend_id: String,
    pub instance_count: usize,
    pub methods: Vec<MethodSummary>,
    pub rows: Vec<InstanceRow>,
    pub failures: Vec<InstanceFailure>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregates of `method` recomputed from `rows`.
pub fn summarize(method: Method, rows: &[InstanceRow]) -> Result<MethodSummary> {
    let mine: Vec<&InstanceRow> = rows.iter().filter(|r| r.method == method).collect();
    let samples: Vec<(f64, bool)> = mine
        .iter()
        .flat_map(|r| r.perturbations.iter().map(|p| (p.delta_u, p.mention)))
        .collect();
    let faithfulness = if samples.is_empty() {
        None
    } else {
        Some(entropy_cct(&samples)?)
    };
    let metric = |f: fn(&InstanceRow) -> SpanMetric| {
        let values: Vec<f64> = mine.iter().filter_map(|r| f(r).value()).collect();
        mean(&values).map_or(SpanMetric::NotApplicable, SpanMetric::Value)
    };
    let judged: Vec<f64> = mine
        .iter()
        .filter_map(|r| r.lee.map(|b| if b { 1.0 } else { 0.0 }))
        .collect();
    Ok(MethodSummary {
        method,
        instances: mine.len(),
        perturbations: samples.len(),
        faithfulness,
        span_coverage: metric(|r| r.span_coverage),
        span_extraneous: metric(|r| r.span_extraneous),
        lee: mean(&judged),
        lee_scored: judged.len(),
    })
}

impl EvalReport {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn rows_of(&self, method: Method) -> impl Iterator<Item = &InstanceRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn recompute(&self) -> Result<Vec<MethodSummary>> {
        self.methods.iter().map(|m| summarize(m.method, &self.rows)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rows as JSON lines, one per instance and method.
    pub fn rows_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    fn provenance(&self) -> String {
        let s = &self.seeds;
        format!(
            "config {} | seeds extraction={} perturbation={} ranking={} decode={}",
            self.config_hash, s.extraction, s.perturbation, s.ranking, s.decode
        )
    }
}

#[derive(Serialize)]
struct RowsHeader<'a> {
    config_hash: &'a str,
    seeds: &'a Seeds,
}

/// Writes `report.json`, `rows.jsonl`, `summary.csv`, `summary.md` and one
/// bar chart per metric. Every file carries the config hash and seeds.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Validation("report has no per-instance rows".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
        written.push(path);
        Ok(())
    };

    put("report.json", serde_json::to_string_pretty(report)?)?;
    let header = serde_json::to_string(&RowsHeader {
        config_hash: &report.config_hash,
        seeds: &report.seeds,
    })?;
    put("rows.jsonl", format!("{header}\n{}", report.rows_jsonl()?))?;
    put("summary.csv", summary_csv(report)?)?;
    put("summary.md", summary_md(report))?;
    for (name, title, pick) in PLOTS {
        let bars: Vec<(String, Option<f64>)> = report.methods.iter().map(|m| (m.method.to_string(), pick(m))).collect();
        put(name, bar_chart(title, &bars, &report.provenance()))?;
    }
    Ok(written)
}

type Pick = fn(&MethodSummary) -> Option<f64>;

const PLOTS: [(&str, &str, Pick); 4] = [
    ("faithfulness.svg", "Entropy-CCT r_pb", |m| {
        m.faithfulness.map(|c| c.r_pb)
    }),
    ("span_coverage.svg", "Span-Coverage", |m| m.span_coverage.value()),
    ("span_extraneous.svg", "Span-Extraneous", |m| m.span_extraneous.value()),
    ("lee.svg", "Label-explanation entailment", |m| m.lee),
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v}"))
}

fn summary_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record([
        "method",
        "instances",
        "perturbations",
        "faith_r_pb",
        "faith_t",
        "faith_p",
        "span_coverage",
        "span_extraneous",
        "lee",
        "config_hash",
        "seed_extraction",
        "seed_perturbation",
        "seed_ranking",
        "seed_decode",
    ])
    .map_err(csv_err)?;
    let s = &report.seeds;
    for m in &report.methods {
        let f = m.faithfulness;
        w.write_record([
            m.method.to_string(),
            m.instances.to_string(),
            m.perturbations.to_string(),
            opt(f.map(|c| c.r_pb)),
            opt(f.map(|c| c.t_stat)),
            opt(f.map(|c| c.p_value)),
            opt(m.span_coverage.value()),
            opt(m.span_extraneous.value()),
            opt(m.lee),
            report.config_hash.clone(),
            s.extraction.to_string(),
            s.perturbation.to_string(),
            s.ranking.to_string(),
            s.decode.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn summary_md(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation summary\n");
    let _ = writeln!(out, "- dataset: `{}`", report.dataset_id);
    let _ = writeln!(out, "- backend: `{}`", report.backend_id);
    let _ = writeln!(
        out,
        "- instances: {} ({} failed)",
        report.instance_count,
        report.failures.len()
    );
    let _ = writeln!(out, "- {}\n", report.provenance());
    let _ = writeln!(
        out,
        "| method | faith r_pb | t | p | coverage | extraneous | LEE | perturbations |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    let num = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    for m in &report.methods {
        let f = m.faithfulness;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            m.method,
            num(f.map(|c| c.r_pb)),
            num(f.map(|c| c.t_stat)),
            num(f.map(|c| c.p_value)),
            m.span_coverage,
            m.span_extraneous,
            num(m.lee),
            m.perturbations
        );
    }
    if !report.failures.is_empty() {
        let _ = writeln!(out, "\n## Failed instances\n");
        for f in &report.failures {
            let _ = writeln!(out, "- `{}`: {}", f.instance_id, f.error);
        }
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Static bar chart with one bar per method; missing values are labelled n/a.
pub fn bar_chart(title: &str, bars: &[(String, Option<f64>)], footer: &str) -> String {
    const W: f64 = 520.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 70.0;
    let values: Vec<f64> = bars.iter().filter_map(|b| b.1).collect();
    let lo = values.iter().copied().fold(0.0, f64::min);
    let mut hi = values.iter().copied().fold(0.0, f64::max);
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let plot_h = H - TOP - BOTTOM;
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<!-- {} -->", escape(footer));
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for tick in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{tick:.3}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y(tick) + 4.0,
            y = y(tick)
        );
    }
    let zero = y(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" x2="{}" y1="{zero:.1}" y2="{zero:.1}" stroke="#333"/>"##,
        W - RIGHT
    );
    for (i, (name, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let bw = slot * 0.6;
        let cx = x + bw / 2.0;
        match v {
            Some(v) => {
                let (top, h) = if *v >= 0.0 {
                    (y(*v), zero - y(*v))
                } else {
                    (zero, y(*v) - zero)
                };
                let _ = writeln!(
                    s,
                    r##"<rect x="{x:.1}" y="{top:.1}" width="{bw:.1}" height="{h:.1}" fill="#4a78b0"/><text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"##,
                    top - 4.0
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    r##"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="#888">n/a</text>"##,
                    zero - 6.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 20.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="middle" font-size="10" fill="#666">{}</text>"##,
        W / 2.0,
        H - 12.0,
        escape(footer)
    );
    s.push_str("</svg>\n");
    s
}

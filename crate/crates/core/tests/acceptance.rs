//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! tolerance and exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanwise_core::assemble::PartSpan;
use spanwise_core::backend::MockBackend;
use spanwise_core::dataset::write_dataset;
use spanwise_core::evalkit::{
    cct_significance, entropy_cct, generate_perturbations, LookupTagger, ModifierLexicon, PosTag, PosTagger,
};
use spanwise_core::interactions::{
    extract_interactions, louvain, select_for_prompt, span_importance, CrossScores, WeightedGraph,
};
use spanwise_core::nle::{build_span_prompt, format_output, parse_prediction_and_explanation};
use spanwise_core::pipeline::{run_pipeline, scoring_input, Method, Resources, RunConfig, SteeringConfig};
use spanwise_core::relations::{label_interactions, MockLabeler};
use spanwise_core::report::{emit_report, EvalReport, SpanMetric};
use spanwise_core::steering::{steer_matrix, target_mass, TargetIndexSet};
use spanwise_core::synthetic::synthetic_corpus;
use spanwise_core::uncertainty::{label_distribution, predictive_entropy};
use spanwise_core::{AttentionMatrix, Backend, HeadId, Instance, Label, PartId, PartPair, PartRange};

type Outcome = Result<(), String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);
/// Entropy changes, mention indicators and `(instance, site, word)` keys.
type Samples = (Vec<f64>, Vec<f64>, Vec<(String, usize, String)>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    }};
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    ensure!(elapsed < limit, "took {elapsed:.2?}, limit {limit:?}");
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn entropy_math() -> Outcome {
    let start = Instant::now();
    let entropy = |logits: [f64; 3]| -> Result<f64, String> {
        let map = Label::ALL.into_iter().zip(logits).collect();
        Ok(predictive_entropy(&ok(label_distribution(&map))?).value())
    };
    let uniform = entropy([0.7, 0.7, 0.7])?;
    ensure!((uniform - 3f64.ln()).abs() <= 1e-9, "uniform entropy {uniform}");
    let one_hot = entropy([0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]).or_else(|_| entropy([0.0, -1e4, -1e4]))?;
    ensure!(one_hot.abs() <= 1e-9, "one-hot entropy {one_hot}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let l: [f64; 3] = std::array::from_fn(|_| rng.random_range(-20.0..20.0));
        let c = rng.random_range(-100.0..100.0);
        let shifted = l.map(|v| v + c);
        let (a, b) = (entropy(l)?, entropy(shifted)?);
        ensure!((a - b).abs() <= 1e-9, "triple {i}: {a} vs {b} after shift {c}");
        ensure!(
            (0.0..=3f64.ln() + 1e-12).contains(&a),
            "triple {i}: entropy {a} out of range"
        );
    }
    within(start.elapsed(), Duration::from_secs(1))
}

fn span_importance_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pair = ok(PartPair::new(PartId::Claim, PartId::Evidence(0)))?;
    for fixture in 0..200 {
        let (la, lb) = (rng.random_range(1..12), rng.random_range(1..12));
        let a0 = rng.random_range(0..20);
        let b0 = a0 + la + rng.random_range(0..5);
        let raw: Vec<Vec<f64>> = (0..la)
            .map(|_| (0..lb).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let from = PartRange {
            part: PartId::Claim,
            start: a0,
            end: a0 + la,
        };
        let to = PartRange {
            part: PartId::Evidence(0),
            start: b0,
            end: b0 + lb,
        };
        let cs = ok(CrossScores::new(pair, from, to, raw.clone()))?;

        let (sa, ea) = {
            let s = rng.random_range(0..la);
            (s, rng.random_range(s + 1..=la))
        };
        let (sb, eb) = {
            let s = rng.random_range(0..lb);
            (s, rng.random_range(s + 1..=lb))
        };
        let span = |part, start, end| PartSpan {
            part,
            start,
            end,
            text: String::new(),
        };
        let got = ok(span_importance(
            &cs,
            &span(PartId::Claim, a0 + sa, a0 + ea),
            &span(PartId::Evidence(0), b0 + sb, b0 + eb),
        ))?;

        let mut total = 0.0;
        let mut count = 0usize;
        for row in &raw[sa..ea] {
            for v in &row[sb..eb] {
                total += v;
                count += 1;
            }
        }
        let want = total / count as f64;
        ensure!((got - want).abs() <= 1e-12, "fixture {fixture}: {got} vs {want}");
    }
    Ok(())
}

/// Modularity straight from the adjacency matrix.
fn oracle_modularity(adj: &[Vec<f64>], membership: &[usize]) -> f64 {
    let k: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..adj.len() {
        for j in 0..adj.len() {
            if membership[i] == membership[j] {
                q += adj[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as a restricted growth string.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for c in 0..=next {
            prefix.push(c);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

fn canonical(membership: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    membership
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

// Symmetric adjacency is filled by index on purpose.
#[allow(clippy::needless_range_loop)]
fn louvain_small_graphs() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut unique = 0;
    for fixture in 0..50 {
        let left = rng.random_range(1..=4);
        let right = rng.random_range(1..=(8 - left).min(4));
        let n = left + right;
        let mut adj = vec![vec![0.0; n]; n];
        let mut graph = WeightedGraph::new(n);
        let mut edges = 0;
        while edges == 0 {
            for u in 0..left {
                for v in left..n {
                    if adj[u][v] == 0.0 && rng.random_bool(0.55) {
                        let w = rng.random_range(0.05..1.0);
                        adj[u][v] = w;
                        adj[v][u] = w;
                        graph.add_edge(u, v, w);
                        edges += 1;
                    }
                }
            }
        }
        let found = louvain(&graph, 1.0, fixture);
        ensure!(
            found.len() == n,
            "fixture {fixture}: membership has {} entries",
            found.len()
        );
        let q = oracle_modularity(&adj, &found);
        let singleton = oracle_modularity(&adj, &(0..n).collect::<Vec<_>>());
        ensure!(
            q >= singleton - 1e-12,
            "fixture {fixture}: {q} below singleton {singleton}"
        );

        let scored: Vec<(f64, Vec<usize>)> = set_partitions(n)
            .into_iter()
            .map(|p| (oracle_modularity(&adj, &p), p))
            .collect();
        let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let optima: Vec<&Vec<usize>> = scored.iter().filter(|s| s.0 >= best - 1e-9).map(|s| &s.1).collect();
        if optima.len() == 1 {
            unique += 1;
            ensure!(
                (q - best).abs() <= 1e-9,
                "fixture {fixture}: modularity {q}, optimum {best}"
            );
            ensure!(
                &canonical(&found) == optima[0],
                "fixture {fixture}: partition {found:?}, optimum {:?}",
                optima[0]
            );
        }
    }
    ensure!(unique > 0, "no fixture had a unique optimum");
    println!("      {unique} of 50 fixtures have a unique optimum");
    within(start.elapsed(), Duration::from_secs(30))
}

fn random_attention(rng: &mut ChaCha8Rng, n: usize) -> Result<AttentionMatrix, String> {
    let weights = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = row.iter().sum();
            row.into_iter().map(|v| v / z).collect()
        })
        .collect();
    ok(AttentionMatrix::new(HeadId::new(0, 0), weights))
}

fn steering_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let betas = [1.0, 0.5, 0.1, 0.01];
    for m in 0..100 {
        let n = rng.random_range(2..10);
        let a = random_attention(&mut rng, n)?;
        let mut indices: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        indices.insert(rng.random_range(0..n));
        let targets = TargetIndexSet { indices };

        let same = ok(steer_matrix(&a, &targets, 1.0))?;
        ensure!(same.weights == a.weights, "matrix {m}: beta 1 changed the input");
        let mut previous = f64::NEG_INFINITY;
        for beta in betas {
            let s = ok(steer_matrix(&a, &targets, beta))?;
            for (i, row) in s.weights.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                ensure!(
                    (sum - 1.0).abs() <= 1e-9,
                    "matrix {m}, beta {beta}, row {i} sums to {sum}"
                );
            }
            let mass = target_mass(&s, &targets.indices);
            ensure!(
                mass >= previous - 1e-12,
                "matrix {m}: target mass fell to {mass} at beta {beta}"
            );
            previous = mass;
        }
    }
    let a = ok(AttentionMatrix::new(
        HeadId::new(0, 0),
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
    ))?;
    let s = ok(steer_matrix(
        &a,
        &TargetIndexSet {
            indices: BTreeSet::from([0]),
        },
        0.01,
    ))?;
    let row = &s.weights[0];
    ensure!(
        (row[0] - 0.990099).abs() <= 1e-6 && (row[1] - 0.009901).abs() <= 1e-6,
        "worked row gave {row:?}"
    );
    Ok(())
}

fn cct_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 500 {
        let n = rng.random_range(3..80);
        let samples: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random_range(0.0..2.0), rng.random_bool(0.4)))
            .collect();
        let r = ok(entropy_cct(&samples))?;
        if r.degenerate {
            continue;
        }
        let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let y: Vec<f64> = samples.iter().map(|s| f64::from(u8::from(s.1))).collect();
        let want = pearson(&x, &y);
        ensure!(
            (r.r_pb - want).abs() <= 1e-12,
            "sample set {checked}: {} vs {want}",
            r.r_pb
        );
        checked += 1;
    }
    let degenerate: [&[(f64, bool)]; 3] = [
        &[(0.1, true), (0.4, true), (0.2, true)],
        &[(0.1, false), (0.4, false), (0.2, false)],
        &[(0.3, true), (0.3, false), (0.3, false)],
    ];
    for (i, s) in degenerate.iter().enumerate() {
        let r = ok(entropy_cct(s))?;
        ensure!(
            r.r_pb == 0.0 && r.degenerate,
            "degenerate case {i} gave r = {}, flag {}",
            r.r_pb,
            r.degenerate
        );
    }
    Ok(())
}

fn significance() -> Outcome {
    for (r, want) in [(0.033, 2.80), (0.102, 8.70)] {
        let (t, p) = ok(cct_significance(r, 7200))?;
        ensure!((t - want).abs() <= 0.01, "r = {r}: t = {t}, expected {want}");
        ensure!(p > 0.0 && p < 0.01, "r = {r}: p = {p}");
    }
    Ok(())
}

fn health_instances() -> Result<Vec<Instance>, String> {
    let raw = [
        (
            "h1",
            "Zinc shortens colds in adults.",
            vec!["A trial found zinc lozenges reduce symptoms.", "Doses vary."],
        ),
        (
            "h2",
            "Coffee causes cancer.",
            vec!["Studies report no increase in risk.", "People drink coffee daily."],
        ),
        (
            "h3",
            "Exercise improves sleep and lowers weight.",
            vec!["Patients showed better sleep.", "The report shows weight effects."],
        ),
        (
            "h4",
            "Masks prevent the spread of viruses.",
            vec!["Evidence shows masks protect people.", "Infection rates fell."],
        ),
        (
            "h5",
            "Vitamin supplements cure illness.",
            vec!["No study shows vitamin supplements help patients.", "Illness persists."],
        ),
    ];
    raw.into_iter()
        .map(|(id, claim, ev)| {
            ok(Instance::new(
                id,
                claim,
                ev.into_iter().map(String::from).collect(),
                None,
            ))
        })
        .collect()
}

fn perturbation_protocol() -> Outcome {
    let tagger = LookupTagger::builtin();
    let lexicon = ModifierLexicon::builtin();
    let word_after =
        |text: &str, at: usize| -> String { text[at..].chars().take_while(|c| c.is_alphanumeric()).collect() };
    for inst in health_instances()? {
        let sites: usize = inst
            .parts()
            .into_iter()
            .map(|p| {
                let text = inst.part_text(p).unwrap_or_default();
                let words: Vec<&str> = text
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .collect();
                tagger.tag(&words).into_iter().filter(|t| *t != PosTag::Other).count()
            })
            .sum();
        ensure!(sites >= 4, "instance {} has only {sites} sites", inst.id);
        let ps = generate_perturbations(&inst, &tagger, &lexicon, 11);
        ensure!(ps.len() == 12, "instance {}: {} perturbations", inst.id, ps.len());
        for p in &ps {
            let text = p.perturbed_instance.part_text(p.part).unwrap_or_default();
            let host = word_after(text, p.offset + p.inserted.len() + 1);
            let host_tag = tagger.tag(&[host.as_str()])[0];
            let is_adjective = lexicon.adjectives().contains(&p.inserted);
            let is_adverb = lexicon.adverbs().contains(&p.inserted);
            match host_tag {
                PosTag::Noun => ensure!(is_adjective, "{:?} inserted before noun {host:?}", p.inserted),
                PosTag::Verb => ensure!(is_adverb, "{:?} inserted before verb {host:?}", p.inserted),
                PosTag::Other => return Err(format!("{:?} inserted before untagged {host:?}", p.inserted)),
            }
            let restored = ok(p.restore())?;
            ensure!(
                restored == inst,
                "instance {}: restore of {:?} differs",
                inst.id,
                p.inserted
            );
            for part in inst.parts() {
                ensure!(
                    restored.part_text(part).map(str::as_bytes) == inst.part_text(part).map(str::as_bytes),
                    "instance {}: part {part} not byte-exact",
                    inst.id
                );
            }
        }
        ensure!(
            ps == generate_perturbations(&inst, &tagger, &lexicon, 11),
            "instance {}: same seed differs",
            inst.id
        );
    }
    Ok(())
}

fn synthetic_setup(dir: &Path, n: usize) -> Result<(RunConfig, Resources), String> {
    let corpus = ok(synthetic_corpus(n, 7))?;
    let data = dir.join("synthetic.jsonl");
    ok(write_dataset(&data, &corpus.instances))?;
    let fixture = dir.join("fixture.json");
    ok(corpus.fixture.save(&fixture))?;
    let mut config = RunConfig::new(&data, &fixture, dir.join("out"));
    config.steering = Some(SteeringConfig {
        head_count: 4,
        ..SteeringConfig::default()
    });
    let mut resources = ok(Resources::from_config(&config))?;
    resources.tagger = Box::new(corpus.tagger);
    resources.lexicon = corpus.lexicon;
    Ok((config, resources))
}

fn synthetic_report(n: usize) -> Result<EvalReport, String> {
    let dir = ok(tempfile::tempdir())?;
    let (config, resources) = synthetic_setup(dir.path(), n)?;
    ok(run_pipeline(&config, &resources))
}

fn end_to_end_determinism() -> Outcome {
    let start = Instant::now();
    let first = synthetic_report(20)?;
    let second = synthetic_report(20)?;
    ensure!(first.instance_count == 20, "{} instances", first.instance_count);
    ensure!(first.failures.is_empty(), "failures: {:?}", first.failures);
    ensure!(first.rows.len() == 60, "{} rows", first.rows.len());
    for m in Method::ALL {
        let s = first.method(m).ok_or(format!("no summary for {m}"))?;
        ensure!(s.instances == 20, "{m}: {} instances", s.instances);
        ensure!(s.faithfulness.is_some(), "{m}: no faithfulness score");
        let applicable = m.uses_spans();
        for metric in [s.span_coverage, s.span_extraneous] {
            ensure!(metric.is_applicable() == applicable, "{m}: span metric {metric}");
        }
        for row in first.rows_of(m) {
            ensure!(
                row.span_coverage.is_applicable() == applicable,
                "{m} row {}: coverage {}",
                row.instance_id,
                row.span_coverage
            );
        }
    }
    let baseline = first.method(Method::Baseline).ok_or("no baseline")?;
    ensure!(
        baseline.span_coverage == SpanMetric::NotApplicable,
        "baseline coverage {}",
        baseline.span_coverage
    );

    let (a, b) = (ok(first.rows_jsonl())?, ok(second.rows_jsonl())?);
    ensure!(a == b, "per-instance rows differ between runs");
    let (da, db) = (ok(tempfile::tempdir())?, ok(tempfile::tempdir())?);
    ok(emit_report(&first, da.path()))?;
    ok(emit_report(&second, db.path()))?;
    let read = |d: &Path| std::fs::read(d.join("rows.jsonl")).map_err(|e| e.to_string());
    ensure!(read(da.path())? == read(db.path())?, "emitted rows.jsonl differ");

    let recomputed = ok(first.recompute())?;
    for (r, s) in recomputed.iter().zip(&first.methods) {
        let (x, y) = (r.faithfulness.map(|f| f.r_pb), s.faithfulness.map(|f| f.r_pb));
        ensure!(
            matches!((x, y), (Some(x), Some(y)) if (x - y).abs() <= 1e-9),
            "{}: recomputed {x:?} vs {y:?}",
            s.method
        );
    }
    within(start.elapsed(), Duration::from_secs(120))
}

fn directional_sanity() -> Outcome {
    let report = synthetic_report(20)?;
    let samples = |m: Method| -> Samples {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut keys = Vec::new();
        for row in report.rows_of(m) {
            for p in &row.perturbations {
                x.push(p.delta_u);
                y.push(if p.mention { 1.0 } else { 0.0 });
                keys.push((row.instance_id.clone(), p.site, p.inserted.clone()));
            }
        }
        (x, y, keys)
    };
    let (bx, by, bkeys) = samples(Method::Baseline);
    let (sx, sy, skeys) = samples(Method::SpanSteering);
    ensure!(bkeys == skeys && bx == sx, "methods saw different perturbation sets");

    let steered = report.method(Method::SpanSteering).ok_or("no span+steering summary")?;
    let baseline = report.method(Method::Baseline).ok_or("no baseline summary")?;
    ensure!(
        steered.span_coverage == SpanMetric::Value(1.0),
        "span+steering coverage {}",
        steered.span_coverage
    );
    ensure!(
        baseline.span_coverage == SpanMetric::NotApplicable,
        "baseline coverage {}",
        baseline.span_coverage
    );

    let by_hand = |x: &[f64], y: &[f64]| {
        let varies = |v: &[f64]| v.iter().any(|a| *a != v[0]);
        if varies(x) && varies(y) {
            pearson(x, y)
        } else {
            0.0
        }
    };
    let (r_base, r_steer) = (by_hand(&bx, &by), by_hand(&sx, &sy));
    let reported = |s: &spanwise_core::report::MethodSummary| s.faithfulness.map(|f| f.r_pb).ok_or("no faithfulness");
    let (rep_base, rep_steer) = (reported(baseline)?, reported(steered)?);
    ensure!(
        (r_base - rep_base).abs() <= 1e-12,
        "baseline r: hand {r_base} vs reported {rep_base}"
    );
    ensure!(
        (r_steer - rep_steer).abs() <= 1e-12,
        "span+steering r: hand {r_steer} vs reported {rep_steer}"
    );
    ensure!(
        r_steer > r_base,
        "span+steering r {r_steer} not above baseline {r_base}"
    );
    let mentions_with_change = sx.iter().zip(&sy).filter(|(_, m)| **m == 1.0).all(|(d, _)| *d > 0.0);
    ensure!(mentions_with_change, "a steered mention has zero entropy change");
    println!("      baseline r = {r_base:.4}, span+steering r = {r_steer:.4}");
    Ok(())
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ,.;:'\"()[]-"
        .chars()
        .collect();
    for i in 0..100 {
        let label = Label::ALL[rng.random_range(0..3)];
        let len = rng.random_range(0..80);
        let body: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let explanation = format!("x{}x", body.trim());
        let raw = format_output(label, &explanation);
        let parsed = ok(parse_prediction_and_explanation(&raw))?;
        ensure!(
            parsed == (label, explanation.clone()),
            "pair {i}: {raw:?} parsed as {parsed:?}"
        );
    }

    let corpus = ok(synthetic_corpus(10, 9))?;
    let backend = MockBackend::new(corpus.fixture);
    let mut prompts = 0;
    for inst in &corpus.instances {
        let input = ok(scoring_input(&backend as &dyn Backend, inst, None))?;
        let all = ok(extract_interactions(&backend, &input, 0))?;
        let chosen = select_for_prompt(&all, inst.evidence.len());
        ensure!(!chosen.is_empty(), "instance {}: nothing selected", inst.id);
        let labeled = ok(label_interactions(&MockLabeler, inst, &chosen))?;
        let prompt = ok(build_span_prompt(inst, &labeled))?;
        for it in labeled.iter() {
            for text in [&it.span_a.text, &it.span_b.text] {
                ensure!(
                    prompt.contains(text.as_str()),
                    "instance {}: span {text:?} missing from prompt",
                    inst.id
                );
            }
        }
        prompts += 1;
    }
    ensure!(prompts == 10, "{prompts} prompts checked");
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "entropy math",
            "ln 3 and shift invariance within 1e-9, < 1 s",
            entropy_math,
        ),
        (
            "span importance oracle",
            "200 fixtures within 1e-12",
            span_importance_oracle,
        ),
        (
            "louvain small graphs",
            "50 fixtures, unique optima within 1e-9, < 30 s",
            louvain_small_graphs,
        ),
        (
            "steering formula",
            "rows within 1e-9, worked row within 1e-6",
            steering_formula,
        ),
        ("entropy-CCT identity", "500 sample sets within 1e-12", cct_identity),
        ("significance", "t = 2.80 and 8.70 within 0.01", significance),
        (
            "perturbation protocol",
            "12 per instance, byte-exact restore",
            perturbation_protocol,
        ),
        (
            "end-to-end determinism",
            "20 instances x 3 methods, identical rows, < 2 min",
            end_to_end_determinism,
        ),
        (
            "directional sanity",
            "coverage 1.0, r above baseline, hand r within 1e-12",
            directional_sanity,
        ),
        (
            "parser and prompt round trips",
            "100 pairs, spans verbatim",
            round_trips,
        ),
    ];
    let mut failed = 0;
    for (i, (name, tolerance, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        match outcome {
            Ok(()) => println!("PASS  [{}] {name} ({tolerance}) in {elapsed:.2?}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL  [{}] {name} ({tolerance}) in {elapsed:.2?}: {e}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

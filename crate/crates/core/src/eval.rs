//! Answer parsing and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::TaskKind;
use crate::error::{Error, Result};
use crate::seed::SeedDeriver;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

fn normalize(text: &str) -> String {
    text.trim()
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .trim_end()
        .to_lowercase()
}

/// Exact match against a closed vocabulary after trimming, stripping
/// terminal punctuation and case folding. Returns the canonical label.
pub fn parse_class_answer(text: &str, vocabulary: &[&str]) -> Option<String> {
    let key = normalize(text);
    vocabulary
        .iter()
        .find(|v| normalize(v) == key)
        .map(|v| v.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    StepsPerMin,
    MetersPerSecond,
    Seconds,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::StepsPerMin => "steps/min",
            Unit::MetersPerSecond => "m/s",
            Unit::Seconds => "s",
        }
    }

    pub fn for_task(task: TaskKind) -> Option<Unit> {
        match task.unit()? {
            "steps/min" => Some(Unit::StepsPerMin),
            "m/s" => Some(Unit::MetersPerSecond),
            _ => Some(Unit::Seconds),
        }
    }
}

fn numeric_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"([+-]?\d+(?:\.\d+)?)\s*(steps/min|m/s|s)\b").expect("valid regex")
    })
}

/// First `number unit` occurrence in the text.
pub fn parse_numeric_answer(text: &str) -> Option<(f64, Unit)> {
    let caps = numeric_regex().captures(text)?;
    let value: f64 = caps[1].parse().ok()?;
    let unit = match &caps[2] {
        "steps/min" => Unit::StepsPerMin,
        "m/s" => Unit::MetersPerSecond,
        _ => Unit::Seconds,
    };
    Some((value, unit))
}

/// Numeric answer whose unit matches the task; anything else is unparsed.
pub fn parse_numeric_for_task(task: TaskKind, text: &str) -> Option<f64> {
    let (v, unit) = parse_numeric_answer(text)?;
    (Some(unit) == Unit::for_task(task)).then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// Rows are truth, columns prediction.
    pub counts: Vec<Vec<u64>>,
    /// Unparsed predictions per truth row.
    pub unparsed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn unparsed_count(&self) -> u64 {
        self.unparsed.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unparsed_count()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() + self.unparsed[i]
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F1Mode<'a> {
    /// Mean per-class F1 over classes present in truth or predictions.
    Macro,
    /// F1 of one positive label.
    Positive(&'a str),
}

impl<'a> F1Mode<'a> {
    pub fn for_task(task: TaskKind) -> F1Mode<'static> {
        if task.is_binary() {
            F1Mode::Positive("Yes")
        } else {
            F1Mode::Macro
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub matrix: ConfusionMatrix,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores parsed predictions (`None` = unparsed) against truth labels.
pub fn classification_report(
    predictions: &[Option<String>],
    truth: &[String],
    vocabulary: &[&str],
    mode: F1Mode<'_>,
) -> Result<ClassificationReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("nothing to score".into()));
    }
    if vocabulary.is_empty() {
        return Err(Error::Contract("empty vocabulary".into()));
    }
    let index: BTreeMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, i))
        .collect();
    let lookup = |label: &str| {
        index
            .get(label)
            .copied()
            .ok_or_else(|| Error::Contract(format!("label {label:?} outside vocabulary")))
    };
    let k = vocabulary.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut unparsed = vec![0u64; k];
    for (p, t) in predictions.iter().zip(truth) {
        let row = lookup(t)?;
        match p {
            Some(p) => counts[row][lookup(p)?] += 1,
            None => unparsed[row] += 1,
        }
    }
    let matrix = ConfusionMatrix {
        labels: vocabulary.iter().map(|v| v.to_string()).collect(),
        counts,
        unparsed,
    };
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = matrix.counts[c][c];
            let predicted = matrix.column_total(c);
            let support = matrix.row_total(c);
            let fp = predicted - tp;
            let fn_ = support - tp;
            ClassMetrics {
                label: vocabulary[c].to_string(),
                precision: ratio(tp, predicted),
                recall: ratio(tp, support),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                support,
            }
        })
        .collect();
    let f1 = match mode {
        F1Mode::Macro => {
            let present: Vec<f64> = (0..k)
                .filter(|&c| matrix.row_total(c) > 0 || matrix.column_total(c) > 0)
                .map(|c| per_class[c].f1)
                .collect();
            present.iter().sum::<f64>() / present.len() as f64
        }
        F1Mode::Positive(label) => {
            let c = lookup(label)?;
            let tp = matrix.counts[c][c];
            let denom = matrix.row_total(c) + matrix.column_total(c);
            if denom == 0 {
                // no positives anywhere: perfect only when nothing went wrong
                let correct: u64 = (0..k).map(|i| matrix.counts[i][i]).sum();
                if correct == matrix.total() {
                    1.0
                } else {
                    0.0
                }
            } else {
                2.0 * tp as f64 / denom as f64
            }
        }
    };
    Ok(ClassificationReport {
        matrix,
        f1,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    pub pearson_r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub excluded_unparsed: usize,
}

struct Centered {
    x: Vec<f64>,
    y: Vec<f64>,
    sxx: f64,
    syy: f64,
}

fn center(x: &[f64], y: &[f64]) -> Result<Centered> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let x: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let y: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in one of the vectors".into(),
        ));
    }
    Ok(Centered { x, y, sxx, syy })
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract("vectors differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("need at least two pairs".into()));
    }
    let c = center(x, y)?;
    let sxy: f64 = c.x.iter().zip(&c.y).map(|(a, b)| a * b).sum();
    Ok((sxy / (c.sxx * c.syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson r, least-squares fit of predicted on truth, and a two-sided
/// permutation p-value `(count(|r_perm| >= |r|) + 1) / (permutations + 1)`.
pub fn regression_report(
    predicted: &[Option<f64>],
    truth: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<RegressionReport> {
    if predicted.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truth values",
            predicted.len(),
            truth.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = predicted
        .iter()
        .zip(truth)
        .filter_map(|(p, t)| p.map(|p| (p, *t)))
        .collect();
    let excluded_unparsed = predicted.len() - pairs.len();
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} parsed pairs, need at least 3",
            pairs.len()
        )));
    }
    let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
    let t: Vec<f64> = pairs.iter().map(|x| x.1).collect();
    let c = center(&t, &p)?;
    let sxy: f64 = c.x.iter().zip(&c.y).map(|(a, b)| a * b).sum();
    let r = (sxy / (c.sxx * c.syy).sqrt()).clamp(-1.0, 1.0);
    let slope = sxy / c.sxx;
    let mean_t = t.iter().sum::<f64>() / t.len() as f64;
    let mean_p = p.iter().sum::<f64>() / p.len() as f64;
    let intercept = mean_p - slope * mean_t;

    let threshold = sxy.abs() * (1.0 - 1e-12);
    let mut rng = SeedDeriver::new(seed).str("permutation").rng();
    let mut shuffled = c.x.clone();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        let s: f64 = shuffled.iter().zip(&c.y).map(|(a, b)| a * b).sum();
        if s.abs() >= threshold {
            hits += 1;
        }
    }
    Ok(RegressionReport {
        n: pairs.len(),
        pearson_r: r,
        slope,
        intercept,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        permutations,
        excluded_unparsed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub single_run: bool,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Mean and sample (n-1) standard deviation per metric across runs.
pub fn aggregate_runs(runs: &[BTreeMap<String, f64>]) -> Result<RunAggregate> {
    let first = runs
        .first()
        .ok_or_else(|| Error::EmptyInput("no runs to aggregate".into()))?;
    let keys: BTreeSet<&String> = first.keys().collect();
    if runs
        .iter()
        .any(|r| r.keys().collect::<BTreeSet<_>>() != keys)
    {
        return Err(Error::Contract("runs report different task sets".into()));
    }
    let n = runs.len();
    let metrics = keys
        .into_iter()
        .map(|k| {
            let vals: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            (k.clone(), MeanStd { mean, std })
        })
        .collect();
    Ok(RunAggregate {
        runs: n,
        single_run: n == 1,
        metrics,
    })
}

/// One scored answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: TaskKind,
    pub truth: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskOutcome {
    Classification(ClassificationReport),
    Regression(RegressionReport),
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task: TaskKind,
    pub samples: usize,
    pub outcome: TaskOutcome,
    /// Chance-baseline score for the same task, when known.
    pub chance: Option<f64>,
}

impl TaskEvaluation {
    /// F1 for classification, Pearson r for regression.
    pub fn headline(&self) -> Option<f64> {
        match &self.outcome {
            TaskOutcome::Classification(c) => Some(c.f1),
            TaskOutcome::Regression(r) => Some(r.pearson_r),
            TaskOutcome::Unavailable(_) => None,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        if self.task.is_classification() {
            "f1"
        } else {
            "pearson_r"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub tasks: Vec<TaskEvaluation>,
}

/// Scores predictions task by task. Truth answers are parsed with the same
/// parsers as predictions; a task with too little data is reported as
/// unavailable rather than failing the whole evaluation.
pub fn evaluate(
    system: &str,
    predictions: &[Prediction],
    chance: &BTreeMap<TaskKind, f64>,
    permutations: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut by_task: BTreeMap<TaskKind, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        by_task.entry(p.task).or_default().push(p);
    }
    let mut tasks = Vec::new();
    for (task, items) in by_task {
        let outcome = if task.is_classification() {
            let vocab = task.vocabulary();
            let truth = items
                .iter()
                .map(|p| {
                    parse_class_answer(&p.truth, vocab).ok_or_else(|| {
                        Error::Contract(format!("unparseable {task} truth {:?}", p.truth))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let preds: Vec<Option<String>> = items
                .iter()
                .map(|p| parse_class_answer(&p.predicted, vocab))
                .collect();
            TaskOutcome::Classification(classification_report(
                &preds,
                &truth,
                vocab,
                F1Mode::for_task(task),
            )?)
        } else {
            let truth = items
                .iter()
                .map(|p| {
                    parse_numeric_for_task(task, &p.truth).ok_or_else(|| {
                        Error::Contract(format!("unparseable {task} truth {:?}", p.truth))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let preds: Vec<Option<f64>> = items
                .iter()
                .map(|p| parse_numeric_for_task(task, &p.predicted))
                .collect();
            let task_seed = SeedDeriver::new(seed).str(task.name()).finish();
            match regression_report(&preds, &truth, permutations, task_seed) {
                Ok(r) => TaskOutcome::Regression(r),
                Err(e @ (Error::InsufficientData(_) | Error::UndefinedCorrelation(_))) => {
                    TaskOutcome::Unavailable(e.to_string())
                }
                Err(e) => return Err(e),
            }
        };
        tasks.push(TaskEvaluation {
            task,
            samples: items.len(),
            outcome,
            chance: chance.get(&task).copied(),
        });
    }
    Ok(EvalReport {
        system: system.to_string(),
        tasks,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub fn headlines(&self) -> BTreeMap<String, f64> {
        self.tasks
            .iter()
            .filter_map(|t| t.headline().map(|h| (t.task.name().to_string(), h)))
            .collect()
    }

    pub fn task(&self, task: TaskKind) -> Option<&TaskEvaluation> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system: {}", self.system);
        for t in &self.tasks {
            let _ = writeln!(out);
            match &t.outcome {
                TaskOutcome::Classification(c) => {
                    let _ = writeln!(out, "== {} (classification, n={}) ==", t.task, t.samples);
                    let which = if t.task.is_binary() {
                        "F1 (positive class Yes)"
                    } else {
                        "macro F1"
                    };
                    let _ = writeln!(out, "{which}: {:.4}", c.f1);
                    if let Some(ch) = t.chance {
                        let _ = writeln!(out, "chance: {ch:.4}");
                    }
                    let _ = writeln!(out, "unparsed: {}", c.matrix.unparsed_count());
                    let _ = writeln!(out, "confusion matrix (rows truth, columns prediction):");
                    let width = c
                        .matrix
                        .labels
                        .iter()
                        .map(|l| l.len())
                        .max()
                        .unwrap_or(8)
                        .max(8);
                    let _ = write!(out, "{:width$}", "");
                    for l in &c.matrix.labels {
                        let _ = write!(out, " | {l}");
                    }
                    let _ = writeln!(out, " | unparsed");
                    for (i, l) in c.matrix.labels.iter().enumerate() {
                        let _ = write!(out, "{l:width$}");
                        for (j, h) in c.matrix.labels.iter().enumerate() {
                            let _ = write!(out, " | {:>w$}", c.matrix.counts[i][j], w = h.len());
                        }
                        let _ = writeln!(out, " | {:>8}", c.matrix.unparsed[i]);
                    }
                    let _ = writeln!(out, "per class: label, precision, recall, f1, support");
                    for m in &c.per_class {
                        let _ = writeln!(
                            out,
                            "  {}, {:.4}, {:.4}, {:.4}, {}",
                            m.label, m.precision, m.recall, m.f1, m.support
                        );
                    }
                }
                TaskOutcome::Regression(r) => {
                    let _ = writeln!(out, "== {} (regression, n={}) ==", t.task, t.samples);
                    let _ = writeln!(out, "pearson r: {:.4}", r.pearson_r);
                    let _ = writeln!(out, "slope: {:.4}", r.slope);
                    let _ = writeln!(out, "intercept: {:.4}", r.intercept);
                    let _ = writeln!(
                        out,
                        "p-value ({} permutations): {:.6}",
                        r.permutations, r.p_value
                    );
                    let _ = writeln!(out, "excluded unparsed: {}", r.excluded_unparsed);
                }
                TaskOutcome::Unavailable(why) => {
                    let _ = writeln!(out, "== {} (n={}) ==", t.task, t.samples);
                    let _ = writeln!(out, "unavailable: {why}");
                }
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "summary");
        out.push_str(&self.render_csv());
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("task,metric,value,chance,n\n");
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.task,
                t.metric_name(),
                fmt_opt(t.headline()),
                fmt_opt(t.chance),
                t.samples
            );
        }
        out
    }
}

impl RunAggregate {
    /// Tasks as columns, one mean row and one std row.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let names: Vec<&String> = self.metrics.keys().collect();
        let _ = writeln!(
            out,
            "runs: {}{}",
            self.runs,
            if self.single_run {
                " (single run, std not estimable)"
            } else {
                ""
            }
        );
        let _ = writeln!(
            out,
            "stat,{}",
            names
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(",")
        );
        for (label, pick) in [("mean", true), ("std", false)] {
            let vals: Vec<String> = names
                .iter()
                .map(|k| {
                    let m = &self.metrics[*k];
                    format!("{:.4}", if pick { m.mean } else { m.std })
                })
                .collect();
            let _ = writeln!(out, "{label},{}", vals.join(","));
        }
        out
    }
}

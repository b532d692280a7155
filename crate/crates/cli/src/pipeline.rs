//! Pipeline stages shared by several subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use biomech_core::baselines::{examples_from_dataset, train_task, BaselineModel, TrainOptions};
use biomech_core::dataset::{
    build_dataset, extract_motion_tokens, fingerprint, BuildOptions, DatasetManifest,
    ParticipantSplit, Split, TaskKind, TrialRecord,
};
use biomech_core::eval::{evaluate, EvalReport, Prediction};
use biomech_core::synth::TrialGroundTruth;
use biomech_core::tokenizer::{read_token_corpus, TokenizerModel};
use serde::{Deserialize, Serialize};

use crate::workspace::{require, Workspace};

pub const SYSTEM_NAME: &str = "gbdt-token-histogram";

#[derive(Deserialize)]
struct TrialHeader {
    participant_id: String,
    trial_id: String,
    ground_truth: TrialGroundTruth,
}

/// Tokens of every trial joined with its ground truth.
pub fn trial_records(ws: &Workspace) -> Result<Vec<TrialRecord>> {
    let tokens = read_token_corpus(&require(&ws.tokens_file(), "tokenize")?)?;
    let participants = ws.load_participants()?;
    let mut headers = BTreeMap::new();
    for p in &participants {
        let dir = require(&ws.cohort_dir().join(&p.participant_id), "synth")?;
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let h: TrialHeader = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            headers.insert(h.trial_id.clone(), h);
        }
    }
    let mut out = Vec::with_capacity(tokens.len());
    for seq in tokens {
        let h = headers.remove(&seq.trial_id).ok_or_else(|| {
            anyhow!(
                "token corpus has trial {} that is not in the cohort; rerun `biomech tokenize`",
                seq.trial_id
            )
        })?;
        out.push(TrialRecord {
            participant_id: h.participant_id,
            ground_truth: h.ground_truth,
            tokens: seq,
        });
    }
    if let Some(id) = headers.keys().next() {
        bail!("trial {id} has no tokens; rerun `biomech tokenize`");
    }
    Ok(out)
}

pub fn load_split(ws: &Workspace) -> Result<ParticipantSplit> {
    Ok(ParticipantSplit::load(&require(
        &ws.split_file(),
        "train-tokenizer",
    )?)?)
}

pub fn load_tokenizer(ws: &Workspace) -> Result<(TokenizerModel, String)> {
    let path = require(&ws.tokenizer_file(), "train-tokenizer")?;
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let model = TokenizerModel::load(&path)?;
    Ok((model, fingerprint(&bytes)))
}

/// `None` for "all"; otherwise a comma-separated list of task names.
pub fn parse_task_filter(spec: &str) -> Result<Option<BTreeSet<TaskKind>>> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    let tasks = spec
        .split([',', '+'])
        .map(|s| s.trim().parse::<TaskKind>())
        .collect::<biomech_core::Result<BTreeSet<_>>>()?;
    if tasks.is_empty() {
        bail!("empty task filter");
    }
    Ok(Some(tasks))
}

pub fn subset_name(filter: &Option<BTreeSet<TaskKind>>) -> String {
    match filter {
        None => "all".to_string(),
        Some(tasks) => tasks
            .iter()
            .map(|t| t.name().to_lowercase())
            .collect::<Vec<_>>()
            .join("+"),
    }
}

pub fn build(
    records: &[TrialRecord],
    split: &ParticipantSplit,
    seed: u64,
    task_filter: Option<BTreeSet<TaskKind>>,
    tokenizer_fingerprint: &str,
) -> Result<DatasetManifest> {
    Ok(build_dataset(
        records,
        split,
        &BuildOptions {
            seed,
            task_filter,
            tokenizer_fingerprint: tokenizer_fingerprint.to_string(),
        },
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteInfo {
    pub seed: u64,
    pub search_iterations: usize,
    pub chance_repeats: usize,
    pub codebook_size: usize,
    pub dataset_fingerprint: String,
    pub tasks: Vec<TaskKind>,
}

pub fn suite_file(ws: &Workspace) -> std::path::PathBuf {
    ws.baselines_dir().join("suite.json")
}

/// Trains a model per task present in the dataset (or just `only`).
pub fn train_models(
    manifest: &DatasetManifest,
    options: &TrainOptions,
    only: Option<TaskKind>,
) -> Result<BTreeMap<TaskKind, BaselineModel>> {
    let examples = examples_from_dataset(manifest, options.codebook_size)?;
    if let Some(t) = only {
        if !examples.contains_key(&t) {
            bail!("dataset has no {t} samples");
        }
    }
    let mut out = BTreeMap::new();
    for (task, ex) in &examples {
        if only.is_some_and(|t| t != *task) {
            continue;
        }
        log::info!(
            "{task}: {} train / {} test samples",
            ex.train_x.len(),
            ex.test_x.len()
        );
        let model = train_task(*task, ex, options, |msg| log::info!("{msg}"))?;
        out.insert(*task, model);
    }
    Ok(out)
}

pub fn save_models(dir: &Path, models: &BTreeMap<TaskKind, BaselineModel>) -> Result<()> {
    for (task, m) in models {
        m.save(&dir.join(BaselineModel::file_name(*task)))?;
    }
    Ok(())
}

pub fn load_models(
    dir: &Path,
    tasks: impl IntoIterator<Item = TaskKind>,
) -> Result<BTreeMap<TaskKind, BaselineModel>> {
    let mut out = BTreeMap::new();
    for task in tasks {
        let path = require(&dir.join(BaselineModel::file_name(task)), "train-baselines")?;
        out.insert(task, BaselineModel::load(&path)?);
    }
    Ok(out)
}

/// Baseline predictions for every test sample, scored per task.
pub fn evaluate_models(
    manifest: &DatasetManifest,
    models: &BTreeMap<TaskKind, BaselineModel>,
    permutations: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut predictions = Vec::new();
    for s in manifest.samples.iter().filter(|s| s.split == Split::Test) {
        let model = models
            .get(&s.task_kind)
            .ok_or_else(|| anyhow!("no {} baseline; run `biomech train-baselines`", s.task_kind))?;
        let tokens = extract_motion_tokens(&s.prompt_text)?;
        predictions.push(Prediction {
            task: s.task_kind,
            truth: s.answer_text.clone(),
            predicted: model.predict_answer(&tokens)?,
        });
    }
    if predictions.is_empty() {
        bail!("dataset has no test samples");
    }
    let chance: BTreeMap<TaskKind, f64> = models
        .iter()
        .filter_map(|(t, m)| m.chance_f1.map(|c| (*t, c)))
        .collect();
    Ok(evaluate(
        SYSTEM_NAME,
        &predictions,
        &chance,
        permutations,
        seed,
    )?)
}

pub fn dataset_tasks(manifest: &DatasetManifest) -> BTreeSet<TaskKind> {
    manifest.samples.iter().map(|s| s.task_kind).collect()
}

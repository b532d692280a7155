//! Prompt/answer dataset construction from tokenized trials.

mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::SeedDeriver;
use crate::synth::{Activity, AssistiveDevice, Diagnosis, TrialGroundTruth};
use crate::tokenizer::TokenSequence;

pub const MOTION_PLACEHOLDER: &str = "{motion_placeholder}";
pub const MOTION_START: &str = "<motion_start>";
pub const MOTION_END: &str = "<motion_end>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Activity,
    Impaired,
    Diagnosis,
    AssistiveDevice,
    Falls,
    Cadence,
    WalkingSpeed,
    TugTime,
    FsstTime,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Activity,
        TaskKind::Impaired,
        TaskKind::Diagnosis,
        TaskKind::AssistiveDevice,
        TaskKind::Falls,
        TaskKind::Cadence,
        TaskKind::WalkingSpeed,
        TaskKind::TugTime,
        TaskKind::FsstTime,
    ];

    pub const CLASSIFICATION: [TaskKind; 5] = [
        TaskKind::Activity,
        TaskKind::Impaired,
        TaskKind::Diagnosis,
        TaskKind::AssistiveDevice,
        TaskKind::Falls,
    ];

    pub const REGRESSION: [TaskKind; 4] = [
        TaskKind::Cadence,
        TaskKind::WalkingSpeed,
        TaskKind::TugTime,
        TaskKind::FsstTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Activity => "Activity",
            TaskKind::Impaired => "Impaired",
            TaskKind::Diagnosis => "Diagnosis",
            TaskKind::AssistiveDevice => "AssistiveDevice",
            TaskKind::Falls => "Falls",
            TaskKind::Cadence => "Cadence",
            TaskKind::WalkingSpeed => "WalkingSpeed",
            TaskKind::TugTime => "TugTime",
            TaskKind::FsstTime => "FsstTime",
        }
    }

    pub fn is_classification(self) -> bool {
        TaskKind::CLASSIFICATION.contains(&self)
    }

    /// Binary tasks are scored by positive-class ("Yes") F1.
    pub fn is_binary(self) -> bool {
        matches!(self, TaskKind::Impaired | TaskKind::Falls)
    }

    /// Closed answer vocabulary of a classification task.
    pub fn vocabulary(self) -> &'static [&'static str] {
        static ACTIVITIES: OnceLock<Vec<&'static str>> = OnceLock::new();
        static DIAGNOSES: OnceLock<Vec<&'static str>> = OnceLock::new();
        static DEVICES: OnceLock<Vec<&'static str>> = OnceLock::new();
        match self {
            TaskKind::Activity => {
                ACTIVITIES.get_or_init(|| Activity::ALL.iter().map(|a| a.label()).collect())
            }
            TaskKind::Diagnosis => {
                DIAGNOSES.get_or_init(|| Diagnosis::IMPAIRMENTS.iter().map(|d| d.label()).collect())
            }
            TaskKind::AssistiveDevice => {
                DEVICES.get_or_init(|| AssistiveDevice::ALL.iter().map(|d| d.label()).collect())
            }
            TaskKind::Impaired | TaskKind::Falls => &["Yes", "No"],
            _ => &[],
        }
    }

    /// Unit suffix of a regression answer.
    pub fn unit(self) -> Option<&'static str> {
        match self {
            TaskKind::Cadence => Some("steps/min"),
            TaskKind::WalkingSpeed => Some("m/s"),
            TaskKind::TugTime | TaskKind::FsstTime => Some("s"),
            _ => None,
        }
    }

    /// Decimal places of a regression answer.
    pub fn precision(self) -> Option<usize> {
        match self {
            TaskKind::Cadence => Some(0),
            TaskKind::WalkingSpeed => Some(2),
            TaskKind::TugTime | TaskKind::FsstTime => Some(1),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    /// Accepts the task name in any case, with or without underscores.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_lowercase();
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name().to_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown task kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task_kind: TaskKind,
    pub prompt_pattern: &'static str,
    pub answer_pattern: &'static str,
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    active: BTreeMap<TaskKind, Vec<PromptTemplate>>,
    inactive: BTreeMap<&'static str, Vec<(&'static str, &'static str)>>,
}

impl TemplateRegistry {
    pub fn templates(&self, task: TaskKind) -> &[PromptTemplate] {
        self.active.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Loaded but never rendered: free-text description lists.
    pub fn inactive(&self) -> &BTreeMap<&'static str, Vec<(&'static str, &'static str)>> {
        &self.inactive
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.active.values().flatten()
    }
}

pub fn load_templates() -> &'static TemplateRegistry {
    static REGISTRY: OnceLock<TemplateRegistry> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let lists: [(TaskKind, &[(&str, &str)]); 9] = [
            (TaskKind::Activity, &templates::ACTIVITY),
            (TaskKind::Impaired, &templates::IMPAIRED),
            (TaskKind::Diagnosis, &templates::DIAGNOSIS),
            (TaskKind::AssistiveDevice, &templates::ASSISTIVE_DEVICE),
            (TaskKind::Falls, &templates::FALLS),
            (TaskKind::Cadence, &templates::CADENCE),
            (TaskKind::WalkingSpeed, &templates::WALKING_SPEED),
            (TaskKind::TugTime, &templates::TUG_TIME),
            (TaskKind::FsstTime, &templates::FSST_TIME),
        ];
        let active = lists
            .into_iter()
            .map(|(task, pairs)| {
                let ts = pairs
                    .iter()
                    .map(|&(p, a)| PromptTemplate {
                        task_kind: task,
                        prompt_pattern: p,
                        answer_pattern: a,
                    })
                    .collect();
                (task, ts)
            })
            .collect();
        let inactive = [
            (
                "MovementDescription",
                templates::MOVEMENT_DESCRIPTION.to_vec(),
            ),
            ("Description", templates::DESCRIPTION.to_vec()),
        ]
        .into_iter()
        .collect();
        TemplateRegistry { active, inactive }
    })
}

/// Tasks a trial can answer given what was recorded for it.
pub fn applicable_tasks(gt: &TrialGroundTruth) -> BTreeSet<TaskKind> {
    let mut out: BTreeSet<TaskKind> = [
        TaskKind::Activity,
        TaskKind::Impaired,
        TaskKind::AssistiveDevice,
    ]
    .into_iter()
    .collect();
    if gt.impaired {
        out.insert(TaskKind::Diagnosis);
    }
    if gt.fall_history.is_some() {
        out.insert(TaskKind::Falls);
    }
    if gt.on_walkway {
        out.insert(TaskKind::Cadence);
        out.insert(TaskKind::WalkingSpeed);
    }
    if gt.completion_time_s.is_some() {
        match gt.activity {
            Activity::TimedUpAndGo => {
                out.insert(TaskKind::TugTime);
            }
            Activity::FourSquareStepTest => {
                out.insert(TaskKind::FsstTime);
            }
            _ => {}
        }
    }
    out
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

enum HoleValue {
    Text(String),
    Number(f64),
}

fn hole_value(name: &str, gt: &TrialGroundTruth) -> Result<HoleValue> {
    let missing = || Error::Contract(format!("ground truth has no value for {{{name}}}"));
    let num = |v: Option<f64>| v.map(HoleValue::Number).ok_or_else(missing);
    match name {
        "activity" => Ok(HoleValue::Text(gt.activity.label().into())),
        "movement_impairment" => Ok(HoleValue::Text(yes_no(gt.impaired).into())),
        "diagnosis" if gt.diagnosis != Diagnosis::None => {
            Ok(HoleValue::Text(gt.diagnosis.label().into()))
        }
        "assistive_device" => Ok(HoleValue::Text(gt.assistive_device.label().into())),
        "fall_history" => gt
            .fall_history
            .map(|f| HoleValue::Text(yes_no(f).into()))
            .ok_or_else(missing),
        "overall_Cadence" => num(gt.cadence_steps_per_min),
        "stride_m_s" => num(gt.speed_m_s),
        "tug_time" if gt.activity == Activity::TimedUpAndGo => num(gt.completion_time_s),
        "fsst_time" if gt.activity == Activity::FourSquareStepTest => num(gt.completion_time_s),
        _ => Err(missing()),
    }
}

fn hole_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_]+)(?::\.(\d+)f)?\}").expect("valid regex"))
}

/// Fills `{name}` and `{name:.Nf}` holes from ground truth. Fixed-point
/// formatting rounds exact decimal ties to even.
pub fn fill_answer(pattern: &str, gt: &TrialGroundTruth) -> Result<String> {
    let mut out = String::new();
    let mut last = 0;
    for caps in hole_regex().captures_iter(pattern) {
        let whole = caps.get(0).expect("match");
        out.push_str(&pattern[last..whole.start()]);
        let value = hole_value(&caps[1], gt)?;
        match (value, caps.get(2)) {
            (HoleValue::Text(t), None) => out.push_str(&t),
            (HoleValue::Number(v), Some(p)) => {
                let prec: usize = p.as_str().parse().expect("digits");
                out.push_str(&format!("{v:.prec$}"));
            }
            (HoleValue::Number(v), None) => out.push_str(&v.to_string()),
            (HoleValue::Text(_), Some(_)) => {
                return Err(Error::Contract(format!(
                    "numeric format applied to text hole {}",
                    &caps[1]
                )))
            }
        }
        last = whole.end();
    }
    out.push_str(&pattern[last..]);
    Ok(out)
}

/// Canonical answer text for a task; every template of a task shares one
/// answer pattern.
pub fn answer_for(task: TaskKind, gt: &TrialGroundTruth) -> Result<String> {
    let t = load_templates()
        .templates(task)
        .first()
        .expect("every task has templates");
    fill_answer(t.answer_pattern, gt)
}

/// Formats a prediction for a task the same way answers are rendered.
pub fn format_prediction(task: TaskKind, value: f64) -> Option<String> {
    let prec = task.precision()?;
    let unit = task.unit()?;
    Some(format!("{value:.prec$} {unit}"))
}

pub fn serialize_motion_span(tokens: &[u32]) -> Result<String> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput(
            "motion span needs at least one token".into(),
        ));
    }
    let mut out = String::with_capacity(tokens.len() * 12 + 26);
    out.push_str(MOTION_START);
    for t in tokens {
        out.push_str("<motion_");
        out.push_str(&t.to_string());
        out.push('>');
    }
    out.push_str(MOTION_END);
    Ok(out)
}

/// Parses a complete canonical motion span.
pub fn parse_motion_span(span: &str) -> Result<Vec<u32>> {
    let (tokens, rest) = split_motion_span(span)?;
    if !rest.is_empty() {
        return Err(Error::Contract("trailing text after motion span".into()));
    }
    Ok(tokens)
}

/// Splits a text that starts with a motion span into its tokens and the
/// remaining text (leading whitespace trimmed).
pub fn split_motion_span(text: &str) -> Result<(Vec<u32>, &str)> {
    let bad = |m: &str| Error::Contract(format!("malformed motion span: {m}"));
    let mut rest = text
        .strip_prefix(MOTION_START)
        .ok_or_else(|| bad("missing <motion_start>"))?;
    let mut tokens = Vec::new();
    loop {
        if let Some(after) = rest.strip_prefix(MOTION_END) {
            if tokens.is_empty() {
                return Err(Error::EmptyInput("motion span has no tokens".into()));
            }
            return Ok((tokens, after.trim_start()));
        }
        let body = rest
            .strip_prefix("<motion_")
            .ok_or_else(|| bad("expected <motion_k> or <motion_end>"))?;
        let close = body.find('>').ok_or_else(|| bad("unterminated token"))?;
        let digits = &body[..close];
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("token index is not a number"));
        }
        if digits.len() > 1 && digits.starts_with('0') {
            return Err(bad("token index has leading zeros"));
        }
        tokens.push(
            digits
                .parse()
                .map_err(|_| bad("token index out of range"))?,
        );
        rest = &body[close + 1..];
    }
}

/// Tokens of the first motion span embedded anywhere in a text.
pub fn extract_motion_tokens(text: &str) -> Result<Vec<u32>> {
    let at = text
        .find(MOTION_START)
        .ok_or_else(|| Error::Contract("text has no motion span".into()))?;
    Ok(split_motion_span(&text[at..])?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub task_kind: TaskKind,
    pub participant_id: String,
    pub trial_id: String,
    pub prompt_text: String,
    pub answer_text: String,
    pub split: Split,
    pub template_index: usize,
}

/// Substitutes a motion span into a prompt pattern.
pub fn render_prompt(pattern: &str, tokens: &[u32]) -> Result<String> {
    if pattern.matches(MOTION_PLACEHOLDER).count() != 1 {
        return Err(Error::Contract(format!(
            "prompt pattern must contain the motion placeholder once: {pattern:?}"
        )));
    }
    Ok(pattern.replacen(MOTION_PLACEHOLDER, &serialize_motion_span(tokens)?, 1))
}

pub fn render_sample(
    template: &PromptTemplate,
    template_index: usize,
    tokens: &TokenSequence,
    participant_id: &str,
    gt: &TrialGroundTruth,
    split: Split,
) -> Result<MultimodalSample> {
    if !applicable_tasks(gt).contains(&template.task_kind) {
        return Err(Error::Contract(format!(
            "{} does not apply to trial {}",
            template.task_kind, tokens.trial_id
        )));
    }
    Ok(MultimodalSample {
        task_kind: template.task_kind,
        participant_id: participant_id.to_string(),
        trial_id: tokens.trial_id.clone(),
        prompt_text: render_prompt(template.prompt_pattern, &tokens.tokens)?,
        answer_text: fill_answer(template.answer_pattern, gt)?,
        split,
        template_index,
    })
}

/// Everything up to and including the opening of the model turn.
pub fn format_chat_prompt(prompt: &str) -> String {
    format!("<start_of_turn>user\n{prompt}\n<start_of_turn>model\n")
}

pub fn format_chat(sample: &MultimodalSample) -> String {
    format!(
        "{}{}<end_of_turn>",
        format_chat_prompt(&sample.prompt_text),
        sample.answer_text
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSplit {
    pub seed: u64,
    pub ratio: f64,
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl ParticipantSplit {
    pub fn split_of(&self, participant_id: &str) -> Option<Split> {
        if self.train.contains(participant_id) {
            Some(Split::Train)
        } else if self.test.contains(participant_id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Participant-level split: ids are sorted, shuffled under `seed`, and the
/// first `round(ratio * n)` go to train.
pub fn split_participants(ids: &[String], ratio: f64, seed: u64) -> Result<ParticipantSplit> {
    let strata: Vec<(String, String)> = ids.iter().map(|id| (id.clone(), String::new())).collect();
    split_participants_stratified(&strata, ratio, seed)
}

/// Participant split that spreads each stratum across both sides.
///
/// Participants are shuffled within their stratum, strata are laid end to end
/// in key order, and test slots are placed at even intervals along that list,
/// so any run of `1 / (1 - ratio)` consecutive participants holds a test slot.
pub fn split_participants_stratified(
    strata: &[(String, String)],
    ratio: f64,
    seed: u64,
) -> Result<ParticipantSplit> {
    if strata.is_empty() {
        return Err(Error::EmptyInput("no participants to split".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, key) in strata {
        if !seen.insert(id.as_str()) {
            return Err(Error::Contract("participant ids are not unique".into()));
        }
        groups.entry(key.as_str()).or_default().push(id.clone());
    }
    let mut rng = SeedDeriver::new(seed).str("participant-split").rng();
    let mut ordered = Vec::with_capacity(strata.len());
    for mut members in groups.into_values() {
        members.sort();
        members.shuffle(&mut rng);
        ordered.extend(members);
    }
    let n = ordered.len();
    let n_test = n - (ratio * n as f64).round() as usize;
    let (mut train, mut test) = (BTreeSet::new(), BTreeSet::new());
    for (i, id) in ordered.into_iter().enumerate() {
        if (i + 1) * n_test / n > i * n_test / n {
            test.insert(id);
        } else {
            train.insert(id);
        }
    }
    Ok(ParticipantSplit {
        seed,
        ratio,
        train,
        test,
    })
}

/// One tokenized trial with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub participant_id: String,
    pub ground_truth: TrialGroundTruth,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_participants: usize,
    pub train_samples: usize,
    pub test_participants: usize,
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub seed: u64,
    pub tokenizer_fingerprint: String,
    pub split_ratio: f64,
    pub task_filter: Option<BTreeSet<TaskKind>>,
    pub counts: BTreeMap<TaskKind, SplitCounts>,
    pub total_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: DatasetHeader,
    pub samples: Vec<MultimodalSample>,
}

pub fn count_samples(samples: &[MultimodalSample]) -> BTreeMap<TaskKind, SplitCounts> {
    let mut people: BTreeMap<(TaskKind, Split), BTreeSet<&str>> = BTreeMap::new();
    let mut out: BTreeMap<TaskKind, SplitCounts> = BTreeMap::new();
    for s in samples {
        let c = out.entry(s.task_kind).or_default();
        match s.split {
            Split::Train => c.train_samples += 1,
            Split::Test => c.test_samples += 1,
        }
        people
            .entry((s.task_kind, s.split))
            .or_default()
            .insert(&s.participant_id);
    }
    for ((task, split), ids) in people {
        let c = out.entry(task).or_default();
        match split {
            Split::Train => c.train_participants = ids.len(),
            Split::Test => c.test_participants = ids.len(),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub seed: u64,
    pub task_filter: Option<BTreeSet<TaskKind>>,
    pub tokenizer_fingerprint: String,
}

/// One sample per (trial, applicable task), template drawn uniformly under a
/// seed derived from (seed, trial, task), then a global shuffle.
pub fn build_dataset(
    records: &[TrialRecord],
    split: &ParticipantSplit,
    options: &BuildOptions,
) -> Result<DatasetManifest> {
    let registry = load_templates();
    let mut ordered: Vec<&TrialRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.tokens.trial_id.cmp(&b.tokens.trial_id));
    let mut samples = Vec::new();
    for rec in ordered {
        let which = split.split_of(&rec.participant_id).ok_or_else(|| {
            Error::Contract(format!(
                "participant {} is in neither split",
                rec.participant_id
            ))
        })?;
        for task in applicable_tasks(&rec.ground_truth) {
            if let Some(filter) = &options.task_filter {
                if !filter.contains(&task) {
                    continue;
                }
            }
            let ts = registry.templates(task);
            let mut rng = SeedDeriver::new(options.seed)
                .str(&rec.tokens.trial_id)
                .str(task.name())
                .rng();
            let idx = rng.random_range(0..ts.len());
            samples.push(render_sample(
                &ts[idx],
                idx,
                &rec.tokens,
                &rec.participant_id,
                &rec.ground_truth,
                which,
            )?);
        }
    }
    let mut rng = SeedDeriver::new(options.seed).str("dataset-shuffle").rng();
    samples.shuffle(&mut rng);
    Ok(DatasetManifest {
        header: DatasetHeader {
            seed: options.seed,
            tokenizer_fingerprint: options.tokenizer_fingerprint.clone(),
            split_ratio: split.ratio,
            task_filter: options.task_filter.clone(),
            counts: count_samples(&samples),
            total_samples: samples.len(),
        },
        samples,
    })
}

/// Hex SHA-256 of a serialized artifact.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl DatasetManifest {
    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: DatasetHeader =
            serde_json::from_str(lines.next().ok_or_else(|| {
                Error::EmptyInput(format!("{}: empty dataset", origin.display()))
            })?)
            .map_err(|e| Error::json(origin, e))?;
        let samples = lines
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(origin, e)))
            .collect::<Result<Vec<MultimodalSample>>>()?;
        if count_samples(&samples) != header.counts || samples.len() != header.total_samples {
            return Err(Error::Contract(format!(
                "{}: header counts disagree with samples",
                origin.display()
            )));
        }
        Ok(DatasetManifest { header, samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_ndjson())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ndjson(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneManifest {
    pub adapter_rank: u32,
    pub adapter_alpha: u32,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: f64,
    pub batch_size: u32,
    pub max_sequence_length: u32,
    pub prompt_tokens_in_loss: bool,
    pub base_model: String,
}

pub const DEFAULT_BASE_MODEL: &str = "google/gemma-3-4b-it";

impl FinetuneManifest {
    pub fn standard(base_model: &str) -> Self {
        FinetuneManifest {
            adapter_rank: 32,
            adapter_alpha: 32,
            dropout: 0.1,
            learning_rate: 0.0002,
            epochs: 1.2,
            batch_size: 10,
            max_sequence_length: 1024,
            prompt_tokens_in_loss: true,
            base_model: base_model.to_string(),
        }
    }

    pub fn small(base_model: &str) -> Self {
        FinetuneManifest {
            adapter_rank: 16,
            adapter_alpha: 16,
            dropout: 0.005,
            ..Self::standard(base_model)
        }
    }

    pub fn variant(name: &str, base_model: &str) -> Result<Self> {
        match name {
            "default" | "standard" => Ok(Self::standard(base_model)),
            "small" => Ok(Self::small(base_model)),
            other => Err(Error::Config(format!(
                "unknown manifest variant {other:?} (expected default or small)"
            ))),
        }
    }
}

pub fn export_finetune_manifest(path: &Path, manifest: &FinetuneManifest) -> Result<()> {
    write_json(path, manifest)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

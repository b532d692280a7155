use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biomech_core::motion::{read_trial, Trajectory};
use biomech_core::synth::{cohort_from_ndjson, ParticipantProfile};

/// Fixed directory convention under one root:
///
/// ```text
/// cohort/participants.jsonl          synth
/// cohort/<participant>/<trial>.json  synth
/// models/tokenizer.json              train-tokenizer
/// models/tokenizer_summary.json      train-tokenizer
/// models/split.json                  train-tokenizer
/// tokens/tokens.jsonl                tokenize
/// datasets/dataset.jsonl             build-dataset
/// datasets/finetune_manifest.json    export-manifest
/// models/baselines/<Task>.json       train-baselines
/// models/baselines/suite.json        train-baselines
/// reports/eval.{txt,csv}             eval
/// reports/ablation/...               ablate
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.root.join("cohort")
    }

    pub fn participants_file(&self) -> PathBuf {
        self.cohort_dir().join("participants.jsonl")
    }

    pub fn trial_path(&self, participant_id: &str, trial_id: &str) -> PathBuf {
        self.cohort_dir()
            .join(participant_id)
            .join(format!("{trial_id}.json"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn tokenizer_file(&self) -> PathBuf {
        self.models_dir().join("tokenizer.json")
    }

    pub fn tokenizer_summary_file(&self) -> PathBuf {
        self.models_dir().join("tokenizer_summary.json")
    }

    pub fn split_file(&self) -> PathBuf {
        self.models_dir().join("split.json")
    }

    pub fn tokens_file(&self) -> PathBuf {
        self.root.join("tokens").join("tokens.jsonl")
    }

    pub fn dataset_file(&self) -> PathBuf {
        self.root.join("datasets").join("dataset.jsonl")
    }

    pub fn manifest_file(&self) -> PathBuf {
        self.root.join("datasets").join("finetune_manifest.json")
    }

    pub fn baselines_dir(&self) -> PathBuf {
        self.models_dir().join("baselines")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn ablation_dir(&self) -> PathBuf {
        self.reports_dir().join("ablation")
    }

    /// Resolves a user-supplied output path against the workspace root and
    /// refuses anything that escapes it.
    pub fn output_path(&self, given: Option<&Path>, default: PathBuf) -> Result<PathBuf> {
        let Some(p) = given else {
            return Ok(default);
        };
        let p = if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        };
        let escapes = p
            .strip_prefix(&self.root)
            .map(|rel| {
                rel.components()
                    .any(|c| matches!(c, std::path::Component::ParentDir))
            })
            .unwrap_or(true);
        if escapes {
            bail!(
                "{} is outside the workspace {}",
                p.display(),
                self.root.display()
            );
        }
        Ok(p)
    }

    pub fn load_participants(&self) -> Result<Vec<ParticipantProfile>> {
        let path = require(&self.participants_file(), "synth")?;
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(cohort_from_ndjson(&text, &path)?)
    }

    /// All trials of the cohort, ordered by participant then trial id.
    pub fn load_trials(&self) -> Result<Vec<Trajectory>> {
        let participants = self.load_participants()?;
        let mut out = Vec::new();
        for p in &participants {
            let dir = self.cohort_dir().join(&p.participant_id);
            let dir = require(&dir, "synth")?;
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("listing {}", dir.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|f| f.extension().is_some_and(|e| e == "json"));
            files.sort();
            for f in files {
                out.push(read_trial(&f)?);
            }
        }
        Ok(out)
    }
}

/// Fails with the missing path and the subcommand that produces it.
pub fn require(path: &Path, producer: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(MissingPrerequisite {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        }
        .into())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("missing {}: run `biomech {producer}` first", path.display())]
pub struct MissingPrerequisite {
    pub path: PathBuf,
    pub producer: String,
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

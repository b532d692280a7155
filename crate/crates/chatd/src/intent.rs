use std::collections::BTreeSet;

use biomech_core::dataset::{load_templates, TaskKind, MOTION_PLACEHOLDER};
use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: usize = 3;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "by", "can", "could", "did", "do", "does",
    "for", "from", "he", "her", "his", "i", "in", "is", "it", "its", "me", "my", "of", "on", "or",
    "please", "s", "she", "that", "the", "their", "them", "there", "these", "they", "this",
    "those", "to", "was", "were", "with", "would", "you", "your",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intent {
    Task(TaskKind),
    Unknown,
}

impl Intent {
    pub fn name(self) -> &'static str {
        match self {
            Intent::Task(t) => t.name(),
            Intent::Unknown => "Unknown",
        }
    }
}

/// Lowercased alphanumeric words minus stopwords.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct IntentClassifier {
    threshold: usize,
    prompts: Vec<(TaskKind, BTreeSet<String>)>,
}

impl IntentClassifier {
    /// Scores against the template prompts of `tasks`.
    pub fn new(tasks: &BTreeSet<TaskKind>, threshold: usize) -> Self {
        let prompts = load_templates()
            .iter()
            .filter(|t| tasks.contains(&t.task_kind))
            .map(|t| {
                let text = t.prompt_pattern.replace(MOTION_PLACEHOLDER, " ");
                (t.task_kind, content_words(&text))
            })
            .collect();
        IntentClassifier { threshold, prompts }
    }

    pub fn all_tasks() -> Self {
        Self::new(&TaskKind::ALL.into_iter().collect(), DEFAULT_THRESHOLD)
    }

    /// Best task by overlap count, then Jaccard similarity, then task order;
    /// `Unknown` below the threshold.
    pub fn classify(&self, message: &str) -> Intent {
        let words = content_words(message);
        let mut best: Option<(usize, f64, TaskKind)> = None;
        for (task, prompt) in &self.prompts {
            let overlap = words.intersection(prompt).count();
            let union = words.union(prompt).count().max(1);
            let jaccard = overlap as f64 / union as f64;
            let better = match best {
                None => true,
                Some((o, j, t)) => {
                    overlap > o || (overlap == o && (jaccard > j || (jaccard == j && *task < t)))
                }
            };
            if better {
                best = Some((overlap, jaccard, *task));
            }
        }
        match best {
            Some((o, _, t)) if o >= self.threshold => Intent::Task(t),
            _ => Intent::Unknown,
        }
    }
}

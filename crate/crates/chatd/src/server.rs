use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biomech_core::baselines::BaselineModel;
use biomech_core::dataset::{
    format_chat_prompt, load_templates, serialize_motion_span, TaskKind, MOTION_PLACEHOLDER,
};
use biomech_core::motion::{read_trial, Trajectory, JOINT_NAMES};
use biomech_core::synth::{cohort_from_ndjson, Diagnosis, TrialGroundTruth};
use biomech_core::tokenizer::TokenizerModel;
use serde::{Deserialize, Serialize};

use crate::external::{ExternalClient, ExternalError};
use crate::intent::{Intent, IntentClassifier, DEFAULT_THRESHOLD};

/// Every `TRACE_STRIDE`-th frame is kept in trial traces.
pub const TRACE_STRIDE: usize = 3;

pub const NO_IMPAIRMENT_MESSAGE: &str =
    "No gait impairment was detected in this trial, so there is no diagnosis to report.";
pub const FALLS_GUARD_MESSAGE: &str =
    "Fall history is only assessed for prosthesis users, and this trial was not classified as one.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub participant_id: String,
    pub activity: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub frame_rate_hz: f64,
    pub channels: Vec<String>,
    /// One series per channel, in degrees.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDetail {
    #[serde(flatten)]
    pub summary: TrialSummary,
    pub frame_rate_hz: f64,
    pub ground_truth: TrialGroundTruth,
    pub tokens: Vec<u32>,
    pub traces: Traces,
}

impl TrialDetail {
    pub fn new(traj: &Trajectory, tokens: Vec<u32>) -> Self {
        let values = (0..JOINT_NAMES.len())
            .map(|j| {
                traj.frames
                    .iter()
                    .step_by(TRACE_STRIDE)
                    .map(|f| (f.joints()[j].to_degrees() * 1000.0).round() / 1000.0)
                    .collect()
            })
            .collect();
        TrialDetail {
            summary: TrialSummary {
                trial_id: traj.trial_id.clone(),
                participant_id: traj.participant_id.clone(),
                activity: traj.ground_truth.activity.label().to_string(),
                duration_s: traj.duration_s(),
            },
            frame_rate_hz: traj.frame_rate_hz,
            ground_truth: traj.ground_truth.clone(),
            tokens,
            traces: Traces {
                frame_rate_hz: traj.frame_rate_hz / TRACE_STRIDE as f64,
                channels: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
                values,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub trial_id: String,
    pub message: String,
    #[serde(default)]
    pub history: Vec<HistoryTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub reply: String,
    pub intent: String,
    pub backend: String,
}

#[derive(Debug, Clone)]
pub enum Backend {
    Mock,
    External(ExternalClient),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Mock => "mock",
            Backend::External(_) => "external",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Upstream(#[from] ExternalError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    upstream_status: Option<u16>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, upstream_status) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, None),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, None),
            ApiError::Upstream(ExternalError::Timeout) => (StatusCode::GATEWAY_TIMEOUT, None),
            ApiError::Upstream(ExternalError::Status { status }) => {
                (StatusCode::BAD_GATEWAY, Some(*status))
            }
            ApiError::Upstream(_) => (StatusCode::BAD_GATEWAY, None),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        let body = ErrorBody {
            error: self.to_string(),
            upstream_status,
        };
        (status, Json(body)).into_response()
    }
}

/// Immutable service state shared by all requests.
#[derive(Debug)]
pub struct AppState {
    trials: BTreeMap<String, TrialDetail>,
    models: BTreeMap<TaskKind, BaselineModel>,
    classifier: IntentClassifier,
    backend: Backend,
}

impl AppState {
    pub fn new(
        trials: Vec<TrialDetail>,
        models: BTreeMap<TaskKind, BaselineModel>,
        backend: Backend,
    ) -> Self {
        let tasks: BTreeSet<TaskKind> = match backend {
            Backend::Mock => models.keys().copied().collect(),
            Backend::External(_) => TaskKind::ALL.into_iter().collect(),
        };
        AppState {
            trials: trials
                .into_iter()
                .map(|t| (t.summary.trial_id.clone(), t))
                .collect(),
            models,
            classifier: IntentClassifier::new(&tasks, DEFAULT_THRESHOLD),
            backend,
        }
    }

    /// Loads a cohort directory (as written by `synth`) and a model
    /// directory holding `tokenizer.json` and `baselines/<Task>.json`.
    pub fn load(cohort_dir: &Path, model_dir: &Path, backend: Backend) -> anyhow::Result<Self> {
        use anyhow::Context;
        let participants_file = cohort_dir.join("participants.jsonl");
        let text = fs::read_to_string(&participants_file)
            .with_context(|| format!("reading {}", participants_file.display()))?;
        let participants = cohort_from_ndjson(&text, &participants_file)?;
        let tokenizer = TokenizerModel::load(&model_dir.join("tokenizer.json"))?;
        let mut trials = Vec::new();
        for p in &participants {
            let dir = cohort_dir.join(&p.participant_id);
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("listing {}", dir.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|f| f.extension().is_some_and(|e| e == "json"));
            files.sort();
            for f in files {
                let traj = read_trial(&f)?;
                let tokens = tokenizer.tokenize_trial(&traj)?.tokens;
                trials.push(TrialDetail::new(&traj, tokens));
            }
        }
        let mut models = BTreeMap::new();
        for task in TaskKind::ALL {
            let path = model_dir
                .join("baselines")
                .join(BaselineModel::file_name(task));
            if path.exists() {
                models.insert(task, BaselineModel::load(&path)?);
            }
        }
        if matches!(backend, Backend::Mock) && models.is_empty() {
            anyhow::bail!(
                "no baselines under {}; run `biomech train-baselines`",
                model_dir.join("baselines").display()
            );
        }
        log::info!(
            "loaded {} trials and {} baselines",
            trials.len(),
            models.len()
        );
        Ok(AppState::new(trials, models, backend))
    }

    pub fn trial_summaries(&self) -> Vec<TrialSummary> {
        self.trials.values().map(|t| t.summary.clone()).collect()
    }

    pub fn trial(&self, id: &str) -> Result<&TrialDetail, ApiError> {
        self.trials
            .get(id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown trial {id}")))
    }

    pub fn classify(&self, message: &str) -> Intent {
        self.classifier.classify(message)
    }

    fn predict(&self, task: TaskKind, tokens: &[u32]) -> Result<Option<String>, ApiError> {
        self.models
            .get(&task)
            .map(|m| m.predict_answer(tokens))
            .transpose()
            .map_err(|e| ApiError::Internal(e.to_string()))
    }

    /// One example question per supported task: the shortest template
    /// prompt phrased as a question.
    pub fn capability_message(&self) -> String {
        let registry = load_templates();
        let mut out =
            String::from("I can only answer questions about the selected trial, such as:");
        for task in self.models.keys() {
            let example = registry
                .templates(*task)
                .iter()
                .map(|t| {
                    t.prompt_pattern
                        .replace(MOTION_PLACEHOLDER, "")
                        .trim()
                        .to_string()
                })
                .min_by_key(|q| (!q.ends_with('?'), q.len()));
            if let Some(q) = example {
                out.push_str("\n- ");
                out.push_str(&q);
            }
        }
        out
    }

    /// Mock routing: intent, guards, then the task's baseline.
    pub fn mock_reply(&self, tokens: &[u32], message: &str) -> Result<(String, Intent), ApiError> {
        let intent = self.classify(message);
        let Intent::Task(task) = intent else {
            return Ok((self.capability_message(), intent));
        };
        let impaired = self.predict(TaskKind::Impaired, tokens)?;
        match task {
            TaskKind::Diagnosis if impaired.as_deref() == Some("No") => {
                return Ok((NO_IMPAIRMENT_MESSAGE.to_string(), intent));
            }
            TaskKind::Falls => {
                let prosthesis = impaired.as_deref() == Some("Yes")
                    && self.predict(TaskKind::Diagnosis, tokens)?.as_deref()
                        == Some(Diagnosis::ProsthesisUser.label());
                if !prosthesis {
                    return Ok((FALLS_GUARD_MESSAGE.to_string(), intent));
                }
            }
            _ => {}
        }
        let reply = self
            .predict(task, tokens)?
            .unwrap_or_else(|| self.capability_message());
        Ok((reply, intent))
    }

    pub async fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ApiError> {
        if req.message.trim().is_empty() {
            return Err(ApiError::BadRequest("message must not be empty".into()));
        }
        let trial = self.trial(&req.trial_id)?;
        let (reply, intent) = match &self.backend {
            Backend::Mock => self.mock_reply(&trial.tokens, &req.message)?,
            Backend::External(client) => {
                let prompt = external_prompt(&trial.tokens, &req.message)?;
                (client.complete(&prompt).await?, self.classify(&req.message))
            }
        };
        Ok(ChatResponse {
            reply,
            intent: intent.name().to_string(),
            backend: self.backend.name().to_string(),
        })
    }
}

/// Motion span followed by the question, in the model's chat format.
pub fn external_prompt(tokens: &[u32], message: &str) -> Result<String, ApiError> {
    let span = serialize_motion_span(tokens).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(format_chat_prompt(&format!("{span} {}", message.trim())))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok" })
}

async fn list_trials(State(state): State<Arc<AppState>>) -> Json<Vec<TrialSummary>> {
    Json(state.trial_summaries())
}

async fn get_trial(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<TrialDetail>, ApiError> {
    Ok(Json(state.trial(&id)?.clone()))
}

async fn chat(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<Json<ChatResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    Ok(Json(state.chat(&req).await?))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/trials", get(list_trials))
        .route("/api/trials/{id}", get(get_trial))
        .route("/api/chat", post(chat))
        .with_state(state)
}

/// Serves until ctrl-c, letting in-flight requests finish.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::Router;
use biomech_chatd::external::{request_body, DEFAULT_MODEL};
use biomech_chatd::server::{external_prompt, FALLS_GUARD_MESSAGE, NO_IMPAIRMENT_MESSAGE};
use biomech_chatd::{
    router, AppState, Backend, ChatResponse, ExternalClient, ExternalConfig, TrialDetail,
};
use biomech_core::baselines::{fit_gbdt, BaselineModel, GbdtConfig, Targets, MODEL_FORMAT_VERSION};
use biomech_core::dataset::TaskKind;
use biomech_core::synth::{generate_cohort_trials, sample_cohort, CohortConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const K: usize = 8;

fn model(task: TaskKind, labels: &[&str]) -> BaselineModel {
    let x: Vec<Vec<f64>> = (0..labels.len().max(2) * 6)
        .map(|i| (0..K).map(|j| if j == i % K { 1.0 } else { 0.0 }).collect())
        .collect();
    let config = GbdtConfig {
        rounds: 5,
        min_samples_leaf: 1,
        ..GbdtConfig::default()
    };
    let ensemble = if task.is_classification() {
        let y: Vec<String> = (0..x.len())
            .map(|i| labels[i % K % labels.len()].to_string())
            .collect();
        fit_gbdt(&x, Targets::Classes(&y), &config).unwrap()
    } else {
        let y: Vec<f64> = (0..x.len()).map(|i| 90.0 + (i % K) as f64 * 5.0).collect();
        fit_gbdt(&x, Targets::Values(&y), &config).unwrap()
    };
    BaselineModel {
        format_version: MODEL_FORMAT_VERSION,
        task,
        codebook_size: K,
        config,
        search: None,
        search_note: None,
        chance_f1: None,
        ensemble,
    }
}

fn trials() -> Vec<TrialDetail> {
    let cohort = sample_cohort(3, 2, &CohortConfig::default()).unwrap();
    generate_cohort_trials(3, &cohort)
        .take(4)
        .enumerate()
        .map(|(i, t)| {
            let t = t.unwrap();
            let tokens: Vec<u32> = (0..20).map(|j| ((i + j * (i + 1)) % K) as u32).collect();
            TrialDetail::new(&t, tokens)
        })
        .collect()
}

fn models(impaired: &[&str], diagnosis: &[&str]) -> BTreeMap<TaskKind, BaselineModel> {
    [
        (
            TaskKind::Activity,
            model(
                TaskKind::Activity,
                &["Overground Walking", "Timed Up and Go"],
            ),
        ),
        (TaskKind::Impaired, model(TaskKind::Impaired, impaired)),
        (TaskKind::Diagnosis, model(TaskKind::Diagnosis, diagnosis)),
        (TaskKind::Falls, model(TaskKind::Falls, &["Yes", "No"])),
        (TaskKind::Cadence, model(TaskKind::Cadence, &[])),
        (TaskKind::WalkingSpeed, model(TaskKind::WalkingSpeed, &[])),
    ]
    .into_iter()
    .collect()
}

fn mock_state(impaired: &[&str], diagnosis: &[&str]) -> Arc<AppState> {
    Arc::new(AppState::new(
        trials(),
        models(impaired, diagnosis),
        Backend::Mock,
    ))
}

async fn call(app: Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn chat_body(trial: &str, message: &str) -> Value {
    json!({"trial_id": trial, "message": message, "history": []})
}

#[tokio::test]
async fn health_and_trial_listing() {
    let state = mock_state(&["Yes", "No"], &["Stroke", "TBI"]);
    let (s, v) = call(router(state.clone()), "GET", "/healthz", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!({"status": "ok"})));

    let (s, v) = call(router(state.clone()), "GET", "/api/trials", None).await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 4);
    let first = list[0].as_object().unwrap();
    let keys: Vec<&str> = first.keys().map(|k| k.as_str()).collect();
    assert_eq!(
        keys,
        ["activity", "duration_s", "participant_id", "trial_id"]
    );

    let id = first["trial_id"].as_str().unwrap();
    let (s, v) = call(
        router(state.clone()),
        "GET",
        &format!("/api/trials/{id}"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["trial_id"], first["trial_id"]);
    assert_eq!(v["tokens"].as_array().unwrap().len(), 20);
    assert_eq!(v["traces"]["channels"].as_array().unwrap().len(), 34);
    assert_eq!(v["traces"]["values"].as_array().unwrap().len(), 34);

    let (s, _) = call(router(state), "GET", "/api/trials/P9999-T01", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn chat_validation() {
    let state = mock_state(&["Yes", "No"], &["Stroke"]);
    let (s, _) = call(
        router(state.clone()),
        "POST",
        "/api/chat",
        Some(chat_body("nope", "What is this person doing?")),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let id = state.trial_summaries()[0].trial_id.clone();
    let (s, _) = call(
        router(state.clone()),
        "POST",
        "/api/chat",
        Some(chat_body(&id, "  ")),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let bad_role =
        json!({"trial_id": id, "message": "hi", "history": [{"role": "system", "text": "x"}]});
    let (s, _) = call(router(state), "POST", "/api/chat", Some(bad_role)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn mock_replies_match_direct_predictions() {
    let state = mock_state(&["Yes", "No"], &["Prosthesis User", "Stroke"]);
    let ms = models(&["Yes", "No"], &["Prosthesis User", "Stroke"]);
    let questions = [
        ("What is this person doing?", TaskKind::Activity),
        ("How fast is this person walking?", TaskKind::WalkingSpeed),
        ("What is the cadence of this walking?", TaskKind::Cadence),
    ];
    for t in trials() {
        for (q, task) in questions {
            let (s, v) = call(
                router(state.clone()),
                "POST",
                "/api/chat",
                Some(chat_body(&t.summary.trial_id, q)),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
            let r: ChatResponse = serde_json::from_value(v).unwrap();
            assert_eq!(r.intent, task.name());
            assert_eq!(r.backend, "mock");
            assert_eq!(r.reply, ms[&task].predict_answer(&t.tokens).unwrap());
        }
    }
}

#[tokio::test]
async fn mock_is_deterministic_and_unknown_gets_capabilities() {
    let state = mock_state(&["Yes", "No"], &["Stroke"]);
    let id = state.trial_summaries()[1].trial_id.clone();
    let body = chat_body(&id, "What is this person doing?");
    let a = call(
        router(state.clone()),
        "POST",
        "/api/chat",
        Some(body.clone()),
    )
    .await;
    let b = call(router(state.clone()), "POST", "/api/chat", Some(body)).await;
    assert_eq!(a, b);
    let (_, v) = call(
        router(state),
        "POST",
        "/api/chat",
        Some(chat_body(&id, "What's the weather like?")),
    )
    .await;
    assert_eq!(v["intent"], "Unknown");
    let reply = v["reply"].as_str().unwrap();
    assert!(reply.contains("What is this person doing?"), "{reply}");
    assert_eq!(reply.matches("\n- ").count(), 6);
}

#[tokio::test]
async fn guards_on_diagnosis_and_falls() {
    let unimpaired = mock_state(&["No"], &["Stroke"]);
    let id = unimpaired.trial_summaries()[0].trial_id.clone();
    let q = "What is the most likely diagnosis for this gait impairment?";
    let (_, v) = call(
        router(unimpaired.clone()),
        "POST",
        "/api/chat",
        Some(chat_body(&id, q)),
    )
    .await;
    assert_eq!(v["intent"], "Diagnosis");
    assert_eq!(v["reply"], NO_IMPAIRMENT_MESSAGE);

    let falls_q = "Does this person have a history of falls?";
    let (_, v) = call(
        router(unimpaired),
        "POST",
        "/api/chat",
        Some(chat_body(&id, falls_q)),
    )
    .await;
    assert_eq!(v["intent"], "Falls");
    assert_eq!(v["reply"], FALLS_GUARD_MESSAGE);

    let stroke = mock_state(&["Yes"], &["Stroke"]);
    let (_, v) = call(
        router(stroke),
        "POST",
        "/api/chat",
        Some(chat_body(&id, falls_q)),
    )
    .await;
    assert_eq!(v["reply"], FALLS_GUARD_MESSAGE);

    let prosthesis = mock_state(&["Yes"], &["Prosthesis User"]);
    let (_, v) = call(
        router(prosthesis.clone()),
        "POST",
        "/api/chat",
        Some(chat_body(&id, q)),
    )
    .await;
    assert_eq!(v["reply"], "Prosthesis User");
    let (_, v) = call(
        router(prosthesis),
        "POST",
        "/api/chat",
        Some(chat_body(&id, falls_q)),
    )
    .await;
    let reply = v["reply"].as_str().unwrap();
    assert!(reply == "Yes" || reply == "No", "{reply}");
}

#[test]
fn external_request_matches_golden_file() {
    let prompt = external_prompt(
        &[1, 2, 3],
        "What is the most likely diagnosis for this gait impairment?",
    )
    .unwrap();
    let golden = include_str!("golden/external_request.json");
    assert_eq!(request_body(DEFAULT_MODEL, &prompt), golden);
    assert!(prompt.contains("<motion_start><motion_1><motion_2><motion_3><motion_end>"));
}

/// Stub upstream answering with a scripted sequence of (status, body).
async fn stub(script: Vec<(u16, String)>) -> (SocketAddr, Arc<Mutex<Vec<Bytes>>>) {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let script = Arc::new(Mutex::new(script.into_iter()));
    let seen2 = seen.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |body: Bytes| {
            let seen = seen2.clone();
            let script = script.clone();
            async move {
                seen.lock().unwrap().push(body);
                let (status, text) = script
                    .lock()
                    .unwrap()
                    .next()
                    .unwrap_or((500, String::new()));
                (StatusCode::from_u16(status).unwrap(), text)
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, seen)
}

fn reply_json(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn external_state(addr: SocketAddr, retries: u32) -> Arc<AppState> {
    let mut config = ExternalConfig::new(format!("http://{addr}"));
    config.max_retries = retries;
    config.backoff_base = Duration::from_millis(5);
    config.api_key = Some("test-key".into());
    let client = ExternalClient::new(config).unwrap();
    Arc::new(AppState::new(
        trials(),
        BTreeMap::new(),
        Backend::External(client),
    ))
}

#[tokio::test]
async fn external_passthrough_and_prompt() {
    let (addr, seen) = stub(vec![(200, reply_json("Stroke"))]).await;
    let state = external_state(addr, 2);
    let t = &trials()[0];
    let q = "What is the most likely diagnosis for this gait impairment?";
    let (s, v) = call(
        router(state),
        "POST",
        "/api/chat",
        Some(chat_body(&t.summary.trial_id, q)),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["reply"], "Stroke");
    assert_eq!(v["backend"], "external");
    let sent = seen.lock().unwrap()[0].clone();
    let expected = request_body(DEFAULT_MODEL, &external_prompt(&t.tokens, q).unwrap());
    assert_eq!(sent, expected.as_bytes());
}

#[tokio::test]
async fn external_retries_server_errors() {
    let (addr, seen) = stub(vec![
        (503, String::new()),
        (502, String::new()),
        (200, reply_json("TBI")),
    ])
    .await;
    let state = external_state(addr, 2);
    let id = state.trial_summaries()[0].trial_id.clone();
    let (s, v) = call(
        router(state),
        "POST",
        "/api/chat",
        Some(chat_body(&id, "hello there")),
    )
    .await;
    assert_eq!((s, v["reply"].clone()), (StatusCode::OK, json!("TBI")));
    assert_eq!(seen.lock().unwrap().len(), 3);

    let (addr, seen) = stub(vec![(500, String::new()); 5]).await;
    let state = external_state(addr, 2);
    let (s, v) = call(
        router(state),
        "POST",
        "/api/chat",
        Some(chat_body(&id, "hello")),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["upstream_status"], 500);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[tokio::test]
async fn external_client_errors_are_not_retried() {
    let (addr, seen) = stub(vec![(404, String::new()), (200, reply_json("x"))]).await;
    let state = external_state(addr, 2);
    let id = state.trial_summaries()[0].trial_id.clone();
    let (s, v) = call(
        router(state),
        "POST",
        "/api/chat",
        Some(chat_body(&id, "hello")),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["upstream_status"], 404);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn external_transport_failure_after_retries() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let state = external_state(addr, 1);
    let id = state.trial_summaries()[0].trial_id.clone();
    let (s, v) = call(
        router(state),
        "POST",
        "/api/chat",
        Some(chat_body(&id, "hello")),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert!(v["error"].as_str().unwrap().contains("transport"));
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the default desk pipeline once in a temporary workspace and checks
//! every criterion against it, plus a reduced pipeline twice through the
//! binary for determinism.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use biomech_chatd::{AppState, Backend, ChatRequest};
use biomech_cli::commands::{self, AblateArgs, BuildDatasetArgs, EvalArgs, SynthArgs};
use biomech_cli::commands::{TrainBaselinesArgs, TrainTokenizerArgs};
use biomech_cli::pipeline;
use biomech_cli::Workspace;
use biomech_core::baselines::BaselineModel;
use biomech_core::dataset::{
    answer_for, extract_motion_tokens, format_chat, format_prediction, load_templates,
    render_prompt, DatasetManifest, MultimodalSample, Split, TaskKind, MOTION_PLACEHOLDER,
};
use biomech_core::eval::{
    classification_report, parse_class_answer, parse_numeric_for_task, pearson_r, EvalReport,
    F1Mode, TaskOutcome,
};
use biomech_core::motion::{ChannelMask, NUM_JOINTS};
use biomech_core::seed::SeedDeriver;
use biomech_core::tokenizer::{Codebook, NormStats, TokenizerConfig, TokenizerModel};
use ndarray::{array, Array2};
use rand::seq::IndexedRandom;
use rand::Rng;
use regex::Regex;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    format!("error: {e:#}")
}

/// State shared by the criteria that need the default pipeline.
struct Desk {
    ws: Workspace,
    tokenizer: commands::TokenizerSummary,
    tokenizer_time: Duration,
    manifest: DatasetManifest,
    baselines_time: Duration,
    report: EvalReport,
}

fn run_desk(root: &Path) -> anyhow::Result<Desk> {
    let ws = Workspace::new(root);
    commands::synth(&ws, &SynthArgs::default())?;
    let t = Instant::now();
    let tokenizer = commands::train_tokenizer(&ws, &TrainTokenizerArgs::default())?;
    let tokenizer_time = t.elapsed();
    commands::tokenize(&ws)?;
    let manifest = commands::build_dataset(&ws, &BuildDatasetArgs::default())?;
    let t = Instant::now();
    commands::train_baselines(&ws, &TrainBaselinesArgs::default())?;
    let baselines_time = t.elapsed();
    let report = commands::eval(&ws, &EvalArgs::default())?;
    Ok(Desk {
        ws,
        tokenizer,
        tokenizer_time,
        manifest,
        baselines_time,
        report,
    })
}

fn smooth_window(len: usize, seed: u64) -> Array2<f64> {
    let mut rng = SeedDeriver::new(seed).rng();
    let phases: Vec<f64> = (0..NUM_JOINTS)
        .map(|_| rng.random_range(0.0..6.3))
        .collect();
    Array2::from_shape_fn((len, NUM_JOINTS), |(t, j)| {
        0.4 * (t as f64 * 0.2 + phases[j]).sin()
    })
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let config = TokenizerConfig {
        codebook_size_k: 4,
        code_dim_d: 4,
        hidden_channels: 4,
        window_frames: 8,
        batch_size: 2,
        seed: 3,
        ..TokenizerConfig::desk()
    };
    let mut model =
        TokenizerModel::new(config, NormStats::identity(), &ChannelMask::empty()).map_err(err)?;
    let batch = [smooth_window(8, 11), smooth_window(8, 12)];
    let worst = model.gradient_check(&batch, 1e-5).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 60.0,
        format!("worst relative error {worst:.2e} (≤ 1e-4), {secs:.1} s (< 60 s)"),
    )
}

fn tokenizer_training(desk: &Desk) -> Outcome {
    let s = &desk.tokenizer;
    let mins = desk.tokenizer_time.as_secs_f64() / 60.0;
    check(
        s.heldout_rmse_deg <= 8.0 && s.heldout_perplexity > 2.0 && mins <= 30.0,
        format!(
            "held-out RMSE {:.3} deg (≤ 8), perplexity {:.2} (> 2), {mins:.1} min (≤ 30)",
            s.heldout_rmse_deg, s.heldout_perplexity
        ),
    )
}

fn ema_oracle() -> Outcome {
    // closed form of one step: N' = gN + (1-g)n, m' = gm + (1-g)Σz, e = m'/N'
    let g = 0.99;
    let codes = array![[0.5, -1.0], [2.0, 0.25], [-3.0, 1.5]];
    let mut cb = Codebook::new(codes.clone()).map_err(err)?;
    cb.ema_cluster_count = array![1.5, 0.7, 2.0];
    cb.ema_cluster_sum = array![[0.6, -1.2], [1.4, 0.1], [-6.0, 3.0]];
    let latents = array![[1.0, 2.0], [0.5, -0.5], [3.0, 1.0], [-1.0, 0.0]];
    let indices = [0, 2, 0, 0];
    let (n0, m0) = (cb.ema_cluster_count.clone(), cb.ema_cluster_sum.clone());
    cb.ema_update(&latents, &indices, g);
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let assigned: Vec<usize> = (0..4).filter(|&i| indices[i] == k).collect();
        let n = g * n0[k] + (1.0 - g) * assigned.len() as f64;
        worst = worst.max((cb.ema_cluster_count[k] - n).abs());
        for d in 0..2 {
            let sum: f64 = assigned.iter().map(|&i| latents[[i, d]]).sum();
            let m = g * m0[[k, d]] + (1.0 - g) * sum;
            worst = worst.max((cb.ema_cluster_sum[[k, d]] - m).abs());
            worst = worst.max((cb.codes[[k, d]] - m / n).abs());
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:.2e} (≤ 1e-9)"))
}

fn dataset_integrity(desk: &Desk) -> Outcome {
    let samples = &desk.manifest.samples;
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    for s in samples {
        match s.split {
            Split::Train => train.insert(s.participant_id.as_str()),
            Split::Test => test.insert(s.participant_id.as_str()),
        };
    }
    let overlap = train.intersection(&test).count();

    let records = pipeline::trial_records(&desk.ws).map_err(err)?;
    let by_trial: BTreeMap<&str, _> = records
        .iter()
        .map(|r| (r.tokens.trial_id.as_str(), r))
        .collect();
    let mut rng = SeedDeriver::new(1000).str("closed-loop").rng();
    let picked: Vec<&MultimodalSample> = samples.choose_multiple(&mut rng, 1000).collect();
    let mut broken = Vec::new();
    for s in &picked {
        let Some(rec) = by_trial.get(s.trial_id.as_str()) else {
            broken.push(format!("{}: unknown trial", s.trial_id));
            continue;
        };
        let template = &load_templates().templates(s.task_kind)[s.template_index];
        let prompt = render_prompt(template.prompt_pattern, &rec.tokens.tokens);
        let answer = answer_for(s.task_kind, &rec.ground_truth);
        let tokens = extract_motion_tokens(&s.prompt_text);
        let reparsed = if s.task_kind.is_classification() {
            parse_class_answer(&s.answer_text, s.task_kind.vocabulary())
        } else {
            parse_numeric_for_task(s.task_kind, &s.answer_text)
                .and_then(|v| format_prediction(s.task_kind, v))
        };
        let ok = prompt.as_ref().ok() == Some(&s.prompt_text)
            && answer.as_ref().ok() == Some(&s.answer_text)
            && tokens.as_ref().ok() == Some(&rec.tokens.tokens)
            && reparsed.as_ref() == Some(&s.answer_text)
            && rec.participant_id == s.participant_id;
        if !ok {
            broken.push(s.trial_id.clone());
        }
    }
    check(
        overlap == 0 && broken.is_empty() && picked.len() == 1000 && samples.len() >= 5000,
        format!(
            "{overlap} shared participants, {}/{} closed-loop failures, {} samples (≥ 5000)",
            broken.len(),
            picked.len(),
            samples.len()
        ),
    )
}

fn chat_golden() -> Outcome {
    let listing = include_str!("golden/chat_listing.txt");
    let sample = MultimodalSample {
        task_kind: TaskKind::Diagnosis,
        participant_id: "P0001".into(),
        trial_id: "P0001-T00".into(),
        prompt_text: render_prompt(
            &format!(
                "{MOTION_PLACEHOLDER} What is the most likely diagnosis for this gait impairment?"
            ),
            &[17, 3, 42],
        )
        .map_err(err)?,
        answer_text: "Stroke".into(),
        split: Split::Train,
        template_index: 0,
    };
    let rendered = format_chat(&sample);
    // listing: elided token run, `</motion_end>` and trailing spaces
    let tokens = Regex::new(r"<motion_(\d+|N)>(( \.\.\. )?<motion_(\d+|N)>)*").unwrap();
    let normalize = |s: &str| {
        let s = tokens
            .replace_all(s, "<motion_#>")
            .replace("</motion_end>", "<motion_end>");
        s.lines().map(str::trim_end).collect::<Vec<_>>().join("\n")
    };
    let expected = normalize(listing.trim_end());
    let got = normalize(&rendered);
    check(
        got == expected && rendered.ends_with("Stroke<end_of_turn>"),
        format!(
            "{} bytes match the listing modulo token indices",
            rendered.len()
        ),
    )
    .map_err(|_| format!("rendered {rendered:?} vs listing {expected:?}"))
}

fn headline(report: &EvalReport, task: TaskKind) -> Option<(f64, Option<f64>)> {
    let t = report.task(task)?;
    let value = match &t.outcome {
        TaskOutcome::Classification(c) => c.f1,
        TaskOutcome::Regression(r) => r.pearson_r,
        TaskOutcome::Unavailable(_) => return None,
    };
    Some((value, t.chance))
}

fn baselines_beat_chance(desk: &Desk) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for task in TaskKind::CLASSIFICATION {
        match headline(&desk.report, task) {
            Some((f1, Some(chance))) => {
                ok &= f1 >= chance + 0.15;
                parts.push(format!("{task} {f1:.3} vs {chance:.3}"));
            }
            _ => {
                ok = false;
                parts.push(format!("{task} unavailable"));
            }
        }
    }
    let activity = headline(&desk.report, TaskKind::Activity).map_or(0.0, |h| h.0);
    let mins = desk.baselines_time.as_secs_f64() / 60.0;
    ok &= activity >= 0.90 && mins <= 15.0;
    check(
        ok,
        format!(
            "{}; Activity {activity:.3} (≥ 0.90); {mins:.1} min (≤ 15)",
            parts.join(", ")
        ),
    )
}

fn regression(desk: &Desk) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for task in [TaskKind::Cadence, TaskKind::WalkingSpeed] {
        match desk.report.task(task).map(|t| &t.outcome) {
            Some(TaskOutcome::Regression(r)) => {
                ok &= r.pearson_r >= 0.8 && r.p_value < 0.01;
                parts.push(format!("{task} r {:.3} p {:.4}", r.pearson_r, r.p_value));
            }
            _ => {
                ok = false;
                parts.push(format!("{task} unavailable"));
            }
        }
    }
    check(ok, format!("{} (r ≥ 0.8, p < 0.01)", parts.join(", ")))
}

fn oracle_f1(
    preds: &[Option<String>],
    truth: &[String],
    vocab: &[&str],
    positive: Option<&str>,
) -> f64 {
    let per_class = |c: &str| {
        let tp = (0..truth.len())
            .filter(|&i| truth[i] == c && preds[i].as_deref() == Some(c))
            .count();
        let fp = (0..truth.len())
            .filter(|&i| truth[i] != c && preds[i].as_deref() == Some(c))
            .count();
        let fn_ = (0..truth.len())
            .filter(|&i| truth[i] == c && preds[i].as_deref() != Some(c))
            .count();
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        (f, tp + fp + fn_ > 0)
    };
    match positive {
        Some(c) => {
            let (f, seen) = per_class(c);
            if seen {
                f
            } else if (0..truth.len()).all(|i| preds[i].as_deref() == Some(truth[i].as_str())) {
                1.0
            } else {
                0.0
            }
        }
        None => {
            let present: Vec<f64> = vocab
                .iter()
                .map(|c| per_class(c))
                .filter(|(_, seen)| *seen)
                .map(|(f, _)| f)
                .collect();
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn metric_oracles() -> Outcome {
    let mut rng = SeedDeriver::new(50).str("metric-oracles").rng();
    let mut worst: f64 = 0.0;
    let mut confusion_errors = 0;
    for i in 0..50 {
        let task = if i % 2 == 0 {
            TaskKind::Impaired
        } else {
            TaskKind::AssistiveDevice
        };
        let vocab = task.vocabulary();
        let n = rng.random_range(3..25);
        let truth: Vec<String> = (0..n)
            .map(|_| vocab.choose(&mut rng).unwrap().to_string())
            .collect();
        let preds: Vec<Option<String>> = (0..n)
            .map(|_| {
                rng.random_bool(0.9)
                    .then(|| vocab.choose(&mut rng).unwrap().to_string())
            })
            .collect();
        let positive = task.is_binary().then_some("Yes");
        let mode = positive.map_or(F1Mode::Macro, F1Mode::Positive);
        let report = classification_report(&preds, &truth, vocab, mode).map_err(err)?;
        worst = worst.max((report.f1 - oracle_f1(&preds, &truth, vocab, positive)).abs());
        for (r, t) in vocab.iter().enumerate() {
            for (c, p) in vocab.iter().enumerate() {
                let count = (0..n)
                    .filter(|&k| truth[k] == *t && preds[k].as_deref() == Some(*p))
                    .count() as u64;
                confusion_errors += usize::from(report.matrix.counts[r][c] != count);
            }
            let missing = (0..n)
                .filter(|&k| truth[k] == *t && preds[k].is_none())
                .count() as u64;
            confusion_errors += usize::from(report.matrix.unparsed[r] != missing);
        }

        let m = rng.random_range(3..30);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v * rng.random_range(-1.0..2.0) + rng.random_range(-3.0..3.0))
            .collect();
        let r = pearson_r(&x, &y).map_err(err)?;
        worst = worst.max((r - oracle_pearson(&x, &y)).abs());
    }
    check(
        worst <= 1e-9 && confusion_errors == 0,
        format!(
            "50 instances, max |Δ| {worst:.2e} (≤ 1e-9), {confusion_errors} confusion mismatches"
        ),
    )
}

fn ablation(desk: &Desk) -> Outcome {
    // the table shape is what is checked; a light search keeps this quick
    let args = AblateArgs {
        search_iters: 1,
        chance_repeats: 1,
        permutations: 200,
        ..AblateArgs::default()
    };
    let cmp = commands::ablate(&desk.ws, &args).map_err(err)?;
    let csv =
        std::fs::read_to_string(desk.ws.ablation_dir().join("comparison.csv")).map_err(err)?;
    let mut lines = csv.lines();
    let header_ok = lines.next() == Some("task,activity+impaired,all");
    let all_tasks: BTreeSet<TaskKind> = desk.manifest.samples.iter().map(|s| s.task_kind).collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let mut ok = header_ok && cmp.subsets == ["activity+impaired", "all"];
    ok &= rows.len() == all_tasks.len();
    for row in &rows {
        let Ok(task) = row[0].parse::<TaskKind>() else {
            ok = false;
            continue;
        };
        let in_subset = matches!(task, TaskKind::Activity | TaskKind::Impaired);
        ok &= row.len() == 3
            && (row[1] == "NA") != in_subset
            && row[2] != "NA"
            && row[1..]
                .iter()
                .all(|c| *c == "NA" || c.parse::<f64>().is_ok());
    }
    for name in &cmp.subsets {
        ok &= desk.ws.ablation_dir().join(name).join("eval.txt").is_file();
    }
    check(
        ok,
        format!("{} rows over subsets {:?}", rows.len(), cmp.subsets),
    )
}

fn mock_consistency(desk: &Desk) -> Outcome {
    let ws = &desk.ws;
    let models: BTreeMap<TaskKind, BaselineModel> =
        pipeline::load_models(&ws.baselines_dir(), TaskKind::ALL).map_err(err)?;
    let state = AppState::load(&ws.cohort_dir(), &ws.models_dir(), Backend::Mock).map_err(err)?;
    let corpus = biomech_core::tokenizer::read_token_corpus(&ws.tokens_file()).map_err(err)?;
    let questions: Vec<(TaskKind, String)> = load_templates()
        .iter()
        .map(|t| {
            (
                t.task_kind,
                t.prompt_pattern
                    .replace(MOTION_PLACEHOLDER, "")
                    .trim()
                    .to_string(),
            )
        })
        .filter(|(task, q)| state.classify(q) == biomech_chatd::Intent::Task(*task))
        .collect();
    let runtime = tokio::runtime::Builder::new_current_thread()
        .build()
        .map_err(err)?;
    let mut rng = SeedDeriver::new(100).str("mock-consistency").rng();
    let mut mismatches = Vec::new();
    let mut answered = 0;
    for _ in 0..100 {
        let seq = corpus.choose(&mut rng).unwrap();
        let (task, question) = questions.choose(&mut rng).unwrap();
        let predict = |t: TaskKind| models[&t].predict_answer(&seq.tokens).unwrap();
        let impaired = predict(TaskKind::Impaired);
        let expected = match task {
            TaskKind::Diagnosis if impaired == "No" => {
                Some(biomech_chatd::server::NO_IMPAIRMENT_MESSAGE.to_string())
            }
            TaskKind::Falls
                if !(impaired == "Yes" && predict(TaskKind::Diagnosis) == "Prosthesis User") =>
            {
                Some(biomech_chatd::server::FALLS_GUARD_MESSAGE.to_string())
            }
            _ => {
                answered += 1;
                Some(predict(*task))
            }
        };
        let req = ChatRequest {
            trial_id: seq.trial_id.clone(),
            message: question.clone(),
            history: Vec::new(),
        };
        let reply = runtime
            .block_on(state.chat(&req))
            .map_err(|e| format!("{e:?}"))?;
        if Some(&reply.reply) != expected.as_ref() || reply.intent != task.name() {
            mismatches.push(format!("{} / {question:?}", seq.trial_id));
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "{} mismatches in 100 pairs ({answered} answered, rest guarded)",
            mismatches.len()
        ),
    )
    .map_err(|d| format!("{d}: {:?}", &mismatches[..mismatches.len().min(5)]))
}

fn biomech(ws: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_biomech"))
        .arg("-w")
        .arg(ws)
        .args(args)
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "biomech {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap_or_default());
            }
        }
    }
    out
}

fn determinism(tmp: &Path) -> Outcome {
    // reduced cohort and step counts; every stage still runs through the binary
    let steps: [&[&str]; 8] = [
        &["synth", "--seed", "9", "--participants", "20"],
        &["train-tokenizer", "--seed", "9", "--steps", "60"],
        &["tokenize"],
        &["build-dataset", "--seed", "9"],
        &[
            "train-baselines",
            "--seed",
            "9",
            "--search-iters",
            "2",
            "--chance-repeats",
            "2",
        ],
        &["eval", "--permutations", "500"],
        &["eval", "--format", "csv", "--permutations", "500"],
        &[
            "ablate",
            "--search-iters",
            "1",
            "--chance-repeats",
            "1",
            "--permutations",
            "200",
        ],
    ];
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let ws = tmp.join(run);
        for args in steps {
            biomech(&ws, args)?;
        }
        trees.push((files_under(&ws.join("reports")), files_under(&ws)));
    }
    let (reports_a, all_a) = &trees[0];
    let (reports_b, all_b) = &trees[1];
    let differing: Vec<&String> = all_a
        .iter()
        .filter(|(k, v)| all_b.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    check(
        reports_a == reports_b
            && all_a.len() == all_b.len()
            && differing.is_empty()
            && !reports_a.is_empty(),
        format!(
            "{} report files and {} workspace files byte-identical across two runs",
            reports_a.len(),
            all_a.len()
        ),
    )
    .map_err(|d| format!("{d}; differing: {differing:?}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => println!("FAIL  {name}: {d}"),
        }
        results.push((name, outcome));
    };

    report("tokenizer gradient check", gradient_check());
    report("EMA codebook oracle", ema_oracle());
    report("chat-format golden", chat_golden());
    report("metric oracles", metric_oracles());

    eprintln!("running the default desk pipeline; this takes several minutes");
    match run_desk(&tmp.path().join("desk")) {
        Ok(desk) => {
            report("tokenizer training", tokenizer_training(&desk));
            report("dataset integrity", dataset_integrity(&desk));
            report("baselines beat chance", baselines_beat_chance(&desk));
            report("regression analogue", regression(&desk));
            report("mock chat consistency", mock_consistency(&desk));
            report("ablation tooling", ablation(&desk));
        }
        Err(e) => {
            for name in [
                "tokenizer training",
                "dataset integrity",
                "baselines beat chance",
                "regression analogue",
                "mock chat consistency",
                "ablation tooling",
            ] {
                report(name, Err(format!("desk pipeline failed: {e:#}")));
            }
        }
    }
    report(
        "end-to-end determinism",
        determinism(&tmp.path().join("determinism")),
    );

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

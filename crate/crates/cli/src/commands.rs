use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use biomech_core::baselines::{TrainOptions, DEFAULT_CHANCE_REPEATS, DEFAULT_SEARCH_ITERATIONS};
use biomech_core::dataset::{
    export_finetune_manifest, fingerprint, split_participants_stratified, DatasetManifest,
    FinetuneManifest, TaskKind, DEFAULT_BASE_MODEL,
};
use biomech_core::eval::{aggregate_runs, EvalReport, DEFAULT_PERMUTATIONS};
use biomech_core::motion::{apply_channel_mask, strip_to_joint_matrix, write_trial, ChannelMask};
use biomech_core::seed::SeedDeriver;
use biomech_core::synth::{cohort_to_ndjson, generate_cohort_trials, sample_cohort, CohortConfig};
use biomech_core::tokenizer::{
    codebook_stats, fit_with_progress, write_token_corpus, TokenSequence, TokenizerConfig,
};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::pipeline::{
    build, dataset_tasks, evaluate_models, load_models, load_split, load_tokenizer,
    parse_task_filter, save_models, subset_name, suite_file, train_models, trial_records,
    SuiteInfo,
};
use crate::workspace::{require, write_text, Workspace};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PARTICIPANTS: usize = 120;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.9;

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_PARTICIPANTS)]
    pub participants: usize,
}

impl Default for SynthArgs {
    fn default() -> Self {
        SynthArgs {
            seed: DEFAULT_SEED,
            participants: DEFAULT_PARTICIPANTS,
        }
    }
}

pub fn synth(ws: &Workspace, args: &SynthArgs) -> Result<()> {
    let cohort = sample_cohort(args.seed, args.participants, &CohortConfig::default())?;
    if ws.cohort_dir().exists() {
        std::fs::remove_dir_all(ws.cohort_dir())
            .with_context(|| format!("clearing {}", ws.cohort_dir().display()))?;
    }
    write_text(&ws.participants_file(), &cohort_to_ndjson(&cohort))?;
    let mut n = 0;
    for traj in generate_cohort_trials(args.seed, &cohort) {
        let traj = traj?;
        write_trial(&ws.trial_path(&traj.participant_id, &traj.trial_id), &traj)?;
        n += 1;
    }
    log::info!("wrote {} participants and {n} trials", cohort.len());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainTokenizerArgs {
    /// desk or paper
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Overrides the profile's step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Fraction of participants in the training split.
    #[arg(long, default_value_t = DEFAULT_SPLIT_RATIO)]
    pub split_ratio: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl Default for TrainTokenizerArgs {
    fn default() -> Self {
        TrainTokenizerArgs {
            profile: "desk".into(),
            steps: None,
            split_ratio: DEFAULT_SPLIT_RATIO,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSummary {
    pub profile: String,
    pub train_steps: usize,
    pub train_trials: usize,
    pub heldout_trials: usize,
    pub final_recon_loss: f64,
    pub heldout_rmse_deg: f64,
    pub heldout_per_joint_rmse_deg: Vec<f64>,
    pub heldout_perplexity: f64,
    pub codes_used: usize,
}

pub fn train_tokenizer(ws: &Workspace, args: &TrainTokenizerArgs) -> Result<TokenizerSummary> {
    let mut config = TokenizerConfig::profile(&args.profile)?;
    if let Some(s) = args.steps {
        config.train_steps = s;
    }
    config.seed = args.seed;
    let participants = ws.load_participants()?;
    // stratify on the labels so the small classes reach the test side
    let strata: Vec<(String, String)> = participants
        .iter()
        .map(|p| {
            let key = format!(
                "{:?}/{:?}/{:?}",
                p.diagnosis, p.fall_history, p.assistive_device
            );
            (p.participant_id.clone(), key)
        })
        .collect();
    let split = split_participants_stratified(&strata, args.split_ratio, args.seed)?;
    let mask = ChannelMask::default_zeroed();
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for traj in ws.load_trials()? {
        let m = strip_to_joint_matrix(&apply_channel_mask(&traj, &mask))?;
        if split.train.contains(&traj.participant_id) {
            train.push(m);
        } else {
            heldout.push((traj.trial_id.clone(), m));
        }
    }
    log::info!(
        "training {} tokenizer for {} steps on {} trials",
        args.profile,
        config.train_steps,
        train.len()
    );
    let (model, curve) = fit_with_progress(&train, &mask, &config, |step, loss| {
        if (step + 1) % 250 == 0 {
            log::info!(
                "step {}: recon {:.5} commit {:.5}",
                step + 1,
                loss.recon,
                loss.commit
            );
        }
    })?;
    let mats: Vec<_> = heldout.iter().map(|(_, m)| m.clone()).collect();
    let (rmse, perplexity, used) = if mats.is_empty() {
        (None, 0.0, 0)
    } else {
        let rmse = model.reconstruction_rmse(&mats)?;
        let toks = heldout
            .iter()
            .map(|(id, m)| model.tokenize_matrix(id, m))
            .collect::<biomech_core::Result<Vec<_>>>()?;
        let stats = codebook_stats(&toks, config.codebook_size_k)?;
        let used = stats.usage_counts.iter().filter(|&&c| c > 0).count();
        (Some(rmse), stats.perplexity, used)
    };
    model.save(&ws.tokenizer_file())?;
    split.save(&ws.split_file())?;
    let summary = TokenizerSummary {
        profile: args.profile.clone(),
        train_steps: config.train_steps,
        train_trials: train.len(),
        heldout_trials: heldout.len(),
        final_recon_loss: curve.steps.last().map_or(f64::NAN, |l| l.recon),
        heldout_rmse_deg: rmse.as_ref().map_or(f64::NAN, |r| r.overall_deg),
        heldout_per_joint_rmse_deg: rmse.map(|r| r.per_joint_deg).unwrap_or_default(),
        heldout_perplexity: perplexity,
        codes_used: used,
    };
    write_text(
        &ws.tokenizer_summary_file(),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    log::info!(
        "held-out RMSE {:.3} deg, perplexity {:.2}, {} codes used",
        summary.heldout_rmse_deg,
        summary.heldout_perplexity,
        summary.codes_used
    );
    Ok(summary)
}

pub fn tokenize(ws: &Workspace) -> Result<Vec<TokenSequence>> {
    let (model, _) = load_tokenizer(ws)?;
    let mut corpus = ws
        .load_trials()?
        .iter()
        .map(|t| model.tokenize_trial(t))
        .collect::<biomech_core::Result<Vec<_>>>()?;
    corpus.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    write_token_corpus(&ws.tokens_file(), &corpus)?;
    let stats = codebook_stats(&corpus, model.config.codebook_size_k)?;
    log::info!(
        "tokenized {} trials, perplexity {:.2}",
        corpus.len(),
        stats.perplexity
    );
    Ok(corpus)
}

#[derive(Debug, Clone, Args)]
pub struct BuildDatasetArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Comma-separated task names, or "all".
    #[arg(long, default_value = "all")]
    pub task_filter: String,
    /// Must agree with the split saved by train-tokenizer, if given.
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Default for BuildDatasetArgs {
    fn default() -> Self {
        BuildDatasetArgs {
            seed: DEFAULT_SEED,
            task_filter: "all".into(),
            split_ratio: None,
            output: None,
        }
    }
}

pub fn build_dataset(ws: &Workspace, args: &BuildDatasetArgs) -> Result<DatasetManifest> {
    let filter = parse_task_filter(&args.task_filter)?;
    let split = load_split(ws)?;
    if let Some(r) = args.split_ratio {
        if (r - split.ratio).abs() > 1e-12 {
            bail!(
                "--split-ratio {r} conflicts with the split saved by train-tokenizer ({}); \
                 rerun `biomech train-tokenizer --split-ratio {r}`",
                split.ratio
            );
        }
    }
    let (_, tok_fp) = load_tokenizer(ws)?;
    let records = trial_records(ws)?;
    let manifest = build(&records, &split, args.seed, filter, &tok_fp)?;
    let out = ws.output_path(args.output.as_deref(), ws.dataset_file())?;
    manifest.save(&out)?;
    log::info!(
        "wrote {} samples to {}",
        manifest.samples.len(),
        out.display()
    );
    Ok(manifest)
}

#[derive(Debug, Clone, Args)]
pub struct TrainBaselinesArgs {
    /// Train only this task.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEARCH_ITERATIONS)]
    pub search_iters: usize,
    #[arg(long, default_value_t = DEFAULT_CHANCE_REPEATS)]
    pub chance_repeats: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl Default for TrainBaselinesArgs {
    fn default() -> Self {
        TrainBaselinesArgs {
            task: None,
            search_iters: DEFAULT_SEARCH_ITERATIONS,
            chance_repeats: DEFAULT_CHANCE_REPEATS,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainBaselinesArgs {
    fn options(&self, codebook_size: usize, seed: u64) -> TrainOptions {
        TrainOptions {
            codebook_size,
            search_iterations: self.search_iters,
            chance_repeats: self.chance_repeats,
            seed,
        }
    }
}

pub fn train_baselines(ws: &Workspace, args: &TrainBaselinesArgs) -> Result<()> {
    let only = args
        .task
        .as_deref()
        .map(str::parse::<TaskKind>)
        .transpose()?;
    let path = require(&ws.dataset_file(), "build-dataset")?;
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = DatasetManifest::load(&path)?;
    let (tokenizer, _) = load_tokenizer(ws)?;
    let k = tokenizer.config.codebook_size_k;
    let models = train_models(&manifest, &args.options(k, args.seed), only)?;
    save_models(&ws.baselines_dir(), &models)?;
    let info = SuiteInfo {
        seed: args.seed,
        search_iterations: args.search_iters,
        chance_repeats: args.chance_repeats,
        codebook_size: k,
        dataset_fingerprint: fingerprint(&bytes),
        tasks: models.keys().copied().collect(),
    };
    write_text(
        &suite_file(ws),
        &(serde_json::to_string_pretty(&info)? + "\n"),
    )?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    /// Repeats dataset build and baseline training with derived seeds.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    /// Seed of the permutation test.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl Default for EvalArgs {
    fn default() -> Self {
        EvalArgs {
            format: ReportFormat::Text,
            runs: 1,
            permutations: DEFAULT_PERMUTATIONS,
            seed: DEFAULT_SEED,
        }
    }
}

fn render(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => report.render_text(),
        ReportFormat::Csv => report.render_csv(),
    }
}

fn report_name(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Text => "eval.txt",
        ReportFormat::Csv => "eval.csv",
    }
}

fn run_seed(seed: u64, run: u64) -> u64 {
    if run == 0 {
        seed
    } else {
        SeedDeriver::new(seed).str("run").int(run).finish()
    }
}

pub fn eval(ws: &Workspace, args: &EvalArgs) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(&require(&ws.dataset_file(), "build-dataset")?)?;
    let models = load_models(&ws.baselines_dir(), dataset_tasks(&manifest))?;
    let report = evaluate_models(&manifest, &models, args.permutations, args.seed)?;
    let mut text = render(&report, args.format);
    if args.runs > 1 {
        let info: SuiteInfo = serde_json::from_str(&std::fs::read_to_string(require(
            &suite_file(ws),
            "train-baselines",
        )?)?)?;
        let split = load_split(ws)?;
        let (_, tok_fp) = load_tokenizer(ws)?;
        let records = trial_records(ws)?;
        let mut headlines = vec![report.headlines()];
        for run in 1..args.runs {
            log::info!("run {} of {}", run + 1, args.runs);
            let m = build(
                &records,
                &split,
                run_seed(manifest.header.seed, run),
                manifest.header.task_filter.clone(),
                &tok_fp,
            )?;
            let opts = TrainOptions {
                codebook_size: info.codebook_size,
                search_iterations: info.search_iterations,
                chance_repeats: info.chance_repeats,
                seed: run_seed(info.seed, run),
            };
            let models = train_models(&m, &opts, None)?;
            headlines.push(evaluate_models(&m, &models, args.permutations, args.seed)?.headlines());
        }
        let agg = aggregate_runs(&headlines)?;
        let table = agg.render_table();
        write_text(&ws.reports_dir().join("eval_runs.csv"), &table)?;
        if args.format == ReportFormat::Text {
            text.push_str("\naggregate over runs\n");
            text.push_str(&table);
        }
    }
    write_text(&ws.reports_dir().join(report_name(args.format)), &text)?;
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Task subsets: comma-separated task names or "all"; repeat the flag
    /// for each subset.
    #[arg(long = "subset", default_values_t = ["activity,impaired".to_string(), "all".to_string()])]
    pub subsets: Vec<String>,
    /// Dataset seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub baseline_seed: u64,
    #[arg(long, default_value_t = DEFAULT_SEARCH_ITERATIONS)]
    pub search_iters: usize,
    #[arg(long, default_value_t = DEFAULT_CHANCE_REPEATS)]
    pub chance_repeats: usize,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    /// Seed of the permutation test.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub eval_seed: u64,
}

impl Default for AblateArgs {
    fn default() -> Self {
        AblateArgs {
            subsets: vec!["activity,impaired".into(), "all".into()],
            seed: DEFAULT_SEED,
            baseline_seed: DEFAULT_SEED,
            search_iters: DEFAULT_SEARCH_ITERATIONS,
            chance_repeats: DEFAULT_CHANCE_REPEATS,
            permutations: DEFAULT_PERMUTATIONS,
            eval_seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub subsets: Vec<String>,
    /// task -> one cell per subset
    pub rows: BTreeMap<TaskKind, Vec<Option<f64>>>,
}

impl Comparison {
    pub fn render_csv(&self) -> String {
        let mut out = format!("task,{}\n", self.subsets.join(","));
        for (task, cells) in &self.rows {
            let cells: Vec<String> = cells
                .iter()
                .map(|c| c.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}")))
                .collect();
            let _ = writeln!(out, "{task},{}", cells.join(","));
        }
        out
    }
}

pub fn ablate(ws: &Workspace, args: &AblateArgs) -> Result<Comparison> {
    let filters = args
        .subsets
        .iter()
        .map(|s| parse_task_filter(s))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = filters.iter().map(subset_name).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        bail!("duplicate task subsets: {}", names.join(", "));
    }
    let split = load_split(ws)?;
    let (tokenizer, tok_fp) = load_tokenizer(ws)?;
    let records = trial_records(ws)?;
    let opts = TrainOptions {
        codebook_size: tokenizer.config.codebook_size_k,
        search_iterations: args.search_iters,
        chance_repeats: args.chance_repeats,
        seed: args.baseline_seed,
    };
    let mut results = Vec::new();
    for (filter, name) in filters.into_iter().zip(&names) {
        log::info!("ablation subset {name}");
        let manifest = build(&records, &split, args.seed, filter, &tok_fp)?;
        let models = train_models(&manifest, &opts, None)?;
        let report = evaluate_models(&manifest, &models, args.permutations, args.eval_seed)?;
        write_text(
            &ws.ablation_dir().join(name).join("eval.txt"),
            &report.render_text(),
        )?;
        results.push(report.headlines());
    }
    let mut rows: BTreeMap<TaskKind, Vec<Option<f64>>> = BTreeMap::new();
    for task in results.iter().flat_map(|h| h.keys()) {
        let task: TaskKind = task.parse()?;
        rows.entry(task).or_insert_with(|| {
            results
                .iter()
                .map(|h| h.get(task.name()).copied())
                .collect()
        });
    }
    let cmp = Comparison {
        subsets: names,
        rows,
    };
    write_text(&ws.ablation_dir().join("comparison.csv"), &cmp.render_csv())?;
    Ok(cmp)
}

#[derive(Debug, Clone, Args)]
pub struct ExportManifestArgs {
    /// standard or small
    #[arg(long, default_value = "standard")]
    pub variant: String,
    #[arg(long, default_value = DEFAULT_BASE_MODEL)]
    pub base_model: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn export_manifest(ws: &Workspace, args: &ExportManifestArgs) -> Result<FinetuneManifest> {
    let manifest = FinetuneManifest::variant(&args.variant, &args.base_model)?;
    let out = ws.output_path(args.output.as_deref(), ws.manifest_file())?;
    export_finetune_manifest(&out, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    External,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// Directory with tokenizer.json and baselines/ (default: workspace models/).
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
}

pub fn serve(ws: &Workspace, args: &ServeArgs) -> Result<()> {
    use biomech_chatd::{AppState, Backend, ExternalClient, ExternalConfig};
    let model_dir = args.model_dir.clone().unwrap_or_else(|| ws.models_dir());
    require(&ws.participants_file(), "synth")?;
    require(&model_dir.join("tokenizer.json"), "train-tokenizer")?;
    let backend = match args.backend {
        BackendKind::Mock => Backend::Mock,
        BackendKind::External => {
            Backend::External(ExternalClient::new(ExternalConfig::from_env()?)?)
        }
    };
    let state = std::sync::Arc::new(AppState::load(&ws.cohort_dir(), &model_dir, backend)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(biomech_chatd::serve(state, (args.host, args.port).into()))?;
    Ok(())
}

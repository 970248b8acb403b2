//! The `macdmp` command line: one subcommand per pipeline stage.
//!
//! Every run writes its outputs as `<subcommand>_<confighash>_<seed>.<ext>`
//! under `--out-dir`, next to a `.manifest.toml` that records the arguments
//! and the SHA-256 of every output. `replay` re-runs a manifest and checks
//! that the outputs come out byte-identical.
//!
//! Exit codes: 0 success, 2 bad configuration or usage, 3 missing input
//! file, 4 unreadable or mismatched file schema, 5 failed assertion,
//! 1 anything else.

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::dataset::{
    collect, read_windows, run_behavior_policy, slice_windows, write_records, write_windows, BehaviorPolicy, DatasetHeader,
    DatasetStats,
};
use crate::diffusion::{prepare_batch, ScheduleConfig, ScheduleKind, Sampler};
use crate::error::{Error, Result};
use crate::models::{ModelBundle, ModelConfig};
use crate::netsim::{short_hash, ScenarioConfig};
use crate::planner::{self, evaluate, EvalReport, Planner, PlannerConfig, Policy, SeedResult};
use crate::theorylab::{self, Status, VerifyConfig};
use crate::train::{train, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Scenarios the shipped dataset is collected on.
pub const TRAINING_SCENARIOS: [&str; 4] = ["s8_2v6", "s8_4v4", "s9_2v7", "s9_4v5"];

#[derive(Debug, Parser)]
#[command(name = "macdmp", version, about = "Mean-field conditional diffusion planning for MF-TDMA resource allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run a scripted policy and write its transition records.
    Simulate(SimulateArgs),
    /// Collect an offline dataset of training windows.
    Collect(CollectArgs),
    /// Train the noise model, classifier and inverse dynamics jointly.
    Train(TrainArgs),
    /// Evaluate trained planners and scripted baselines.
    Eval(EvalArgs),
    /// Sweep one planner setting over a list of values.
    Ablate(AblateArgs),
    /// Run the numerical checks of the error bounds.
    VerifyTheory(VerifyArgs),
    /// Re-run a manifest and compare outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedPolicy {
    Proportional,
    Uniform,
    Noisy,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Preset name or path to a scenario TOML file.
    #[arg(long)]
    pub config: String,
    #[arg(long, default_value_t = 1000)]
    pub frames: u64,
    #[arg(long, value_enum, default_value_t = ScriptedPolicy::Proportional)]
    pub policy: ScriptedPolicy,
    /// Log-normal noise of the noisy policy.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct CollectArgs {
    #[arg(long, value_delimiter = ',', default_values_t = TRAINING_SCENARIOS.map(String::from))]
    pub scenarios: Vec<String>,
    /// Episodes in total, split round robin over the scenarios.
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1000)]
    pub frames: u64,
    #[arg(long, default_value_t = 8)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Standard,
    Compact,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Windows file written by `collect`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Optimizer steps per epoch.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ModelSize::Standard)]
    pub model: ModelSize,
    #[arg(long, default_value_t = 100)]
    pub diffusion_steps: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    pub schedule: ScheduleArg,
    /// Replace the mean-field inputs with the agent's own sequence.
    #[arg(long)]
    pub no_mf: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Cosine,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Ancestral,
    Dpm1,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    /// Steps of the fast sampler; implies `--sampler dpm1` when below K.
    #[arg(long)]
    pub k_sample: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub replan_every: usize,
    /// Bound on the predicted clean plan in standardized units.
    #[arg(long, default_value_t = planner::X0_CLIP)]
    pub x0_clip: f64,
    /// Sample without bounding the predicted clean plan.
    #[arg(long, conflicts_with = "x0_clip")]
    pub no_x0_clip: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Trained checkpoints; each becomes one planner policy.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Scripted baselines to include (`none` for no baselines).
    #[arg(long, value_delimiter = ',', default_values_t = ["uniform".to_string(), "proportional".to_string()])]
    pub baselines: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = ["s8_2v6".to_string()])]
    pub scenarios: Vec<String>,
    /// Episodes use seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 3)]
    pub num_seeds: u64,
    #[arg(long, default_value_t = planner::EVAL_FRAMES)]
    pub frames: u64,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblateParam {
    Zeta,
    KSample,
    ReplanEvery,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub param: AblateParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = ["s8_2v6".to_string()])]
    pub scenarios: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub num_seeds: u64,
    #[arg(long, default_value_t = planner::EVAL_FRAMES)]
    pub frames: u64,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Smaller end-to-end simulations (1000 steps, 20000 samples).
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the re-run outputs; defaults to the manifest's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Working directory relative input paths resolve against.
    pub cwd: PathBuf,
    /// Arguments after the program name, without `--out-dir`.
    pub args: Vec<String>,
    pub outputs: Vec<OutputEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: PathBuf,
    pub outputs: Vec<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::Missing(_) => 3,
        Error::Format(_) => 4,
        Error::Assertion(_) => 5,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code; messages go to stdout and stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &raw) {
        Ok(outcome) => {
            if let Some(o) = outcome {
                for p in &o.outputs {
                    println!("wrote {}", p.display());
                }
                println!("manifest {}", o.manifest.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one subcommand. `raw_args` are recorded in the manifest.
pub fn run(command: Command, raw_args: &[String]) -> Result<Option<RunOutcome>> {
    match command {
        Command::Simulate(a) => simulate(&a, raw_args).map(Some),
        Command::Collect(a) => run_collect(&a, raw_args).map(Some),
        Command::Train(a) => run_train(&a, raw_args).map(Some),
        Command::Eval(a) => run_eval(&a, raw_args).map(Some),
        Command::Ablate(a) => run_ablate(&a, raw_args).map(Some),
        Command::VerifyTheory(a) => verify_theory(&a, raw_args).map(Some),
        Command::Replay(a) => replay(&a).map(|_| None),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Missing(path.to_path_buf()))
    }
}

fn config_hash<T: Serialize>(settings: &T) -> Result<String> {
    let text = toml::to_string(settings).map_err(|e| Error::config("run", e.to_string()))?;
    Ok(short_hash(text.as_bytes()))
}

/// Output naming and manifest writing for one run.
struct Run<'a> {
    subcommand: &'static str,
    hash: String,
    seed: u64,
    out_dir: &'a Path,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn new(subcommand: &'static str, hash: String, seed: u64, out_dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Run {
            subcommand,
            hash,
            seed,
            out_dir,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, ext: &str) -> PathBuf {
        let p = self.out_dir.join(format!("{}_{}_{}.{ext}", self.subcommand, self.hash, self.seed));
        self.outputs.push(p.clone());
        p
    }

    fn finish(self, raw_args: &[String]) -> Result<RunOutcome> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(OutputEntry {
                    file: p.file_name().expect("output file name").to_string_lossy().into_owned(),
                    sha256: file_sha256(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            subcommand: self.subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            cwd: std::env::current_dir()?,
            args: strip_out_dir(raw_args),
            outputs,
        };
        let path = self
            .out_dir
            .join(format!("{}_{}_{}.manifest.toml", self.subcommand, self.hash, self.seed));
        let text = toml::to_string(&manifest).map_err(|e| Error::config("manifest", e.to_string()))?;
        std::fs::write(&path, text)?;
        Ok(RunOutcome {
            manifest: path,
            outputs: self.outputs,
        })
    }
}

fn strip_out_dir(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out
}

fn scripted(policy: ScriptedPolicy, sigma: f64) -> BehaviorPolicy {
    match policy {
        ScriptedPolicy::Proportional => BehaviorPolicy::Proportional,
        ScriptedPolicy::Uniform => BehaviorPolicy::Uniform,
        ScriptedPolicy::Noisy => BehaviorPolicy::NoisyProportional { sigma },
    }
}

#[derive(Serialize)]
struct SimulateSettings<'a> {
    scenario: &'a ScenarioConfig,
    frames: u64,
    policy: ScriptedPolicy,
    sigma: f64,
}

/// One scripted episode: a records file and a one-row metrics CSV.
pub fn simulate(a: &SimulateArgs, raw_args: &[String]) -> Result<RunOutcome> {
    let cfg = ScenarioConfig::load(&a.config)?;
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(Error::config("sigma", "must be finite and >= 0"));
    }
    let settings = SimulateSettings {
        scenario: &cfg,
        frames: a.frames,
        policy: a.policy,
        sigma: a.sigma,
    };
    let mut run = Run::new("simulate", config_hash(&settings)?, a.common.seed, &a.common.out_dir)?;
    let policy = scripted(a.policy, a.sigma);
    let rollout = run_behavior_policy(&cfg, policy, a.frames, a.common.seed)?;
    let header = DatasetHeader {
        config_hash: cfg.hash(),
        horizon: 0,
        gamma: 0.0,
        stats: None,
    };
    write_records(&run.path("macd"), &header, &rollout.streams)?;
    let report = EvalReport {
        policy: policy.name().to_string(),
        scenario: cfg.name.clone(),
        config_hash: run.hash.clone(),
        frames: a.frames,
        per_seed: vec![SeedResult::from_rollout(a.common.seed, &rollout, cfg.frame.duration_s)],
    };
    std::fs::write(run.path("csv"), format!("{}\n{}", planner::CSV_HEADER, report.csv_rows()))?;
    run.finish(raw_args)
}

#[derive(Serialize)]
struct CollectSettings<'a> {
    scenarios: &'a [ScenarioConfig],
    episodes: usize,
    frames: u64,
    horizon: usize,
    gamma: f64,
}

/// Behavior-policy episodes sliced into windows, with fitted statistics.
pub fn run_collect(a: &CollectArgs, raw_args: &[String]) -> Result<RunOutcome> {
    let scenarios = a.scenarios.iter().map(|s| ScenarioConfig::load(s)).collect::<Result<Vec<_>>>()?;
    if a.horizon < 2 {
        return Err(Error::config("horizon", "must be >= 2"));
    }
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(Error::config("gamma", "must lie in (0, 1]"));
    }
    if a.episodes == 0 {
        return Err(Error::config("episodes", "must be >= 1"));
    }
    let settings = CollectSettings {
        scenarios: &scenarios,
        episodes: a.episodes,
        frames: a.frames,
        horizon: a.horizon,
        gamma: a.gamma,
    };
    let hash = config_hash(&settings)?;
    let mut run = Run::new("collect", hash.clone(), a.common.seed, &a.common.out_dir)?;
    let streams = collect(&scenarios, a.episodes, a.frames, a.common.seed)?;
    let mut windows = Vec::new();
    for s in &streams {
        windows.extend(slice_windows(s, a.horizon, a.gamma)?);
    }
    let stats = DatasetStats::fit(&windows)?;
    let header = DatasetHeader {
        config_hash: hash,
        horizon: a.horizon as u32,
        gamma: a.gamma,
        stats: Some(stats),
    };
    write_windows(&run.path("macd"), &header, &windows)?;
    eprintln!("collected {} windows from {} streams", windows.len(), streams.len());
    run.finish(raw_args)
}

#[derive(Serialize)]
struct TrainSettings {
    dataset_sha256: String,
    train: TrainConfig,
    model: ModelConfig,
    schedule: ScheduleConfig,
}

/// Trains from a windows file; writes the checkpoint and a per-epoch loss CSV.
pub fn run_train(a: &TrainArgs, raw_args: &[String]) -> Result<RunOutcome> {
    require_file(&a.dataset)?;
    let (header, windows) = read_windows(&a.dataset)?;
    let stats = header
        .stats
        .ok_or_else(|| crate::FormatError::Malformed("dataset has no normalization statistics".into()))?;
    let h = header.horizon as usize;
    let mut model_cfg = match a.model {
        ModelSize::Standard => ModelConfig::standard(h, a.diffusion_steps),
        ModelSize::Compact => ModelConfig::compact(h, a.diffusion_steps),
    };
    model_cfg.mean_field = !a.no_mf;
    model_cfg.validate()?;
    let schedule_cfg = ScheduleConfig {
        steps: a.diffusion_steps,
        kind: match a.schedule {
            ScheduleArg::Cosine => ScheduleKind::Cosine,
            ScheduleArg::Linear => ScheduleKind::Linear,
        },
        beta_end: match a.schedule {
            ScheduleArg::Cosine => ScheduleConfig::default().beta_end,
            ScheduleArg::Linear => 0.02,
        },
        ..ScheduleConfig::default()
    };
    let schedule = schedule_cfg.build()?;
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        steps_per_epoch: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.common.seed,
    };
    train_cfg.validate()?;
    let settings = TrainSettings {
        dataset_sha256: file_sha256(&a.dataset)?,
        train: train_cfg,
        model: model_cfg,
        schedule: schedule_cfg,
    };
    let hash = config_hash(&settings)?;
    let mut run = Run::new("train", hash.clone(), a.common.seed, &a.common.out_dir)?;
    let batch = prepare_batch(&windows, &stats, model_cfg.mean_field)?;
    let mut model = ModelBundle::new(model_cfg, stats, a.common.seed)?;
    let logs = train(&mut model, &batch, &schedule, &train_cfg, |l| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  (inverse {:.6}, diffusion {:.6}, classifier {:.6})",
            l.epoch, l.loss.total, l.loss.inverse, l.loss.diffusion, l.loss.classifier
        );
    })?;
    let meta = CheckpointMeta {
        config_hash: hash,
        gamma: header.gamma,
        model: model_cfg,
        schedule: schedule_cfg,
    };
    save_checkpoint(&run.path("ckpt"), &meta, &model)?;
    let mut csv = String::from("epoch,total,inverse,diffusion,classifier\n");
    for l in &logs {
        writeln!(
            csv,
            "{},{:.9e},{:.9e},{:.9e},{:.9e}",
            l.epoch, l.loss.total, l.loss.inverse, l.loss.diffusion, l.loss.classifier
        )
        .expect("write to string");
    }
    std::fs::write(run.path("csv"), csv)?;
    run.finish(raw_args)
}

fn load_planner(path: &Path, plan: &PlanArgs) -> Result<(Planner, String)> {
    require_file(path)?;
    let digest = file_sha256(path)?;
    let (meta, model) = load_checkpoint(path)?;
    let schedule = meta.schedule.build()?;
    let mut cfg = PlannerConfig::new(meta.model.horizon, meta.model.diffusion_steps);
    if let Some(z) = plan.zeta {
        cfg.guidance.zeta = z;
    }
    if let Some(k) = plan.k_sample {
        cfg.guidance.k_sample = k;
        if k < meta.model.diffusion_steps {
            cfg.guidance.sampler = Sampler::Dpm1;
        }
    }
    match plan.sampler {
        Some(SamplerArg::Ancestral) => cfg.guidance.sampler = Sampler::Ancestral,
        Some(SamplerArg::Dpm1) => cfg.guidance.sampler = Sampler::Dpm1,
        None => {}
    }
    cfg.replan_every = plan.replan_every;
    cfg.guidance.x0_clip = if plan.no_x0_clip { None } else { Some(plan.x0_clip) };
    Ok((Planner::new(model, schedule, cfg)?, digest))
}

fn baseline(name: &str) -> Result<Option<BehaviorPolicy>> {
    match name {
        "uniform" => Ok(Some(BehaviorPolicy::Uniform)),
        "proportional" => Ok(Some(BehaviorPolicy::Proportional)),
        "none" => Ok(None),
        other => Err(Error::config("baselines", format!("unknown baseline `{other}` (uniform, proportional, none)"))),
    }
}

#[derive(Serialize)]
struct EvalSettings<'a> {
    checkpoints: Vec<String>,
    planners: Vec<PlannerConfig>,
    baselines: &'a [String],
    scenarios: &'a [ScenarioConfig],
    num_seeds: u64,
    frames: u64,
}

fn seeds(base: u64, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::config("num_seeds", "must be >= 1"));
    }
    Ok((0..n).map(|i| base.wrapping_add(i)).collect())
}

/// One CSV row per (policy, scenario, seed) and a text summary per report.
pub fn run_eval(a: &EvalArgs, raw_args: &[String]) -> Result<RunOutcome> {
    let scenarios = a.scenarios.iter().map(|s| ScenarioConfig::load(s)).collect::<Result<Vec<_>>>()?;
    let loaded = a.checkpoint.iter().map(|p| load_planner(p, &a.plan)).collect::<Result<Vec<_>>>()?;
    let mut baselines = Vec::new();
    for b in &a.baselines {
        baselines.extend(baseline(b)?);
    }
    if loaded.is_empty() && baselines.is_empty() {
        return Err(Error::config("checkpoint", "nothing to evaluate: give a checkpoint or a baseline"));
    }
    let seeds = seeds(a.common.seed, a.num_seeds)?;
    let settings = EvalSettings {
        checkpoints: loaded.iter().map(|(_, d)| d.clone()).collect(),
        planners: loaded.iter().map(|(p, _)| p.config).collect(),
        baselines: &a.baselines,
        scenarios: &scenarios,
        num_seeds: a.num_seeds,
        frames: a.frames,
    };
    let mut run = Run::new("eval", config_hash(&settings)?, a.common.seed, &a.common.out_dir)?;
    let mut policies: Vec<Policy> = loaded.iter().map(|(p, _)| Policy::Planner(p)).collect();
    policies.extend(baselines.into_iter().map(Policy::Scripted));
    let mut csv = format!("{}\n", planner::CSV_HEADER);
    for cfg in &scenarios {
        for &policy in &policies {
            let report = evaluate(policy, cfg, a.frames, &seeds)?;
            print!("{}", report.summary());
            csv.push_str(&report.csv_rows());
        }
    }
    std::fs::write(run.path("csv"), csv)?;
    run.finish(raw_args)
}

#[derive(Serialize)]
struct AblateSettings<'a> {
    checkpoint: String,
    base: PlannerConfig,
    param: AblateParam,
    values: &'a [f64],
    scenarios: &'a [ScenarioConfig],
    num_seeds: u64,
    frames: u64,
}

fn as_count(field: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::config(field, format!("`{v}` is not a positive integer")))
    }
}

/// Evaluates the checkpoint once per value of the swept setting.
pub fn run_ablate(a: &AblateArgs, raw_args: &[String]) -> Result<RunOutcome> {
    let scenarios = a.scenarios.iter().map(|s| ScenarioConfig::load(s)).collect::<Result<Vec<_>>>()?;
    let (base, digest) = load_planner(&a.checkpoint, &a.plan)?;
    let seeds = seeds(a.common.seed, a.num_seeds)?;
    let planners = a
        .values
        .iter()
        .map(|&v| {
            let mut cfg = base.config;
            match a.param {
                AblateParam::Zeta => cfg.guidance.zeta = v,
                AblateParam::KSample => {
                    cfg.guidance.k_sample = as_count("values", v)?;
                    cfg.guidance.sampler = Sampler::Dpm1;
                }
                AblateParam::ReplanEvery => cfg.replan_every = as_count("values", v)?,
            }
            Planner::new(base.model.clone(), base.schedule.clone(), cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let settings = AblateSettings {
        checkpoint: digest,
        base: base.config,
        param: a.param,
        values: &a.values,
        scenarios: &scenarios,
        num_seeds: a.num_seeds,
        frames: a.frames,
    };
    let mut run = Run::new("ablate", config_hash(&settings)?, a.common.seed, &a.common.out_dir)?;
    let param = match a.param {
        AblateParam::Zeta => "zeta",
        AblateParam::KSample => "k_sample",
        AblateParam::ReplanEvery => "replan_every",
    };
    let mut csv = format!("param,value,{}\n", planner::CSV_HEADER);
    for cfg in &scenarios {
        for (p, v) in planners.iter().zip(&a.values) {
            let report = evaluate(Policy::Planner(p), cfg, a.frames, &seeds)?;
            print!("{param} = {v}: {}", report.summary());
            for row in report.csv_rows().lines() {
                writeln!(csv, "{param},{v},{row}").expect("write to string");
            }
        }
    }
    std::fs::write(run.path("csv"), csv)?;
    run.finish(raw_args)
}

/// All theory checks; fails with exit code 5 if any row fails.
pub fn verify_theory(a: &VerifyArgs, raw_args: &[String]) -> Result<RunOutcome> {
    let cfg = if a.quick {
        VerifyConfig {
            end_to_end_steps: 1000,
            end_to_end_samples: 20_000,
            seed: a.seed,
        }
    } else {
        VerifyConfig {
            seed: a.seed,
            ..VerifyConfig::default()
        }
    };
    let hash = short_hash(format!("{cfg:?}").as_bytes());
    let mut run = Run::new("verify-theory", hash, a.seed, &a.out_dir)?;
    let rows = theorylab::verify_all(&cfg)?;
    std::fs::write(run.path("csv"), theorylab::to_csv(&rows))?;
    let failed: Vec<_> = rows.iter().filter(|r| r.status == Status::Fail).collect();
    let inconclusive = rows.iter().filter(|r| r.status == Status::Inconclusive).count();
    println!(
        "{} checks: {} passed, {} failed, {inconclusive} inconclusive",
        rows.len(),
        rows.len() - failed.len() - inconclusive,
        failed.len()
    );
    let outcome = run.finish(raw_args)?;
    if let Some(first) = failed.first() {
        return Err(Error::Assertion(format!(
            "{} theory checks failed, first: {} {}",
            failed.len(),
            first.check,
            first.inputs
        )));
    }
    Ok(outcome)
}

fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

/// Re-runs the manifest's command and compares every output's SHA-256.
pub fn replay(a: &ReplayArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let text = std::fs::read_to_string(&a.manifest)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| crate::FormatError::Malformed(format!("manifest: {}", e.message())))?;
    if manifest.subcommand == "replay" {
        return Err(Error::config("manifest", "cannot replay a replay"));
    }
    let out_dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let argv = std::iter::once("macdmp".to_string()).chain(manifest.args.iter().cloned());
    let mut cli = Cli::try_parse_from(argv).map_err(|e| Error::config("manifest.args", e.to_string()))?;
    let base = &manifest.cwd;
    match &mut cli.command {
        Command::Simulate(x) => x.common.out_dir = out_dir.clone(),
        Command::Collect(x) => x.common.out_dir = out_dir.clone(),
        Command::Train(x) => {
            rebase(&mut x.dataset, base);
            x.common.out_dir = out_dir.clone();
        }
        Command::Eval(x) => {
            x.checkpoint.iter_mut().for_each(|p| rebase(p, base));
            x.common.out_dir = out_dir.clone();
        }
        Command::Ablate(x) => {
            rebase(&mut x.checkpoint, base);
            x.common.out_dir = out_dir.clone();
        }
        Command::VerifyTheory(x) => x.out_dir = out_dir.clone(),
        Command::Replay(_) => unreachable!("rejected above"),
    }
    let outcome = run(cli.command, &manifest.args)?.expect("non-replay runs produce outputs");
    let mut mismatched = Vec::new();
    for entry in &manifest.outputs {
        let path = out_dir.join(&entry.file);
        let actual = if path.is_file() { file_sha256(&path)? } else { "missing".into() };
        let same = actual == entry.sha256;
        println!("{} {}", if same { "identical" } else { "DIFFERS  " }, entry.file);
        if !same {
            mismatched.push(entry.file.clone());
        }
    }
    if outcome.outputs.len() != manifest.outputs.len() {
        mismatched.push(format!("{} outputs instead of {}", outcome.outputs.len(), manifest.outputs.len()));
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(Error::Assertion(format!("replay differs: {}", mismatched.join(", "))))
    }
}

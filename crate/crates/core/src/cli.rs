//! Command-line front end: `train`, `eval`, `viz-cycling`, `bench`, `gen`.
//!
//! Every command that writes a run directory first writes `manifest.json`
//! (status `running`) and the resolved `config.json`, and rewrites the
//! manifest with status `completed` or `failed` at the end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::diagnostics::{time_discriminator_update, turning_angle_fraction, ScoreScale, TrajectoryRecorder};
use crate::error::{Error, Result};
use crate::gan::{
    load_checkpoint, load_data, save_checkpoint, TrainConfig, Trainer, TrainerKind, TrainerState, TrainingHooks,
    DEFAULT_EVAL_SAMPLES,
};
use crate::metrics::{evaluate, MetricsReport};
use crate::numerics::{RngState, Stream};
use crate::synthdata::{save_vectors_csv, DataSource, GaussianMixtureSpec};

/// Caps the worker threads used for batch scoring.
pub const THREADS_ENV: &str = "OKGAN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "okgan", version, about = "Online kernel GAN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a generator and write metrics, samples and checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint's samples against a mixture preset.
    Eval(EvalArgs),
    /// Train the kernel and MLP discriminators side by side and record
    /// their score trajectories on shared probes.
    VizCycling(VizArgs),
    /// Time classifier updates against the number of examples per round.
    Bench(BenchArgs),
    /// Write samples from a checkpoint.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainerArg {
    Okgan,
    OkganEncoder,
    Vanilla,
}

impl From<TrainerArg> for TrainerKind {
    fn from(t: TrainerArg) -> Self {
        match t {
            TrainerArg::Okgan => TrainerKind::Okgan,
            TrainerArg::OkganEncoder => TrainerKind::OkganEncoder,
            TrainerArg::Vanilla => TrainerKind::Vanilla,
        }
    }
}

/// Flags shared by commands that build a training config.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// grid25, grid49, ring8 or circle.
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat-vector dataset (CSV or .bin) for the encoder trainer.
    #[arg(long, conflicts_with = "preset")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(&str, Value)]) -> Result<TrainConfig> {
        let mut overlay = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::MissingFile {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str::<Value>(&text)?
            }
            None => json!({}),
        };
        let obj = overlay.as_object_mut().ok_or_else(|| Error::Config {
            field: "<root>".into(),
            reason: "config must be a JSON object".into(),
        })?;
        if let Some(p) = &self.preset {
            obj.insert("dataset".into(), json!(p));
        }
        if let Some(d) = &self.data {
            obj.insert("dataset".into(), json!("file"));
            obj.insert("data_path".into(), json!(d));
        }
        if let Some(r) = self.rounds {
            obj.insert("rounds".into(), json!(r));
        }
        if let Some(s) = self.seed {
            obj.insert("seed".into(), json!(s));
        }
        for (k, v) in extra {
            obj.insert((*k).into(), v.clone());
        }
        TrainConfig::from_json_str(&overlay.to_string())
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum)]
    pub trainer: Option<TrainerArg>,
    /// Rounds between metric evaluations.
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Rounds between checkpoints (final checkpoint is always written).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Record discriminator scores on probe points into `trajectory_<trainer>.csv`.
    #[arg(long)]
    pub record: bool,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub n: usize,
    /// Seed of the evaluation noise stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the samples; defaults to samples.csv next to the checkpoint.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub probes: Option<usize>,
    /// Rounds between trajectory rows.
    #[arg(long)]
    pub record_every: Option<u64>,
    /// Record the MLP discriminator as probabilities instead of logits.
    #[arg(long)]
    pub probabilities: bool,
    #[arg(long, default_value = "runs/cycling")]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value = "runs/bench")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "samples.csv")]
    pub out: PathBuf,
}

/// Run-directory manifest.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub status: String,
    pub config: Option<TrainConfig>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub start_unix_seconds: u64,
    pub end_unix_seconds: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    fn new(command: &str, config: Option<&TrainConfig>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            status: "running".into(),
            config: config.cloned(),
            config_hash: config.map(TrainConfig::hash),
            seed: config.map(|c| c.seed),
            artifacts: Vec::new(),
            start_unix_seconds: unix_now(),
            end_unix_seconds: None,
            probe_hash: None,
            error: None,
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 2 for usage or config errors, 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::VizCycling(a) => cmd_viz_cycling(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gen(a) => cmd_gen(&a),
    }
}

/// Runs `body` inside a run directory, recording the outcome in the manifest
/// and writing `failure.json` when it fails.
fn with_run_dir(
    dir: &Path,
    mut manifest: RunManifest,
    body: impl FnOnce(&mut RunManifest) -> Result<()>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(c) = &manifest.config {
        fs::write(dir.join("config.json"), c.to_json_pretty())?;
        manifest.artifacts.push("config.json".into());
    }
    manifest.write(dir)?;
    let result = body(&mut manifest);
    manifest.end_unix_seconds = Some(unix_now());
    match &result {
        Ok(()) => manifest.status = "completed".into(),
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            let record = json!({ "error": e.to_string(), "round_artifacts": manifest.artifacts });
            fs::write(dir.join("failure.json"), serde_json::to_string_pretty(&record)?)?;
        }
    }
    manifest.write(dir)?;
    result
}

/// Training hooks used by the CLI: metric rows at the eval cadence and
/// optional trajectory rows at the record cadence.
pub struct RunHooks {
    spec: Option<GaussianMixtureSpec>,
    eval_rng: RngState,
    eval_samples: usize,
    metrics: Option<BufWriter<File>>,
    pub recorder: Option<(TrajectoryRecorder, ScoreScale)>,
    pub reports: Vec<MetricsReport>,
    quiet: bool,
    label: String,
}

impl RunHooks {
    pub fn new(config: &TrainConfig, data: &DataSource, metrics_path: Option<&Path>, quiet: bool) -> Result<Self> {
        let metrics = match (metrics_path, data.mixture()) {
            (Some(p), Some(_)) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "{}", MetricsReport::CSV_HEADER)?;
                Some(w)
            }
            _ => None,
        };
        Ok(Self {
            spec: data.mixture().cloned(),
            eval_rng: RngState::substream(config.seed, Stream::Eval),
            eval_samples: config.eval_samples,
            metrics,
            recorder: None,
            reports: Vec::new(),
            quiet,
            label: config.trainer.name().into(),
        })
    }
}

impl TrainingHooks for RunHooks {
    fn on_eval(&mut self, state: &TrainerState) -> Result<()> {
        let Some(spec) = &self.spec else {
            return Ok(());
        };
        let x = state.generate(self.eval_samples, &mut self.eval_rng)?;
        let report = evaluate(&x, spec, state.round)?;
        if let Some(w) = &mut self.metrics {
            writeln!(w, "{}", report.csv_row())?;
            w.flush()?;
        }
        if !self.quiet {
            eprintln!(
                "[{}] round {:>6}  modes {:>3}/{}  hq {:>5.1}%  reverse_kl {:.4}",
                self.label,
                report.round,
                report.modes_captured,
                report.total_modes,
                report.high_quality_pct,
                report.reverse_kl
            );
        }
        self.reports.push(report);
        Ok(())
    }

    fn on_record(&mut self, state: &TrainerState) -> Result<()> {
        if let Some((rec, scale)) = &mut self.recorder {
            rec.record_state(state, *scale)?;
        }
        Ok(())
    }
}

fn write_final_samples(state: &TrainerState, config: &TrainConfig, path: &Path) -> Result<()> {
    let x = state.generate(config.eval_samples, &mut RngState::substream(config.seed, Stream::Eval))?;
    save_vectors_csv(path, &x)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(t) = args.trainer {
        extra.push(("trainer", json!(TrainerKind::from(t))));
    } else if args.cfg.data.is_some() {
        extra.push(("trainer", json!(TrainerKind::OkganEncoder)));
    }
    if let Some(e) = args.eval_every {
        extra.push(("eval_every", json!(e)));
    }
    let config = args.cfg.resolve(&extra)?;
    let dir = args.out.clone();
    with_run_dir(&dir, RunManifest::new("train", Some(&config)), |manifest| {
        let data = load_data(&config)?;
        let mut trainer = match &args.resume {
            Some(path) => Trainer::resume(config.clone(), data.clone(), load_checkpoint(path)?)?,
            None => Trainer::new(config.clone(), data.clone())?,
        };
        trainer.set_diagnostic_checkpoint(dir.join("diagnostic.ckpt"));
        let metrics_path = dir.join("metrics.csv");
        let mut hooks = RunHooks::new(&config, &data, Some(&metrics_path), args.quiet)?;
        if hooks.metrics.is_some() {
            manifest.artifacts.push("metrics.csv".into());
        }
        if args.record {
            let mut rec = TrajectoryRecorder::for_seed(&data, config.probes, config.seed)?;
            rec.record_state(trainer.state(), ScoreScale::Logit)?;
            manifest.probe_hash = Some(rec.probe_hash());
            hooks.recorder = Some((rec, ScoreScale::Logit));
        }
        manifest.write(&dir)?;

        while trainer.state().round < config.rounds {
            trainer.train_round(&mut hooks)?;
            let round = trainer.state().round;
            if args.checkpoint_every.is_some_and(|k| k > 0 && round % k == 0) && round < config.rounds {
                let name = format!("round_{round}.ckpt");
                save_checkpoint(trainer.state(), dir.join(&name))?;
                manifest.artifacts.push(name);
            }
        }

        save_checkpoint(trainer.state(), dir.join("final.ckpt"))?;
        manifest.artifacts.push("final.ckpt".into());
        write_final_samples(trainer.state(), &config, &dir.join("samples.csv"))?;
        manifest.artifacts.push("samples.csv".into());
        if let Some((rec, _)) = &hooks.recorder {
            let name = format!("trajectory_{}.csv", config.trainer.name());
            rec.write_csv(dir.join(&name))?;
            manifest.artifacts.push(name);
        }
        if let Some(last) = hooks.reports.last() {
            println!("{}", serde_json::to_string(last)?);
        }
        Ok(())
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let state = load_checkpoint(&args.checkpoint)?;
    let spec = GaussianMixtureSpec::preset(&args.preset)?;
    if state.data_dim() != 2 {
        return Err(crate::error::dim_err(format!(
            "checkpoint generates {}-dimensional samples but preset {} is 2-dimensional",
            state.data_dim(),
            args.preset
        )));
    }
    let x = state.generate(args.n, &mut RngState::substream(args.seed, Stream::Eval))?;
    let report = evaluate(&x, &spec, state.round)?;
    let samples = args.samples.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("samples.csv")
    });
    save_vectors_csv(&samples, &x)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let state = load_checkpoint(&args.checkpoint)?;
    let x = state.generate(args.n, &mut RngState::substream(args.seed, Stream::Eval))?;
    save_vectors_csv(&args.out, &x)
}

/// Summary written by `viz-cycling`.
#[derive(Debug, Serialize)]
pub struct CyclingSummary {
    pub probe_hash: String,
    pub recorded_rounds: usize,
    /// Fraction of consecutive projected steps turning by more than 90
    /// degrees (descriptive heuristic, not a calibrated cycling score).
    pub okgan_turning_fraction: Option<f64>,
    pub vgan_turning_fraction: Option<f64>,
}

pub fn cmd_viz_cycling(args: &VizArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(p) = args.probes {
        extra.push(("probes", json!(p)));
    }
    if let Some(r) = args.record_every {
        extra.push(("record_every", json!(r)));
    }
    let mut okgan_cfg = args.cfg.resolve(&extra)?;
    okgan_cfg.trainer = TrainerKind::Okgan;
    if args.cfg.rounds.is_none() && args.cfg.config.is_none() {
        okgan_cfg.rounds = 500;
    }
    let mut vgan_cfg = okgan_cfg.clone();
    vgan_cfg.trainer = TrainerKind::Vanilla;
    okgan_cfg.validate()?;
    vgan_cfg.validate()?;
    let dir = args.out.clone();
    with_run_dir(&dir, RunManifest::new("viz-cycling", Some(&okgan_cfg)), |manifest| {
        fs::write(dir.join("config_vgan.json"), vgan_cfg.to_json_pretty())?;
        manifest.artifacts.push("config_vgan.json".into());
        let summary = run_cycling(&okgan_cfg, &vgan_cfg, args.probabilities, &dir, args.quiet, manifest)?;
        fs::write(dir.join("cycling.json"), serde_json::to_string_pretty(&summary)?)?;
        manifest.artifacts.push("cycling.json".into());
        println!("{}", serde_json::to_string_pretty(&summary)?);
        Ok(())
    })
}

/// Trains both discriminators from the same seed and probes, writing
/// `trajectory_okgan.csv`, `trajectory_vgan.csv` and both metric curves.
pub fn run_cycling(
    okgan_cfg: &TrainConfig,
    vgan_cfg: &TrainConfig,
    probabilities: bool,
    dir: &Path,
    quiet: bool,
    manifest: &mut RunManifest,
) -> Result<CyclingSummary> {
    let data = load_data(okgan_cfg)?;
    let scale = if probabilities {
        ScoreScale::Probability
    } else {
        ScoreScale::Logit
    };
    let mut fractions = Vec::new();
    let mut probe_hash = String::new();
    let mut recorded = 0;
    for (cfg, tag) in [(okgan_cfg, "okgan"), (vgan_cfg, "vgan")] {
        let mut trainer = Trainer::new(cfg.clone(), data.clone())?;
        let metrics_name = format!("metrics_{tag}.csv");
        let mut hooks = RunHooks::new(cfg, &data, Some(&dir.join(&metrics_name)), quiet)?;
        let mut rec = TrajectoryRecorder::for_seed(&data, cfg.probes, cfg.seed)?;
        rec.record_state(trainer.state(), scale)?;
        probe_hash = rec.probe_hash();
        manifest.probe_hash = Some(probe_hash.clone());
        hooks.recorder = Some((rec, scale));
        trainer.run(&mut hooks)?;
        if hooks.metrics.is_some() {
            manifest.artifacts.push(metrics_name);
        }
        let (rec, _) = hooks.recorder.take().expect("recorder installed");
        let name = format!("trajectory_{tag}.csv");
        let proj = rec.write_csv(dir.join(&name))?;
        manifest.artifacts.push(name);
        recorded = rec.len();
        fractions.push(turning_angle_fraction(&proj));
    }
    Ok(CyclingSummary {
        probe_hash,
        recorded_rounds: recorded,
        okgan_turning_fraction: fractions[0],
        vgan_turning_fraction: fractions[1],
    })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let config = args.cfg.resolve(&[])?;
    let dir = args.out.clone();
    with_run_dir(&dir, RunManifest::new("bench", Some(&config)), |manifest| {
        let report = time_discriminator_update(&config, &args.sizes, args.reps)?;
        report.write_csv(dir.join("timing.csv"))?;
        manifest.artifacts.push("timing.csv".into());
        let fit = report.fit()?;
        let summary = json!({ "report": report, "fit": fit });
        fs::write(dir.join("timing_fit.json"), serde_json::to_string_pretty(&summary)?)?;
        manifest.artifacts.push("timing_fit.json".into());
        println!(
            "slope {:.3e} s per example, intercept {:.3e} s, R^2 {:.4}",
            fit.slope, fit.intercept, fit.r_squared
        );
        Ok(())
    })
}

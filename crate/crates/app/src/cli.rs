//! Command-line verbs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::info;
use uwintent_core::head_dtw::TemplateSet;
use uwintent_core::mapper::{ActionVector, DurationClass, Scheme};
use uwintent_core::nn::{ScaleClass, ScaleModel};
use uwintent_core::pipeline::{
    head_twelve_scenario, multimodal_scenario, multimodal_script, replay, InjectRule, Models, Scenario,
};
use uwintent_core::signal_io::{write_imu_csv, write_wav};
use uwintent_core::sim::write_trace_csv;
use uwintent_core::synthgen::{HeadCorpusConfig, ToneCorpusConfig};

use crate::config::SessionConfig;
use crate::corpus::{self, Manifest, TrainSettings};
use crate::error::{AppError, AppResult};
use crate::protocol::Control;
use crate::server;
use crate::session::{self, SessionSetup};
use crate::telemetry::TelemetryHub;

#[derive(Debug, Parser)]
#[command(name = "uwintent", version, about = "Underwater intention recognition and superlimb simulation")]
pub struct Cli {
    /// TOML session config; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's recognition scheme.
    #[arg(long, global = true, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Stream seconds per wall-clock second for live sessions.
    #[arg(long, global = true)]
    pub speed: Option<f64>,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Head,
    Throat,
    Multimodal,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Head => Scheme::Head,
            SchemeArg::Throat => Scheme::Throat,
            SchemeArg::Multimodal => Scheme::Multimodal,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Generate synthetic corpora or replay scenarios.
    #[command(subcommand)]
    Synth(SynthVerb),
    /// Train templates or a scale model from a corpus manifest.
    Train(TrainArgs),
    /// Score a trained artifact on a corpus manifest.
    Eval(EvalArgs),
    /// Run a scenario through the full pipeline in simulated time.
    Replay(ReplayArgs),
    /// Serve a live session with the `/ws` telemetry endpoint.
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthVerb {
    /// Labelled head-motion IMU recordings.
    HeadCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        per_class: usize,
        /// Euler-angle noise, degrees.
        #[arg(long, default_value_t = 2.0)]
        noise_deg: f64,
    },
    /// Labelled throat-vibration tones.
    ToneCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
    },
    /// A scripted replay scenario with ground truth.
    Scenario {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: ScenarioKind,
        /// Replace the first (re, long) hum with (so, long).
        #[arg(long)]
        inject: bool,
        #[arg(long, default_value_t = 2.0)]
        noise_deg: f64,
        /// Audio background noise RMS, full scale.
        #[arg(long, default_value_t = 0.01)]
        noise_rms: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioKind {
    /// Four actions about each rotational axis.
    Head12,
    /// Head motions and hums with mode switches.
    Multimodal,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the artifact.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub scenario: PathBuf,
    /// Directory for trace.csv and tokens.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Scenario to load at startup.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Start playing the scenario immediately.
    #[arg(long)]
    pub autostart: bool,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory of static dashboard assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// The effective config: file, then global overrides.
pub fn session_config(cli: &Cli) -> AppResult<SessionConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SessionConfig::load(path)?,
        None => SessionConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(s) = cli.scheme {
        cfg.scheme = s.into();
    }
    if let Some(speed) = cli.speed {
        cfg.speed = speed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one verb; the returned text is printed on stdout.
pub fn execute(cli: Cli) -> AppResult<String> {
    let cfg = session_config(&cli)?;
    match cli.verb {
        Verb::Synth(v) => synth(v, &cfg),
        Verb::Train(a) => train(&a, &cfg),
        Verb::Eval(a) => eval(&a, &cfg),
        Verb::Replay(a) => replay_cmd(&a, &cfg),
        Verb::Run(a) => run(a, cfg),
    }
}

fn write_out(path: &Path, text: &str) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| AppError::runtime(format!("{}: {e}", path.display())))
}

fn synth(v: SynthVerb, cfg: &SessionConfig) -> AppResult<String> {
    match v {
        SynthVerb::HeadCorpus { out, per_class, noise_deg } => {
            let m = corpus::synth_head_corpus(
                &out,
                &HeadCorpusConfig {
                    per_class,
                    noise_deg,
                    seed: cfg.seed,
                    ..HeadCorpusConfig::default()
                },
            )?;
            Ok(format!("wrote {} head-motion recordings to {}", m.items.len(), out.display()))
        }
        SynthVerb::ToneCorpus { out, per_class, snr_db } => {
            let m = corpus::synth_tone_corpus(
                &out,
                &ToneCorpusConfig {
                    per_class,
                    snr_db,
                    seed: cfg.seed,
                    ..ToneCorpusConfig::default()
                },
            )?;
            Ok(format!("wrote {} tones to {}", m.items.len(), out.display()))
        }
        SynthVerb::Scenario {
            out,
            kind,
            inject,
            noise_deg,
            noise_rms,
        } => {
            let mut sc = match kind {
                ScenarioKind::Head12 => head_twelve_scenario(noise_deg, cfg.seed)?,
                ScenarioKind::Multimodal => multimodal_scenario(&multimodal_script(), noise_deg, noise_rms, cfg.seed)?,
            };
            if inject {
                sc.scenario.inject.push(InjectRule {
                    from: ActionVector::throat(ScaleClass::Re, DurationClass::Long),
                    to: ActionVector::throat(ScaleClass::So, DurationClass::Long),
                    occurrence: Some(0),
                });
            }
            fs::create_dir_all(&out).map_err(|e| AppError::runtime(format!("{}: {e}", out.display())))?;
            if let Some(p) = &sc.scenario.imu {
                write_imu_csv(out.join(p), &sc.input.imu)?;
            }
            if let (Some(p), Some(a)) = (&sc.scenario.audio, &sc.input.audio) {
                write_wav(out.join(p), a)?;
            }
            let path = out.join("scenario.json");
            sc.scenario.save(&path)?;
            Ok(format!(
                "wrote scenario {:?} with {} expected tokens to {}",
                sc.scenario.name,
                sc.scenario.expected.len(),
                path.display()
            ))
        }
    }
}

fn train_settings(cfg: &SessionConfig) -> TrainSettings {
    let mut train = cfg.train.clone();
    train.seed = cfg.seed;
    TrainSettings {
        pipeline: cfg.pipeline.clone(),
        templates: cfg.template_build.clone(),
        mfcc: cfg.mfcc.clone(),
        train,
    }
}

fn train(a: &TrainArgs, cfg: &SessionConfig) -> AppResult<String> {
    let m = Manifest::load(&a.manifest)?;
    let (artifact, report) = corpus::train(&m, &train_settings(cfg))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;
    }
    artifact.save(&a.out)?;
    if let Some(path) = &a.report {
        write_out(path, &serde_json::to_string_pretty(&report).map_err(AppError::runtime)?)?;
    }
    Ok(format!(
        "trained on {} items, tested on {}\n{}\nwrote {}",
        report.train_items,
        report.test_items,
        report.confusion,
        a.out.display()
    ))
}

fn eval(a: &EvalArgs, cfg: &SessionConfig) -> AppResult<String> {
    let m = Manifest::load(&a.manifest)?;
    let artifact = corpus::load_artifact(m.kind, &a.artifact)?;
    let report = corpus::evaluate(&m, &artifact, &cfg.pipeline)?;
    if let Some(path) = &a.report {
        write_out(path, &serde_json::to_string_pretty(&report).map_err(AppError::runtime)?)?;
    }
    Ok(format!("evaluated {} items\n{}", report.test_items, report.confusion))
}

/// Loads the artifacts a scheme needs; flags override config paths.
pub fn load_models(
    scheme: Scheme,
    cfg: &SessionConfig,
    templates: Option<&Path>,
    model: Option<&Path>,
) -> AppResult<Models> {
    let templates = templates.map(Path::to_path_buf).or_else(|| cfg.templates.clone());
    let model = model.map(Path::to_path_buf).or_else(|| cfg.model.clone());
    let needs_head = matches!(scheme, Scheme::Head | Scheme::Multimodal);
    let needs_throat = matches!(scheme, Scheme::Throat | Scheme::Multimodal);
    let mut models = Models::default();
    if needs_head {
        let p = templates.ok_or_else(|| AppError::data("head-motion templates are required (--templates or `templates` in the config)"))?;
        models.templates = Some(TemplateSet::load(&p)?);
    }
    if needs_throat {
        let p = model.ok_or_else(|| AppError::data("a scale model is required (--model or `model` in the config)"))?;
        let mut m = ScaleModel::load(&p)?;
        m.reject_confidence = cfg.pipeline.gains.reject_confidence;
        models.scale = Some(m);
    }
    Ok(models)
}

fn replay_cmd(a: &ReplayArgs, cfg: &SessionConfig) -> AppResult<String> {
    let (scenario, dir) = Scenario::load(&a.scenario)?;
    let scheme = scenario.scheme.unwrap_or(cfg.scheme);
    let pcfg = cfg.pipeline_for(scheme);
    let models = load_models(scheme, cfg, a.templates.as_deref(), a.model.as_deref())?;
    let input = scenario.load_input(&dir, pcfg.imu_decimation)?;
    let out = replay(&input, models, &pcfg, scenario.inject.clone())?;

    let out_dir = a.out.clone().unwrap_or_else(|| dir.join("replay"));
    fs::create_dir_all(&out_dir).map_err(|e| AppError::runtime(format!("{}: {e}", out_dir.display())))?;
    write_trace_csv(out_dir.join("trace.csv"), &out.trace)?;
    write_out(
        &out_dir.join("tokens.json"),
        &serde_json::to_string_pretty(&out.tokens).map_err(AppError::runtime)?,
    )?;

    let actions = out.actions();
    let matched = scenario
        .expected
        .iter()
        .zip(&actions)
        .filter(|(e, a)| **a == Some(e.action))
        .count();
    let summary = json!({
        "scenario": scenario.name,
        "scheme": scheme,
        "segments": out.segments.len(),
        "tokens": out.tokens.len(),
        "recognized": actions.iter().filter(|a| a.is_some()).count(),
        "expected": scenario.expected.len(),
        "matched": matched,
        "latency": out.latency(),
        "final_mode": out.final_mode,
        "trace_rows": out.trace.len(),
        "out": out_dir,
    });
    serde_json::to_string_pretty(&summary).map_err(AppError::runtime)
}

fn run(a: RunArgs, mut cfg: SessionConfig) -> AppResult<String> {
    if let Some(port) = a.port {
        cfg.port = port;
    }
    if let Some(bind) = a.bind {
        cfg.bind = bind;
    }
    let static_dir = a.static_dir.or(cfg.static_dir.clone());
    let models = load_models(cfg.scheme, &cfg, a.templates.as_deref(), a.model.as_deref())?;
    let setup = SessionSetup::from_config(&cfg, models, PathBuf::new());
    let runtime = tokio::runtime::Runtime::new().map_err(AppError::runtime)?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", cfg.bind, cfg.port);
        let listener = TcpListener::bind(&addr)
            .await
            .map_err(|e| AppError::runtime(format!("cannot listen on {addr}: {e}")))?;
        let handle = session::spawn(setup, TelemetryHub::new(cfg.telemetry_capacity));
        if let Some(path) = a.scenario {
            let answer = handle.control(Control::LoadScenario(path.display().to_string())).await;
            answer.result.map_err(AppError::data)?;
            if a.autostart {
                handle.control(Control::Start).await.result.map_err(AppError::runtime)?;
            }
        }
        tokio::select! {
            served = server::serve(listener, handle, static_dir) => served.map_err(AppError::runtime)?,
            _ = tokio::signal::ctrl_c() => info!("interrupted"),
        }
        Ok(String::new())
    })
}

//! Commands behind the `asmpose` binary. Each stage reads and writes files so
//! real detector output can replace the simulator without code changes.

use std::path::{Path, PathBuf};

use asmpose::assembly::StateDetectionConfig;
use asmpose::dataset::{
    from_json_lines, load_registry_with, load_sequence, read_detections, to_json_lines,
    DatasetError, ModelRegistry,
};
use asmpose::fusion::FusionWeights;
use asmpose::pipeline::{evaluate, run_sequence, EstimatorConfig, FrameEstimate, PipelineError};
use asmpose::pnp::RansacConfig;
use asmpose::refine::RefineConfig;
use asmpose::simulator::{
    run_scenario, standard_registry, write_standard_registry, ScenarioScript, SimError,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Overrides every command's output directory.
pub const OUTPUT_DIR_ENV: &str = "ASMPOSE_OUTPUT_DIR";
pub const ESTIMATES_FILE: &str = "estimates.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: schema, config, unknown ids, misaligned files.
    #[error("{0}")]
    Validation(String),
    /// Reading or writing files failed.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Dataset(d) => d.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(d) => d.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "asmpose",
    version,
    about = "Assembly pose and state estimation from keypoint detections and depth"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scripted scenario to depth, ground truth and detections.
    Simulate(SimulateArgs),
    /// Estimate poses and fused states for a sequence.
    Run(RunArgs),
    /// Score estimates against ground truth.
    Evaluate(EvaluateArgs),
    /// Write the built-in registry (TOML plus OBJ meshes).
    Registry(RegistryArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario script (TOML).
    pub script: PathBuf,
    /// Noise config (TOML) replacing the script's `[noise]` table.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Overrides the noise RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Registry to simulate from instead of the script's or the built-in one.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub manifest: PathBuf,
    pub detections: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fusion weights `w_dl,w_p,w_f,w_f1`.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<FusionWeights>,
    /// Overrides the RANSAC seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-frame wall-clock times to `timing.jsonl`.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub estimates: PathBuf,
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Timing sidecar from `run --timing`; adds mean runtime to the report.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegistryArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_weights(s: &str) -> Result<FusionWeights, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [w_dl, w_p, w_f, w_f1] = v[..] else {
        return Err(format!(
            "expected 4 comma-separated weights, got {}",
            v.len()
        ));
    };
    FusionWeights::new(w_dl, w_p, w_f, w_f1).map_err(|e| e.to_string())
}

/// Pipeline configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Registry TOML, relative to the config file; the built-in registry when absent.
    pub registry: Option<PathBuf>,
    /// Detector variant that produced the detections; recorded, not used.
    pub backbone: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub fusion: FusionWeights,
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    pub state_detection: StateDetectionConfig,
}

impl PipelineConfig {
    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        cfg.registry = cfg.registry.map(|r| dir.join(r));
        cfg.output_dir = cfg.output_dir.map(|o| dir.join(o));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            fusion: self.fusion,
            ransac: self.ransac,
            refine: self.refine,
            state_detection: self.state_detection,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.estimator().validate()?;
        if let Some(r) = self.registry.as_ref().filter(|r| !r.is_file()) {
            return Err(CliError::Validation(format!(
                "registry {} does not exist",
                r.display()
            )));
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

/// `--out` flag, then the environment override, then the config, then `default`.
fn output_dir(flag: Option<&Path>, config: Option<&Path>, default: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn load_any_registry(path: Option<&Path>, surface_count: usize) -> Result<ModelRegistry, CliError> {
    Ok(match path {
        Some(p) => load_registry_with(p, surface_count)?,
        None => standard_registry(surface_count)?,
    })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let text = read_text(&args.script)?;
    let mut script: ScenarioScript = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.script.display())))?;
    if let Some(noise) = &args.noise {
        script.noise = toml::from_str(&read_text(noise)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", noise.display())))?;
    }
    if let Some(seed) = args.seed {
        script.noise.rng_seed = seed;
    }
    let script_dir = args.script.parent().unwrap_or(Path::new("."));
    let registry_path = args
        .registry
        .clone()
        .or_else(|| script.registry.as_ref().map(|r| script_dir.join(r)));
    let registry = load_any_registry(
        registry_path.as_deref(),
        RefineConfig::default().surface_sample_count,
    )?;
    let out = output_dir(args.out.as_deref(), None, "sim");
    let result = run_scenario(&script, &registry, &out)?;
    let mut states = result.state_sequence();
    states.dedup();
    Ok(format!(
        "simulated {} frames of {} into {}\nstate sequence: {:?}\n",
        result.manifest.len(),
        script.assembly,
        out.display(),
        states
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct TimingLine {
    frame: u64,
    ms: f64,
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(w) = args.weights {
        cfg.fusion = w;
    }
    if let Some(seed) = args.seed {
        cfg.ransac.rng_seed = seed;
    }
    let registry_path = args.registry.as_deref().or(cfg.registry.as_deref());
    let registry = load_any_registry(registry_path, cfg.refine.surface_sample_count)?;
    let sequence = load_sequence(&args.manifest)?;
    let detections = read_detections(&args.detections)?;
    let Some(first) = sequence.entries().first() else {
        return Err(CliError::Validation(format!(
            "{} has no frames",
            args.manifest.display()
        )));
    };
    let graph = registry
        .get(&first.assembly)
        .ok_or_else(|| CliError::Validation(format!("unknown assembly {}", first.assembly)))?;
    sequence.validate_against(&registry)?;
    let run = run_sequence(&sequence, &detections, graph, &cfg.estimator())?;

    let out = output_dir(args.out.as_deref(), cfg.output_dir.as_deref(), "run");
    write_text(&out.join(ESTIMATES_FILE), &to_json_lines(&run.estimates))?;
    if args.timing {
        let lines: Vec<TimingLine> = run
            .estimates
            .iter()
            .zip(&run.runtime_ms)
            .map(|(e, &ms)| TimingLine { frame: e.frame, ms })
            .collect();
        write_text(&out.join(TIMING_FILE), &to_json_lines(&lines))?;
    }
    let failed = run
        .estimates
        .iter()
        .filter(|e| !e.failures.is_empty())
        .count();
    let mean_ms = run.runtime_ms.iter().sum::<f64>() / run.runtime_ms.len().max(1) as f64;
    Ok(format!(
        "{} frames of {}, {} with failures, {:.1} ms/frame; estimates in {}\n",
        run.estimates.len(),
        graph.assembly_id(),
        failed,
        mean_ms,
        out.display()
    ))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let registry_path = args.registry.as_deref().or(cfg.registry.as_deref());
    let registry = load_any_registry(registry_path, cfg.refine.surface_sample_count)?;
    let sequence = load_sequence(&args.manifest)?;
    let estimates: Vec<FrameEstimate> = from_json_lines(&read_text(&args.estimates)?)?
        .into_iter()
        .map(|(_, e)| e)
        .collect();
    let Some(first) = sequence.entries().first() else {
        return Err(CliError::Validation(format!(
            "{} has no frames",
            args.manifest.display()
        )));
    };
    let graph = registry
        .get(&first.assembly)
        .ok_or_else(|| CliError::Validation(format!("unknown assembly {}", first.assembly)))?;
    let timing: Option<Vec<f64>> = match &args.timing {
        Some(p) => Some(
            from_json_lines::<TimingLine>(&read_text(p)?)?
                .into_iter()
                .map(|(_, t)| t.ms)
                .collect(),
        ),
        None => None,
    };
    let report = evaluate(&estimates, sequence.entries(), graph, timing.as_deref())?;

    let out = output_dir(args.out.as_deref(), cfg.output_dir.as_deref(), "eval");
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Validation(e.to_string()))?;
    write_text(&out.join(REPORT_JSON), &(json + "\n"))?;
    let table = report.to_table();
    write_text(&out.join(REPORT_TEXT), &table)?;
    Ok(table)
}

pub fn cmd_registry(args: &RegistryArgs) -> Result<String, CliError> {
    let out = output_dir(args.out.as_deref(), None, "registry");
    write_standard_registry(&out)?;
    Ok(format!("wrote {}\n", out.join("registry.toml").display()))
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Registry(a) => cmd_registry(a),
    }
}

//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then an optional JSON
//! config file (`--config`), then flags. The fully resolved config, seed
//! included, is written as `config.json` next to every output so a run can
//! be repeated with `--config <out>/config.json`.
//!
//! Exit statuses: 0 on success, 1 for usage and config errors, 2 for errors
//! raised while running.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::aecs::{
    exhaustive_search, grow_candidate_tree, search_device, CandidateRecord, Ranking, SearchConfig,
    SearchResult, SimulatedProvider,
};
use crate::experiments::{
    run_ablation, verify_ordering_accuracy, verify_variance_reduction, AblationReport,
    TheoremReport,
};
use crate::heuristic::HeuristicParams;
use crate::simdevice::{
    load_device, load_preset, stream_from, NoiseModel, SimulatedDevice, ANDROID_PRESETS,
    PRESET_NAMES,
};
use crate::topology::{parse_device_descriptor, parse_sysfs_snapshot, CoreSelection, CpuTopology};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or invalid config, unknown device.
    Config(String),
    /// Failure while running the command or writing its outputs.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Md,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
            OutputFormat::Md => "md",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleRanking {
    #[default]
    Energy,
    Blended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    /// Preset name or path to a preset file.
    pub preset: Option<String>,
    /// Devices for `ablate`; `all` and `android` expand to preset groups.
    pub presets: Option<Vec<String>>,
    /// Tree root for `tree`.
    pub root: Option<String>,
    /// Selection sampled by the variance check in `theorems`.
    pub selection: Option<String>,
}

/// Noise overrides; unset fields come from the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub rel_sigma: Option<f64>,
    pub counter_update_s: Option<f64>,
    pub poll_interval_s: Option<f64>,
}

impl NoiseSection {
    fn apply(&self, base: NoiseModel) -> NoiseModel {
        NoiseModel {
            rel_sigma: self.rel_sigma.unwrap_or(base.rel_sigma),
            counter_update_s: self.counter_update_s.unwrap_or(base.counter_update_s),
            poll_interval_s: self.poll_interval_s.unwrap_or(base.poll_interval_s),
        }
    }

    fn resolved(model: NoiseModel) -> Self {
        Self {
            rel_sigma: Some(model.rel_sigma),
            counter_update_s: Some(model.counter_update_s),
            poll_interval_s: Some(model.poll_interval_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Searches per device and ranking in `ablate`.
    pub trials: u64,
    /// Energy samples for the variance check.
    pub variance_trials: u64,
    /// Selection pairs for the ordering check.
    pub pairs: usize,
    /// Noisy comparisons per pair.
    pub pair_trials: u64,
    pub oracle_ranking: OracleRanking,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            trials: 200,
            variance_trials: 10_000,
            pairs: 100,
            pair_trials: 50,
            oracle_ranking: OracleRanking::Energy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub device: DeviceSection,
    pub search: SearchConfig,
    pub heuristic: HeuristicParams,
    pub noise: NoiseSection,
    pub experiment: ExperimentSection,
    pub seed: Option<u64>,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses a config file, reporting the offending field path on error.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset name or preset file path.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Relative measurement noise.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Runs per profiled selection.
    #[arg(long, global = true)]
    pub repeats: Option<u32>,
    /// Blend weight of the heuristic on affinity devices.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-stage search on one device.
    Search,
    /// Exhaustive search over the whole space.
    Oracle {
        #[arg(long, value_enum)]
        ranking: Option<OracleRanking>,
    },
    /// Print the candidate tree grown from a root.
    Tree {
        /// Root selection such as 1,2,0; defaults to the noiseless stage-1 result.
        #[arg(long)]
        root: Option<String>,
    },
    /// Exhaustive-versus-search comparison over several devices.
    Ablate {
        /// Comma-separated preset names, or `all` / `android`.
        #[arg(long)]
        presets: Option<String>,
    },
    /// Empirical variance and ordering checks of the heuristic blend.
    Theorems {
        /// Selection for the variance check; defaults to the calibrated optimum.
        #[arg(long)]
        selection: Option<String>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// List bundled presets.
    Presets,
    /// Parse and print a descriptor, preset file or sysfs snapshot.
    Describe {
        /// Descriptor or preset JSON file, or a sysfs cpu directory.
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "aecs",
    version,
    about = "Energy-centric CPU core selection on simulated SoCs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

/// What a command produced: stdout text and files for the output directory.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub files: Vec<(String, String)>,
}

/// Parses `argv` (including the program name), runs the command and writes
/// its outputs. Returns the process exit status.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    match execute(&cli.command, &cli.common) {
        Ok(out) => {
            print!("{}", out.stdout);
            let _ = std::io::stdout().flush();
            EXIT_OK
        }
        Err(e) => {
            eprintln!("aecs: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the config for `command`, runs it and writes outputs.
pub fn execute(command: &Command, args: &CommonArgs) -> Result<Outcome, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, command, args);
    if cfg.seed.is_none() {
        cfg.seed = Some(rand::random());
    }
    cfg.search.validate().map_err(config_err)?;
    cfg.heuristic.validate().map_err(config_err)?;

    let out = match command {
        Command::Search => cmd_search(&mut cfg)?,
        Command::Oracle { .. } => cmd_oracle(&mut cfg)?,
        Command::Tree { .. } => cmd_tree(&mut cfg)?,
        Command::Ablate { .. } => cmd_ablate(&mut cfg)?,
        Command::Theorems { .. } => cmd_theorems(&mut cfg)?,
        Command::Presets => cmd_presets(&cfg)?,
        Command::Describe { path } => cmd_describe(&cfg, path.as_deref())?,
    };
    if let Some(dir) = &cfg.output.dir {
        write_outputs(dir, &cfg, &out.files).map_err(runtime_err)?;
    }
    Ok(out)
}

fn apply_flags(cfg: &mut RunConfig, command: &Command, a: &CommonArgs) {
    if let Some(p) = &a.preset {
        cfg.device.preset = Some(p.clone());
    }
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &a.out {
        cfg.output.dir = Some(o.clone());
    }
    if let Some(f) = a.format {
        cfg.output.format = f;
    }
    if let Some(s) = a.sigma {
        cfg.noise.rel_sigma = Some(s);
    }
    if let Some(e) = a.epsilon {
        cfg.search.epsilon = e;
    }
    if let Some(r) = a.repeats {
        cfg.search.repeats = r;
    }
    if let Some(al) = a.alpha {
        cfg.heuristic.alpha = al;
    }
    if let Some(t) = a.trials {
        match command {
            Command::Theorems { .. } => cfg.experiment.variance_trials = t,
            _ => cfg.experiment.trials = t,
        }
    }
    match command {
        Command::Oracle { ranking: Some(r) } => cfg.experiment.oracle_ranking = *r,
        Command::Tree { root: Some(r) } => cfg.device.root = Some(r.clone()),
        Command::Ablate { presets: Some(p) } => {
            cfg.device.presets = Some(p.split(',').map(|s| s.trim().to_string()).collect());
        }
        Command::Theorems { selection, pairs } => {
            if let Some(s) = selection {
                cfg.device.selection = Some(s.clone());
            }
            if let Some(p) = pairs {
                cfg.experiment.pairs = *p;
            }
        }
        _ => {}
    }
}

fn seed_of(cfg: &RunConfig) -> u64 {
    cfg.seed.expect("seed resolved before dispatch")
}

/// Loads the configured device, applies noise overrides and records the
/// effective noise model in the config.
fn configured_device(cfg: &mut RunConfig) -> Result<SimulatedDevice, CliError> {
    let spec = cfg
        .device
        .preset
        .clone()
        .ok_or_else(|| config_err("device.preset is required (use --preset)"))?;
    let base = load_device(&spec).map_err(config_err)?;
    let noise = cfg.noise.apply(base.noise);
    noise.validate().map_err(config_err)?;
    cfg.noise = NoiseSection::resolved(noise);
    let mut device = base.with_noise(noise);
    device.seed = seed_of(cfg);
    Ok(device)
}

fn parse_selection(text: &str, topology: &CpuTopology) -> Result<CoreSelection, CliError> {
    CoreSelection::parse_for(text, topology).map_err(config_err)
}

fn trace_jsonl(result: &SearchResult) -> String {
    let mut out = String::new();
    for rec in &result.trace {
        out.push_str(&serde_json::to_string(rec).expect("trace serializes"));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    command: &'a str,
    device: &'a str,
    seed: u64,
    result: &'a SearchResult,
}

fn candidates_table(rows: &[CandidateRecord], format: OutputFormat) -> String {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str("selection,depth,transform,speed_tps,energy_mj_per_tok,heuristic,objective,feasible\n");
            for c in rows {
                let _ = writeln!(
                    out,
                    "\"{}\",{},{},{:.4},{:.4},{:.2},{:.6},{}",
                    c.selection,
                    c.depth,
                    c.transform.map_or("", |t| t.tag()),
                    c.mean.speed_tps,
                    c.mean.energy_mj_per_tok,
                    c.heuristic,
                    c.objective,
                    c.feasible
                );
            }
        }
        _ => {
            out.push_str(
                "| selection | depth | via | tok/s | mJ/tok | h | objective | feasible |\n",
            );
            out.push_str("|---|---|---|---|---|---|---|---|\n");
            for c in rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.2} | {:.1} | {:.0} | {:.4} | {} |",
                    c.selection,
                    c.depth,
                    c.transform.map_or("-", |t| t.tag()),
                    c.mean.speed_tps,
                    c.mean.energy_mj_per_tok,
                    c.heuristic,
                    c.objective,
                    if c.feasible { "yes" } else { "no" }
                );
            }
        }
    }
    out
}

fn search_outcome(
    command: &str,
    cfg: &RunConfig,
    device: &SimulatedDevice,
    r: &SearchResult,
) -> Outcome {
    let format = cfg.output.format;
    let summary = SearchSummary {
        command,
        device: device.name(),
        seed: seed_of(cfg),
        result: r,
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    let chosen = r.chosen_record();
    let mut stdout = format!(
        "{command} on {}: chosen {} at {:.2} tok/s, {:.1} mJ/tok; reference {} at {:.2} tok/s; {} selections, {} runs\n",
        device.name(),
        r.chosen,
        chosen.mean.speed_tps,
        chosen.mean.energy_mj_per_tok,
        r.stage1,
        r.stage1_speed,
        r.plans_measured,
        r.measurement_count
    );
    let report = match format {
        OutputFormat::Json => summary_json.clone(),
        f => candidates_table(&r.candidates, f),
    };
    stdout.push_str(&report);
    Outcome {
        stdout,
        files: vec![
            ("summary.json".into(), summary_json),
            ("trace.jsonl".into(), trace_jsonl(r)),
            (format!("report.{}", format.extension()), report),
        ],
    }
}

fn cmd_search(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let device = configured_device(cfg)?;
    let r = search_device(
        &device,
        &cfg.search,
        &cfg.heuristic,
        stream_from(seed_of(cfg), 0),
    )
    .map_err(runtime_err)?;
    Ok(search_outcome("search", cfg, &device, &r))
}

fn cmd_oracle(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let device = configured_device(cfg)?;
    let ranking = match cfg.experiment.oracle_ranking {
        OracleRanking::Energy => Ranking::MeasuredEnergy,
        OracleRanking::Blended => Ranking::Blended(cfg.heuristic),
    };
    let provider = SimulatedProvider::new(&device, stream_from(seed_of(cfg), 0));
    let r =
        exhaustive_search(provider, &device.topology, &cfg.search, ranking).map_err(runtime_err)?;
    Ok(search_outcome("oracle", cfg, &device, &r))
}

fn cmd_tree(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let device = configured_device(cfg)?;
    let root = match &cfg.device.root {
        Some(text) => parse_selection(text, &device.topology)?,
        None => {
            let quiet = device.noiseless();
            search_device(
                &quiet,
                &cfg.search,
                &cfg.heuristic,
                stream_from(seed_of(cfg), 0),
            )
            .map_err(runtime_err)?
            .stage1
        }
    };
    cfg.device.root = Some(root.to_string());
    let tree = grow_candidate_tree(&root, &device.topology, &cfg.search);
    let mut stdout = String::new();
    for node in &tree.nodes {
        let via = match (node.parent, node.transform) {
            (Some(p), Some(t)) => format!("{} from {}", t.tag(), tree.nodes[p].selection),
            _ => "root".to_string(),
        };
        let _ = writeln!(stdout, "{}\tdepth {}\t{}", node.selection, node.depth, via);
    }
    let json = serde_json::to_string_pretty(&tree).expect("tree serializes") + "\n";
    Ok(Outcome {
        stdout,
        files: vec![("summary.json".into(), json)],
    })
}

fn expand_presets(list: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for name in list {
        match name.as_str() {
            "all" => out.extend(PRESET_NAMES.iter().map(|s| s.to_string())),
            "android" => out.extend(ANDROID_PRESETS.iter().map(|s| s.to_string())),
            other => out.push(other.to_string()),
        }
    }
    out
}

fn cmd_ablate(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let names = expand_presets(
        cfg.device
            .presets
            .as_deref()
            .unwrap_or(&["all".to_string()]),
    );
    if names.is_empty() {
        return Err(config_err("device.presets is empty"));
    }
    let mut devices = Vec::with_capacity(names.len());
    for name in &names {
        let base = load_device(name).map_err(config_err)?;
        let noise = cfg.noise.apply(base.noise);
        noise.validate().map_err(config_err)?;
        devices.push(base.with_noise(noise));
    }
    if let Some(first) = devices.first() {
        cfg.noise = NoiseSection::resolved(first.noise);
    }
    cfg.device.presets = Some(names);
    let report = run_ablation(
        &devices,
        &cfg.search,
        &cfg.heuristic,
        cfg.experiment.trials,
        seed_of(cfg),
    )
    .map_err(runtime_err)?;
    Ok(ablation_outcome(cfg, &report))
}

fn ablation_outcome(cfg: &RunConfig, report: &AblationReport) -> Outcome {
    let format = cfg.output.format;
    let json = report.to_json() + "\n";
    let rendered = match format {
        OutputFormat::Json => json.clone(),
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Md => report.to_markdown(),
    };
    Outcome {
        stdout: rendered.clone(),
        files: vec![
            ("summary.json".into(), json),
            (format!("report.{}", format.extension()), rendered),
        ],
    }
}

#[derive(Serialize)]
struct TheoremSummary<'a> {
    device: &'a str,
    seed: u64,
    selection: &'a CoreSelection,
    variance: &'a TheoremReport,
    ordering: &'a TheoremReport,
    variance_within_tolerance: bool,
    blend_not_worse: Option<bool>,
}

fn cmd_theorems(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let device = configured_device(cfg)?;
    let selection = match &cfg.device.selection {
        Some(text) => parse_selection(text, &device.topology)?,
        None => match &device.calibration {
            Some(c) => c.optimum.clone(),
            None => {
                let quiet = device.noiseless();
                search_device(&quiet, &cfg.search, &cfg.heuristic, quiet.stream(0))
                    .map_err(runtime_err)?
                    .chosen
            }
        },
    };
    cfg.device.selection = Some(selection.to_string());
    let seed = seed_of(cfg);
    let alpha = cfg.heuristic.alpha_for(device.topology.selection_mode());
    let exp = cfg.experiment;
    let variance = verify_variance_reduction(
        &device,
        &selection,
        &cfg.heuristic,
        alpha,
        exp.variance_trials,
        seed,
    )
    .map_err(runtime_err)?;
    let ordering = verify_ordering_accuracy(
        &device,
        &cfg.heuristic,
        alpha,
        exp.pairs,
        exp.pair_trials,
        seed,
    )
    .map_err(runtime_err)?;
    let ratio = variance.empirical_variance_ratio.unwrap_or(f64::NAN);
    let summary = TheoremSummary {
        device: device.name(),
        seed,
        selection: &selection,
        variance: &variance,
        ordering: &ordering,
        variance_within_tolerance: (ratio - variance.predicted_ratio).abs() <= 0.03,
        blend_not_worse: ordering.blend_not_worse(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let rendered = match cfg.output.format {
        OutputFormat::Json => json.clone(),
        OutputFormat::Csv => format!(
            "device,selection,alpha,variance_trials,variance_ratio,predicted_ratio,pairs,excluded_pairs,comparisons,accuracy_blend,accuracy_raw,gap_se\n{},\"{}\",{},{},{},{:.4},{},{},{},{},{},{}\n",
            device.name(),
            selection,
            alpha,
            variance.trials,
            fmt_opt(variance.empirical_variance_ratio),
            variance.predicted_ratio,
            ordering.pairs,
            ordering.excluded_pairs,
            ordering.comparisons,
            fmt_opt(ordering.ordering_accuracy_blend),
            fmt_opt(ordering.ordering_accuracy_raw),
            fmt_opt(ordering.ordering_gap_se),
        ),
        OutputFormat::Md => format!(
            "| check | value | expected |\n|---|---|---|\n\
             | variance ratio ({} on {}, {} samples) | {} | {:.4} |\n\
             | ordering accuracy, blend | {} | >= raw |\n\
             | ordering accuracy, raw energy | {} | |\n\
             | large-gap accuracy, blend / raw | {} / {} | 1.0 |\n\
             | pairs (excluded) | {} ({}) | |\n\
             | comparisons | {} | |\n",
            selection,
            device.name(),
            variance.trials,
            fmt_opt(variance.empirical_variance_ratio),
            variance.predicted_ratio,
            fmt_opt(ordering.ordering_accuracy_blend),
            fmt_opt(ordering.ordering_accuracy_raw),
            fmt_opt(ordering.large_gap_accuracy_blend),
            fmt_opt(ordering.large_gap_accuracy_raw),
            ordering.pairs,
            ordering.excluded_pairs,
            ordering.comparisons,
        ),
    };
    Ok(Outcome {
        stdout: rendered.clone(),
        files: vec![
            ("summary.json".into(), json),
            (
                format!("report.{}", cfg.output.format.extension()),
                rendered,
            ),
        ],
    })
}

fn cmd_presets(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut stdout = String::new();
    let mut listing = Vec::new();
    for name in PRESET_NAMES {
        let d = load_preset(name).map_err(config_err)?;
        let clusters: Vec<String> = d
            .topology
            .clusters()
            .iter()
            .map(|c| {
                format!(
                    "{}x{}@{:.2}",
                    c.core_count,
                    c.core_type.as_str(),
                    c.max_freq_ghz
                )
            })
            .collect();
        let _ = writeln!(
            stdout,
            "{name:<12} {:<12} space {:>3}  {}",
            match d.topology.selection_mode() {
                crate::topology::SelectionMode::Affinity => "affinity",
                crate::topology::SelectionMode::ThreadCount => "threads",
            },
            d.topology.search_space_size(),
            clusters.join(" ")
        );
        listing.push(d.topology.to_descriptor());
    }
    let json = serde_json::to_string_pretty(&listing).expect("listing serializes") + "\n";
    if cfg.output.format == OutputFormat::Json {
        stdout = json.clone();
    }
    Ok(Outcome {
        stdout,
        files: vec![("summary.json".into(), json)],
    })
}

fn read_topology(path: &Path) -> Result<CpuTopology, CliError> {
    if path.is_dir() {
        return parse_sysfs_snapshot(path).map_err(config_err);
    }
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    match parse_device_descriptor(&text) {
        Ok(t) => Ok(t),
        Err(descriptor_err) => SimulatedDevice::from_preset_json(&text)
            .map(|d| d.topology)
            .map_err(|preset_err| {
                config_err(format!(
                    "{}: not a descriptor ({descriptor_err}) nor a preset ({preset_err})",
                    path.display()
                ))
            }),
    }
}

fn cmd_describe(cfg: &RunConfig, path: Option<&Path>) -> Result<Outcome, CliError> {
    let topology = match (path, &cfg.device.preset) {
        (Some(p), _) => read_topology(p)?,
        (None, Some(spec)) => load_device(spec).map_err(config_err)?.topology,
        (None, None) => return Err(config_err("describe needs a path or --preset")),
    };
    let json = topology.to_descriptor_json() + "\n";
    let stdout = if cfg.output.format == OutputFormat::Json {
        json.clone()
    } else {
        let mut s = format!(
            "device {} ({:?} mode, {} cores, search space {})\n",
            topology.device_name(),
            topology.selection_mode(),
            topology.total_cores(),
            topology.search_space_size()
        );
        for (i, c) in topology.clusters().iter().enumerate() {
            let _ = writeln!(
                s,
                "  cluster {i}: {} x {:<11} {:.2} GHz  capacity {:.3}",
                c.core_count,
                c.core_type.as_str(),
                c.max_freq_ghz,
                c.capacity
            );
        }
        s
    };
    Ok(Outcome {
        stdout,
        files: vec![("summary.json".into(), json)],
    })
}

fn write_outputs(dir: &Path, cfg: &RunConfig, files: &[(String, String)]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    fs::write(dir.join("config.json"), echo)?;
    for (name, content) in files {
        fs::write(dir.join(name), content)?;
    }
    Ok(())
}

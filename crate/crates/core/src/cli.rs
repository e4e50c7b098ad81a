//! Command-line front end.
//!
//! Every flag may also be given in a flat `key = value` file passed with
//! `--config`; keys are flag names with `_` or `-`. Flags on the command
//! line win over the file.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{
    self, fidelity_from_counts, fit_gaussian, fit_peak_amplitude, poisson_sigma, DetectionError,
    DetectorEfficiencies, Experiment, ExperimentSetup, FitError, InjectionModel, MeasurementMode,
    TriggerMode, UnmatchedPhoton, DEFAULT_QE,
};
use crate::fock::Truncation;
use crate::metrics::{self, FidelityReport, MetricsError};
use crate::opa::{Amplifier, Gain, ModelError, Order};
use crate::polarization::PolarizationQubit;

/// Largest norm defect of an explicit qubit that is silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-4;
pub const SEED_ENV: &str = "QOPA_SEED";
pub const CSV_HEADER: &str = "command,qubit,g,order,F,F_star,R,R_star,S1,S2,p_success,C1,C2,sigma_R,sigma_F,z,fit_A,fit_c,fit_w,fit_B";
const DEFAULT_TRIALS: u64 = 1_000_000;
const DEFAULT_HAAR_COUNT: usize = 100;
const DEFAULT_Z_STEPS: usize = 21;
/// Below this many counts in either channel an estimate is reported as unstable.
const STABLE_COUNTS: u64 = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("missing required option --{0}")]
    Missing(&'static str),
    #[error("invalid value for --{flag}: {message}")]
    Invalid { flag: &'static str, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("non-finite value in column {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

fn invalid(flag: &'static str, message: impl Into<String>) -> CliError {
    CliError::Invalid {
        flag,
        message: message.into(),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qiopa",
    version,
    about = "Quantum-injected optical parametric amplifier: cloning and U-NOT simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// F, F*, R, R*, entropies and success probability for one qubit.
    #[command(args_override_self = true)]
    Fidelity(FidelityArgs),
    /// The same quantities over a list of gains.
    #[command(args_override_self = true)]
    SweepGain(SweepArgs),
    /// Spread of F and F* over Haar-random qubits.
    #[command(args_override_self = true)]
    Universality(UniversalityArgs),
    /// Monte Carlo four-fold coincidence run.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Monte Carlo scan of the pump mirror position.
    #[command(name = "zscan", args_override_self = true)]
    Zscan(ZscanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    First,
    Full,
    Both,
}

impl OrderArg {
    fn orders(self) -> Vec<Order> {
        match self {
            OrderArg::First => vec![Order::First],
            OrderArg::Full => vec![Order::Full],
            OrderArg::Both => vec![Order::First, Order::Full],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cloning,
    Unot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnmatchedArg {
    Distinguishable,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TriggerArg {
    Required,
    Ignored,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat key=value file with default option values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub per_mode: Option<u32>,
    #[arg(long)]
    pub total: Option<u32>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FidelityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// H, V, diag, circ-left, or re_a,im_a,re_b,im_b.
    #[arg(long)]
    pub qubit: Option<String>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub qubit: Option<String>,
    /// Comma-separated gains.
    #[arg(long, value_delimiter = ',', num_args = 1.., action = clap::ArgAction::Set)]
    pub gains: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
}

#[derive(Debug, Clone, Args)]
pub struct UniversalityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub g: Option<f64>,
    /// Number of Haar-random qubits besides the three reference states.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub qubit: Option<String>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Efficiency of every detector.
    #[arg(long)]
    pub qe: Option<f64>,
    #[arg(long)]
    pub qe_d2: Option<f64>,
    #[arg(long)]
    pub qe_d2_star: Option<f64>,
    #[arg(long)]
    pub qe_da: Option<f64>,
    #[arg(long)]
    pub qe_db: Option<f64>,
    #[arg(long)]
    pub qe_db_star: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub z0: Option<f64>,
    #[arg(long)]
    pub sigma_z: Option<f64>,
    #[arg(long)]
    pub p_peak: Option<f64>,
    #[arg(long, value_enum)]
    pub unmatched: Option<UnmatchedArg>,
    #[arg(long, value_enum)]
    pub trigger: Option<TriggerArg>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Mirror position.
    #[arg(long, allow_negative_numbers = true)]
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ZscanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub z_start: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub z_stop: Option<f64>,
    #[arg(long)]
    pub z_steps: Option<usize>,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Fidelity(a) => &a.common,
            Command::SweepGain(a) => &a.common,
            Command::Universality(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Zscan(a) => &a.common,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Fidelity,
    SweepGain,
    Universality,
    Simulate,
    Zscan,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Fidelity => "fidelity",
            CommandKind::SweepGain => "sweep-gain",
            CommandKind::Universality => "universality",
            CommandKind::Simulate => "simulate",
            CommandKind::Zscan => "zscan",
        }
    }
}

/// A parsed qubit and the label it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedQubit {
    pub label: String,
    pub qubit: PolarizationQubit,
}

pub fn parse_qubit(text: &str) -> Result<NamedQubit, CliError> {
    let named = match text {
        "H" => Some(PolarizationQubit::horizontal()),
        "V" => Some(PolarizationQubit::vertical()),
        "diag" => Some(PolarizationQubit::diagonal()),
        "circ-left" => Some(PolarizationQubit::circular_left()),
        _ => None,
    };
    if let Some(qubit) = named {
        return Ok(NamedQubit {
            label: text.to_string(),
            qubit,
        });
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(invalid(
            "qubit",
            format!("expected H, V, diag, circ-left or four comma-separated numbers, got '{text}'"),
        ));
    }
    let mut v = [0.0; 4];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| invalid("qubit", format!("malformed number '{part}'")))?;
    }
    let alpha = Complex64::new(v[0], v[1]);
    let beta = Complex64::new(v[2], v[3]);
    let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
    if (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(invalid("qubit", format!("norm {norm} is not 1")));
    }
    if norm != 1.0 {
        log::warn!("qubit '{text}' has norm {norm}; renormalized");
    }
    let qubit =
        PolarizationQubit::normalized(alpha, beta).map_err(|e| invalid("qubit", e.to_string()))?;
    Ok(NamedQubit {
        label: text.to_string(),
        qubit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZGrid {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl ZGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.start + h * i as f64).collect()
    }
}

/// Validated options of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub qubit: Option<NamedQubit>,
    /// Ascending and free of duplicates.
    pub gains: Vec<f64>,
    pub orders: Vec<Order>,
    pub truncation: Truncation,
    pub count: usize,
    pub seed: u64,
    pub experiment: Option<ExperimentSetup>,
    pub z_grid: Option<ZGrid>,
    pub format: Format,
    pub output: Option<PathBuf>,
}

fn config_file_args(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", n + 1),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{line}'")))?;
        let key = key.trim().replace('_', "-");
        let valid_key = !key.is_empty()
            && key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-');
        if !valid_key || key == "config" {
            return Err(bad(format!("invalid key '{key}'")));
        }
        args.push(OsString::from(format!("--{key}")));
        args.push(OsString::from(value.trim()));
    }
    Ok(args)
}

fn clap_message(e: &clap::Error) -> String {
    let text = e.render().to_string();
    text.strip_prefix("error: ")
        .unwrap_or(&text)
        .trim_end()
        .to_string()
}

fn parse_cli(args: &[OsString]) -> Result<Cli, CliError> {
    Cli::try_parse_from(args).map_err(|e| CliError::Usage(clap_message(&e)))
}

fn resolve_seed(flag: Option<u64>, env_seed: Option<&str>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env_seed {
        Some(s) => s.trim().parse().map_err(|_| {
            invalid(
                "seed",
                format!("{SEED_ENV}='{s}' is not a 64-bit unsigned integer"),
            )
        }),
        None => Ok(0),
    }
}

fn require<T>(value: Option<T>, flag: &'static str) -> Result<T, CliError> {
    value.ok_or(CliError::Missing(flag))
}

fn checked_gain(g: f64) -> Result<f64, CliError> {
    Gain::new(g)
        .map(Gain::value)
        .map_err(|e| invalid("g", e.to_string()))
}

fn truncation(common: &CommonArgs) -> Result<Truncation, CliError> {
    let d = Truncation::default();
    let t = Truncation::new(
        common.per_mode.unwrap_or(d.per_mode),
        common.total.unwrap_or(d.total),
    );
    crate::opa::build_generator(t)
        .map(|_| t)
        .map_err(|e| invalid("total", e.to_string()))
}

fn experiment_setup(
    args: &ExperimentArgs,
    trunc: Truncation,
    env_seed: Option<&str>,
    z: f64,
) -> Result<(NamedQubit, ExperimentSetup), CliError> {
    let qubit = parse_qubit(&require(args.qubit.clone(), "qubit")?)?;
    let g = checked_gain(require(args.g, "g")?)?;
    let mode = match args.mode.unwrap_or(ModeArg::Cloning) {
        ModeArg::Cloning => MeasurementMode::Cloning,
        ModeArg::Unot => MeasurementMode::UNot,
    };
    let base = args.qe.unwrap_or(DEFAULT_QE);
    let efficiencies = DetectorEfficiencies {
        d2: args.qe_d2.unwrap_or(base),
        d2_star: args.qe_d2_star.unwrap_or(base),
        da: args.qe_da.unwrap_or(base),
        db: args.qe_db.unwrap_or(base),
        db_star: args.qe_db_star.unwrap_or(base),
    };
    let defaults = InjectionModel::default();
    let injection = InjectionModel {
        z,
        z0: args.z0.unwrap_or(defaults.z0),
        sigma_z: args.sigma_z.unwrap_or(defaults.sigma_z),
        p_peak: args.p_peak.unwrap_or(defaults.p_peak),
        unmatched: match args.unmatched.unwrap_or(UnmatchedArg::Distinguishable) {
            UnmatchedArg::Distinguishable => UnmatchedPhoton::Distinguishable,
            UnmatchedArg::Absent => UnmatchedPhoton::Absent,
        },
    };
    let setup = ExperimentSetup {
        mode,
        qubit: qubit.qubit,
        gain: Gain::new(g)?,
        efficiencies,
        injection,
        trigger: match args.trigger.unwrap_or(TriggerArg::Required) {
            TriggerArg::Required => TriggerMode::Required,
            TriggerArg::Ignored => TriggerMode::Ignored,
        },
        trials: args.trials.unwrap_or(DEFAULT_TRIALS),
        master_seed: resolve_seed(args.seed, env_seed)?,
        truncation: trunc,
    };
    setup.validate().map_err(|e| match e {
        DetectionError::InvalidSetup(m) => invalid(
            if m.contains("trials") {
                "trials"
            } else {
                "setup"
            },
            m,
        ),
        other => other.into(),
    })?;
    Ok((qubit, setup))
}

/// Parses `args` (including the program name), merging a `--config` file if
/// one is named. `env_seed` is the value of the seed environment variable.
pub fn parse_config(args: &[OsString], env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let first = parse_cli(args)?;
    let cli = match &first.command.common().config {
        Some(path) => {
            let mut merged = args[..2.min(args.len())].to_vec();
            merged.extend(config_file_args(path)?);
            merged.extend_from_slice(&args[2.min(args.len())..]);
            Cli::try_parse_from(&merged).map_err(|e| CliError::ConfigFile {
                path: path.clone(),
                message: clap_message(&e),
            })?
        }
        None => first,
    };
    let common = cli.command.common().clone();
    let trunc = truncation(&common)?;
    let mut config = RunConfig {
        command: CommandKind::Fidelity,
        qubit: None,
        gains: Vec::new(),
        orders: Vec::new(),
        truncation: trunc,
        count: 0,
        seed: 0,
        experiment: None,
        z_grid: None,
        format: common.format.unwrap_or(Format::Csv),
        output: common.output.clone(),
    };
    match cli.command {
        Command::Fidelity(a) => {
            config.qubit = Some(parse_qubit(&require(a.qubit, "qubit")?)?);
            config.gains = vec![checked_gain(require(a.g, "g")?)?];
            config.orders = a.order.unwrap_or(OrderArg::Both).orders();
        }
        Command::SweepGain(a) => {
            config.command = CommandKind::SweepGain;
            config.qubit = Some(parse_qubit(&require(a.qubit, "qubit")?)?);
            let mut gains = require(a.gains, "gains")?;
            if gains.is_empty() {
                return Err(invalid("gains", "empty gain list"));
            }
            for g in &mut gains {
                *g = checked_gain(*g)?;
            }
            gains.sort_by(f64::total_cmp);
            let n = gains.len();
            gains.dedup();
            if gains.len() < n {
                log::warn!("removed {} duplicate gain value(s)", n - gains.len());
            }
            config.gains = gains;
            config.orders = a.order.unwrap_or(OrderArg::Full).orders();
        }
        Command::Universality(a) => {
            config.command = CommandKind::Universality;
            config.gains = vec![checked_gain(require(a.g, "g")?)?];
            config.count = a.count.unwrap_or(DEFAULT_HAAR_COUNT);
            config.orders = a.order.unwrap_or(OrderArg::First).orders();
            config.seed = resolve_seed(a.seed, env_seed)?;
        }
        Command::Simulate(a) => {
            config.command = CommandKind::Simulate;
            let (qubit, setup) =
                experiment_setup(&a.experiment, trunc, env_seed, a.z.unwrap_or(0.0))?;
            config.qubit = Some(qubit);
            config.gains = vec![setup.gain.value()];
            config.seed = setup.master_seed;
            config.experiment = Some(setup);
        }
        Command::Zscan(a) => {
            config.command = CommandKind::Zscan;
            let (qubit, setup) = experiment_setup(&a.experiment, trunc, env_seed, 0.0)?;
            let grid = ZGrid {
                start: require(a.z_start, "z-start")?,
                stop: require(a.z_stop, "z-stop")?,
                steps: a.z_steps.unwrap_or(DEFAULT_Z_STEPS),
            };
            if grid.steps < detection::fit::MIN_POINTS {
                return Err(invalid(
                    "z-steps",
                    format!(
                        "need at least {} positions to fit",
                        detection::fit::MIN_POINTS
                    ),
                ));
            }
            if !(grid.start.is_finite() && grid.stop.is_finite() && grid.stop > grid.start) {
                return Err(invalid("z-stop", "must be finite and greater than z-start"));
            }
            config.qubit = Some(qubit);
            config.gains = vec![setup.gain.value()];
            config.seed = setup.master_seed;
            config.experiment = Some(setup);
            config.z_grid = Some(grid);
        }
    }
    Ok(config)
}

/// One output record. Absent quantities are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub command: String,
    pub qubit: String,
    pub g: Option<f64>,
    pub order: Option<String>,
    #[serde(rename = "F")]
    pub f: Option<f64>,
    #[serde(rename = "F_star")]
    pub f_star: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "R_star")]
    pub r_star: Option<f64>,
    #[serde(rename = "S1")]
    pub s1: Option<f64>,
    #[serde(rename = "S2")]
    pub s2: Option<f64>,
    pub p_success: Option<f64>,
    #[serde(rename = "C1")]
    pub c1: Option<u64>,
    #[serde(rename = "C2")]
    pub c2: Option<u64>,
    #[serde(rename = "sigma_R")]
    pub sigma_r: Option<f64>,
    #[serde(rename = "sigma_F")]
    pub sigma_f: Option<f64>,
    pub z: Option<f64>,
    #[serde(rename = "fit_A")]
    pub fit_a: Option<f64>,
    pub fit_c: Option<f64>,
    pub fit_w: Option<f64>,
    #[serde(rename = "fit_B")]
    pub fit_b: Option<f64>,
}

impl ReportRow {
    fn new(command: CommandKind, qubit: &str, g: Option<f64>, order: &str) -> Self {
        Self {
            command: command.name().to_string(),
            qubit: qubit.to_string(),
            g,
            order: Some(order.to_string()),
            ..Self::default()
        }
    }

    fn with_report(mut self, r: &FidelityReport) -> Self {
        self.f = Some(r.f);
        self.f_star = Some(r.f_star);
        self.r = Some(r.r);
        self.r_star = Some(r.r_star);
        self.s1 = Some(r.s1);
        self.s2 = Some(r.s2);
        self.p_success = Some(r.success_probability);
        self
    }

    fn numbers(&self) -> [(&'static str, Option<f64>); 16] {
        [
            ("g", self.g),
            ("F", self.f),
            ("F_star", self.f_star),
            ("R", self.r),
            ("R_star", self.r_star),
            ("S1", self.s1),
            ("S2", self.s2),
            ("p_success", self.p_success),
            ("sigma_R", self.sigma_r),
            ("sigma_F", self.sigma_f),
            ("z", self.z),
            ("fit_A", self.fit_a),
            ("fit_c", self.fit_c),
            ("fit_w", self.fit_w),
            ("fit_B", self.fit_b),
            ("", None),
        ]
    }

    fn check_finite(&self) -> Result<(), CliError> {
        for (name, v) in self.numbers() {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(CliError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Copy with every real rounded to 12 significant digits.
    fn rounded(&self) -> Self {
        let r = |v: Option<f64>| v.map(round_sig12);
        Self {
            command: self.command.clone(),
            qubit: self.qubit.clone(),
            g: r(self.g),
            order: self.order.clone(),
            f: r(self.f),
            f_star: r(self.f_star),
            r: r(self.r),
            r_star: r(self.r_star),
            s1: r(self.s1),
            s2: r(self.s2),
            p_success: r(self.p_success),
            c1: self.c1,
            c2: self.c2,
            sigma_r: r(self.sigma_r),
            sigma_f: r(self.sigma_f),
            z: r(self.z),
            fit_a: r(self.fit_a),
            fit_c: r(self.fit_c),
            fit_w: r(self.fit_w),
            fit_b: r(self.fit_b),
        }
    }
}

pub fn round_sig12(x: f64) -> f64 {
    let v: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn fidelity_rows(
    command: CommandKind,
    amp: &Amplifier,
    named: &NamedQubit,
    g: f64,
    order: Order,
) -> Result<ReportRow, CliError> {
    let row = ReportRow::new(command, &named.label, Some(g), order.label());
    match metrics::fidelity_report(amp, &named.qubit, Gain::new(g)?, order) {
        Ok(report) => Ok(row.with_report(&report)),
        Err(MetricsError::NoAmplification) => {
            log::warn!("g = {g}: no amplification, fidelities undefined");
            Ok(row)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_fidelity(config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let amp = Amplifier::new(config.truncation)?;
    let qubit = config.qubit.as_ref().ok_or(CliError::Missing("qubit"))?;
    let mut rows = Vec::new();
    for &g in &config.gains {
        for &order in &config.orders {
            rows.push(fidelity_rows(config.command, &amp, qubit, g, order)?);
        }
    }
    Ok(rows)
}

fn cmd_universality(config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let amp = Amplifier::new(config.truncation)?;
    let g = config.gains[0];
    let mut qubits: Vec<NamedQubit> = PolarizationQubit::reference_states()
        .into_iter()
        .map(|(label, qubit)| NamedQubit {
            label: label.to_string(),
            qubit,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    qubits.extend((0..config.count).map(|i| NamedQubit {
        label: format!("haar-{i}"),
        qubit: PolarizationQubit::haar_random(&mut rng),
    }));
    let plain: Vec<PolarizationQubit> = qubits.iter().map(|q| q.qubit).collect();
    let mut rows = Vec::new();
    for &order in &config.orders {
        let scan = match metrics::universality_scan(&amp, &plain, Gain::new(g)?, order) {
            Err(MetricsError::NoAmplification) => {
                log::warn!("g = {g}: no amplification, fidelities undefined");
                rows.extend(
                    qubits
                        .iter()
                        .map(|q| ReportRow::new(config.command, &q.label, Some(g), order.label())),
                );
                continue;
            }
            other => other?,
        };
        for (q, report) in qubits.iter().zip(&scan.reports) {
            rows.push(
                ReportRow::new(config.command, &q.label, Some(g), order.label())
                    .with_report(report),
            );
        }
        let mut summary = ReportRow::new(config.command, "max_deviation", Some(g), order.label());
        summary.f = Some(scan.max_deviation_f);
        summary.f_star = Some(scan.max_deviation_f_star);
        rows.push(summary);
    }
    Ok(rows)
}

fn count_row(
    command: CommandKind,
    label: &str,
    setup: &ExperimentSetup,
    z: f64,
    c1: u64,
    c2: u64,
) -> ReportRow {
    let mut row = ReportRow::new(command, label, Some(setup.gain.value()), "mc");
    row.c1 = Some(c1);
    row.c2 = Some(c2);
    row.z = Some(z);
    row
}

fn fill_estimate(row: &mut ReportRow, mode: MeasurementMode) {
    let (c1, c2) = (row.c1.unwrap_or(0), row.c2.unwrap_or(0));
    match fidelity_from_counts(mode, c1, c2) {
        Ok((r, f)) => {
            if c1.min(c2) < STABLE_COUNTS {
                log::warn!("only C1={c1}, C2={c2} counts: estimate unstable");
            }
            match mode {
                MeasurementMode::Cloning => {
                    row.r = Some(r.value);
                    row.f = Some(f.value);
                }
                MeasurementMode::UNot => {
                    row.r_star = Some(r.value);
                    row.f_star = Some(f.value);
                }
            }
            row.sigma_r = Some(r.sigma);
            row.sigma_f = Some(f.sigma);
        }
        Err(_) => log::warn!("C2 = 0 at z = {:?}: estimate unstable, left empty", row.z),
    }
}

fn oracle_row(command: CommandKind, label: &str, exp: &Experiment, z: f64) -> ReportRow {
    let setup = exp.setup();
    let mut row = ReportRow::new(command, label, Some(setup.gain.value()), "oracle");
    row.z = Some(z);
    let rates = exp.expected_rates(setup.injection.epsilon_at(z));
    if rates.c2 > 0.0 {
        let (r, f) = (rates.ratio(setup.mode), rates.fidelity(setup.mode));
        match setup.mode {
            MeasurementMode::Cloning => {
                row.r = Some(r);
                row.f = Some(f);
            }
            MeasurementMode::UNot => {
                row.r_star = Some(r);
                row.f_star = Some(f);
            }
        }
    }
    row
}

fn cmd_simulate(config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let setup = config.experiment.as_ref().ok_or(CliError::Missing("g"))?;
    let label = &config
        .qubit
        .as_ref()
        .ok_or(CliError::Missing("qubit"))?
        .label;
    let exp = Experiment::prepare(setup)?;
    let z = setup.injection.z;
    let counts = exp.run(setup.injection.epsilon(), setup.trials, setup.master_seed);
    let mut row = count_row(config.command, label, setup, z, counts.c1, counts.c2);
    fill_estimate(&mut row, setup.mode);
    Ok(vec![row, oracle_row(config.command, label, &exp, z)])
}

fn cmd_zscan(config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let setup = config.experiment.as_ref().ok_or(CliError::Missing("g"))?;
    let label = &config
        .qubit
        .as_ref()
        .ok_or(CliError::Missing("qubit"))?
        .label;
    let grid = config.z_grid.as_ref().ok_or(CliError::Missing("z-start"))?;
    let zs = grid.points();
    let scan = detection::z_scan(setup, &zs)?;
    let mut rows: Vec<ReportRow> = scan
        .iter()
        .map(|p| count_row(config.command, label, setup, p.z, p.counts.c1, p.counts.c2))
        .collect();

    let c1: Vec<f64> = scan.iter().map(|p| p.counts.c1 as f64).collect();
    let c2: Vec<f64> = scan.iter().map(|p| p.counts.c2 as f64).collect();
    let e1: Vec<f64> = c1.iter().map(|&c| poisson_sigma(c)).collect();
    let e2: Vec<f64> = c2.iter().map(|&c| poisson_sigma(c)).collect();
    let g = Some(setup.gain.value());
    let finite = |v: f64| Some(v).filter(|x| x.is_finite());

    let fit = fit_gaussian(&zs, &c1, &e1)?;
    let mut row = ReportRow::new(config.command, label, g, "fit_c1");
    (row.fit_a, row.fit_c, row.fit_w, row.fit_b) = (
        Some(fit.amplitude),
        Some(fit.center),
        Some(fit.width),
        Some(fit.offset),
    );
    rows.push(row);
    let mut row = ReportRow::new(config.command, label, g, "fit_c1_sigma");
    (row.fit_a, row.fit_c, row.fit_w, row.fit_b) = (
        finite(fit.sigmas[0]),
        finite(fit.sigmas[1]),
        finite(fit.sigmas[2]),
        finite(fit.sigmas[3]),
    );
    rows.push(row);

    if fit.flat {
        log::warn!("C1 scan is flat: no resonance peak");
        return Ok(rows);
    }
    let peak = fit_peak_amplitude(&zs, &c2, &e2, fit.center, fit.width)?;
    let mut row = ReportRow::new(config.command, label, g, "fit_c2");
    (row.fit_a, row.fit_c, row.fit_w, row.fit_b) = (
        Some(peak.amplitude),
        Some(fit.center),
        Some(fit.width),
        Some(peak.offset),
    );
    rows.push(row);
    let mut row = ReportRow::new(config.command, label, g, "fit_c2_sigma");
    (row.fit_a, row.fit_b) = (Some(peak.amplitude_sigma), Some(peak.offset_sigma));
    rows.push(row);
    Ok(rows)
}

pub fn execute(config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let rows = match config.command {
        CommandKind::Fidelity | CommandKind::SweepGain => cmd_fidelity(config)?,
        CommandKind::Universality => cmd_universality(config)?,
        CommandKind::Simulate => cmd_simulate(config)?,
        CommandKind::Zscan => cmd_zscan(config)?,
    };
    for row in &rows {
        row.check_finite()?;
    }
    Ok(rows)
}

fn csv_field(out: &mut String, s: &str) {
    if s.contains([',', '"', '\n']) {
        out.push('"');
        out.push_str(&s.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(s);
    }
}

pub fn render(rows: &[ReportRow], format: Format) -> String {
    let rows: Vec<ReportRow> = rows.iter().map(ReportRow::rounded).collect();
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let int = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in &rows {
                csv_field(&mut out, &r.command);
                out.push(',');
                csv_field(&mut out, &r.qubit);
                let rest = [
                    num(r.g),
                    r.order.clone().unwrap_or_default(),
                    num(r.f),
                    num(r.f_star),
                    num(r.r),
                    num(r.r_star),
                    num(r.s1),
                    num(r.s2),
                    num(r.p_success),
                    int(r.c1),
                    int(r.c2),
                    num(r.sigma_r),
                    num(r.sigma_f),
                    num(r.z),
                    num(r.fit_a),
                    num(r.fit_c),
                    num(r.fit_w),
                    num(r.fit_b),
                ];
                for field in rest {
                    let _ = write!(out, ",{field}");
                }
                out.push('\n');
            }
            out
        }
    }
}

pub fn emit_report(
    rows: &[ReportRow],
    format: Format,
    path: Option<&Path>,
) -> Result<(), CliError> {
    let text = render(rows, format);
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|source| CliError::Write {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Parses, runs and writes the report. Returns the process exit status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let env_seed = std::env::var(SEED_ENV).ok();
    if let Err(e) = Cli::try_parse_from(&args) {
        if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    }
    let result = parse_config(&args, env_seed.as_deref()).and_then(|config| {
        let rows = execute(&config)?;
        emit_report(&rows, config.format, config.output.as_deref())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().trim_end());
            ExitCode::FAILURE
        }
    }
}

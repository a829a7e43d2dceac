//! Command-line front end: `eval`, `optimize`, `curve` and `verify`.
//!
//! Every invocation is first normalized into a [`RunSpec`]: the subcommand,
//! run options, and a flat set of `key = value` parameter assignments merged
//! from an optional `--config` file and the command-line flags (flags win).
//! Subcommands then read typed values out of the assignments, so a bad value
//! is reported with the field it came from whatever its origin.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::distribution::{all_distributions, best_binning, chsh, BinningStrategy, ChshResult, ClickPattern};
use crate::error::ModelError;
use crate::model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams};
use crate::optimizer::{efficiency_curve, optimize, Cell, CurvePoint, ModePolicy, OptimizationProblem, OptimizationResult};
use crate::probabilities::closed_form_raw;
use crate::verify::{verify_with, ClosedForm, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Keys accepted in a config file or produced from flags.
pub const PARAMETER_KEYS: [&str; 22] = [
    "eta",
    "p_dc",
    "modes",
    "g",
    "g_bar",
    "gamma",
    "gamma_bar",
    "alpha0",
    "phi_alpha0",
    "alpha1",
    "phi_alpha1",
    "beta0",
    "phi_beta0",
    "beta1",
    "phi_beta1",
    "binning",
    "single_mode",
    "equal_squeezing",
    "restarts",
    "g_max",
    "n_max",
    "samples",
];

const SETTING_KEYS: [(&str, &str); 4] =
    [("alpha0", "phi_alpha0"), ("alpha1", "phi_alpha1"), ("beta0", "phi_beta0"), ("beta1", "phi_beta1")];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("invalid value for `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(ModelError),
}

impl CliError {
    fn field(field: &str, reason: impl Into<String>) -> Self {
        CliError::Field { field: field.to_string(), reason: reason.into() }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) | CliError::Field { .. } => EXIT_USAGE,
            CliError::Model(ModelError::InvalidParameter { .. }) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Model(_) => EXIT_FAILURE,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter { field, reason } => CliError::field(field, reason),
            other => CliError::Model(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Eval,
    Optimize,
    Curve,
    Verify,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Eval => "eval",
            Command::Optimize => "optimize",
            Command::Curve => "curve",
            Command::Verify => "verify",
        })
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eval" => Ok(Command::Eval),
            "optimize" => Ok(Command::Optimize),
            "curve" => Ok(Command::Curve),
            "verify" => Ok(Command::Verify),
            _ => Err(format!("unknown subcommand `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Text => "text",
            Format::Csv => "csv",
        })
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("expected `text` or `csv`, got `{s}`")),
        }
    }
}

/// Efficiency grid `start:end:points`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let last = self.points - 1;
        (0..self.points)
            .map(|i| {
                if i == last {
                    self.end
                } else {
                    self.start + (self.end - self.start) * i as f64 / last as f64
                }
            })
            .collect()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.points)
    }
}

impl FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(format!("expected `start:end:points`, got `{s}`"));
        };
        let start: f64 = a.trim().parse().map_err(|_| format!("bad grid start `{a}`"))?;
        let end: f64 = b.trim().parse().map_err(|_| format!("bad grid end `{b}`"))?;
        let points: usize = n.trim().parse().map_err(|_| format!("bad grid point count `{n}`"))?;
        if !(start.is_finite() && end.is_finite()) || points == 0 {
            return Err(format!("grid needs finite endpoints and at least one point, got `{s}`"));
        }
        Ok(Grid { start, end, points })
    }
}

/// Mode-count selector: an integer, `poisson`, or (optimize only) `free`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSpec {
    Finite(u32),
    Poisson,
    Free,
}

impl FromStr for ModeSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "poisson" => Ok(ModeSpec::Poisson),
            "free" => Ok(ModeSpec::Free),
            _ => match s.parse::<u32>() {
                Ok(n) if n >= 1 => Ok(ModeSpec::Finite(n)),
                _ => Err(format!("expected a positive integer, `poisson` or `free`, got `{s}`")),
            },
        }
    }
}

/// Binning selector: `best`, `reference`, `single_detector` or an index 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningSpec(pub Option<BinningStrategy>);

impl FromStr for BinningSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best" => Ok(BinningSpec(None)),
            "reference" => Ok(BinningSpec(Some(BinningStrategy::REFERENCE))),
            "single_detector" => Ok(BinningSpec(Some(BinningStrategy::SINGLE_DETECTOR))),
            _ => match s.parse::<usize>() {
                Ok(i) if i < 256 => Ok(BinningSpec(Some(BinningStrategy::from_index(i)))),
                _ => Err(format!(
                    "expected `best`, `reference`, `single_detector` or an index below 256, got `{s}`"
                )),
            },
        }
    }
}

/// A fully normalized invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub assignments: BTreeMap<String, String>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub grid: Option<Grid>,
    pub format: Format,
}

impl RunSpec {
    pub fn new(command: Command) -> Self {
        let format = if command == Command::Curve { Format::Csv } else { Format::Text };
        RunSpec { command, assignments: BTreeMap::new(), out: None, seed: 0, grid: None, format }
    }

    pub fn from_args<I, T>(args: I) -> CliResult<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        Cli::try_parse_from(args)?.into_spec()
    }

    /// `key = value` text that [`RunSpec::from_text`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = format!("command = {}\nseed = {}\nformat = {}\n", self.command, self.seed, self.format);
        if let Some(out) = &self.out {
            s += &format!("out = {}\n", out.display());
        }
        if let Some(grid) = &self.grid {
            s += &format!("grid = {grid}\n");
        }
        for (k, v) in &self.assignments {
            s += &format!("{k} = {v}\n");
        }
        s
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut lines = parse_lines(text)?;
        let command = lines
            .remove("command")
            .ok_or_else(|| CliError::Usage("missing field `command`".into()))?;
        let command: Command = command.parse().map_err(|e| CliError::field("command", e))?;
        let mut spec = RunSpec::new(command);
        if let Some(v) = lines.remove("seed") {
            spec.seed = v.parse().map_err(|_| CliError::field("seed", format!("not an unsigned integer: `{v}`")))?;
        }
        if let Some(v) = lines.remove("format") {
            spec.format = v.parse().map_err(|e| CliError::field("format", e))?;
        }
        spec.out = lines.remove("out").map(PathBuf::from);
        if let Some(v) = lines.remove("grid") {
            spec.grid = Some(v.parse().map_err(|e| CliError::field("grid", e))?);
        }
        check_keys(&lines)?;
        spec.assignments = lines;
        Ok(spec)
    }
}

/// Split `key = value` lines; blank lines and lines starting with `#` are skipped.
fn parse_lines(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("line {}: expected `key = value`, got `{line}`", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if v.is_empty() {
            return Err(CliError::field(k, "empty value"));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::field(k, "given more than once"));
        }
    }
    Ok(map)
}

fn check_keys(map: &BTreeMap<String, String>) -> CliResult<()> {
    match map.keys().find(|k| !PARAMETER_KEYS.contains(&k.as_str())) {
        Some(k) => Err(CliError::field(k, "unknown field")),
        None => Ok(()),
    }
}

/// Parameter assignments of a config file.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let map = parse_lines(text)?;
    check_keys(&map)?;
    Ok(map)
}

#[derive(Debug, Parser)]
#[command(name = "spdc-chsh", version, about = "Exact CHSH statistics for SPDC photon-pair Bell tests with threshold detectors")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Evaluate S, CH, correlators and click distributions for explicit parameters
    Eval {
        #[command(flatten)]
        detectors: DetectorFlags,
        #[command(flatten)]
        source: SourceFlags,
        /// `best`, `reference`, `single_detector` or a strategy index below 256
        #[arg(long)]
        binning: Option<String>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Maximize S over source, settings, mode count and binning
    Optimize {
        #[command(flatten)]
        detectors: DetectorFlags,
        /// Mode count: an integer, `poisson`, or `free` (default)
        #[arg(long)]
        modes: Option<String>,
        /// Restrict to one mode (N = 1)
        #[arg(long)]
        single_mode: bool,
        /// Constrain g = g_bar
        #[arg(long)]
        equal_squeezing: bool,
        /// Hold the binning fixed: `reference`, `single_detector` or an index
        #[arg(long)]
        binning: Option<String>,
        /// Random starts per mode-count cell
        #[arg(long)]
        restarts: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Optimal S against efficiency for the free, single-mode and equal-squeezing policies
    Curve {
        /// Dark-count probability
        #[arg(long)]
        pdc: Option<f64>,
        /// Efficiency grid `start:end:points`
        #[arg(long)]
        grid: Option<Grid>,
        #[arg(long)]
        restarts: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Check the closed forms against the truncated Fock-space computation
    Verify {
        /// Largest squeezing parameter drawn
        #[arg(long)]
        gmax: Option<f64>,
        /// Photon-number truncation per mode
        #[arg(long)]
        nmax: Option<usize>,
        /// Random parameter draws on top of three corner cases
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
    },
}

#[derive(Debug, Args)]
struct DetectorFlags {
    /// Detection efficiency
    #[arg(long)]
    eta: Option<f64>,
    /// Dark-count probability
    #[arg(long)]
    pdc: Option<f64>,
}

#[derive(Debug, Args)]
struct SourceFlags {
    /// Mode count: an integer or `poisson`
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    gbar: Option<f64>,
    /// Total intensity of the first process (Poisson limit)
    #[arg(long)]
    gamma: Option<f64>,
    /// Total intensity of the second process (Poisson limit)
    #[arg(long)]
    gamma_bar: Option<f64>,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Parameter file of `key = value` lines; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (report, parameter file or CSV, depending on the subcommand)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

struct Assign(Vec<(&'static str, String)>);

impl Assign {
    fn opt(&mut self, key: &'static str, v: Option<impl ToString>) {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
    }

    fn flag(&mut self, key: &'static str, set: bool) {
        if set {
            self.0.push((key, "true".into()));
        }
    }
}

impl Cli {
    fn into_spec(self) -> CliResult<RunSpec> {
        let mut a = Assign(Vec::new());
        let mut grid = None;
        let (command, run) = match self.command {
            CliCommand::Eval { detectors, source, binning, run } => {
                a.opt("eta", detectors.eta);
                a.opt("p_dc", detectors.pdc);
                a.opt("modes", source.modes);
                a.opt("g", source.g);
                a.opt("g_bar", source.gbar);
                a.opt("gamma", source.gamma);
                a.opt("gamma_bar", source.gamma_bar);
                a.opt("binning", binning);
                (Command::Eval, run)
            }
            CliCommand::Optimize { detectors, modes, single_mode, equal_squeezing, binning, restarts, run } => {
                a.opt("eta", detectors.eta);
                a.opt("p_dc", detectors.pdc);
                a.opt("modes", modes);
                a.flag("single_mode", single_mode);
                a.flag("equal_squeezing", equal_squeezing);
                a.opt("binning", binning);
                a.opt("restarts", restarts);
                (Command::Optimize, run)
            }
            CliCommand::Curve { pdc, grid: g, restarts, run } => {
                a.opt("p_dc", pdc);
                a.opt("restarts", restarts);
                grid = g;
                (Command::Curve, run)
            }
            CliCommand::Verify { gmax, nmax, samples, run } => {
                a.opt("g_max", gmax);
                a.opt("n_max", nmax);
                a.opt("samples", samples);
                (Command::Verify, run)
            }
        };
        let mut spec = RunSpec::new(command);
        if let Some(path) = &run.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            spec.assignments = parse_config(&text)?;
        }
        for (k, v) in a.0 {
            spec.assignments.insert(k.to_string(), v);
        }
        spec.seed = run.seed;
        spec.out = run.out;
        spec.grid = grid;
        if let Some(f) = run.format {
            spec.format = f;
        }
        Ok(spec)
    }
}

/// Typed access to parameter assignments.
struct Params<'a>(&'a BTreeMap<String, String>);

impl Params<'_> {
    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::field(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    fn require<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("missing field `{key}`")))
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    fn reject(&self, key: &str, why: &str) -> CliResult<()> {
        match self.0.contains_key(key) {
            true => Err(CliError::field(key, why)),
            false => Ok(()),
        }
    }
}

/// Experiment configuration and optional fixed binning from assignments.
/// Analyser angles and phases default to zero.
pub fn experiment_from(assignments: &BTreeMap<String, String>) -> CliResult<(ExperimentConfig, Option<BinningStrategy>)> {
    let p = Params(assignments);
    let detectors = DetectorParams::new(p.require("eta")?, p.require("p_dc")?);
    let source = match p.require::<ModeSpec>("modes")? {
        ModeSpec::Finite(n) => {
            p.reject("gamma", "only used with `modes = poisson`")?;
            p.reject("gamma_bar", "only used with `modes = poisson`")?;
            SourceParams::finite(p.require("g")?, p.require("g_bar")?, n)
        }
        ModeSpec::Poisson => {
            p.reject("g", "not used with `modes = poisson`; give `gamma`")?;
            p.reject("g_bar", "not used with `modes = poisson`; give `gamma_bar`")?;
            SourceParams::poisson(p.require("gamma")?, p.require("gamma_bar")?)
        }
        ModeSpec::Free => return Err(CliError::field("modes", "`free` is only accepted by optimize")),
    };
    let mut settings = [MeasurementSetting::default(); 4];
    for (s, (angle, phase)) in settings.iter_mut().zip(SETTING_KEYS) {
        *s = MeasurementSetting::new(p.get(angle)?.unwrap_or(0.0), p.get(phase)?.unwrap_or(0.0));
    }
    let config = ExperimentConfig {
        source,
        detectors,
        alice_settings: [settings[0], settings[1]],
        bob_settings: [settings[2], settings[3]],
    };
    config.validate()?;
    let binning = p.get::<BinningSpec>("binning")?.and_then(|b| b.0);
    Ok((config, binning))
}

/// Reusable parameter file at full precision; `eval --config` on it
/// reproduces the configuration exactly.
pub fn parameter_file(config: &ExperimentConfig, binning: BinningStrategy) -> String {
    let mut s = format!("eta = {}\np_dc = {}\n", config.detectors.eta, config.detectors.p_dc);
    match config.source {
        SourceParams::Finite { g, g_bar, modes } => s += &format!("modes = {modes}\ng = {g}\ng_bar = {g_bar}\n"),
        SourceParams::PoissonLimit { gamma, gamma_bar } => {
            s += &format!("modes = poisson\ngamma = {gamma}\ngamma_bar = {gamma_bar}\n")
        }
    }
    let settings = [config.alice_settings[0], config.alice_settings[1], config.bob_settings[0], config.bob_settings[1]];
    for (m, (angle, phase)) in settings.iter().zip(SETTING_KEYS) {
        s += &format!("{angle} = {}\n{phase} = {}\n", m.angle(), m.phase());
    }
    s += &format!("binning = {}\n", binning.index());
    s
}

/// `x` with nine significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.8}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

fn cell_label(config: &ExperimentConfig) -> String {
    match config.source {
        SourceParams::Finite { modes, .. } => modes.to_string(),
        SourceParams::PoissonLimit { .. } => "poisson".into(),
    }
}

type Rows = Vec<(String, String)>;

fn chsh_rows(rows: &mut Rows, r: &ChshResult) {
    rows.push(("S".into(), sig9(r.s)));
    rows.push(("CH".into(), sig9(r.ch())));
    rows.push(("binning".into(), r.binning.index().to_string()));
    rows.push(("binning_maps".into(), r.binning.to_string()));
    for x in 0..2 {
        for y in 0..2 {
            rows.push((format!("E_x{x}_y{y}"), sig9(r.correlators[x][y])));
        }
    }
}

fn source_rows(rows: &mut Rows, config: &ExperimentConfig) {
    let (a, b) = config.source.strengths();
    let names = if config.source.is_poisson() { ("gamma", "gamma_bar") } else { ("g", "g_bar") };
    rows.push(("modes".into(), cell_label(config)));
    rows.push((names.0.into(), sig9(a)));
    rows.push((names.1.into(), sig9(b)));
}

fn write_rows(w: &mut dyn Write, format: Format, rows: &Rows) -> io::Result<()> {
    match format {
        Format::Text => rows.iter().try_for_each(|(k, v)| writeln!(w, "{k} = {v}")),
        Format::Csv => {
            writeln!(w, "quantity,value")?;
            rows.iter().try_for_each(|(k, v)| writeln!(w, "{k},{v}"))
        }
    }
}

/// Write to `--out` when given, else to `stdout`.
fn emit(spec: &RunSpec, stdout: &mut dyn Write, body: &[u8]) -> CliResult<()> {
    match &spec.out {
        Some(path) => std::fs::write(path, body).map_err(|e| CliError::io(path, e)),
        None => stdout.write_all(body).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn cmd_eval(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<i32> {
    let (config, binning) = experiment_from(&spec.assignments)?;
    let validated = config.validate()?;
    let result = match binning {
        Some(b) => chsh(&validated, b)?,
        None => best_binning(&validated)?.1,
    };
    let dists = all_distributions(&validated)?;
    let mut rows = Rows::new();
    chsh_rows(&mut rows, &result);
    source_rows(&mut rows, &config);
    for (x, row) in dists.iter().enumerate() {
        for (y, d) in row.iter().enumerate() {
            for c in ClickPattern::all() {
                rows.push((format!("p_x{x}_y{y}_{c}"), sig9(d.get(c))));
            }
        }
    }
    let mut body = Vec::new();
    if spec.format == Format::Text {
        body.extend_from_slice(
            b"# outcome labels alice|bob: nc no click, c_ first detector only, _c orthogonal only, cc both\n",
        );
    }
    write_rows(&mut body, spec.format, &rows).expect("in-memory write");
    emit(spec, stdout, &body)?;
    Ok(EXIT_OK)
}

fn problem_from(spec: &RunSpec, detectors: DetectorParams, policy: ModePolicy) -> CliResult<OptimizationProblem> {
    let p = Params(&spec.assignments);
    let mut problem = OptimizationProblem::new(detectors, policy);
    problem.seed = spec.seed;
    if let Some(r) = p.get::<usize>("restarts")? {
        if r == 0 {
            return Err(CliError::field("restarts", "must be at least 1"));
        }
        problem.restarts = r;
    }
    Ok(problem)
}

fn optimize_problem(spec: &RunSpec) -> CliResult<OptimizationProblem> {
    let p = Params(&spec.assignments);
    let detectors = DetectorParams::new(p.require("eta")?, p.get("p_dc")?.unwrap_or(0.0));
    let policy = match (p.flag("single_mode")?, p.get::<ModeSpec>("modes")?) {
        (true, None | Some(ModeSpec::Finite(1))) => ModePolicy::Fixed(1),
        (true, Some(_)) => return Err(CliError::field("single_mode", "conflicts with the requested `modes`")),
        (false, None | Some(ModeSpec::Free)) => ModePolicy::Free,
        (false, Some(ModeSpec::Finite(n))) => ModePolicy::Fixed(n),
        (false, Some(ModeSpec::Poisson)) => ModePolicy::PoissonLimit,
    };
    let mut problem = problem_from(spec, detectors, policy)?;
    problem.force_equal_squeezing = p.flag("equal_squeezing")?;
    problem.fixed_binning = p.get::<BinningSpec>("binning")?.and_then(|b| b.0);
    problem.validate()?;
    Ok(problem)
}

fn optimization_rows(r: &OptimizationResult) -> Rows {
    let mut rows = Rows::new();
    chsh_rows(&mut rows, &r.chsh);
    source_rows(&mut rows, &r.config);
    rows.push(("squeezing_ratio".into(), sig9(r.squeezing_ratio())));
    rows.push(("converged".into(), r.converged.to_string()));
    if !r.converged {
        rows.push(("warning".into(), "winning search hit its evaluation budget; best-so-far reported".into()));
    }
    rows.push(("converged_starts".into(), r.converged_starts.to_string()));
    rows.push(("searches".into(), r.restarts.to_string()));
    rows.push(("evaluations".into(), r.evaluations.to_string()));
    for c in &r.cells {
        let key = match c.cell {
            Cell::Finite(n) => format!("abs_S_N{n}"),
            Cell::Poisson => "abs_S_poisson".into(),
        };
        rows.push((key, sig9(c.abs_s)));
    }
    rows
}

fn cmd_optimize(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<i32> {
    let problem = optimize_problem(spec)?;
    let r = optimize(&problem)?;
    let params = parameter_file(&r.config, r.binning);
    let mut rows = optimization_rows(&r);
    let mut body = Vec::new();
    if let Some(path) = &spec.out {
        std::fs::write(path, &params).map_err(|e| CliError::io(path, e))?;
        rows.push(("params_file".into(), path.display().to_string()));
    }
    write_rows(&mut body, spec.format, &rows).expect("in-memory write");
    if spec.format == Format::Text {
        body.extend_from_slice(b"# parameters\n");
        body.extend_from_slice(params.as_bytes());
    }
    stdout.write_all(&body).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    Ok(EXIT_OK)
}

pub const CURVE_HEADER: &str =
    "eta,S_free,S_single_mode,S_single_mode_equal_sq,g,g_bar,N_or_limit,squeezing_ratio,binning,converged";

fn curve_row(free: &CurvePoint, single: &CurvePoint, equal: &CurvePoint) -> Vec<String> {
    let (a, b) = free.result.config.source.strengths();
    let converged = free.result.converged && single.result.converged && equal.result.converged;
    vec![
        sig9(free.eta),
        sig9(free.result.s),
        sig9(single.result.s),
        sig9(equal.result.s),
        sig9(a),
        sig9(b),
        cell_label(&free.result.config),
        sig9(free.result.squeezing_ratio()),
        free.result.binning.index().to_string(),
        converged.to_string(),
    ]
}

fn cmd_curve(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<i32> {
    let grid = spec.grid.ok_or_else(|| CliError::Usage("curve needs `--grid start:end:points`".into()))?;
    let p = Params(&spec.assignments);
    let detectors = DetectorParams::new(1.0, p.get("p_dc")?.unwrap_or(0.0));
    let etas = grid.values();
    let template = |policy, equal| -> CliResult<OptimizationProblem> {
        let mut t = problem_from(spec, detectors, policy)?;
        t.force_equal_squeezing = equal;
        Ok(t)
    };
    let free = efficiency_curve(&template(ModePolicy::Free, false)?, &etas)?;
    let single = efficiency_curve(&template(ModePolicy::Fixed(1), false)?, &etas)?;
    let equal = efficiency_curve(&template(ModePolicy::Fixed(1), true)?, &etas)?;
    let sep = if spec.format == Format::Csv { "," } else { " " };
    let mut body = format!("{}\n", CURVE_HEADER.replace(',', sep));
    for i in 0..etas.len() {
        body += &curve_row(&free[i], &single[i], &equal[i]).join(sep);
        body.push('\n');
    }
    emit(spec, stdout, body.as_bytes())?;
    Ok(EXIT_OK)
}

fn verify_options(spec: &RunSpec) -> CliResult<VerifyOptions> {
    let p = Params(&spec.assignments);
    let mut opts = VerifyOptions { seed: spec.seed, ..VerifyOptions::default() };
    if let Some(g) = p.get::<f64>("g_max")? {
        if !(g.is_finite() && g >= 0.0) {
            return Err(CliError::field("g_max", "must be finite and non-negative"));
        }
        opts.g_max = g;
    }
    if let Some(n) = p.get("n_max")? {
        opts.n_max = n;
    }
    if let Some(n) = p.get("samples")? {
        opts.samples = n;
    }
    Ok(opts)
}

fn cmd_verify(spec: &RunSpec, closed_form: &ClosedForm, stdout: &mut dyn Write) -> CliResult<i32> {
    let report = verify_with(&verify_options(spec)?, closed_form)?;
    let body = match spec.format {
        Format::Text => format!("{report}\n"),
        Format::Csv => {
            let mut s = String::from("group,max_deviation,comparisons,status\n");
            for g in &report.groups {
                let status = if g.max_deviation <= report.tolerance { "PASS" } else { "FAIL" };
                s += &format!("{},{:.3e},{},{status}\n", g.name, g.max_deviation, g.comparisons);
            }
            s
        }
    };
    emit(spec, stdout, body.as_bytes())?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

/// Run `spec` with the library's closed forms.
pub fn execute(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<i32> {
    execute_with(spec, &closed_form_raw, stdout)
}

/// Run `spec`; `verify` checks `closed_form` instead of the built-in one.
pub fn execute_with(spec: &RunSpec, closed_form: &ClosedForm, stdout: &mut dyn Write) -> CliResult<i32> {
    match spec.command {
        Command::Eval => cmd_eval(spec, stdout),
        Command::Optimize => cmd_optimize(spec, stdout),
        Command::Curve => cmd_curve(spec, stdout),
        Command::Verify => cmd_verify(spec, closed_form, stdout),
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = RunSpec::from_args(args).and_then(|spec| execute(&spec, stdout));
    match outcome {
        Ok(code) => code,
        Err(CliError::Clap(e)) => {
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{e}");
            e.exit_code()
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

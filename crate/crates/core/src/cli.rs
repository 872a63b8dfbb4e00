//! Command-line front end: flat key=value configs, named experiments and
//! CSV/JSON output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{
    classify_regime, current_general, forward_reverse_currents, rectification, CurrentReport, Level,
    Rectification, Regime, ZERO_CURRENT_TOLERANCE,
};
use crate::array::{self, HostRule};
use crate::error::Error;
use crate::fock::{self, FockConfig};
use crate::model::{bose_occupation, ArraySystem, AtomSpec, ReservoirSpec, TwoCavitySystem};
use crate::moments;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_CROSSCHECK: i32 = 5;

/// Default relative tolerance between the closed forms and the moment solver.
pub const DEFAULT_MOMENTS_TOLERANCE: f64 = 1e-10;
/// Default relative tolerance between the moment solver and the Fock oracle.
pub const DEFAULT_ORACLE_TOLERANCE: f64 = 1e-6;

pub const CSV_HEADER: &str = "x,sigma_z,label,i_left,i_right,i_nd,i_coh,i_ratio,alpha,rectification,regime,i_forward,i_reverse,occupation,residual";

const KNOWN_KEYS: &[&str] = &[
    "omega_l",
    "omega_r",
    "j",
    "gamma_l",
    "gamma_r",
    "nbar_l",
    "nbar_r",
    "temp_l",
    "temp_r",
    "atom",
    "chi",
    "sigma_z",
    "omega0",
    "sites",
    "host",
    "sweep.var",
    "sweep.from",
    "sweep.to",
    "sweep.step",
    "alphas",
    "oracle.n_max",
    "oracle.tail_bound",
    "crosscheck.moments_tol",
    "crosscheck.oracle_tol",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] Error),

    #[error("crosscheck failed: {0}")]
    Crosscheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Model(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Model(_) => EXIT_SOLVER,
            CliError::Crosscheck(_) => EXIT_CROSSCHECK,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "cavity-heat", version, about = "Steady-state heat currents through coupled cavities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a named experiment and write its rows to a file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Flat key = value parameter file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config entry, e.g. --set chi=0.1 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    GammaSweep,
    ChiSweep,
    CurrentDecomposition,
    RectificationSweep,
    SizeScan,
    Profile,
    RegimeTable,
    OracleCrosscheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Raw key = value entries with later assignments overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set(line).map_err(|e| config_error(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| config_error(format!("expected key=value, got `{assignment}`")))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_error(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| config_error(format!("`{key}` must be a number, got `{v}`")))
            })
            .transpose()
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| config_error(format!("`{key}` must be a non-negative integer, got `{v}`")))
            })
            .transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.get(key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(config_error(format!("`{key}` must be true or false, got `{v}`"))),
            })
            .transpose()
    }
}

/// Base physical parameters, all as ratios to the reference frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Parameters {
    pub omega_l: f64,
    pub omega_r: f64,
    pub coupling: f64,
    pub gamma_l: Option<f64>,
    pub gamma_r: Option<f64>,
    pub nbar_l: f64,
    pub nbar_r: f64,
    pub atom: bool,
    pub chi: f64,
    pub sigma_z: f64,
    pub omega0: f64,
}

impl Parameters {
    fn from_config(cfg: &Config) -> Result<Self, CliError> {
        let omega_l = cfg.f64("omega_l")?.unwrap_or(1.0);
        let omega_r = cfg.f64("omega_r")?.unwrap_or(omega_l);
        let coupling = cfg.f64("j")?.ok_or_else(|| config_error("missing key `j`"))?;
        let nbar_l = occupation(cfg, "nbar_l", "temp_l", omega_l)?;
        let nbar_r = occupation(cfg, "nbar_r", "temp_r", omega_r)?;
        let chi = cfg.f64("chi")?;
        let atom = cfg.bool("atom")?.unwrap_or(chi.is_some());
        let sigma_z = cfg.f64("sigma_z")?;
        if atom && sigma_z.is_none() {
            return Err(config_error("an atom needs `sigma_z`"));
        }
        Ok(Self {
            omega_l,
            omega_r,
            coupling,
            gamma_l: cfg.f64("gamma_l")?,
            gamma_r: cfg.f64("gamma_r")?,
            nbar_l,
            nbar_r,
            atom,
            chi: chi.unwrap_or(0.0),
            sigma_z: sigma_z.unwrap_or(0.0),
            omega0: cfg.f64("omega0")?.unwrap_or(1.0),
        })
    }

    fn atom_spec(&self, host: usize) -> Option<AtomSpec> {
        self.atom.then(|| AtomSpec::new(self.omega0, self.chi, self.sigma_z, host))
    }

    fn rate(value: Option<f64>, key: &str) -> Result<f64, CliError> {
        value.ok_or_else(|| config_error(format!("missing key `{key}`")))
    }

    /// The two-cavity system, validated.
    pub fn two_cavity(&self) -> Result<TwoCavitySystem, CliError> {
        let sys = TwoCavitySystem {
            omega_left: self.omega_l,
            omega_right: self.omega_r,
            coupling: self.coupling,
            left: ReservoirSpec::new(Self::rate(self.gamma_l, "gamma_l")?, self.nbar_l),
            right: ReservoirSpec::new(Self::rate(self.gamma_r, "gamma_r")?, self.nbar_r),
            atom: self.atom.then(|| AtomSpec::in_right_cavity(self.omega0, self.chi, self.sigma_z)),
        };
        sys.validate().map_err(Error::from)?;
        Ok(sys)
    }

    /// A uniform chain at the left-cavity frequency; the right frequency must agree.
    pub fn array(&self, sites: usize, host: usize) -> Result<ArraySystem, CliError> {
        if self.omega_r != self.omega_l {
            return Err(config_error("an array is uniform: `omega_r` must equal `omega_l`"));
        }
        let sys = ArraySystem {
            sites,
            omega: self.omega_l,
            coupling: self.coupling,
            left: ReservoirSpec::new(Self::rate(self.gamma_l, "gamma_l")?, self.nbar_l),
            right: ReservoirSpec::new(Self::rate(self.gamma_r, "gamma_r")?, self.nbar_r),
            atom: self.atom_spec(host),
        };
        sys.validate().map_err(Error::from)?;
        Ok(sys)
    }
}

fn occupation(cfg: &Config, nbar_key: &str, temp_key: &str, omega: f64) -> Result<f64, CliError> {
    match (cfg.f64(nbar_key)?, cfg.f64(temp_key)?) {
        (Some(_), Some(_)) => Err(config_error(format!("give either `{nbar_key}` or `{temp_key}`, not both"))),
        (Some(n), None) => Ok(n),
        (None, Some(t)) => Ok(bose_occupation(omega, t)?),
        (None, None) => Err(config_error(format!("missing key `{nbar_key}` (or `{temp_key}`)"))),
    }
}

/// The quantity varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    /// Γ_L = Γ_R = x.
    Gamma,
    GammaL,
    Chi,
    Sites,
}

impl SweepVar {
    fn name(self) -> &'static str {
        match self {
            SweepVar::Gamma => "gamma",
            SweepVar::GammaL => "gamma_l",
            SweepVar::Chi => "chi",
            SweepVar::Sites => "sites",
        }
    }

    fn apply(self, p: &Parameters, x: f64) -> Parameters {
        let mut p = *p;
        match self {
            SweepVar::Gamma => {
                p.gamma_l = Some(x);
                p.gamma_r = Some(x);
            }
            SweepVar::GammaL => p.gamma_l = Some(x),
            SweepVar::Chi => p.chi = x,
            SweepVar::Sites => {}
        }
        p
    }
}

/// A uniform grid from `from` to `to` (inclusive, up to rounding).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRange {
    pub var: SweepVar,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl SweepRange {
    pub fn validate(&self) -> Result<(), CliError> {
        if !self.from.is_finite() || !self.to.is_finite() {
            return Err(config_error("sweep bounds must be finite"));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(config_error("sweep.step must be positive"));
        }
        if self.len() < 2 {
            return Err(config_error("a sweep needs at least 2 points"));
        }
        if self.var == SweepVar::Sites && [self.from, self.to, self.step].iter().any(|v| v.fract() != 0.0) {
            return Err(config_error("a size sweep needs integer bounds and step"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.to < self.from {
            return 0;
        }
        ((self.to - self.from) / self.step * (1.0 + 1e-12)).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points computed as from + k·step, without accumulated rounding.
    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.from + k as f64 * self.step).collect()
    }
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub experiment: Experiment,
    pub params: Parameters,
    pub sweep: Option<SweepRange>,
    pub sites: Option<usize>,
    #[serde(skip)]
    pub host: HostRule,
    pub alphas: Vec<f64>,
    pub oracle_n_max: Option<usize>,
    pub oracle_tail_bound: Option<f64>,
    pub moments_tolerance: f64,
    pub oracle_tolerance: f64,
}

impl SweepSpec {
    pub fn from_config(experiment: Experiment, cfg: &Config) -> Result<Self, CliError> {
        let params = Parameters::from_config(cfg)?;
        let sweep = match sweep_var(experiment, cfg.get("sweep.var"))? {
            Some(var) => {
                let bound = |key: &str| cfg.f64(key)?.ok_or_else(|| config_error(format!("missing key `{key}`")));
                let range = SweepRange {
                    var,
                    from: bound("sweep.from")?,
                    to: bound("sweep.to")?,
                    step: bound("sweep.step")?,
                };
                range.validate()?;
                Some(range)
            }
            None => None,
        };
        let host = match cfg.get("host") {
            None | Some("last") => HostRule::LastCavity,
            Some(_) => HostRule::Fixed(cfg.usize("host")?.unwrap_or_default()),
        };
        let alphas = match cfg.get("alphas") {
            None => vec![2.0, 1.0, 0.5],
            Some(list) => list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| config_error(format!("`alphas` entry `{v}` is not a number")))
                })
                .collect::<Result<_, _>>()?,
        };
        let spec = Self {
            experiment,
            params,
            sweep,
            sites: cfg.usize("sites")?,
            host,
            alphas,
            oracle_n_max: cfg.usize("oracle.n_max")?,
            oracle_tail_bound: cfg.f64("oracle.tail_bound")?,
            moments_tolerance: cfg.f64("crosscheck.moments_tol")?.unwrap_or(DEFAULT_MOMENTS_TOLERANCE),
            oracle_tolerance: cfg.f64("crosscheck.oracle_tol")?.unwrap_or(DEFAULT_ORACLE_TOLERANCE),
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.experiment == Experiment::Profile && self.sites.is_none() {
            return Err(config_error("profile needs `sites`"));
        }
        if matches!(self.experiment, Experiment::RegimeTable | Experiment::RectificationSweep) && !self.params.atom {
            return Err(config_error(format!("{:?} needs an atom", self.experiment)));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(config_error("`alphas` must be positive"));
        }
        for (key, tol) in [
            ("crosscheck.moments_tol", self.moments_tolerance),
            ("crosscheck.oracle_tol", self.oracle_tolerance),
        ] {
            if !(tol > 0.0) || !tol.is_finite() {
                return Err(config_error(format!("`{key}` must be positive")));
            }
        }
        Ok(())
    }

    fn oracle_config(&self, sys: &TwoCavitySystem) -> FockConfig {
        let mut cfg = FockConfig::for_system(sys);
        if let Some(bound) = self.oracle_tail_bound {
            cfg.tail_bound = bound;
        }
        if let Some(n) = self.oracle_n_max {
            cfg = cfg.with_n_max(n);
        }
        cfg
    }
}

fn sweep_var(experiment: Experiment, given: Option<&str>) -> Result<Option<SweepVar>, CliError> {
    let (default, allowed): (Option<SweepVar>, &[SweepVar]) = match experiment {
        Experiment::GammaSweep => (Some(SweepVar::Gamma), &[SweepVar::Gamma]),
        Experiment::ChiSweep | Experiment::CurrentDecomposition => (Some(SweepVar::Chi), &[SweepVar::Chi]),
        Experiment::RectificationSweep => (Some(SweepVar::GammaL), &[SweepVar::GammaL, SweepVar::Chi]),
        Experiment::SizeScan => (Some(SweepVar::Sites), &[SweepVar::Sites]),
        Experiment::Profile | Experiment::RegimeTable | Experiment::OracleCrosscheck => (None, &[]),
    };
    match given {
        None => Ok(default),
        Some(name) => allowed
            .iter()
            .copied()
            .find(|v| v.name() == name)
            .map(Some)
            .ok_or_else(|| config_error(format!("sweep.var `{name}` is not valid for {experiment:?}"))),
    }
}

/// One output row; fields that do not apply to an experiment stay empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub x: f64,
    pub sigma_z: Option<f64>,
    pub label: Option<String>,
    pub i_left: Option<f64>,
    pub i_right: Option<f64>,
    pub i_nd: Option<f64>,
    pub i_coh: Option<f64>,
    pub i_ratio: Option<f64>,
    pub alpha: Option<f64>,
    pub rectification: Option<Rectification>,
    pub regime: Option<Regime>,
    pub i_forward: Option<f64>,
    pub i_reverse: Option<f64>,
    pub occupation: Option<f64>,
    pub residual: f64,
}

impl ResultRow {
    fn empty(x: f64, residual: f64) -> Self {
        Self {
            x,
            sigma_z: None,
            label: None,
            i_left: None,
            i_right: None,
            i_nd: None,
            i_coh: None,
            i_ratio: None,
            alpha: None,
            rectification: None,
            regime: None,
            i_forward: None,
            i_reverse: None,
            occupation: None,
            residual,
        }
    }

    fn from_report(x: f64, sys: &TwoCavitySystem, label: &str, report: &CurrentReport, residual: f64) -> Self {
        Self {
            sigma_z: sys.atom.map(|a| a.sigma_z),
            label: Some(label.to_string()),
            i_left: Some(report.i_left),
            i_right: Some(report.i_right),
            i_nd: Some(report.i_nd),
            i_coh: Some(report.i_coh),
            alpha: report.alpha,
            regime: report.regime,
            ..Self::empty(x, residual)
        }
    }

    fn csv_line(&self) -> String {
        let num = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
        [
            format!("{:.16e}", self.x),
            num(self.sigma_z),
            self.label.clone().unwrap_or_default(),
            num(self.i_left),
            num(self.i_right),
            num(self.i_nd),
            num(self.i_coh),
            num(self.i_ratio),
            num(self.alpha),
            self.rectification.map(|r| r.to_string()).unwrap_or_default(),
            self.regime.map(|r| r.to_string()).unwrap_or_default(),
            num(self.i_forward),
            num(self.i_reverse),
            num(self.occupation),
            format!("{:.16e}", self.residual),
        ]
        .join(",")
    }
}

/// Currents from all three paths at one two-cavity point.
#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckReport {
    pub analytic: CurrentReport,
    pub moments: CurrentReport,
    pub oracle: CurrentReport,
    pub moments_residual: f64,
    pub oracle_residual: f64,
    pub oracle_n_max: usize,
    /// Largest relative deviation between analytic and moment currents.
    pub moments_deviation: f64,
    /// Largest relative deviation between moment and oracle currents.
    pub oracle_deviation: f64,
    pub moments_tolerance: f64,
    pub oracle_tolerance: f64,
}

impl CrosscheckReport {
    pub fn max_deviation(&self) -> f64 {
        self.moments_deviation.max(self.oracle_deviation)
    }

    pub fn passed(&self) -> bool {
        self.moments_deviation <= self.moments_tolerance && self.oracle_deviation <= self.oracle_tolerance
    }

    pub fn summary(&self) -> String {
        format!(
            "I_L analytic {:.16e} moments {:.16e} oracle {:.16e} (n_max {}); analytic vs moments {:.3e} (tol {:.1e}), moments vs oracle {:.3e} (tol {:.1e})",
            self.analytic.i_left,
            self.moments.i_left,
            self.oracle.i_left,
            self.oracle_n_max,
            self.moments_deviation,
            self.moments_tolerance,
            self.oracle_deviation,
            self.oracle_tolerance,
        )
    }
}

/// |a − b| / max(|a|, |b|), with two values that both lie within `zero_band`
/// of zero counted as agreeing.
pub fn relative_deviation(a: f64, b: f64, zero_band: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale <= zero_band {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn report_deviation(a: &CurrentReport, b: &CurrentReport, zero_band: f64) -> f64 {
    relative_deviation(a.i_left, b.i_left, zero_band).max(relative_deviation(a.i_right, b.i_right, zero_band))
}

/// Solves one two-cavity point on all three paths. Currents within
/// tolerance·ω_L² of zero on both sides of a comparison count as zero, so
/// an insulating point passes when every path reports a vanishing current.
pub fn crosscheck(spec: &SweepSpec) -> Result<CrosscheckReport, CliError> {
    let sys = spec.params.two_cavity()?;
    let analytic = current_general(&sys);
    let (moments, moments_residual) = moment_currents(&sys)?;
    let sol = fock::solve_oracle(&sys, &spec.oracle_config(&sys))?;
    let oracle = fock::oracle_currents(&sys, &sol.rho);
    let unit = sys.omega_left * sys.omega_left;
    Ok(CrosscheckReport {
        moments_deviation: report_deviation(&analytic, &moments, ZERO_CURRENT_TOLERANCE * unit),
        oracle_deviation: report_deviation(&moments, &oracle, spec.oracle_tolerance * unit),
        analytic,
        moments,
        oracle,
        moments_residual,
        oracle_residual: sol.residual,
        oracle_n_max: sol.n_max,
        moments_tolerance: spec.moments_tolerance,
        oracle_tolerance: spec.oracle_tolerance,
    })
}

fn moment_currents(sys: &TwoCavitySystem) -> Result<(CurrentReport, f64), CliError> {
    let v = moments::steady_state(sys)?;
    let residual = moments::generator_matrix(sys).relative_residual(&v);
    Ok((moments::currents_from_moments(sys, &v), residual))
}

fn moment_row(x: f64, sys: &TwoCavitySystem) -> Result<ResultRow, CliError> {
    let (report, residual) = moment_currents(sys)?;
    Ok(ResultRow::from_report(x, sys, "moments", &report, residual))
}

fn at_point(var: SweepVar, x: f64) -> impl Fn(CliError) -> CliError {
    move |e| match e {
        CliError::Model(e) => CliError::Model(Error::at(format!("{} = {x}", var.name()), e)),
        CliError::Config(msg) => CliError::Config(format!("at {} = {x}: {msg}", var.name())),
        other => other,
    }
}

/// Evaluates `point` over the sweep in parallel, keeping sweep order.
fn sweep_rows<F>(range: &SweepRange, point: F) -> Result<Vec<ResultRow>, CliError>
where
    F: Fn(f64) -> Result<ResultRow, CliError> + Sync,
{
    range
        .points()
        .par_iter()
        .map(|&x| point(x).map_err(at_point(range.var, x)))
        .collect()
}

/// Rows of one experiment plus, for crosschecks, the three-path report.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
    pub crosscheck: Option<CrosscheckReport>,
}

pub fn run_experiment(spec: &SweepSpec) -> Result<ExperimentOutput, CliError> {
    let p = &spec.params;
    let mut crosscheck_report = None;
    let rows = match spec.experiment {
        Experiment::GammaSweep | Experiment::CurrentDecomposition => {
            let range = spec.sweep.as_ref().expect("sweep experiments carry a range");
            sweep_rows(range, |x| moment_row(x, &range.var.apply(p, x).two_cavity()?))?
        }
        Experiment::ChiSweep => {
            let range = spec.sweep.as_ref().expect("sweep experiments carry a range");
            let reference = Parameters { chi: 0.0, ..*p }.two_cavity()?;
            let i0 = moment_currents(&reference)?.0.i_left;
            sweep_rows(range, |x| {
                let mut row = moment_row(x, &range.var.apply(p, x).two_cavity()?)?;
                row.i_ratio = (i0 != 0.0).then(|| row.i_left.unwrap_or_default() / i0);
                Ok(row)
            })?
        }
        Experiment::RectificationSweep => {
            let range = spec.sweep.as_ref().expect("sweep experiments carry a range");
            sweep_rows(range, |x| {
                let sys = range.var.apply(p, x).two_cavity()?;
                let mut row = moment_row(x, &sys)?;
                let (forward, reverse) = forward_reverse_currents(&sys)?;
                row.i_forward = Some(forward);
                row.i_reverse = Some(reverse);
                row.rectification = Some(rectification(&sys)?);
                Ok(row)
            })?
        }
        Experiment::SizeScan => {
            let range = spec.sweep.as_ref().expect("sweep experiments carry a range");
            let sizes: Vec<usize> = range.points().iter().map(|&n| n as usize).collect();
            let first = *sizes.first().expect("validated sweeps have points");
            let template = p.array(first, spec.host.host(first))?;
            for &n in &sizes {
                p.array(n, spec.host.host(n)).map_err(at_point(SweepVar::Sites, n as f64))?;
            }
            array::size_scan(&template, &sizes, spec.host)?
                .into_iter()
                .map(|r| ResultRow {
                    sigma_z: template.atom.map(|a| a.sigma_z),
                    label: Some("array".into()),
                    i_left: Some(r.i_left),
                    i_right: Some(r.i_right),
                    i_ratio: r.ratio,
                    ..ResultRow::empty(r.sites as f64, r.residual)
                })
                .collect()
        }
        Experiment::Profile => {
            let sites = spec.sites.expect("checked in SweepSpec");
            let sys = p.array(sites, spec.host.host(sites))?;
            let g = array::steady_state_matrix(&sys)?;
            let (i_left, i_right) = (array::array_current(&sys, &g), array::right_current(&sys, &g));
            array::occupation_profile(&g)
                .into_iter()
                .enumerate()
                .map(|(j, n)| ResultRow {
                    sigma_z: sys.atom.map(|a| a.sigma_z),
                    label: Some(format!("site{}", j + 1)),
                    i_left: Some(i_left),
                    i_right: Some(i_right),
                    occupation: Some(n),
                    ..ResultRow::empty((j + 1) as f64, g.residual)
                })
                .collect()
        }
        Experiment::RegimeTable => regime_table(spec)?,
        Experiment::OracleCrosscheck => {
            let report = crosscheck(spec)?;
            let sys = p.two_cavity()?;
            let rows = vec![
                ResultRow::from_report(0.0, &sys, "analytic", &report.analytic, 0.0),
                ResultRow::from_report(0.0, &sys, "moments", &report.moments, report.moments_residual),
                ResultRow::from_report(0.0, &sys, "oracle", &report.oracle, report.oracle_residual),
            ];
            crosscheck_report = Some(report);
            rows
        }
    };
    Ok(ExperimentOutput {
        experiment: spec.experiment,
        rows,
        crosscheck: crosscheck_report,
    })
}

/// For each α, sets Γ_R = α·Γ_L(χ − ω_R)/ω_L and solves both atomic levels.
fn regime_table(spec: &SweepSpec) -> Result<Vec<ResultRow>, CliError> {
    let p = &spec.params;
    let gamma_l = Parameters::rate(p.gamma_l, "gamma_l")?;
    if !(p.chi > p.omega_r) {
        return Err(config_error("regime_table needs chi > omega_r"));
    }
    let cases: Vec<(f64, Level)> = spec
        .alphas
        .iter()
        .flat_map(|&a| [(a, Level::Excited), (a, Level::Ground)])
        .collect();
    cases
        .par_iter()
        .map(|&(alpha, level)| {
            let gamma_r = alpha * gamma_l * (p.chi - p.omega_r) / p.omega_l;
            let sys = Parameters {
                gamma_r: Some(gamma_r),
                sigma_z: level.sigma_z(),
                ..*p
            }
            .two_cavity()?;
            let mut row = moment_row(alpha, &sys)?;
            row.label = Some(match level {
                Level::Excited => "excited".into(),
                Level::Ground => "ground".into(),
            });
            row.regime = Some(classify_regime(&sys)?.1);
            Ok(row)
        })
        .collect()
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.csv_line());
    }
    out
}

pub fn to_json(output: &ExperimentOutput) -> String {
    #[derive(Serialize)]
    struct Document<'a> {
        experiment: Experiment,
        rows: &'a [ResultRow],
        #[serde(skip_serializing_if = "Option::is_none")]
        crosscheck: Option<&'a CrosscheckReport>,
    }
    let doc = Document {
        experiment: output.experiment,
        rows: &output.rows,
        crosscheck: output.crosscheck.as_ref(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("rows serialize");
    text.push('\n');
    text
}

/// Runs one `run` invocation end to end: load, validate, solve, write. A
/// failed crosscheck still writes its rows before reporting the failure.
pub fn run(args: &RunArgs) -> Result<ExperimentOutput, CliError> {
    let mut cfg = Config::load(&args.config)?;
    for assignment in &args.overrides {
        cfg.set(assignment)?;
    }
    let spec = SweepSpec::from_config(args.experiment, &cfg)?;
    let output = run_experiment(&spec)?;
    let text = match args.format {
        Format::Csv => to_csv(&output.rows),
        Format::Json => to_json(&output),
    };
    fs::write(&args.out, text).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    if let Some(report) = &output.crosscheck {
        log::info!("{}", report.summary());
        if !report.passed() {
            return Err(CliError::Crosscheck(report.summary()));
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = "j = 0.02\nchi = 0.05\nsigma_z = 1\nnbar_l = 0.5\nnbar_r = 0\nsweep.from = 0.001\nsweep.to = 0.2\nsweep.step = 0.001\n";

    #[test]
    fn config_parses_comments_and_overrides() {
        let mut cfg = Config::parse("# header\nj = 0.02 # inline\n\nchi=0.05\n").unwrap();
        assert_eq!(cfg.get("j"), Some("0.02"));
        cfg.set("chi = 0.1").unwrap();
        assert_eq!(cfg.get("chi"), Some("0.1"));
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(matches!(Config::parse("jj = 1"), Err(CliError::Config(_))));
        assert!(matches!(Config::parse("j 1"), Err(CliError::Config(_))));
        let cfg = Config::parse("j = abc\nnbar_l = 0.5\nnbar_r = 0").unwrap();
        let err = SweepSpec::from_config(Experiment::Profile, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn sweep_grid_is_inclusive_and_validated() {
        let r = SweepRange {
            var: SweepVar::Chi,
            from: 0.0,
            to: 2.0,
            step: 0.01,
        };
        assert_eq!(r.len(), 201);
        assert_eq!(*r.points().last().unwrap(), 2.0);
        for bad in [
            SweepRange { step: 0.0, ..r },
            SweepRange { to: f64::NAN, ..r },
            SweepRange { to: 0.0, ..r },
            SweepRange { from: 1.0, to: 0.0, ..r },
        ] {
            assert!(bad.validate().is_err());
        }
        let sizes = SweepRange {
            var: SweepVar::Sites,
            from: 2.0,
            to: 3.5,
            step: 1.0,
        };
        assert!(sizes.validate().is_err());
    }

    #[test]
    fn sweep_var_must_suit_the_experiment() {
        let cfg = Config::parse(&format!("{FIG2}sweep.var = chi\n")).unwrap();
        assert!(SweepSpec::from_config(Experiment::GammaSweep, &cfg).is_err());
        let cfg = Config::parse(&format!("{FIG2}gamma_r = 0.2\nsweep.var = chi\n")).unwrap();
        assert!(SweepSpec::from_config(Experiment::RectificationSweep, &cfg).is_ok());
    }

    #[test]
    fn temperature_entry_converts_to_occupation() {
        let cfg = Config::parse("j = 0.02\ngamma_l = 0.1\ngamma_r = 0.1\ntemp_l = 2\nnbar_r = 0\n").unwrap();
        let p = Parameters::from_config(&cfg).unwrap();
        assert!((p.nbar_l - bose_occupation(1.0, 2.0).unwrap()).abs() < 1e-15);
        let both = Config::parse("j = 0.02\nnbar_l = 0.5\ntemp_l = 2\nnbar_r = 0\n").unwrap();
        assert!(Parameters::from_config(&both).is_err());
    }

    #[test]
    fn gamma_sweep_peaks_at_the_closed_form_rate() {
        let cfg = Config::parse(FIG2).unwrap();
        let spec = SweepSpec::from_config(Experiment::GammaSweep, &cfg).unwrap();
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out.rows.len(), 200);
        let best = out
            .rows
            .iter()
            .max_by(|a, b| a.i_left.unwrap().total_cmp(&b.i_left.unwrap()))
            .unwrap();
        let peak = (4.0f64 * 0.02 * 0.02 + 0.05 * 0.05).sqrt();
        assert!((best.x - peak).abs() <= 1e-3);
        assert!(out.rows.iter().all(|r| r.residual < moments::RESIDUAL_TOLERANCE));
    }

    #[test]
    fn csv_has_fixed_columns_and_empty_missing_fields() {
        let cfg = Config::parse(FIG2).unwrap();
        let spec = SweepSpec::from_config(Experiment::GammaSweep, &cfg).unwrap();
        let csv = to_csv(&run_experiment(&spec).unwrap().rows);
        let columns = CSV_HEADER.split(',').count();
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), columns);
        }
        let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first[9], "");
        assert_eq!(first[0], "1.0000000000000000e-3");
    }

    #[test]
    fn failing_point_is_named() {
        let cfg = Config::parse(
            "j = 0.05\ngamma_l = 0.1\ngamma_r = 0.03\nnbar_l = 0.5\nnbar_r = 0\nchi = 0\nsigma_z = -1\nsweep.from = -0.02\nsweep.to = 0.02\nsweep.step = 0.01\n",
        )
        .unwrap();
        let spec = SweepSpec::from_config(Experiment::ChiSweep, &cfg).unwrap();
        let err = run_experiment(&spec).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_VALIDATION);
        assert!(err.to_string().contains("chi = -0.02"), "{err}");
    }

    #[test]
    fn relative_deviation_treats_the_zero_band_as_agreement() {
        assert_eq!(relative_deviation(1e-9, -2e-9, 1e-6), 0.0);
        assert!((relative_deviation(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn regime_table_follows_the_sign_pattern() {
        let cfg = Config::parse("omega_r = 1\nj = 0.05\ngamma_l = 0.1\nnbar_l = 0.5\nnbar_r = 0\nchi = 1.3\nsigma_z = -1\n")
            .unwrap();
        let spec = SweepSpec::from_config(Experiment::RegimeTable, &cfg).unwrap();
        let rows = run_experiment(&spec).unwrap().rows;
        assert_eq!(rows.len(), 6);
        for row in &rows {
            let i = row.i_left.unwrap();
            match (row.label.as_deref().unwrap(), row.x) {
                ("excited", _) => assert!(i > 0.0),
                ("ground", a) if a > 1.0 => assert_eq!(row.regime, Some(Regime::Conducting)),
                ("ground", a) if a == 1.0 => assert_eq!(row.regime, Some(Regime::Insulating)),
                ("ground", _) => assert_eq!(row.regime, Some(Regime::Reversed)),
                _ => unreachable!(),
            }
        }
    }
}

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::demarcate::{Criterion, DemarcationConfig};
use crate::dynamics::Kernels;
use crate::error::{Error, Result};
use crate::estimate::{EstimationConfig, SolverConfig};
use crate::simulate::SimConfig;

/// A selector criterion or a baseline. Written `opt-D`, `hard`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Opt(Criterion),
    Baseline(BaselineMethod),
}

impl Method {
    pub fn all() -> Vec<Method> {
        Criterion::ALL
            .into_iter()
            .map(Method::Opt)
            .chain(BaselineMethod::ALL.into_iter().map(Method::Baseline))
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Opt(c) => write!(f, "opt-{c}"),
            Method::Baseline(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.get(..4) {
            Some(p) if p.eq_ignore_ascii_case("opt-") => Ok(Method::Opt(s[4..].parse()?)),
            _ => s.parse().map(Method::Baseline),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Presumed exogenous fraction.
    Gamma,
    /// Forecast lookahead in hours.
    Horizon,
    /// Training fraction of the stream.
    TrainSize,
    /// Mean of the exogenous marks (synthetic).
    Noise,
    /// Events per user (synthetic).
    SampleSize,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gamma" => Ok(SweepKind::Gamma),
            "horizon" => Ok(SweepKind::Horizon),
            "train_size" => Ok(SweepKind::TrainSize),
            "noise" => Ok(SweepKind::Noise),
            "sample_size" => Ok(SweepKind::SampleSize),
            _ => Err(Error::Parameter(format!("unknown sweep kind {s:?}"))),
        }
    }
}

impl SweepKind {
    pub fn is_synthetic_only(self) -> bool {
        matches!(self, SweepKind::Noise | SweepKind::SampleSize)
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            SweepKind::Gamma => (0.0..1.0).contains(&v),
            SweepKind::Horizon => v >= 0.0 && v.is_finite(),
            SweepKind::TrainSize => v > 0.0 && v < 1.0,
            SweepKind::Noise => v.is_finite(),
            SweepKind::SampleSize => v >= 1.0 && v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("sweep value {v} out of range for {self:?}")))
        }
    }
}

/// Everything one experiment needs. Every key is flat so the TOML file and
/// the command line share names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub gamma: f64,
    pub lookahead_hours: f64,
    /// Hours per unit of event time.
    pub time_unit_hours: f64,
    pub n_forecast_samples: usize,
    pub train_fraction: f64,
    pub sweep: Option<SweepKind>,
    pub sweep_values: Vec<f64>,
    pub rng_seed: u64,
    pub threads: usize,
    /// Record wall-clock seconds in the metrics CSV (breaks byte-identity
    /// between runs).
    pub timing: bool,

    pub events: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out: PathBuf,

    pub c: f64,
    pub sigma: f64,
    pub omega: f64,
    pub nu: f64,
    pub huber_c: f64,
    pub c1: f64,
    pub c2: f64,
    pub baseline_max_iters: usize,
    pub baseline_tol: f64,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    /// Criterion used to sanitize the test set.
    pub sanitize_criterion: Criterion,

    /// Synthetic data, used when no event file is given.
    pub synth_users: usize,
    pub synth_attach: usize,
    pub events_per_node: f64,
    pub exo_probability: f64,
    /// Fixed exogenous mark mean; when unset each stream draws one.
    pub noise_mean: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let k = Kernels::default();
        let b = BaselineConfig::default();
        let s = SolverConfig::default();
        Self {
            methods: Method::all(),
            gamma: 0.2,
            lookahead_hours: 4.0,
            time_unit_hours: 1.0,
            n_forecast_samples: 10,
            train_fraction: 0.9,
            sweep: None,
            sweep_values: Vec::new(),
            rng_seed: 0,
            threads: 0,
            timing: false,
            events: None,
            graph: None,
            out: PathBuf::from("out"),
            c: 1.0,
            sigma: 1.0,
            omega: k.omega,
            nu: k.nu,
            huber_c: b.huber_c,
            c1: b.c1,
            c2: b.c2,
            baseline_max_iters: b.max_iters,
            baseline_tol: b.tol,
            solver_tol: s.tol,
            solver_max_iters: s.max_iters,
            sanitize_criterion: Criterion::D,
            synth_users: 128,
            synth_attach: 2,
            events_per_node: 50.0,
            exo_probability: 0.2,
            noise_mean: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1);
            Error::format(origin, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Parameter("no methods selected".into()));
        }
        if !(self.lookahead_hours >= 0.0) || !(self.time_unit_hours > 0.0) {
            return Err(Error::Parameter("lookahead must be >= 0 and time unit > 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!("train_fraction {} outside (0,1)", self.train_fraction)));
        }
        if self.n_forecast_samples == 0 {
            return Err(Error::Parameter("n_forecast_samples must be >= 1".into()));
        }
        if self.events.is_some() != self.graph.is_some() {
            return Err(Error::Parameter("events and graph must be given together".into()));
        }
        if let Some(kind) = self.sweep {
            if kind.is_synthetic_only() && self.events.is_some() {
                return Err(Error::Parameter(format!("{kind:?} sweeps need synthetic data")));
            }
            if self.sweep_values.is_empty() {
                return Err(Error::Parameter("sweep has no values".into()));
            }
            for &v in &self.sweep_values {
                kind.check(v)?;
            }
        }
        self.demarcation(Criterion::D).validate()?;
        self.baseline().validate()?;
        Ok(())
    }

    pub fn kernels(&self) -> Kernels {
        Kernels { omega: self.omega, nu: self.nu }
    }

    pub fn demarcation(&self, criterion: Criterion) -> DemarcationConfig {
        DemarcationConfig { criterion, gamma: self.gamma, c: self.c, sigma: self.sigma, kernels: self.kernels() }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { tol: self.solver_tol, max_iters: self.solver_max_iters, ..SolverConfig::default() }
    }

    pub fn estimation(&self, criterion: Criterion) -> EstimationConfig {
        EstimationConfig { demarcation: self.demarcation(criterion), solver: self.solver() }
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            huber_c: self.huber_c,
            c1: self.c1,
            c2: self.c2,
            gamma: self.gamma,
            max_iters: self.baseline_max_iters,
            tol: self.baseline_tol,
        }
    }

    /// Lookahead in event-time units.
    pub fn lookahead(&self) -> f64 {
        self.lookahead_hours / self.time_unit_hours
    }

    pub fn sim(&self) -> SimConfig {
        let mut s = match self.noise_mean {
            Some(m) => SimConfig::noise(m),
            None => SimConfig::default(),
        };
        s.exo_probability = self.exo_probability;
        s.target_events = Some((self.events_per_node * self.synth_users as f64).round() as usize);
        s.rng_seed = self.rng_seed.wrapping_add(2);
        s
    }

    /// This config with one sweep coordinate applied.
    pub fn at(&self, kind: SweepKind, value: f64) -> Self {
        let mut c = self.clone();
        c.sweep = None;
        c.sweep_values.clear();
        match kind {
            SweepKind::Gamma => c.gamma = value,
            SweepKind::Horizon => c.lookahead_hours = value,
            SweepKind::TrainSize => c.train_fraction = value,
            SweepKind::Noise => c.noise_mean = Some(value),
            SweepKind::SampleSize => c.events_per_node = value,
        }
        c
    }
}

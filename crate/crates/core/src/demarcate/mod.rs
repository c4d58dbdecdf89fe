//! Event subset selection by optimal experimental design.
//!
//! Picks the `N_H` events whose regressors shrink the estimation covariance
//! of the opinion parameters the most (under the A, D, E or T criterion);
//! the remainder is labelled exogenous.

mod gram;
mod greedy;
mod weak;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gram::{Design, DesignRow, EigenContext, GramState, REFACTOR_EVERY};
pub use greedy::{greedy_select, Selection, Strategy};
pub use weak::{weak_submodularity_constants, WeakConstants, MAX_ENUMERATION};

use crate::dynamics::{stream_features, FeatureVector, Kernels};
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::graph::SocialGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// Trace of the covariance.
    A,
    /// Log-determinant of the covariance.
    D,
    /// Largest covariance eigenvalue.
    E,
    /// Negative trace of the inverse covariance.
    T,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::A, Criterion::D, Criterion::E, Criterion::T];

    pub fn is_submodular(self) -> bool {
        matches!(self, Criterion::D | Criterion::T)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Criterion::A => "A",
            Criterion::D => "D",
            Criterion::E => "E",
            Criterion::T => "T",
        };
        f.write_str(s)
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Criterion::A),
            "D" => Ok(Criterion::D),
            "E" => Ok(Criterion::E),
            "T" => Ok(Criterion::T),
            _ => Err(Error::Parameter(format!("unknown criterion {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemarcationConfig {
    pub criterion: Criterion,
    /// Presumed exogenous fraction, in `[0, 1)`.
    pub gamma: f64,
    /// Ridge constant.
    pub c: f64,
    pub sigma: f64,
    pub kernels: Kernels,
}

impl Default for DemarcationConfig {
    fn default() -> Self {
        Self { criterion: Criterion::D, gamma: 0.2, c: 1.0, sigma: 1.0, kernels: Kernels::default() }
    }
}

impl DemarcationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if !(self.c > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Parameter("c and sigma must be positive".into()));
        }
        self.kernels.validate()
    }

    /// `ceil((1 - gamma) * n)`
    pub fn n_endogenous(&self, n_events: usize) -> usize {
        endogenous_count(self.gamma, n_events)
    }
}

pub fn endogenous_count(gamma: f64, n_events: usize) -> usize {
    let x = (1.0 - gamma) * n_events as f64;
    // absorb representation error such as (1 - 0.2) * 10 = 8.000000000000002
    ((x - 1e-9).ceil().max(0.0) as usize).min(n_events)
}

/// Design matrix over the users that post in the stream. Block `k` belongs
/// to `users[k]`.
#[derive(Debug, Clone)]
pub struct UserDesign<S> {
    pub design: Design<S>,
    pub users: Vec<usize>,
}

pub fn design_from_features<S: Scalar>(features: &[FeatureVector], graph: &SocialGraph) -> Result<UserDesign<S>> {
    let mut block_of = vec![usize::MAX; graph.n_users()];
    let mut users = Vec::new();
    for f in features {
        if block_of[f.owner] == usize::MAX {
            block_of[f.owner] = 0;
            users.push(f.owner);
        }
    }
    users.sort_unstable();
    for (k, &u) in users.iter().enumerate() {
        block_of[u] = k;
    }
    let dims = users.iter().map(|&u| graph.feature_dim(u)).collect();
    let rows = features
        .iter()
        .map(|f| DesignRow { block: block_of[f.owner], phi: f.values.iter().map(|&x| S::of(x)).collect() })
        .collect();
    Ok(UserDesign { design: Design::new(dims, rows)?, users })
}

/// Selected endogenous events and their complement, by stream index.
#[derive(Debug, Clone, PartialEq)]
pub struct DemarcationResult<S> {
    /// In pick order.
    pub endogenous: Vec<usize>,
    /// Ascending.
    pub exogenous: Vec<usize>,
    pub gains: Vec<S>,
    pub objective_trace: Vec<S>,
}

impl<S: Scalar> From<Selection<S>> for DemarcationResult<S> {
    fn from(s: Selection<S>) -> Self {
        Self { endogenous: s.selected, exogenous: s.rejected, gains: s.gains, objective_trace: s.objective_trace }
    }
}

impl<S: Scalar> DemarcationResult<S> {
    pub fn n_events(&self) -> usize {
        self.endogenous.len() + self.exogenous.len()
    }

    /// `true` at every endogenous index.
    pub fn endogenous_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_events()];
        for &i in &self.endogenous {
            m[i] = true;
        }
        m
    }

    /// CSV `event_index,assigned_label,step,gain`, one row per event in
    /// index order; step and gain are empty for exogenous rows.
    pub fn to_csv(&self) -> String {
        let n = self.n_events();
        let mut step = vec![None; n];
        for (k, &i) in self.endogenous.iter().enumerate() {
            step[i] = Some(k);
        }
        let mut s = String::from("event_index,assigned_label,step,gain\n");
        for (i, st) in step.iter().enumerate() {
            match st {
                Some(k) => s.push_str(&format!("{i},endo,{k},{:?}\n", self.gains[*k].as_f64())),
                None => s.push_str(&format!("{i},exo,,\n")),
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs greedy selection over a whole stream.
pub fn cherry_pick<S: Scalar>(
    stream: &EventStream,
    graph: &SocialGraph,
    config: &DemarcationConfig,
) -> Result<DemarcationResult<S>> {
    cherry_pick_with(stream, graph, config, Strategy::default())
}

pub fn cherry_pick_with<S: Scalar>(
    stream: &EventStream,
    graph: &SocialGraph,
    config: &DemarcationConfig,
    strategy: Strategy,
) -> Result<DemarcationResult<S>> {
    config.validate()?;
    let feats = stream_features(stream, graph, config.kernels)?;
    select_from_features(&feats.opinion, graph, config, strategy)
}

pub fn select_from_features<S: Scalar>(
    features: &[FeatureVector],
    graph: &SocialGraph,
    config: &DemarcationConfig,
    strategy: Strategy,
) -> Result<DemarcationResult<S>> {
    config.validate()?;
    let ud = design_from_features::<S>(features, graph)?;
    let n_h = config.n_endogenous(features.len());
    let sel = greedy_select(&ud.design, n_h, config.criterion, S::of(config.c), S::of(config.sigma), strategy)?;
    Ok(sel.into())
}

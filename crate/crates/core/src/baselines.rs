//! Robust-regression competitors for the opinion parameters.
//!
//! Each method fits `theta_u = (a_u, alpha_u)` per user from the same
//! regressors the selector sees, optionally discarding events as outliers.
//! Intensities are then fit by maximum likelihood on whatever each method
//! retains.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demarcate::{endogenous_count, DemarcationConfig};
use crate::dynamics::{stream_features, ModelParams, StreamFeatures};
use crate::error::{Error, Result};
use crate::estimate::{fit_retained, weighted_ridge, EstimationConfig, SolverConfig};
use crate::events::EventStream;
use crate::graph::SocialGraph;
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Huber,
    Lasso,
    Hard,
    Soft,
    Slant,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] =
        [BaselineMethod::Hard, BaselineMethod::Huber, BaselineMethod::Lasso, BaselineMethod::Soft, BaselineMethod::Slant];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Huber => "huber",
            BaselineMethod::Lasso => "lasso",
            BaselineMethod::Hard => "hard",
            BaselineMethod::Soft => "soft",
            BaselineMethod::Slant => "slant",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parameter(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Width of the quadratic zone of the Huber loss is `huber_c / 2`.
    pub huber_c: f64,
    /// Penalty on the opinion parameters. Huber accepts 0.
    pub c1: f64,
    /// Penalty on the outlier offsets.
    pub c2: f64,
    /// Target exogenous fraction (hard thresholding, lasso tuning).
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { huber_c: 1.0, c1: 1.0, c2: 1.0, gamma: 0.2, max_iters: 500, tol: 1e-8 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_c > 0.0) || !(self.c1 >= 0.0) || !(self.c2 > 0.0) {
            return Err(Error::Parameter("baseline weights must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::Parameter("max_iters and tol must be positive".into()));
        }
        Ok(())
    }
}

/// Huber loss: `r^2` inside `|r| <= c/2`, `c|r| - c^2/4` outside.
pub fn huber_loss(r: f64, c: f64) -> f64 {
    if r.abs() <= c / 2.0 {
        r * r
    } else {
        c * r.abs() - c * c / 4.0
    }
}

/// `sign(x) max(|x| - t, 0)`
pub fn soft_threshold<S: Scalar>(x: S, t: S) -> S {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        S::zero()
    }
}

/// Regression rows grouped by poster.
#[derive(Debug, Clone)]
pub struct Regression<S> {
    pub dims: Vec<usize>,
    pub phi: Vec<Vec<S>>,
    pub y: Vec<S>,
    pub user: Vec<usize>,
    /// Event indices of each user.
    pub by_user: Vec<Vec<usize>>,
}

impl<S: Scalar> Regression<S> {
    pub fn from_features(stream: &EventStream, graph: &SocialGraph, features: &StreamFeatures) -> Self {
        let mut by_user = vec![Vec::new(); graph.n_users()];
        for (i, e) in stream.events().iter().enumerate() {
            by_user[e.user].push(i);
        }
        Self {
            dims: (0..graph.n_users()).map(|u| graph.feature_dim(u)).collect(),
            phi: features.opinion.iter().map(|f| f.values.iter().map(|&x| S::of(x)).collect()).collect(),
            y: stream.events().iter().map(|e| S::of(e.sentiment)).collect(),
            user: stream.events().iter().map(|e| e.user).collect(),
            by_user,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn residual(&self, theta: &[Vec<S>], i: usize) -> S {
        self.y[i] - dot(&theta[self.user[i]], &self.phi[i])
    }

    fn penalty_l2(theta: &[Vec<S>]) -> S {
        theta.iter().flatten().map(|&t| t * t).sum()
    }

    fn penalty_l1(theta: &[Vec<S>]) -> S {
        theta.iter().flatten().map(|t| t.abs()).sum()
    }

    /// Per-user weighted ridge: `min sum w (y - o - theta.phi)^2 + ridge |theta|^2`.
    fn ridge(&self, ridge: S, weight: impl Fn(usize) -> S + Sync, offset: impl Fn(usize) -> S + Sync) -> Result<Vec<Vec<S>>> {
        self.by_user
            .par_iter()
            .zip(&self.dims)
            .map(|(idx, &d)| {
                let rows: Vec<(&[S], S, S)> = idx
                    .iter()
                    .map(|&i| (self.phi[i].as_slice(), self.y[i] - offset(i), weight(i)))
                    .filter(|r| r.2 > S::zero())
                    .collect();
                if rows.is_empty() {
                    return Ok(vec![S::zero(); d]);
                }
                weighted_ridge(d, ridge, rows)
            })
            .collect()
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Opinion parameters from a baseline, plus what it kept.
#[derive(Debug, Clone)]
pub struct RobustFit<S> {
    pub theta: Vec<Vec<S>>,
    /// Per-event outlier offsets, for the thresholding methods.
    pub offsets: Option<Vec<S>>,
    /// Events used for intensity estimation.
    pub retained: Vec<bool>,
    /// Objective after each alternation, starting from the initial point.
    pub objective_trace: Vec<S>,
    pub iterations: usize,
}

fn not_converged(iters: usize, change: f64) -> Error {
    Error::NonConvergence { iters, kkt: change, trace: Vec::new() }
}

fn max_change<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (*x - *y).abs().as_f64())
        .fold(0.0, f64::max)
}

/// Iteratively reweighted least squares on the Huber loss, all events.
pub fn fit_huber<S: Scalar>(reg: &Regression<S>, cfg: &BaselineConfig) -> Result<RobustFit<S>> {
    cfg.validate()?;
    let c = S::of(cfg.huber_c);
    let half = c / S::of(2.0);
    let ridge = S::of(cfg.c1);
    let objective = |theta: &[Vec<S>]| {
        let loss: f64 = (0..reg.len()).map(|i| huber_loss(reg.residual(theta, i).as_f64(), cfg.huber_c)).sum();
        S::of(loss) + ridge * Regression::penalty_l2(theta)
    };
    let mut theta = reg.ridge(ridge, |_| S::one(), |_| S::zero())?;
    let mut trace = vec![objective(&theta)];
    let mut change = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let resid: Vec<S> = (0..reg.len()).map(|i| reg.residual(&theta, i)).collect();
        let next = reg.ridge(
            ridge,
            |i| {
                let a = resid[i].abs();
                if a <= half {
                    S::one()
                } else {
                    half / a
                }
            },
            |_| S::zero(),
        )?;
        change = max_change(&theta, &next);
        theta = next;
        let prev = trace[trace.len() - 1].as_f64();
        let cur = objective(&theta);
        trace.push(cur);
        let settled = (prev - cur.as_f64()).abs() <= cfg.tol * cur.as_f64().abs().max(1.0);
        if change < cfg.tol || settled {
            let retained = vec![true; reg.len()];
            return Ok(RobustFit { theta, offsets: None, retained, objective_trace: trace, iterations: it });
        }
    }
    Err(not_converged(cfg.max_iters, change))
}

/// Cyclic coordinate descent for `min |y - X theta|^2 + l1 |theta|_1`
/// given `X^T X` and `X^T y`.
fn lasso_cd<S: Scalar>(gram: &SymMatrix<S>, xty: &[S], l1: S, theta: &mut [S], tol: f64, max_sweeps: usize) {
    let d = xty.len();
    let half = l1 / S::of(2.0);
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for j in 0..d {
            let gjj = gram.get(j, j);
            if gjj <= S::zero() {
                theta[j] = S::zero();
                continue;
            }
            let mut rho = xty[j];
            for k in 0..d {
                if k != j {
                    rho = rho - gram.get(j, k) * theta[k];
                }
            }
            let new = soft_threshold(rho, half) / gjj;
            change = change.max((new - theta[j]).abs().as_f64());
            theta[j] = new;
        }
        if change < tol {
            break;
        }
    }
}

/// Minimizes `sum (r_i - o_i)^2 + c1 pen(theta) + c2 |o|_1`. Eliminating the
/// offsets leaves a Huber loss of width `c2 / 2`, which is minimized by
/// reweighted least squares (a majorize-minimize scheme, so the objective
/// never increases); the offsets are then `o_i = S_{c2/2}(r_i)`.
fn alternate<S: Scalar>(
    reg: &Regression<S>,
    cfg: &BaselineConfig,
    c2: S,
    l1: bool,
) -> Result<RobustFit<S>> {
    let c1 = S::of(cfg.c1);
    let thr = c2 / S::of(2.0);
    let offsets = |theta: &[Vec<S>]| -> Vec<S> {
        (0..reg.len()).map(|i| soft_threshold(reg.residual(theta, i), thr)).collect()
    };
    let objective = |theta: &[Vec<S>], o: &[S]| {
        let fit: S = (0..reg.len())
            .map(|i| {
                let r = reg.residual(theta, i) - o[i];
                r * r
            })
            .sum();
        let pen = if l1 { Regression::penalty_l1(theta) } else { Regression::penalty_l2(theta) };
        fit + c1 * pen + c2 * o.iter().map(|x| x.abs()).sum::<S>()
    };
    let mut theta: Vec<Vec<S>> = reg.dims.iter().map(|&d| vec![S::zero(); d]).collect();
    let mut o = offsets(&theta);
    let mut trace = vec![objective(&theta, &o)];
    for it in 1..=cfg.max_iters {
        let weight = |i: usize| {
            let a = reg.residual(&theta, i).abs();
            if a <= thr {
                S::one()
            } else {
                thr / a
            }
        };
        let w: Vec<S> = (0..reg.len()).map(weight).collect();
        let next: Vec<Vec<S>> = if l1 {
            reg.by_user
                .par_iter()
                .zip(&reg.dims)
                .zip(&theta)
                .map(|((idx, &d), t)| {
                    let mut g = SymMatrix::zeros(d);
                    let mut xty = vec![S::zero(); d];
                    for &i in idx {
                        g.rank_one_update(&reg.phi[i], w[i]);
                        for (a, &p) in xty.iter_mut().zip(&reg.phi[i]) {
                            *a = *a + w[i] * reg.y[i] * p;
                        }
                    }
                    let mut t = t.clone();
                    lasso_cd(&g, &xty, c1, &mut t, cfg.tol * 1e-2, 10_000);
                    t
                })
                .collect()
        } else {
            reg.ridge(c1, |i| w[i], |_| S::zero())?
        };
        let change = max_change(&theta, &next);
        theta = next;
        o = offsets(&theta);
        let prev = trace[trace.len() - 1].as_f64();
        let cur = objective(&theta, &o);
        trace.push(cur);
        let settled = (prev - cur.as_f64()).abs() <= cfg.tol * cur.as_f64().abs().max(1.0);
        if change < cfg.tol || settled {
            let retained = o.iter().map(|x| *x == S::zero()).collect();
            return Ok(RobustFit { theta, offsets: Some(o), retained, objective_trace: trace, iterations: it });
        }
    }
    let n = trace.len();
    Err(not_converged(cfg.max_iters, (trace[n - 2] - trace[n - 1]).abs().as_f64()))
}

/// Ridge-penalized parameters with L1-penalized per-event offsets.
pub fn fit_soft_threshold<S: Scalar>(reg: &Regression<S>, cfg: &BaselineConfig) -> Result<RobustFit<S>> {
    cfg.validate()?;
    if !(cfg.c1 > 0.0) {
        return Err(Error::Parameter("soft thresholding needs c1 > 0".into()));
    }
    alternate(reg, cfg, S::of(cfg.c2), false)
}

/// L1 on both the parameters and the offsets, with `c2` tuned so that
/// the flagged fraction lands within 0.02 of `gamma`.
pub fn fit_robust_lasso<S: Scalar>(reg: &Regression<S>, cfg: &BaselineConfig) -> Result<RobustFit<S>> {
    cfg.validate()?;
    if reg.is_empty() {
        return Err(Error::Input("no events".into()));
    }
    let n = reg.len() as f64;
    let flagged = |f: &RobustFit<S>| f.retained.iter().filter(|&&k| !k).count() as f64 / n;
    // every offset is zero once c2/2 exceeds the largest offset-free residual
    let base = alternate(reg, cfg, S::of(f64::MAX.sqrt()), true)?;
    let rmax = (0..reg.len()).map(|i| reg.residual(&base.theta, i).abs().as_f64()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (1e-8f64, (2.0 * rmax).max(1e-6) * 2.0);
    let mut best: Option<(f64, RobustFit<S>)> = None;
    for _ in 0..50 {
        let mid = (lo * hi).sqrt();
        let fit = alternate(reg, cfg, S::of(mid), true)?;
        let frac = flagged(&fit);
        if (frac - cfg.gamma).abs() <= 0.02 {
            return Ok(fit);
        }
        if best.as_ref().is_none_or(|(b, _)| (frac - cfg.gamma).abs() < (b - cfg.gamma).abs()) {
            best = Some((frac, fit));
        }
        if frac > cfg.gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let achieved = best.map_or(f64::NAN, |b| b.0);
    Err(Error::Numerical(format!(
        "offset penalty search missed the target fraction {} (closest {achieved:.4})",
        cfg.gamma
    )))
}

/// Alternates a ridge fit on the inlier set with keeping the
/// `ceil((1 - gamma) n)` smallest squared residuals.
pub fn fit_hard_threshold<S: Scalar>(reg: &Regression<S>, cfg: &BaselineConfig) -> Result<RobustFit<S>> {
    cfg.validate()?;
    let n = reg.len();
    let keep = endogenous_count(cfg.gamma, n);
    let c1 = S::of(cfg.c1);
    if !(cfg.c1 > 0.0) {
        return Err(Error::Parameter("hard thresholding needs c1 > 0".into()));
    }
    let objective = |theta: &[Vec<S>], inl: &[bool]| {
        let fit: S = (0..n)
            .filter(|&i| inl[i])
            .map(|i| {
                let r = reg.residual(theta, i);
                r * r
            })
            .sum();
        fit + c1 * Regression::penalty_l2(theta)
    };
    let mut inliers = vec![true; n];
    let mut theta = reg.ridge(c1, |_| S::one(), |_| S::zero())?;
    let mut trace = vec![objective(&theta, &inliers)];
    for it in 1..=cfg.max_iters {
        let mut order: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let r = reg.residual(&theta, i).as_f64();
                (r * r, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut next = vec![false; n];
        for &(_, i) in &order[..keep] {
            next[i] = true;
        }
        trace.push(objective(&theta, &next));
        if next == inliers && it > 1 {
            trace.pop();
            return Ok(RobustFit { theta, offsets: None, retained: inliers, objective_trace: trace, iterations: it });
        }
        inliers = next;
        theta = reg.ridge(c1, |i| if inliers[i] { S::one() } else { S::zero() }, |_| S::zero())?;
        trace.push(objective(&theta, &inliers));
        if keep == n {
            return Ok(RobustFit { theta, offsets: None, retained: inliers, objective_trace: trace, iterations: it });
        }
    }
    Ok(RobustFit { theta, offsets: None, retained: inliers, objective_trace: trace, iterations: cfg.max_iters })
}

/// Dispatches to one baseline's opinion fit. Slant keeps every event and
/// uses the selector's ridge (`c sigma^2` on the unscaled loss).
pub fn fit_opinion_baseline<S: Scalar>(
    method: BaselineMethod,
    reg: &Regression<S>,
    cfg: &BaselineConfig,
    demarcation: &DemarcationConfig,
) -> Result<RobustFit<S>> {
    match method {
        BaselineMethod::Huber => fit_huber(reg, cfg),
        BaselineMethod::Lasso => fit_robust_lasso(reg, cfg),
        BaselineMethod::Hard => fit_hard_threshold(reg, cfg),
        BaselineMethod::Soft => fit_soft_threshold(reg, cfg),
        BaselineMethod::Slant => {
            let ridge = S::of(demarcation.c * demarcation.sigma * demarcation.sigma);
            let theta = reg.ridge(ridge, |_| S::one(), |_| S::zero())?;
            Ok(RobustFit { theta, offsets: None, retained: vec![true; reg.len()], objective_trace: Vec::new(), iterations: 1 })
        }
    }
}

/// Full parameter set for one baseline: its opinion fit plus intensities
/// fit on the events it retained.
#[derive(Debug, Clone)]
pub struct BaselineFit<S> {
    pub params: ModelParams,
    pub robust: RobustFit<S>,
}

pub fn fit_baseline<S: Scalar>(
    method: BaselineMethod,
    stream: &EventStream,
    graph: &SocialGraph,
    cfg: &BaselineConfig,
    demarcation: &DemarcationConfig,
    solver: &SolverConfig,
) -> Result<BaselineFit<S>> {
    demarcation.validate()?;
    let features = stream_features(stream, graph, demarcation.kernels)?;
    fit_baseline_with_features(method, stream, graph, &features, cfg, demarcation, solver)
}

pub fn fit_baseline_with_features<S: Scalar>(
    method: BaselineMethod,
    stream: &EventStream,
    graph: &SocialGraph,
    features: &StreamFeatures,
    cfg: &BaselineConfig,
    demarcation: &DemarcationConfig,
    solver: &SolverConfig,
) -> Result<BaselineFit<S>> {
    let est = EstimationConfig { demarcation: *demarcation, solver: *solver };
    if method == BaselineMethod::Slant {
        // identical to the selector-driven estimate with nothing dropped
        let (params, _) = fit_retained::<S>(stream, graph, features, &vec![true; stream.len()], &est)?;
        let theta = (0..graph.n_users())
            .map(|u| params.a[u].iter().chain([&params.alpha[u]]).map(|&x| S::of(x)).collect())
            .collect();
        let robust =
            RobustFit { theta, offsets: None, retained: vec![true; stream.len()], objective_trace: Vec::new(), iterations: 1 };
        return Ok(BaselineFit { params, robust });
    }
    let reg = Regression::<S>::from_features(stream, graph, features);
    let robust = fit_opinion_baseline(method, &reg, cfg, demarcation)?;
    let (mut params, _) = fit_retained::<S>(stream, graph, features, &robust.retained, &est)?;
    for u in 0..graph.n_users() {
        let t = &robust.theta[u];
        params.a[u] = t[..t.len() - 1].iter().map(|x| x.as_f64()).collect();
        params.alpha[u] = t[t.len() - 1].as_f64();
    }
    Ok(BaselineFit { params, robust })
}

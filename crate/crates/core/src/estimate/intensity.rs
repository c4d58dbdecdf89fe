//! Maximum likelihood for the posting intensities `(mu, B)`.
//!
//! For each user the log-likelihood is
//! `sum_i log(mu + b . r_i) - mu T - b . K`, where `r_i` holds the
//! influencers' intensity accumulators at the user's i-th retained event and
//! `K` their integrated kernels up to the horizon. Users share no
//! parameters, so each is solved on its own.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct UserIntensityData {
    /// One row per retained event of this user, length = #influencers.
    pub rows: Vec<Vec<f64>>,
    pub compensator: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProblem {
    pub users: Vec<UserIntensityData>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the relative log-likelihood gain of a step drops below
    /// this (and the KKT residual is acceptable).
    pub tol: f64,
    pub max_iters: usize,
    /// Residual required at return.
    pub kkt_tol: f64,
    /// Initial `mu`.
    pub start_mu: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 2000, kkt_tol: 1e-4, start_mu: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loglik: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFit {
    pub mu: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub loglik: f64,
    /// Total log-likelihood per iteration (users that finished early keep
    /// their final value).
    pub trace: Vec<TracePoint>,
}

fn user_loglik(mu: f64, b: &[f64], data: &UserIntensityData, horizon: f64) -> Option<f64> {
    let mut ll = -mu * horizon - dot(b, &data.compensator);
    for r in &data.rows {
        let lam = mu + dot(b, r);
        if !(lam > 0.0) {
            return None;
        }
        ll += lam.ln();
    }
    Some(ll)
}

fn user_grad(mu: f64, b: &[f64], data: &UserIntensityData, horizon: f64) -> (f64, Vec<f64>) {
    let mut gmu = -horizon;
    let mut gb: Vec<f64> = data.compensator.iter().map(|k| -k).collect();
    for r in &data.rows {
        let inv = 1.0 / (mu + dot(b, r));
        gmu += inv;
        for (g, x) in gb.iter_mut().zip(r) {
            *g += x * inv;
        }
    }
    (gmu, gb)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_shapes(mu: &[f64], b: &[Vec<f64>], problem: &IntensityProblem) -> Result<()> {
    if mu.len() != problem.users.len() || b.len() != problem.users.len() {
        return Err(Error::Input("intensity parameters do not match problem size".into()));
    }
    for (u, (bu, d)) in b.iter().zip(&problem.users).enumerate() {
        if bu.len() != d.compensator.len() {
            return Err(Error::Input(format!("influence row of user {u} has wrong length")));
        }
    }
    Ok(())
}

/// Total log-likelihood. A non-positive intensity at a retained event is a
/// boundary error.
pub fn intensity_loglik(mu: &[f64], b: &[Vec<f64>], problem: &IntensityProblem) -> Result<f64> {
    check_shapes(mu, b, problem)?;
    let mut total = 0.0;
    for (u, d) in problem.users.iter().enumerate() {
        total += user_loglik(mu[u], &b[u], d, problem.horizon).ok_or_else(|| {
            Error::Numerical(format!("zero intensity at an event of user {u}; log-likelihood is -inf"))
        })?;
    }
    Ok(total)
}

pub fn intensity_grad(mu: &[f64], b: &[Vec<f64>], problem: &IntensityProblem) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_shapes(mu, b, problem)?;
    Ok(problem
        .users
        .iter()
        .enumerate()
        .map(|(u, d)| user_grad(mu[u], &b[u], d, problem.horizon))
        .unzip())
}

/// Largest violation of the KKT conditions for `max f` s.t. `x >= 0`.
fn kkt_residual(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| if xi > 0.0 { gi.abs() } else { gi.max(0.0) })
        .fold(0.0, f64::max)
}

struct UserFit {
    x: Vec<f64>,
    trace: Vec<(f64, f64)>,
    kkt: f64,
}

/// Negative Hessian `sum z z^T / lambda^2` with `z = (1, r)`.
fn user_curvature(x: &[f64], data: &UserIntensityData) -> SymMatrix<f64> {
    let mut h = SymMatrix::zeros(x.len());
    let mut z = vec![1.0; x.len()];
    for r in &data.rows {
        z[1..].copy_from_slice(r);
        let lam = x[0] + dot(&x[1..], r);
        h.rank_one_update(&z, 1.0 / (lam * lam));
    }
    h
}

/// Projected Newton direction. Coordinates within `eps` of zero whose
/// gradient points into the bound take a diagonally scaled gradient step;
/// the rest take a Newton step on their block of the curvature.
fn newton_direction(x: &[f64], g: &[f64], h: &SymMatrix<f64>) -> Option<Vec<f64>> {
    let n = x.len();
    let diag = |j: usize| h.get(j, j).max(1e-12);
    let spread = (0..n).map(|j| (x[j] - (x[j] + g[j] / diag(j)).max(0.0)).abs()).fold(0.0, f64::max);
    let eps = spread.min(1e-3);
    let pinned = |j: usize| x[j] <= eps && g[j] < 0.0;
    let free: Vec<usize> = (0..n).filter(|&j| !pinned(j)).collect();
    let mut p: Vec<f64> = (0..n).map(|j| if pinned(j) { g[j] / diag(j) } else { 0.0 }).collect();
    if free.is_empty() {
        return Some(p);
    }
    let scale = free.iter().map(|&j| h.get(j, j)).fold(0.0, f64::max).max(1.0);
    let mut damp = 1e-12 * scale;
    for _ in 0..12 {
        let mut sub = SymMatrix::zeros(free.len());
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                sub.set(a, b, h.get(i, j) + if a == b { damp } else { 0.0 });
            }
        }
        if let Some(ch) = sub.cholesky() {
            let rhs: Vec<f64> = free.iter().map(|&j| g[j]).collect();
            for (k, v) in ch.solve(&rhs).into_iter().enumerate() {
                p[free[k]] = v;
            }
            return Some(p);
        }
        damp *= 100.0;
    }
    None
}

/// Projected Newton ascent with Armijo backtracking on one user,
/// `x = (mu, b...)`. Falls back to a scaled gradient step when the
/// Newton path makes no progress.
fn solve_user(data: &UserIntensityData, horizon: f64, cfg: &SolverConfig) -> UserFit {
    let d = data.compensator.len();
    let f = |x: &[f64]| user_loglik(x[0], &x[1..], data, horizon).unwrap_or(f64::NEG_INFINITY);
    let grad = |x: &[f64]| {
        let (gm, gb) = user_grad(x[0], &x[1..], data, horizon);
        let mut g = Vec::with_capacity(d + 1);
        g.push(gm);
        g.extend(gb);
        g
    };
    let mut x = vec![0.0; d + 1];
    x[0] = cfg.start_mu.max(f64::MIN_POSITIVE);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut kkt = kkt_residual(&x, &g);
    let mut trace = vec![(fx, kkt)];
    let search = |x: &[f64], g: &[f64], fx: f64, p: &[f64]| {
        let mut alpha = 1.0;
        for _ in 0..80 {
            let xn: Vec<f64> = x.iter().zip(p).map(|(xi, pi)| (xi + alpha * pi).max(0.0)).collect();
            let fn_ = f(&xn);
            let ascent: f64 = g.iter().zip(xn.iter().zip(x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fn_.is_finite() && fn_ >= fx + 1e-4 * ascent && fn_ >= fx {
                return Some((xn, fn_));
            }
            // gains below the resolution of f: Armijo cannot judge them
            if alpha == 1.0 && fn_.is_finite() && ascent.abs() <= 1e-12 * fx.abs() && fn_ >= fx - 1e-12 * fx.abs() {
                return Some((xn, fn_));
            }
            alpha *= 0.5;
        }
        None
    };
    for _ in 0..cfg.max_iters {
        if kkt <= cfg.kkt_tol * 1e-4 {
            break;
        }
        let h = user_curvature(&x, data);
        let newton = newton_direction(&x, &g, &h).and_then(|p| search(&x, &g, fx, &p));
        let step = newton.or_else(|| {
            let scale = 1.0 / (0..=d).map(|j| h.get(j, j)).fold(1.0, f64::max);
            let p: Vec<f64> = g.iter().map(|v| v * scale).collect();
            search(&x, &g, fx, &p)
        });
        let Some((xn, fn_)) = step else { break };
        let improvement = (fn_ - fx) / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = grad(&x);
        kkt = kkt_residual(&x, &g);
        trace.push((fx, kkt));
        if improvement < cfg.tol && kkt <= cfg.kkt_tol {
            break;
        }
    }
    UserFit { x, trace, kkt }
}

/// Maximizes the intensity log-likelihood over `mu >= 0`, `B >= 0`.
pub fn fit_intensity(problem: &IntensityProblem, cfg: &SolverConfig) -> Result<IntensityFit> {
    let fits: Vec<UserFit> = problem
        .users
        .par_iter()
        .map(|d| solve_user(d, problem.horizon, cfg))
        .collect();
    let len = fits.iter().map(|f| f.trace.len()).max().unwrap_or(1);
    let trace: Vec<TracePoint> = (0..len)
        .map(|k| {
            let (ll, gn) = fits.iter().fold((0.0, 0.0f64), |(ll, gn), f| {
                let (l, r) = f.trace[k.min(f.trace.len() - 1)];
                (ll + l, gn.max(r))
            });
            TracePoint { iter: k, loglik: ll, grad_norm: gn }
        })
        .collect();
    let worst = fits.iter().map(|f| f.kkt).fold(0.0, f64::max);
    if !(worst <= cfg.kkt_tol) {
        return Err(Error::NonConvergence { iters: len - 1, kkt: worst, trace });
    }
    let mu = fits.iter().map(|f| f.x[0]).collect();
    let b = fits.iter().map(|f| f.x[1..].to_vec()).collect();
    let loglik = trace.last().map_or(0.0, |t| t.loglik);
    Ok(IntensityFit { mu, b, loglik, trace })
}

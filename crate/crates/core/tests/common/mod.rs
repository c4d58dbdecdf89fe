#![allow(dead_code)]

use demarc::demarcate::{Design, DesignRow};
use demarc::Criterion;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random block design: up to `max_users` blocks of dimension 1..=max_d and
/// `n_events` rows with entries in [-1, 1].
pub fn random_design(r: &mut ChaCha8Rng, max_users: usize, max_d: usize, n_events: usize) -> Design<f64> {
    let users = r.random_range(1..=max_users);
    let dims: Vec<usize> = (0..users).map(|_| r.random_range(1..=max_d)).collect();
    let rows = (0..n_events)
        .map(|_| {
            let block = r.random_range(0..users);
            DesignRow { block, phi: (0..dims[block]).map(|_| r.random_range(-1.0..1.0)).collect() }
        })
        .collect();
    Design::new(dims, rows).unwrap()
}

/// Dense `c I + sigma^-2 sum phi phi^T` for each block.
pub fn dense_grams(design: &Design<f64>, subset: &[usize], c: f64, sigma: f64) -> Vec<DMatrix<f64>> {
    let mut g: Vec<DMatrix<f64>> = design.dims.iter().map(|&d| DMatrix::identity(d, d) * c).collect();
    for &i in subset {
        let r = &design.rows[i];
        let v = DVector::from_column_slice(&r.phi);
        g[r.block] += &v * v.transpose() / (sigma * sigma);
    }
    g
}

/// Objective computed from scratch with eigendecompositions.
pub fn dense_objective(design: &Design<f64>, subset: &[usize], criterion: Criterion, c: f64, sigma: f64) -> f64 {
    let grams = dense_grams(design, subset, c, sigma);
    let eig: Vec<Vec<f64>> =
        grams.into_iter().map(|g| g.symmetric_eigen().eigenvalues.iter().copied().collect()).collect();
    match criterion {
        Criterion::A => -eig.iter().flatten().map(|l| 1.0 / l).sum::<f64>(),
        Criterion::D => eig.iter().flatten().map(|l| l.ln()).sum(),
        Criterion::T => eig.iter().flatten().sum(),
        Criterion::E => {
            let lmin = eig.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            if lmin.is_finite() {
                -1.0 / lmin
            } else {
                0.0
            }
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        s += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of `xs` against Exp(1); returns (D, p).
pub fn ks_exp1(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = 1.0 - (-x).exp();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;

/// One residual term: the poster, its regressor and its observed sentiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRow<S> {
    pub user: usize,
    pub phi: Vec<S>,
    pub target: S,
}

/// Regularized least squares for `(A, alpha)`, separable over users.
#[derive(Debug, Clone)]
pub struct RidgeProblem<S> {
    /// Feature dimension of every user.
    pub dims: Vec<usize>,
    pub rows: Vec<RidgeRow<S>>,
    pub c: S,
    pub sigma: S,
}

/// Per-user coefficient vectors: influencer weights then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionFit<S> {
    pub theta: Vec<Vec<S>>,
}

impl<S: Scalar> OpinionFit<S> {
    pub fn alpha(&self, u: usize) -> S {
        *self.theta[u].last().expect("bias slot")
    }

    pub fn influence(&self, u: usize) -> &[S] {
        let t = &self.theta[u];
        &t[..t.len() - 1]
    }
}

/// Solves `(ridge I + sum w phi phi^T) theta = sum w y phi`.
pub fn weighted_ridge<'a, S: Scalar>(
    dim: usize,
    ridge: S,
    rows: impl IntoIterator<Item = (&'a [S], S, S)>,
) -> Result<Vec<S>> {
    let mut g = SymMatrix::scaled_identity(dim, ridge);
    let mut rhs = vec![S::zero(); dim];
    for (phi, y, w) in rows {
        g.rank_one_update(phi, w);
        for (r, &p) in rhs.iter_mut().zip(phi) {
            *r = *r + w * y * p;
        }
    }
    let ch = g
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal equations are singular".into()))?;
    Ok(ch.solve(&rhs))
}

/// `theta_u = G_u^-1 sigma^-2 sum m_i phi_i` with
/// `G_u = c I + sigma^-2 sum phi_i phi_i^T`. Users without rows get zeros.
pub fn fit_opinion<S: Scalar>(problem: &RidgeProblem<S>) -> Result<OpinionFit<S>> {
    if !(problem.c > S::zero()) || !(problem.sigma > S::zero()) {
        return Err(Error::Parameter("ridge needs c > 0 and sigma > 0".into()));
    }
    let mut per_user: Vec<Vec<&RidgeRow<S>>> = vec![Vec::new(); problem.dims.len()];
    for r in &problem.rows {
        if r.user >= problem.dims.len() || r.phi.len() != problem.dims[r.user] {
            return Err(Error::Input(format!("ridge row for user {} has wrong shape", r.user)));
        }
        per_user[r.user].push(r);
    }
    let w = (problem.sigma * problem.sigma).recip();
    let theta = per_user
        .iter()
        .zip(&problem.dims)
        .map(|(rows, &d)| {
            if rows.is_empty() {
                Ok(vec![S::zero(); d])
            } else {
                weighted_ridge(d, problem.c, rows.iter().map(|r| (r.phi.as_slice(), r.target, w)))
            }
        })
        .collect::<Result<_>>()?;
    Ok(OpinionFit { theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_events_gives_prior_mean() {
        let p = RidgeProblem::<f64> { dims: vec![2], rows: vec![], c: 1.0, sigma: 1.0 };
        assert_eq!(fit_opinion(&p).unwrap().theta, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn scalar_closed_form() {
        let p = RidgeProblem::<f64> {
            dims: vec![1],
            rows: vec![RidgeRow { user: 0, phi: vec![1.0], target: 2.0 }],
            c: 1.0,
            sigma: 1.0,
        };
        assert!((fit_opinion(&p).unwrap().alpha(0) - 1.0).abs() < 1e-15);
    }
}

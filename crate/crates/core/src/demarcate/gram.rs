use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, SymMatrix};
use crate::scalar::Scalar;

use super::Criterion;

/// Commits between unconditional rebuilds of a block's cached inverse.
pub const REFACTOR_EVERY: usize = 64;

/// One candidate observation: the Gram block it updates and its regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow<S> {
    pub block: usize,
    pub phi: Vec<S>,
}

/// Candidate events plus the dimension of every block they can touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Design<S> {
    pub dims: Vec<usize>,
    pub rows: Vec<DesignRow<S>>,
}

impl<S: Scalar> Design<S> {
    pub fn new(dims: Vec<usize>, rows: Vec<DesignRow<S>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            match dims.get(r.block) {
                Some(&d) if d == r.phi.len() => {}
                Some(&d) => {
                    return Err(Error::Input(format!(
                        "row {i}: feature length {} does not match block dimension {d}",
                        r.phi.len()
                    )))
                }
                None => return Err(Error::Input(format!("row {i}: unknown block {}", r.block))),
            }
            if r.phi.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("row {i}: non-finite feature")));
            }
        }
        Ok(Self { dims, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Block<S> {
    gram: SymMatrix<S>,
    inv: SymMatrix<S>,
    log_det: S,
    trace: S,
    trace_inv: S,
    lambda_min: Option<S>,
    since_refactor: usize,
}

impl<S: Scalar> Block<S> {
    fn identity(d: usize, c: S) -> Self {
        Self {
            gram: SymMatrix::scaled_identity(d, c),
            inv: SymMatrix::scaled_identity(d, c.recip()),
            log_det: S::of(d as f64) * c.ln(),
            trace: S::of(d as f64) * c,
            trace_inv: S::of(d as f64) / c,
            lambda_min: Some(c),
            since_refactor: 0,
        }
    }

    fn lambda_min(&self) -> S {
        self.lambda_min.unwrap_or_else(|| self.gram.min_eigenvalue())
    }

    fn refactor(&mut self) -> Result<()> {
        let ch = self
            .gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("Gram block lost positive definiteness".into()))?;
        self.inv = ch.inverse();
        self.log_det = ch.log_det();
        self.trace = self.gram.trace();
        self.trace_inv = self.inv.trace();
        self.since_refactor = 0;
        Ok(())
    }
}

/// Global quantities the E-criterion gain needs: the smallest block
/// eigenvalue, how many blocks attain it, and the runner-up.
#[derive(Debug, Clone, Copy)]
pub struct EigenContext<S> {
    pub min: S,
    pub argmin: usize,
    pub ties: usize,
    pub second: S,
}

/// Per-user regularized Gram matrices `G_u = c I + sigma^-2 sum phi phi^T`
/// with cached inverses, log-determinants and traces. The estimation
/// covariance is `diag(G_u^-1)`; it is never formed.
#[derive(Debug, Clone)]
pub struct GramState<S> {
    c: S,
    w: S,
    blocks: Vec<Block<S>>,
}

impl<S: Scalar> GramState<S> {
    pub fn new(dims: &[usize], c: S, sigma: S) -> Result<Self> {
        if !(c > S::zero()) || !(sigma > S::zero()) {
            return Err(Error::Parameter(format!("need c > 0 and sigma > 0, got c={c}, sigma={sigma}")));
        }
        Ok(Self {
            c,
            w: (sigma * sigma).recip(),
            blocks: dims.iter().map(|&d| Block::identity(d, c)).collect(),
        })
    }

    /// Builds the state for `rows` from scratch with a fresh factorization.
    pub fn from_rows<'a>(dims: &[usize], c: S, sigma: S, rows: impl IntoIterator<Item = &'a DesignRow<S>>) -> Result<Self> {
        let mut st = Self::new(dims, c, sigma)?;
        for r in rows {
            st.blocks[r.block].gram.rank_one_update(&r.phi, st.w);
            st.blocks[r.block].lambda_min = None;
        }
        for b in &mut st.blocks {
            b.refactor()?;
        }
        Ok(st)
    }

    pub fn ridge(&self) -> S {
        self.c
    }

    /// `sigma^-2`
    pub fn weight(&self) -> S {
        self.w
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn gram(&self, block: usize) -> &SymMatrix<S> {
        &self.blocks[block].gram
    }

    pub fn inverse(&self, block: usize) -> &SymMatrix<S> {
        &self.blocks[block].inv
    }

    pub fn log_det(&self, block: usize) -> S {
        self.blocks[block].log_det
    }

    pub fn inverse_drift(&self, block: usize) -> S {
        let b = &self.blocks[block];
        b.gram.identity_residual(&b.inv)
    }

    /// Fills every missing eigenvalue cache.
    pub fn refresh_eigen(&mut self) {
        for b in &mut self.blocks {
            if b.lambda_min.is_none() {
                b.lambda_min = Some(b.gram.min_eigenvalue());
            }
        }
    }

    pub fn eigen_context(&self) -> EigenContext<S> {
        let mut ctx = EigenContext { min: S::infinity(), argmin: 0, ties: 0, second: S::infinity() };
        for (i, b) in self.blocks.iter().enumerate() {
            let l = b.lambda_min();
            if l < ctx.min {
                ctx.second = ctx.min;
                ctx.min = l;
                ctx.argmin = i;
                ctx.ties = 1;
            } else if l == ctx.min {
                ctx.ties += 1;
                ctx.second = l;
            } else if l < ctx.second {
                ctx.second = l;
            }
        }
        ctx
    }

    /// `f_X = -Omega_X` evaluated on the Gram side.
    pub fn objective(&self, criterion: Criterion) -> S {
        match criterion {
            Criterion::A => -self.blocks.iter().map(|b| b.trace_inv).sum::<S>(),
            Criterion::D => self.blocks.iter().map(|b| b.log_det).sum(),
            Criterion::T => self.blocks.iter().map(|b| b.trace).sum(),
            Criterion::E => {
                if self.blocks.is_empty() {
                    S::zero()
                } else {
                    -self.eigen_context().min.recip()
                }
            }
        }
    }

    pub fn marginal_gain(&self, row: &DesignRow<S>, criterion: Criterion) -> S {
        let ctx = match criterion {
            Criterion::E => Some(self.eigen_context()),
            _ => None,
        };
        self.gain_with(row, criterion, ctx.as_ref())
    }

    /// Exact gain `f_X(H + e) - f_X(H)` via rank-one identities. The E
    /// variant needs the context from [`Self::eigen_context`].
    pub fn gain_with(&self, row: &DesignRow<S>, criterion: Criterion, ctx: Option<&EigenContext<S>>) -> S {
        let block = &self.blocks[row.block];
        let w = self.w;
        match criterion {
            Criterion::T => w * norm_sq(&row.phi),
            Criterion::D => {
                let q = dot(&row.phi, &block.inv.mul_vec(&row.phi));
                (w * q).ln_1p()
            }
            Criterion::A => {
                let y = block.inv.mul_vec(&row.phi);
                let q = dot(&row.phi, &y);
                w * norm_sq(&y) / (S::one() + w * q)
            }
            Criterion::E => {
                let ctx = ctx.expect("E gain needs an eigen context");
                // Only the unique weakest block can move the global minimum:
                // updating any other block leaves min_u lambda_min(G_u) fixed.
                if ctx.ties != 1 || ctx.argmin != row.block {
                    return S::zero();
                }
                let mut g = block.gram.clone();
                g.rank_one_update(&row.phi, w);
                let new_min = g.min_eigenvalue().min(ctx.second);
                ctx.min.recip() - new_min.recip()
            }
        }
    }

    /// Adds the row to its block: Sherman–Morrison on the inverse and the
    /// matrix-determinant lemma on the log-determinant.
    pub fn commit(&mut self, row: &DesignRow<S>) -> Result<()> {
        let w = self.w;
        let b = &mut self.blocks[row.block];
        let y = b.inv.mul_vec(&row.phi);
        let q = dot(&row.phi, &y);
        let denom = S::one() + w * q;
        b.gram.rank_one_update(&row.phi, w);
        b.inv.rank_one_update(&y, -w / denom);
        b.log_det = b.log_det + (w * q).ln_1p();
        b.trace = b.trace + w * norm_sq(&row.phi);
        b.trace_inv = b.trace_inv - w * norm_sq(&y) / denom;
        b.lambda_min = None;
        b.since_refactor += 1;
        if b.since_refactor >= REFACTOR_EVERY || Self::probe_drift(b, &row.phi) {
            b.refactor()?;
        }
        Ok(())
    }

    /// Cheap O(d^2) check: `G (G^-1 phi)` should reproduce `phi`.
    fn probe_drift(b: &Block<S>, phi: &[S]) -> bool {
        let y = b.inv.mul_vec(phi);
        let back = b.gram.mul_vec(&y);
        let scale = phi.iter().fold(S::one(), |m, x| m.max(x.abs()));
        let err = back.iter().zip(phi).fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        !(err <= S::of(S::DRIFT_TOL) * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(block: usize, phi: &[f64]) -> DesignRow<f64> {
        DesignRow { block, phi: phi.to_vec() }
    }

    #[test]
    fn empty_single_block() {
        let st = GramState::<f64>::new(&[2], 1.0, 1.0).unwrap();
        assert_eq!(st.objective(Criterion::A), -2.0);
        assert_eq!(st.objective(Criterion::D), 0.0);
        assert_eq!(st.objective(Criterion::E), -1.0);
        assert_eq!(st.objective(Criterion::T), 2.0);
    }

    #[test]
    fn one_event() {
        let mut st = GramState::<f64>::new(&[2], 1.0, 1.0).unwrap();
        st.commit(&row(0, &[1.0, 0.0])).unwrap();
        assert!((st.objective(Criterion::A) + 1.5).abs() < 1e-15);
        assert!((st.objective(Criterion::D) - 2f64.ln()).abs() < 1e-15);
        assert!((st.objective(Criterion::D) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(st.objective(Criterion::E), -1.0);
        assert_eq!(st.objective(Criterion::T), 3.0);
    }

    #[test]
    fn two_identity_blocks() {
        let st = GramState::<f64>::new(&[2, 3], 1.0, 1.0).unwrap();
        assert_eq!(st.objective(Criterion::A), -5.0);
        assert_eq!(st.objective(Criterion::E), -1.0);
    }

    #[test]
    fn gains_on_identity() {
        let st = GramState::<f64>::new(&[2], 1.0, 1.0).unwrap();
        let r = row(0, &[1.0, 0.0]);
        assert!((st.marginal_gain(&r, Criterion::D) - 2f64.ln()).abs() < 1e-15);
        assert!((st.marginal_gain(&r, Criterion::A) - 0.5).abs() < 1e-15);
        assert_eq!(st.marginal_gain(&r, Criterion::T), 1.0);
    }

    #[test]
    fn zero_and_bias_only_features() {
        let st = GramState::<f64>::new(&[3], 1.0, 0.5).unwrap();
        let zero = row(0, &[0.0, 0.0, 0.0]);
        for c in Criterion::ALL {
            assert_eq!(st.marginal_gain(&zero, c), 0.0);
        }
        let bias = row(0, &[0.0, 0.0, 1.0]);
        assert_eq!(st.marginal_gain(&bias, Criterion::T), 4.0);
    }

    #[test]
    fn commit_leaves_other_blocks_untouched() {
        let mut st = GramState::<f64>::new(&[2, 2], 1.0, 1.0).unwrap();
        st.commit(&row(1, &[0.3, 1.0])).unwrap();
        let before = st.blocks[1].clone();
        st.commit(&row(0, &[0.7, 1.0])).unwrap();
        assert_eq!(st.blocks[1].gram, before.gram);
        assert_eq!(st.blocks[1].inv, before.inv);
        assert_eq!(st.blocks[1].log_det.to_bits(), before.log_det.to_bits());
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(GramState::<f64>::new(&[1], 0.0, 1.0).is_err());
        assert!(GramState::<f64>::new(&[1], 1.0, -1.0).is_err());
    }

    #[test]
    fn works_in_f32() {
        let mut st = GramState::<f32>::new(&[2], 1.0, 1.0).unwrap();
        st.commit(&DesignRow { block: 0, phi: vec![1.0, 0.0] }).unwrap();
        assert!((st.objective(Criterion::D) - 2f32.ln()).abs() < 1e-6);
    }
}

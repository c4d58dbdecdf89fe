use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::gram::{Design, GramState};
use super::Criterion;

/// Largest instance for which nested pairs are enumerated.
pub const MAX_ENUMERATION: usize = 14;

/// Multiplicative and additive weak-submodularity constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakConstants {
    /// `max gain(Vbar, x) / gain(V, x)` over `V ⊆ Vbar`, `x ∉ Vbar`.
    /// Infinite when a zero gain at `V` is followed by a positive one.
    pub c_h: f64,
    /// `max gain(Vbar, x) - gain(V, x)`.
    pub eps_h: f64,
}

/// Exhaustive evaluation over every nested pair. Each subset's Gram state is
/// built from scratch, and gains come from the rank-one formulas at that
/// state.
pub fn weak_submodularity_constants<S: Scalar>(
    design: &Design<S>,
    criterion: Criterion,
    c: S,
    sigma: S,
) -> Result<WeakConstants> {
    let n = design.len();
    if n > MAX_ENUMERATION {
        return Err(Error::Size(format!(
            "{n} events; exhaustive enumeration is limited to {MAX_ENUMERATION}"
        )));
    }
    let full = 1usize << n;
    // gain[mask * n + x] for x not in mask
    let mut gain = vec![0.0f64; full * n];
    for mask in 0..full {
        let rows = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &design.rows[i]);
        let state = GramState::from_rows(&design.dims, c, sigma, rows)?;
        let ctx = (criterion == Criterion::E).then(|| state.eigen_context());
        for x in 0..n {
            if mask >> x & 1 == 0 {
                gain[mask * n + x] = state.gain_with(&design.rows[x], criterion, ctx.as_ref()).as_f64();
            }
        }
    }
    let mut c_h = 1.0f64;
    let mut eps_h = 0.0f64;
    for big in 0..full {
        // enumerate submasks of big
        let mut small = big;
        loop {
            for x in 0..n {
                if big >> x & 1 == 1 {
                    continue;
                }
                let at_small = gain[small * n + x];
                let at_big = gain[big * n + x];
                eps_h = eps_h.max(at_big - at_small);
                if at_small > 0.0 {
                    c_h = c_h.max(at_big / at_small);
                } else if at_big > 0.0 {
                    c_h = f64::INFINITY;
                }
            }
            if small == 0 {
                break;
            }
            small = (small - 1) & big;
        }
    }
    Ok(WeakConstants { c_h, eps_h })
}

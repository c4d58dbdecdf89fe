use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::gram::{Design, GramState};
use super::Criterion;

/// How candidate gains are refreshed between greedy rounds. All strategies
/// return the same selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Re-evaluate every remaining candidate each round, in parallel.
    Plain,
    /// Keep gains cached and only re-evaluate candidates in the block that
    /// was just updated. Exact because objectives separate over blocks.
    #[default]
    Incremental,
    /// Priority queue over stale gains. Only valid for submodular criteria
    /// (D and T).
    Lazy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<S> {
    /// Selected row indices in pick order.
    pub selected: Vec<usize>,
    /// Unselected row indices, ascending.
    pub rejected: Vec<usize>,
    /// Gain realized at each pick.
    pub gains: Vec<S>,
    /// Objective after each pick.
    pub objective_trace: Vec<S>,
    pub initial_objective: S,
}

/// `(gain, index)` ordered so that larger gains win and ties go to the
/// lower index.
#[derive(Debug, Clone, Copy)]
struct Cand<S> {
    gain: S,
    idx: usize,
}

impl<S: Scalar> Cand<S> {
    fn better(self, other: Self) -> Self {
        match self.gain.partial_cmp(&other.gain) {
            Some(Ordering::Greater) => self,
            Some(Ordering::Less) => other,
            _ => {
                if self.idx <= other.idx {
                    self
                } else {
                    other
                }
            }
        }
    }
}

impl<S: Scalar> PartialEq for Cand<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<S: Scalar> Eq for Cand<S> {}
impl<S: Scalar> PartialOrd for Cand<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<S: Scalar> Ord for Cand<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.gain.as_f64();
        let b = other.gain.as_f64();
        a.total_cmp(&b).then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Greedy maximization of `f_X` under `|H| = n_select`.
pub fn greedy_select<S: Scalar>(
    design: &Design<S>,
    n_select: usize,
    criterion: Criterion,
    c: S,
    sigma: S,
    strategy: Strategy,
) -> Result<Selection<S>> {
    let n = design.len();
    if n_select > n {
        return Err(Error::Parameter(format!("cannot select {n_select} of {n} events")));
    }
    if strategy == Strategy::Lazy && !criterion.is_submodular() {
        return Err(Error::Parameter(format!(
            "lazy greedy needs a submodular criterion, {criterion:?} is only weakly submodular"
        )));
    }
    let mut state = GramState::new(&design.dims, c, sigma)?;
    let initial_objective = state.objective(criterion);
    let mut out = Selection {
        selected: Vec::with_capacity(n_select),
        rejected: Vec::new(),
        gains: Vec::with_capacity(n_select),
        objective_trace: Vec::with_capacity(n_select),
        initial_objective,
    };
    let mut taken = vec![false; n];

    match strategy {
        Strategy::Plain => {
            for _ in 0..n_select {
                let ctx = (criterion == Criterion::E).then(|| state.eigen_context());
                let best = (0..n)
                    .into_par_iter()
                    .filter(|&i| !taken[i])
                    .map(|i| Cand { gain: state.gain_with(&design.rows[i], criterion, ctx.as_ref()), idx: i })
                    .reduce_with(Cand::better)
                    .expect("candidates remain");
                pick(&mut state, design, criterion, best, &mut taken, &mut out)?;
            }
        }
        Strategy::Incremental if criterion == Criterion::E => {
            for _ in 0..n_select {
                let ctx = state.eigen_context();
                // every block but the unique weakest one has zero gain
                let outside = (0..n).find(|&i| !taken[i] && (ctx.ties != 1 || design.rows[i].block != ctx.argmin));
                let mut best = match outside {
                    Some(i) => Cand { gain: S::zero(), idx: i },
                    None => Cand { gain: S::neg_infinity(), idx: n },
                };
                if ctx.ties == 1 {
                    let hit = (0..n)
                        .into_par_iter()
                        .filter(|&i| !taken[i] && design.rows[i].block == ctx.argmin)
                        .map(|i| Cand { gain: state.gain_with(&design.rows[i], criterion, Some(&ctx)), idx: i })
                        .reduce_with(Cand::better);
                    if let Some(h) = hit {
                        best = best.better(h);
                    }
                }
                pick(&mut state, design, criterion, best, &mut taken, &mut out)?;
            }
        }
        Strategy::Incremental => {
            let mut by_block: Vec<Vec<usize>> = vec![Vec::new(); design.dims.len()];
            for (i, r) in design.rows.iter().enumerate() {
                by_block[r.block].push(i);
            }
            let mut gains: Vec<S> = design
                .rows
                .par_iter()
                .map(|r| state.gain_with(r, criterion, None))
                .collect();
            let block_best = |members: &[usize], gains: &[S], taken: &[bool]| {
                members
                    .iter()
                    .filter(|&&i| !taken[i])
                    .map(|&i| Cand { gain: gains[i], idx: i })
                    .reduce(Cand::better)
            };
            let mut best_of: Vec<Option<Cand<S>>> =
                by_block.iter().map(|m| block_best(m, &gains, &taken)).collect();
            for _ in 0..n_select {
                let best = best_of
                    .iter()
                    .flatten()
                    .copied()
                    .reduce(Cand::better)
                    .expect("candidates remain");
                let blk = design.rows[best.idx].block;
                pick(&mut state, design, criterion, best, &mut taken, &mut out)?;
                let members = &by_block[blk];
                let fresh: Vec<(usize, S)> = members
                    .par_iter()
                    .filter(|&&i| !taken[i])
                    .map(|&i| (i, state.gain_with(&design.rows[i], criterion, None)))
                    .collect();
                for (i, g) in fresh {
                    gains[i] = g;
                }
                best_of[blk] = block_best(members, &gains, &taken);
            }
        }
        Strategy::Lazy => {
            // entries carry the round in which their gain was computed
            let mut heap: BinaryHeap<(Cand<S>, usize)> = design
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| (Cand { gain: state.gain_with(r, criterion, None), idx: i }, 0))
                .collect();
            for round in 0..n_select {
                loop {
                    let (top, stamp) = heap.pop().expect("candidates remain");
                    if stamp == round {
                        pick(&mut state, design, criterion, top, &mut taken, &mut out)?;
                        break;
                    }
                    let g = state.gain_with(&design.rows[top.idx], criterion, None);
                    heap.push((Cand { gain: g, idx: top.idx }, round));
                }
            }
        }
    }

    out.rejected = (0..n).filter(|&i| !taken[i]).collect();
    Ok(out)
}

fn pick<S: Scalar>(
    state: &mut GramState<S>,
    design: &Design<S>,
    criterion: Criterion,
    best: Cand<S>,
    taken: &mut [bool],
    out: &mut Selection<S>,
) -> Result<()> {
    state.commit(&design.rows[best.idx])?;
    if criterion == Criterion::E {
        state.refresh_eigen();
    }
    taken[best.idx] = true;
    out.selected.push(best.idx);
    out.gains.push(best.gain);
    out.objective_trace.push(state.objective(criterion));
    Ok(())
}

//! Parameter estimation on a retained subset of events.
//!
//! Residual and likelihood terms run over the retained events only, while
//! the regressors (`phi`, intensity accumulators, compensators) come from the
//! full stream.

mod intensity;
mod ridge;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use intensity::{
    fit_intensity, intensity_grad, intensity_loglik, IntensityFit, IntensityProblem, SolverConfig, TracePoint,
    UserIntensityData,
};
pub use ridge::{fit_opinion, weighted_ridge, OpinionFit, RidgeProblem, RidgeRow};

use crate::demarcate::{select_from_features, DemarcationConfig, DemarcationResult, Strategy};
use crate::dynamics::{stream_features, ModelParams, StreamFeatures};
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::graph::SocialGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub demarcation: DemarcationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct Estimate<S> {
    pub params: ModelParams,
    pub demarcation: DemarcationResult<S>,
    pub intensity_trace: Vec<TracePoint>,
}

/// Ridge rows for the events flagged in `keep`.
pub fn opinion_problem<S: Scalar>(
    stream: &EventStream,
    graph: &SocialGraph,
    features: &StreamFeatures,
    keep: &[bool],
    c: f64,
    sigma: f64,
) -> RidgeProblem<S> {
    let rows = stream
        .events()
        .iter()
        .zip(&features.opinion)
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((e, f), _)| RidgeRow {
            user: e.user,
            phi: f.values.iter().map(|&x| S::of(x)).collect(),
            target: S::of(e.sentiment),
        })
        .collect();
    RidgeProblem {
        dims: (0..graph.n_users()).map(|u| graph.feature_dim(u)).collect(),
        rows,
        c: S::of(c),
        sigma: S::of(sigma),
    }
}

/// Likelihood terms for the events flagged in `keep`.
pub fn intensity_problem(
    stream: &EventStream,
    graph: &SocialGraph,
    features: &StreamFeatures,
    keep: &[bool],
) -> IntensityProblem {
    let mut users: Vec<UserIntensityData> = (0..graph.n_users())
        .map(|u| UserIntensityData { rows: Vec::new(), compensator: features.compensator[u].clone() })
        .collect();
    for ((e, r), &k) in stream.events().iter().zip(&features.intensity).zip(keep) {
        if k {
            users[e.user].rows.push(r.clone());
        }
    }
    IntensityProblem { users, horizon: features.horizon }
}

/// Opinion parameters by ridge and intensity parameters by MLE, both over
/// the retained events.
pub fn fit_retained<S: Scalar>(
    stream: &EventStream,
    graph: &SocialGraph,
    features: &StreamFeatures,
    keep: &[bool],
    config: &EstimationConfig,
) -> Result<(ModelParams, Vec<TracePoint>)> {
    if keep.len() != stream.len() {
        return Err(Error::Input(format!("mask has {} entries for {} events", keep.len(), stream.len())));
    }
    let dc = &config.demarcation;
    let op = fit_opinion(&opinion_problem::<S>(stream, graph, features, keep, dc.c, dc.sigma))?;
    let int = fit_intensity(&intensity_problem(stream, graph, features, keep), &config.solver)?;
    let mut params = ModelParams::zeros(graph, dc.sigma, dc.kernels);
    params.mu = int.mu;
    params.b = int.b;
    params.alpha = (0..graph.n_users()).map(|u| op.alpha(u).as_f64()).collect();
    params.a = (0..graph.n_users()).map(|u| op.influence(u).iter().map(|x| x.as_f64()).collect()).collect();
    Ok((params, int.trace))
}

/// Demarcates the stream, then fits every parameter on the endogenous part.
pub fn estimate_all<S: Scalar>(stream: &EventStream, graph: &SocialGraph, config: &EstimationConfig) -> Result<Estimate<S>> {
    config.demarcation.validate()?;
    let features = stream_features(stream, graph, config.demarcation.kernels)?;
    estimate_with_features(stream, graph, &features, config)
}

pub fn estimate_with_features<S: Scalar>(
    stream: &EventStream,
    graph: &SocialGraph,
    features: &StreamFeatures,
    config: &EstimationConfig,
) -> Result<Estimate<S>> {
    let demarcation: DemarcationResult<S> =
        select_from_features(&features.opinion, graph, &config.demarcation, Strategy::default())?;
    let (params, intensity_trace) = fit_retained::<S>(stream, graph, features, &demarcation.endogenous_mask(), config)?;
    Ok(Estimate { params, demarcation, intensity_trace })
}

/// CSV `iter,loglik,grad_norm`.
pub fn save_trace(trace: &[TracePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for t in trace {
        w.serialize(t).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn small() -> (SocialGraph, EventStream) {
        let g = SocialGraph::new(3, [(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap();
        let ev = (0..40)
            .map(|i| Event::new(i % 3, ((i * 7) as f64).sin(), 0.0005 * i as f64 + 0.01 * (i / 3) as f64))
            .collect();
        (g, EventStream::from_events(ev).unwrap())
    }

    #[test]
    fn gamma_zero_keeps_everything() {
        let (g, s) = small();
        let cfg = EstimationConfig {
            demarcation: DemarcationConfig { gamma: 0.0, ..Default::default() },
            ..Default::default()
        };
        let est = estimate_all::<f64>(&s, &g, &cfg).unwrap();
        assert!(est.demarcation.exogenous.is_empty());
        est.params.validate(&g).unwrap();
    }

    #[test]
    fn repeated_runs_agree() {
        let (g, s) = small();
        let cfg = EstimationConfig::default();
        let a = estimate_all::<f64>(&s, &g, &cfg).unwrap();
        let b = estimate_all::<f64>(&s, &g, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }
}

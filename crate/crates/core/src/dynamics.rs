//! Exponential-kernel opinion and intensity dynamics.
//!
//! Latent opinion of `u` is `alpha_u + sum_v a_vu * sum_j zeta_j e^{-omega (t - t_j)}`
//! and its posting intensity is `mu_u + sum_v b_vu * sum_j e^{-nu (t - t_j)}`,
//! both summing over every earlier post by an influencer `v`, whatever its
//! label.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::graph::SocialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernels {
    /// Opinion decay rate.
    pub omega: f64,
    /// Intensity decay rate.
    pub nu: f64,
}

impl Default for Kernels {
    fn default() -> Self {
        Self { omega: 1000.0, nu: 10.0 }
    }
}

impl Kernels {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega", self.omega), ("nu", self.nu)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `int_{t_j}^{horizon} e^{-nu (s - t_j)} ds`
    pub fn intensity_integral(&self, t_j: f64, horizon: f64) -> f64 {
        let dt = (horizon - t_j).max(0.0);
        if self.nu == 0.0 {
            dt
        } else {
            -(-self.nu * dt).exp_m1() / self.nu
        }
    }
}

/// Model parameters. `a[u][k]` and `b[u][k]` weight the influence of
/// `graph.in_neighbors(u)[k]` on `u`; entries off the graph are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub sigma: f64,
    pub kernels: Kernels,
}

impl ModelParams {
    /// All-zero influence, `mu = 0`, `alpha = 0`.
    pub fn zeros(graph: &SocialGraph, sigma: f64, kernels: Kernels) -> Self {
        let n = graph.n_users();
        Self {
            alpha: vec![0.0; n],
            mu: vec![0.0; n],
            a: (0..n).map(|u| vec![0.0; graph.in_neighbors(u).len()]).collect(),
            b: (0..n).map(|u| vec![0.0; graph.in_neighbors(u).len()]).collect(),
            sigma,
            kernels,
        }
    }

    pub fn validate(&self, graph: &SocialGraph) -> Result<()> {
        let n = graph.n_users();
        if self.alpha.len() != n || self.mu.len() != n || self.a.len() != n || self.b.len() != n {
            return Err(Error::Parameter(format!("parameter arrays do not match {n} users")));
        }
        for u in 0..n {
            let d = graph.in_neighbors(u).len();
            if self.a[u].len() != d || self.b[u].len() != d {
                return Err(Error::Parameter(format!("influence row of user {u} has wrong length")));
            }
            if !(self.mu[u] >= 0.0) || self.b[u].iter().any(|&b| !(b >= 0.0)) {
                return Err(Error::Parameter(format!("negative intensity parameter for user {u}")));
            }
            if self.a[u].iter().chain(self.b[u].iter()).any(|x| !x.is_finite()) || !self.alpha[u].is_finite() {
                return Err(Error::Parameter(format!("non-finite parameter for user {u}")));
            }
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        self.kernels.validate()
    }

    pub fn a_vu(&self, graph: &SocialGraph, v: usize, u: usize) -> f64 {
        graph.in_position(v, u).map_or(0.0, |k| self.a[u][k])
    }

    pub fn to_file(&self, graph: &SocialGraph) -> ParamsFile {
        let triplets = |w: &Vec<Vec<f64>>| {
            graph
                .edges()
                .iter()
                .map(|&(v, u)| (v, u, w[u][graph.in_position(v, u).expect("edge in graph")]))
                .collect()
        };
        ParamsFile {
            n_users: graph.n_users(),
            alpha: self.alpha.clone(),
            mu: self.mu.clone(),
            a: triplets(&self.a),
            b: triplets(&self.b),
            sigma: self.sigma,
            omega: self.kernels.omega,
            nu: self.kernels.nu,
        }
    }

    pub fn from_file(file: &ParamsFile, graph: &SocialGraph) -> Result<Self> {
        if file.n_users != graph.n_users() {
            return Err(Error::Input(format!(
                "parameter file has {} users, graph has {}",
                file.n_users,
                graph.n_users()
            )));
        }
        let kernels = Kernels { omega: file.omega, nu: file.nu };
        let mut p = Self::zeros(graph, file.sigma, kernels);
        p.alpha.clone_from(&file.alpha);
        p.mu.clone_from(&file.mu);
        for (target, list) in [(&mut p.a, &file.a), (&mut p.b, &file.b)] {
            for &(v, u, w) in list {
                let k = graph
                    .in_position(v, u)
                    .ok_or_else(|| Error::Input(format!("parameter on non-edge ({v},{u})")))?;
                target[u][k] = w;
            }
        }
        p.validate(graph)?;
        Ok(p)
    }

    pub fn save(&self, graph: &SocialGraph, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.to_file(graph)).expect("params serialize");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(graph: &SocialGraph, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ParamsFile = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, e.line() as u64, e.to_string()))?;
        Self::from_file(&file, graph)
    }
}

/// JSON layout: dense `alpha`/`mu`, `[src, dst, value]` triplets for the
/// edge weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub n_users: usize,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<(usize, usize, f64)>,
    pub sigma: f64,
    pub omega: f64,
    pub nu: f64,
}

/// Kernel-weighted sentiment sums from `owner`'s influencers, in
/// `in_neighbors` order, followed by a constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub owner: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct UserAcc {
    opinion: f64,
    intensity: f64,
    stamp: f64,
}

/// Per-user exponentially decaying accumulators. Each user's pair is stored
/// with the time it was last touched and decayed on read, so `advance` is
/// O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct DecayState {
    kernels: Kernels,
    now: f64,
    acc: Vec<UserAcc>,
}

impl DecayState {
    pub fn new(n_users: usize, kernels: Kernels) -> Self {
        Self { kernels, now: 0.0, acc: vec![UserAcc::default(); n_users] }
    }

    pub fn kernels(&self) -> Kernels {
        self.kernels
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn n_users(&self) -> usize {
        self.acc.len()
    }

    pub fn advance(&mut self, to: f64) -> Result<()> {
        if to < self.now || to.is_nan() {
            return Err(Error::Ordering { from: self.now, to });
        }
        self.now = to;
        Ok(())
    }

    /// Advances to the event time and adds the event to its poster's
    /// accumulators.
    pub fn absorb(&mut self, event: &Event) -> Result<()> {
        if event.user >= self.acc.len() {
            return Err(Error::Input(format!("unknown user {}", event.user)));
        }
        self.advance(event.time)?;
        let (op, int) = (self.opinion_acc(event.user), self.intensity_acc(event.user));
        self.acc[event.user] = UserAcc {
            opinion: op + event.sentiment,
            intensity: int + 1.0,
            stamp: self.now,
        };
        Ok(())
    }

    pub fn opinion_acc(&self, v: usize) -> f64 {
        let a = &self.acc[v];
        if a.opinion == 0.0 {
            return 0.0;
        }
        a.opinion * (-self.kernels.omega * (self.now - a.stamp)).exp()
    }

    pub fn intensity_acc(&self, v: usize) -> f64 {
        let a = &self.acc[v];
        if a.intensity == 0.0 {
            return 0.0;
        }
        a.intensity * (-self.kernels.nu * (self.now - a.stamp)).exp()
    }

    pub fn feature_at(&self, u: usize, graph: &SocialGraph) -> Result<FeatureVector> {
        if u >= graph.n_users() || u >= self.acc.len() {
            return Err(Error::Input(format!("unknown user {u}")));
        }
        let mut values: Vec<f64> = graph.in_neighbors(u).iter().map(|&v| self.opinion_acc(v)).collect();
        values.push(1.0);
        Ok(FeatureVector { owner: u, values })
    }

    /// Influencer intensity accumulators of `u` (no bias slot).
    pub fn intensity_features(&self, u: usize, graph: &SocialGraph) -> Vec<f64> {
        graph.in_neighbors(u).iter().map(|&v| self.intensity_acc(v)).collect()
    }

    pub fn opinion_at(&self, u: usize, params: &ModelParams, graph: &SocialGraph) -> Result<f64> {
        if u >= graph.n_users() {
            return Err(Error::Input(format!("unknown user {u}")));
        }
        Ok(params.alpha[u]
            + graph
                .in_neighbors(u)
                .iter()
                .zip(&params.a[u])
                .map(|(&v, &a)| a * self.opinion_acc(v))
                .sum::<f64>())
    }

    pub fn intensity_at(&self, u: usize, params: &ModelParams, graph: &SocialGraph) -> Result<f64> {
        if u >= graph.n_users() {
            return Err(Error::Input(format!("unknown user {u}")));
        }
        Ok(params.mu[u]
            + graph
                .in_neighbors(u)
                .iter()
                .zip(&params.b[u])
                .map(|(&v, &b)| b * self.intensity_acc(v))
                .sum::<f64>())
    }
}

/// Per-event regressors for a whole stream, evaluated just before each
/// event. Events sharing a timestamp never see each other.
#[derive(Debug, Clone)]
pub struct StreamFeatures {
    /// Opinion feature of each event (bias last).
    pub opinion: Vec<FeatureVector>,
    /// Influencer intensity accumulators at each event.
    pub intensity: Vec<Vec<f64>>,
    /// Per user, per influencer: integrated intensity kernel of all that
    /// influencer's posts up to the horizon.
    pub compensator: Vec<Vec<f64>>,
    pub horizon: f64,
}

pub fn stream_features(stream: &EventStream, graph: &SocialGraph, kernels: Kernels) -> Result<StreamFeatures> {
    kernels.validate()?;
    stream.check_users(graph)?;
    let events = stream.events();
    let mut state = DecayState::new(graph.n_users(), kernels);
    let mut opinion = Vec::with_capacity(events.len());
    let mut intensity = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let t = events[i].time;
        let mut j = i;
        while j < events.len() && events[j].time == t {
            j += 1;
        }
        state.advance(t)?;
        for e in &events[i..j] {
            opinion.push(state.feature_at(e.user, graph)?);
            intensity.push(state.intensity_features(e.user, graph));
        }
        for e in &events[i..j] {
            state.absorb(e)?;
        }
        i = j;
    }
    let mut integral = vec![0.0; graph.n_users()];
    for e in events {
        integral[e.user] += kernels.intensity_integral(e.time, stream.horizon());
    }
    let compensator = (0..graph.n_users())
        .map(|u| graph.in_neighbors(u).iter().map(|&v| integral[v]).collect())
        .collect();
    Ok(StreamFeatures { opinion, intensity, compensator, horizon: stream.horizon() })
}

/// Replays `events` into a fresh state.
pub fn replay(events: &[Event], n_users: usize, kernels: Kernels) -> Result<DecayState> {
    let mut state = DecayState::new(n_users, kernels);
    for e in events {
        state.absorb(e)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kern(omega: f64, nu: f64) -> Kernels {
        Kernels { omega, nu }
    }

    #[test]
    fn advance_decays_exactly() {
        let mut s = DecayState::new(1, kern(1000.0, 10.0));
        s.absorb(&Event::new(0, 1.0, 0.0)).unwrap();
        s.advance(0.0).unwrap();
        assert_eq!(s.opinion_acc(0), 1.0);
        s.advance(0.001).unwrap();
        assert!((s.opinion_acc(0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((s.opinion_acc(0) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn advance_backwards_is_an_error() {
        let mut s = DecayState::new(1, kern(1.0, 1.0));
        s.advance(2.0).unwrap();
        assert!(matches!(s.advance(1.0), Err(Error::Ordering { .. })));
        assert!(s.absorb(&Event::new(0, 0.0, 1.5)).is_err());
    }

    #[test]
    fn semigroup() {
        let mut a = DecayState::new(1, kern(3.0, 2.0));
        a.absorb(&Event::new(0, 0.7, 0.0)).unwrap();
        let mut b = a.clone();
        a.advance(0.3).unwrap();
        a.advance(0.8).unwrap();
        b.advance(0.8).unwrap();
        assert!((a.opinion_acc(0) - b.opinion_acc(0)).abs() < 1e-12);
        assert!((a.intensity_acc(0) - b.intensity_acc(0)).abs() < 1e-12);
    }

    #[test]
    fn absorb_from_empty_and_same_time() {
        let mut s = DecayState::new(2, kern(1.0, 1.0));
        s.absorb(&Event::new(0, 0.5, 0.0)).unwrap();
        assert_eq!((s.opinion_acc(0), s.intensity_acc(0)), (0.5, 1.0));
        s.absorb(&Event::new(0, 0.25, 0.0)).unwrap();
        assert_eq!((s.opinion_acc(0), s.intensity_acc(0)), (0.75, 2.0));
    }

    #[test]
    fn feature_vectors() {
        let g = SocialGraph::new(3, [(1, 0)]).unwrap();
        let mut s = DecayState::new(3, kern(2.0, 1.0));
        assert_eq!(s.feature_at(0, &g).unwrap().values, vec![0.0, 1.0]);
        s.absorb(&Event::new(1, 1.0, 0.5)).unwrap();
        s.absorb(&Event::new(2, 9.0, 0.6)).unwrap(); // not an influencer of 0
        s.advance(1.0).unwrap();
        let f = s.feature_at(0, &g).unwrap();
        assert!((f.values[0] - (-2.0f64 * 0.5).exp()).abs() < 1e-15);
        assert_eq!(f.values[1], 1.0);
        assert!(s.feature_at(7, &g).is_err());
    }

    #[test]
    fn opinion_and_intensity_closed_forms() {
        let g = SocialGraph::new(2, [(1, 0)]).unwrap();
        let mut p = ModelParams::zeros(&g, 1.0, kern(4.0, 3.0));
        p.alpha = vec![0.3, -0.2];
        p.mu = vec![0.5, 0.1];
        let mut s = DecayState::new(2, p.kernels);
        s.absorb(&Event::new(1, 2.0, 1.0)).unwrap();
        s.advance(1.25).unwrap();
        assert_eq!(s.opinion_at(0, &p, &g).unwrap(), 0.3);
        assert_eq!(s.intensity_at(0, &p, &g).unwrap(), 0.5);
        p.a[0][0] = -0.7;
        p.b[0][0] = 0.4;
        let want_x = 0.3 + (-0.7) * 2.0 * (-4.0f64 * 0.25).exp();
        let want_l = 0.5 + 0.4 * (-3.0f64 * 0.25).exp();
        assert!((s.opinion_at(0, &p, &g).unwrap() - want_x).abs() < 1e-15);
        assert!((s.intensity_at(0, &p, &g).unwrap() - want_l).abs() < 1e-15);
    }

    #[test]
    fn features_are_left_continuous_on_ties() {
        let g = SocialGraph::new(2, [(0, 1), (1, 0)]).unwrap();
        let st = EventStream::from_events(vec![Event::new(0, 1.0, 1.0), Event::new(1, 1.0, 1.0)]).unwrap();
        let f = stream_features(&st, &g, kern(1.0, 1.0)).unwrap();
        assert_eq!(f.opinion[0].values, vec![0.0, 1.0]);
        assert_eq!(f.opinion[1].values, vec![0.0, 1.0]);
    }

    #[test]
    fn params_json_round_trip() {
        let g = SocialGraph::new(3, [(0, 1), (2, 1), (1, 0)]).unwrap();
        let mut p = ModelParams::zeros(&g, 0.5, Kernels::default());
        p.alpha = vec![0.1, 0.2, 0.3];
        p.mu = vec![1.0, 0.0, 2.0];
        p.a[1] = vec![0.5, -0.5];
        p.b[1] = vec![0.25, 0.75];
        p.a[0] = vec![1.5];
        let back = ModelParams::from_file(&p.to_file(&g), &g).unwrap();
        assert_eq!(back, p);
    }
}

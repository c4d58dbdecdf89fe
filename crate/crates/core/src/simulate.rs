//! Sampling streams from the model and Monte-Carlo opinion forecasts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DecayState, Kernels, ModelParams};
use crate::error::{Error, Result};
use crate::events::{horizon_after, Event, EventStream, Label};
use crate::graph::SocialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// End of the observation window. Ignored when `target_events` is set.
    pub horizon: f64,
    /// Stop after this many events instead; the horizon becomes the time of
    /// the next one.
    #[serde(default)]
    pub target_events: Option<usize>,
    pub exo_probability: f64,
    /// Spread of the per-stream exogenous mark mean.
    pub exo_mark_mean_prior_std: f64,
    pub exo_mark_std: f64,
    pub exo_mark_mean_offset: f64,
    pub rng_seed: u64,
    pub max_events: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            target_events: None,
            exo_probability: 0.2,
            exo_mark_mean_prior_std: 1.0,
            exo_mark_std: 0.1f64.sqrt(),
            exo_mark_mean_offset: 0.0,
            rng_seed: 0,
            max_events: 5_000_000,
        }
    }
}

impl SimConfig {
    /// Exogenous marks centred on `mean` with variance 0.05.
    pub fn noise(mean: f64) -> Self {
        Self {
            exo_mark_mean_prior_std: 0.0,
            exo_mark_std: 0.05f64.sqrt(),
            exo_mark_mean_offset: mean,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.exo_probability) {
            return Err(Error::Parameter(format!("exo_probability {} outside [0,1]", self.exo_probability)));
        }
        if !(self.exo_mark_std > 0.0) || !(self.exo_mark_mean_prior_std >= 0.0) {
            return Err(Error::Parameter("mark spreads must be positive".into()));
        }
        if !self.exo_mark_mean_offset.is_finite() {
            return Err(Error::Parameter("exo_mark_mean_offset must be finite".into()));
        }
        if self.target_events.is_none() && !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::Parameter(format!("horizon {} must be finite and >= 0", self.horizon)));
        }
        Ok(())
    }
}

/// `alpha, A ~ N(0, 1)`, `mu, B ~ U[0, 1]`, `omega = 1000`, `nu = 10`,
/// `sigma = 1`.
pub fn sample_params(graph: &SocialGraph, rng_seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut p = ModelParams::zeros(graph, 1.0, Kernels::default());
    for u in 0..graph.n_users() {
        p.alpha[u] = rng.sample(StandardNormal);
        p.mu[u] = unit.sample(&mut rng);
    }
    for u in 0..graph.n_users() {
        for k in 0..graph.in_neighbors(u).len() {
            p.a[u][k] = rng.sample(StandardNormal);
            p.b[u][k] = unit.sample(&mut rng);
        }
    }
    p
}

/// Spectral radius of `B / nu`, by power iteration on `I + B / nu`.
pub fn branching_ratio(graph: &SocialGraph, params: &ModelParams) -> f64 {
    let n = graph.n_users();
    if n == 0 || params.kernels.nu == 0.0 {
        return if params.b.iter().flatten().any(|&b| b > 0.0) { f64::INFINITY } else { 0.0 };
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut rho = 0.0;
    for _ in 0..1000 {
        let y: Vec<f64> = (0..n)
            .map(|u| {
                x[u] + graph
                    .in_neighbors(u)
                    .iter()
                    .zip(&params.b[u])
                    .map(|(&v, &b)| b * x[v])
                    .sum::<f64>()
                    / params.kernels.nu
            })
            .collect();
        let norm: f64 = y.iter().sum();
        let next = norm / x.iter().sum::<f64>() - 1.0;
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - rho).abs() < 1e-12 {
            rho = next;
            break;
        }
        rho = next;
    }
    rho
}

/// Ogata thinning over the joint intensity. Every accumulator decays at
/// `nu`, so the total `sum mu + sum_v beta_v E_v(t)` is a single decaying
/// level between events and bounds itself from the left.
struct Thinning<'a> {
    graph: &'a SocialGraph,
    params: &'a ModelParams,
    /// `(u, b_vu)` for every follower `u` of `v`.
    out_weights: Vec<Vec<(usize, f64)>>,
    /// Total outgoing excitation weight of each user.
    beta: Vec<f64>,
    mu_cum: Vec<f64>,
    /// Excitation level `sum_v beta_v E_v` and when it was last set.
    level: f64,
    stamp: f64,
}

impl<'a> Thinning<'a> {
    fn new(graph: &'a SocialGraph, params: &'a ModelParams, state: &DecayState) -> Self {
        let n = graph.n_users();
        let mut out_weights = vec![Vec::new(); n];
        for u in 0..n {
            for (&v, &b) in graph.in_neighbors(u).iter().zip(&params.b[u]) {
                if b > 0.0 {
                    out_weights[v].push((u, b));
                }
            }
        }
        let beta: Vec<f64> = out_weights.iter().map(|w| w.iter().map(|x| x.1).sum()).collect();
        let mut acc = 0.0;
        let mu_cum = params.mu.iter().map(|m| {
            acc += m;
            acc
        }).collect();
        let level = (0..n).map(|v| beta[v] * state.intensity_acc(v)).sum();
        Self { graph, params, out_weights, beta, mu_cum, level, stamp: state.now() }
    }

    fn base(&self) -> f64 {
        self.mu_cum.last().copied().unwrap_or(0.0)
    }

    fn level_at(&self, t: f64) -> f64 {
        if self.level == 0.0 {
            0.0
        } else {
            self.level * (-self.params.kernels.nu * (t - self.stamp)).exp()
        }
    }

    /// Advances `state` to the next accepted event before `t_end` and
    /// returns its poster, or `None` (state left at the last candidate).
    fn next<R: Rng>(&mut self, state: &mut DecayState, t_end: f64, rng: &mut R) -> Result<Option<usize>> {
        loop {
            let now = state.now();
            let bound = self.base() + self.level_at(now);
            if !(bound > 0.0) {
                return Ok(None);
            }
            let dt = -(-rng.random::<f64>()).ln_1p() / bound;
            let t = now + dt;
            if !(t < t_end) {
                return Ok(None);
            }
            state.advance(t)?;
            let excite = self.level_at(t);
            let draw = rng.random::<f64>() * bound;
            if draw >= self.base() + excite {
                continue;
            }
            return Ok(Some(self.choose(state, draw, excite)));
        }
    }

    /// Picks the poster from `draw` in `[0, total)`: background rates first,
    /// then each influencer's excitation split over its followers.
    fn choose(&self, state: &DecayState, draw: f64, excite: f64) -> usize {
        let base = self.base();
        if draw < base {
            let k = self.mu_cum.partition_point(|&c| c <= draw);
            return k.min(self.mu_cum.len() - 1);
        }
        // rescale so that the direct sum below matches the tracked level
        let direct: f64 = (0..self.beta.len()).map(|v| self.beta[v] * state.intensity_acc(v)).sum();
        let mut rest = (draw - base) * if excite > 0.0 { direct / excite } else { 1.0 };
        let mut last = None;
        for (v, w) in self.out_weights.iter().enumerate() {
            let e = state.intensity_acc(v);
            if e == 0.0 || w.is_empty() {
                continue;
            }
            for &(u, b) in w {
                let r = b * e;
                last = Some(u);
                if rest < r {
                    return u;
                }
                rest -= r;
            }
        }
        last.unwrap_or_else(|| self.mu_cum.partition_point(|&c| c <= 0.0).min(self.graph.n_users() - 1))
    }

    fn absorb(&mut self, state: &mut DecayState, event: &Event) -> Result<()> {
        self.level = self.level_at(event.time) + self.beta[event.user];
        self.stamp = event.time;
        state.absorb(event)
    }
}

/// Samples a labelled stream. Event times and posters use one random stream
/// and labels and marks another, so the times never depend on labelling.
pub fn simulate_stream(graph: &SocialGraph, params: &ModelParams, cfg: &SimConfig) -> Result<EventStream> {
    cfg.validate()?;
    params.validate(graph)?;
    let rho = branching_ratio(graph, params);
    if rho >= 1.0 {
        log::warn!("branching ratio {rho:.3} >= 1; the process is explosive");
    }
    let mut time_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut mark_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let exo_center: f64 = cfg.exo_mark_mean_prior_std * mark_rng.sample::<f64, _>(StandardNormal);
    let exo_mean = exo_center + cfg.exo_mark_mean_offset;

    let mut state = DecayState::new(graph.n_users(), params.kernels);
    let mut thin = Thinning::new(graph, params, &state);
    let t_end = if cfg.target_events.is_some() { f64::INFINITY } else { cfg.horizon };
    let cap = cfg.target_events.map_or(cfg.max_events, |n| n.min(cfg.max_events));
    let mut events = Vec::new();
    let horizon = loop {
        let Some(u) = thin.next(&mut state, t_end, &mut time_rng)? else {
            break match cfg.target_events {
                Some(_) => events.last().map_or(0.0, |e: &Event| horizon_after(e.time)),
                None => cfg.horizon,
            };
        };
        let t = state.now();
        if events.len() == cap {
            if cfg.target_events.is_some() {
                break t;
            }
            return Err(Error::Size(format!("more than {cap} events before horizon {}", cfg.horizon)));
        }
        let exo = mark_rng.random::<f64>() < cfg.exo_probability;
        let z: f64 = mark_rng.sample(StandardNormal);
        let e = if exo {
            Event::labeled(u, exo_mean + cfg.exo_mark_std * z, t, Label::Exo)
        } else {
            let x = state.opinion_at(u, params, graph)?;
            Event::labeled(u, x + params.sigma * z, t, Label::Endo)
        };
        thin.absorb(&mut state, &e)?;
        events.push(e);
    };
    EventStream::new(events, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Length of the unobserved window before the target time, in stream
    /// time units.
    pub lookahead: f64,
    pub n_samples: usize,
    pub rng_seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { lookahead: 4.0, n_samples: 10, rng_seed: 0 }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead >= 0.0) || !self.lookahead.is_finite() {
            return Err(Error::Parameter(format!("lookahead {} must be finite and >= 0", self.lookahead)));
        }
        if self.n_samples == 0 {
            return Err(Error::Parameter("n_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Simulates endogenous activity on `(state.now(), to]` and returns the
/// state at `to`.
fn rollout(graph: &SocialGraph, params: &ModelParams, mut state: DecayState, to: f64, seed: u64) -> Result<DecayState> {
    let mut time_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mark_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, params.sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut thin = Thinning::new(graph, params, &state);
    while let Some(u) = thin.next(&mut state, to, &mut time_rng)? {
        let x = state.opinion_at(u, params, graph)?;
        let e = Event::new(u, x + noise.sample(&mut mark_rng), state.now());
        thin.absorb(&mut state, &e)?;
    }
    state.advance(to)?;
    Ok(state)
}

/// Expected latent opinion of `u` at `t` given the state at
/// `t - lookahead`. `state` must not be past that cutoff.
pub fn forecast_from_state(
    u: usize,
    t: f64,
    state: &DecayState,
    params: &ModelParams,
    graph: &SocialGraph,
    fcfg: &ForecastConfig,
) -> Result<f64> {
    fcfg.validate()?;
    if fcfg.lookahead == 0.0 {
        let mut s = state.clone();
        s.advance(t)?;
        return s.opinion_at(u, params, graph);
    }
    let draws: Vec<f64> = (0..fcfg.n_samples)
        .into_par_iter()
        .map(|k| {
            let mut s = state.clone();
            s.advance(t - fcfg.lookahead)?;
            let end = rollout(graph, params, s, t, fcfg.rng_seed.wrapping_add(k as u64))?;
            end.opinion_at(u, params, graph)
        })
        .collect::<Result<_>>()?;
    // running mean: exact when every rollout agrees
    let mut mean = 0.0;
    for (k, d) in draws.iter().enumerate() {
        mean += (d - mean) / (k + 1) as f64;
    }
    Ok(mean)
}

/// Expected latent opinion of `u` at `t` given `history` up to
/// `t - lookahead`.
pub fn forecast(
    u: usize,
    t: f64,
    history: &EventStream,
    params: &ModelParams,
    graph: &SocialGraph,
    fcfg: &ForecastConfig,
) -> Result<f64> {
    fcfg.validate()?;
    history.check_users(graph)?;
    let cutoff = t - fcfg.lookahead;
    let mut state = DecayState::new(graph.n_users(), params.kernels);
    for e in history.events().iter().take_while(|e| e.time < cutoff) {
        state.absorb(e)?;
    }
    forecast_from_state(u, t, &state, params, graph, fcfg)
}

/// Forecasts a time-ordered sequence of targets against one growing
/// history, absorbing each history event once.
pub struct Forecaster<'a> {
    graph: &'a SocialGraph,
    params: &'a ModelParams,
    history: &'a [Event],
    next: usize,
    state: DecayState,
    cfg: ForecastConfig,
}

impl<'a> Forecaster<'a> {
    pub fn new(graph: &'a SocialGraph, params: &'a ModelParams, history: &'a EventStream, cfg: ForecastConfig) -> Result<Self> {
        cfg.validate()?;
        history.check_users(graph)?;
        Ok(Self {
            graph,
            params,
            history: history.events(),
            next: 0,
            state: DecayState::new(graph.n_users(), params.kernels),
            cfg,
        })
    }

    /// Targets must come in non-decreasing time.
    pub fn predict(&mut self, u: usize, t: f64) -> Result<f64> {
        let cutoff = t - self.cfg.lookahead;
        while self.next < self.history.len() && self.history[self.next].time < cutoff {
            self.state.absorb(&self.history[self.next])?;
            self.next += 1;
        }
        forecast_from_state(u, t, &self.state, self.params, self.graph, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> SocialGraph {
        SocialGraph::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    #[test]
    fn params_are_reproducible() {
        let g = ring(5);
        assert_eq!(sample_params(&g, 3), sample_params(&g, 3));
        assert_ne!(sample_params(&g, 3), sample_params(&g, 4));
        let p = sample_params(&g, 3);
        assert_eq!((p.kernels.omega, p.kernels.nu, p.sigma), (1000.0, 10.0, 1.0));
    }

    #[test]
    fn no_exogenous_when_probability_is_zero() {
        let g = ring(4);
        let p = sample_params(&g, 1);
        let cfg = SimConfig { horizon: 5.0, exo_probability: 0.0, ..Default::default() };
        let s = simulate_stream(&g, &p, &cfg).unwrap();
        assert!(!s.is_empty());
        assert!(s.events().iter().all(|e| e.label == Some(Label::Endo)));
    }

    #[test]
    fn labels_do_not_move_times() {
        let g = ring(4);
        let p = sample_params(&g, 2);
        let mk = |q| SimConfig { horizon: 5.0, exo_probability: q, ..Default::default() };
        let a = simulate_stream(&g, &p, &mk(0.0)).unwrap();
        let b = simulate_stream(&g, &p, &mk(1.0)).unwrap();
        let times = |s: &EventStream| s.events().iter().map(|e| (e.time, e.user)).collect::<Vec<_>>();
        assert_eq!(times(&a), times(&b));
    }

    #[test]
    fn target_count_mode() {
        let g = ring(4);
        let p = sample_params(&g, 2);
        let cfg = SimConfig { target_events: Some(100), ..Default::default() };
        let s = simulate_stream(&g, &p, &cfg).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.horizon() > s.events()[99].time);
    }

    #[test]
    fn decoupled_forecast_is_alpha() {
        let g = ring(3);
        let mut p = sample_params(&g, 5);
        for u in 0..3 {
            p.a[u].iter_mut().for_each(|x| *x = 0.0);
            p.b[u].iter_mut().for_each(|x| *x = 0.0);
        }
        let hist = simulate_stream(&g, &p, &SimConfig { horizon: 3.0, ..Default::default() }).unwrap();
        for lookahead in [0.0, 0.5] {
            let f = ForecastConfig { lookahead, n_samples: 4, rng_seed: 9 };
            assert_eq!(forecast(1, 3.0, &hist, &p, &g, &f).unwrap(), p.alpha[1]);
        }
    }

    #[test]
    fn branching_ratio_of_a_ring() {
        let g = ring(6);
        let mut p = ModelParams::zeros(&g, 1.0, Kernels::default());
        for u in 0..6 {
            p.b[u][0] = 5.0;
        }
        assert!((branching_ratio(&g, &p) - 0.5).abs() < 1e-9);
    }
}

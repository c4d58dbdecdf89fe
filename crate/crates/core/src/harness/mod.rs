//! Experiment runner: fit every method on a training prefix, forecast the
//! rest, score, and write CSVs.

mod config;
mod manifest;
mod metrics;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, Method, SweepKind};
pub use manifest::{content_hash, file_hash, write_atomic, InputRecord, RunManifest};
pub use metrics::{failure_rate, load_predictions, mse, save_predictions, Prediction};

use crate::baselines::{fit_baseline_with_features, BaselineMethod};
use crate::demarcate::cherry_pick;
use crate::dynamics::{stream_features, ModelParams, StreamFeatures};
use crate::error::{Error, Result};
use crate::estimate::estimate_with_features;
use crate::events::{load_events, split, EventStream, Label, SplitSpec};
use crate::graph::{generate_barabasi_albert, SocialGraph};
use crate::simulate::{sample_params, simulate_stream, ForecastConfig, Forecaster};

/// A graph and stream, plus the generating parameters when synthetic.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SocialGraph,
    pub stream: EventStream,
    pub truth: Option<ModelParams>,
}

impl Dataset {
    /// Reads the configured files, or synthesizes a stream when there are
    /// none.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        match (&cfg.events, &cfg.graph) {
            (Some(e), Some(g)) => {
                let graph = SocialGraph::load(g)?;
                let stream = load_events(e)?;
                stream.check_users(&graph)?;
                Ok(Self { graph, stream, truth: None })
            }
            _ => Self::synthesize(cfg),
        }
    }

    /// Preferential-attachment graph, sampled parameters, labelled stream.
    pub fn synthesize(cfg: &ExperimentConfig) -> Result<Self> {
        let graph = generate_barabasi_albert(cfg.synth_users, cfg.synth_attach, cfg.rng_seed)?;
        let mut truth = sample_params(&graph, cfg.rng_seed.wrapping_add(1));
        truth.kernels = cfg.kernels();
        truth.sigma = cfg.sigma;
        let stream = simulate_stream(&graph, &truth, &cfg.sim())?;
        Ok(Self { graph, stream, truth: Some(truth) })
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub gamma: f64,
    /// Hours.
    pub lookahead: f64,
    pub mse: f64,
    pub fr: f64,
    pub param_mse: Option<f64>,
    pub precision: Option<f64>,
    pub runtime_s: Option<f64>,
}

/// Fitted parameters and, for methods that discard events, which training
/// events they flagged exogenous.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub exogenous: Option<Vec<bool>>,
}

pub fn fit_method(
    method: Method,
    train: &EventStream,
    graph: &SocialGraph,
    features: &StreamFeatures,
    cfg: &ExperimentConfig,
) -> Result<FitOutcome> {
    match method {
        Method::Opt(c) => {
            let est = estimate_with_features::<f64>(train, graph, features, &cfg.estimation(c))?;
            let exo = est.demarcation.endogenous_mask().into_iter().map(|k| !k).collect();
            Ok(FitOutcome { params: est.params, exogenous: Some(exo) })
        }
        Method::Baseline(b) => {
            let fit = fit_baseline_with_features::<f64>(
                b,
                train,
                graph,
                features,
                &cfg.baseline(),
                &cfg.demarcation(cfg.sanitize_criterion),
                &cfg.solver(),
            )?;
            let exo = match b {
                BaselineMethod::Huber | BaselineMethod::Slant => None,
                _ => Some(fit.robust.retained.iter().map(|k| !k).collect()),
            };
            Ok(FitOutcome { params: fit.params, exogenous: exo })
        }
    }
}

/// Mean squared error over all opinion parameters (`alpha` and `A`).
pub fn param_mse(est: &ModelParams, truth: &ModelParams) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in est.alpha.iter().zip(&truth.alpha) {
        sum += (a - b).powi(2);
        n += 1;
    }
    for (ra, rb) in est.a.iter().zip(&truth.a) {
        for (a, b) in ra.iter().zip(rb) {
            sum += (a - b).powi(2);
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

/// Fraction of flagged events whose ground-truth label is exogenous.
/// `None` without labels or flags.
pub fn precision(stream: &EventStream, exogenous: &[bool]) -> Option<f64> {
    let mut flagged = 0usize;
    let mut hit = 0usize;
    for (e, &x) in stream.events().iter().zip(exogenous) {
        if x {
            flagged += 1;
            match e.label {
                Some(Label::Exo) => hit += 1,
                Some(Label::Endo) => {}
                None => return None,
            }
        }
    }
    (flagged > 0).then(|| hit as f64 / flagged as f64)
}

/// Forecasts every event of `full` from index `first` on, each from the
/// history up to its time minus the lookahead.
pub fn forecast_events(
    params: &ModelParams,
    graph: &SocialGraph,
    full: &EventStream,
    first: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<Prediction>> {
    let fcfg = ForecastConfig {
        lookahead: cfg.lookahead(),
        n_samples: cfg.n_forecast_samples,
        rng_seed: cfg.rng_seed.wrapping_add(3),
    };
    let mut fc = Forecaster::new(graph, params, full, fcfg)?;
    full.events()[first..]
        .iter()
        .enumerate()
        .map(|(k, e)| {
            Ok(Prediction { event_index: first + k, m: e.sentiment, m_hat: fc.predict(e.user, e.time)? })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub row: MetricsRow,
    pub predictions: Vec<Prediction>,
    pub fit: FitOutcome,
}

/// Split, fit each method on the training prefix, forecast the test
/// suffix.
pub fn run_forecast_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<MethodResult>> {
    cfg.validate()?;
    let (train, _) = split(&data.stream, SplitSpec { train_fraction: cfg.train_fraction })?;
    let features = stream_features(&train, &data.graph, cfg.kernels())?;
    cfg.methods
        .iter()
        .map(|&method| {
            let t0 = Instant::now();
            let fit = fit_method(method, &train, &data.graph, &features, cfg)?;
            let predictions = forecast_events(&fit.params, &data.graph, &data.stream, train.len(), cfg)?;
            let row = MetricsRow {
                method: method.to_string(),
                gamma: cfg.gamma,
                lookahead: cfg.lookahead_hours,
                mse: mse(&predictions)?,
                fr: failure_rate(&predictions)?,
                param_mse: data.truth.as_ref().map(|t| param_mse(&fit.params, t)),
                precision: fit.exogenous.as_deref().and_then(|x| precision(&train, x)),
                runtime_s: cfg.timing.then(|| t0.elapsed().as_secs_f64()),
            };
            Ok(MethodResult { method, row, predictions, fit })
        })
        .collect()
}

/// Synthesizes a dataset from `cfg` and runs every method on it.
pub fn run_synthetic_suite(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let data = Dataset::synthesize(cfg)?;
    Ok(run_forecast_experiment(cfg, &data)?.into_iter().map(|r| r.row).collect())
}

/// Test error before and after dropping test events the selector flags
/// as exogenous.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanitizedRow {
    pub method: String,
    pub gamma: f64,
    pub lookahead: f64,
    pub mse: f64,
    pub mse_sanitized: f64,
    /// `(mse - mse_sanitized) / mse`
    pub reduction: f64,
    pub fr: f64,
    pub fr_sanitized: f64,
}

pub fn run_sanitized_test(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<SanitizedRow>> {
    let results = run_forecast_experiment(cfg, data)?;
    let demarc = cherry_pick::<f64>(&data.stream, &data.graph, &cfg.demarcation(cfg.sanitize_criterion))?;
    let keep = demarc.endogenous_mask();
    results
        .into_iter()
        .map(|r| {
            let kept: Vec<Prediction> = r.predictions.iter().copied().filter(|p| keep[p.event_index]).collect();
            let full = mse(&r.predictions)?;
            let sanitized = mse(&kept)?;
            Ok(SanitizedRow {
                method: r.row.method,
                gamma: cfg.gamma,
                lookahead: cfg.lookahead_hours,
                mse: full,
                mse_sanitized: sanitized,
                reduction: if full > 0.0 { (full - sanitized) / full } else { 0.0 },
                fr: r.row.fr,
                fr_sanitized: failure_rate(&kept)?,
            })
        })
        .collect()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::io(path, e.into_error()))?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one job per sweep value (or a single job without a sweep) on a
/// pool of `cfg.threads` workers and writes `metrics.csv`, per-job
/// prediction files and `manifest.json` under `cfg.out`. Rows of
/// finished jobs are written even when a later job fails.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let start = Instant::now();
    cfg.validate()?;
    let jobs: Vec<ExperimentConfig> = match cfg.sweep {
        Some(kind) => cfg.sweep_values.iter().map(|&v| cfg.at(kind, v)).collect(),
        None => vec![cfg.clone()],
    };
    let shared = match cfg.sweep {
        Some(kind) if kind.is_synthetic_only() => None,
        _ => Some(Dataset::load(cfg)?),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Vec<MethodResult>>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| match &shared {
                Some(d) => run_forecast_experiment(job, d),
                None => run_forecast_experiment(job, &Dataset::synthesize(job)?),
            })
            .collect()
    });

    ensure_dir(&cfg.out)?;
    let pred_dir = cfg.out.join("predictions");
    ensure_dir(&pred_dir)?;
    let mut rows = Vec::new();
    let mut outputs = vec![cfg.out.join("metrics.csv")];
    let mut first_err = None;
    for (k, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(results) => {
                for r in results {
                    let p = pred_dir.join(format!("job{k:03}_{}.csv", r.method));
                    save_predictions(&r.predictions, &p)?;
                    outputs.push(p);
                    rows.push(r.row);
                }
            }
            Err(e) => {
                log::error!("job {k} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    write_atomic(&cfg.out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;

    let mut manifest = RunManifest::new("sweep", serde_json::to_value(cfg).expect("config serializes"));
    for p in [&cfg.events, &cfg.graph].into_iter().flatten() {
        manifest.add_input(p)?;
    }
    manifest.outputs = outputs;
    manifest.threads = pool.current_num_threads();
    manifest.runtime_s = start.elapsed().as_secs_f64();
    manifest.save(&cfg.out.join("manifest.json"))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

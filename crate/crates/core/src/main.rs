use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use demarc::demarcate::{cherry_pick_with, design_from_features, greedy_select, Criterion, Strategy};
use demarc::dynamics::{stream_features, ModelParams};
use demarc::estimate::save_trace;
use demarc::events::{load_events, save_events_with_meta, split, SplitSpec};
use demarc::graph::{generate_barabasi_albert, SocialGraph};
use demarc::harness::{
    fit_method, forecast_events, metrics_csv, mse, failure_rate, run_sweep, save_predictions, write_atomic, Dataset,
    ExperimentConfig, Method, MetricsRow, RunManifest, SweepKind,
};
use demarc::simulate::{sample_params, simulate_stream};
use demarc::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "demarc", version, about = "Separate endogenous from exogenous posts in opinion streams")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// TOML file with experiment keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a graph, parameters and a labelled stream.
    Simulate(SimulateArgs),
    /// Label each event endogenous or exogenous.
    Demarcate(DemarcateArgs),
    /// Fit model parameters with one method.
    Estimate(EstimateArgs),
    /// Fit on a training prefix and forecast the remainder.
    Forecast(ForecastArgs),
    /// Time the greedy selection strategies.
    Bench(BenchArgs),
    /// Run every method over a parameter sweep.
    Sweep(SweepArgs),
}

/// Flags shared by the experiment commands. Unset flags fall back to the
/// config file, then to defaults.
#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    lookahead_hours: Option<f64>,
    #[arg(long)]
    time_unit_hours: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Comma-separated, e.g. `opt-D,hard,slant`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Users in the synthetic graph.
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    events_per_node: Option<f64>,
    #[arg(long)]
    exo_probability: Option<f64>,
    #[arg(long)]
    noise_mean: Option<f64>,
    /// Write wall-clock seconds into the metrics CSV.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Fixed horizon instead of a per-user event target.
    #[arg(long)]
    horizon: Option<f64>,
    /// Parameters to simulate from instead of sampling them.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    attach: usize,
}

#[derive(Args, Debug)]
struct DemarcateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "D")]
    criterion: Criterion,
    #[arg(long, default_value = "incremental")]
    strategy: StrategyArg,
    /// Floating-point width of the selection arithmetic.
    #[arg(long, default_value_t = 64)]
    bits: u8,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "opt-D")]
    method: Method,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    common: Common,
    /// Fitted parameters; fit with `--method` on the training prefix when
    /// absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value = "opt-D")]
    method: Method,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "D")]
    criterion: Criterion,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    kind: Option<SweepKind>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    Plain,
    Incremental,
    Lazy,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Plain => Strategy::Plain,
            StrategyArg::Incremental => Strategy::Incremental,
            StrategyArg::Lazy => Strategy::Lazy,
        }
    }
}

fn base_config(cli: &Cli, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = common.$flag.clone() { cfg.$field = v; })*
        };
    }
    set!(gamma => gamma, seed => rng_seed, c => c, sigma => sigma, omega => omega, nu => nu,
         lookahead_hours => lookahead_hours, time_unit_hours => time_unit_hours,
         samples => n_forecast_samples, train_fraction => train_fraction, methods => methods,
         users => synth_users, events_per_node => events_per_node,
         exo_probability => exo_probability, out => out);
    if common.events.is_some() {
        cfg.events = common.events.clone();
    }
    if common.graph.is_some() {
        cfg.graph = common.graph.clone();
    }
    if common.noise_mean.is_some() {
        cfg.noise_mean = common.noise_mean;
    }
    if common.timing {
        cfg.timing = true;
    }
    if cli.threads != 0 {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Input(format!("{}: {e}", dir.display())))
}

fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn finish(mut manifest: RunManifest, cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    for p in [&cfg.events, &cfg.graph].into_iter().flatten() {
        manifest.add_input(p)?;
    }
    manifest.runtime_s = start.elapsed().as_secs_f64();
    manifest.save(&cfg.out.join("manifest.json"))
}

fn require_data(cfg: &ExperimentConfig) -> Result<(SocialGraph, demarc::EventStream)> {
    let (Some(e), Some(g)) = (&cfg.events, &cfg.graph) else {
        return Err(Error::Input("--events and --graph are required".into()));
    };
    let graph = SocialGraph::load(g)?;
    let stream = load_events(e)?;
    stream.check_users(&graph)?;
    Ok((graph, stream))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = base_config(cli, &a.common)?;
    ensure_dir(&cfg.out)?;
    let graph = match &cfg.graph {
        Some(g) => SocialGraph::load(g)?,
        None => generate_barabasi_albert(cfg.synth_users, a.attach, cfg.rng_seed)?,
    };
    let params = match &a.params {
        Some(p) => ModelParams::load(&graph, p)?,
        None => {
            let mut p = sample_params(&graph, cfg.rng_seed.wrapping_add(1));
            p.kernels = cfg.kernels();
            p.sigma = cfg.sigma;
            p
        }
    };
    let mut sim = cfg.sim();
    sim.target_events = Some((cfg.events_per_node * graph.n_users() as f64).round() as usize);
    if let Some(h) = a.horizon {
        sim.horizon = h;
        sim.target_events = None;
    }
    let stream = simulate_stream(&graph, &params, &sim)?;
    let out = &cfg.out;
    graph.save(out.join("graph.csv"))?;
    params.save(&graph, out.join("params.json"))?;
    save_events_with_meta(&stream, out.join("events.csv"), Some(serde_json::to_value(sim).expect("serializes")))?;
    log::info!("{} events on {} users, horizon {}", stream.len(), graph.n_users(), stream.horizon());
    let mut m = RunManifest::new("simulate", config_json(&cfg));
    m.outputs = ["graph.csv", "params.json", "events.csv"].iter().map(|f| out.join(f)).collect();
    let mut cfg = cfg.clone();
    cfg.events = None;
    finish(m, &cfg, start)
}

fn demarcate(cli: &Cli, a: &DemarcateArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = base_config(cli, &a.common)?;
    let (graph, stream) = require_data(&cfg)?;
    ensure_dir(&cfg.out)?;
    let dc = cfg.demarcation(a.criterion);
    let path = cfg.out.join("demarcation.csv");
    let csv = match a.bits {
        64 => cherry_pick_with::<f64>(&stream, &graph, &dc, a.strategy.into())?.to_csv(),
        32 => cherry_pick_with::<f32>(&stream, &graph, &dc, a.strategy.into())?.to_csv(),
        b => return Err(Error::Parameter(format!("--bits must be 32 or 64, got {b}"))),
    };
    write_atomic(&path, csv.as_bytes())?;
    let mut m = RunManifest::new("demarcate", config_json(&cfg));
    m.outputs.push(path);
    finish(m, &cfg, start)
}

fn estimate(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = base_config(cli, &a.common)?;
    let (graph, stream) = require_data(&cfg)?;
    ensure_dir(&cfg.out)?;
    let features = stream_features(&stream, &graph, cfg.kernels())?;
    let mut m = RunManifest::new("estimate", config_json(&cfg));
    let fit = fit_method(a.method, &stream, &graph, &features, &cfg)?;
    let p = cfg.out.join("params.json");
    fit.params.save(&graph, &p)?;
    m.outputs.push(p);
    if let Method::Opt(c) = a.method {
        let est = demarc::estimate::estimate_with_features::<f64>(&stream, &graph, &features, &cfg.estimation(c))?;
        let t = cfg.out.join("trace.csv");
        save_trace(&est.intensity_trace, &t)?;
        let d = cfg.out.join("demarcation.csv");
        est.demarcation.save(&d)?;
        m.outputs.extend([t, d]);
    }
    finish(m, &cfg, start)
}

fn forecast(cli: &Cli, a: &ForecastArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = base_config(cli, &a.common)?;
    let (graph, stream) = require_data(&cfg)?;
    ensure_dir(&cfg.out)?;
    let (train, _) = split(&stream, SplitSpec { train_fraction: cfg.train_fraction })?;
    let (params, label) = match &a.params {
        Some(p) => (ModelParams::load(&graph, p)?, "given".to_string()),
        None => {
            let features = stream_features(&train, &graph, cfg.kernels())?;
            (fit_method(a.method, &train, &graph, &features, &cfg)?.params, a.method.to_string())
        }
    };
    let t0 = Instant::now();
    let preds = forecast_events(&params, &graph, &stream, train.len(), &cfg)?;
    let row = MetricsRow {
        method: label,
        gamma: cfg.gamma,
        lookahead: cfg.lookahead_hours,
        mse: mse(&preds)?,
        fr: failure_rate(&preds)?,
        param_mse: None,
        precision: None,
        runtime_s: cfg.timing.then(|| t0.elapsed().as_secs_f64()),
    };
    let pp = cfg.out.join("predictions.csv");
    save_predictions(&preds, &pp)?;
    let mp = cfg.out.join("metrics.csv");
    write_atomic(&mp, metrics_csv(&[row]).as_bytes())?;
    let mut m = RunManifest::new("forecast", config_json(&cfg));
    m.outputs.extend([pp, mp]);
    if let Some(p) = &a.params {
        m.add_input(p)?;
    }
    finish(m, &cfg, start)
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let cfg = base_config(cli, &a.common)?;
    let data = Dataset::load(&cfg)?;
    let features = stream_features(&data.stream, &data.graph, cfg.kernels())?;
    let n_h = cfg.demarcation(a.criterion).n_endogenous(features.opinion.len());
    let mut out = String::from("criterion,strategy,bits,n_events,seconds\n");
    let strategies: &[(Strategy, &str)] = if a.criterion.is_submodular() {
        &[(Strategy::Plain, "plain"), (Strategy::Incremental, "incremental"), (Strategy::Lazy, "lazy")]
    } else {
        &[(Strategy::Plain, "plain"), (Strategy::Incremental, "incremental")]
    };
    macro_rules! time_one {
        ($t:ty, $bits:expr) => {
            let ud = design_from_features::<$t>(&features.opinion, &data.graph)?;
            for &(s, name) in strategies {
                let t0 = Instant::now();
                greedy_select(&ud.design, n_h, a.criterion, cfg.c as $t, cfg.sigma as $t, s)?;
                out.push_str(&format!(
                    "{},{name},{},{},{:.6}\n",
                    a.criterion,
                    $bits,
                    features.opinion.len(),
                    t0.elapsed().as_secs_f64()
                ));
            }
        };
    }
    time_one!(f64, 64);
    time_one!(f32, 32);
    print!("{out}");
    if a.common.out.is_some() {
        ensure_dir(&cfg.out)?;
        write_atomic(&cfg.out.join("bench.csv"), out.as_bytes())?;
    }
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let mut cfg = base_config(cli, &a.common)?;
    if let Some(k) = a.kind {
        cfg.sweep = Some(k);
    }
    if let Some(v) = &a.values {
        cfg.sweep_values = v.clone();
    }
    let rows = run_sweep(&cfg)?;
    log::info!("{} rows written to {}", rows.len(), cfg.out.join("metrics.csv").display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads != 0 {
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Demarcate(a) => demarcate(cli, a),
        Command::Estimate(a) => estimate(cli, a),
        Command::Forecast(a) => forecast(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Sweep(a) => sweep(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

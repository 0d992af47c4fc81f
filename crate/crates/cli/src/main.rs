use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kr_core::costmodel::{estimate_theta, CostModelInput, CostModelOutput};
use kr_core::experiment::{
    env_seed, resolve_layers, run_convergence_study, run_density, run_sweep, tangent_checks, ConvergenceAxis,
    DensityConfig, EstimatorKind, ExperimentConfig, GammaSweep, ModelKind, ResolvedConfig,
};
use kr_core::models::{NetworkForm, NoiseMode};
use kr_core::parallel::set_worker_limit;
use kr_core::selftest::{self, SelftestOptions, CRITERIA};
use kr_core::Execution;

#[derive(Parser, Debug)]
#[command(name = "kr", version, about = "Linear response of noisy dynamical systems by kernel differentiation")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate phi_avg and its derivative over a range of gamma.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Spread of the estimate across repetitions as L or W varies.
    Converge {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Axis to vary: L or W.
        #[arg(long, default_value = "L")]
        axis: ConvergenceAxis,
        /// Comma-separated axis values (default depends on the axis).
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Tent-map orbit histograms against the grid-oracle density.
    Density(DensityArgs),
    /// Order-of-magnitude choice of W, sigma and L for a target error.
    Recommend(RecommendArgs),
    /// Run the acceptance checks.
    Selftest {
        /// Divide all sample counts by this factor (quick look only).
        #[arg(long, default_value_t = 1)]
        scale_down: usize,
        /// Run only these criteria (comma-separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// tent, network or ar1.
    #[arg(long)]
    model: Option<ModelKind>,
    /// finite or ergodic.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    sigma: Option<f64>,
    /// AR(1) coefficient a.
    #[arg(long)]
    ar1_a: Option<f64>,
    /// Network noise: foliated, full or none.
    #[arg(long)]
    noise_mode: Option<NoiseMode>,
    /// Network coordinates: chart or original.
    #[arg(long)]
    form: Option<NetworkForm>,
    /// Finite-time horizon T.
    #[arg(long)]
    horizon: Option<usize>,
    /// Finite-time ensemble size.
    #[arg(long)]
    paths: Option<usize>,
    /// Decorrelation window W.
    #[arg(long)]
    window: Option<usize>,
    /// Orbit length L.
    #[arg(long)]
    orbit_len: Option<usize>,
    #[arg(long)]
    spin_up: Option<usize>,
    #[arg(long)]
    batch_len: Option<usize>,
    /// Independent orbit segments sharing the orbit length.
    #[arg(long)]
    segments: Option<usize>,
    /// Keep phi_avg inside the double sum.
    #[arg(long)]
    no_centralize: bool,
    /// A single gamma value.
    #[arg(long, allow_negative_numbers = true, conflicts_with_all = ["gamma_start", "gamma_stop", "gamma_count"])]
    gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true, requires_all = ["gamma_stop", "gamma_count"])]
    gamma_start: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma_stop: Option<f64>,
    #[arg(long)]
    gamma_count: Option<usize>,
    /// Master seed; overrides KR_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Run every unit on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Record wall-clock seconds per row (outputs then differ between runs).
    #[arg(long)]
    timing: bool,
}

impl ExperimentArgs {
    fn flags(&self) -> ExperimentConfig {
        let gamma = match (self.gamma, self.gamma_start, self.gamma_stop, self.gamma_count) {
            (Some(g), ..) => Some(GammaSweep::single(g)),
            (None, Some(start), Some(stop), Some(count)) => Some(GammaSweep { start, stop, count }),
            _ => None,
        };
        ExperimentConfig {
            model: self.model,
            estimator: self.estimator,
            sigma: self.sigma,
            ar1_a: self.ar1_a,
            noise_mode: self.noise_mode,
            form: self.form,
            horizon: self.horizon,
            paths: self.paths,
            window: self.window,
            orbit_len: self.orbit_len,
            spin_up: self.spin_up,
            batch_len: self.batch_len,
            segments: self.segments,
            centralize: self.no_centralize.then_some(false),
            gamma,
            seed: self.seed,
            repetitions: self.repetitions,
            execution: self.sequential.then_some(Execution::Sequential),
            timing: self.timing.then_some(true),
        }
    }

    fn resolve(&self) -> kr_core::Result<ResolvedConfig> {
        let file = self.config.as_deref().map(ExperimentConfig::load).transpose()?;
        resolve_layers(file, env_seed()?, &self.flags())
    }
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long, allow_negative_numbers = true, default_value_t = 3.0)]
    gamma: f64,
    /// Comma-separated noise scales.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
    sigmas: Vec<f64>,
    /// Small noise scale standing in for the noise-free limit.
    #[arg(long, default_value_t = 0.02)]
    reference_sigma: f64,
    #[arg(long, default_value_t = 10_000_000)]
    orbit_len: usize,
    #[arg(long, default_value_t = 256)]
    bins: usize,
    /// Grid-oracle size; must be a multiple of the bin count.
    #[arg(long, default_value_t = 4096)]
    grid: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    /// Target total error.
    #[arg(long)]
    eps: f64,
    /// Correlation decay rate in (0, 1); fitted from a pilot orbit when absent.
    #[arg(long)]
    theta: Option<f64>,
    /// Parameter step of interest (artificial-noise case).
    #[arg(long)]
    delta_gamma: Option<f64>,
    /// Fixed noise scale (intrinsic-noise case).
    #[arg(long)]
    sigma: Option<f64>,
    /// Model for the pilot orbit: tent or ar1.
    #[arg(long, default_value = "tent")]
    pilot_model: ModelKind,
    #[arg(long, default_value_t = 100_000)]
    pilot_steps: usize,
}

fn open_output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sweep(exp: &ExperimentArgs, out: &mut dyn Write) -> kr_core::Result<()> {
    let cfg = exp.resolve()?;
    let rows = run_sweep(&cfg, out)?;
    for c in tangent_checks(&rows) {
        writeln!(
            out,
            "# tangent gamma {}: derivative {}, secant {}, combined_se {}, within_3se {}",
            c.gamma,
            c.derivative,
            c.secant,
            c.combined_se,
            c.consistent(3.0)
        )?;
    }
    Ok(())
}

fn converge(exp: &ExperimentArgs, axis: ConvergenceAxis, values: &[usize], out: &mut dyn Write) -> kr_core::Result<()> {
    let mut flags = exp.flags();
    if flags.repetitions.is_none() {
        flags.repetitions = Some(10);
    }
    let file = exp.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let cfg = resolve_layers(file, env_seed()?, &flags)?;
    let values = if values.is_empty() { axis.default_values() } else { values.to_vec() };
    run_convergence_study(&cfg, axis, &values, out)?;
    Ok(())
}

fn density(args: &DensityArgs, out: &mut dyn Write) -> kr_core::Result<()> {
    let cfg = DensityConfig {
        gamma: args.gamma,
        sigmas: args.sigmas.clone(),
        reference_sigma: args.reference_sigma,
        orbit_len: args.orbit_len,
        bins: args.bins,
        grid: args.grid,
        seed: match args.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        },
        execution: if args.sequential { Execution::Sequential } else { Execution::Parallel },
        ..Default::default()
    };
    run_density(&cfg, out)?;
    Ok(())
}

fn describe(out: &mut dyn Write, theta: f64, fitted: bool, r: &CostModelOutput) -> io::Result<()> {
    writeln!(out, "order-of-magnitude guidance (all constants set to 1)")?;
    writeln!(out, "theta  = {theta}{}", if fitted { " (fitted from a pilot orbit; rough)" } else { "" })?;
    writeln!(out, "W      = {}", r.window)?;
    writeln!(out, "sigma  = {}", r.sigma)?;
    writeln!(out, "L      = {}", r.orbit_len)?;
    writeln!(out, "bias     theta^W                    = {:.3e}", r.breakdown.bias)?;
    writeln!(out, "sampling sqrt(W) / (sigma sqrt(L))  = {:.3e}", r.breakdown.sampling)?;
    if let Some(n) = r.breakdown.noise {
        writeln!(out, "noise    sigma / (dgamma (1-theta)) = {n:.3e}")?;
    }
    Ok(())
}

fn recommend(args: &RecommendArgs, out: &mut dyn Write) -> kr_core::Result<()> {
    let (theta, fitted) = match args.theta {
        Some(t) => (t, false),
        None => {
            let cfg = ExperimentConfig { model: Some(args.pilot_model), ..Default::default() }.resolve()?;
            let gamma = cfg.gamma.start;
            let m = cfg.build_model(gamma)?;
            let seed = env_seed()?.unwrap_or(0);
            let t = estimate_theta(&m.system, &m.noise, m.observable.as_ref(), gamma, args.pilot_steps, seed)?
                .ok_or_else(|| {
                    kr_core::Error::InvalidConfig("pilot-orbit correlations are below the noise floor already at lag 1; pass --theta".into())
                })?;
            (t, true)
        }
    };
    let input = CostModelInput { eps: args.eps, theta, delta_gamma: args.delta_gamma, sigma: args.sigma };
    let r = input.recommend()?;
    describe(out, theta, fitted, &r)?;
    Ok(())
}

fn run_selftest(scale_down: usize, only: &[usize], seed: Option<u64>, out: &mut dyn Write) -> kr_core::Result<bool> {
    let mut opts = SelftestOptions { scale_down, ..Default::default() };
    if let Some(s) = seed.or(env_seed()?) {
        opts.seed = s;
    }
    let ids: Vec<usize> = if only.is_empty() { (1..=CRITERIA).collect() } else { only.to_vec() };
    let mut all = true;
    for id in ids {
        let o = selftest::run(id, &opts);
        writeln!(out, "{o}")?;
        out.flush()?;
        all &= o.passed;
    }
    Ok(all)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || !set_worker_limit(n) {
            log::warn!("could not cap the worker pool at {n} threads");
        }
    }
    let mut out = match open_output(&cli.output) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot open output: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Sweep { exp } => sweep(exp, out.as_mut()).map(|_| true),
        Command::Converge { exp, axis, values } => converge(exp, *axis, values, out.as_mut()).map(|_| true),
        Command::Density(a) => density(a, out.as_mut()).map(|_| true),
        Command::Recommend(a) => recommend(a, out.as_mut()).map(|_| true),
        Command::Selftest { scale_down, only, seed } => run_selftest(*scale_down, only, *seed, out.as_mut()),
    };
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(true), Ok(())) => ExitCode::SUCCESS,
        (Ok(false), _) => ExitCode::FAILURE,
        (Err(e), _) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        (_, Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

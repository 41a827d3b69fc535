//! `kaclab` command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use kaclab::experiment::{emit_report, read_values_csv, run_experiment, steady_stable_from_datum, ReportFormat};
use kaclab::fixed_point::{build_pool_adaptive, load_pool, MixtureLaw, SteadySampler, DEFAULT_POOL_SIZE};
use kaclab::fourier::evolve_cf_series;
use kaclab::kernel::{find_p_bar, rate_constant_with_alpha};
use kaclab::metrics::{wasserstein_coupled, wasserstein_empirical};
use kaclab::rng::{derive_seed, par_batches};
use kaclab::stable::params_from_tails;
use kaclab::wild::{sample_v_t_with, DEFAULT_N_CAP};
use kaclab::{
    check_finiteness, find_alpha, find_p0, validate_h0, CfGrid, CollisionKernel, EmpiricalMeasure, Estimator,
    ExperimentConfig, InitialDatum, Regime, StableParams, TailSpec, WeightArray,
};

#[derive(Parser, Debug)]
#[command(name = "kaclab", version, about = "Kac-like kinetic equation laboratory")]
struct Cli {
    /// Master seed; required by the stochastic subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, or the output directory for `decay`. Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// α, p₀, p̄ and a table of S and φ.
    Spectral(SpectralArgs),
    /// Decay rate constants of every regime at order p.
    Rates(RatesArgs),
    /// Exact draws of V_t.
    Simulate(SimulateArgs),
    /// Draws from the steady state.
    Steady(SteadyArgs),
    /// Distance between two sample files.
    Distance(DistanceArgs),
    /// Characteristic-function evolution on a closed geometric grid.
    Oracle(OracleArgs),
    /// Runs a decay or stationarity experiment from a JSON config.
    Decay(DecayArgs),
    /// Evaluates the tail hypotheses for a finite initial distance.
    CheckFiniteness(ConfigArg),
}

#[derive(Args, Debug)]
struct SpectralArgs {
    #[arg(long)]
    kernel: String,
    /// Orders at which to tabulate S and φ.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0])]
    q: Vec<f64>,
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    p: f64,
    /// Restrict to one regime.
    #[arg(long)]
    regime: Option<Regime>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    datum: String,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_N_CAP)]
    n_cap: u64,
}

#[derive(Args, Debug)]
struct SteadyArgs {
    #[arg(long)]
    kernel: String,
    /// Datum whose tails (or variance at α = 2) fix the stable part.
    #[arg(long, conflicts_with_all = ["alpha", "lambda"])]
    datum: Option<String>,
    #[arg(long, requires = "lambda")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma0: f64,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// Pool file to reuse, or to create when missing.
    #[arg(long)]
    pool_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistanceArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    p: f64,
    /// `quantile` sorts each file; `coupled` pairs rows by index.
    #[arg(long, default_value = "quantile")]
    estimator: Estimator,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    datum: String,
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<f64>,
    /// Grid ratio; inferred from the largest atom below 1 when omitted.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    xi_max: f64,
    #[arg(long, default_value_t = 1100)]
    nodes: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

#[derive(Args, Debug)]
struct DecayArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "both")]
    format: String,
}

#[derive(Args, Debug)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

/// Tail constants in place of explicit stable parameters.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tails {
    c0_plus: f64,
    c0_minus: f64,
    alpha: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinitenessConfig {
    kernel: String,
    stable: Option<StableParams>,
    tails: Option<Tails>,
    p: f64,
    /// Omitted: the tail expansion of the steady state itself.
    tail_spec: Option<TailSpec>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building the worker pool")?;
    pool.install(|| dispatch(&cli))
}

fn need_seed(cli: &Cli) -> Result<u64> {
    cli.seed
        .ok_or_else(|| anyhow!("this subcommand is stochastic and needs --seed"))
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_samples(out: Option<&Path>, values: &[f64]) -> Result<()> {
    let mut w = output(out)?;
    writeln!(w, "sample_index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_kernel(spec: &str) -> Result<CollisionKernel> {
    spec.parse().with_context(|| format!("kernel {spec:?}"))
}

fn parse_datum(spec: &str) -> Result<InitialDatum> {
    spec.parse().with_context(|| format!("datum {spec:?}"))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Spectral(a) => spectral(a, out),
        Command::Rates(a) => rates(a, out),
        Command::Simulate(a) => simulate(a, need_seed(cli)?, out),
        Command::Steady(a) => steady(a, need_seed(cli)?, out),
        Command::Distance(a) => distance(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::Decay(a) => decay(a, cli.seed, out),
        Command::CheckFiniteness(a) => finiteness(a, out),
    }
}

fn spectral(a: &SpectralArgs, out: Option<&Path>) -> Result<()> {
    let kernel = parse_kernel(&a.kernel)?;
    let alpha = find_alpha(&kernel)?;
    let table: Vec<_> =
        a.q.iter()
            .map(|&q| json!({"q": q, "s": kernel.s(q), "phi": kernel.phi(q)}))
            .collect();
    write_json(
        out,
        &json!({
            "kernel": kernel.to_string(),
            "alpha": alpha,
            "p0": find_p0(&kernel)?,
            "p_bar": find_p_bar(&kernel, alpha),
            "table": table,
        }),
    )
}

fn rates(a: &RatesArgs, out: Option<&Path>) -> Result<()> {
    let kernel = parse_kernel(&a.kernel)?;
    let alpha = find_alpha(&kernel)?;
    let regimes = match a.regime {
        Some(r) => vec![r],
        None => vec![
            Regime::AlphaLt1,
            Regime::AlphaIn1To2,
            Regime::AlphaEq2,
            Regime::WassersteinLow,
            Regime::Chi,
        ],
    };
    let rows: Vec<_> = regimes
        .into_iter()
        .map(|r| match rate_constant_with_alpha(&kernel, alpha, a.p, r) {
            Ok(rate) => json!({"regime": r.name(), "rate": rate.rate, "log_correction": rate.log_correction}),
            Err(e) => json!({"regime": r.name(), "error": e.to_string()}),
        })
        .collect();
    let h0 = validate_h0(&kernel, a.p);
    write_json(
        out,
        &json!({
            "kernel": kernel.to_string(),
            "alpha": alpha,
            "p": a.p,
            "h0_failures": h0.failures(),
            "rates": rows,
        }),
    )
}

fn simulate(a: &SimulateArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let kernel = parse_kernel(&a.kernel)?;
    let datum = parse_datum(&a.datum)?;
    if !(a.t >= 0.0 && a.t.is_finite()) {
        bail!("--t must be a finite time >= 0, got {}", a.t);
    }
    let draws = par_batches(seed, a.samples, |rng, _, len| {
        let mut buf = WeightArray::new();
        (0..len)
            .map(|_| sample_v_t_with(&kernel, &datum, a.t, a.n_cap, &mut buf, rng))
            .collect()
    });
    let truncated = draws.iter().filter(|v| v.is_none()).count();
    if truncated > 0 {
        eprintln!(
            "warning: {truncated} draws exceeded the tree cap {} and were dropped",
            a.n_cap
        );
    }
    let values: Vec<f64> = draws.into_iter().flatten().collect();
    write_samples(out, &values)
}

fn steady(a: &SteadyArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let kernel = parse_kernel(&a.kernel)?;
    let alpha = find_alpha(&kernel)?;
    let stable = match (&a.datum, a.alpha, a.lambda) {
        (Some(d), _, _) => steady_stable_from_datum(&parse_datum(d)?, alpha)?,
        (None, Some(al), Some(l)) => StableParams::new(al, l, a.beta, a.gamma0)?,
        _ => bail!("give either --datum or --alpha with --lambda"),
    };
    if (stable.alpha - alpha).abs() > 1e-6 {
        bail!("stable α = {} but the kernel has α = {alpha}", stable.alpha);
    }
    let law = if kernel.conserves_alpha_power(stable.alpha) {
        MixtureLaw::point_mass(stable.alpha)
    } else {
        match &a.pool_cache {
            Some(path) if path.exists() => MixtureLaw::from_pool(load_pool(path)?, stable.alpha, 0)?,
            cache => {
                let law = build_pool_adaptive(&kernel, stable.alpha, a.pool_size, derive_seed(seed, u64::MAX))?;
                if let Some(path) = cache {
                    law.save(path)
                        .with_context(|| format!("writing pool cache {}", path.display()))?;
                }
                law
            }
        }
    };
    let sampler = SteadySampler::new(&law, &stable)?;
    let values = par_batches(seed, a.samples, |rng, _, len| {
        (0..len).map(|_| sampler.sample(rng)).collect()
    });
    write_samples(out, &values)
}

fn distance(a: &DistanceArgs, out: Option<&Path>) -> Result<()> {
    let xs = read_values_csv(&a.a).with_context(|| format!("reading {}", a.a.display()))?;
    let ys = read_values_csv(&a.b).with_context(|| format!("reading {}", a.b.display()))?;
    let est = match a.estimator {
        Estimator::Quantile => wasserstein_empirical(&EmpiricalMeasure::new(xs)?, &EmpiricalMeasure::new(ys)?, a.p)?,
        Estimator::Coupled => {
            if xs.len() != ys.len() {
                bail!(
                    "coupled estimator pairs rows: files hold {} and {} values",
                    xs.len(),
                    ys.len()
                );
            }
            let pairs: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
            wasserstein_coupled(&pairs, a.p)?
        }
        other => bail!("estimator {other} is not available for sample files; use quantile or coupled"),
    };
    write_json(
        out,
        &json!({"value": est.value, "stderr": est.stderr, "estimator": est.estimator, "p": est.p}),
    )
}

/// `1/l` for the largest atom `l < 1`.
fn infer_rho(kernel: &CollisionKernel) -> Result<f64> {
    let atoms = kernel
        .atoms()
        .ok_or_else(|| anyhow!("the oracle needs a deterministic or discrete kernel"))?;
    atoms
        .iter()
        .flat_map(|a| [a.l, a.r])
        .filter(|x| *x > 0.0 && *x < 1.0)
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        .map(|x| 1.0 / x)
        .ok_or_else(|| anyhow!("no atom lies in (0, 1); pass --rho"))
}

fn oracle(a: &OracleArgs, out: Option<&Path>) -> Result<()> {
    let kernel = parse_kernel(&a.kernel)?;
    let datum = parse_datum(&a.datum)?;
    if datum.cf(0.0).is_none() {
        bail!("datum {datum} has no closed-form characteristic function");
    }
    let rho = match a.rho {
        Some(r) => r,
        None => infer_rho(&kernel)?,
    };
    let grid = CfGrid::new(&kernel, a.xi_max, rho, a.nodes)?.with_values(|x| datum.cf(x).expect("checked above"));
    let snaps = evolve_cf_series(&grid, &a.times, a.dt)?;
    let mut w = output(out)?;
    writeln!(w, "t,xi,re,im")?;
    for (t, g) in a.times.iter().zip(&snaps) {
        for (x, v) in g.xi().iter().zip(&g.values) {
            writeln!(w, "{t},{x:e},{:e},{:e}", v.re, v.im)?;
        }
    }
    if let Some(last) = snaps.last() {
        eprintln!("boundary fraction {:.3e}", last.boundary_fraction());
    }
    w.flush()?;
    Ok(())
}

fn decay(a: &DecayArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let format = match a.format.as_str() {
        "csv" => ReportFormat::Csv,
        "json" => ReportFormat::Json,
        "both" => ReportFormat::Both,
        other => bail!("unknown format {other:?}; use csv, json or both"),
    };
    let report = run_experiment(&cfg)?;
    let dir = out
        .map(Path::to_path_buf)
        .or(cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for path in emit_report(&report, format, &dir)? {
        eprintln!("wrote {}", path.display());
    }
    eprintln!(
        "slope {:?} theory {:?} pass {}{}",
        report.slope(),
        report.theory.map(|r| r.rate),
        report.pass,
        if report.partial { " (partial)" } else { "" }
    );
    Ok(())
}

fn finiteness(a: &ConfigArg, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg: FinitenessConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let kernel = parse_kernel(&cfg.kernel)?;
    let stable = match (cfg.stable, cfg.tails) {
        (Some(s), None) => StableParams::new(s.alpha, s.lambda, s.beta, s.gamma0)?,
        (None, Some(t)) => params_from_tails(t.c0_plus, t.c0_minus, t.alpha)?,
        _ => bail!("config needs exactly one of `stable` and `tails`"),
    };
    let tail = match cfg.tail_spec {
        Some(t) => t,
        None => TailSpec::from_steady(&kernel, &stable, cfg.p)?,
    };
    let verdict = check_finiteness(&tail, &kernel, &stable, cfg.p)?;
    write_json(out, &verdict)
}

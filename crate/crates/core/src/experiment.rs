//! Config-driven experiments: sample `μ_t` on a time grid, estimate its
//! distance to `μ∞`, fit the decay and compare it with the rate constant.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::fixed_point::{build_pool_adaptive, steady_cf, MixtureLaw, SteadySampler, DEFAULT_POOL_SIZE};
use crate::kernel::{find_alpha, rate_constant_with_alpha, validate_h0, CollisionKernel, DecayRate, Regime};
use crate::metrics::{
    decay_fit, default_chi_grid, fourier_distance, kolmogorov_distance, ks_critical_1pct, ks_two_sample,
    ks_two_sample_critical_1pct, wasserstein_coupled, wasserstein_empirical, DecayFit, DistanceEstimate,
    EmpiricalMeasure, Estimator,
};
use crate::rng::{derive_seed, par_batches};
use crate::stable::{params_from_tails, StableParams};
use crate::wild::{
    coupled_pair_with, sample_v_t_with, truncation_mass, InitialDatum, SteadyQuantile, WeightArray, DEFAULT_N_CAP,
};

/// Smallest sample size accepted for distance estimation.
pub const MIN_SAMPLES: usize = 1000;
pub const DEFAULT_TOLERANCE: f64 = 0.03;
/// Largest admissible `P{N_t > cap}` at the last time of the grid.
pub const MAX_TRUNCATION_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Fit the decay of the first estimator and compare with the rate.
    #[default]
    Decay,
    /// The datum is the steady law; pass when every KS row is below the
    /// 1% critical value.
    Stationarity,
}

fn default_replicas() -> usize {
    1
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_cap() -> u64 {
    DEFAULT_N_CAP
}

fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Kernel spec, e.g. `uniform` or `deterministic:l=0.7071,r=0.7071`.
    pub kernel: String,
    /// Datum spec, e.g. `perturbed:eps=0.5:cauchy:scale=1,pos=0`.
    pub datum: String,
    /// Stable part of `μ∞`; derived from the datum when absent.
    #[serde(default)]
    pub stable: Option<StableParams>,
    #[serde(default)]
    pub kind: ExperimentKind,
    pub p: f64,
    #[serde(default)]
    pub regime: Option<Regime>,
    pub t_grid: Vec<f64>,
    pub samples: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Upper bound on `(t, replica)` units; the run stops early and is
    /// flagged partial when exceeded.
    #[serde(default)]
    pub replica_budget: Option<usize>,
    #[serde(default = "default_cap")]
    pub n_cap: u64,
    /// Size of the `M∞` pool when the mixing law is not `δ₁`.
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KacError::Config(m));
        if self.t_grid.is_empty() {
            return bad("t_grid is empty".into());
        }
        if self.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("t_grid entries must be finite and >= 0".into());
        }
        if self.t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("t_grid must be strictly increasing".into());
        }
        if self.samples < MIN_SAMPLES {
            return bad(format!("samples must be >= {MIN_SAMPLES}, got {}", self.samples));
        }
        if self.replicas == 0 {
            return bad("replicas must be >= 1".into());
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return bad(format!("p must be positive, got {}", self.p));
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        if self.kind == ExperimentKind::Stationarity && !self.estimators.contains(&Estimator::Ks) {
            return bad("a stationarity run needs the ks estimator".into());
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return bad(format!("tolerance must be >= 0, got {}", self.tolerance));
        }
        let t_max = *self.t_grid.last().expect("non-empty");
        let mass = truncation_mass(t_max, self.n_cap);
        if mass >= MAX_TRUNCATION_MASS {
            return bad(format!(
                "truncation mass {mass:e} at t = {t_max} exceeds {MAX_TRUNCATION_MASS:e}"
            ));
        }
        let kernel: CollisionKernel = self.kernel.parse()?;
        let datum: InitialDatum = self.datum.parse()?;
        datum.validate()?;
        let report = validate_h0(&kernel, self.p);
        let fatal: Vec<&str> = match self.kind {
            ExperimentKind::Decay => report.failures(),
            ExperimentKind::Stationarity => report
                .failures()
                .into_iter()
                .filter(|f| !f.starts_with("S(p)"))
                .collect(),
        };
        if !fatal.is_empty() {
            return bad(format!(
                "kernel {kernel} fails the standing assumption: {}",
                fatal.join(", ")
            ));
        }
        Ok(())
    }
}

/// One estimate at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: f64,
    pub estimate: DistanceEstimate,
    pub n_samples: usize,
    pub truncations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub kind: ExperimentKind,
    pub p: f64,
    pub rows: Vec<ReportRow>,
    pub fit: Option<DecayFit>,
    pub theory: Option<DecayRate>,
    pub tolerance: f64,
    pub pass: bool,
    pub partial: bool,
    pub truncation_events: u64,
    /// `P{N_t > cap}` at the largest time reached.
    pub truncation_mass: f64,
    pub notes: Vec<String>,
    /// Not part of emitted files, which must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl DecayReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// JSON summary written next to the CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub intercept: Option<f64>,
    pub theory_rate: Option<f64>,
    pub log_correction: bool,
    pub tolerance: f64,
    pub pass: bool,
    pub partial: bool,
    pub truncation_events: u64,
    pub notes: Vec<String>,
}

impl From<&DecayReport> for ReportSummary {
    fn from(r: &DecayReport) -> Self {
        Self {
            slope: r.fit.map(|f| f.slope),
            slope_stderr: r.fit.map(|f| f.slope_stderr),
            intercept: r.fit.map(|f| f.intercept),
            theory_rate: r.theory.map(|d| d.rate),
            log_correction: r.theory.is_some_and(|d| d.log_correction),
            tolerance: r.tolerance,
            pass: r.pass,
            partial: r.partial,
            truncation_events: r.truncation_events,
            notes: r.notes.clone(),
        }
    }
}

/// Regime implied by `(α, p)` for Wasserstein estimators.
pub fn default_regime(alpha: f64, p: f64, estimator: Estimator) -> Regime {
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    if estimator == Estimator::Chi {
        Regime::Chi
    } else if p <= 2.0 {
        Regime::WassersteinLow
    } else if alpha < 1.0 - 1e-9 {
        Regime::AlphaLt1
    } else if eq(alpha, 2.0) {
        Regime::AlphaEq2
    } else {
        Regime::AlphaIn1To2
    }
}

/// Stable part of `μ∞` from the datum: tail constants for `α < 2`, the
/// variance for `α = 2`.
pub fn steady_stable_from_datum(datum: &InitialDatum, alpha: f64) -> Result<StableParams> {
    if (alpha - 2.0).abs() <= 1e-9 {
        let var = datum.variance().ok_or_else(|| {
            KacError::Config(format!(
                "datum {datum} has no closed-form variance; give the stable law explicitly"
            ))
        })?;
        return StableParams::gaussian(var / 2.0);
    }
    let meta = datum.metadata();
    let mut st = params_from_tails(meta.c0_plus, meta.c0_minus, alpha)?;
    if (alpha - 1.0).abs() <= 1e-9 {
        st.gamma0 = meta.gamma0;
    }
    Ok(st)
}

struct Setup {
    kernel: CollisionKernel,
    datum: InitialDatum,
    stable: StableParams,
    law: MixtureLaw,
    exact: Option<SteadyQuantile>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let kernel: CollisionKernel = cfg.kernel.parse()?;
    let datum: InitialDatum = cfg.datum.parse()?;
    let alpha = find_alpha(&kernel)?;
    let stable = match cfg.stable {
        Some(s) => s,
        None => steady_stable_from_datum(&datum, alpha)?,
    };
    if (stable.alpha - alpha).abs() > 1e-6 {
        return Err(KacError::Config(format!(
            "stable α = {} but the kernel has α = {alpha}",
            stable.alpha
        )));
    }
    let conserving = kernel.conserves_alpha_power(stable.alpha);
    let law = if conserving {
        MixtureLaw::point_mass(stable.alpha)
    } else {
        build_pool_adaptive(&kernel, stable.alpha, cfg.pool_size, derive_seed(cfg.seed, u64::MAX))?
    };
    let exact = SteadyQuantile::exact(stable, conserving).ok();
    Ok(Setup {
        kernel,
        datum,
        stable,
        law,
        exact,
    })
}

fn draw_v_t(s: &Setup, t: f64, n: usize, cap: u64, seed: u64) -> (Vec<f64>, u64) {
    let out = par_batches(seed, n, |rng, _, len| {
        let mut buf = WeightArray::new();
        (0..len)
            .map(|_| sample_v_t_with(&s.kernel, &s.datum, t, cap, &mut buf, rng))
            .collect()
    });
    let truncated = out.iter().filter(|v| v.is_none()).count() as u64;
    (out.into_iter().flatten().collect(), truncated)
}

fn draw_steady(s: &Setup, n: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = SteadySampler::new(&s.law, &s.stable)?;
    Ok(par_batches(seed, n, |rng, _, len| {
        (0..len).map(|_| sampler.sample(rng)).collect()
    }))
}

fn estimate_once(
    s: &Setup,
    cfg: &ExperimentConfig,
    est: Estimator,
    t: f64,
    seed: u64,
) -> Result<(DistanceEstimate, usize, u64)> {
    let n = cfg.samples;
    let p = cfg.p;
    match est {
        Estimator::Coupled => {
            let steady = s.exact.ok_or_else(|| {
                KacError::CouplingUnavailable("the coupled estimator needs an exact steady quantile".into())
            })?;
            let out = par_batches(seed, n, |rng, _, len| {
                let mut buf = WeightArray::new();
                (0..len)
                    .map(|_| coupled_pair_with(&s.kernel, &s.datum, &steady, t, cfg.n_cap, &mut buf, rng))
                    .collect()
            });
            let truncated = out.iter().filter(|v| v.is_none()).count() as u64;
            let pairs: Vec<(f64, f64)> = out.into_iter().flatten().collect();
            Ok((wasserstein_coupled(&pairs, p)?, pairs.len(), truncated))
        }
        Estimator::Quantile => {
            let (v, truncated) = draw_v_t(s, t, n, cfg.n_cap, seed);
            let w = draw_steady(s, n, derive_seed(seed, 1))?;
            let a = EmpiricalMeasure::new(v)?.with_source(t, seed);
            let b = EmpiricalMeasure::new(w)?;
            Ok((wasserstein_empirical(&a, &b, p)?, a.len(), truncated))
        }
        Estimator::Ks => {
            let (v, truncated) = draw_v_t(s, t, n, cfg.n_cap, seed);
            let a = EmpiricalMeasure::new(v)?.with_source(t, seed);
            let value = match &s.exact {
                Some(q) => kolmogorov_distance(&a, |x| q.cdf(x)),
                None => {
                    let mut w = draw_steady(s, n, derive_seed(seed, 1))?;
                    w.sort_by(f64::total_cmp);
                    ks_two_sample(a.values(), &w)
                }
            };
            let est = DistanceEstimate {
                value,
                stderr: None,
                estimator: Estimator::Ks,
                p,
                upper_bound: false,
            };
            Ok((est, a.len(), truncated))
        }
        Estimator::Chi => {
            let (v, truncated) = draw_v_t(s, t, n, cfg.n_cap, seed);
            let a = EmpiricalMeasure::new(v)?.with_source(t, seed);
            let grid = default_chi_grid();
            let value = fourier_distance(|x| a.cf(x), |x| steady_cf(&s.law, &s.stable, x), p, &grid);
            let est = DistanceEstimate {
                value,
                stderr: None,
                estimator: Estimator::Chi,
                p,
                upper_bound: false,
            };
            Ok((est, a.len(), truncated))
        }
    }
}

/// Combines replica estimates: their mean, with the spread across
/// replicas as standard error when there is more than one.
fn combine(parts: &[DistanceEstimate]) -> DistanceEstimate {
    let r = parts.len() as f64;
    let mean = parts.iter().map(|e| e.value).sum::<f64>() / r;
    let stderr = if parts.len() > 1 {
        let ss: f64 = parts.iter().map(|e| (e.value - mean).powi(2)).sum();
        Some((ss / (r - 1.0) / r).sqrt())
    } else {
        parts[0].stderr
    };
    DistanceEstimate {
        value: mean,
        stderr,
        ..parts[0]
    }
}

/// Runs the experiment. Fully determined by the config: every `(t,
/// estimator, replica)` cell draws from its own seed derived from
/// `config.seed`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<DecayReport> {
    cfg.validate()?;
    let start = Instant::now();
    let s = setup(cfg)?;
    let mut notes = Vec::new();
    let mut rows = Vec::new();
    let mut partial = false;
    let mut used = 0usize;
    let mut truncation_events = 0;
    let mut t_reached = 0.0;

    'grid: for (ti, &t) in cfg.t_grid.iter().enumerate() {
        for (ei, &est) in cfg.estimators.iter().enumerate() {
            let mut parts = Vec::with_capacity(cfg.replicas);
            let mut n_total = 0;
            let mut trunc = 0;
            for rep in 0..cfg.replicas {
                if cfg.replica_budget.is_some_and(|b| used >= b) {
                    partial = true;
                    notes.push(format!("replica budget exhausted at t = {t}"));
                    break 'grid;
                }
                used += 1;
                let cell = (ti * cfg.estimators.len() + ei) * cfg.replicas + rep;
                let seed = derive_seed(cfg.seed, cell as u64);
                let (e, n, tr) = estimate_once(&s, cfg, est, t, seed).map_err(|e| KacError::Experiment {
                    t,
                    replica: rep,
                    source: Box::new(e),
                })?;
                parts.push(e);
                n_total += n;
                trunc += tr;
            }
            truncation_events += trunc;
            rows.push(ReportRow {
                t,
                estimate: combine(&parts),
                n_samples: n_total,
                truncations: trunc,
            });
        }
        t_reached = t;
    }

    let primary = cfg.estimators[0];
    let primary_rows: Vec<&ReportRow> = rows.iter().filter(|r| r.estimate.estimator == primary).collect();
    let times: Vec<f64> = primary_rows.iter().map(|r| r.t).collect();
    let values: Vec<f64> = primary_rows.iter().map(|r| r.estimate.value).collect();
    let errs: Vec<f64> = primary_rows.iter().map(|r| r.estimate.stderr.unwrap_or(0.0)).collect();
    let fit = match decay_fit(&times, &values, &errs) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("no decay fit: {e}"));
            None
        }
    };
    let regime = cfg
        .regime
        .unwrap_or_else(|| default_regime(s.stable.alpha, cfg.p, primary));
    let theory = match rate_constant_with_alpha(&s.kernel, s.stable.alpha, cfg.p, regime) {
        Ok(r) => Some(r),
        Err(e) => {
            if cfg.kind == ExperimentKind::Decay {
                notes.push(format!("no theoretical rate: {e}"));
            }
            None
        }
    };
    let pass = match cfg.kind {
        ExperimentKind::Decay => match (fit, theory) {
            (Some(f), Some(r)) => f.slope <= -r.rate + cfg.tolerance,
            _ => false,
        },
        ExperimentKind::Stationarity => rows.iter().filter(|r| r.estimate.estimator == Estimator::Ks).all(|r| {
            // without an exact cdf the rows are two-sample statistics
            // against `samples` steady draws
            let critical = match s.exact {
                Some(_) => ks_critical_1pct(r.n_samples),
                None => ks_two_sample_critical_1pct(r.n_samples, cfg.samples),
            };
            r.estimate.value < critical
        }),
    } && !partial;

    Ok(DecayReport {
        kind: cfg.kind,
        p: cfg.p,
        rows,
        fit,
        theory,
        tolerance: cfg.tolerance,
        pass,
        partial,
        truncation_events,
        truncation_mass: truncation_mass(t_reached, cfg.n_cap),
        notes,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Csv,
    Json,
    #[default]
    Both,
}

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Writes `report.csv` (`t,p,estimate,stderr,n_samples,estimator`) and/or
/// `summary.json` into `dir` and returns the paths written.
pub fn emit_report(report: &DecayReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let path = dir.join(REPORT_CSV);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["t", "p", "estimate", "stderr", "n_samples", "estimator"])?;
        for r in &report.rows {
            w.write_record([
                r.t.to_string(),
                report.p.to_string(),
                r.estimate.value.to_string(),
                r.estimate.stderr.map(|s| s.to_string()).unwrap_or_default(),
                r.n_samples.to_string(),
                r.estimate.estimator.name().to_string(),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join(SUMMARY_JSON);
        let mut f = File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, &ReportSummary::from(report))?;
        f.write_all(b"\n")?;
        written.push(path);
    }
    Ok(written)
}

/// Reads one column of numbers from a CSV with a header: `value` if present,
/// else `estimate`, else the last column.
pub fn read_values_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(KacError::Parse(format!("{} has no header", path.display())));
    }
    let col = headers
        .iter()
        .position(|h| h.trim() == "value")
        .or_else(|| headers.iter().position(|h| h.trim() == "estimate"))
        .unwrap_or(headers.len() - 1);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec
            .get(col)
            .ok_or_else(|| KacError::Parse(format!("row {} is short", line + 2)))?;
        let v = field
            .trim()
            .parse::<f64>()
            .map_err(|_| KacError::Parse(format!("row {}: {field:?} is not a number", line + 2)))?;
        out.push(v);
    }
    Ok(out)
}

/// Writes `sample_index,value` rows.
pub fn write_samples_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

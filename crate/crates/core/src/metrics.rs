//! Distance estimators: Wasserstein (quantile and coupled), Kolmogorov,
//! Fourier χ_s, and log-linear decay fitting.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};

/// Above this size the exact assignment for `p < 1` is skipped and the
/// quantile coupling is reported as an upper bound.
pub const ASSIGNMENT_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    values: Vec<f64>,
    pub t: Option<f64>,
    pub seed: Option<u64>,
}

impl EmpiricalMeasure {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(KacError::InvalidParameter(
                "empirical measure needs at least one value".into(),
            ));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(KacError::InvalidParameter("empirical measure contains NaN".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            values,
            t: None,
            seed: None,
        })
    }

    pub fn with_source(mut self, t: f64, seed: u64) -> Self {
        self.t = Some(t);
        self.seed = Some(seed);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Left-continuous quantile `inf{x : F̂(x) >= u}`.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.values.len();
        let idx = ((u * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[idx]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Empirical characteristic function.
    pub fn cf(&self, xi: f64) -> Complex64 {
        let (c, s) = self
            .values
            .iter()
            .fold((0.0, 0.0), |(c, s), x| (c + (xi * x).cos(), s + (xi * x).sin()));
        Complex64::new(c, s) / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Quantile,
    Coupled,
    Ks,
    Chi,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Quantile => "quantile",
            Self::Coupled => "coupled",
            Self::Ks => "ks",
            Self::Chi => "chi",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = KacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quantile" => Ok(Self::Quantile),
            "coupled" => Ok(Self::Coupled),
            "ks" => Ok(Self::Ks),
            "chi" => Ok(Self::Chi),
            other => Err(KacError::Parse(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub stderr: Option<f64>,
    pub estimator: Estimator,
    pub p: f64,
    /// Set when `value` is only known to dominate the true distance.
    #[serde(default)]
    pub upper_bound: bool,
}

fn exponent(p: f64) -> f64 {
    (1.0 / p).min(1.0)
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(KacError::InvalidParameter(format!("order p must be positive, got {p}")))
    }
}

/// Minimal `L_p` distance `(E|X - Y|^p)^{1 ∧ 1/p}` between two empirical
/// measures.
///
/// For `p >= 1` the monotone (quantile) coupling is optimal; unequal sample
/// sizes are handled exactly by integrating over the merged quantile
/// breakpoints. For `p < 1` the cost is concave and sorting is no longer
/// optimal, so equal-size inputs up to [`ASSIGNMENT_LIMIT`] points are solved
/// by exact assignment; larger ones fall back to the quantile coupling and
/// are flagged as upper bounds.
pub fn wasserstein_empirical(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> Result<DistanceEstimate> {
    check_p(p)?;
    let e = exponent(p);
    let mut upper_bound = false;
    let cost = if p < 1.0 && a.len() == b.len() && a.len() <= ASSIGNMENT_LIMIT {
        let n = a.len();
        let (_, total) = min_cost_assignment(n, |i, j| (a.values[i] - b.values[j]).abs().powf(p));
        total / n as f64
    } else {
        upper_bound = p < 1.0;
        quantile_cost(a.values(), b.values(), p)
    };
    Ok(DistanceEstimate {
        value: cost.powf(e),
        stderr: None,
        estimator: Estimator::Quantile,
        p,
        upper_bound,
    })
}

/// `∫₀¹ |Q_a(u) - Q_b(u)|^p du` for two sorted samples.
pub fn quantile_cost(a: &[f64], b: &[f64], p: f64) -> f64 {
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / na as f64;
    }
    // walk the union of breakpoints i/na and j/nb using integer arithmetic
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let denom = (na as u128) * (nb as u128);
    let mut total = 0.0;
    while i < na && j < nb {
        let next_a = (i as u128 + 1) * nb as u128;
        let next_b = (j as u128 + 1) * na as u128;
        let next = next_a.min(next_b);
        total += (next - prev) as f64 / denom as f64 * (a[i] - b[j]).abs().powf(p);
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    total
}

/// Hungarian algorithm with potentials; returns the assignment
/// `row -> column` and its total cost.
pub fn min_cost_assignment<F: Fn(usize, usize) -> f64>(n: usize, cost: F) -> (Vec<usize>, f64) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    (assignment, total)
}

/// `(mean |v - w|^p)^{1 ∧ 1/p}` over coupled pairs, with a jackknife
/// standard error. Any coupling dominates the optimal one, so this is an
/// upper-bound estimate.
pub fn wasserstein_coupled(pairs: &[(f64, f64)], p: f64) -> Result<DistanceEstimate> {
    check_p(p)?;
    if pairs.is_empty() {
        return Err(KacError::InvalidParameter("no coupled pairs".into()));
    }
    let costs: Vec<f64> = pairs.iter().map(|(v, w)| (v - w).abs().powf(p)).collect();
    coupled_from_costs(&costs, p)
}

/// Same as [`wasserstein_coupled`] starting from the per-pair costs `|v-w|^p`.
pub fn coupled_from_costs(costs: &[f64], p: f64) -> Result<DistanceEstimate> {
    check_p(p)?;
    let n = costs.len();
    if n == 0 {
        return Err(KacError::InvalidParameter("no coupled pairs".into()));
    }
    let e = exponent(p);
    let sum: f64 = costs.iter().sum();
    let value = (sum / n as f64).powf(e);
    let stderr = (n > 1).then(|| {
        let loo: Vec<f64> = costs
            .iter()
            .map(|c| ((sum - c) / (n - 1) as f64).max(0.0).powf(e))
            .collect();
        let mean = loo.iter().sum::<f64>() / n as f64;
        let ss: f64 = loo.iter().map(|x| (x - mean) * (x - mean)).sum();
        ((n - 1) as f64 / n as f64 * ss).sqrt()
    });
    Ok(DistanceEstimate {
        value,
        stderr,
        estimator: Estimator::Coupled,
        p,
        upper_bound: true,
    })
}

/// `sup_x |F̂(x) - F(x)|`, evaluated on both sides of every jump.
pub fn kolmogorov_distance<F: Fn(f64) -> f64>(a: &EmpiricalMeasure, cdf: F) -> f64 {
    let n = a.len() as f64;
    let v = a.values();
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        // group ties so the jump is taken as a whole
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        // compare both one-sided limits so step cdfs are handled exactly
        let f = cdf(v[i]);
        let f_left = cdf(v[i].next_down());
        d = d.max((f_left - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Two-sample Kolmogorov–Smirnov statistic of sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_two_sample_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// 64 log-spaced frequencies in `[1e-3, 1e2]`.
pub fn default_chi_grid() -> Vec<f64> {
    log_grid(1e-3, 1e2, 64)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Grid maximum of `|a(ξ) - b(ξ)| / |ξ|^s`, a lower bound of `χ_s`.
pub fn fourier_distance<A, B>(cf_a: A, cf_b: B, s: f64, grid: &[f64]) -> f64
where
    A: Fn(f64) -> Complex64,
    B: Fn(f64) -> Complex64,
{
    grid.iter()
        .filter(|xi| **xi != 0.0)
        .map(|&xi| (cf_a(xi) - cf_b(xi)).norm() / xi.abs().powf(s))
        .fold(0.0, f64::max)
}

/// Refines `grid` by inserting geometric midpoints until the grid maximum
/// changes by less than 1%, at most `max_rounds` times.
pub fn fourier_distance_refined<A, B>(cf_a: A, cf_b: B, s: f64, grid: &[f64], max_rounds: usize) -> f64
where
    A: Fn(f64) -> Complex64,
    B: Fn(f64) -> Complex64,
{
    let mut g: Vec<f64> = grid.iter().copied().filter(|x| *x > 0.0).collect();
    g.sort_by(f64::total_cmp);
    let mut value = fourier_distance(&cf_a, &cf_b, s, &g);
    for _ in 0..max_rounds {
        let mut finer = Vec::with_capacity(2 * g.len());
        for w in g.windows(2) {
            finer.push(w[0]);
            finer.push((w[0] * w[1]).sqrt());
        }
        finer.extend(g.last());
        let next = fourier_distance(&cf_a, &cf_b, s, &finer);
        g = finer;
        let done = next <= value * 1.01;
        value = next;
        if done {
            break;
        }
    }
    value
}

/// The constant `C(δ, M₂)` bounding `d₁ <= C χ_{2+δ}^{1/(3(2+δ))}`.
pub fn d1_chi_constant(second_moment_bound: f64, delta: f64) -> f64 {
    let q = 2.0 + delta;
    (2f64.powf(2.0 / 3.0) + 2f64.powf(-1.0 / 3.0))
        * second_moment_bound.cbrt()
        * std::f64::consts::FRAC_1_PI
        * (2f64.powf((3.0 + 2.0 * delta) / q) / (3.0 + 2.0 * delta) + 4.0 / 2f64.powf(1.0 / q))
}

/// Bound on `d₁` from a Fourier distance of order `2 + δ`.
pub fn d1_bound_from_chi(chi_value: f64, second_moment_bound: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(KacError::InvalidParameter(format!("δ must lie in (0, 1), got {delta}")));
    }
    if !(second_moment_bound >= 0.0 && second_moment_bound.is_finite()) {
        return Err(KacError::InvalidParameter("second moment bound must be finite".into()));
    }
    if !(chi_value >= 0.0) {
        return Err(KacError::InvalidParameter("χ value must be >= 0".into()));
    }
    let q = 2.0 + delta;
    Ok(d1_chi_constant(second_moment_bound, delta) * chi_value.powf(1.0 / (3.0 * q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square of the log residuals.
    pub residual: f64,
    pub slope_stderr: f64,
    pub used: usize,
}

/// Weighted least squares of `ln(estimate)` on `t`, weights `(estimate/stderr)²`.
///
/// Points with `estimate <= 3 stderr` are dropped as noise-dominated. When
/// every stderr is zero the fit is unweighted.
pub fn decay_fit(times: &[f64], estimates: &[f64], stderrs: &[f64]) -> Result<DecayFit> {
    if times.len() != estimates.len() || times.len() != stderrs.len() {
        return Err(KacError::InvalidParameter("decay_fit inputs differ in length".into()));
    }
    let pts: Vec<(f64, f64, f64)> = times
        .iter()
        .zip(estimates)
        .zip(stderrs)
        .filter(|((_, e), s)| **e > 0.0 && e.is_finite() && **e > 3.0 * s.max(0.0))
        .map(|((t, e), s)| (*t, *e, s.max(0.0)))
        .collect();
    if pts.len() < 4 {
        return Err(KacError::FitUnavailable { usable: pts.len() });
    }
    let all_exact = pts.iter().all(|p| p.2 == 0.0);
    let w_max = pts
        .iter()
        .filter(|p| p.2 > 0.0)
        .map(|p| (p.1 / p.2).powi(2))
        .fold(0.0, f64::max);
    let weights: Vec<f64> = pts
        .iter()
        .map(|p| {
            if all_exact {
                1.0
            } else if p.2 > 0.0 {
                (p.1 / p.2).powi(2)
            } else {
                w_max
            }
        })
        .collect();
    let sw: f64 = weights.iter().sum();
    let tbar = pts.iter().zip(&weights).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let ybar = pts.iter().zip(&weights).map(|(p, w)| w * p.1.ln()).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&weights).map(|(p, w)| w * (p.0 - tbar).powi(2)).sum();
    let sxy: f64 = pts
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * (p.0 - tbar) * (p.1.ln() - ybar))
        .sum();
    if sxx <= 0.0 {
        return Err(KacError::FitUnavailable { usable: pts.len() });
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * tbar;
    let resid: Vec<f64> = pts.iter().map(|p| p.1.ln() - intercept - slope * p.0).collect();
    let residual = (resid.iter().map(|r| r * r).sum::<f64>() / pts.len() as f64).sqrt();
    let slope_stderr = if all_exact {
        let dof = (pts.len() - 2) as f64;
        (resid.iter().map(|r| r * r).sum::<f64>() / dof / sxx).sqrt()
    } else {
        (1.0 / sxx).sqrt()
    };
    Ok(DecayFit {
        slope,
        intercept,
        residual,
        slope_stderr,
        used: pts.len(),
    })
}

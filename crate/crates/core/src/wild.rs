//! Exact sampling of the solution `μ_t` through its random weighted-sum
//! representation `V_t = Σ_{j ≤ N_t} β_{j,N_t} X_j`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kernel::{kv_get, parse_f64, parse_kv, CollisionKernel};
use crate::numerics::gamma_ratio_moment;
use crate::rng::par_batches;
use crate::stable::{cauchy_quantile, gaussian_quantile, StableParams};

/// Largest tree grown by the samplers. Larger draws of `N_t` are discarded
/// and counted as truncation events.
pub const DEFAULT_N_CAP: u64 = 1 << 20;

/// The weights `β_{1,n}, …, β_{n,n}` of a random binary tree with `n` leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArray {
    weights: Vec<f64>,
}

impl Default for WeightArray {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightArray {
    /// The one-leaf array `[1]`.
    pub fn new() -> Self {
        Self { weights: vec![1.0] }
    }

    pub fn with_capacity(cap: usize) -> Self {
        let mut weights = Vec::with_capacity(cap.max(1));
        weights.push(1.0);
        Self { weights }
    }

    /// An array holding the given non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(KacError::InvalidParameter(
                "weights must be a non-empty list of finite values >= 0".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn reset(&mut self) {
        self.weights.clear();
        self.weights.push(1.0);
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Replaces entry `index` by `β l` and appends `β r`.
    pub fn split(&mut self, index: usize, l: f64, r: f64) {
        let b = self.weights[index];
        self.weights[index] = b * l;
        self.weights.push(b * r);
    }

    /// Performs `steps` splits at uniformly chosen entries with fresh pairs
    /// drawn by `pair`.
    pub fn grow_with<R, F>(&mut self, steps: usize, rng: &mut R, mut pair: F)
    where
        R: Rng + ?Sized,
        F: FnMut(&mut R) -> (f64, f64),
    {
        self.weights.reserve(steps);
        for _ in 0..steps {
            let i = rng.random_range(0..self.weights.len());
            let (l, r) = pair(rng);
            self.split(i, l, r);
        }
    }

    pub fn grow<R: Rng + ?Sized>(&mut self, kernel: &CollisionKernel, steps: usize, rng: &mut R) {
        self.grow_with(steps, rng, |g| kernel.sample(g));
    }

    /// Grows the array of `β^p` directly, i.e. with pairs `(L^p, R^p)`.
    pub fn grow_powered<R: Rng + ?Sized>(&mut self, kernel: &CollisionKernel, p: f64, steps: usize, rng: &mut R) {
        let powered = PoweredSampler::new(kernel, p);
        self.grow_with(steps, rng, |g| powered.sample(g));
    }

    pub fn power_sum(&self, p: f64) -> f64 {
        self.weights.iter().map(|b| crate::numerics::pow0(*b, p)).sum()
    }
}

/// Samples `(L^p, R^p)`, with powers of discrete atoms computed once.
pub(crate) struct PoweredSampler<'a> {
    kernel: &'a CollisionKernel,
    p: f64,
    atoms: Option<Vec<crate::kernel::Atom>>,
}

impl<'a> PoweredSampler<'a> {
    pub(crate) fn new(kernel: &'a CollisionKernel, p: f64) -> Self {
        let atoms = kernel.atoms().map(|atoms| {
            atoms
                .into_iter()
                .map(|a| crate::kernel::Atom {
                    l: crate::numerics::pow0(a.l, p),
                    r: crate::numerics::pow0(a.r, p),
                    w: a.w,
                })
                .collect()
        });
        Self { kernel, p, atoms }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match &self.atoms {
            Some(atoms) if atoms.len() == 1 => (atoms[0].l, atoms[0].r),
            Some(atoms) => {
                let a = crate::kernel::pick_atom(atoms, rng.random());
                (a.l, a.r)
            }
            None => {
                let (l, r) = self.kernel.sample(rng);
                (crate::numerics::pow0(l, self.p), crate::numerics::pow0(r, self.p))
            }
        }
    }
}

/// Grows a fresh array to `n` leaves.
pub fn grow_weights<R: Rng + ?Sized>(kernel: &CollisionKernel, n: usize, rng: &mut R) -> WeightArray {
    let mut w = WeightArray::with_capacity(n);
    w.grow(kernel, n.saturating_sub(1), rng);
    w
}

/// `N_t` with `P{N_t = n} = e^{-t}(1 - e^{-t})^{n-1}`, by inversion.
pub fn sample_n_t<R: Rng + ?Sized>(t: f64, rng: &mut R) -> u64 {
    if t <= 0.0 {
        return 1;
    }
    let u = 1.0 - rng.random::<f64>(); // (0, 1]
    let log_q = (-(-t).exp()).ln_1p(); // ln(1 - e^{-t})
    if log_q == 0.0 {
        return u64::MAX;
    }
    let k = (u.ln() / log_q).floor();
    if k >= (u64::MAX - 1) as f64 {
        u64::MAX
    } else {
        1 + k as u64
    }
}

/// `P{N_t > cap}`, the mass discarded by the truncation rule.
pub fn truncation_mass(t: f64, cap: u64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    (cap as f64 * (-(-t).exp()).ln_1p()).exp()
}

/// The initial law `μ̄₀`. Every variant is sampled through its quantile
/// function so the same uniform can drive coupled draws.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDatum {
    PointMass(f64),
    UniformInterval {
        a: f64,
        b: f64,
    },
    Gaussian {
        mean: f64,
        var: f64,
    },
    Cauchy {
        scale: f64,
        position: f64,
    },
    /// Symmetric law with survival `c₀/x^α` beyond `x_c` and a uniform body.
    ParetoSymmetric {
        alpha: f64,
        c0: f64,
    },
    /// `Q(u) + ε(2u - 1)` for a base quantile `Q`.
    PerturbedQuantile {
        base: Box<InitialDatum>,
        eps: f64,
    },
    /// Piecewise-linear quantile through equally spaced nodes `u_k = k/(m-1)`.
    QuantileTable(Vec<f64>),
}

/// Tail and centring data `(c₀⁺, c₀⁻, γ₀)` of a datum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatumMetadata {
    pub c0_plus: f64,
    pub c0_minus: f64,
    pub gamma0: f64,
}

impl InitialDatum {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KacError::InvalidParameter(msg));
        match self {
            Self::PointMass(a) if !a.is_finite() => bad("point mass must be finite".into()),
            Self::UniformInterval { a, b } if !(a < b) || !b.is_finite() || !a.is_finite() => {
                bad(format!("uniform interval needs a < b, got [{a}, {b}]"))
            }
            Self::Gaussian { mean, var } if !(*var > 0.0) || !mean.is_finite() || !var.is_finite() => {
                bad(format!("gaussian needs var > 0, got {var}"))
            }
            Self::Cauchy { scale, position } if !(*scale > 0.0) || !position.is_finite() || !scale.is_finite() => {
                bad(format!("cauchy needs scale > 0, got {scale}"))
            }
            Self::ParetoSymmetric { alpha, c0 }
                if !(*alpha > 0.0 && *alpha <= 2.0) || !(*c0 > 0.0) || !c0.is_finite() =>
            {
                bad(format!("pareto needs 0 < α <= 2 and c0 > 0, got ({alpha}, {c0})"))
            }
            Self::PerturbedQuantile { base, eps } => {
                if !(eps.is_finite() && *eps >= 0.0) {
                    return bad(format!("perturbation amplitude must be >= 0, got {eps}"));
                }
                base.validate()
            }
            Self::QuantileTable(q) => {
                if q.len() < 2 || q.windows(2).any(|w| !(w[0] <= w[1])) || q.iter().any(|x| !x.is_finite()) {
                    bad("quantile table needs >= 2 finite non-decreasing nodes".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn pareto_cutoff(alpha: f64, c0: f64) -> (f64, f64) {
        let m = 0.5 / (1.0 + alpha);
        ((c0 / m).powf(1.0 / alpha), m)
    }

    /// `F₀^{-1}(u)` for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::PointMass(a) => *a,
            Self::UniformInterval { a, b } => a + (b - a) * u,
            Self::Gaussian { mean, var } => mean + gaussian_quantile(u, var.sqrt()),
            Self::Cauchy { scale, position } => position + cauchy_quantile(u, *scale),
            Self::ParetoSymmetric { alpha, c0 } => {
                let (xc, m) = Self::pareto_cutoff(*alpha, *c0);
                if u < m {
                    -(c0 / u).powf(1.0 / alpha)
                } else if u > 1.0 - m {
                    (c0 / (1.0 - u)).powf(1.0 / alpha)
                } else {
                    -xc + 2.0 * xc * (u - m) / (1.0 - 2.0 * m)
                }
            }
            Self::PerturbedQuantile { base, eps } => base.quantile(u) + eps * (2.0 * u - 1.0),
            Self::QuantileTable(q) => {
                let pos = u.clamp(0.0, 1.0) * (q.len() - 1) as f64;
                let k = (pos.floor() as usize).min(q.len() - 2);
                let f = pos - k as f64;
                q[k] + f * (q[k + 1] - q[k])
            }
        }
    }

    /// CDF where it has a closed form.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        Some(match self {
            Self::PointMass(a) => f64::from(u8::from(x >= *a)),
            Self::UniformInterval { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Self::Gaussian { mean, var } => crate::stable::gaussian_cdf(x - mean, var.sqrt()),
            Self::Cauchy { scale, position } => crate::stable::cauchy_cdf(x - position, *scale),
            Self::ParetoSymmetric { alpha, c0 } => {
                let (xc, m) = Self::pareto_cutoff(*alpha, *c0);
                if x <= -xc {
                    c0 / (-x).powf(*alpha)
                } else if x >= xc {
                    1.0 - c0 / x.powf(*alpha)
                } else {
                    m + (1.0 - 2.0 * m) * (x + xc) / (2.0 * xc)
                }
            }
            _ => return None,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open_uniform(rng))
    }

    pub fn metadata(&self) -> DatumMetadata {
        let zero = |g: f64| DatumMetadata {
            c0_plus: 0.0,
            c0_minus: 0.0,
            gamma0: g,
        };
        match self {
            Self::PointMass(a) => zero(*a),
            Self::UniformInterval { a, b } => zero(0.5 * (a + b)),
            Self::Gaussian { mean, .. } => zero(*mean),
            Self::Cauchy { scale, position } => DatumMetadata {
                c0_plus: scale / std::f64::consts::PI,
                c0_minus: scale / std::f64::consts::PI,
                gamma0: *position,
            },
            Self::ParetoSymmetric { c0, .. } => DatumMetadata {
                c0_plus: *c0,
                c0_minus: *c0,
                gamma0: 0.0,
            },
            // g(u) = 2u - 1 is bounded with zero mean
            Self::PerturbedQuantile { base, .. } => base.metadata(),
            Self::QuantileTable(q) => {
                let mean = q.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / (q.len() - 1) as f64;
                zero(mean)
            }
        }
    }

    /// Variance where it is finite and known in closed form.
    pub fn variance(&self) -> Option<f64> {
        match self {
            Self::PointMass(_) => Some(0.0),
            Self::UniformInterval { a, b } => Some((b - a) * (b - a) / 12.0),
            Self::Gaussian { var, .. } => Some(*var),
            _ => None,
        }
    }

    /// Characteristic function `E e^{iξX}` where it has a closed form.
    pub fn cf(&self, xi: f64) -> Option<Complex64> {
        let i = Complex64::i();
        // ∫₀¹ e^{iξ(a + sΔ)} ds
        let segment = |a: f64, delta: f64| {
            let z = xi * delta;
            let avg = if z.abs() < 1e-8 {
                Complex64::new(1.0, 0.5 * z)
            } else {
                ((i * z).exp() - 1.0) / (i * z)
            };
            (i * xi * a).exp() * avg
        };
        Some(match self {
            Self::PointMass(a) => (i * xi * a).exp(),
            Self::UniformInterval { a, b } => segment(*a, b - a),
            Self::Gaussian { mean, var } => (i * xi * mean).exp() * (-0.5 * var * xi * xi).exp(),
            Self::Cauchy { scale, position } => (i * xi * position).exp() * (-scale * xi.abs()).exp(),
            Self::QuantileTable(q) => {
                let m = (q.len() - 1) as f64;
                q.windows(2).map(|w| segment(w[0], w[1] - w[0])).sum::<Complex64>() / m
            }
            _ => return None,
        })
    }
}

/// A uniform in the open interval `(0, 1)`.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

impl fmt::Display for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PointMass(a) => write!(f, "point:a={a}"),
            Self::UniformInterval { a, b } => write!(f, "uniform:a={a},b={b}"),
            Self::Gaussian { mean, var } => write!(f, "gaussian:mean={mean},var={var}"),
            Self::Cauchy { scale, position } => write!(f, "cauchy:scale={scale},pos={position}"),
            Self::ParetoSymmetric { alpha, c0 } => write!(f, "pareto-sym:alpha={alpha},c0={c0}"),
            Self::PerturbedQuantile { base, eps } => write!(f, "perturbed:eps={eps}:{base}"),
            Self::QuantileTable(q) => {
                write!(f, "table:")?;
                for (i, x) in q.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for InitialDatum {
    type Err = KacError;

    fn from_str(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, body) = spec.split_once(':').unwrap_or((spec, ""));
        let datum = match head {
            "point" => Self::PointMass(kv_get(&parse_kv(body)?, "a", spec)?),
            "uniform" => {
                let kv = parse_kv(body)?;
                Self::UniformInterval {
                    a: kv_get(&kv, "a", spec)?,
                    b: kv_get(&kv, "b", spec)?,
                }
            }
            "gaussian" => {
                let kv = parse_kv(body)?;
                Self::Gaussian {
                    mean: kv_get(&kv, "mean", spec)?,
                    var: kv_get(&kv, "var", spec)?,
                }
            }
            "cauchy" => {
                let kv = parse_kv(body)?;
                Self::Cauchy {
                    scale: kv_get(&kv, "scale", spec)?,
                    position: kv.iter().find(|(k, _)| k == "pos").map_or(0.0, |(_, v)| *v),
                }
            }
            "pareto-sym" => {
                let kv = parse_kv(body)?;
                Self::ParetoSymmetric {
                    alpha: kv_get(&kv, "alpha", spec)?,
                    c0: kv_get(&kv, "c0", spec)?,
                }
            }
            "perturbed" => {
                let (eps_part, base) = body
                    .split_once(':')
                    .ok_or_else(|| KacError::Parse(format!("perturbed datum needs eps=<f>:<base>, got {spec:?}")))?;
                let eps = kv_get(&parse_kv(eps_part)?, "eps", spec)?;
                Self::PerturbedQuantile {
                    base: Box::new(base.parse()?),
                    eps,
                }
            }
            "table" => Self::QuantileTable(body.split(',').map(parse_f64).collect::<Result<_>>()?),
            _ => return Err(KacError::Parse(format!("unknown datum spec {spec:?}"))),
        };
        datum.validate()?;
        Ok(datum)
    }
}

/// Draws `V_t`; `None` when `N_t` exceeds `cap` (a truncation event).
pub fn sample_v_t<R: Rng + ?Sized>(
    kernel: &CollisionKernel,
    datum: &InitialDatum,
    t: f64,
    cap: u64,
    rng: &mut R,
) -> Option<f64> {
    let mut buf = WeightArray::new();
    sample_v_t_with(kernel, datum, t, cap, &mut buf, rng)
}

/// As [`sample_v_t`], reusing `buf` for the weights.
pub fn sample_v_t_with<R: Rng + ?Sized>(
    kernel: &CollisionKernel,
    datum: &InitialDatum,
    t: f64,
    cap: u64,
    buf: &mut WeightArray,
    rng: &mut R,
) -> Option<f64> {
    let n = sample_n_t(t, rng);
    if n > cap {
        return None;
    }
    buf.reset();
    buf.grow(kernel, (n - 1) as usize, rng);
    Some(buf.weights.iter().map(|b| b * datum.sample(rng)).sum())
}

/// Exact quantile of a steady state whose mixing law is `δ₁` and whose
/// stable part is Gaussian or symmetric Cauchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyQuantile {
    stable: StableParams,
}

impl SteadyQuantile {
    /// `mixing_is_point_mass` states that `M∞ ≡ 1` for the kernel at hand.
    pub fn exact(stable: StableParams, mixing_is_point_mass: bool) -> Result<Self> {
        if !mixing_is_point_mass {
            return Err(KacError::CouplingUnavailable(
                "the steady quantile is only known when the mixing law is δ₁".into(),
            ));
        }
        if stable.quantile(0.5).is_none() {
            return Err(KacError::CouplingUnavailable(format!(
                "no closed-form quantile for α = {}, β = {}",
                stable.alpha, stable.beta
            )));
        }
        Ok(Self { stable })
    }

    pub fn stable(&self) -> &StableParams {
        &self.stable
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.stable.quantile(u).expect("checked at construction")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.stable.cdf(x).expect("checked at construction")
    }
}

/// One weight array, one uniform per leaf, both coordinates driven by the
/// same uniforms: `(Σ β_j F₀^{-1}(U_j), Σ β_j F∞^{-1}(U_j))`.
pub fn coupled_pair<R: Rng + ?Sized>(
    kernel: &CollisionKernel,
    datum: &InitialDatum,
    steady: &SteadyQuantile,
    t: f64,
    cap: u64,
    rng: &mut R,
) -> Option<(f64, f64)> {
    let mut buf = WeightArray::new();
    coupled_pair_with(kernel, datum, steady, t, cap, &mut buf, rng)
}

pub fn coupled_pair_with<R: Rng + ?Sized>(
    kernel: &CollisionKernel,
    datum: &InitialDatum,
    steady: &SteadyQuantile,
    t: f64,
    cap: u64,
    buf: &mut WeightArray,
    rng: &mut R,
) -> Option<(f64, f64)> {
    let n = sample_n_t(t, rng);
    if n > cap {
        return None;
    }
    buf.reset();
    buf.grow(kernel, (n - 1) as usize, rng);
    let (mut x, mut v) = (0.0, 0.0);
    for b in &buf.weights {
        let u = open_uniform(rng);
        x += b * datum.quantile(u);
        v += b * steady.quantile(u);
    }
    Some((x, v))
}

/// Monte Carlo mean of a weight power sum against its closed-form value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMomentStats {
    pub mean: f64,
    pub stderr: f64,
    pub reference: f64,
    pub replicas: usize,
    pub truncated: usize,
}

impl WeightMomentStats {
    /// Distance to the reference in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.reference) / self.stderr
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// `E[Σ_j β_{j,n}^p]` by simulation, compared with
/// `Γ(n + S(p)) / (Γ(n) Γ(S(p) + 1))`.
pub fn weight_p_sum_stats(
    kernel: &CollisionKernel,
    p: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<WeightMomentStats> {
    let s = kernel.s(p);
    if !(s > -1.0) || !s.is_finite() {
        return Err(KacError::InvalidParameter(format!("need S(p) > -1, got S({p}) = {s}")));
    }
    if n == 0 || replicas < 2 {
        return Err(KacError::InvalidParameter(
            "need n >= 1 and at least two replicas".into(),
        ));
    }
    let sums = par_batches(seed, replicas, |rng, _, len| {
        let mut w = WeightArray::with_capacity(n);
        (0..len)
            .map(|_| {
                w.reset();
                w.grow_powered(kernel, p, n - 1, rng);
                w.weights.iter().sum::<f64>()
            })
            .collect()
    });
    let (mean, stderr) = mean_se(&sums);
    Ok(WeightMomentStats {
        mean,
        stderr,
        reference: gamma_ratio_moment(n as u64, s),
        replicas,
        truncated: 0,
    })
}

/// `E[Σ_j β_{j,N_t}^p]` by simulation, compared with `e^{t S(p)}`.
pub fn weight_p_sum_stats_time(
    kernel: &CollisionKernel,
    p: f64,
    t: f64,
    replicas: usize,
    cap: u64,
    seed: u64,
) -> Result<WeightMomentStats> {
    let s = kernel.s(p);
    if !(s > -1.0) || !s.is_finite() || !(t >= 0.0) {
        return Err(KacError::InvalidParameter(format!(
            "need S(p) > -1 and t >= 0, got S = {s}, t = {t}"
        )));
    }
    let draws = par_batches(seed, replicas, |rng, _, len| {
        let mut w = WeightArray::new();
        (0..len)
            .map(|_| {
                let n = sample_n_t(t, rng);
                if n > cap {
                    return None;
                }
                w.reset();
                w.grow_powered(kernel, p, (n - 1) as usize, rng);
                Some(w.weights.iter().sum::<f64>())
            })
            .collect()
    });
    let kept: Vec<f64> = draws.iter().flatten().copied().collect();
    let (mean, stderr) = mean_se(&kept);
    Ok(WeightMomentStats {
        mean,
        stderr,
        reference: (t * s).exp(),
        replicas,
        truncated: replicas - kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Atom;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn closed_form_cf_matches_quantile_integral() {
        let data: Vec<InitialDatum> = [
            "point:a=0.7",
            "uniform:a=-1,b=2",
            "gaussian:mean=0.3,var=2",
            "table:-3,-1,0,0.5,4",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        for d in &data {
            for xi in [0.0, 1e-9, 0.3, 1.0, 4.0] {
                let re = crate::numerics::integrate(|u| (xi * d.quantile(u)).cos(), 0.0, 1.0, 1e-13);
                let im = crate::numerics::integrate(|u| (xi * d.quantile(u)).sin(), 0.0, 1.0, 1e-13);
                let cf = d.cf(xi).unwrap();
                assert!(
                    (cf - Complex64::new(re, im)).norm() < 1e-9,
                    "{d} at {xi}: {cf} vs {re} + {im}i"
                );
            }
        }
        let c: InitialDatum = "cauchy:scale=2,pos=1".parse().unwrap();
        assert_abs_diff_eq!(c.cf(0.5).unwrap().norm(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!("pareto-sym:alpha=1.5,c0=1"
            .parse::<InitialDatum>()
            .unwrap()
            .cf(1.0)
            .is_none());
    }

    #[test]
    fn first_split_is_the_pair() {
        let k = CollisionKernel::deterministic(0.3, 0.9).unwrap();
        let w = grow_weights(&k, 2, &mut rng(1));
        assert_eq!(w.weights(), &[0.3, 0.9]);
        assert_eq!(grow_weights(&k, 1, &mut rng(1)).weights(), &[1.0]);
    }

    #[test]
    fn conserved_alpha_sum() {
        let h = 0.5f64.sqrt();
        let k = CollisionKernel::deterministic(h, h).unwrap();
        let w = grow_weights(&k, 300, &mut rng(2));
        assert_abs_diff_eq!(w.power_sum(2.0), 1.0, epsilon = 1e-12);
        assert!(w.weights().iter().all(|b| *b >= 0.0));
    }

    // Distribution of the sorted weight vector after n-1 splits, by exhaustive
    // enumeration of indices and atoms; `ordered` selects the insertion rule.
    fn enumerate(atoms: &[Atom], n: usize, ordered: bool) -> BTreeMap<Vec<i64>, f64> {
        let mut states: Vec<(Vec<f64>, f64)> = vec![(vec![1.0], 1.0)];
        for size in 1..n {
            let mut next = Vec::new();
            for (w, prob) in &states {
                for idx in 0..size {
                    for a in atoms {
                        let mut v = w.clone();
                        let b = v[idx];
                        if ordered {
                            v[idx] = b * a.l;
                            v.insert(idx + 1, b * a.r);
                        } else {
                            v[idx] = b * a.l;
                            v.push(b * a.r);
                        }
                        next.push((v, prob * a.w / size as f64));
                    }
                }
            }
            states = next;
        }
        let mut law = BTreeMap::new();
        for (mut v, prob) in states {
            v.sort_by(f64::total_cmp);
            let key: Vec<i64> = v.iter().map(|x| (x * 1e12).round() as i64).collect();
            *law.entry(key).or_insert(0.0) += prob;
        }
        law
    }

    #[test]
    fn replace_and_append_matches_ordered_recursion() {
        let kernels = [
            vec![Atom { l: 0.9, r: 0.3, w: 0.5 }, Atom { l: 0.4, r: 0.4, w: 0.5 }],
            vec![
                Atom {
                    l: 1.0,
                    r: 0.0,
                    w: 0.25,
                },
                Atom {
                    l: 0.2,
                    r: 0.7,
                    w: 0.75,
                },
            ],
        ];
        for atoms in &kernels {
            for n in 1..=4 {
                let a = enumerate(atoms, n, true);
                let b = enumerate(atoms, n, false);
                let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
                let tv: f64 = keys
                    .into_iter()
                    .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
                    .sum::<f64>()
                    / 2.0;
                assert!(tv < 1e-12, "n {n}: tv {tv}");
            }
        }
    }

    #[test]
    fn n_t_distribution() {
        let mut r = rng(3);
        assert_eq!(sample_n_t(0.0, &mut r), 1);
        let m = 200_000;
        let xs: Vec<f64> = (0..m).map(|_| sample_n_t(2.0, &mut r) as f64).collect();
        let (mean, se) = mean_se(&xs);
        assert!((mean - 2f64.exp()).abs() < 4.0 * se, "{mean}");
        let ones = (0..m).filter(|_| sample_n_t(1.0, &mut r) == 1).count() as f64 / m as f64;
        let p = (-1f64).exp();
        assert!((ones - p).abs() < 4.0 * (p * (1.0 - p) / m as f64).sqrt());
        assert!(truncation_mass(8.0, DEFAULT_N_CAP) < 1e-12);
    }

    #[test]
    fn v_t_at_zero_is_one_datum_draw() {
        let d = InitialDatum::UniformInterval { a: 2.0, b: 3.0 };
        let mut a = rng(4);
        let mut b = rng(4);
        let v = sample_v_t(&CollisionKernel::Uniform, &d, 0.0, DEFAULT_N_CAP, &mut a).unwrap();
        let _ = sample_n_t(0.0, &mut b);
        assert_eq!(v, d.sample(&mut b));
    }

    #[test]
    fn v_t_truncation_is_reported() {
        let d = InitialDatum::PointMass(1.0);
        let mut r = rng(5);
        let misses = (0..200)
            .filter(|_| sample_v_t(&CollisionKernel::Uniform, &d, 5.0, 2, &mut r).is_none())
            .count();
        assert!(misses > 150);
    }

    #[test]
    fn datum_specs_round_trip() {
        for s in [
            "point:a=1.5",
            "uniform:a=-1,b=1",
            "gaussian:mean=0,var=2",
            "cauchy:scale=3.1416,pos=0",
            "pareto-sym:alpha=1.5,c0=1",
            "perturbed:eps=0.5:cauchy:scale=1,pos=0",
            "table:-1,0,2",
        ] {
            let d: InitialDatum = s.parse().unwrap();
            let again: InitialDatum = d.to_string().parse().unwrap();
            assert_eq!(d, again);
        }
        assert!("uniform:a=1,b=0".parse::<InitialDatum>().is_err());
        assert!("table:1,0".parse::<InitialDatum>().is_err());
    }

    #[test]
    fn pareto_splice_is_continuous() {
        for (alpha, c0) in [(0.5, 1.0), (1.5, 0.3), (1.0, 2.0)] {
            let d = InitialDatum::ParetoSymmetric { alpha, c0 };
            let (xc, _) = InitialDatum::pareto_cutoff(alpha, c0);
            for x in [-xc, xc] {
                let lo = d.cdf(x - 1e-9).unwrap();
                let hi = d.cdf(x + 1e-9).unwrap();
                assert!((hi - lo).abs() < 1e-8);
            }
            // quantile inverts the cdf
            for u in [0.01, 0.2, 0.5, 0.93, 0.999] {
                assert_abs_diff_eq!(d.cdf(d.quantile(u)).unwrap(), u, epsilon = 1e-12);
            }
            let x: f64 = 1e6;
            assert_abs_diff_eq!(x.powf(alpha) * (1.0 - d.cdf(x).unwrap()), c0, epsilon = 1e-6);
            let m = d.metadata();
            assert_eq!((m.c0_plus, m.c0_minus, m.gamma0), (c0, c0, 0.0));
        }
    }

    #[test]
    fn coupled_pair_cases() {
        let steady = SteadyQuantile::exact(StableParams::cauchy(1.0, 0.0).unwrap(), true).unwrap();
        let same = InitialDatum::Cauchy {
            scale: 1.0,
            position: 0.0,
        };
        let mut r = rng(6);
        for _ in 0..100 {
            let (x, v) = coupled_pair(&CollisionKernel::Uniform, &same, &steady, 1.5, DEFAULT_N_CAP, &mut r).unwrap();
            assert!((x - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
        let d = InitialDatum::PerturbedQuantile {
            base: Box::new(same.clone()),
            eps: 0.5,
        };
        let mut a = rng(7);
        let (x, v) = coupled_pair(&CollisionKernel::Uniform, &d, &steady, 0.0, DEFAULT_N_CAP, &mut a).unwrap();
        let mut b = rng(7);
        let _ = sample_n_t(0.0, &mut b);
        let u = open_uniform(&mut b);
        assert_eq!((x, v), (d.quantile(u), steady.quantile(u)));
        assert!(matches!(
            SteadyQuantile::exact(StableParams::new(1.5, 1.0, 0.0, 0.0).unwrap(), true),
            Err(KacError::CouplingUnavailable(_))
        ));
        assert!(SteadyQuantile::exact(StableParams::cauchy(1.0, 0.0).unwrap(), false).is_err());
    }

    #[test]
    fn coupled_bound_for_low_order() {
        // E|diff|^p <= 2 E|F₀^{-1}(U) - F∞^{-1}(U)|^p e^{tS(p)} for 1 < p <= 2
        let k = CollisionKernel::Uniform;
        let steady = SteadyQuantile::exact(StableParams::cauchy(1.0, 0.0).unwrap(), true).unwrap();
        let d = InitialDatum::PerturbedQuantile {
            base: Box::new(InitialDatum::Cauchy {
                scale: 1.0,
                position: 0.0,
            }),
            eps: 0.5,
        };
        let p = 1.5;
        // E|0.5(2U-1)|^p = 0.5^p / (p+1)
        let initial = 0.5f64.powf(p) / (p + 1.0);
        let mut r = rng(8);
        for t in [1.0, 3.0] {
            let costs: Vec<f64> = (0..20_000)
                .map(|_| {
                    let (x, v) = coupled_pair(&k, &d, &steady, t, DEFAULT_N_CAP, &mut r).unwrap();
                    (x - v).abs().powf(p)
                })
                .collect();
            let (mean, se) = mean_se(&costs);
            assert!(mean <= 2.0 * initial * (t * k.s(p)).exp() + 4.0 * se);
        }
    }

    #[test]
    fn power_sum_identity() {
        let k = CollisionKernel::Uniform;
        let st = weight_p_sum_stats(&k, 1.0, 8, 2000, 1).unwrap();
        assert_abs_diff_eq!(st.reference, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.mean, 1.0, epsilon = 1e-12);
        let st = weight_p_sum_stats(&k, 2.0, 32, 10_000, 2).unwrap();
        let want = (crate::numerics::ln_gamma(32.0 - 1.0 / 3.0)
            - crate::numerics::ln_gamma(32.0)
            - crate::numerics::ln_gamma(2.0 / 3.0))
        .exp();
        assert_abs_diff_eq!(st.reference, want, epsilon = 1e-12);
        assert!(st.z_score().abs() < 4.0, "{st:?}");
    }

    #[test]
    fn martingale_at_alpha() {
        let k =
            CollisionKernel::discrete(vec![Atom { l: 0.9, r: 0.3, w: 0.5 }, Atom { l: 0.4, r: 0.4, w: 0.5 }]).unwrap();
        let alpha = crate::kernel::find_alpha(&k).unwrap();
        for n in [8, 64, 512] {
            let st = weight_p_sum_stats(&k, alpha, n, 4000, n as u64).unwrap();
            assert!((st.reference - 1.0).abs() < 1e-8);
            assert!(st.z_score().abs() < 4.0, "n {n}: {st:?}");
        }
    }

    #[test]
    fn time_randomised_identity() {
        let st = weight_p_sum_stats_time(&CollisionKernel::Uniform, 2.0, 2.0, 20_000, DEFAULT_N_CAP, 9).unwrap();
        assert_abs_diff_eq!(st.reference, (-2.0f64 / 3.0).exp(), epsilon = 1e-14);
        assert!(st.z_score().abs() < 4.0, "{st:?}");
        assert_eq!(st.truncated, 0);
    }

    #[test]
    fn gaussian_is_preserved_by_conservative_kernel() {
        let h = 0.5f64.sqrt();
        let k = CollisionKernel::deterministic(h, h).unwrap();
        let d = InitialDatum::Gaussian { mean: 0.0, var: 2.0 };
        let mut r = rng(10);
        let n = 20_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_v_t(&k, &d, 2.0, DEFAULT_N_CAP, &mut r).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let m = crate::metrics::EmpiricalMeasure::new(xs).unwrap();
        let ks = crate::metrics::kolmogorov_distance(&m, |x| d.cdf(x).unwrap());
        assert!(ks < crate::metrics::ks_critical_1pct(n));
    }
}

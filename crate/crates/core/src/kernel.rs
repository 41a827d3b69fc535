//! Collision kernels `(L, R)` and their spectral machinery.
//!
//! The central object is `S(q) = E[L^q + R^q] - 1` (with `0^0 = 0`) and the
//! spectral function `φ(q) = S(q) / q`. Everything the rate bounds need is
//! derived from these two: the stability exponent `α` (root of `S` in
//! `(0, 2]`), the minimiser `p₀` of `φ`, the right end `p̄` of the negativity
//! region and the decay constants of each regime.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::numerics::{self, bisect, golden_section, integrate, ln_gamma, pow0, pow_log0};

/// Tolerance used for equality tests between spectral values, e.g. the
/// `φ(p) = φ(2)` branch that switches a bound to its `t e^{-rt}` form.
pub const SPECTRAL_EQ_TOL: f64 = 1e-9;

const QUAD_TOL: f64 = 1e-10;
const ALPHA_FLOOR: f64 = 1e-6;
const ALPHA_SCAN_POINTS: usize = 64;
const Q_CAP: f64 = 4096.0;

/// Map `θ ↦ (l(θ), r(θ))` of a uniform angle on `(0, 2π)`.
pub type AngleFn = dyn Fn(f64) -> (f64, f64) + Send + Sync;

#[derive(Clone)]
pub struct AngleMap {
    pub name: String,
    pub map: Arc<AngleFn>,
}

impl AngleMap {
    pub fn new(name: impl Into<String>, map: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            map: Arc::new(map),
        }
    }

    /// `E[g(l(θ), r(θ))]` for θ uniform on `(0, 2π)`, integrating each quarter
    /// period separately so kinks at multiples of `π/2` sit on breakpoints.
    fn expect<G: Fn(f64, f64) -> f64>(&self, g: G) -> f64 {
        let f = |theta: f64| {
            let (l, r) = (self.map)(theta);
            g(l, r)
        };
        (0..4)
            .map(|k| {
                let a = k as f64 * PI / 2.0;
                integrate(f, a, a + PI / 2.0, QUAD_TOL * TAU / 4.0)
            })
            .sum::<f64>()
            / TAU
    }
}

impl fmt::Debug for AngleMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AngleMap").field("name", &self.name).finish()
    }
}

/// One atom `(l, r)` of a discrete kernel together with its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub l: f64,
    pub r: f64,
    pub w: f64,
}

/// The law of the non-negative pair `(L, R)`.
#[derive(Debug, Clone)]
pub enum CollisionKernel {
    /// `L = U`, `R = 1 - U` with `U` uniform on `(0, 1)`.
    Uniform,
    /// `L = |cos θ|^{1+d}`, `R = |sin θ|^{1+d}`.
    InelasticKac {
        d: f64,
    },
    Deterministic {
        l: f64,
        r: f64,
    },
    Discrete {
        atoms: Vec<Atom>,
    },
    AngleMap(AngleMap),
}

impl CollisionKernel {
    pub fn inelastic_kac(d: f64) -> Result<Self> {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(KacError::InvalidParameter(format!(
                "inelasticity must be >= 0, got {d}"
            )));
        }
        Ok(Self::InelasticKac { d })
    }

    pub fn deterministic(l: f64, r: f64) -> Result<Self> {
        if !(l >= 0.0 && r >= 0.0) || !l.is_finite() || !r.is_finite() {
            return Err(KacError::InvalidParameter(format!(
                "deterministic kernel needs finite l, r >= 0, got ({l}, {r})"
            )));
        }
        Ok(Self::Deterministic { l, r })
    }

    pub fn discrete(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(KacError::InvalidParameter(
                "discrete kernel needs at least one atom".into(),
            ));
        }
        for a in &atoms {
            if !(a.l >= 0.0 && a.r >= 0.0 && a.w >= 0.0) || !(a.l + a.r + a.w).is_finite() {
                return Err(KacError::InvalidParameter(format!("invalid atom {a:?}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(KacError::InvalidParameter(format!(
                "atom weights sum to {total}, expected 1"
            )));
        }
        Ok(Self::Discrete { atoms })
    }

    /// The pure inelastic Kac map expressed as an angle map, used to
    /// cross-check the closed forms against quadrature.
    pub fn inelastic_kac_angle_map(d: f64) -> Self {
        let e = 1.0 + d;
        Self::AngleMap(AngleMap::new(format!("inelastic-kac-angle:d={d}"), move |t: f64| {
            (t.cos().abs().powf(e), t.sin().abs().powf(e))
        }))
    }

    /// Finite atom list for Deterministic/Discrete kernels.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        match self {
            Self::Deterministic { l, r } => Some(vec![Atom { l: *l, r: *r, w: 1.0 }]),
            Self::Discrete { atoms } => Some(atoms.iter().copied().filter(|a| a.w > 0.0).collect()),
            _ => None,
        }
    }

    /// Draws one pair `(L, R)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            Self::Uniform => {
                let u: f64 = rng.random();
                (u, 1.0 - u)
            }
            Self::InelasticKac { d } => {
                let theta = TAU * rng.random::<f64>();
                let e = 1.0 + d;
                (theta.cos().abs().powf(e), theta.sin().abs().powf(e))
            }
            Self::Deterministic { l, r } => (*l, *r),
            Self::Discrete { atoms } => {
                let a = pick_atom(atoms, rng.random());
                (a.l, a.r)
            }
            Self::AngleMap(m) => (m.map)(TAU * rng.random::<f64>()),
        }
    }

    /// `S(q) = E[L^q + R^q] - 1`, `+∞` when the expectation diverges.
    /// At `q = 0` the `0^0 = 0` convention gives `P{L>0} + P{R>0} - 1`.
    pub fn s(&self, q: f64) -> f64 {
        if q == 0.0 {
            return self.positivity_mass() - 1.0;
        }
        match self {
            Self::Uniform => (1.0 - q) / (1.0 + q),
            Self::InelasticKac { d } => {
                let c = 0.5 * (1.0 + d);
                2.0 / PI.sqrt() * (ln_gamma(c * q + 0.5) - ln_gamma(c * q + 1.0)).exp() - 1.0
            }
            Self::Deterministic { l, r } => pow0(*l, q) + pow0(*r, q) - 1.0,
            Self::Discrete { atoms } => atoms.iter().map(|a| a.w * (pow0(a.l, q) + pow0(a.r, q))).sum::<f64>() - 1.0,
            Self::AngleMap(m) => m.expect(|l, r| pow0(l, q) + pow0(r, q)) - 1.0,
        }
    }

    pub fn phi(&self, q: f64) -> f64 {
        self.s(q) / q
    }

    /// `S'(q) = E[L^q ln L + R^q ln R]` with `0^q ln 0 := 0`.
    pub fn s_prime(&self, q: f64) -> f64 {
        match self {
            Self::Uniform => -2.0 / ((1.0 + q) * (1.0 + q)),
            Self::InelasticKac { d } => {
                let c = 0.5 * (1.0 + d);
                let g = c * (numerics::digamma(c * q + 0.5) - numerics::digamma(c * q + 1.0));
                (self.s(q) + 1.0) * g
            }
            Self::Deterministic { l, r } => pow_log0(*l, q) + pow_log0(*r, q),
            Self::Discrete { atoms } => atoms.iter().map(|a| a.w * (pow_log0(a.l, q) + pow_log0(a.r, q))).sum(),
            Self::AngleMap(m) => m.expect(|l, r| pow_log0(l, q) + pow_log0(r, q)),
        }
    }

    /// Mixed moment `E[L^a R^b]` for `a, b > 0`.
    pub fn mixed_moment(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Uniform => {
                // Beta integral B(a+1, b+1)
                (ln_gamma(a + 1.0) + ln_gamma(b + 1.0) - ln_gamma(a + b + 2.0)).exp()
            }
            Self::InelasticKac { d } => {
                let (x, y) = ((1.0 + d) * a, (1.0 + d) * b);
                (ln_gamma(0.5 * (x + 1.0)) + ln_gamma(0.5 * (y + 1.0)) - ln_gamma(0.5 * (x + y) + 1.0)).exp() / PI
            }
            Self::Deterministic { l, r } => pow0(*l, a) * pow0(*r, b),
            Self::Discrete { atoms } => atoms.iter().map(|at| at.w * pow0(at.l, a) * pow0(at.r, b)).sum(),
            Self::AngleMap(m) => m.expect(|l, r| pow0(l, a) * pow0(r, b)),
        }
    }

    /// `P{L > 0} + P{R > 0}`.
    pub fn positivity_mass(&self) -> f64 {
        let ind = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
        match self {
            Self::Uniform | Self::InelasticKac { .. } => 2.0,
            Self::Deterministic { l, r } => ind(*l) + ind(*r),
            Self::Discrete { atoms } => atoms.iter().map(|a| a.w * (ind(a.l) + ind(a.r))).sum(),
            Self::AngleMap(m) => m.expect(|l, r| ind(l) + ind(r)),
        }
    }

    /// `P{(L, R) ∈ {0, 1}²}`.
    pub fn binary_atom_mass(&self) -> f64 {
        let bin = |x: f64| x == 0.0 || x == 1.0;
        match self {
            Self::Uniform | Self::InelasticKac { .. } => 0.0,
            Self::Deterministic { l, r } => f64::from(u8::from(bin(*l) && bin(*r))),
            Self::Discrete { atoms } => atoms.iter().filter(|a| bin(a.l) && bin(a.r)).map(|a| a.w).sum(),
            Self::AngleMap(m) => m.expect(|l, r| f64::from(u8::from(bin(l) && bin(r)))),
        }
    }

    /// Whether `L^α + R^α = 1` almost surely, in which case the mixing law of
    /// the steady state is the point mass at 1.
    pub fn conserves_alpha_power(&self, alpha: f64) -> bool {
        let tol = 1e-9;
        match self {
            Self::Uniform => (alpha - 1.0).abs() <= tol,
            Self::InelasticKac { d } => (alpha * (1.0 + d) - 2.0).abs() <= tol,
            Self::Deterministic { .. } | Self::Discrete { .. } => self
                .atoms()
                .unwrap_or_default()
                .iter()
                .all(|a| (pow0(a.l, alpha) + pow0(a.r, alpha) - 1.0).abs() <= tol),
            Self::AngleMap(m) => (0..4096).all(|i| {
                let (l, r) = (m.map)(TAU * (i as f64 + 0.5) / 4096.0);
                (pow0(l, alpha) + pow0(r, alpha) - 1.0).abs() <= tol
            }),
        }
    }
}

pub(crate) fn pick_atom(atoms: &[Atom], u: f64) -> &Atom {
    let mut acc = 0.0;
    for a in atoms {
        acc += a.w;
        if u < acc {
            return a;
        }
    }
    atoms
        .iter()
        .rev()
        .find(|a| a.w > 0.0)
        .unwrap_or(&atoms[atoms.len() - 1])
}

impl fmt::Display for CollisionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "uniform"),
            Self::InelasticKac { d } => write!(f, "inelastic-kac:d={d}"),
            Self::Deterministic { l, r } => write!(f, "deterministic:l={l},r={r}"),
            Self::Discrete { atoms } => {
                write!(f, "discrete:")?;
                for (i, a) in atoms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{},{},{}", a.l, a.r, a.w)?;
                }
                Ok(())
            }
            Self::AngleMap(m) => write!(f, "angle-map:{}", m.name),
        }
    }
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| KacError::Parse(format!("not a number: {s:?}")))
}

/// Parses `key=value,key=value` lists.
pub(crate) fn parse_kv(body: &str) -> Result<Vec<(String, f64)>> {
    body.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| KacError::Parse(format!("expected key=value, got {pair:?}")))?;
            Ok((k.trim().to_string(), parse_f64(v)?))
        })
        .collect()
}

pub(crate) fn kv_get(kv: &[(String, f64)], key: &str, spec: &str) -> Result<f64> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| KacError::Parse(format!("missing `{key}` in {spec:?}")))
}

impl FromStr for CollisionKernel {
    type Err = KacError;

    fn from_str(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, body) = spec.split_once(':').unwrap_or((spec, ""));
        match head {
            "uniform" if body.is_empty() => Ok(Self::Uniform),
            "inelastic-kac" => {
                let kv = parse_kv(body)?;
                Self::inelastic_kac(kv_get(&kv, "d", spec)?)
            }
            "deterministic" => {
                let kv = parse_kv(body)?;
                Self::deterministic(kv_get(&kv, "l", spec)?, kv_get(&kv, "r", spec)?)
            }
            "discrete" => {
                let atoms = body
                    .split(';')
                    .map(|triple| {
                        let parts: Vec<&str> = triple.split(',').collect();
                        if parts.len() != 3 {
                            return Err(KacError::Parse(format!("atom needs l,r,w: {triple:?}")));
                        }
                        Ok(Atom {
                            l: parse_f64(parts[0])?,
                            r: parse_f64(parts[1])?,
                            w: parse_f64(parts[2])?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::discrete(atoms)
            }
            _ => Err(KacError::Parse(format!("unknown kernel spec {spec:?}"))),
        }
    }
}

/// `S(q)` with argument validation.
pub fn s_function(kernel: &CollisionKernel, q: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(KacError::InvalidParameter(format!("S is defined for q >= 0, got {q}")));
    }
    Ok(kernel.s(q))
}

pub fn phi(kernel: &CollisionKernel, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(KacError::InvalidParameter(format!("φ is defined for q > 0, got {q}")));
    }
    Ok(kernel.phi(q))
}

pub fn s_derivative(kernel: &CollisionKernel, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(KacError::InvalidParameter(format!("S' needs q > 0, got {q}")));
    }
    let d = kernel.s_prime(q);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(KacError::InvalidParameter(format!(
            "E[L^q log L + R^q log R] is not finite at q = {q}"
        )))
    }
}

/// The root `α ∈ (0, 2]` of `S`.
///
/// A 64-point sign scan on `[1e-6, 2]` brackets the first crossing, then
/// bisection refines it to `|S(α)| <= 1e-9`.
pub fn find_alpha(kernel: &CollisionKernel) -> Result<f64> {
    let grid: Vec<f64> = (0..ALPHA_SCAN_POINTS)
        .map(|k| ALPHA_FLOOR + (2.0 - ALPHA_FLOOR) * k as f64 / (ALPHA_SCAN_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&q| kernel.s(q)).collect();
    if values[0] <= 0.0 {
        return Err(KacError::NoRootInRange(format!(
            "S({ALPHA_FLOOR}) = {} is not positive",
            values[0]
        )));
    }
    match values.iter().position(|&v| v <= 0.0) {
        Some(k) => {
            if values[k].abs() <= 1e-15 {
                return Ok(grid[k]);
            }
            let root = bisect(|q| kernel.s(q), grid[k - 1], grid[k], 1e-12, 1e-15);
            Ok(root)
        }
        None => {
            let last = *values.last().expect("non-empty scan");
            if last.abs() <= SPECTRAL_EQ_TOL {
                Ok(2.0)
            } else {
                Err(KacError::NoRootInRange(format!(
                    "S > 0 on all of (0, 2]; S(2) = {last}"
                )))
            }
        }
    }
}

/// `p̄ = sup{q > α : φ(q) < 0}`; `None` when `S` stays negative up to the
/// search cap (treated as `+∞`).
pub fn find_p_bar(kernel: &CollisionKernel, alpha: f64) -> Option<f64> {
    let mut last_negative = alpha;
    let mut probes: Vec<f64> = (1..=16).map(|j| alpha * (1.0 + j as f64 / 16.0)).collect();
    let mut q = 2.0 * alpha;
    while q < Q_CAP {
        q *= 2.0;
        probes.push(q.min(Q_CAP));
    }
    for q in probes {
        let s = kernel.s(q);
        if s.is_finite() && s < 0.0 {
            last_negative = q;
            continue;
        }
        // S >= 0 or S = +inf: bracket between last_negative and q
        let boundary = bisect(
            |x| {
                let v = kernel.s(x);
                if v.is_finite() && v < 0.0 {
                    1.0
                } else {
                    -1.0
                }
            },
            last_negative,
            q,
            f64::INFINITY,
            1e-12 * q.max(1.0),
        );
        let finite = kernel.s(q).is_finite();
        return Some(if finite {
            bisect(
                |x| -kernel.s(x),
                last_negative,
                boundary.max(last_negative),
                1e-12,
                1e-13,
            )
        } else {
            boundary
        });
    }
    None
}

/// The unique interior minimiser `p₀` of `φ` on `(α, p̄)`, if it exists.
pub fn find_p0(kernel: &CollisionKernel) -> Result<Option<f64>> {
    let alpha = find_alpha(kernel)?;
    Ok(find_p0_with_alpha(kernel, alpha))
}

pub(crate) fn find_p0_with_alpha(kernel: &CollisionKernel, alpha: f64) -> Option<f64> {
    let p_bar = find_p_bar(kernel, alpha);
    let lo = alpha + 1e-4;
    let hi = p_bar.map_or(Q_CAP, |p| p - 1e-9 * p.max(1.0));
    if hi <= lo {
        return None;
    }
    let phi = |q: f64| {
        let v = kernel.phi(q);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let n = 512;
    let grid: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    let (imin, _) = grid
        .iter()
        .map(|&q| phi(q))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    if imin == n - 1 {
        // φ decreasing up to the domain boundary: no interior minimum
        let domain_exhausted = p_bar.is_some_and(|p| !kernel.s(p).is_finite() || kernel.phi(p) < 0.0);
        if domain_exhausted || p_bar.is_none() {
            return None;
        }
    }
    let a = grid[imin.saturating_sub(1)];
    let b = grid[(imin + 1).min(n - 1)];
    Some(golden_section(phi, a, b, 1e-9))
}

/// Spectral summary of a kernel.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    pub kernel: CollisionKernel,
    pub alpha: f64,
    pub p0: Option<f64>,
    /// `None` means `p̄ = +∞` (within the search cap).
    pub p_bar: Option<f64>,
}

impl SpectralProfile {
    pub fn new(kernel: &CollisionKernel) -> Result<Self> {
        let alpha = find_alpha(kernel)?;
        Ok(Self {
            kernel: kernel.clone(),
            alpha,
            p0: find_p0_with_alpha(kernel, alpha),
            p_bar: find_p_bar(kernel, alpha),
        })
    }

    pub fn s(&self, q: f64) -> f64 {
        self.kernel.s(q)
    }

    pub fn phi(&self, q: f64) -> f64 {
        self.kernel.phi(q)
    }

    pub fn s_prime(&self, q: f64) -> f64 {
        self.kernel.s_prime(q)
    }

    /// Whether some `s > lower` has `S(s) < 0`; by convexity this holds iff
    /// `lower < p̄`.
    pub fn negative_beyond(&self, lower: f64) -> bool {
        if lower < self.alpha {
            return true;
        }
        match self.p_bar {
            None => true,
            Some(p) => lower < p,
        }
    }
}

/// Which regime's rate constant to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `0 < α < 1`, `p > 1`: `r = |max(φ(1), φ(p))|`.
    #[serde(rename = "alpha_lt_1")]
    AlphaLt1,
    /// `1 <= α < 2`, `p > 2`: `r = |max(φ(2), φ(p))|`.
    #[serde(rename = "alpha_in_[1,2)")]
    AlphaIn1To2,
    /// `α = 2`, `p > 2`.
    #[serde(rename = "alpha_eq_2")]
    AlphaEq2,
    /// Low-order Wasserstein bound, `p <= 2`: `r = |φ(p)| (p ∧ 1)`.
    #[serde(rename = "wasserstein_low")]
    WassersteinLow,
    /// Fourier χ_p contraction: `r = |S(p)|`.
    #[serde(rename = "chi")]
    Chi,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::AlphaLt1 => "alpha_lt_1",
            Self::AlphaIn1To2 => "alpha_in_[1,2)",
            Self::AlphaEq2 => "alpha_eq_2",
            Self::WassersteinLow => "wasserstein_low",
            Self::Chi => "chi",
        }
    }
}

impl FromStr for Regime {
    type Err = KacError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "alpha_lt_1" => Self::AlphaLt1,
            "alpha_in_[1,2)" | "alpha_in_1_2" => Self::AlphaIn1To2,
            "alpha_eq_2" => Self::AlphaEq2,
            "wasserstein_low" => Self::WassersteinLow,
            "chi" => Self::Chi,
            other => return Err(KacError::Parse(format!("unknown regime {other:?}"))),
        })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exponent `r` of a bound `C e^{-rt}` (or `C t e^{-rt}` when
/// `log_correction` is set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRate {
    pub rate: f64,
    pub log_correction: bool,
    pub regime: Regime,
}

fn regime_error(regime: Regime, reason: String) -> KacError {
    KacError::InvalidRegime {
        regime: regime.name().to_string(),
        reason,
    }
}

/// Fractional part of `p` taken in `(0, 1]`.
pub fn fractional_part_open(p: f64) -> f64 {
    let f = p - p.floor();
    if f == 0.0 {
        1.0
    } else {
        f
    }
}

pub fn rate_constant(kernel: &CollisionKernel, p: f64, regime: Regime) -> Result<DecayRate> {
    let alpha = find_alpha(kernel)?;
    rate_constant_with_alpha(kernel, alpha, p, regime)
}

pub fn rate_constant_with_alpha(kernel: &CollisionKernel, alpha: f64, p: f64, regime: Regime) -> Result<DecayRate> {
    if !(p > 0.0) {
        return Err(KacError::InvalidParameter(format!("p must be positive, got {p}")));
    }
    let s_p = kernel.s(p);
    if !(s_p < -SPECTRAL_EQ_TOL) {
        return Err(KacError::RateUndefined { p, s: s_p });
    }
    let phi_p = s_p / p;
    let eq = |a: f64, b: f64| (a - b).abs() <= SPECTRAL_EQ_TOL;
    let (rate, log_correction) = match regime {
        Regime::AlphaLt1 => {
            if !(alpha < 1.0 - SPECTRAL_EQ_TOL) || !(p > 1.0) {
                return Err(regime_error(
                    regime,
                    format!("needs α < 1 < p, got α = {alpha}, p = {p}"),
                ));
            }
            let phi1 = kernel.phi(1.0);
            (phi1.max(phi_p).abs(), eq(phi_p, phi1))
        }
        Regime::AlphaIn1To2 => {
            if !(1.0 - SPECTRAL_EQ_TOL..2.0 - SPECTRAL_EQ_TOL).contains(&alpha) || !(p > 2.0) {
                return Err(regime_error(
                    regime,
                    format!("needs 1 <= α < 2 < p, got α = {alpha}, p = {p}"),
                ));
            }
            let phi2 = kernel.phi(2.0);
            (phi2.max(phi_p).abs(), eq(phi_p, phi2))
        }
        Regime::AlphaEq2 => {
            if !((alpha - 2.0).abs() <= SPECTRAL_EQ_TOL) || !(p > 2.0) {
                return Err(regime_error(
                    regime,
                    format!("needs α = 2 < p, got α = {alpha}, p = {p}"),
                ));
            }
            let eps = fractional_part_open(p);
            let phi_low = kernel.phi(2.0 + eps);
            let neg_r = phi_p.max(phi_low / (3.0 * p));
            (-neg_r, eq(s_p, phi_low / 3.0))
        }
        Regime::WassersteinLow => {
            let one = 1.0;
            let ok = (alpha > one + SPECTRAL_EQ_TOL && alpha < p && p <= 2.0)
                || (alpha < p && p <= 1.0)
                || ((alpha - one).abs() <= SPECTRAL_EQ_TOL && p > 1.0 && p <= 2.0);
            if !ok {
                return Err(regime_error(
                    regime,
                    format!("needs 1 < α < p <= 2, α < p <= 1 or α = 1 < p <= 2; got α = {alpha}, p = {p}"),
                ));
            }
            (phi_p.abs() * p.min(1.0), false)
        }
        Regime::Chi => {
            if !(p > alpha) {
                return Err(regime_error(regime, format!("needs p > α, got α = {alpha}, p = {p}")));
            }
            (s_p.abs(), false)
        }
    };
    Ok(DecayRate {
        rate,
        log_correction,
        regime,
    })
}

/// Outcome of checking the standing assumption on a kernel at order `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `P{L>0} + P{R>0}`, must exceed 1.
    pub positivity_mass: f64,
    pub positivity_ok: bool,
    pub alpha: Option<f64>,
    pub alpha_ok: bool,
    pub s_p: f64,
    pub s_p_negative: bool,
    /// `P{(L,R) ∈ {0,1}²}`, must be below 1.
    pub binary_atom_mass: f64,
    pub non_binary_ok: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.positivity_ok && self.alpha_ok && self.s_p_negative && self.non_binary_ok
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.positivity_ok {
            out.push("P{L>0}+P{R>0}>1");
        }
        if !self.alpha_ok {
            out.push("exists α in (0,2] with S(α)=0");
        }
        if !self.s_p_negative {
            out.push("S(p)<0");
        }
        if !self.non_binary_ok {
            out.push("P{(L,R)∈{0,1}²}<1");
        }
        out
    }
}

pub fn validate_h0(kernel: &CollisionKernel, p: f64) -> ValidationReport {
    let positivity_mass = kernel.positivity_mass();
    let alpha = find_alpha(kernel).ok();
    let s_p = if p >= 0.0 { kernel.s(p) } else { f64::NAN };
    let binary_atom_mass = kernel.binary_atom_mass();
    ValidationReport {
        positivity_mass,
        positivity_ok: positivity_mass > 1.0,
        alpha,
        alpha_ok: alpha.is_some(),
        s_p,
        s_p_negative: s_p < 0.0,
        binary_atom_mass,
        non_binary_ok: binary_atom_mass < 1.0,
    }
}

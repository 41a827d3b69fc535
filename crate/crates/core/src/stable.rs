//! Centered α-stable laws: characteristic function, exact sampling,
//! conversions between tail constants and `(λ, β)`, and the asymptotic tail
//! expansions.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{KacError, Result};
use crate::numerics::{gamma_fn, ln_gamma};

const ONE_TOL: f64 = 1e-12;

/// Parameters of the law with characteristic function
/// `exp(-λ|ξ|^α (1 - iβ tan(πα/2) sign ξ))` (with the logarithmic form at
/// `α = 1` and the Gaussian `exp(-λξ²)` at `α = 2`). `gamma0` shifts the
/// `α = 1` law by `γ₀`.
///
/// `lambda = 0` is accepted and stands for the point mass at `gamma0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma0: f64,
}

fn is_one(alpha: f64) -> bool {
    (alpha - 1.0).abs() <= ONE_TOL
}

fn is_two(alpha: f64) -> bool {
    (alpha - 2.0).abs() <= ONE_TOL
}

impl StableParams {
    pub fn new(alpha: f64, lambda: f64, beta: f64, gamma0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0 + ONE_TOL) {
            return Err(KacError::InvalidParameter(format!("α must lie in (0, 2], got {alpha}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(KacError::InvalidParameter(format!(
                "λ must be finite and >= 0, got {lambda}"
            )));
        }
        if !(beta.abs() <= 1.0) {
            return Err(KacError::InvalidParameter(format!("|β| must be <= 1, got {beta}")));
        }
        if !gamma0.is_finite() {
            return Err(KacError::InvalidParameter("γ₀ must be finite".into()));
        }
        let (alpha, beta) = if is_two(alpha) { (2.0, 0.0) } else { (alpha, beta) };
        Ok(Self {
            alpha,
            lambda,
            beta,
            gamma0,
        })
    }

    /// Gaussian `N(0, 2λ)`.
    pub fn gaussian(lambda: f64) -> Result<Self> {
        Self::new(2.0, lambda, 0.0, 0.0)
    }

    /// Symmetric Cauchy law of scale `λ` centred at `γ₀`.
    pub fn cauchy(lambda: f64, gamma0: f64) -> Result<Self> {
        Self::new(1.0, lambda, 0.0, gamma0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lambda == 0.0
    }

    /// `(λ̃, β̃)` used by the sampler and the tail coefficients.
    pub fn zolotarev(&self) -> (f64, f64) {
        to_zolotarev(self.alpha, self.lambda, self.beta)
    }

    /// Tail constants `(c₀⁺, c₀⁻)` of the law (`α < 2`).
    pub fn tail_constants(&self) -> (f64, f64) {
        if is_one(self.alpha) {
            let c = self.lambda / PI;
            return (c, c);
        }
        let t = 2.0 * self.lambda * gamma_fn(self.alpha) * (PI * self.alpha / 2.0).sin() / PI;
        (0.5 * t * (1.0 + self.beta), 0.5 * t * (1.0 - self.beta))
    }

    /// CDF, where a closed form exists (Gaussian, symmetric Cauchy, point mass).
    pub fn cdf(&self, x: f64) -> Option<f64> {
        if self.is_degenerate() {
            return Some(if x >= self.gamma0 { 1.0 } else { 0.0 });
        }
        if is_two(self.alpha) {
            return Some(gaussian_cdf(x, (2.0 * self.lambda).sqrt()));
        }
        if is_one(self.alpha) && self.beta == 0.0 {
            return Some(cauchy_cdf(x - self.gamma0, self.lambda));
        }
        None
    }

    /// Quantile function, where a closed form exists.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        if self.is_degenerate() {
            return Some(self.gamma0);
        }
        if is_two(self.alpha) {
            return Some(gaussian_quantile(u, (2.0 * self.lambda).sqrt()));
        }
        if is_one(self.alpha) && self.beta == 0.0 {
            return Some(self.gamma0 + cauchy_quantile(u, self.lambda));
        }
        None
    }
}

/// `K(α) = α` for `α <= 1`, `α - 2` otherwise.
pub fn k_alpha(alpha: f64) -> f64 {
    if alpha <= 1.0 {
        alpha
    } else {
        alpha - 2.0
    }
}

/// `(λ, β) ↦ (λ̃, β̃)`.
pub fn to_zolotarev(alpha: f64, lambda: f64, beta: f64) -> (f64, f64) {
    if is_one(alpha) || is_two(alpha) {
        return (lambda, 0.0);
    }
    let bt = 2.0 / PI * (beta * (k_alpha(alpha) * FRAC_PI_2).tan()).atan();
    (lambda / (bt * FRAC_PI_2).cos(), bt)
}

/// Inverse of [`to_zolotarev`].
pub fn from_zolotarev(alpha: f64, lambda_tilde: f64, beta_tilde: f64) -> (f64, f64) {
    if is_one(alpha) || is_two(alpha) {
        return (lambda_tilde, 0.0);
    }
    let beta = (beta_tilde * FRAC_PI_2).tan() / (k_alpha(alpha) * FRAC_PI_2).tan();
    (lambda_tilde * (beta_tilde * FRAC_PI_2).cos(), beta)
}

/// Characteristic function `E e^{iξX}`.
pub fn cf_stable(params: &StableParams, xi: f64) -> Complex64 {
    let StableParams {
        alpha,
        lambda,
        beta,
        gamma0,
    } = *params;
    if xi == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let a = xi.abs();
    let sg = xi.signum();
    if is_two(alpha) {
        Complex64::new((-lambda * xi * xi).exp(), 0.0)
    } else if is_one(alpha) {
        let exponent = Complex64::new(-lambda * a, -lambda * a * 2.0 * beta / PI * a.ln() * sg + gamma0 * xi);
        exponent.exp()
    } else {
        let la = lambda * a.powf(alpha);
        Complex64::new(-la, la * beta * (PI * alpha / 2.0).tan() * sg).exp()
    }
}

/// `(λ, β)` of the stable law attracting data with tail constants `c₀±`.
///
/// At `α = 1` only symmetric tails are accepted and the result is the Cauchy
/// law of scale `πc₀`.
pub fn params_from_tails(c0_plus: f64, c0_minus: f64, alpha: f64) -> Result<StableParams> {
    if !(c0_plus >= 0.0 && c0_minus >= 0.0) {
        return Err(KacError::InvalidParameter(format!(
            "tail constants must be >= 0, got ({c0_plus}, {c0_minus})"
        )));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(KacError::InvalidParameter(format!(
            "tail constants need α in (0, 2), got {alpha}"
        )));
    }
    let sum = c0_plus + c0_minus;
    if is_one(alpha) {
        if (c0_plus - c0_minus).abs() > 1e-12 * sum.max(1.0) {
            return Err(KacError::InvalidParameter(
                "α = 1 requires symmetric tails (c₀⁺ = c₀⁻)".into(),
            ));
        }
        return StableParams::new(1.0, PI * c0_plus, 0.0, 0.0);
    }
    let lambda = sum * PI / (2.0 * gamma_fn(alpha) * (PI * alpha / 2.0).sin());
    let beta = if sum == 0.0 { 0.0 } else { (c0_plus - c0_minus) / sum };
    StableParams::new(alpha, lambda, beta, 0.0)
}

/// Pre-computed Chambers–Mallows–Stuck sampler.
#[derive(Debug, Clone, Copy)]
pub struct StableSampler {
    params: StableParams,
    scale: f64,
    shift: f64,
}

impl StableSampler {
    pub fn new(params: &StableParams) -> Result<Self> {
        let alpha = params.alpha;
        if is_one(alpha) && params.beta != 0.0 {
            return Err(KacError::InvalidParameter(
                "sampling α = 1 with β ≠ 0 is not supported".into(),
            ));
        }
        let (scale, shift) = if is_two(alpha) {
            ((2.0 * params.lambda).sqrt(), 0.0)
        } else if is_one(alpha) {
            (params.lambda, 0.0)
        } else {
            let (lt, bt) = params.zolotarev();
            (lt.powf(1.0 / alpha), bt * FRAC_PI_2)
        };
        Ok(Self {
            params: *params,
            scale,
            shift,
        })
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let alpha = self.params.alpha;
        if self.params.is_degenerate() {
            return self.params.gamma0;
        }
        if is_two(alpha) {
            let z: f64 = StandardNormal.sample(rng);
            return self.scale * z;
        }
        if is_one(alpha) {
            let u: f64 = rng.random();
            return self.params.gamma0 + cauchy_quantile(u, self.scale);
        }
        let v = PI * (rng.random::<f64>() - 0.5);
        let w: f64 = Exp1.sample(rng);
        let b = self.shift;
        let first = (alpha * v + b).sin() / v.cos().powf(1.0 / alpha);
        let second = ((v - alpha * v - b).cos() / w).powf((1.0 - alpha) / alpha);
        self.scale * first * second
    }
}

pub fn sample_stable<R: Rng + ?Sized>(params: &StableParams, rng: &mut R) -> Result<f64> {
    Ok(StableSampler::new(params)?.sample(rng))
}

/// Coefficients of the tail expansions
/// `1 - F(x) ~ Σ c⁺ᵢ x^{-e_i}` and `F(-x) ~ Σ c⁻ᵢ x^{-e_i}` as `x → ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCoefficients {
    pub k: usize,
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    /// Power `e_i` of `1/|x|` attached to coefficient `i`.
    pub exponents: Vec<f64>,
    pub lambda_tilde: f64,
    pub beta_tilde: f64,
    /// Set when fewer than the requested `k` terms are available.
    pub truncated: bool,
}

/// First `k` tail coefficients of a stable law (`α < 2`).
pub fn tail_coefficients(params: &StableParams, k: usize) -> Result<TailCoefficients> {
    if k == 0 {
        return Err(KacError::InvalidParameter("expansion order k must be >= 1".into()));
    }
    let alpha = params.alpha;
    if is_two(alpha) {
        return Err(KacError::InvalidParameter("the Gaussian law has no power tail".into()));
    }
    if is_one(alpha) {
        if params.beta != 0.0 {
            return Err(KacError::InvalidParameter("α = 1 tail expansion requires β = 0".into()));
        }
        let lam = params.lambda;
        let c: Vec<f64> = (0..k)
            .map(|i| {
                let e = (2 * i + 1) as f64;
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * lam.powf(e) / (PI * e)
            })
            .collect();
        return Ok(TailCoefficients {
            k,
            c_plus: c.clone(),
            c_minus: c,
            exponents: (0..k).map(|i| (2 * i + 1) as f64).collect(),
            lambda_tilde: lam,
            beta_tilde: 0.0,
            truncated: false,
        });
    }
    let (lt, bt) = params.zolotarev();
    let (c0p, c0m) = params.tail_constants();
    let coef = |i: usize, sgn: f64| {
        let n = (i + 1) as f64;
        let sign = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
        // log-space for λ̃^{i+1} Γ(α(i+1)) / (i+1)!
        let mag = (n * lt.ln() + ln_gamma(alpha * n) - ln_gamma(n + 1.0)).exp();
        sign * mag * (FRAC_PI_2 * n * (alpha + sgn * bt)).sin() / PI
    };
    let mut c_plus = vec![c0p];
    let mut c_minus = vec![c0m];
    for i in 1..k {
        if lt == 0.0 {
            c_plus.push(0.0);
            c_minus.push(0.0);
        } else {
            c_plus.push(coef(i, 1.0));
            c_minus.push(coef(i, -1.0));
        }
    }
    Ok(TailCoefficients {
        k,
        c_plus,
        c_minus,
        exponents: (0..k).map(|i| alpha * (i + 1) as f64).collect(),
        lambda_tilde: lt,
        beta_tilde: bt,
        truncated: false,
    })
}

/// Value of a tail expansion, or a marker that the tail is thinner than any
/// power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailValue {
    Value(f64),
    ThinTail,
}

/// `k`-term expansion of `1 - F(x)` for `x > 0` or `F(x)` for `x < 0`.
///
/// Fails with `OutOfAsymptoticRange` when the first omitted term exceeds
/// `tol` in absolute value.
pub fn stable_cdf_tail(params: &StableParams, x: f64, k: usize, tol: f64) -> Result<TailValue> {
    if x == 0.0 || !x.is_finite() {
        return Err(KacError::InvalidParameter(format!(
            "tail expansion needs finite x ≠ 0, got {x}"
        )));
    }
    let right = x > 0.0;
    if is_two(params.alpha) || params.is_degenerate() {
        return Ok(TailValue::ThinTail);
    }
    if !is_one(params.alpha) && ((right && params.beta == -1.0) || (!right && params.beta == 1.0)) {
        return Ok(TailValue::ThinTail);
    }
    let coeffs = tail_coefficients(params, k + 1)?;
    let side = if right { &coeffs.c_plus } else { &coeffs.c_minus };
    let ax = x.abs();
    let term = |i: usize| side[i] * ax.powf(-coeffs.exponents[i]);
    let next = term(k);
    if next.abs() > tol {
        return Err(KacError::OutOfAsymptoticRange {
            x,
            next_term: next,
            tol,
        });
    }
    Ok(TailValue::Value((0..k).map(term).sum()))
}

pub fn gaussian_cdf(x: f64, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("positive standard deviation").cdf(x)
}

pub fn gaussian_quantile(u: f64, sd: f64) -> f64 {
    Normal::new(0.0, sd)
        .expect("positive standard deviation")
        .inverse_cdf(u)
}

pub fn cauchy_cdf(x: f64, scale: f64) -> f64 {
    0.5 + (x / scale).atan() / PI
}

pub fn cauchy_quantile(u: f64, scale: f64) -> f64 {
    scale * (PI * (u - 0.5)).tan()
}

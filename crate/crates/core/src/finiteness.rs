//! Sufficient conditions for `d_p(μ̄₀, μ∞) < ∞` from a declared tail
//! expansion of the initial law.
//!
//! The verdict is either established or not; a negative verdict never
//! claims the distance is infinite.

use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::fixed_point::{moments_recursive, steady_tail_expansion};
use crate::kernel::{find_alpha, find_p_bar, CollisionKernel};
use crate::stable::StableParams;

const MATCH_REL_TOL: f64 = 1e-9;
const MATCH_ABS_TOL: f64 = 1e-15;
const ALPHA_MATCH_TOL: f64 = 1e-6;

/// `k = ⌊1 + (p - α)/(pα)⌋`, the number of tail coefficients that must
/// match.
pub fn required_order(alpha: f64, p: f64) -> Result<usize> {
    if !(alpha > 0.0) || !(p > alpha) || !p.is_finite() {
        return Err(KacError::InvalidParameter(format!(
            "need p > α > 0, got α = {alpha}, p = {p}"
        )));
    }
    // guard against 1 + x landing a hair below an integer
    Ok((1.0 + (p - alpha) / (p * alpha) + 1e-12).floor() as usize)
}

/// Remainder `ζ` of the declared expansion, in the form
/// `|F₀ - Σ c̃ᵢ |x|^{-(i+1)α}| <= ζ(|x|) / |x|^{α + (p-α)/p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remainder {
    /// `ζ(x) = x^{-ε}`.
    Power(f64),
    /// `ζ(x) = (log x)^{-(1+ε)/p}`.
    Log(f64),
    /// A user-supplied bound with its integrability declared.
    Custom { integrable: Option<bool> },
}

impl Remainder {
    /// Whether `∫_B^∞ ζ^p(x)/x dx < ∞`.
    fn integrable(&self) -> Result<bool> {
        match *self {
            // ∫ x^{-εp-1} dx and ∫ (log x)^{-(1+ε)} d(log x) both converge for ε > 0
            Remainder::Power(e) | Remainder::Log(e) => Ok(e > 0.0),
            Remainder::Custom { integrable } => integrable
                .ok_or_else(|| KacError::MalformedTailSpec("custom remainder must declare its integrability".into())),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Remainder::Power(e) | Remainder::Log(e) if !(e > 0.0 && e.is_finite()) => {
                Err(KacError::MalformedTailSpec(format!("remainder ε must be > 0, got {e}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Positive,
    Negative,
}

/// Declared tails of `F₀`: `F₀(x) ~ Σ c⁻ᵢ |x|^{-(i+1)α}` as `x → -∞` and
/// `1 - F₀(x) ~ Σ c⁺ᵢ x^{-(i+1)α}` as `x → ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    pub c_minus: Vec<f64>,
    pub c_plus: Vec<f64>,
    pub remainder: Remainder,
    #[serde(default)]
    pub gamma0: f64,
    /// Half-line on which `∫|x|^p dF₀` is declared finite.
    #[serde(default)]
    pub one_sided_moment: Option<Side>,
    /// Whether `∫|x|^p dF₀ < ∞`; consulted only when the leading tail
    /// constants vanish.
    #[serde(default)]
    pub finite_absolute_moment: Option<bool>,
}

impl TailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_minus.len() != self.c_plus.len() {
            return Err(KacError::MalformedTailSpec(format!(
                "coefficient lists differ in length ({} vs {})",
                self.c_minus.len(),
                self.c_plus.len()
            )));
        }
        if self.c_minus.iter().chain(&self.c_plus).any(|c| !c.is_finite()) || !self.gamma0.is_finite() {
            return Err(KacError::MalformedTailSpec("coefficients must be finite".into()));
        }
        self.remainder.validate()
    }

    fn leading_zero(&self) -> bool {
        self.c_minus.first().copied().unwrap_or(0.0) == 0.0 && self.c_plus.first().copied().unwrap_or(0.0) == 0.0
    }

    /// The tails of `μ∞` itself: the first `k` steady coefficients and the
    /// remainder order of the steady expansion re-expressed as a power `ζ`.
    pub fn from_steady(kernel: &CollisionKernel, stable: &StableParams, p: f64) -> Result<Self> {
        let alpha = stable.alpha;
        let k = required_order(alpha, p)?;
        let threshold = alpha + (p - alpha) / p;
        let p_bar = find_p_bar(kernel, alpha).unwrap_or(f64::INFINITY);
        let one = (alpha - 1.0).abs() <= 1e-12;
        // largest admissible δ with S(order) < 0, the order being (k+δ)α,
        // or 2k-1+δ at α = 1
        let (base, span) = if one {
            ((2 * k - 1) as f64, 2.0)
        } else {
            (k as f64 * alpha, alpha)
        };
        let top = (base + span).min(p_bar - 1e-9 * p_bar.clamp(1.0, 1e9));
        let eps = top - threshold;
        if !(eps > 0.0) {
            return Err(KacError::InvalidParameter(format!(
                "the steady expansion is not sharp enough at p = {p}: remainder order {top} <= {threshold}"
            )));
        }
        let mut stable0 = *stable;
        stable0.gamma0 = 0.0;
        let tails = steady_tail_expansion(kernel, &stable0, k)?;
        let beta = stable.beta;
        let one_sided_moment = if one {
            None
        } else if beta == -1.0 {
            Some(Side::Positive)
        } else if beta == 1.0 {
            Some(Side::Negative)
        } else {
            None
        };
        Ok(Self {
            c_minus: tails.c_minus,
            c_plus: tails.c_plus,
            remainder: Remainder::Power(eps),
            gamma0: stable.gamma0,
            one_sided_moment,
            finite_absolute_moment: None,
        })
    }
}

/// A target coefficient pair `(c̃ᵢ⁻, c̃ᵢ⁺)` at order `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTarget {
    pub order: usize,
    pub minus: f64,
    pub plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub established: bool,
    pub k_used: usize,
    pub required_coefficients: Vec<CoefficientTarget>,
    pub reasons: Vec<String>,
}

struct Ledger {
    ok: bool,
    reasons: Vec<String>,
}

impl Ledger {
    fn check(&mut self, passed: bool, what: String) {
        self.ok &= passed;
        self.reasons
            .push(format!("{}: {what}", if passed { "passed" } else { "failed" }));
    }

    fn note(&mut self, what: String) {
        self.reasons.push(format!("note: {what}"));
    }
}

fn matches(declared: f64, target: f64) -> bool {
    (declared - target).abs() <= MATCH_REL_TOL * target.abs() + MATCH_ABS_TOL
}

/// Evaluates the sufficient conditions for a finite initial distance on `tail`.
pub fn check_finiteness(tail: &TailSpec, kernel: &CollisionKernel, stable: &StableParams, p: f64) -> Result<Verdict> {
    tail.validate()?;
    let alpha = stable.alpha;
    if !(alpha < 2.0) {
        return Err(KacError::InvalidParameter(
            "the finiteness test covers 0 < α < 2".into(),
        ));
    }
    let kernel_alpha = find_alpha(kernel)?;
    if (kernel_alpha - alpha).abs() > ALPHA_MATCH_TOL {
        return Err(KacError::InvalidParameter(format!(
            "stable α = {alpha} differs from the kernel's α = {kernel_alpha}"
        )));
    }
    let k = required_order(alpha, p)?;
    let one = (alpha - 1.0).abs() <= 1e-12;
    let p_bar = find_p_bar(kernel, alpha);
    let below_p_bar = |s: f64| p_bar.is_none_or(|b| s < b);
    let mut led = Ledger {
        ok: true,
        reasons: Vec::new(),
    };

    if one && tail.gamma0 != 0.0 {
        led.note(format!(
            "datum shifted by γ₀ = {}; the check runs on the centred pair",
            tail.gamma0
        ));
    } else if !one && tail.gamma0 != 0.0 {
        led.note("γ₀ only enters at α = 1 and is ignored".into());
    }

    // (e) vanishing tail constants: μ∞ is γ₀M∞ and only moments matter
    if tail.leading_zero() {
        let flag = tail.finite_absolute_moment.ok_or_else(|| {
            KacError::MalformedTailSpec("vanishing tail constants need finite_absolute_moment declared".into())
        })?;
        led.check(flag, format!("declared ∫|x|^{p} dμ̄₀ < ∞"));
        if tail.gamma0 != 0.0 {
            led.check(below_p_bar(p), format!("E[M∞^{p}] < ∞ (S({p}) < 0)"));
        }
        return Ok(Verdict {
            established: led.ok,
            k_used: 0,
            required_coefficients: Vec::new(),
            reasons: led.reasons,
        });
    }

    let threshold = alpha + (p - alpha) / p;
    let extreme = !one && stable.beta.abs() == 1.0;
    // (a) existence of s with S(s) < 0 beyond the threshold
    if extreme {
        let lower = threshold.max(p);
        led.check(
            below_p_bar(lower),
            format!("S(s) < 0 for some s > max(p, α + (p-α)/p) = {lower}"),
        );
    } else {
        led.check(
            below_p_bar(threshold),
            format!("S(s) < 0 for some s > α + (p-α)/p = {threshold}"),
        );
    }

    // (b) coefficient targets
    let mut stable0 = *stable;
    stable0.gamma0 = 0.0;
    let targets = steady_tail_expansion(kernel, &stable0, k)?;
    let required: Vec<CoefficientTarget> = (0..targets.c_plus.len())
        .map(|i| CoefficientTarget {
            order: i,
            minus: targets.c_minus[i],
            plus: targets.c_plus[i],
        })
        .collect();
    if targets.truncated {
        led.check(
            false,
            format!("only {} of {k} target coefficients are finite", required.len()),
        );
    }
    // with β = -1 only the left tail is matched, with β = 1 only the right
    let (check_left, check_right) = match (extreme, stable.beta) {
        (true, b) if b < 0.0 => (true, false),
        (true, _) => (false, true),
        _ => (true, true),
    };
    for t in &required {
        let i = t.order;
        if i >= tail.c_plus.len() {
            led.check(false, format!("missing coefficient at order {i}"));
            continue;
        }
        let left = !check_left || matches(tail.c_minus[i], t.minus);
        let right = !check_right || matches(tail.c_plus[i], t.plus);
        if left && right {
            led.check(true, format!("coefficients match at order {i}"));
        } else {
            led.check(
                false,
                format!(
                    "coefficient mismatch at order {i} (declared {}/{}, target {}/{})",
                    tail.c_minus[i], tail.c_plus[i], t.minus, t.plus
                ),
            );
        }
    }
    if tail.c_plus.len() > k {
        led.note(format!("coefficients beyond order {} fall inside the remainder", k - 1));
    }

    // (c) remainder integrability
    let integrable = tail.remainder.integrable()?;
    led.check(integrable, "∫ ζ^p(x)/x dx < ∞".into());

    // (d) one-sided moment for totally skewed laws
    if extreme {
        let needed = if stable.beta < 0.0 {
            Side::Positive
        } else {
            Side::Negative
        };
        led.check(
            tail.one_sided_moment == Some(needed),
            format!("finite p-th moment declared on the {needed:?} half-line").to_lowercase(),
        );
    }

    // k consistency with the mixing moments actually used
    let needed_orders = if one { 2 * k - 1 } else { k };
    let finite = moments_recursive(kernel, alpha, needed_orders).finite_orders();
    if finite < needed_orders {
        led.note(format!("mixing moments finite only up to order {finite}"));
    }

    Ok(Verdict {
        established: led.ok,
        k_used: k,
        required_coefficients: required,
        reasons: led.reasons,
    })
}

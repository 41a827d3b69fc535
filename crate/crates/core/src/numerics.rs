//! Small numerical toolbox: adaptive Gauss–Kronrod quadrature, bracketing
//! root finding, golden-section search and log-Gamma helpers.

use statrs::function::gamma;

/// Natural log of the Gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

pub fn gamma_fn(x: f64) -> f64 {
    gamma::gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    gamma::digamma(x)
}

/// `Γ(n + s) / (Γ(n) Γ(s + 1))` evaluated in log space. Requires `s > -1`.
pub fn gamma_ratio_moment(n: u64, s: f64) -> f64 {
    let n = n as f64;
    (ln_gamma(n + s) - ln_gamma(n) - ln_gamma(s + 1.0)).exp()
}

// 15-point Kronrod nodes on [-1, 1] (non-negative half) with the embedded
// 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]`.
///
/// Returns the integral estimate, or `f64::INFINITY` when the integrand
/// produces non-finite values or the refinement fails to settle, which is how
/// divergent moments are reported.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    let mut intervals = vec![{
        let (v, e) = gk15(&f, a, b);
        (a, b, v, e)
    }];
    for _ in 0..4000 {
        let total_err: f64 = intervals.iter().map(|iv| iv.3).sum();
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        if !total.is_finite() || !total_err.is_finite() {
            return f64::INFINITY;
        }
        if total_err <= abs_tol {
            return total;
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty interval list");
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval cannot be split further; accept as is
            let (v, _) = gk15(&f, lo, hi);
            intervals.push((lo, hi, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    let total: f64 = intervals.iter().map(|iv| iv.2).sum();
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, where `f(lo) > 0 >= f(hi)`.
/// Stops once `|f| <= ftol` and the bracket is narrower than `xtol`, or after
/// the bracket collapses to adjacent floats.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, ftol: f64, xtol: f64) -> f64 {
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        // interval exhausted in floating point
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        let fm = f(mid);
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= xtol && fm.abs() <= ftol {
            break;
        }
    }
    // return the endpoint with the smaller residual
    let candidates = [lo, hi, mid];
    candidates
        .into_iter()
        .min_by(|a, b| f(*a).abs().total_cmp(&f(*b).abs()))
        .unwrap_or(mid)
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `x^a` with the convention `0^a = 0` for every `a >= 0`.
#[inline]
pub fn pow0(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(a)
    }
}

/// `x^a ln x` with `0^a ln 0 := 0`.
#[inline]
pub fn pow_log0(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(a) * x.ln()
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

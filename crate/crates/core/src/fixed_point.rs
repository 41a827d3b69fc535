//! The fixed point `M∞` of the α-power smoothing transform, its moments, and
//! the steady state `V∞ = S_α M∞^{1/α}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kernel::CollisionKernel;
use crate::metrics::ks_two_sample;
use crate::numerics::binomial;
use crate::rng::par_batches;
use crate::stable::{cf_stable, tail_coefficients, StableParams, StableSampler, TailCoefficients};
use crate::wild::{PoweredSampler, WeightArray};

pub const DEFAULT_DEPTH: usize = 1 << 14;
pub const MAX_DEPTH: usize = 1 << 18;
pub const DEFAULT_POOL_SIZE: usize = 100_000;

const POOL_MAGIC: &[u8; 8] = b"KFPOOL01";

/// Moments `m_i = E[M∞^i]`, `i = 1..=k`; `None` marks an infinite moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub m: Vec<Option<f64>>,
}

impl MomentTable {
    /// Moment of order `i` (1-based).
    pub fn get(&self, i: usize) -> Option<f64> {
        self.m.get(i.checked_sub(1)?).copied().flatten()
    }

    pub fn finite_orders(&self) -> usize {
        self.m.iter().take_while(|m| m.is_some()).count()
    }
}

/// `m₁ = 1` and
/// `m_i = (-S(αi))^{-1} Σ_{j=1}^{i-1} C(i,j) E[L^{αj} R^{α(i-j)}] m_j m_{i-j}`
/// while `S(αi) < 0`; from the first order with `S(αi) >= 0` on, moments are
/// infinite.
pub fn moments_recursive(kernel: &CollisionKernel, alpha: f64, k: usize) -> MomentTable {
    let mut m: Vec<Option<f64>> = Vec::with_capacity(k);
    let conserved = kernel.conserves_alpha_power(alpha);
    for i in 1..=k {
        if i == 1 {
            m.push(Some(1.0));
            continue;
        }
        if m.last().copied().flatten().is_none() {
            m.push(None);
            continue;
        }
        let s = kernel.s(alpha * i as f64);
        if !(s < 0.0) || !s.is_finite() {
            m.push(None);
            continue;
        }
        if conserved {
            m.push(Some(1.0));
            continue;
        }
        let acc: f64 = (1..i)
            .map(|j| {
                let mj = m[j - 1].expect("lower orders finite");
                let mij = m[i - j - 1].expect("lower orders finite");
                binomial(i, j) * kernel.mixed_moment(alpha * j as f64, alpha * (i - j) as f64) * mj * mij
            })
            .sum();
        m.push(Some(acc / -s));
    }
    MomentTable { m }
}

/// One approximate draw of `M∞`: `Σ_j β_{j,n}^α` for a fresh tree with
/// `depth` leaves.
pub fn sample_m_infinity<R: Rng + ?Sized>(kernel: &CollisionKernel, alpha: f64, depth: usize, rng: &mut R) -> f64 {
    let mut w = WeightArray::with_capacity(depth);
    draw_m(&PoweredSampler::new(kernel, alpha), depth, &mut w, rng)
}

fn draw_m<R: Rng + ?Sized>(powered: &PoweredSampler<'_>, depth: usize, w: &mut WeightArray, rng: &mut R) -> f64 {
    w.reset();
    w.grow_with(depth.saturating_sub(1), rng, |g| powered.sample(g));
    w.weights().iter().sum()
}

/// A sample of the law `ν_α` of `M∞`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLaw {
    pool: Vec<f64>,
    pub alpha: f64,
    /// Leaves per tree used to approximate the martingale limit (0 when
    /// the law is the exact point mass).
    pub depth: usize,
    /// `ν_α = δ₁` exactly.
    pub exact: bool,
    pub mean: f64,
    pub m2: f64,
}

impl MixtureLaw {
    pub fn point_mass(alpha: f64) -> Self {
        Self {
            pool: vec![1.0],
            alpha,
            depth: 0,
            exact: true,
            mean: 1.0,
            m2: 1.0,
        }
    }

    pub fn from_pool(mut pool: Vec<f64>, alpha: f64, depth: usize) -> Result<Self> {
        if pool.is_empty() || pool.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(KacError::InvalidParameter(
                "pool entries must be finite and >= 0".into(),
            ));
        }
        pool.sort_by(f64::total_cmp);
        let n = pool.len() as f64;
        let mean = pool.iter().sum::<f64>() / n;
        let m2 = pool.iter().map(|v| v * v).sum::<f64>() / n;
        Ok(Self {
            pool,
            alpha,
            depth,
            exact: false,
            mean,
            m2,
        })
    }

    pub fn pool(&self) -> &[f64] {
        &self.pool
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.pool.len() == 1 {
            return self.pool[0];
        }
        self.pool[rng.random_range(0..self.pool.len())]
    }

    /// Sample moment of order `i` and its standard error.
    pub fn moment(&self, i: i32) -> (f64, f64) {
        let n = self.pool.len() as f64;
        let vals: Vec<f64> = self.pool.iter().map(|v| v.powi(i)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        if self.pool.len() < 2 {
            return (mean, 0.0);
        }
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    /// Whether the pool mean is within `4` standard errors of 1.
    pub fn mean_is_normalised(&self) -> bool {
        let (mean, se) = self.moment(1);
        (mean - 1.0).abs() <= 4.0 * se.max(1e-15)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_pool(path, &self.pool)
    }
}

/// Builds a pool of `size` draws at a fixed depth, in parallel batches with
/// streams derived from `seed`. Kernels with `L^α + R^α = 1` a.s. get the
/// exact point mass instead.
pub fn build_pool(kernel: &CollisionKernel, alpha: f64, depth: usize, size: usize, seed: u64) -> Result<MixtureLaw> {
    if depth == 0 || size == 0 {
        return Err(KacError::InvalidParameter("depth and pool size must be >= 1".into()));
    }
    if kernel.conserves_alpha_power(alpha) {
        return Ok(MixtureLaw::point_mass(alpha));
    }
    let pool = par_batches(seed, size, |rng, _, len| {
        let powered = PoweredSampler::new(kernel, alpha);
        let mut w = WeightArray::with_capacity(depth);
        (0..len).map(|_| draw_m(&powered, depth, &mut w, rng)).collect()
    });
    MixtureLaw::from_pool(pool, alpha, depth)
}

/// Starts at [`DEFAULT_DEPTH`] and doubles the depth until the pool's second
/// moment agrees with the recursion within 4 standard errors, up to
/// [`MAX_DEPTH`]. Without a finite second moment the first pool is returned.
pub fn build_pool_adaptive(kernel: &CollisionKernel, alpha: f64, size: usize, seed: u64) -> Result<MixtureLaw> {
    let target = moments_recursive(kernel, alpha, 2).get(2);
    let mut depth = DEFAULT_DEPTH;
    loop {
        let law = build_pool(kernel, alpha, depth, size, seed)?;
        let Some(m2) = target else { return Ok(law) };
        let (est, se) = law.moment(2);
        if law.exact || (est - m2).abs() <= 4.0 * se || depth >= MAX_DEPTH {
            return Ok(law);
        }
        depth *= 2;
    }
}

/// Two-sample KS statistic between the pool and `L^α M₁ + R^α M₂` with
/// `M₁, M₂` resampled from the pool.
pub fn fixed_point_residual<R: Rng + ?Sized>(law: &MixtureLaw, kernel: &CollisionKernel, rng: &mut R) -> f64 {
    if law.exact {
        return 0.0;
    }
    let alpha = law.alpha;
    let mut resampled: Vec<f64> = (0..law.len())
        .map(|_| {
            let (l, r) = kernel.sample(rng);
            crate::numerics::pow0(l, alpha) * law.sample(rng) + crate::numerics::pow0(r, alpha) * law.sample(rng)
        })
        .collect();
    resampled.sort_by(f64::total_cmp);
    ks_two_sample(law.pool(), &resampled)
}

/// Sampler for `V∞ = S_α M^{1/α}` (or `(S₁ + γ₀) M` at `α = 1`).
#[derive(Debug, Clone)]
pub struct SteadySampler<'a> {
    law: &'a MixtureLaw,
    stable: StableSampler,
    inv_alpha: f64,
}

impl<'a> SteadySampler<'a> {
    pub fn new(law: &'a MixtureLaw, stable: &StableParams) -> Result<Self> {
        if (law.alpha - stable.alpha).abs() > 1e-9 {
            return Err(KacError::InvalidParameter(format!(
                "mixing law built for α = {} but stable law has α = {}",
                law.alpha, stable.alpha
            )));
        }
        Ok(Self {
            law,
            stable: StableSampler::new(stable)?,
            inv_alpha: 1.0 / stable.alpha,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = self.law.sample(rng);
        let s = self.stable.sample(rng);
        if (self.stable.params().alpha - 1.0).abs() <= 1e-12 {
            s * m
        } else if m == 1.0 {
            s
        } else {
            s * m.powf(self.inv_alpha)
        }
    }
}

pub fn sample_steady<R: Rng + ?Sized>(law: &MixtureLaw, stable: &StableParams, rng: &mut R) -> Result<f64> {
    Ok(SteadySampler::new(law, stable)?.sample(rng))
}

/// `E exp(-λ M |ξ|^α (1 - iβ tan(πα/2) sign ξ))`, or `E e^{M(iγ₀ξ - λ|ξ|)}`
/// at `α = 1`, averaged over the pool.
pub fn steady_cf(law: &MixtureLaw, stable: &StableParams, xi: f64) -> Complex64 {
    let one = (stable.alpha - 1.0).abs() <= 1e-12;
    let total: Complex64 = law
        .pool()
        .iter()
        .map(|&m| {
            let scaled = StableParams {
                lambda: stable.lambda * m,
                gamma0: if one { stable.gamma0 * m } else { stable.gamma0 },
                ..*stable
            };
            cf_stable(&scaled, xi)
        })
        .sum();
    total / law.len() as f64
}

/// Tail coefficients of `V∞`: `c̃ᵢ± = cᵢ± m_{i+1}`, and at `α = 1`
/// `c̃ᵢ = (-1)^i λ^{2i+1} m_{2i+1} / (π(2i+1))`. Orders whose mixing moment
/// is infinite are cut off and `truncated` is set.
pub fn steady_tail_expansion(kernel: &CollisionKernel, stable: &StableParams, k: usize) -> Result<TailCoefficients> {
    let alpha = stable.alpha;
    let one = (alpha - 1.0).abs() <= 1e-12;
    let base = tail_coefficients(stable, k)?;
    let needed = if one { 2 * k - 1 } else { k };
    let moments = moments_recursive(kernel, alpha, needed);
    let order = |i: usize| if one { 2 * i + 1 } else { i + 1 };
    let usable = (0..k).take_while(|&i| moments.get(order(i)).is_some()).count();
    let scale = |c: &[f64]| -> Vec<f64> {
        (0..usable)
            .map(|i| c[i] * moments.get(order(i)).expect("finite by construction"))
            .collect()
    };
    Ok(TailCoefficients {
        k: usable,
        c_plus: scale(&base.c_plus),
        c_minus: scale(&base.c_minus),
        exponents: base.exponents[..usable].to_vec(),
        lambda_tilde: base.lambda_tilde,
        beta_tilde: base.beta_tilde,
        truncated: usable < k,
    })
}

/// Writes `KFPOOL01`, a little-endian `u64` count and the values as
/// little-endian `f64`.
pub fn save_pool(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(POOL_MAGIC)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pool(path: &Path) -> Result<Vec<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != POOL_MAGIC {
        return Err(KacError::Parse(format!("{} is not a pool file", path.display())));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n {
        return Err(KacError::Parse(format!(
            "pool file declares {n} values but holds {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

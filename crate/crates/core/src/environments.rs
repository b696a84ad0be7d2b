//! Objective functions over the arm grid and heavy-tailed reward channels.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::Domain;

/// Attempts at drawing a strictly positive function before giving up.
pub const POSITIVE_RESAMPLE_LIMIT: usize = 100;

/// Noise model turning `f(x)` into an observed reward.
#[derive(Clone, Debug)]
pub enum RewardChannel {
    GaussianAdditive { sigma: f64 },
    /// `f(x)` plus a Student-t draw with 3 degrees of freedom.
    StudentT,
    /// Pareto with shape 2 and scale `f(x)/2`, so the mean is `f(x)`.
    Pareto,
    /// Two-point law: `sgn(f) (v/(2 gap))^{1/alpha}` with probability
    /// `(2 gap / v)^{1/alpha} |f|`, zero otherwise.
    BinaryHeavyTail { gap: f64, v: f64, alpha: f64 },
    /// `f(x) +- magnitude` with equal odds at `spike_arm`, exactly `f(x)` elsewhere.
    SparseSpike { magnitude: f64, spike_arm: usize },
    /// A uniformly chosen row of a sample block (column = arm).
    EmpiricalResample { samples: Arc<DMatrix<f64>> },
}

/// Largest admissible gap `1/2 (1/2)^{alpha/(1+alpha)} v^{1/(1+alpha)}` of the two-point law.
pub fn max_binary_gap(v: f64, alpha: f64) -> f64 {
    0.5 * 0.5f64.powf(alpha / (1.0 + alpha)) * v.powf(1.0 / (1.0 + alpha))
}

/// `(1+alpha)`-moment bound of the Pareto channel: `B^{1+a} / (2^a (1-a))`.
pub fn pareto_moment_bound(norm_bound: f64, alpha: f64) -> f64 {
    norm_bound.powf(1.0 + alpha) / (2f64.powf(alpha) * (1.0 - alpha))
}

/// Student-t sample with 3 degrees of freedom: `Z / sqrt(chi2_3 / 3)`.
pub fn student_t3<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let chi2: f64 = (0..3)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g * g
        })
        .sum();
    z / (chi2 / 3.0).sqrt()
}

/// Ground truth plus reward channel with certified moment parameters.
#[derive(Clone, Debug)]
pub struct Environment {
    f: Vec<f64>,
    best_arm: usize,
    norm_bound: f64,
    channel: RewardChannel,
    alpha: f64,
    v: f64,
}

impl Environment {
    /// General constructor; `norm_bound` is `max |f|`.
    pub fn new(f: Vec<f64>, channel: RewardChannel, alpha: f64, v: f64) -> Result<Self> {
        if f.is_empty() || f.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("objective must be non-empty and finite".into()));
        }
        let norm_bound = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm_bound == 0.0 {
            return Err(Error::DegenerateData("objective is identically zero".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1] (got {alpha})")));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("v must be positive (got {v})")));
        }
        match &channel {
            RewardChannel::GaussianAdditive { sigma } if !(*sigma >= 0.0) => {
                return Err(Error::Config(format!("sigma must be >= 0 (got {sigma})")));
            }
            RewardChannel::Pareto if f.iter().any(|&x| x <= 0.0) => {
                return Err(Error::Config("Pareto rewards need f > 0 at every arm".into()));
            }
            RewardChannel::BinaryHeavyTail { gap, v: bv, alpha: ba } => {
                if !(*gap > 0.0) || *gap > max_binary_gap(*bv, *ba) * (1.0 + 1e-12) {
                    return Err(Error::Config(format!(
                        "binary gap {gap} exceeds its maximum {}",
                        max_binary_gap(*bv, *ba)
                    )));
                }
                if norm_bound > 2.0 * gap {
                    return Err(Error::Config(format!(
                        "binary channel needs |f| <= 2*gap = {} (max |f| = {norm_bound})",
                        2.0 * gap
                    )));
                }
            }
            RewardChannel::SparseSpike { spike_arm, magnitude }
                if *spike_arm >= f.len() || !(*magnitude >= 0.0) =>
            {
                return Err(Error::Config("spike arm out of range or negative magnitude".into()));
            }
            RewardChannel::EmpiricalResample { samples }
                if samples.ncols() != f.len() || samples.nrows() == 0 =>
            {
                return Err(Error::Input("sample block does not match the arm count".into()));
            }
            _ => {}
        }
        let mut best_arm = 0;
        for (i, &x) in f.iter().enumerate() {
            if x > f[best_arm] {
                best_arm = i;
            }
        }
        Ok(Self {
            f,
            best_arm,
            norm_bound,
            channel,
            alpha,
            v,
        })
    }

    /// Student-t(3) noise, `alpha = 1`, `v = B^2 + 3`.
    pub fn student_t(f: Vec<f64>) -> Result<Self> {
        let b = max_abs(&f);
        Self::new(f, RewardChannel::StudentT, 1.0, b * b + 3.0)
    }

    /// Pareto rewards with the given `alpha < 1`.
    pub fn pareto(f: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("Pareto moment order needs alpha in (0,1) (got {alpha})")));
        }
        let v = pareto_moment_bound(max_abs(&f), alpha);
        Self::new(f, RewardChannel::Pareto, alpha, v)
    }

    /// Two-point heavy-tailed law at the largest admissible gap.
    pub fn binary_heavy_tail(f: Vec<f64>, alpha: f64, v: f64) -> Result<Self> {
        let gap = max_binary_gap(v, alpha);
        Self::new(f, RewardChannel::BinaryHeavyTail { gap, v, alpha }, alpha, v)
    }

    pub fn sparse_spike(f: Vec<f64>, spike_arm: usize, magnitude: f64) -> Result<Self> {
        let b = max_abs(&f);
        Self::new(
            f,
            RewardChannel::SparseSpike {
                magnitude,
                spike_arm,
            },
            1.0,
            b * b + magnitude * magnitude,
        )
    }

    pub fn gaussian(f: Vec<f64>, sigma: f64) -> Result<Self> {
        let b = max_abs(&f);
        Self::new(f, RewardChannel::GaussianAdditive { sigma }, 1.0, b * b + sigma * sigma)
    }

    /// Dataset environment: `f` is the per-arm mean of `samples`, rewards
    /// resample its rows, `alpha = 1` and `v` is the largest per-arm mean
    /// of squared values.
    pub fn from_samples(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::Input("empty sample block".into()));
        }
        let n = samples.nrows() as f64;
        let f: Vec<f64> = samples.column_iter().map(|c| c.sum() / n).collect();
        let v = samples
            .column_iter()
            .map(|c| c.iter().map(|y| y * y).sum::<f64>() / n)
            .fold(0.0, f64::max);
        Self::new(
            f,
            RewardChannel::EmpiricalResample {
                samples: Arc::new(samples),
            },
            1.0,
            v,
        )
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn n_arms(&self) -> usize {
        self.f.len()
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    /// `B = max_x |f(x)|`.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn channel(&self) -> &RewardChannel {
        &self.channel
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn draw_reward<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<f64> {
        let fx = *self
            .f
            .get(arm)
            .ok_or_else(|| Error::Domain(format!("arm {arm} out of range")))?;
        let y = match &self.channel {
            RewardChannel::GaussianAdditive { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                fx + sigma * z
            }
            RewardChannel::StudentT => fx + student_t3(rng),
            RewardChannel::Pareto => {
                // inverse CDF of Pareto(shape 2) with U in (0, 1]
                let u = 1.0 - rng.random::<f64>();
                0.5 * fx / u.sqrt()
            }
            RewardChannel::BinaryHeavyTail { gap, v, alpha } => {
                let p = (2.0 * gap / v).powf(1.0 / alpha) * fx.abs();
                if rng.random::<f64>() < p {
                    fx.signum() * (v / (2.0 * gap)).powf(1.0 / alpha)
                } else {
                    0.0
                }
            }
            RewardChannel::SparseSpike {
                magnitude,
                spike_arm,
            } => {
                if arm == *spike_arm {
                    if rng.random::<bool>() {
                        fx + magnitude
                    } else {
                        fx - magnitude
                    }
                } else {
                    fx
                }
            }
            RewardChannel::EmpiricalResample { samples } => {
                let row = rng.random_range(0..samples.nrows());
                samples[(row, arm)]
            }
        };
        Ok(y)
    }

    /// Empirical `(1/n) sum |y_i|^{1+alpha}` at one arm.
    pub fn certify_moment<R: Rng + ?Sized>(
        &self,
        arm: usize,
        alpha: f64,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<MomentEstimate> {
        if n_samples < 10_000 {
            return Err(Error::Input(format!(
                "moment certification needs at least 10^4 samples (got {n_samples})"
            )));
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_samples {
            let m = self.draw_reward(arm, rng)?.abs().powf(1.0 + alpha);
            sum += m;
            sum_sq += m * m;
        }
        let n = n_samples as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        Ok(MomentEstimate {
            mean,
            standard_error: (var / n).sqrt(),
        })
    }
}

/// Monte-Carlo moment with its standard error (infinite-variance moments
/// make the standard error itself noisy).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub standard_error: f64,
}

fn max_abs(f: &[f64]) -> f64 {
    f.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `f = sum_i a_i k(., x_i)` with `p` uniformly chosen support arms and
/// coefficients uniform on `coeff_range`. With `require_positive`, draws
/// again (up to 100 times) until `min f > 0`.
pub fn sample_rkhs_function<R: Rng + ?Sized>(
    domain: &Domain,
    support_size: usize,
    coeff_range: (f64, f64),
    require_positive: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = domain.n_arms();
    if support_size == 0 {
        return Err(Error::Config("support size must be at least 1".into()));
    }
    let (lo, hi) = coeff_range;
    if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config(format!("bad coefficient range [{lo}, {hi}]")));
    }
    for _ in 0..POSITIVE_RESAMPLE_LIMIT {
        let mut f = vec![0.0; n];
        for _ in 0..support_size {
            let s = rng.random_range(0..n);
            let a = if lo == hi { lo } else { rng.random_range(lo..hi) };
            for (x, fx) in f.iter_mut().enumerate() {
                *fx += a * domain.k(x, s);
            }
        }
        if f.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateData("sampled function is identically zero".into()));
        }
        if !require_positive || f.iter().all(|&v| v > 0.0) {
            return Ok(f);
        }
    }
    Err(Error::Config(format!(
        "no strictly positive function after {POSITIVE_RESAMPLE_LIMIT} draws"
    )))
}

/// Affine rescale onto `[0, 1]`.
pub fn normalize_unit_range(f: &[f64]) -> Result<Vec<f64>> {
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateData("constant function cannot be normalized".into()));
    }
    Ok(f.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

//! Exact GP posterior over a finite arm domain.
//!
//! The state keeps the Cholesky factor `L` of `K_t + lambda I_t` implicitly:
//! for every arm `x` it caches `v_x = L^{-1} k_t(x)`. Appending an
//! observation at arm `a` adds row `(v_a, sqrt(sigma_t^2(a) + lambda))` to
//! `L`, and every cached vector grows by one entry. Posterior mean,
//! truncated-reward mean and variance at each arm are maintained alongside,
//! so a round costs `O(n_arms * t)` and queries are `O(1)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::Domain;

/// Added once to a failing Cholesky pivot before giving up.
pub const CHOLESKY_JITTER: f64 = 1e-8;

/// Which reward vector a posterior mean is computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardView {
    Raw,
    Truncated,
}

#[derive(Clone, Debug)]
pub struct ExactPosterior {
    domain: Arc<Domain>,
    lambda: f64,
    observed: Vec<usize>,
    rewards: Vec<f64>,
    truncated: Vec<f64>,
    /// Diagonal of the Cholesky factor.
    pivots: Vec<f64>,
    /// `L^{-1} k_t(x)` per arm.
    projections: Vec<Vec<f64>>,
    /// `L^{-1} Y_t` and `L^{-1} Y_hat_t`.
    whitened: Vec<f64>,
    whitened_truncated: Vec<f64>,
    raw_variance: Vec<f64>,
    mean: Vec<f64>,
    mean_truncated: Vec<f64>,
    /// `sigma^2_{s-1}(x_s)` for every played round.
    played_variances: Vec<f64>,
}

impl ExactPosterior {
    pub fn new(domain: Arc<Domain>, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive (got {lambda})")));
        }
        let n = domain.n_arms();
        let raw_variance = (0..n).map(|i| domain.k(i, i)).collect();
        Ok(Self {
            domain,
            lambda,
            observed: Vec::new(),
            rewards: Vec::new(),
            truncated: Vec::new(),
            pivots: Vec::new(),
            projections: vec![Vec::new(); n],
            whitened: Vec::new(),
            whitened_truncated: Vec::new(),
            raw_variance,
            mean: vec![0.0; n],
            mean_truncated: vec![0.0; n],
            played_variances: Vec::new(),
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of observations so far.
    pub fn t(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_arms(&self) -> &[usize] {
        &self.observed
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn truncated_rewards(&self) -> &[f64] {
        &self.truncated
    }

    pub fn played_variances(&self) -> &[f64] {
        &self.played_variances
    }

    /// Appends one observation, extending the Cholesky factor by one row.
    pub fn update(&mut self, arm: usize, reward: f64, truncated_reward: f64) -> Result<()> {
        self.domain.check_arm(arm)?;
        if !reward.is_finite() || !truncated_reward.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite reward {reward} / {truncated_reward}"
            )));
        }
        let row = self.projections[arm].clone();
        let prior_variance = self.raw_variance[arm].max(0.0);
        let mut pivot_sq = self.raw_variance[arm] + self.lambda;
        if !(pivot_sq > 0.0) {
            pivot_sq += CHOLESKY_JITTER;
            if !(pivot_sq > 0.0) {
                return Err(Error::Numeric(format!(
                    "Cholesky breakdown at round {} (pivot^2 = {pivot_sq})",
                    self.t() + 1
                )));
            }
        }
        let pivot = pivot_sq.sqrt();

        let w = (reward - dot(&row, &self.whitened)) / pivot;
        let w_hat = (truncated_reward - dot(&row, &self.whitened_truncated)) / pivot;

        for x in 0..self.domain.n_arms() {
            let c = (self.domain.k(arm, x) - dot(&row, &self.projections[x])) / pivot;
            self.projections[x].push(c);
            self.raw_variance[x] -= c * c;
            self.mean[x] += c * w;
            self.mean_truncated[x] += c * w_hat;
        }

        self.played_variances.push(prior_variance);

        self.pivots.push(pivot);
        self.whitened.push(w);
        self.whitened_truncated.push(w_hat);
        self.observed.push(arm);
        self.rewards.push(reward);
        self.truncated.push(truncated_reward);
        Ok(())
    }

    /// `k_t(x)^T (K_t + lambda I)^{-1} Y` (or `Y_hat`); zero before any observation.
    pub fn mean(&self, arm: usize, view: RewardView) -> f64 {
        match view {
            RewardView::Raw => self.mean[arm],
            RewardView::Truncated => self.mean_truncated[arm],
        }
    }

    /// Posterior variance clamped at zero.
    pub fn variance(&self, arm: usize) -> f64 {
        let v = self.raw_variance[arm];
        debug_assert!(v >= -1e-10, "posterior variance {v} at arm {arm}");
        v.max(0.0)
    }

    /// Posterior variance before clamping.
    pub fn raw_variance(&self, arm: usize) -> f64 {
        self.raw_variance[arm]
    }

    pub fn means(&self, view: RewardView) -> &[f64] {
        match view {
            RewardView::Raw => &self.mean,
            RewardView::Truncated => &self.mean_truncated,
        }
    }

    /// `ln |I_t + K_t / lambda|`.
    pub fn log_det_ratio(&self) -> f64 {
        2.0 * self.pivots.iter().map(|p| p.ln()).sum::<f64>()
            - self.t() as f64 * self.lambda.ln()
    }

    /// Materializes the lower-triangular Cholesky factor of `K_t + lambda I_t`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        let t = self.t();
        let mut l = DMatrix::zeros(t, t);
        for (s, &arm) in self.observed.iter().enumerate() {
            for j in 0..s {
                l[(s, j)] = self.projections[arm][j];
            }
            l[(s, s)] = self.pivots[s];
        }
        l
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// Realized information gain `1/2 ln |I + K_A / lambda|` of a list of arms
/// (repeats allowed).
pub fn information_gain(domain: &Domain, arms: &[usize], lambda: f64) -> Result<f64> {
    if arms.is_empty() {
        return Err(Error::Input("information gain needs a non-empty arm list".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive (got {lambda})")));
    }
    for &a in arms {
        domain.check_arm(a)?;
    }
    // |I_t + K_t/lambda| = |I + N^{1/2} K_S N^{1/2}/lambda| over the distinct
    // arms S with play counts N, so the cost depends on |S| rather than t
    let mut distinct: Vec<usize> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &a in arms {
        match distinct.iter().position(|&d| d == a) {
            Some(i) => counts[i] += 1.0,
            None => {
                distinct.push(a);
                counts.push(1.0);
            }
        }
    }
    let n = distinct.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        (counts[i] * counts[j]).sqrt() * domain.k(distinct[i], distinct[j]) / lambda
            + if i == j { 1.0 } else { 0.0 }
    });
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numeric("I + K/lambda is not positive definite".into()))?;
    Ok(chol.l().diagonal().iter().map(|d| d.ln()).sum())
}

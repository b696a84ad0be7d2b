//! Reward truncation: the per-reward rule used by TGP-UCB and the
//! feature-space adaptive rule used by ATA-GP-UCB.
//!
//! Truncation zeroes a value whose magnitude exceeds the level; it never
//! clips. The threshold is inclusive, `|y| <= b` keeps `y`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::inverse_sqrt_spd;

/// A truncation threshold, or the absence of one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncationLevel {
    Finite(f64),
    /// No truncation: every value is kept.
    Unbounded,
}

impl TruncationLevel {
    #[inline]
    pub fn admits(self, value: f64) -> bool {
        match self {
            TruncationLevel::Finite(b) => value.abs() <= b,
            TruncationLevel::Unbounded => true,
        }
    }

    /// The level as a plain number, `+inf` when unbounded (for reporting only).
    pub fn as_f64(self) -> f64 {
        match self {
            TruncationLevel::Finite(b) => b,
            TruncationLevel::Unbounded => f64::INFINITY,
        }
    }
}

/// `y * 1{|y| <= b}`.
#[inline]
pub fn truncate_reward(y: f64, level: TruncationLevel) -> f64 {
    if level.admits(y) {
        y
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `b_t = v^{1/(1+a)} t^{1/(2(1+a))}`.
    Tgp,
    /// `b_t = (v / ln(2 m T / delta))^{1/(1+a)} t^{(1-a)/(2(1+a))}` with `m` quadrature nodes.
    AtaQff { nodes: usize },
    /// As `AtaQff` with `ln(4 m_t T / delta)` and the current dictionary size `m_t`.
    AtaNystrom,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationSchedule {
    pub kind: ScheduleKind,
    pub v: f64,
    pub alpha: f64,
    pub delta: f64,
    pub horizon: usize,
    /// Scalar applied to every finite level.
    pub multiplier: f64,
}

impl TruncationSchedule {
    pub fn new(kind: ScheduleKind, v: f64, alpha: f64, delta: f64, horizon: usize) -> Result<Self> {
        let s = Self {
            kind,
            v,
            alpha,
            delta,
            horizon,
            multiplier: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_multiplier(mut self, multiplier: f64) -> Result<Self> {
        self.multiplier = multiplier;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::Config(format!("moment bound v must be positive (got {})", self.v)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1] (got {})", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta must lie in (0,1] (got {})", self.delta)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "truncation multiplier must be positive (got {})",
                self.multiplier
            )));
        }
        if let ScheduleKind::AtaQff { nodes: 0 } = self.kind {
            return Err(Error::Config("QFF schedule needs at least one node".into()));
        }
        Ok(())
    }

    /// `b_t` at round `t >= 1` given the current feature dimension `m_t`
    /// (only read by the Nyström schedule).
    pub fn level(&self, t: usize, m_t: usize) -> TruncationLevel {
        debug_assert!(t >= 1);
        let a = self.alpha;
        let t = t as f64;
        let horizon = self.horizon as f64;
        let b = match self.kind {
            ScheduleKind::Tgp => self.v.powf(1.0 / (1.0 + a)) * t.powf(1.0 / (2.0 * (1.0 + a))),
            ScheduleKind::AtaQff { nodes } => {
                let log = (2.0 * nodes as f64 * horizon / self.delta).ln();
                (self.v / log).powf(1.0 / (1.0 + a)) * t.powf((1.0 - a) / (2.0 * (1.0 + a)))
            }
            ScheduleKind::AtaNystrom => {
                if m_t == 0 {
                    return TruncationLevel::Unbounded;
                }
                let log = (4.0 * m_t as f64 * horizon / self.delta).ln();
                (self.v / log).powf(1.0 / (1.0 + a)) * t.powf((1.0 - a) / (2.0 * (1.0 + a)))
            }
        };
        TruncationLevel::Finite(self.multiplier * b)
    }
}

/// Row sums `r_i = sum_tau u_{i,tau} y_tau 1{|u_{i,tau} y_tau| <= b}`.
///
/// Column `tau` of the weight matrix `u` is `weights.column(columns[tau])`,
/// which lets callers share one column per distinct arm. Returns the sums
/// and the number of products that were zeroed.
pub fn truncated_projection_sums(
    weights: &DMatrix<f64>,
    columns: &[usize],
    y: &[f64],
    level: TruncationLevel,
) -> (DVector<f64>, usize) {
    assert_eq!(columns.len(), y.len(), "one reward per weight column");
    let m = weights.nrows();
    let mut sums = DVector::zeros(m);
    let mut dropped = 0;
    for (&c, &y_tau) in columns.iter().zip(y) {
        let col = weights.column(c);
        for i in 0..m {
            let p = col[i] * y_tau;
            if level.admits(p) {
                sums[i] += p;
            } else {
                dropped += 1;
            }
        }
    }
    (sums, dropped)
}

#[derive(Clone, Debug)]
pub struct AdaptiveEstimate {
    /// `theta = V^{-1/2} r_hat`.
    pub theta: DVector<f64>,
    pub r_hat: DVector<f64>,
    /// Number of `(i, tau)` products zeroed by the truncation.
    pub dropped: usize,
}

/// Feature-space adaptive truncation.
///
/// `phi` is the `t x m` design matrix and `v_inv_sqrt` is `(phi^T phi + lambda I)^{-1/2}`.
/// The rows of `v_inv_sqrt * phi^T` weight the rewards; each weighted
/// reward is truncated independently.
pub fn adaptive_truncate(
    phi: &DMatrix<f64>,
    v_inv_sqrt: &DMatrix<f64>,
    y: &[f64],
    level: TruncationLevel,
) -> Result<AdaptiveEstimate> {
    let (t, m) = phi.shape();
    if y.len() != t || v_inv_sqrt.shape() != (m, m) {
        return Err(Error::Input(format!(
            "shape mismatch: phi {t}x{m}, V^-1/2 {:?}, {} rewards",
            v_inv_sqrt.shape(),
            y.len()
        )));
    }
    let u = v_inv_sqrt * phi.transpose();
    let columns: Vec<usize> = (0..t).collect();
    let (r_hat, dropped) = truncated_projection_sums(&u, &columns, y, level);
    let theta = v_inv_sqrt * &r_hat;
    Ok(AdaptiveEstimate {
        theta,
        r_hat,
        dropped,
    })
}

/// Columns of `A (A^T A + lambda I)^{-1/2}`.
pub fn normalized_columns(a: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive (got {lambda})")));
    }
    let q = a.ncols();
    let gram = a.transpose() * a + DMatrix::identity(q, q) * lambda;
    Ok(a * inverse_sqrt_spd(&gram, lambda)?)
}

/// `l_p` norms of the columns of `A (A^T A + lambda I)^{-1/2}`.
pub fn column_norms(a: &DMatrix<f64>, lambda: f64, p: f64) -> Result<Vec<f64>> {
    let c = normalized_columns(a, lambda)?;
    Ok(c.column_iter()
        .map(|col| col.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p))
        .collect())
}

/// Largest `l_2` column norm of `A (A^T A + lambda I)^{-1/2}`; never exceeds one.
pub fn column_norm_check(a: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    Ok(column_norms(a, lambda, 2.0)?
        .into_iter()
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, t: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let phi = DMatrix::from_fn(t, m, |_, _| rng.random_range(-1.0..1.0));
        let v = phi.transpose() * &phi + DMatrix::identity(m, m);
        let s = inverse_sqrt_spd(&v, 1.0).unwrap();
        let y = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        (phi, s, y)
    }

    #[test]
    fn reward_truncation_zeroes_and_is_inclusive() {
        assert_eq!(truncate_reward(1.5, TruncationLevel::Finite(2.0)), 1.5);
        assert_eq!(truncate_reward(-3.0, TruncationLevel::Finite(2.0)), 0.0);
        assert_eq!(truncate_reward(2.0, TruncationLevel::Finite(2.0)), 2.0);
        assert_eq!(truncate_reward(-2.0, TruncationLevel::Finite(2.0)), -2.0);
        assert_eq!(truncate_reward(1e300, TruncationLevel::Unbounded), 1e300);
    }

    #[test]
    fn tgp_level() {
        let s = TruncationSchedule::new(ScheduleKind::Tgp, 1.0, 1.0, 0.1, 100).unwrap();
        assert_eq!(s.level(16, 0), TruncationLevel::Finite(2.0));
        let prev = s.level(1, 0).as_f64();
        assert!(s.level(2, 0).as_f64() > prev);
    }

    #[test]
    fn ata_qff_level() {
        let s = TruncationSchedule::new(ScheduleKind::AtaQff { nodes: 4 }, 1.0, 1.0, 0.1, 100).unwrap();
        assert_eq!(s.level(1, 8), s.level(1000, 8));
        let s = TruncationSchedule::new(ScheduleKind::AtaQff { nodes: 4 }, 1.0, 0.5, 0.1, 100).unwrap();
        let b = s.level(1, 8).as_f64();
        // (1 / ln 8000)^{2/3}, evaluated at 30 digits
        assert!((b - 0.231_339_875_791_931_56).abs() < 1e-14);
    }

    #[test]
    fn ata_nystrom_level() {
        let s = TruncationSchedule::new(ScheduleKind::AtaNystrom, 2.0, 0.5, 0.1, 50).unwrap();
        assert_eq!(s.level(3, 0), TruncationLevel::Unbounded);
        let expected = (2.0f64 / (4.0 * 7.0 * 50.0 / 0.1f64).ln()).powf(1.0 / 1.5) * 3f64.powf(0.5 / 3.0);
        assert!((s.level(3, 7).as_f64() - expected).abs() < 1e-14);
        let s2 = s.with_multiplier(0.5).unwrap();
        assert!((s2.level(3, 7).as_f64() - 0.5 * expected).abs() < 1e-14);
    }

    #[test]
    fn schedule_validation() {
        assert!(TruncationSchedule::new(ScheduleKind::Tgp, 0.0, 1.0, 0.1, 10).is_err());
        assert!(TruncationSchedule::new(ScheduleKind::Tgp, 1.0, 1.5, 0.1, 10).is_err());
        assert!(TruncationSchedule::new(ScheduleKind::Tgp, 1.0, 1.0, 0.0, 10).is_err());
        assert!(TruncationSchedule::new(ScheduleKind::Tgp, 1.0, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn zero_rewards_give_zero_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (phi, s, _) = random_instance(&mut rng, 20, 5);
        let est = adaptive_truncate(&phi, &s, &[0.0; 20], TruncationLevel::Finite(0.1)).unwrap();
        assert_eq!(est.theta.norm(), 0.0);
    }

    #[test]
    fn outlier_is_truncated_per_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (t, m) = (51, 6);
        let (phi, s, _) = random_instance(&mut rng, t, m);
        let mut y = vec![1.0; t];
        y[17] = 1e6;
        let sched = TruncationSchedule::new(ScheduleKind::AtaNystrom, 2.0, 1.0, 0.1, 100).unwrap();
        let level = sched.level(t, m);
        let b = level.as_f64();
        let est = adaptive_truncate(&phi, &s, &y, level).unwrap();
        let ridge = adaptive_truncate(&phi, &s, &y, TruncationLevel::Unbounded).unwrap();
        assert!(est.theta.norm() <= ridge.theta.norm());

        // brute-force recomputation of every r_i
        let u = &s * phi.transpose();
        for i in 0..m {
            let mut r = 0.0;
            for tau in 0..t {
                let p = u[(i, tau)] * y[tau];
                if p.abs() <= b {
                    r += p;
                }
            }
            assert!((r - est.r_hat[i]).abs() < 1e-12);
            assert!((u[(i, 17)] * y[17]).abs() > b);
        }
    }

    #[test]
    fn column_norm_examples() {
        let a = DMatrix::<f64>::identity(4, 4);
        assert!((column_norm_check(&a, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(column_norm_check(&DMatrix::zeros(5, 3), 1.0).unwrap(), 0.0);
    }

    /// Column norms through the SVD `A = U S V^T`:
    /// `A (A^T A + lambda I)^{-1/2} = U S (S^2 + lambda)^{-1/2} V^T`.
    fn svd_columns(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let svd = a.clone().svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let scaled = svd.singular_values.map(|s| s / (s * s + lambda).sqrt());
        u * DMatrix::from_diagonal(&scaled) * vt
    }

    proptest! {
        #[test]
        fn unbounded_truncation_is_ridge(seed in 0u64..100_000, t in 1usize..100, m in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (phi, s, y) = random_instance(&mut rng, t, m);
            let est = adaptive_truncate(&phi, &s, &y, TruncationLevel::Unbounded).unwrap();
            let v = phi.transpose() * &phi + DMatrix::identity(m, m);
            let ridge = v.lu().solve(&(phi.transpose() * DVector::from_column_slice(&y))).unwrap();
            prop_assert!((est.theta - ridge).amax() < 1e-10);
        }

        #[test]
        fn outlier_shift_is_bounded(seed in 0u64..10_000, t in 5usize..60, m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (phi, s, y) = random_instance(&mut rng, t, m);
            let sched = TruncationSchedule::new(ScheduleKind::AtaNystrom, 4.0, 1.0, 0.1, 100).unwrap();
            let level = sched.level(t, m);
            let base = adaptive_truncate(&phi, &s, &y, level).unwrap();
            let mut y2 = y.clone();
            let k = rng.random_range(0..t);
            y2[k] *= 1e6;
            let moved = adaptive_truncate(&phi, &s, &y2, level).unwrap();
            let bound = m as f64 * level.as_f64() / 1f64.sqrt();
            prop_assert!((moved.theta - base.theta).norm() <= bound);
        }

        #[test]
        fn column_norm_bound(seed in 0u64..100_000, p in 1usize..50, q in 1usize..10, alpha in 0.05f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = rng.random_range(0.1..10.0);
            let a = DMatrix::from_fn(p, q, |_, _| scale * rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(0.1..2.0);
            prop_assert!(column_norm_check(&a, lambda).unwrap() <= 1.0 + 1e-10);
            let bound = (p as f64).powf((1.0 - alpha) / (2.0 * (1.0 + alpha)));
            for n in column_norms(&a, lambda, 1.0 + alpha).unwrap() {
                prop_assert!(n <= bound + 1e-8);
            }
            let oracle = svd_columns(&a, lambda);
            prop_assert!((normalized_columns(&a, lambda).unwrap() - oracle).amax() < 1e-9);
        }
    }
}

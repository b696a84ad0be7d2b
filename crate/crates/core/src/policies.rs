//! UCB arm-selection policies and their confidence-width schedules.
//!
//! `beta(t, ..)` always returns the width used in round `t + 1`, so the
//! first round uses `beta(0, ..)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ApproxPosterior, QffEmbedding};
use crate::kernels::Domain;
use crate::posterior::{ExactPosterior, RewardView};
use crate::truncation::{truncate_reward, ScheduleKind, TruncationLevel, TruncationSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Untruncated GP-UCB with `beta_t = ln t`.
    GpUcb,
    /// GP-UCB on per-reward truncated observations.
    TgpUcb,
    /// Feature-space adaptive truncation with quadrature Fourier features.
    AtaQff,
    /// Feature-space adaptive truncation with Nyström embeddings.
    AtaNystrom,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::GpUcb => "gp_ucb",
            PolicyKind::TgpUcb => "tgp_ucb",
            PolicyKind::AtaQff => "ata_qff",
            PolicyKind::AtaNystrom => "ata_nystrom",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gp_ucb" | "gpucb" => Ok(PolicyKind::GpUcb),
            "tgp_ucb" | "tgpucb" | "tgp" => Ok(PolicyKind::TgpUcb),
            "ata_qff" | "ataqff" => Ok(PolicyKind::AtaQff),
            "ata_nystrom" | "atanystrom" => Ok(PolicyKind::AtaNystrom),
            _ => Err(Error::Config(format!("unknown policy '{s}'"))),
        }
    }
}

/// Which confidence width a policy uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// The schedule from the policy's regret analysis.
    #[default]
    Theory,
    /// `beta_t = ln t`.
    LogT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// RKHS norm bound `B`.
    pub norm_bound: f64,
    /// Moment bound `v` on `E|y|^{1+alpha}`.
    pub v: f64,
    pub alpha: f64,
    pub delta: f64,
    pub lambda: f64,
    pub horizon: usize,
    /// Nyström accuracy `epsilon`.
    pub epsilon: f64,
    /// Nyström oversampling `q`; `None` uses `6 rho ln(4T/delta) / epsilon^2`.
    pub q: Option<f64>,
    /// QFF nodes per input dimension.
    pub qff_nodes: usize,
    pub beta_multiplier: f64,
    pub truncation_multiplier: f64,
    /// `GpUcb` always uses `LogT`.
    pub beta_rule: BetaRule,
    /// Turns truncation off (every level becomes unbounded).
    pub disable_truncation: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::TgpUcb,
            norm_bound: 1.0,
            v: 4.0,
            alpha: 1.0,
            delta: 0.1,
            lambda: 1.0,
            horizon: 1000,
            epsilon: 0.1,
            q: None,
            qff_nodes: 8,
            beta_multiplier: 1.0,
            truncation_multiplier: 1.0,
            beta_rule: BetaRule::Theory,
            disable_truncation: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, val: f64| Err(Error::Config(format!("{what} out of range (got {val})")));
        if !(self.norm_bound > 0.0 && self.norm_bound.is_finite()) {
            return bad("norm bound B must be > 0;", self.norm_bound);
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be > 0;", self.lambda);
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0,1];", self.alpha);
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0,1);", self.epsilon);
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0,1];", self.delta);
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return bad("v must be > 0;", self.v);
        }
        if !(self.beta_multiplier > 0.0 && self.beta_multiplier.is_finite()) {
            return bad("beta multiplier must be > 0;", self.beta_multiplier);
        }
        if let Some(q) = self.q {
            if !(q > 0.0 && q.is_finite()) {
                return bad("q must be > 0;", q);
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon T must be at least 1".into()));
        }
        self.schedule(1).map(|_| ())
    }

    /// `(1 + eps) / (1 - eps)`.
    pub fn rho(&self) -> f64 {
        (1.0 + self.epsilon) / (1.0 - self.epsilon)
    }

    pub fn effective_q(&self) -> f64 {
        self.q.unwrap_or_else(|| {
            6.0 * self.rho() * (4.0 * self.horizon as f64 / self.delta).ln()
                / (self.epsilon * self.epsilon)
        })
    }

    /// Truncation schedule for the policy kind; `None` when rewards are
    /// never truncated.
    pub fn schedule(&self, qff_nodes_total: usize) -> Result<Option<TruncationSchedule>> {
        let kind = match self.kind {
            PolicyKind::GpUcb => return Ok(None),
            PolicyKind::TgpUcb => ScheduleKind::Tgp,
            PolicyKind::AtaQff => ScheduleKind::AtaQff {
                nodes: qff_nodes_total,
            },
            PolicyKind::AtaNystrom => ScheduleKind::AtaNystrom,
        };
        let s = TruncationSchedule::new(kind, self.v, self.alpha, self.delta, self.horizon)?
            .with_multiplier(self.truncation_multiplier)?;
        Ok(Some(s))
    }

    /// Width for round `t + 1`. `log_det` is `ln|I + K_t/lambda|` (TGP),
    /// `features` is `m = mbar^d` for QFF and `m_t` for Nyström.
    pub fn beta(&self, t: usize, log_det: f64, features: usize) -> f64 {
        let rule = match self.kind {
            PolicyKind::GpUcb => BetaRule::LogT,
            _ => self.beta_rule,
        };
        let a = self.alpha;
        let tf = t as f64;
        let horizon = self.horizon as f64;
        let b_norm = self.norm_bound;
        let raw = match (rule, self.kind) {
            (BetaRule::LogT, _) => (tf + 1.0).ln(),
            (BetaRule::Theory, PolicyKind::GpUcb) => unreachable!(),
            (BetaRule::Theory, PolicyKind::TgpUcb) => {
                let b_t = self.v.powf(1.0 / (1.0 + a)) * tf.powf(1.0 / (2.0 * (1.0 + a)));
                let inner = (log_det.max(0.0) + 2.0 * (1.0 / self.delta).ln()).max(0.0);
                b_norm + 3.0 / self.lambda.sqrt() * b_t * inner.sqrt()
            }
            (BetaRule::Theory, PolicyKind::AtaQff) => {
                let m = features as f64;
                let log = (2.0 * m * horizon / self.delta).ln();
                b_norm
                    + 4.0 * (m / self.lambda).sqrt()
                        * self.v.powf(1.0 / (1.0 + a))
                        * log.powf(a / (1.0 + a))
                        * tf.powf((1.0 - a) / (2.0 * (1.0 + a)))
            }
            (BetaRule::Theory, PolicyKind::AtaNystrom) => {
                let base = b_norm * (1.0 + 1.0 / (1.0 - self.epsilon).sqrt());
                if features == 0 {
                    base
                } else {
                    let m = features as f64;
                    let log = (4.0 * m * horizon / self.delta).ln();
                    base + 4.0 * (m / self.lambda).sqrt()
                        * self.v.powf(1.0 / (1.0 + a))
                        * log.powf(a / (1.0 + a))
                        * tf.powf((1.0 - a) / (2.0 * (1.0 + a)))
                }
            }
        };
        self.beta_multiplier * raw
    }
}

/// What happened in one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub t: usize,
    pub arm: usize,
    pub reward: f64,
    /// TGP: the reward was zeroed. ATA: some weighted reward was zeroed.
    pub truncated: bool,
    /// Width used to select this round's arm.
    pub beta: f64,
    pub level: TruncationLevel,
    /// Feature dimension after the update (0 for exact posteriors).
    pub m_t: usize,
}

#[derive(Clone, Debug)]
// one per policy, so the variant size gap does not matter
#[allow(clippy::large_enum_variant)]
enum Model {
    Exact(ExactPosterior),
    Approx(ApproxPosterior),
}

/// A running policy: posterior state plus schedules.
#[derive(Clone, Debug)]
pub struct Policy {
    config: PolicyConfig,
    model: Model,
    schedule: Option<TruncationSchedule>,
    qff_nodes_total: usize,
    q: f64,
}

impl Policy {
    pub fn new(config: PolicyConfig, domain: Arc<Domain>) -> Result<Self> {
        config.validate()?;
        let mut qff_nodes_total = 0;
        let model = match config.kind {
            PolicyKind::GpUcb | PolicyKind::TgpUcb => {
                Model::Exact(ExactPosterior::new(domain, config.lambda)?)
            }
            PolicyKind::AtaQff => {
                let lengthscale = match domain.kernel() {
                    crate::kernels::Kernel::SquaredExponential { lengthscale } => *lengthscale,
                    _ => {
                        return Err(Error::Config(
                            "QFF embeddings need a squared-exponential kernel".into(),
                        ))
                    }
                };
                let emb = QffEmbedding::new(config.qff_nodes, domain.arms().dim(), lengthscale)?;
                qff_nodes_total = emb.num_nodes();
                Model::Approx(ApproxPosterior::qff(domain, Arc::new(emb), config.lambda)?)
            }
            PolicyKind::AtaNystrom => Model::Approx(ApproxPosterior::nystrom(domain, config.lambda)?),
        };
        let schedule = config.schedule(qff_nodes_total.max(1))?;
        let q = config.effective_q();
        Ok(Self {
            config,
            model,
            schedule,
            qff_nodes_total,
            q,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn n_arms(&self) -> usize {
        match &self.model {
            Model::Exact(p) => p.domain().n_arms(),
            Model::Approx(p) => p.domain().n_arms(),
        }
    }

    /// Rounds played so far.
    pub fn t(&self) -> usize {
        match &self.model {
            Model::Exact(p) => p.t(),
            Model::Approx(p) => p.t(),
        }
    }

    /// Current feature dimension (`m_t` for Nyström, `2m` for QFF, 0 for exact).
    pub fn feature_dim(&self) -> usize {
        match &self.model {
            Model::Exact(_) => 0,
            Model::Approx(p) => p.dim(),
        }
    }

    pub fn exact(&self) -> Option<&ExactPosterior> {
        match &self.model {
            Model::Exact(p) => Some(p),
            Model::Approx(_) => None,
        }
    }

    pub fn approx(&self) -> Option<&ApproxPosterior> {
        match &self.model {
            Model::Approx(p) => Some(p),
            Model::Exact(_) => None,
        }
    }

    /// Estimate the policy ranks arms with (truncated mean for TGP).
    pub fn mean(&self, arm: usize) -> f64 {
        match &self.model {
            Model::Exact(p) if self.config.kind == PolicyKind::TgpUcb => {
                p.mean(arm, RewardView::Truncated)
            }
            Model::Exact(p) => p.mean(arm, RewardView::Raw),
            Model::Approx(p) => p.mean(arm),
        }
    }

    pub fn variance(&self, arm: usize) -> f64 {
        match &self.model {
            Model::Exact(p) => p.variance(arm),
            Model::Approx(p) => p.variance(arm),
        }
    }

    /// Width for the next round.
    pub fn next_beta(&self) -> f64 {
        let t = self.t();
        match &self.model {
            Model::Exact(p) => self.config.beta(t, p.log_det_ratio(), 0),
            Model::Approx(p) => {
                let features = match self.config.kind {
                    PolicyKind::AtaQff => self.qff_nodes_total,
                    _ => p.dim(),
                };
                self.config.beta(t, 0.0, features)
            }
        }
    }

    pub fn score(&self, arm: usize, beta: f64) -> f64 {
        self.mean(arm) + beta * self.variance(arm).sqrt()
    }

    /// Arm maximizing `mean + beta * sd`; ties go to the lowest index.
    pub fn select_arm(&self) -> Result<usize> {
        let beta = self.next_beta();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for arm in 0..self.n_arms() {
            let s = self.score(arm, beta);
            if s.is_nan() {
                return Err(Error::Numeric(format!("NaN UCB score at arm {arm}")));
            }
            if s > best_score {
                best = arm;
                best_score = s;
            }
        }
        Ok(best)
    }

    /// Truncation level for round `t` given dimension `m_t`.
    fn level(&self, t: usize, m_t: usize) -> TruncationLevel {
        match &self.schedule {
            Some(s) if !self.config.disable_truncation => s.level(t, m_t),
            _ => TruncationLevel::Unbounded,
        }
    }

    /// Records the reward of `arm` and updates the model.
    pub fn step<R: Rng + ?Sized>(&mut self, arm: usize, reward: f64, rng: &mut R) -> Result<StepInfo> {
        let beta = self.next_beta();
        let t = self.t() + 1;
        let q = self.q;
        let kind = self.config.kind;
        let (level, truncated) = match &mut self.model {
            Model::Exact(_) => {
                let level = self.level(t, 0);
                let clipped = truncate_reward(reward, level);
                if let Model::Exact(p) = &mut self.model {
                    p.update(arm, reward, clipped)?;
                }
                (level, clipped != reward)
            }
            Model::Approx(p) => {
                p.observe(arm, reward)?;
                if kind == PolicyKind::AtaNystrom {
                    p.resample_dictionary(q, rng)?;
                }
                let m_t = p.dim();
                let level = match &self.schedule {
                    Some(s) if !self.config.disable_truncation => s.level(t, m_t),
                    _ => TruncationLevel::Unbounded,
                };
                p.refit(level)?;
                (level, p.dropped() > 0)
            }
        };
        Ok(StepInfo {
            t,
            arm,
            reward,
            truncated,
            beta,
            level,
            m_t: self.feature_dim(),
        })
    }
}

/// Per-round regret series of a play sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Regret {
    pub best_arm: usize,
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// `R_t / t`.
    pub time_average: Vec<f64>,
}

pub fn regret_accounting(f: &[f64], played: &[usize]) -> Result<Regret> {
    if f.is_empty() || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("objective must be non-empty and finite".into()));
    }
    let mut best_arm = 0;
    for (i, &v) in f.iter().enumerate() {
        if v > f[best_arm] {
            best_arm = i;
        }
    }
    let best = f[best_arm];
    let mut instantaneous = Vec::with_capacity(played.len());
    for &a in played {
        let v = f
            .get(a)
            .ok_or_else(|| Error::Domain(format!("played arm {a} out of range")))?;
        instantaneous.push(best - v);
    }
    let mut cumulative = Vec::with_capacity(played.len());
    let mut acc = 0.0;
    for &r in &instantaneous {
        acc += r;
        cumulative.push(acc);
    }
    let time_average = cumulative
        .iter()
        .enumerate()
        .map(|(i, c)| c / (i + 1) as f64)
        .collect();
    Ok(Regret {
        best_arm,
        instantaneous,
        cumulative,
        time_average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ArmSet, Kernel};
    use proptest::prelude::ProptestConfig;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn domain(n: usize, l: f64) -> Arc<Domain> {
        Arc::new(Domain::new(Kernel::squared_exponential(l).unwrap(), ArmSet::grid_1d(n).unwrap()).unwrap())
    }

    fn config(kind: PolicyKind) -> PolicyConfig {
        PolicyConfig {
            kind,
            horizon: 100,
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn beta_at_round_one() {
        let mut c = config(PolicyKind::TgpUcb);
        c.norm_bound = 2.5;
        assert_eq!(c.beta(0, 0.0, 0), 2.5);
        c.kind = PolicyKind::AtaNystrom;
        c.epsilon = 0.19;
        assert!((c.beta(0, 0.0, 0) - 2.5 * (1.0 + 1.0 / 0.9)).abs() < 1e-14);
        c.kind = PolicyKind::GpUcb;
        assert_eq!(c.beta(0, 0.0, 0), 0.0);
        assert!((c.beta(9, 0.0, 0) - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tgp_beta_hand_value() {
        let c = PolicyConfig {
            kind: PolicyKind::TgpUcb,
            norm_bound: 1.0,
            lambda: 1.0,
            v: 1.0,
            alpha: 1.0,
            delta: (-1.0f64).exp(),
            ..PolicyConfig::default()
        };
        // 1 + 3 sqrt(ln 2 + 2), evaluated to 18 digits independently
        let expected = 5.923_243_303_457_539;
        assert!((c.beta(1, 2f64.ln(), 0) - expected).abs() < 1e-13);
    }

    #[test]
    fn qff_beta_formula_and_constant_for_alpha_one() {
        let c = PolicyConfig {
            kind: PolicyKind::AtaQff,
            norm_bound: 1.0,
            lambda: 4.0,
            v: 9.0,
            alpha: 1.0,
            delta: 0.5,
            horizon: 10,
            ..PolicyConfig::default()
        };
        let m = 3.0f64;
        let expected = 1.0 + 4.0 * (m / 4.0).sqrt() * 3.0 * (2.0 * m * 10.0 / 0.5).ln().sqrt();
        assert!((c.beta(1, 0.0, 3) - expected).abs() < 1e-12);
        assert_eq!(c.beta(1, 0.0, 3), c.beta(50, 0.0, 3));
    }

    #[test]
    fn default_q_follows_dictionary_guarantee() {
        let c = PolicyConfig {
            epsilon: 0.5,
            delta: 0.1,
            horizon: 100,
            ..PolicyConfig::default()
        };
        assert!((c.effective_q() - 6.0 * 3.0 * 4000f64.ln() / 0.25).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        for bad in [
            PolicyConfig { lambda: 0.0, ..Default::default() },
            PolicyConfig { alpha: 1.5, ..Default::default() },
            PolicyConfig { epsilon: 1.0, ..Default::default() },
            PolicyConfig { delta: 0.0, ..Default::default() },
            PolicyConfig { norm_bound: -1.0, ..Default::default() },
            PolicyConfig { horizon: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert!(PolicyConfig::default().validate().is_ok());
        assert_eq!("ATA-Nystrom".parse::<PolicyKind>().unwrap(), PolicyKind::AtaNystrom);
        assert!("ucb".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn first_round_picks_lowest_index_on_equal_prior() {
        let d = domain(20, 0.2);
        for kind in [PolicyKind::GpUcb, PolicyKind::TgpUcb, PolicyKind::AtaQff, PolicyKind::AtaNystrom] {
            let p = Policy::new(config(kind), d.clone()).unwrap();
            assert_eq!(p.select_arm().unwrap(), 0, "{kind:?}");
        }
    }

    #[test]
    fn two_arms_prefer_higher_mean() {
        let d = Arc::new(
            Domain::new(Kernel::squared_exponential(0.01).unwrap(), ArmSet::grid_1d(2).unwrap()).unwrap(),
        );
        let mut p = Policy::new(config(PolicyKind::GpUcb), d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // equal variances after one pull each; means 0.1/2 and 0.9/2
        p.step(0, 0.2, &mut rng).unwrap();
        p.step(1, 1.8, &mut rng).unwrap();
        assert!((p.variance(0) - p.variance(1)).abs() < 1e-12);
        assert_eq!(p.select_arm().unwrap(), 1);
    }

    #[test]
    fn tgp_without_truncation_matches_gp_state() {
        let d = domain(30, 0.2);
        let mut c = config(PolicyKind::TgpUcb);
        c.v = 100.0;
        let mut tgp = Policy::new(c, d.clone()).unwrap();
        let mut gp = Policy::new(config(PolicyKind::GpUcb), d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..25 {
            let a = rng.random_range(0..30);
            let y = rng.random_range(-1.0..1.0);
            assert!(!tgp.step(a, y, &mut rng).unwrap().truncated);
            gp.step(a, y, &mut rng).unwrap();
        }
        for x in 0..30 {
            assert_eq!(tgp.mean(x), gp.mean(x));
            assert_eq!(tgp.variance(x), gp.variance(x));
        }
    }

    #[test]
    fn tgp_zeroes_large_rewards() {
        let d = domain(10, 0.2);
        let mut c = config(PolicyKind::TgpUcb);
        c.v = 1.0;
        let mut p = Policy::new(c, d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let info = p.step(3, 50.0, &mut rng).unwrap();
        assert!(info.truncated);
        assert_eq!(info.level, TruncationLevel::Finite(1.0));
        assert_eq!(p.mean(3), 0.0);
        assert!(p.exact().unwrap().mean(3, RewardView::Raw) > 0.0);
    }

    #[test]
    fn ata_qff_untruncated_mean_is_feature_ridge() {
        let d = domain(40, 1.0);
        let mut c = config(PolicyKind::AtaQff);
        c.disable_truncation = true;
        let mut p = Policy::new(c, d.clone()).unwrap();
        let f: Vec<f64> = (0..40).map(|x| 0.8 * d.k(x, 12) - 0.3 * d.k(x, 33)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut played = vec![];
        for _ in 0..30 {
            let a = rng.random_range(0..40);
            played.push(a);
            p.step(a, f[a], &mut rng).unwrap();
        }
        let approx = p.approx().unwrap();
        let phi = approx.design_matrix();
        let m = phi.ncols();
        let y = nalgebra::DVector::from_iterator(30, played.iter().map(|&a| f[a]));
        let theta = (phi.transpose() * &phi + nalgebra::DMatrix::<f64>::identity(m, m))
            .lu()
            .solve(&(phi.transpose() * y))
            .unwrap();
        for x in 0..40 {
            let expected = approx.feature(x).dot(&theta);
            assert!((p.mean(x) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn ata_nystrom_full_dictionary_variance_is_exact() {
        let d = domain(50, 0.2);
        let mut c = config(PolicyKind::AtaNystrom);
        c.q = Some(1e12);
        c.disable_truncation = true;
        let mut p = Policy::new(c, d.clone()).unwrap();
        let mut exact = ExactPosterior::new(d, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let a = p.select_arm().unwrap();
            let y = rng.random_range(-1.0..1.0);
            p.step(a, y, &mut rng).unwrap();
            exact.update(a, y, y).unwrap();
            for x in 0..50 {
                assert!((p.variance(x) - exact.variance(x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn selection_matches_brute_force_scan() {
        let d = domain(100, 0.1);
        for kind in [PolicyKind::TgpUcb, PolicyKind::AtaNystrom, PolicyKind::AtaQff] {
            let mut c = config(kind);
            c.beta_multiplier = 0.05;
            let mut p = Policy::new(c, d.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            for _ in 0..10 {
                let a = rng.random_range(0..100);
                p.step(a, rng.random_range(-2.0..2.0), &mut rng).unwrap();
            }
            let beta = p.next_beta();
            let scores: Vec<f64> = (0..100).map(|x| p.mean(x) + beta * p.variance(x).sqrt()).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = scores.iter().position(|&s| s == max).unwrap();
            assert_eq!(p.select_arm().unwrap(), first, "{kind:?}");
        }
    }

    #[test]
    fn regret_examples() {
        let r = regret_accounting(&[0.0, 1.0], &[0, 0, 1]).unwrap();
        assert_eq!(r.instantaneous, vec![1.0, 1.0, 0.0]);
        assert_eq!(r.cumulative, vec![1.0, 2.0, 2.0]);
        assert_eq!(r.time_average[2], 2.0 / 3.0);
        let r = regret_accounting(&[0.3, 0.7, 0.1], &[1; 5]).unwrap();
        assert!(r.cumulative.iter().all(|&c| c == 0.0));
        assert!(regret_accounting(&[1.0], &[2]).is_err());
    }

    fn run(kind: PolicyKind, d: &Arc<Domain>, seed: u64, rounds: usize) -> Vec<usize> {
        let mut c = config(kind);
        c.beta_multiplier = 0.1;
        let mut p = Policy::new(c, d.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arms = vec![];
        for _ in 0..rounds {
            let a = p.select_arm().unwrap();
            let y = (a as f64 / 10.0).sin() + rng.random_range(-1.0..1.0);
            p.step(a, y, &mut rng).unwrap();
            arms.push(a);
        }
        arms
    }

    #[test]
    fn identical_seeds_replay_identically() {
        let d = domain(30, 0.2);
        for kind in [PolicyKind::GpUcb, PolicyKind::TgpUcb, PolicyKind::AtaQff, PolicyKind::AtaNystrom] {
            assert_eq!(run(kind, &d, 9, 40), run(kind, &d, 9, 40));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn regret_prefix_sums(f in proptest::collection::vec(-5.0f64..5.0, 1..20), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let played: Vec<usize> = (0..50).map(|_| rng.random_range(0..f.len())).collect();
            let r = regret_accounting(&f, &played).unwrap();
            let best = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut acc = 0.0;
            for (t, &a) in played.iter().enumerate() {
                acc += best - f[a];
                prop_assert!(r.instantaneous[t] >= 0.0);
                prop_assert_eq!(r.cumulative[t], acc);
            }
        }

        #[test]
        fn beta_non_decreasing_in_t(t in 0usize..5000, m in 0usize..200, ld in 0.0f64..50.0) {
            for kind in [PolicyKind::GpUcb, PolicyKind::TgpUcb, PolicyKind::AtaQff, PolicyKind::AtaNystrom] {
                for alpha in [0.3, 1.0] {
                    let c = PolicyConfig { kind, alpha, horizon: 10_000, ..PolicyConfig::default() };
                    prop_assert!(c.beta(t + 1, ld, m) >= c.beta(t, ld, m));
                }
            }
        }

        #[test]
        fn permuting_arms_permutes_selection(seed in 0u64..500) {
            // distinct random means on an almost diagonal kernel keep scores distinct
            let n = 12;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let points: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
            let permuted: Vec<Vec<f64>> = (0..n).map(|i| points[perm[i]].clone()).collect();
            let k = Kernel::squared_exponential(0.01).unwrap();
            let d1 = Arc::new(Domain::new(k.clone(), ArmSet::new(points).unwrap()).unwrap());
            let d2 = Arc::new(Domain::new(k, ArmSet::new(permuted).unwrap()).unwrap());
            let mut p1 = Policy::new(config(PolicyKind::GpUcb), d1).unwrap();
            let mut p2 = Policy::new(config(PolicyKind::GpUcb), d2).unwrap();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (x, &y) in ys.iter().enumerate() {
                p1.step(x, y, &mut rng).unwrap();
            }
            // perm[i] is the original arm at permuted position i
            let mut inverse = vec![0; n];
            for (i, &o) in perm.iter().enumerate() {
                inverse[o] = i;
            }
            for x in 0..n {
                p2.step(inverse[x], ys[x], &mut rng).unwrap();
            }
            let a1 = p1.select_arm().unwrap();
            let a2 = p2.select_arm().unwrap();
            prop_assert_eq!(perm[a2], a1);
        }
    }
}

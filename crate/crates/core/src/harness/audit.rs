//! Invariant audits: each check replays a small experiment and reports the
//! measured quantity next to the bound it must respect.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::environments::Environment;
use crate::error::Result;
use crate::features::{qff_error_bound, ApproxPosterior, QffEmbedding};
use crate::harness::config::{prepare_environment, ExperimentConfig, PreparedEnvironment};
use crate::harness::runner::{mix64, trial_environment, trial_policy_config};
use crate::kernels::{Domain, Kernel};
use crate::policies::{Policy, PolicyConfig, PolicyKind};
use crate::posterior::{information_gain, ExactPosterior};
use crate::truncation::{column_norms, TruncationLevel};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditEntry {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

fn entry(name: &str, passed: bool, measured: f64, threshold: f64, detail: String) -> AuditEntry {
    AuditEntry {
        name: name.to_string(),
        passed,
        measured,
        threshold,
        detail,
    }
}

fn rng_for(seed: u64, check: u64, run: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(check << 32 | run)))
}

/// Largest `|k_SE(x,y) - phi(x).phi(y)|` over a `grid x grid` lattice on `[0,1]`.
pub fn qff_max_error(nodes: usize, lengthscale: f64, grid: usize) -> Result<f64> {
    let emb = QffEmbedding::new(nodes, 1, lengthscale)?;
    let kernel = Kernel::squared_exponential(lengthscale)?;
    let xs: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1).max(1) as f64).collect();
    let feats = xs.iter().map(|&x| emb.embed(&[x])).collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..grid {
        for j in i..grid {
            let exact = kernel.evaluate(&[xs[i]], &[xs[j]])?;
            worst = worst.max((exact - feats[i].dot(&feats[j])).abs());
        }
    }
    Ok(worst)
}

/// Whether `f` stays inside `mean +- beta * sd` at every arm before every
/// round of one run.
pub fn coverage_run<R: Rng + ?Sized>(
    policy: &mut Policy,
    env: &Environment,
    horizon: usize,
    rng: &mut R,
) -> Result<bool> {
    let mut covered = true;
    for _ in 0..horizon {
        let beta = policy.next_beta();
        for (x, &fx) in env.f().iter().enumerate() {
            if (fx - policy.mean(x)).abs() > beta * policy.variance(x).sqrt() {
                covered = false;
            }
        }
        let arm = policy.select_arm()?;
        let y = env.draw_reward(arm, rng)?;
        policy.step(arm, y, rng)?;
    }
    Ok(covered)
}

/// `(sum_s sigma^2_{s-1}(x_s), 2 (1 + lambda) * information gain)` on a played trajectory.
pub fn variance_sum_and_bound(posterior: &ExactPosterior) -> Result<(f64, f64)> {
    let sum: f64 = posterior.played_variances().iter().sum();
    let lambda = posterior.lambda();
    let gain = information_gain(posterior.domain(), posterior.observed_arms(), lambda)?;
    Ok((sum, 2.0 * (1.0 + lambda) * gain))
}

/// Outcome of one Nyström dictionary run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SandwichRun {
    /// `(1-e)/(1+e) s2 <= s2~ <= (1+e)/(1-e) s2` at every arm.
    pub variances_sandwiched: bool,
    pub dictionary_size: usize,
    /// `6 rho (1 + 1/lambda) q * information gain`.
    pub size_bound: f64,
}

/// Plays `rounds` uniformly random arms, resampling the dictionary each
/// round, and compares the final variances with the exact posterior.
pub fn sandwich_run<R: Rng + ?Sized>(
    domain: &Arc<Domain>,
    lambda: f64,
    epsilon: f64,
    q: f64,
    rounds: usize,
    rng: &mut R,
) -> Result<SandwichRun> {
    let mut approx = ApproxPosterior::nystrom(domain.clone(), lambda)?;
    let mut exact = ExactPosterior::new(domain.clone(), lambda)?;
    for _ in 0..rounds {
        let a = rng.random_range(0..domain.n_arms());
        approx.observe(a, 0.0)?;
        exact.update(a, 0.0, 0.0)?;
        approx.resample_dictionary(q, rng)?;
        approx.refit(TruncationLevel::Unbounded)?;
    }
    let rho = (1.0 + epsilon) / (1.0 - epsilon);
    let sandwiched = (0..domain.n_arms()).all(|x| {
        let s2 = exact.variance(x);
        let s2a = approx.variance(x);
        s2 / rho - 1e-12 <= s2a && s2a <= rho * s2 + 1e-12
    });
    let gain = information_gain(domain, exact.observed_arms(), lambda)?;
    Ok(SandwichRun {
        variances_sandwiched: sandwiched,
        dictionary_size: approx.dim(),
        size_bound: 6.0 * rho * (1.0 + 1.0 / lambda) * q * gain,
    })
}

/// Default dictionary oversampling `6 rho ln(4T/delta) / epsilon^2`.
pub fn theory_q(epsilon: f64, delta: f64, horizon: usize) -> f64 {
    let rho = (1.0 + epsilon) / (1.0 - epsilon);
    6.0 * rho * (4.0 * horizon as f64 / delta).ln() / (epsilon * epsilon)
}

pub fn audit(config: &ExperimentConfig) -> Result<AuditReport> {
    config.validate()?;
    let a = &config.audit;
    let prepared = prepare_environment(&config.environment)?;
    let mut entries = Vec::new();

    for &nodes in &a.qff_nodes {
        let err = qff_max_error(nodes, a.qff_lengthscale, a.qff_grid)?;
        let bound = qff_error_bound(1, nodes, a.qff_lengthscale);
        entries.push(entry(
            &format!("qff_error_bound[m={nodes}]"),
            err <= bound,
            err,
            bound,
            format!("{0}x{0} grid, lengthscale {1}", a.qff_grid, a.qff_lengthscale),
        ));
    }

    entries.push(column_norm_entry(a.seed, a.column_norm_instances)?);
    entries.push(variance_sum_entry(config, &prepared)?);
    entries.push(coverage_entry(config, &prepared)?);
    entries.extend(moment_entries(config, &prepared)?);
    entries.extend(sandwich_entries(config, &prepared)?);
    Ok(AuditReport { entries })
}

fn column_norm_entry(seed: u64, instances: usize) -> Result<AuditEntry> {
    let mut worst_l2: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..instances {
        let mut rng = rng_for(seed, 1, i as u64);
        let t = rng.random_range(1..=50);
        let q = rng.random_range(1..=10);
        let lambda = rng.random_range(0.1..3.0);
        let alpha = rng.random_range(0.05..=1.0);
        let m = DMatrix::from_fn(t, q, |_, _| rng.random_range(-2.0..2.0));
        worst_l2 = worst_l2.max(column_norms(&m, lambda, 2.0)?.into_iter().fold(0.0, f64::max));
        let cap = (t as f64).powf((1.0 - alpha) / (2.0 * (1.0 + alpha)));
        for n in column_norms(&m, lambda, 1.0 + alpha)? {
            worst_excess = worst_excess.max(n - cap);
        }
    }
    Ok(entry(
        "column_norms",
        worst_l2 <= 1.0 + 1e-10 && worst_excess <= 1e-8,
        worst_l2,
        1.0,
        format!("{instances} instances; worst l_(1+a) excess over its cap {worst_excess:.3e}"),
    ))
}

fn variance_sum_entry(config: &ExperimentConfig, prepared: &PreparedEnvironment) -> Result<AuditEntry> {
    let mut rng = rng_for(config.audit.seed, 2, 0);
    let env = trial_environment(&config.environment, prepared, &mut rng)?;
    let mut pc = trial_policy_config(config, &env);
    pc.kind = PolicyKind::TgpUcb;
    pc.horizon = config.audit.variance_horizon;
    let mut policy = Policy::new(pc, prepared.domain.clone())?;
    for _ in 0..config.audit.variance_horizon {
        let arm = policy.select_arm()?;
        let y = env.draw_reward(arm, &mut rng)?;
        policy.step(arm, y, &mut rng)?;
    }
    let exact = policy.exact().expect("TGP keeps an exact posterior");
    let (sum, bound) = variance_sum_and_bound(exact)?;
    Ok(entry(
        "sum_of_variances",
        sum <= bound + 1e-6,
        sum,
        bound,
        format!("TGP-UCB trajectory, T = {}, lambda = {}", exact.t(), exact.lambda()),
    ))
}

fn coverage_entry(config: &ExperimentConfig, prepared: &PreparedEnvironment) -> Result<AuditEntry> {
    let a = &config.audit;
    let mut covered = 0;
    let mut delta = config.policy.delta;
    for run in 0..a.coverage_trials {
        let mut rng = rng_for(a.seed, 3, run as u64);
        let env = trial_environment(&config.environment, prepared, &mut rng)?;
        let mut pc: PolicyConfig = trial_policy_config(config, &env);
        pc.kind = PolicyKind::TgpUcb;
        pc.horizon = a.coverage_horizon;
        pc.beta_multiplier = 1.0;
        pc.truncation_multiplier = 1.0;
        delta = pc.delta;
        let mut policy = Policy::new(pc, prepared.domain.clone())?;
        if coverage_run(&mut policy, &env, a.coverage_horizon, &mut rng)? {
            covered += 1;
        }
    }
    let frac = covered as f64 / a.coverage_trials.max(1) as f64;
    let threshold = 1.0 - delta - 0.05;
    Ok(entry(
        "confidence_coverage",
        frac >= threshold,
        frac,
        threshold,
        format!("{} TGP-UCB runs of {} rounds", a.coverage_trials, a.coverage_horizon),
    ))
}

fn moment_entries(config: &ExperimentConfig, prepared: &PreparedEnvironment) -> Result<Vec<AuditEntry>> {
    let a = &config.audit;
    let mut rng = rng_for(a.seed, 4, 0);
    let env = trial_environment(&config.environment, prepared, &mut rng)?;
    let n = env.n_arms();
    let count = a.moment_arms.clamp(1, n);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_arm = 0;
    let mut passed = true;
    for i in 0..count {
        let arm = if count == 1 { 0 } else { i * (n - 1) / (count - 1) };
        let m = env.certify_moment(arm, env.alpha(), a.moment_samples.max(10_000), &mut rng)?;
        let slack = m.mean - env.v() - 3.0 * m.standard_error;
        if slack > worst {
            worst = slack;
            worst_arm = arm;
        }
        passed &= slack <= 0.0;
    }
    Ok(vec![entry(
        "moment_certification",
        passed,
        worst + env.v(),
        env.v(),
        format!(
            "{count} arms, {} samples each; tightest arm {worst_arm} (measured includes 3 SE)",
            a.moment_samples.max(10_000)
        ),
    )])
}

fn sandwich_entries(config: &ExperimentConfig, prepared: &PreparedEnvironment) -> Result<Vec<AuditEntry>> {
    let a = &config.audit;
    let eps = config.policy.epsilon;
    let lambda = config.policy.lambda;
    let q = theory_q(eps, 0.05, a.sandwich_rounds);
    let mut sandwiched = 0;
    let mut within_size = 0;
    for run in 0..a.sandwich_runs {
        let mut rng = rng_for(a.seed, 5, run as u64);
        let r = sandwich_run(&prepared.domain, lambda, eps, q, a.sandwich_rounds, &mut rng)?;
        sandwiched += r.variances_sandwiched as usize;
        within_size += (r.dictionary_size as f64 <= r.size_bound) as usize;
    }
    let runs = a.sandwich_runs.max(1) as f64;
    Ok(vec![
        entry(
            "nystrom_variance_sandwich",
            sandwiched as f64 / runs >= 0.9,
            sandwiched as f64 / runs,
            0.9,
            format!("{} runs of {} rounds, q = {q:.1}", a.sandwich_runs, a.sandwich_rounds),
        ),
        entry(
            "nystrom_dictionary_size",
            within_size as f64 / runs >= 0.9,
            within_size as f64 / runs,
            0.9,
            "fraction of runs with m_t <= 6 rho (1 + 1/lambda) q gain".into(),
        ),
    ])
}

//! Trial orchestration and result files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{normalize_unit_range, sample_rkhs_function, Environment};
use crate::error::{Error, Result};
use crate::harness::config::{
    prepare_environment, ChannelSpec, EnvironmentSpec, ExperimentConfig, PreparedEnvironment,
};
use crate::policies::{Policy, PolicyConfig};
use crate::truncation::TruncationLevel;

/// Largest tolerated fraction of aborted trials.
pub const MAX_ABORT_FRACTION: f64 = 0.1;

pub const CSV_HEADER: [&str; 10] = [
    "trial",
    "t",
    "arm",
    "reward",
    "truncated",
    "inst_regret",
    "cum_regret",
    "beta",
    "b",
    "m_t",
];

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for trial `index` of an experiment seeded with `master`.
pub fn trial_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(master ^ mix64(index)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub arm: usize,
    pub reward: f64,
    pub truncated: bool,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub beta: f64,
    pub b: TruncationLevel,
    pub m_t: usize,
    pub wall_clock: Duration,
}

#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub trial: usize,
    pub rounds: Vec<RoundRecord>,
    /// Error that stopped the trial early.
    pub aborted: Option<String>,
    /// `1/2 ln|I + K_T/lambda|` over the played arms.
    pub information_gain: Option<f64>,
}

impl TrialRecord {
    pub fn final_time_average_regret(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.cum_regret / r.t as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub horizon: usize,
    pub trials: usize,
    pub aborted: usize,
    pub seed: u64,
    /// Mean over completed trials of `R_t / t`, indexed by `t - 1`.
    pub mean_time_average_regret: Vec<f64>,
    pub std_time_average_regret: Vec<f64>,
    pub final_mean_time_average_regret: f64,
    pub final_std_time_average_regret: f64,
    /// Mean realized information gain of the played arms.
    pub mean_information_gain: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub trials: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Builds the environment for one trial (fresh `f` for synthetic runs).
pub fn trial_environment<R: Rng + ?Sized>(
    spec: &EnvironmentSpec,
    prepared: &PreparedEnvironment,
    rng: &mut R,
) -> Result<Environment> {
    match spec {
        EnvironmentSpec::Dataset { .. } => {
            let samples = prepared
                .samples
                .clone()
                .ok_or_else(|| Error::Config("dataset samples missing".into()))?;
            Environment::from_samples(samples)
        }
        EnvironmentSpec::Synthetic {
            support_size,
            coeff_range,
            channel,
            ..
        } => {
            let positive = matches!(channel, ChannelSpec::Pareto { .. });
            let range = coeff_range.unwrap_or(if positive { (0.0, 1.0) } else { (-1.0, 1.0) });
            let f = sample_rkhs_function(&prepared.domain, *support_size, range, positive, rng)?;
            match *channel {
                ChannelSpec::StudentT => Environment::student_t(f),
                ChannelSpec::Gaussian { sigma } => Environment::gaussian(f, sigma),
                ChannelSpec::Pareto { alpha } => Environment::pareto(f, alpha),
                ChannelSpec::Binary { alpha, v } => {
                    let b = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    let v = v.unwrap_or(2f64.powf(alpha) * b.powf(1.0 + alpha));
                    Environment::binary_heavy_tail(f, alpha, v)
                }
                ChannelSpec::SparseSpike { magnitude } => {
                    let f = normalize_unit_range(&f)?;
                    let spike = rng.random_range(0..f.len());
                    Environment::sparse_spike(f, spike, magnitude)
                }
            }
        }
    }
}

/// Policy settings for one trial, with bounds taken from the environment if requested.
pub fn trial_policy_config(config: &ExperimentConfig, env: &Environment) -> PolicyConfig {
    let mut p = config.policy_config();
    if config.bounds_from_environment {
        p.norm_bound = env.norm_bound();
        p.v = env.v();
        p.alpha = env.alpha();
    }
    p
}

/// Runs a policy against an environment for `horizon` rounds.
pub fn run_policy<R: Rng + ?Sized>(
    policy: &mut Policy,
    env: &Environment,
    horizon: usize,
    rng: &mut R,
    mut rounds: Option<&mut Vec<RoundRecord>>,
) -> Result<()> {
    let best = env.f()[env.best_arm()];
    let mut cum = 0.0;
    for _ in 0..horizon {
        let start = Instant::now();
        let arm = policy.select_arm()?;
        let y = env.draw_reward(arm, rng)?;
        let info = policy.step(arm, y, rng)?;
        let inst = best - env.f()[arm];
        cum += inst;
        if let Some(rounds) = rounds.as_deref_mut() {
            rounds.push(RoundRecord {
                t: info.t,
                arm,
                reward: y,
                truncated: info.truncated,
                inst_regret: inst,
                cum_regret: cum,
                beta: info.beta,
                b: info.level,
                m_t: info.m_t,
                wall_clock: start.elapsed(),
            });
        }
    }
    Ok(())
}

pub fn run_trial(config: &ExperimentConfig, prepared: &PreparedEnvironment, trial: usize) -> TrialRecord {
    let mut rng = trial_rng(config.seed, trial as u64);
    let mut rounds = Vec::with_capacity(config.horizon);
    let outcome = (|| -> Result<Option<f64>> {
        let env = trial_environment(&config.environment, prepared, &mut rng)?;
        let pc = trial_policy_config(config, &env);
        let mut policy = Policy::new(pc, prepared.domain.clone())?;
        run_policy(&mut policy, &env, config.horizon, &mut rng, Some(&mut rounds))?;
        let gain = match policy.exact() {
            Some(p) => 0.5 * p.log_det_ratio(),
            None => {
                let played: Vec<usize> = rounds.iter().map(|r| r.arm).collect();
                crate::posterior::information_gain(&prepared.domain, &played, config.policy.lambda)?
            }
        };
        Ok(Some(gain))
    })();
    match outcome {
        Ok(gain) => TrialRecord {
            trial,
            rounds,
            aborted: None,
            information_gain: gain,
        },
        Err(e) => TrialRecord {
            trial,
            rounds,
            aborted: Some(e.to_string()),
            information_gain: None,
        },
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let prepared = prepare_environment(&config.environment)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let trials: Vec<TrialRecord> = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|i| run_trial(config, &prepared, i))
            .collect()
    });
    check_abort_threshold(&trials)?;
    let summary = summarize(config, &trials);
    Ok(ExperimentResult { trials, summary })
}

/// Fails when more than [`MAX_ABORT_FRACTION`] of the trials aborted.
pub fn check_abort_threshold(trials: &[TrialRecord]) -> Result<()> {
    let aborted: Vec<&TrialRecord> = trials.iter().filter(|t| t.aborted.is_some()).collect();
    if aborted.len() as f64 > MAX_ABORT_FRACTION * trials.len() as f64 {
        return Err(Error::TrialsAborted {
            aborted: aborted.len(),
            total: trials.len(),
            first: aborted[0].aborted.clone().unwrap_or_default(),
        });
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn summarize(config: &ExperimentConfig, trials: &[TrialRecord]) -> Summary {
    let complete: Vec<&TrialRecord> = trials.iter().filter(|t| t.aborted.is_none()).collect();
    let mut means = Vec::with_capacity(config.horizon);
    let mut stds = Vec::with_capacity(config.horizon);
    for t in 0..config.horizon {
        let values: Vec<f64> = complete
            .iter()
            .filter_map(|tr| tr.rounds.get(t))
            .map(|r| r.cum_regret / r.t as f64)
            .collect();
        let (m, s) = mean_std(&values);
        means.push(m);
        stds.push(s);
    }
    let gains: Vec<f64> = complete.iter().filter_map(|t| t.information_gain).collect();
    Summary {
        policy: config.policy.kind.name().to_string(),
        horizon: config.horizon,
        trials: trials.len(),
        aborted: trials.len() - complete.len(),
        seed: config.seed,
        final_mean_time_average_regret: means.last().copied().unwrap_or(f64::NAN),
        final_std_time_average_regret: stds.last().copied().unwrap_or(f64::NAN),
        mean_time_average_regret: means,
        std_time_average_regret: stds,
        mean_information_gain: mean_std(&gains).0,
    }
}

/// Writes every round of every trial as CSV.
pub fn write_csv<W: Write>(trials: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for tr in trials {
        for r in &tr.rounds {
            let b = match r.b {
                TruncationLevel::Finite(b) => b.to_string(),
                TruncationLevel::Unbounded => "inf".to_string(),
            };
            w.write_record([
                tr.trial.to_string(),
                r.t.to_string(),
                r.arm.to_string(),
                r.reward.to_string(),
                (r.truncated as u8).to_string(),
                r.inst_regret.to_string(),
                r.cum_regret.to_string(),
                r.beta.to_string(),
                b,
                r.m_t.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `trials.csv` and `summary.json` into `dir`, returning their paths.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("trials.csv");
    let json_path = dir.join("summary.json");
    write_csv(&result.trials, std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
    let json = serde_json::to_string_pretty(&result.summary)?;
    std::fs::write(&json_path, json + "\n")?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: &str, horizon: usize, trials: usize) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
                "policy": {{"kind": "{kind}", "beta_multiplier": 0.1}},
                "environment": {{
                    "kind": "synthetic",
                    "kernel": {{"type": "squared_exponential", "lengthscale": 0.2}},
                    "grid": {{"points_per_dim": 30}},
                    "support_size": 4,
                    "channel": {{"type": "student_t"}}
                }},
                "horizon": {horizon},
                "trials": {trials},
                "seed": 5
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_round_regret() {
        let c = config("tgp_ucb", 1, 1);
        let res = run_experiment(&c).unwrap();
        let tr = &res.trials[0];
        assert_eq!(tr.rounds.len(), 1);
        let prepared = prepare_environment(&c.environment).unwrap();
        let env = trial_environment(&c.environment, &prepared, &mut trial_rng(5, 0)).unwrap();
        let r = &tr.rounds[0];
        assert_eq!(r.inst_regret, env.f()[env.best_arm()] - env.f()[r.arm]);
        assert_eq!(res.summary.mean_time_average_regret, vec![r.inst_regret]);
    }

    #[test]
    fn cumulative_column_is_exact_prefix_sum() {
        let res = run_experiment(&config("ata_nystrom", 30, 2)).unwrap();
        for tr in &res.trials {
            let mut acc = 0.0;
            for (i, r) in tr.rounds.iter().enumerate() {
                acc += r.inst_regret;
                assert_eq!(r.cum_regret, acc);
                assert_eq!(r.t, i + 1);
                assert!(r.m_t <= r.t);
            }
        }
    }

    #[test]
    fn csv_identical_across_runs_and_pool_sizes() {
        let mut c = config("tgp_ucb", 15, 4);
        let mut outputs = vec![];
        for workers in [1, 3, 1] {
            c.workers = workers;
            let mut buf = vec![];
            write_csv(&run_experiment(&c).unwrap().trials, &mut buf).unwrap();
            outputs.push(buf);
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
        let text = String::from_utf8(outputs[0].clone()).unwrap();
        assert!(text.starts_with("trial,t,arm,reward,truncated,inst_regret,cum_regret,beta,b,m_t\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 15);
    }

    #[test]
    fn trial_streams_differ() {
        let a: u64 = trial_rng(1, 0).random();
        let b: u64 = trial_rng(1, 1).random();
        let c: u64 = trial_rng(2, 0).random();
        assert!(a != b && a != c);
    }

    #[test]
    fn abort_threshold() {
        let trials = |failures: usize| -> Vec<TrialRecord> {
            (0..10)
                .map(|i| TrialRecord {
                    trial: i,
                    rounds: vec![],
                    aborted: (i < failures).then(|| "numeric failure".to_string()),
                    information_gain: None,
                })
                .collect()
        };
        assert!(check_abort_threshold(&trials(1)).is_ok());
        assert!(matches!(
            check_abort_threshold(&trials(2)),
            Err(Error::TrialsAborted { aborted: 2, total: 10, .. })
        ));
        let s = summarize(&config("tgp_ucb", 1, 10), &trials(1));
        assert_eq!(s.aborted, 1);
    }

    #[test]
    fn qff_runs_on_squared_exponential() {
        let res = run_experiment(&config("ata_qff", 10, 1)).unwrap();
        assert!(res.trials[0].rounds.iter().all(|r| r.m_t == 16));
    }
}

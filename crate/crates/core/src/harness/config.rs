//! Experiment configuration: a JSON document plus command-line overrides.
//!
//! ```json
//! {
//!   "policy": { "kind": "ata_nystrom", "beta_multiplier": 0.1 },
//!   "environment": {
//!     "kind": "synthetic",
//!     "kernel": { "type": "squared_exponential", "lengthscale": 0.2 },
//!     "grid": { "points_per_dim": 100, "dim": 1 },
//!     "support_size": 10,
//!     "channel": { "type": "student_t" }
//!   },
//!   "horizon": 2000,
//!   "trials": 10,
//!   "seed": 7
//! }
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{empirical_kernel_from_samples, read_samples_csv, ArmSet, Domain, Kernel, MaternNu};
use crate::policies::{PolicyConfig, PolicyKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    SquaredExponential { lengthscale: f64 },
    Matern { lengthscale: f64, nu: MaternNu },
    Linear,
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match *self {
            KernelSpec::SquaredExponential { lengthscale } => Kernel::squared_exponential(lengthscale),
            KernelSpec::Matern { lengthscale, nu } => Kernel::matern(lengthscale, nu),
            KernelSpec::Linear => Ok(Kernel::Linear),
        }
    }
}

/// Cartesian grid with `points_per_dim` evenly spaced values on `[0,1]` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points_per_dim: usize,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

impl GridSpec {
    pub fn build(&self) -> Result<ArmSet> {
        let n = self.points_per_dim;
        if n < 2 && !(n == 1 && self.dim >= 1) {
            return Err(Error::Config("grid needs at least one point per axis".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("grid dimension must be >= 1".into()));
        }
        let total = n
            .checked_pow(self.dim as u32)
            .filter(|&t| t <= 100_000)
            .ok_or_else(|| Error::Config("grid has too many points".into()))?;
        let axis: Vec<f64> = if n == 1 {
            vec![0.5]
        } else {
            (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
        };
        let points = (0..total)
            .map(|flat| {
                let mut rest = flat;
                (0..self.dim)
                    .map(|_| {
                        let j = rest % n;
                        rest /= n;
                        axis[j]
                    })
                    .collect()
            })
            .collect();
        ArmSet::new(points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Gaussian { sigma: f64 },
    StudentT,
    /// Requires coefficients that make `f > 0`; `alpha < 1` sets the moment order.
    Pareto { alpha: f64 },
    /// `v` defaults to `2^alpha B^{1+alpha}`, the smallest value admitting `|f| <= 2 gap`.
    Binary { alpha: f64, v: Option<f64> },
    /// `f` is rescaled to `[0,1]` and the spike arm is drawn per trial.
    SparseSpike {
        #[serde(default = "ten")]
        magnitude: f64,
    },
}

fn ten() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// A fresh `f = sum a_i k(., x_i)` per trial.
    Synthetic {
        kernel: KernelSpec,
        grid: GridSpec,
        support_size: usize,
        /// Defaults to `[-1, 1]`, or `[0, 1]` for Pareto.
        coeff_range: Option<(f64, f64)>,
        channel: ChannelSpec,
    },
    /// CSV with one column per arm. The first `kernel_rows` rows define the
    /// empirical kernel, the remaining rows the objective and reward pool
    /// (all rows serve both when `kernel_rows` is 0).
    Dataset {
        path: PathBuf,
        #[serde(default)]
        kernel_rows: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    pub qff_nodes: Vec<usize>,
    pub qff_lengthscale: f64,
    pub qff_grid: usize,
    pub coverage_trials: usize,
    pub coverage_horizon: usize,
    pub moment_arms: usize,
    pub moment_samples: usize,
    pub sandwich_runs: usize,
    pub sandwich_rounds: usize,
    pub column_norm_instances: usize,
    pub variance_horizon: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            qff_nodes: vec![4, 6, 8],
            qff_lengthscale: 1.0,
            qff_grid: 200,
            coverage_trials: 50,
            coverage_horizon: 200,
            moment_arms: 20,
            moment_samples: 100_000,
            sandwich_runs: 20,
            sandwich_rounds: 100,
            column_norm_instances: 100,
            variance_horizon: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub policy: PolicyConfig,
    pub environment: EnvironmentSpec,
    pub horizon: usize,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Size of the trial worker pool; results never depend on it.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Take `B`, `v` and `alpha` from each trial's environment.
    #[serde(default = "yes")]
    pub bounds_from_environment: bool,
    #[serde(default)]
    pub audit: AuditConfig,
}

fn yes() -> bool {
    true
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub policy: Option<PolicyKind>,
    pub horizon: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        // dataset paths are relative to the config file
        if let EnvironmentSpec::Dataset { path: data, .. } = &mut c.environment {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.policy {
            self.policy.kind = k;
        }
        if let Some(t) = o.horizon {
            self.horizon = t;
        }
        if let Some(n) = o.trials {
            self.trials = n;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output {
            self.output = Some(p.clone());
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon T must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let mut p = self.policy.clone();
        p.horizon = self.horizon;
        p.validate()?;
        if let EnvironmentSpec::Synthetic {
            support_size,
            coeff_range,
            kernel,
            grid,
            ..
        } = &self.environment
        {
            if *support_size == 0 {
                return Err(Error::Config("support_size must be at least 1".into()));
            }
            if let Some((lo, hi)) = coeff_range {
                if !(lo <= hi) {
                    return Err(Error::Config("coeff_range must be ordered".into()));
                }
            }
            kernel.build()?;
            grid.build()?;
            if self.policy.kind == PolicyKind::AtaQff
                && !matches!(kernel, KernelSpec::SquaredExponential { .. })
            {
                return Err(Error::Config("QFF policy needs a squared-exponential kernel".into()));
            }
        } else if self.policy.kind == PolicyKind::AtaQff {
            return Err(Error::Config("QFF policy cannot run on an empirical kernel".into()));
        }
        Ok(())
    }

    /// Policy configuration with the horizon filled in.
    pub fn policy_config(&self) -> PolicyConfig {
        let mut p = self.policy.clone();
        p.horizon = self.horizon;
        p
    }
}

/// Shared, trial-independent parts of an environment.
#[derive(Clone, Debug)]
pub struct PreparedEnvironment {
    pub domain: Arc<Domain>,
    /// Objective/reward rows for dataset environments.
    pub samples: Option<nalgebra::DMatrix<f64>>,
}

pub fn prepare_environment(spec: &EnvironmentSpec) -> Result<PreparedEnvironment> {
    match spec {
        EnvironmentSpec::Synthetic { kernel, grid, .. } => Ok(PreparedEnvironment {
            domain: Arc::new(Domain::new(kernel.build()?, grid.build()?)?),
            samples: None,
        }),
        EnvironmentSpec::Dataset { path, kernel_rows } => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("cannot open dataset {}: {e}", path.display())))?;
            let (_, data) = read_samples_csv(file)?;
            let n = data.nrows();
            let (kernel_block, objective_block) = if *kernel_rows == 0 {
                (data.clone(), data)
            } else if *kernel_rows < n {
                (
                    data.rows(0, *kernel_rows).into_owned(),
                    data.rows(*kernel_rows, n - kernel_rows).into_owned(),
                )
            } else {
                return Err(Error::Config(format!(
                    "kernel_rows = {kernel_rows} leaves no objective rows ({n} rows total)"
                )));
            };
            let kernel = empirical_kernel_from_samples(&kernel_block)?;
            Ok(PreparedEnvironment {
                domain: Arc::new(Domain::from_empirical(kernel)?),
                samples: Some(objective_block),
            })
        }
    }
}

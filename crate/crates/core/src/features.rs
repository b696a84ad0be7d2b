//! Finite-dimensional kernel approximations and the approximate posterior
//! built on them.
//!
//! * Quadrature Fourier features for the squared-exponential kernel on
//!   `[0,1]^d`, using Gauss-Hermite nodes on a Cartesian grid.
//! * Nyström embeddings from a dictionary of played arms, sampled with
//!   probabilities proportional to the previous round's approximate
//!   posterior variance.
//!
//! [`ApproxPosterior`] holds the design matrix in arm-aggregated form:
//! every played round at arm `a` contributes the same feature vector, so
//! `Phi^T Phi = sum_a n_a phi(a) phi(a)^T` and the truncation weights
//! `u_{., tau}` are the whitened feature column of the arm played at `tau`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::Domain;
use crate::linalg::{inverse_sqrt_spd, pinv_sqrt_psd};
use crate::truncation::{truncated_projection_sums, TruncationLevel};

/// Convergence tolerance of the Hermite root Newton iteration.
pub const HERMITE_TOLERANCE: f64 = 1e-13;
pub const HERMITE_MAX_ITERATIONS: usize = 100;
pub const MAX_HERMITE_NODES: usize = 64;

/// Physicists' Hermite polynomials `(H_n(z), H_{n-1}(z))` by the three-term recurrence.
pub fn hermite_pair(n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut prev, mut cur) = (1.0, 2.0 * z);
    for k in 1..n {
        let next = 2.0 * z * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Roots of `H_n` in increasing order and their normalized quadrature
/// weights `2^{n-1} n! / (n^2 H_{n-1}(z)^2)`, which sum to one.
pub fn hermite_nodes_weights(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_HERMITE_NODES {
        return Err(Error::Config(format!(
            "number of Hermite nodes must be in 1..={MAX_HERMITE_NODES} (got {n})"
        )));
    }
    let half = n.div_ceil(2);
    let mut positive = vec![0.0; half];
    let nf = n as f64;
    for i in 0..half {
        // asymptotic initial guesses, largest root first
        let mut z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => positive[0] - 1.14 * nf.powf(0.426) / positive[0],
            2 => 1.86 * positive[1] - 0.86 * positive[0],
            3 => 1.91 * positive[2] - 0.91 * positive[1],
            _ => 2.0 * positive[i - 1] - positive[i - 2],
        };
        let mut converged = false;
        for _ in 0..HERMITE_MAX_ITERATIONS {
            let (h, h_prev) = hermite_pair(n, z);
            let step = h / (2.0 * nf * h_prev);
            z -= step;
            if step.abs() <= HERMITE_TOLERANCE * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged || !z.is_finite() {
            return Err(Error::Numeric(format!(
                "Hermite root {i} of H_{n} did not converge"
            )));
        }
        positive[i] = z;
    }
    if n % 2 == 1 {
        positive[half - 1] = 0.0;
    }

    let mut roots = Vec::with_capacity(n);
    roots.extend(positive.iter().map(|z| -z));
    roots.extend(positive.iter().rev().skip(n % 2).copied());

    let log_coef = (nf - 1.0) * 2f64.ln() + ln_factorial(n) - 2.0 * nf.ln();
    let weights = roots
        .iter()
        .map(|&z| {
            let (_, h_prev) = hermite_pair(n, z);
            (log_coef - 2.0 * h_prev.abs().ln()).exp()
        })
        .collect();
    Ok((roots, weights))
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Quadrature Fourier features of the squared-exponential kernel.
#[derive(Clone, Debug)]
pub struct QffEmbedding {
    nodes_per_dim: usize,
    dim: usize,
    lengthscale: f64,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl QffEmbedding {
    pub fn new(nodes_per_dim: usize, dim: usize, lengthscale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("QFF input dimension must be >= 1".into()));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Config(format!("lengthscale must be positive (got {lengthscale})")));
        }
        let (roots, w) = hermite_nodes_weights(nodes_per_dim)?;
        let m = nodes_per_dim
            .checked_pow(dim as u32)
            .filter(|&m| m <= 1 << 20)
            .ok_or_else(|| Error::Config("QFF grid too large".into()))?;
        let mut nodes = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for flat in 0..m {
            let mut rest = flat;
            let mut node = Vec::with_capacity(dim);
            let mut weight = 1.0;
            for _ in 0..dim {
                let j = rest % nodes_per_dim;
                rest /= nodes_per_dim;
                node.push(roots[j]);
                weight *= w[j];
            }
            nodes.push(node);
            weights.push(weight);
        }
        Ok(Self {
            nodes_per_dim,
            dim,
            lengthscale,
            nodes,
            weights,
        })
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.nodes_per_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Number of quadrature nodes `m = nodes_per_dim^d`.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Embedding dimension `2m`.
    pub fn output_dim(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cosine features in the first `m` coordinates, matching sines after.
    pub fn embed(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!(
                "QFF expects dimension {} (got {})",
                self.dim,
                x.len()
            )));
        }
        let m = self.nodes.len();
        let scale = 2f64.sqrt() / self.lengthscale;
        let mut out = DVector::zeros(2 * m);
        for (i, (node, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let arg = scale * node.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let sw = w.sqrt();
            out[i] = sw * arg.cos();
            out[m + i] = sw * arg.sin();
        }
        Ok(out)
    }
}

/// Uniform error bound `d 2^{d-1} / (sqrt 2 mbar^mbar) (e / (4 l^2))^mbar`
/// of the QFF approximation of the SE kernel on `[0,1]^d`.
pub fn qff_error_bound(dim: usize, nodes_per_dim: usize, lengthscale: f64) -> f64 {
    let d = dim as f64;
    let mbar = nodes_per_dim as f64;
    let log = d.ln() + (d - 1.0) * 2f64.ln() - 0.5 * 2f64.ln() - mbar * mbar.ln()
        + mbar * (std::f64::consts::E / (4.0 * lengthscale * lengthscale)).ln();
    log.exp()
}

/// A Nyström dictionary of distinct played arms.
#[derive(Clone, Debug)]
pub struct NystromDictionary {
    /// Played-round indices (0-based) whose draw admitted each member.
    member_rounds: Vec<usize>,
    member_arms: Vec<usize>,
    /// Inclusion probability of every played round at sampling time.
    probabilities: Vec<f64>,
    k_d: DMatrix<f64>,
    root_pinv: DMatrix<f64>,
}

impl NystromDictionary {
    /// Dictionary over a fixed list of distinct arms (probabilities recorded as one).
    pub fn from_arms(domain: &Domain, arms: &[usize]) -> Result<Self> {
        let mut members = Vec::new();
        for &a in arms {
            domain.check_arm(a)?;
            if !members.contains(&a) {
                members.push(a);
            }
        }
        Ok(Self::assemble(
            domain,
            (0..members.len()).collect(),
            members,
            vec![1.0; arms.len()],
        ))
    }

    fn assemble(
        domain: &Domain,
        member_rounds: Vec<usize>,
        member_arms: Vec<usize>,
        probabilities: Vec<f64>,
    ) -> Self {
        let m = member_arms.len();
        let k_d = DMatrix::from_fn(m, m, |i, j| domain.k(member_arms[i], member_arms[j]));
        let root_pinv = pinv_sqrt_psd(&k_d);
        Self {
            member_rounds,
            member_arms,
            probabilities,
            k_d,
            root_pinv,
        }
    }

    pub fn len(&self) -> usize {
        self.member_arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_arms.is_empty()
    }

    pub fn member_rounds(&self) -> &[usize] {
        &self.member_rounds
    }

    pub fn member_arms(&self) -> &[usize] {
        &self.member_arms
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.k_d
    }

    /// `(K_D^{1/2})^+`.
    pub fn root_pinv(&self) -> &DMatrix<f64> {
        &self.root_pinv
    }

    /// `phi(x) = (K_D^{1/2})^+ k_D(x)`; zero-dimensional for an empty dictionary.
    pub fn embed(&self, domain: &Domain, arm: usize) -> DVector<f64> {
        let k = DVector::from_iterator(
            self.len(),
            self.member_arms.iter().map(|&a| domain.k(a, arm)),
        );
        &self.root_pinv * k
    }

    /// Embeddings of every arm of the domain as columns.
    pub fn embed_all(&self, domain: &Domain) -> DMatrix<f64> {
        let n = domain.n_arms();
        let k = DMatrix::from_fn(self.len(), n, |i, x| domain.k(self.member_arms[i], x));
        &self.root_pinv * k
    }
}

/// Samples a dictionary: round `i` is admitted with probability
/// `min(q * variances[i], 1)`; an arm already present is not added twice.
pub fn nystrom_sample<R: Rng + ?Sized>(
    domain: &Domain,
    played: &[usize],
    variances: &[f64],
    q: f64,
    rng: &mut R,
) -> Result<NystromDictionary> {
    if played.len() != variances.len() {
        return Err(Error::Input(format!(
            "{} played arms but {} variances",
            played.len(),
            variances.len()
        )));
    }
    if !(q > 0.0) {
        return Err(Error::Config(format!("q must be positive (got {q})")));
    }
    let mut rounds = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut present = vec![false; domain.n_arms()];
    let mut probabilities = Vec::with_capacity(played.len());
    for (i, (&arm, &var)) in played.iter().zip(variances).enumerate() {
        domain.check_arm(arm)?;
        let p = (q * var.max(0.0)).min(1.0);
        probabilities.push(p);
        let drawn = rng.random::<f64>() < p;
        if drawn && !present[arm] {
            present[arm] = true;
            rounds.push(i);
            members.push(arm);
        }
    }
    Ok(NystromDictionary::assemble(domain, rounds, members, probabilities))
}

/// How the approximate posterior variance is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceVariant {
    /// `lambda phi^T V^{-1} phi`, paired with QFF.
    Projected,
    /// `k(x,x) - phi^T phi + lambda phi^T V^{-1} phi`, paired with Nyström.
    Deflated,
}

#[derive(Clone, Debug)]
pub enum Embedding {
    Qff(Arc<QffEmbedding>),
    Nystrom(NystromDictionary),
}

/// Approximate GP posterior in a finite feature space with adaptively
/// truncated reward estimates.
#[derive(Clone, Debug)]
pub struct ApproxPosterior {
    domain: Arc<Domain>,
    lambda: f64,
    variant: VarianceVariant,
    embedding: Embedding,
    /// `m_t x n_arms`: current embedding of every arm.
    features: DMatrix<f64>,
    played: Vec<usize>,
    rewards: Vec<f64>,
    counts: Vec<usize>,
    v_inv_sqrt: DMatrix<f64>,
    /// `V^{-1/2} phi(x)` for every arm.
    whitened: DMatrix<f64>,
    r_hat: DVector<f64>,
    theta: DVector<f64>,
    mean: Vec<f64>,
    raw_variance: Vec<f64>,
    dropped: usize,
}

impl ApproxPosterior {
    pub fn qff(domain: Arc<Domain>, embedding: Arc<QffEmbedding>, lambda: f64) -> Result<Self> {
        if !domain.kernel().is_analytic() || domain.arms().dim() != embedding.dim() {
            return Err(Error::Config(
                "QFF needs an analytic kernel on arms of matching dimension".into(),
            ));
        }
        let n = domain.n_arms();
        let mut features = DMatrix::zeros(embedding.output_dim(), n);
        for x in 0..n {
            features.set_column(x, &embedding.embed(domain.arms().point(x))?);
        }
        Self::with_features(domain, Embedding::Qff(embedding), features, VarianceVariant::Projected, lambda)
    }

    pub fn nystrom(domain: Arc<Domain>, lambda: f64) -> Result<Self> {
        let empty = NystromDictionary::assemble(&domain, vec![], vec![], vec![]);
        let features = DMatrix::zeros(0, domain.n_arms());
        Self::with_features(domain, Embedding::Nystrom(empty), features, VarianceVariant::Deflated, lambda)
    }

    fn with_features(
        domain: Arc<Domain>,
        embedding: Embedding,
        features: DMatrix<f64>,
        variant: VarianceVariant,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive (got {lambda})")));
        }
        let n = domain.n_arms();
        let mut s = Self {
            domain,
            lambda,
            variant,
            embedding,
            features,
            played: Vec::new(),
            rewards: Vec::new(),
            counts: vec![0; n],
            v_inv_sqrt: DMatrix::zeros(0, 0),
            whitened: DMatrix::zeros(0, n),
            r_hat: DVector::zeros(0),
            theta: DVector::zeros(0),
            mean: vec![0.0; n],
            raw_variance: vec![0.0; n],
            dropped: 0,
        };
        s.refit(TruncationLevel::Unbounded)?;
        Ok(s)
    }

    /// Overrides the variance formula (the default follows the embedding).
    pub fn set_variant(&mut self, variant: VarianceVariant) -> Result<()> {
        self.variant = variant;
        self.refit(TruncationLevel::Unbounded)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn variant(&self) -> VarianceVariant {
        self.variant
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn t(&self) -> usize {
        self.played.len()
    }

    /// Current embedding dimension `m_t`.
    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn played(&self) -> &[usize] {
        &self.played
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Products zeroed by the last refit.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn r_hat(&self) -> &DVector<f64> {
        &self.r_hat
    }

    pub fn v_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.v_inv_sqrt
    }

    /// Embedding of an arm under the current feature map.
    pub fn feature(&self, arm: usize) -> DVector<f64> {
        self.features.column(arm).into_owned()
    }

    /// `Phi_t`: one row per played round.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(self.t(), m, |tau, i| self.features[(i, self.played[tau])])
    }

    /// `V_t = Phi_t^T Phi_t + lambda I`, accumulated per arm.
    pub fn v_tilde(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut g = self.features.clone();
        for (x, mut col) in g.column_iter_mut().enumerate() {
            col *= (self.counts[x] as f64).sqrt();
        }
        &g * g.transpose() + DMatrix::identity(m, m) * self.lambda
    }

    /// Records a played round; the estimate is refreshed by [`Self::refit`].
    pub fn observe(&mut self, arm: usize, reward: f64) -> Result<()> {
        self.domain.check_arm(arm)?;
        if !reward.is_finite() {
            return Err(Error::Numeric(format!("non-finite reward {reward}")));
        }
        self.played.push(arm);
        self.rewards.push(reward);
        self.counts[arm] += 1;
        Ok(())
    }

    /// Resamples the Nyström dictionary from all played rounds using the
    /// current variance function. No-op for QFF.
    pub fn resample_dictionary<R: Rng + ?Sized>(&mut self, q: f64, rng: &mut R) -> Result<()> {
        if let Embedding::Nystrom(_) = self.embedding {
            let variances: Vec<f64> = self.played.iter().map(|&a| self.variance(a)).collect();
            let dict = nystrom_sample(&self.domain, &self.played, &variances, q, rng)?;
            self.set_dictionary(dict);
        }
        Ok(())
    }

    /// Installs a Nyström dictionary (the caller refits afterwards).
    pub fn set_dictionary(&mut self, dict: NystromDictionary) {
        self.features = dict.embed_all(&self.domain);
        self.embedding = Embedding::Nystrom(dict);
    }

    /// Rebuilds `V_t`, its inverse square root, the truncated estimate and
    /// the per-arm mean and variance.
    pub fn refit(&mut self, level: TruncationLevel) -> Result<()> {
        let n = self.domain.n_arms();
        let m = self.dim();
        if m == 0 {
            self.v_inv_sqrt = DMatrix::zeros(0, 0);
            self.whitened = DMatrix::zeros(0, n);
            self.r_hat = DVector::zeros(0);
            self.theta = DVector::zeros(0);
            self.dropped = 0;
            for x in 0..n {
                self.mean[x] = 0.0;
                self.raw_variance[x] = match self.variant {
                    VarianceVariant::Projected => 0.0,
                    VarianceVariant::Deflated => self.domain.k(x, x),
                };
            }
            return Ok(());
        }
        self.v_inv_sqrt = inverse_sqrt_spd(&self.v_tilde(), self.lambda)?;
        self.whitened = &self.v_inv_sqrt * &self.features;
        let (r_hat, dropped) =
            truncated_projection_sums(&self.whitened, &self.played, &self.rewards, level);
        self.theta = &self.v_inv_sqrt * &r_hat;
        self.r_hat = r_hat;
        self.dropped = dropped;

        let mean = self.features.transpose() * &self.theta;
        for x in 0..n {
            self.mean[x] = mean[x];
            let quad = self.lambda * self.whitened.column(x).norm_squared();
            self.raw_variance[x] = match self.variant {
                VarianceVariant::Projected => quad,
                VarianceVariant::Deflated => {
                    self.domain.k(x, x) - self.features.column(x).norm_squared() + quad
                }
            };
        }
        Ok(())
    }

    /// `phi_t(x)^T theta_t`; zero before any refit with data.
    pub fn mean(&self, arm: usize) -> f64 {
        self.mean[arm]
    }

    /// Approximate posterior variance clamped at zero.
    pub fn variance(&self, arm: usize) -> f64 {
        self.raw_variance[arm].max(0.0)
    }

    pub fn raw_variance(&self, arm: usize) -> f64 {
        self.raw_variance[arm]
    }
}

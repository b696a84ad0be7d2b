//! Kernel functions and Gram-matrix assembly over finite arm sets.
//!
//! Analytic kernels (squared exponential, half-integer Matérn, normalized
//! linear) live on `[0,1]^d`. Empirical kernels are a fixed PSD matrix over
//! an index set of arms, built from observed samples (e.g. correlated asset
//! prices or sensor readings).
//!
//! Every kernel satisfies `k(x,x) <= 1` on its domain, which the regret
//! schedules downstream rely on.

use std::io::Read;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty set of distinct arms in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl ArmSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) if !p.is_empty() => p.len(),
            Some(_) => return Err(Error::Domain("arms must have dimension >= 1".into())),
            None => return Err(Error::Domain("arm set is empty".into())),
        };
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Domain(format!(
                    "arm {i} has dimension {} (expected {dim})",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain(format!("arm {i} has a non-finite coordinate")));
            }
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::Domain(format!("arms {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { points, dim })
    }

    /// `n` evenly spaced points on `[0,1]`, endpoints included.
    pub fn grid_1d(n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::Domain("arm set is empty".into())),
            1 => Self::new(vec![vec![0.0]]),
            _ => Self::new(
                (0..n)
                    .map(|i| vec![i as f64 / (n - 1) as f64])
                    .collect(),
            ),
        }
    }

    /// The index set `{0, 1, ..., n-1}` used by empirical kernels.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| vec![i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p.as_slice() == x)
    }

    /// Restricts the set to the given indices (order preserved, duplicates rejected).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut pts = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self
                .points
                .get(i)
                .ok_or_else(|| Error::Domain(format!("arm index {i} out of range")))?;
            pts.push(p.clone());
        }
        Self::new(pts)
    }
}

/// Smoothness of a Matérn kernel; only the half-integer closed forms are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "0.5")]
    Half,
    #[serde(rename = "1.5")]
    ThreeHalves,
    #[serde(rename = "2.5")]
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }

    pub fn from_value(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(MaternNu::Half)
        } else if nu == 1.5 {
            Ok(MaternNu::ThreeHalves)
        } else if nu == 2.5 {
            Ok(MaternNu::FiveHalves)
        } else {
            Err(Error::Config(format!(
                "Matérn smoothness must be one of 0.5, 1.5, 2.5 (got {nu})"
            )))
        }
    }
}

/// A fixed PSD similarity matrix over an index set of arms.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalKernel {
    matrix: DMatrix<f64>,
    arms: ArmSet,
}

impl EmpiricalKernel {
    pub fn new(matrix: DMatrix<f64>, arms: ArmSet) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != arms.len() {
            return Err(Error::Domain(format!(
                "empirical kernel matrix is {}x{} but the arm set has {} arms",
                matrix.nrows(),
                matrix.ncols(),
                arms.len()
            )));
        }
        Ok(Self { matrix, arms })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn arms(&self) -> &ArmSet {
        &self.arms
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    /// `exp(-r^2 / (2 l^2))`.
    SquaredExponential { lengthscale: f64 },
    Matern { lengthscale: f64, nu: MaternNu },
    /// `x.y / d`, which keeps `k(x,x) <= 1` on the unit cube.
    Linear,
    Empirical(Arc<EmpiricalKernel>),
}

impl Kernel {
    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        check_lengthscale(lengthscale)?;
        Ok(Kernel::SquaredExponential { lengthscale })
    }

    pub fn matern(lengthscale: f64, nu: MaternNu) -> Result<Self> {
        check_lengthscale(lengthscale)?;
        Ok(Kernel::Matern { lengthscale, nu })
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, Kernel::Empirical(_))
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Kernel::Empirical(emp) => {
                let i = emp
                    .arms
                    .position(x)
                    .ok_or_else(|| Error::Domain(format!("{x:?} is not an arm of the empirical kernel")))?;
                let j = emp
                    .arms
                    .position(y)
                    .ok_or_else(|| Error::Domain(format!("{y:?} is not an arm of the empirical kernel")))?;
                Ok(emp.matrix[(i, j)])
            }
            _ => {
                if x.len() != y.len() {
                    return Err(Error::Domain(format!(
                        "dimension mismatch: {} vs {}",
                        x.len(),
                        y.len()
                    )));
                }
                Ok(self.evaluate_analytic(x, y))
            }
        }
    }

    fn evaluate_analytic(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match *self {
            Kernel::SquaredExponential { lengthscale } => {
                (-r2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            Kernel::Matern { lengthscale, nu } => matern_closed_form(r2.sqrt() / lengthscale, nu),
            Kernel::Linear => {
                x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64
            }
            Kernel::Empirical(_) => unreachable!("empirical kernels are looked up, not evaluated"),
        }
    }

    /// Checks that every arm lies in the kernel's domain.
    pub fn check_domain(&self, arms: &ArmSet) -> Result<()> {
        match self {
            Kernel::Empirical(emp) => {
                for p in arms.points() {
                    if emp.arms.position(p).is_none() {
                        return Err(Error::Domain(format!(
                            "{p:?} is not an arm of the empirical kernel"
                        )));
                    }
                }
                Ok(())
            }
            _ => {
                for p in arms.points() {
                    if p.iter().any(|c| !(0.0..=1.0).contains(c)) {
                        return Err(Error::Domain(format!(
                            "{p:?} lies outside the unit cube"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Gram matrix `[k(u,v)]` over the arm set.
    pub fn gram(&self, arms: &ArmSet) -> Result<DMatrix<f64>> {
        self.check_domain(arms)?;
        let n = arms.len();
        let mut g = DMatrix::zeros(n, n);
        if let Kernel::Empirical(emp) = self {
            let idx: Vec<usize> = arms
                .points()
                .iter()
                .map(|p| emp.arms.position(p).expect("domain checked"))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = emp.matrix[(idx[i], idx[j])];
                }
            }
            return Ok(g);
        }
        for i in 0..n {
            g[(i, i)] = self.evaluate_analytic(arms.point(i), arms.point(i));
            for j in 0..i {
                let v = self.evaluate_analytic(arms.point(i), arms.point(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }
}

fn check_lengthscale(l: f64) -> Result<()> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("lengthscale must be positive (got {l})")))
    }
}

/// Matérn kernel as a function of the scaled distance `s = r / l`.
fn matern_closed_form(s: f64, nu: MaternNu) -> f64 {
    match nu {
        MaternNu::Half => (-s).exp(),
        MaternNu::ThreeHalves => {
            let a = 3f64.sqrt() * s;
            (1.0 + a) * (-a).exp()
        }
        MaternNu::FiveHalves => {
            let a = 5f64.sqrt() * s;
            (1.0 + a + 5.0 * s * s / 3.0) * (-a).exp()
        }
    }
}

/// Builds an empirical kernel from an `n_obs x n_arms` sample matrix.
///
/// Columns are standardized, their covariance (i.e. correlation) matrix is
/// computed, negative eigenvalues are clipped to zero and the result is
/// rescaled so the largest diagonal entry is exactly one.
pub fn empirical_kernel_from_samples(samples: &DMatrix<f64>) -> Result<Kernel> {
    let (n_obs, n_arms) = samples.shape();
    if n_obs < 2 {
        return Err(Error::Input(format!(
            "need at least 2 observations per arm (got {n_obs})"
        )));
    }
    if n_arms == 0 {
        return Err(Error::Input("sample matrix has no columns".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("sample matrix contains non-finite values".into()));
    }

    let mut z = samples.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_obs - 1) as f64;
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        if var.sqrt() <= 1e-12 * scale {
            return Err(Error::DegenerateData(format!("arm {j} has zero variance")));
        }
        let sd = var.sqrt();
        col.apply(|v| *v = (*v - mean) / sd);
    }

    let mut cov = z.transpose() * &z / (n_obs - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;

    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let u = &eig.eigenvectors;
        cov = u * DMatrix::from_diagonal(&clipped) * u.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
    }

    let max_diag = cov.diagonal().max();
    if max_diag <= 0.0 {
        return Err(Error::DegenerateData("covariance has no positive diagonal".into()));
    }
    cov /= max_diag;
    // Pin the largest diagonal entry to exactly one after the division.
    let imax = cov.diagonal().imax();
    cov[(imax, imax)] = 1.0;

    let arms = ArmSet::indexed(n_arms)?;
    Ok(Kernel::Empirical(Arc::new(EmpiricalKernel::new(cov, arms)?)))
}

/// Reads a sample table: a header of arm names followed by one row per
/// observation. Empty or unparsable cells are errors.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Input("CSV header is empty".into()));
    }
    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Input(format!(
                    "missing value at row {}, column '{}'",
                    row + 1,
                    names[col]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Input(format!(
                    "cannot parse '{cell}' at row {}, column '{}'",
                    row + 1,
                    names[col]
                ))
            })?;
            values.push(v);
        }
        n_rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(n_rows, names.len(), &values)))
}

/// An arm set together with its kernel and precomputed Gram matrix.
///
/// Posteriors and policies address arms by index into this domain.
#[derive(Clone, Debug)]
pub struct Domain {
    arms: ArmSet,
    kernel: Kernel,
    gram: DMatrix<f64>,
}

impl Domain {
    pub fn new(kernel: Kernel, arms: ArmSet) -> Result<Self> {
        let gram = kernel.gram(&arms)?;
        Ok(Self { arms, kernel, gram })
    }

    /// Domain over all arms of an empirical kernel.
    pub fn from_empirical(kernel: Kernel) -> Result<Self> {
        match &kernel {
            Kernel::Empirical(emp) => {
                let arms = emp.arms().clone();
                Self::new(kernel, arms)
            }
            _ => Err(Error::Config("expected an empirical kernel".into())),
        }
    }

    pub fn arms(&self) -> &ArmSet {
        &self.arms
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[(i, j)]
    }

    pub fn check_arm(&self, i: usize) -> Result<()> {
        if i < self.n_arms() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "arm index {i} out of range for {} arms",
                self.n_arms()
            )))
        }
    }
}

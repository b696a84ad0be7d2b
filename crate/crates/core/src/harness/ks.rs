//! Kolmogorov-Smirnov normality check against a Gaussian fitted to the data.
//!
//! The p-value uses the asymptotic Kolmogorov distribution with the
//! Stephens small-sample correction. Fitting the mean and variance makes
//! this conservative (true Lilliefors p-values are smaller).

use std::io::Read;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_KS_SAMPLES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`, the Kolmogorov survival function.
pub fn kolmogorov_survival(x: f64) -> f64 {
    // the series is numerically 1 below 0.2 and converges slowly there
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_statistic(samples: &[f64]) -> Result<KsResult> {
    let n = samples.len();
    if n < MIN_KS_SAMPLES {
        return Err(Error::Input(format!(
            "KS test needs at least {MIN_KS_SAMPLES} samples (got {n})"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("KS samples must be finite".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(Error::Input("KS samples have zero variance".into()));
    }
    let normal = Normal::new(mean, var.sqrt()).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let c = normal.cdf(x);
        d = d.max(c - i as f64 / nf).max((i + 1) as f64 / nf - c);
    }
    let sn = nf.sqrt();
    let p_value = kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsResult {
        n,
        statistic: d,
        p_value,
    })
}

/// Runs the test on one named column of a CSV file with a header row.
pub fn ks_from_csv<R: Read>(reader: R, column: &str) -> Result<KsResult> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Input(format!("column '{column}' not found")))?;
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec
            .get(idx)
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::Input(format!("row {} has no value for '{column}'", row + 1)))?;
        let v: f64 = cell
            .parse()
            .map_err(|_| Error::Input(format!("row {}: '{cell}' is not a number", row + 1)))?;
        values.push(v);
    }
    ks_statistic(&values)
}

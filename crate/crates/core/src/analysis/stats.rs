use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::factorial::ln_binomial;

use super::AnalysisError;

/// Mean and sample standard deviation (n − 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` for a single value.
    pub sd: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Result<Summary, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Input("no values to summarize".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Ok(Summary { n, mean, sd })
}

/// Matched-pair t-test on `a − b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    /// NaN when degenerate.
    pub t: f64,
    /// NaN when degenerate.
    pub p_two_sided: f64,
    /// All differences equal: no variance to test against.
    pub degenerate: bool,
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Input(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(AnalysisError::Input(format!("a paired t-test needs at least 2 pairs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&d)?;
    let n = s.n;
    let sd = s.sd.expect("n >= 2");
    if sd == 0.0 || !sd.is_finite() {
        return Ok(PairedT {
            n,
            mean_diff: s.mean,
            sd_diff: 0.0,
            ci95_low: s.mean,
            ci95_high: s.mean,
            t: f64::NAN,
            p_two_sided: f64::NAN,
            degenerate: true,
        });
    }
    let se = sd / (n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| AnalysisError::Input(e.to_string()))?;
    let crit = dist.inverse_cdf(0.975);
    let t = s.mean / se;
    Ok(PairedT {
        n,
        mean_diff: s.mean,
        sd_diff: sd,
        ci95_low: s.mean - crit * se,
        ci95_high: s.mean + crit * se,
        t,
        p_two_sided: (2.0 * dist.sf(t.abs())).min(1.0),
        degenerate: false,
    })
}

/// `P(X >= k)` for `X ~ Binomial(n, p0)`, summed exactly in log space.
pub fn binomial_test_one_sided(k: u64, n: u64, p0: f64) -> Result<f64, AnalysisError> {
    if k > n {
        return Err(AnalysisError::Input(format!("{k} successes out of {n} trials")));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(AnalysisError::Input(format!("null probability {p0} outside [0, 1]")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if p0 == 0.0 {
        return Ok(0.0);
    }
    if p0 == 1.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
    let terms: Vec<f64> = (k..=n).map(|i| ln_binomial(n, i) + i as f64 * lp + (n - i) as f64 * lq).collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    Ok((top + sum.ln()).exp().min(1.0))
}

/// First principal component of the column-centred data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    /// Unit norm; the largest-magnitude entry is positive.
    pub loadings: Vec<f64>,
    pub eigenvalue: f64,
    pub explained_variance_ratio: f64,
    pub iterations: usize,
}

const PCA_TOLERANCE: f64 = 1e-10;
const PCA_MAX_ITERATIONS: usize = 1_000_000;

/// Power iteration on the sample covariance matrix of `rows`.
pub fn pca_first_component(rows: &[Vec<f64>]) -> Result<Component, AnalysisError> {
    let n = rows.len();
    if n < 2 {
        return Err(AnalysisError::Input(format!("PCA needs at least 2 rows, got {n}")));
    }
    let p = rows[0].len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(AnalysisError::Input("PCA rows must share a non-zero width".into()));
    }
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; p]; p];
    for r in rows {
        for i in 0..p {
            let di = r[i] - means[i];
            for j in i..p {
                cov[i][j] += di * (r[j] - means[j]);
            }
        }
    }
    for i in 0..p {
        for j in i..p {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let trace: f64 = (0..p).map(|i| cov[i][i]).sum();
    if !(trace > 0.0) {
        return Err(AnalysisError::Input("PCA of data with no variance".into()));
    }

    let mul = |v: &[f64]| -> Vec<f64> { cov.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Start off every axis so no eigenvector is orthogonal to it by symmetry.
    let mut v: Vec<f64> = (0..p).map(|i| 1.0 + 0.1 * i as f64).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    for it in 1..=PCA_MAX_ITERATIONS {
        let w = mul(&v);
        let lambda: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual = norm(&w.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        if residual <= PCA_TOLERANCE * trace {
            let mut loadings = v;
            let (imax, _) = loadings.iter().enumerate().fold((0, 0.0f64), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            if loadings[imax] < 0.0 {
                loadings.iter_mut().for_each(|x| *x = -*x);
            }
            return Ok(Component { loadings, eigenvalue: lambda, explained_variance_ratio: lambda / trace, iterations: it });
        }
        let nw = norm(&w);
        if nw == 0.0 {
            return Err(AnalysisError::Input("power iteration collapsed to zero".into()));
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(AnalysisError::NotConverged(PCA_MAX_ITERATIONS))
}

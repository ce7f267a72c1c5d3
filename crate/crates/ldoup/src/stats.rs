//! Validation statistics: one-sample Kolmogorov-Smirnov tests, bootstrap
//! covariance confidence intervals and the sample autocorrelation function.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("series is degenerate (zero variance), autocorrelation undefined")]
    NaNGuard,
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
}

/// One-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution at z = sqrt(n) D_n,
/// from the alternating series truncated at 100 terms.
pub fn kolmogorov_pvalue(z: f64) -> f64 {
    if z < 0.05 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * z * z).exp();
        if j % 2 == 1 {
            s += term;
        } else {
            s -= term;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against the cdf `F`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let n = samples.len();
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i + 1) as f64 / nf - f);
        d = d.max(f - i as f64 / nf);
    }
    KsResult {
        statistic: d,
        p_value: kolmogorov_pvalue(nf.sqrt() * d),
        n,
    }
}

/// Percentile bootstrap confidence interval for a covariance.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub level: f64,
}

fn sample_cov(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    pairs
        .iter()
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1.0)
}

/// Percentile bootstrap CI of Cov(X, Y) over `replicates` resamples.
/// Resampling uses one RNG stream per replicate derived from `seed`.
pub fn bootstrap_cov_ci(
    pairs: &[(f64, f64)],
    replicates: usize,
    level: f64,
    seed: u64,
) -> BootstrapCi {
    let n = pairs.len();
    let mut covs: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r as u64);
            let resample: Vec<(f64, f64)> =
                (0..n).map(|_| pairs[rng.random_range(0..n)]).collect();
            sample_cov(&resample)
        })
        .collect();
    covs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let pos = p * (replicates - 1) as f64;
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        if i + 1 < replicates {
            (1.0 - w) * covs[i] + w * covs[i + 1]
        } else {
            covs[replicates - 1]
        }
    };
    let tail = 0.5 * (1.0 - level);
    BootstrapCi {
        point: sample_cov(pairs),
        lo: q(tail),
        hi: q(1.0 - tail),
        replicates,
        level,
    }
}

/// Standard biased sample ACF at lags 1..=max_lag.
pub fn sample_acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    let m = series.len();
    if m <= max_lag {
        return Err(StatsError::TooFew {
            need: max_lag + 1,
            got: m,
        });
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var == 0.0 {
        return Err(StatsError::NaNGuard);
    }
    let mut acf = Vec::with_capacity(max_lag);
    for t in 1..=max_lag {
        let cov: f64 = (0..m - t)
            .map(|k| (series[k] - mean) * (series[k + t] - mean))
            .sum();
        acf.push(cov / var);
    }
    Ok(acf)
}

/// Bartlett standard error of the lag-k sample autocorrelation of an AR(1)
/// series with parameter `phi`, sample size `m`.
pub fn bartlett_se_ar1(phi: f64, lag: usize, m: usize) -> f64 {
    let k = lag as f64;
    let p2k = phi.powi(2 * lag as i32);
    let var = ((1.0 + phi * phi) * (1.0 - p2k) / (1.0 - phi * phi) - 2.0 * k * p2k) / m as f64;
    var.max(0.0).sqrt()
}

/// Empirical characteristic function of the rows of `data` at frequency `theta`.
pub fn empirical_cf(data: &DMatrix<f64>, theta: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..data.nrows() {
        let dot: f64 = data.row(i).iter().zip(theta).map(|(x, t)| x * t).sum();
        acc += Complex64::new(0.0, dot).exp();
    }
    acc / data.nrows() as f64
}

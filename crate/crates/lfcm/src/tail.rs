//! Empirical estimation of the minimal jump scale ε and tail index α by
//! goodness-of-fit minimization over a candidate grid, plus the neighborhood
//! averaging estimator and the piecewise calibration-sample generator.
//!
//! For each candidate ε the tail is the set of samples ≥ ε (ties included),
//! the Pareto tail index is fitted by MLE on that tail, and the chosen
//! statistic measures the distance between the tail ECDF and the fitted CDF.
//! The estimate is the grid argmin, ties broken toward smaller ε.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::pareto_mle_alpha;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailMethod {
    Ks,
    Ad,
    Kuiper,
    KuiperNbhd,
}

impl std::str::FromStr for TailMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ks" => Ok(TailMethod::Ks),
            "ad" => Ok(TailMethod::Ad),
            "kuiper" => Ok(TailMethod::Kuiper),
            "kuiper-nbhd" | "kuipernbhd" | "nbhd" => Ok(TailMethod::KuiperNbhd),
            other => Err(Error::InvalidParam(format!("unknown tail method '{other}'"))),
        }
    }
}

/// Result of a tail calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub eps_hat: f64,
    pub alpha_hat: f64,
    pub method: TailMethod,
    pub n_tail: usize,
    pub statistic_value: f64,
}

fn sorted_tail(samples: &[f64], eps: f64) -> Vec<f64> {
    let mut tail: Vec<f64> = samples.iter().cloned().filter(|&x| x >= eps).collect();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    tail
}

fn pareto_cdf(x: f64, alpha: f64, eps: f64) -> f64 {
    if x < eps {
        0.0
    } else {
        1.0 - (eps / x).powf(alpha)
    }
}

/// KS distance between the tail ECDF and a caller-supplied CDF, maximized
/// over both step edges at every sample.
pub fn ks_from_cdf(sorted_tail: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let m = sorted_tail.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted_tail.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / m - f).abs());
        d = d.max((i as f64 / m - f).abs());
    }
    d
}

/// Kuiper statistic from a caller-supplied CDF:
/// max(i/n − F(x_i)) + max(F(x_i) − (i−1)/n).
pub fn kuiper_from_cdf(sorted_tail: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let m = sorted_tail.len() as f64;
    let mut d_plus = f64::NEG_INFINITY;
    let mut d_minus = f64::NEG_INFINITY;
    for (i, &x) in sorted_tail.iter().enumerate() {
        let f = cdf(x);
        d_plus = d_plus.max((i + 1) as f64 / m - f);
        d_minus = d_minus.max(f - i as f64 / m);
    }
    d_plus + d_minus
}

/// AD statistic from a caller-supplied CDF:
/// −n − Σ (2i−1)/n (ln F(x_i) + ln F(x_{n+1−i})). Returns +∞ when the fitted
/// CDF vanishes at a sample (always the case when the smallest tail sample
/// sits exactly at ε).
pub fn ad_from_cdf(sorted_tail: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted_tail.len();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 1..=n {
        let f_i = cdf(sorted_tail[i - 1]);
        let f_rev = cdf(sorted_tail[n - i]);
        if f_i <= 0.0 || f_rev <= 0.0 {
            return f64::INFINITY;
        }
        s += (2.0 * i as f64 - 1.0) / nf * (f_i.ln() + f_rev.ln());
    }
    -nf - s
}

fn tail_statistic(samples: &[f64], eps: f64, method: TailMethod) -> Result<(f64, f64, usize)> {
    let tail = sorted_tail(samples, eps);
    if tail.len() < 2 {
        return Err(Error::TooFewTail {
            got: tail.len(),
            need: 2,
        });
    }
    let alpha = pareto_mle_alpha(&tail, eps)?.alpha;
    let cdf = |x: f64| pareto_cdf(x, alpha, eps);
    let stat = match method {
        TailMethod::Ks => ks_from_cdf(&tail, cdf),
        TailMethod::Ad => ad_from_cdf(&tail, cdf),
        TailMethod::Kuiper | TailMethod::KuiperNbhd => kuiper_from_cdf(&tail, cdf),
    };
    Ok((stat, alpha, tail.len()))
}

/// KS distance with the tail index fitted by MLE on the tail at `eps`.
pub fn ks_statistic(samples: &[f64], eps: f64) -> Result<f64> {
    tail_statistic(samples, eps, TailMethod::Ks).map(|t| t.0)
}

/// AD statistic with the tail index fitted by MLE on the tail at `eps`.
pub fn ad_statistic(samples: &[f64], eps: f64) -> Result<f64> {
    tail_statistic(samples, eps, TailMethod::Ad).map(|t| t.0)
}

/// Kuiper statistic with the tail index fitted by MLE on the tail at `eps`.
pub fn kuiper_statistic(samples: &[f64], eps: f64) -> Result<f64> {
    tail_statistic(samples, eps, TailMethod::Kuiper).map(|t| t.0)
}

/// Default candidate grid: the sorted unique sample values, so every
/// attainable tail split is examined.
pub fn default_grid(samples: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = samples.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

/// Minimize the chosen statistic over the grid. Ties break toward smaller ε.
pub fn estimate_epsilon(samples: &[f64], method: TailMethod, grid: &[f64]) -> Result<TailFit> {
    if grid.is_empty() || samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut best: Option<TailFit> = None;
    for &eps in grid {
        let (stat, alpha, n_tail) = match tail_statistic(samples, eps, method) {
            Ok(t) => t,
            Err(Error::TooFewTail { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !stat.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => stat < b.statistic_value,
        };
        if better {
            best = Some(TailFit {
                eps_hat: eps,
                alpha_hat: alpha,
                method,
                n_tail,
                statistic_value: stat,
            });
        }
    }
    best.ok_or(Error::AllDegenerate)
}

/// Neighborhood-averaged estimate: around the plain argmin ε*, take the `k`
/// grid points inside the radius-`r` ball with the smallest statistic values
/// (ties broken by distance to ε*, then by smaller ε) and average their ε and
/// per-point tail MLEs.
pub fn neighborhood_average(
    samples: &[f64],
    method: TailMethod,
    grid: &[f64],
    k: usize,
    r: f64,
) -> Result<TailFit> {
    if k == 0 || !(r > 0.0) {
        return Err(Error::InvalidParam("neighborhood needs k >= 1 and r > 0".into()));
    }
    let base_method = match method {
        TailMethod::KuiperNbhd => TailMethod::Kuiper,
        m => m,
    };
    let center = estimate_epsilon(samples, base_method, grid)?;
    let mut ball: Vec<(f64, f64, f64)> = Vec::new(); // (stat, eps, alpha)
    for &eps in grid {
        if (eps - center.eps_hat).abs() > r {
            continue;
        }
        if let Ok((stat, alpha, _)) = tail_statistic(samples, eps, base_method) {
            if stat.is_finite() {
                ball.push((stat, eps, alpha));
            }
        }
    }
    ball.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(
                (a.1 - center.eps_hat)
                    .abs()
                    .partial_cmp(&(b.1 - center.eps_hat).abs())
                    .unwrap(),
            )
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    ball.truncate(k);
    let m = ball.len() as f64;
    let eps_hat = ball.iter().map(|t| t.1).sum::<f64>() / m;
    let alpha_hat = ball.iter().map(|t| t.2).sum::<f64>() / m;
    Ok(TailFit {
        eps_hat,
        alpha_hat,
        method: TailMethod::KuiperNbhd,
        n_tail: center.n_tail,
        statistic_value: center.statistic_value,
    })
}

/// Draw from the piecewise calibration density: exponential body
/// exp(−αλ/ε) below ε and a Pareto(α, ε) tail above, jointly normalized.
/// Inverse-CDF sampling per piece.
pub fn generate_calibration_samples<R: Rng + ?Sized>(
    n: usize,
    alpha: f64,
    eps: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || alpha > 1e3 || !(eps > 0.0) {
        return Err(Error::InvalidParam(format!(
            "calibration generator needs 0 < alpha <= 1e3 and eps > 0, got {alpha}, {eps}"
        )));
    }
    let (body_mass, _tail_mass) = calibration_masses(alpha, eps);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen_range(0.0..1.0);
        if u < body_mass {
            // body CDF: C (ε/α)(1 − e^{−αx/ε}) for x in [0, ε)
            let v = u / body_mass; // uniform within the body piece
            let x = -(eps / alpha) * (1.0 - v * (1.0 - (-alpha).exp())).ln();
            out.push(x);
        } else {
            let v = (u - body_mass) / (1.0 - body_mass);
            out.push(eps * (1.0 - v).powf(-1.0 / alpha));
        }
    }
    Ok(out)
}

/// (body mass, tail mass) of the calibration density.
pub fn calibration_masses(alpha: f64, eps: f64) -> (f64, f64) {
    let body_raw = (eps / alpha) * (1.0 - (-alpha).exp());
    let z = body_raw + 1.0; // the Pareto piece integrates to 1
    (body_raw / z, 1.0 / z)
}

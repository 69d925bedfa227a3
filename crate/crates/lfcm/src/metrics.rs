//! Mobility metrics: jump lengths, mean squared displacement, radius of
//! gyration, ECCDFs, the new-locations curve, and random-effects pooling of
//! per-group tail indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::Trajectory;

/// Euclidean jump lengths between consecutive records.
pub fn jump_lengths(traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.len() < 2 {
        return Err(Error::TooShort {
            got: traj.len(),
            need: 2,
        });
    }
    let p = traj.positions();
    Ok(p.windows(2).map(|w| (w[1] - w[0]).norm()).collect())
}

/// Mean squared displacement from the first observed point:
/// (1/n) Σ_{i=1..n} ‖x(t_i) − x(t_0)‖².
pub fn msd(traj: &Trajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::TooShort {
            got: traj.len(),
            need: 2,
        });
    }
    let p = traj.positions();
    let x0 = p[0];
    let n = (p.len() - 1) as f64;
    Ok(p[1..].iter().map(|x| (x - x0).norm_squared()).sum::<f64>() / n)
}

/// Root-mean-square distance from the trajectory mean.
pub fn radius_of_gyration(traj: &Trajectory) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let p = traj.positions();
    let n = p.len() as f64;
    let mean = p.iter().sum::<nalgebra::Vector2<f64>>() / n;
    (p.iter().map(|x| (x - mean).norm_squared()).sum::<f64>() / n).sqrt()
}

/// Empirical complementary CDF on the unique sorted values: pairs
/// (x, P(X ≥ x)); the survival at the maximum is count(max)/n.
pub fn eccdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        out.push((x, (sorted.len() - i) as f64 / n));
        while i < sorted.len() && sorted[i] == x {
            i += 1;
        }
    }
    Ok(out)
}

/// Fraction of distinct grid cells visited so far, over normalized time.
/// Returns (t_norm ∈ [0,1], fraction of final distinct-cell count).
pub fn new_locations_curve(traj: &Trajectory, cell_size: f64) -> Result<Vec<(f64, f64)>> {
    if !(cell_size > 0.0) {
        return Err(Error::InvalidParam("cell_size must be > 0".into()));
    }
    if traj.is_empty() {
        return Err(Error::EmptyInput);
    }
    let times = traj.times();
    let span = times.last().unwrap() - times[0];
    let mut seen = std::collections::HashSet::new();
    let mut counts = Vec::with_capacity(traj.len());
    for r in &traj.records {
        let cell = (
            (r.x[0] / cell_size).floor() as i64,
            (r.x[1] / cell_size).floor() as i64,
        );
        seen.insert(cell);
        counts.push(seen.len());
    }
    let total = *counts.last().unwrap() as f64;
    Ok(times
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| {
            let tn = if span > 0.0 { (t - times[0]) / span } else { 0.0 };
            (tn, c as f64 / total)
        })
        .collect())
}

/// Least-squares slope of ln(fraction) against ln(t_norm), skipping t = 0.
pub fn loglog_slope(curve: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(t, f)| *t > 0.0 && *f > 0.0)
        .map(|&(t, f)| (t.ln(), f.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMethod {
    DerSimonianLaird,
    Reml,
}

/// Pooled random-effects estimate of a set of per-group tail indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledAlpha {
    pub alpha: f64,
    pub ci95: (f64, f64),
    pub tau2: f64,
}

/// Random-effects meta-analysis with inverse-variance weights
/// w_g = 1/(SE_g² + τ²). τ² by the DerSimonian–Laird closed form or by REML
/// scalar maximization.
pub fn pooled_alpha(per_group: &[(f64, f64)], method: PoolMethod) -> Result<PooledAlpha> {
    if per_group.len() < 2 {
        return Err(Error::TooFewGroups);
    }
    for &(_, se) in per_group {
        if !(se > 0.0) {
            return Err(Error::InvalidParam("standard errors must be > 0".into()));
        }
    }
    let tau2 = match method {
        PoolMethod::DerSimonianLaird => tau2_dl(per_group),
        PoolMethod::Reml => tau2_reml(per_group),
    };
    Ok(pool_at_tau2(per_group, tau2))
}

fn pool_at_tau2(per_group: &[(f64, f64)], tau2: f64) -> PooledAlpha {
    let mut sw = 0.0;
    let mut swa = 0.0;
    for &(a, se) in per_group {
        let w = 1.0 / (se * se + tau2);
        sw += w;
        swa += w * a;
    }
    let alpha = swa / sw;
    let se = (1.0 / sw).sqrt();
    PooledAlpha {
        alpha,
        ci95: (alpha - 1.96 * se, alpha + 1.96 * se),
        tau2,
    }
}

/// DerSimonian–Laird: τ² = max(0, (Q − (k−1)) / (Σw − Σw²/Σw)) with
/// fixed-effect weights w = 1/SE².
pub fn tau2_dl(per_group: &[(f64, f64)]) -> f64 {
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swa = 0.0;
    for &(a, se) in per_group {
        let w = 1.0 / (se * se);
        sw += w;
        sw2 += w * w;
        swa += w * a;
    }
    let mean = swa / sw;
    let q: f64 = per_group
        .iter()
        .map(|&(a, se)| (a - mean).powi(2) / (se * se))
        .sum();
    let k = per_group.len() as f64;
    let denom = sw - sw2 / sw;
    ((q - (k - 1.0)) / denom).max(0.0)
}

/// REML profile maximization for τ² by golden-section search.
fn tau2_reml(per_group: &[(f64, f64)]) -> f64 {
    let ll = |tau2: f64| -> f64 {
        let mut sw = 0.0;
        let mut swa = 0.0;
        for &(a, se) in per_group {
            let w = 1.0 / (se * se + tau2);
            sw += w;
            swa += w * a;
        }
        let mu = swa / sw;
        let mut l = -0.5 * sw.ln();
        for &(a, se) in per_group {
            let v = se * se + tau2;
            l += -0.5 * v.ln() - 0.5 * (a - mu).powi(2) / v;
        }
        l
    };
    let spread = {
        let mean = per_group.iter().map(|g| g.0).sum::<f64>() / per_group.len() as f64;
        per_group
            .iter()
            .map(|&(a, _)| (a - mean).powi(2))
            .sum::<f64>()
            / per_group.len() as f64
    };
    let hi = (spread * 10.0).max(1e-6);
    let (mut a, mut b) = (0.0_f64, hi);
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if ll(x1) < ll(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    // collapse to exactly zero when the optimum hugs the boundary
    let t = (a + b) / 2.0;
    if t < 1e-10 * hi {
        0.0
    } else {
        t
    }
}

/// Per-metric mean and across-partition standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricSummary {
    pub mean_jump_length: f64,
    pub msd: f64,
    pub rog: f64,
    pub sd_jump_length: f64,
    pub sd_msd: f64,
    pub sd_rog: f64,
}

/// Mean/SD summary of (mean jump length, MSD, RoG) across trajectories.
pub fn metric_summary(trajs: &[Trajectory]) -> Result<MetricSummary> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut jumps = Vec::new();
    let mut msds = Vec::new();
    let mut rogs = Vec::new();
    for t in trajs {
        let j = jump_lengths(t)?;
        jumps.push(j.iter().sum::<f64>() / j.len() as f64);
        msds.push(msd(t)?);
        rogs.push(radius_of_gyration(t));
    }
    let stat = |xs: &[f64]| -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (m, var.sqrt())
    };
    let (mj, sj) = stat(&jumps);
    let (mm, sm) = stat(&msds);
    let (mr, sr) = stat(&rogs);
    Ok(MetricSummary {
        mean_jump_length: mj,
        msd: mm,
        rog: mr,
        sd_jump_length: sj,
        sd_msd: sm,
        sd_rog: sr,
    })
}

/// Observed-vs-simulated metric table rows.
pub fn metric_table(
    observed: &[Trajectory],
    simulated: &[Trajectory],
) -> Result<(MetricSummary, MetricSummary)> {
    Ok((metric_summary(observed)?, metric_summary(simulated)?))
}

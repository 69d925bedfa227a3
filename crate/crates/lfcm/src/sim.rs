//! Generative side: the daily-routine data generator, posterior-driven
//! trajectory synthesis, and interpolation/extrapolation onto common grids.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dist::sample_pareto;
use crate::error::{Error, Result};
use crate::mcmc::{derive_segments, resolve_segment, Hyperparams, PosteriorScan};
use crate::traj::{DeltaSeries, GpsRecord, Trajectory};

/// Ground-truth phase of a generated routine point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Home,
    Work,
    Public,
    Travel,
}

/// Daily-routine generator configuration. Times are model minutes; the
/// schedule partitions each 1440-minute day into home (0:00–8:40), travel,
/// work (9:00–17:00), travel, public space (17:15–23:45), and travel home.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineConfig {
    pub home: [f64; 2],
    pub work: [f64; 2],
    pub public: [f64; 2],
    pub sigma_home: f64,
    pub sigma_work: f64,
    pub sigma_public: f64,
    /// Sampling cadence in minutes at each stay.
    pub dt_home: f64,
    pub dt_work: f64,
    pub dt_public: f64,
    /// Sampling cadence while traveling (minutes).
    pub dt_travel: f64,
    pub days: u32,
}

impl Default for RoutineConfig {
    fn default() -> Self {
        RoutineConfig {
            home: [0.0, 0.0],
            work: [1.0, 1.0],
            public: [1.0, 0.0],
            sigma_home: 0.1,
            sigma_work: 0.1,
            sigma_public: 0.2,
            dt_home: 10.0,
            dt_work: 10.0,
            dt_public: 5.0,
            dt_travel: 1.0,
            days: 1,
        }
    }
}

/// Simulate the routine trajectory together with per-point phase labels.
///
/// Stay points are i.i.d. Gaussian jitter about the key location, sampled on
/// a closed grid over the stay window; travel points are uniform positions
/// along the straight line between the two locations, sampled strictly inside
/// the travel window.
pub fn simulate_routine_labeled<R: Rng + ?Sized>(
    config: &RoutineConfig,
    rng: &mut R,
) -> (Trajectory, Vec<Phase>) {
    let mut records = Vec::new();
    let mut phases = Vec::new();
    let std = Normal::new(0.0, 1.0).unwrap();
    fn stay<R: Rng + ?Sized>(
        records: &mut Vec<GpsRecord>,
        phases: &mut Vec<Phase>,
        rng: &mut R,
        std: &Normal<f64>,
        (t0, t1, dt): (f64, f64, f64),
        loc: [f64; 2],
        sigma: f64,
        phase: Phase,
    ) {
        let mut t = t0;
        while t <= t1 + 1e-9 {
            let x = loc[0] + sigma * std.sample(rng);
            let y = loc[1] + sigma * std.sample(rng);
            records.push(GpsRecord::new("routine", t, [x, y]));
            phases.push(phase);
            t += dt;
        }
    }
    fn travel<R: Rng + ?Sized>(
        records: &mut Vec<GpsRecord>,
        phases: &mut Vec<Phase>,
        rng: &mut R,
        (t0, t1, dt): (f64, f64, f64),
        src: [f64; 2],
        dst: [f64; 2],
    ) {
        let mut t = t0 + dt;
        while t < t1 - 1e-9 {
            let u: f64 = rng.gen_range(0.0..1.0);
            let x = src[0] + u * (dst[0] - src[0]);
            let y = src[1] + u * (dst[1] - src[1]);
            records.push(GpsRecord::new("routine", t, [x, y]));
            phases.push(Phase::Travel);
            t += dt;
        }
    }
    for day in 0..config.days {
        let o = day as f64 * 1440.0;
        stay(
            &mut records, &mut phases, rng, &std,
            (o, o + 520.0, config.dt_home),
            config.home, config.sigma_home, Phase::Home,
        );
        travel(
            &mut records, &mut phases, rng,
            (o + 520.0, o + 540.0, config.dt_travel),
            config.home, config.work,
        );
        stay(
            &mut records, &mut phases, rng, &std,
            (o + 540.0, o + 1020.0, config.dt_work),
            config.work, config.sigma_work, Phase::Work,
        );
        travel(
            &mut records, &mut phases, rng,
            (o + 1020.0, o + 1035.0, config.dt_travel),
            config.work, config.public,
        );
        stay(
            &mut records, &mut phases, rng, &std,
            (o + 1035.0, o + 1425.0, config.dt_public),
            config.public, config.sigma_public, Phase::Public,
        );
        travel(
            &mut records, &mut phases, rng,
            (o + 1425.0, o + 1440.0, config.dt_travel),
            config.public, config.home,
        );
    }
    (
        Trajectory {
            device_id: "routine".into(),
            records,
        },
        phases,
    )
}

/// Routine trajectory without labels.
pub fn simulate_routine<R: Rng + ?Sized>(config: &RoutineConfig, rng: &mut R) -> Trajectory {
    simulate_routine_labeled(config, rng).0
}

/// Uniform random subset of the records, time order preserved.
pub fn subsample<R: Rng + ?Sized>(
    traj: &Trajectory,
    fraction: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = traj.len();
    let keep = ((n as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates: the first `keep` entries are a uniform subset
    for i in 0..keep.min(n.saturating_sub(1)) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..keep].to_vec();
    chosen.sort_unstable();
    Ok(Trajectory {
        device_id: traj.device_id.clone(),
        records: chosen.iter().map(|&i| traj.records[i].clone()).collect(),
    })
}

/// Fully specified generative parameter set extracted from a posterior scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeParams {
    /// Per-group (weight, drift per unit time, dispersion per unit time).
    pub groups: Vec<GroupParams>,
    pub jump_prob: f64,
    pub return_prob: f64,
    /// Return targets (weight, center, covariance).
    pub regions: Vec<RegionParams>,
    pub pareto_alpha: f64,
    pub pareto_eps: f64,
    pub vm_direction: f64,
    pub vm_conc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub weight: f64,
    pub drift: [f64; 2],
    pub dispersion: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub weight: f64,
    pub center: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl GenerativeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.groups.iter().all(|g| g.weight >= 0.0)
            && (0.0..=1.0).contains(&self.jump_prob)
            && (0.0..=1.0).contains(&self.return_prob)
            && self.pareto_alpha > 0.0
            && self.pareto_eps > 0.0
            && self.vm_conc >= 0.0
            && !self.groups.is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam("generative parameter set invalid".into()))
        }
    }
}

/// Posterior-mean parameter extraction from one scan: Beta posterior means
/// for the jump and return probabilities, the Gamma posterior mean for the
/// tail index, Dirichlet posterior means for occupied group and region
/// weights, and the scan's Normal–Wishart posterior means for group drift
/// and dispersion.
pub fn params_from_scan(
    deltas: &DeltaSeries,
    scan: &PosteriorScan,
    hyper: &Hyperparams,
) -> GenerativeParams {
    let st = &scan.state;
    let n = st.n() as f64;
    let n_b = st.b.iter().filter(|&&b| b).count() as f64;
    let n_eta = (0..st.n()).filter(|&i| st.b[i] && st.eta[i]).count() as f64;
    let jump_prob = (hyper.jump_beta.0 + n_b) / (hyper.jump_beta.0 + hyper.jump_beta.1 + n);
    let return_prob =
        (hyper.return_beta.0 + n_eta) / (hyper.return_beta.0 + hyper.return_beta.1 + n_b);

    let mut sum_ln = 0.0;
    let mut angles = Vec::new();
    for i in 0..st.n() {
        if st.b[i] {
            sum_ln += (deltas.ratio(i) / hyper.eps).ln();
            angles.push(deltas.dtheta[i]);
        }
    }
    let pareto_alpha = (hyper.pareto_gamma.0 + n_b) / (hyper.pareto_gamma.1 + sum_ln);
    let (_, vm_dir, _) = crate::dist::von_mises_posterior(&angles, hyper.vm_prior);

    // occupied groups, weighted by Dirichlet posterior means
    let mut n_c = vec![0u64; st.n_groups as usize];
    for i in 0..st.n() {
        if !st.b[i] {
            n_c[st.c[i] as usize] += 1;
        }
    }
    let mut groups = Vec::new();
    let mut wsum = 0.0;
    for g in 0..st.n_groups as usize {
        if n_c[g] == 0 {
            continue;
        }
        let w = hyper.dir_conc + n_c[g] as f64;
        let (mu, disp) = scan.group_params[g];
        groups.push(GroupParams {
            weight: w,
            drift: [mu.x, mu.y],
            dispersion: [[disp[(0, 0)], disp[(0, 1)]], [disp[(1, 0)], disp[(1, 1)]]],
        });
        wsum += w;
    }
    for g in &mut groups {
        g.weight /= wsum;
    }

    // regions weighted by Dirichlet posterior means of return counts
    let segments = derive_segments(&st.b, &st.c);
    let mut n_z = vec![0u64; segments.len()];
    for i in 0..st.n() {
        if st.b[i] && st.eta[i] {
            if let Some(k) = st.z[i].and_then(|a| resolve_segment(&segments, a)) {
                n_z[k] += 1;
            }
        }
    }
    let mut regions = Vec::new();
    let mut zsum = 0.0;
    for (k, reg) in scan.regions.iter().enumerate() {
        let w = hyper.region_conc + n_z[k] as f64;
        regions.push(RegionParams {
            weight: w,
            center: [reg.mu_tilde.x, reg.mu_tilde.y],
            cov: [
                [reg.sigma[(0, 0)], reg.sigma[(0, 1)]],
                [reg.sigma[(1, 0)], reg.sigma[(1, 1)]],
            ],
        });
        zsum += w;
    }
    for r in &mut regions {
        r.weight /= zsum;
    }

    GenerativeParams {
        groups,
        jump_prob,
        return_prob,
        regions,
        pareto_alpha,
        pareto_eps: hyper.eps,
        vm_direction: vm_dir,
        vm_conc: hyper.vm_conc,
    }
}

fn sample_gaussian<R: Rng + ?Sized>(
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    rng: &mut R,
) -> Vector2<f64> {
    let std = Normal::new(0.0, 1.0).unwrap();
    let z = Vector2::new(std.sample(rng), std.sample(rng));
    match nalgebra::Cholesky::new(cov) {
        Some(ch) => mean + ch.l() * z,
        None => {
            // nearly singular dispersion: fall back to its diagonal
            let sx = cov[(0, 0)].max(0.0).sqrt();
            let sy = cov[(1, 1)].max(0.0).sqrt();
            mean + Vector2::new(sx * z.x, sy * z.y)
        }
    }
}

/// Von Mises draw by the Best–Fisher wrapped-Cauchy rejection method.
pub fn sample_von_mises<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> f64 {
    use std::f64::consts::{PI, TAU};
    if kappa < 1e-8 {
        return rng.gen_range(0.0..TAU);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.gen_range(0.0..1.0);
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.gen_range(0.0..1.0);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.gen_range(0.0..1.0);
            let sign = if u3 > 0.5 { 1.0 } else { -1.0 };
            let theta = mu + sign * f.acos();
            return theta.rem_euclid(TAU);
        }
    }
}

/// Sequential draw from the generative model over a timestamp schedule: each
/// step is a Brownian increment with probability 1 − ν, otherwise a jump
/// that lands in a return region with probability 𝔭 or takes a Pareto length
/// (drawn for the Δr/Δt ratio then scaled by Δt) in a von Mises direction.
pub fn simulate_from_params<R: Rng + ?Sized>(
    params: &GenerativeParams,
    timestamps: &[f64],
    start: [f64; 2],
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    if timestamps.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut records = Vec::with_capacity(timestamps.len());
    let mut x = Vector2::new(start[0], start[1]);
    records.push(GpsRecord::new("lfcm-sim", timestamps[0], [x.x, x.y]));
    for w in timestamps.windows(2) {
        let dt = w[1] - w[0];
        if !(dt > 0.0) {
            return Err(Error::NonMonotoneTime(records.len()));
        }
        x = step_from_params(params, x, dt, rng);
        records.push(GpsRecord::new("lfcm-sim", w[1], [x.x, x.y]));
    }
    Ok(Trajectory {
        device_id: "lfcm-sim".into(),
        records,
    })
}

fn step_from_params<R: Rng + ?Sized>(
    params: &GenerativeParams,
    x: Vector2<f64>,
    dt: f64,
    rng: &mut R,
) -> Vector2<f64> {
    if rng.gen_range(0.0..1.0) >= params.jump_prob {
        // Brownian step for a group drawn by weight
        let mut u = rng.gen_range(0.0..1.0);
        let mut gi = params.groups.len() - 1;
        for (k, g) in params.groups.iter().enumerate() {
            u -= g.weight;
            if u <= 0.0 {
                gi = k;
                break;
            }
        }
        let g = &params.groups[gi];
        let mu = Vector2::new(g.drift[0], g.drift[1]) * dt;
        let cov = Matrix2::new(
            g.dispersion[0][0],
            g.dispersion[0][1],
            g.dispersion[1][0],
            g.dispersion[1][1],
        ) * dt;
        x + sample_gaussian(Vector2::zeros(), cov, rng) + mu
    } else if !params.regions.is_empty() && rng.gen_range(0.0..1.0) < params.return_prob {
        let mut u = rng.gen_range(0.0..1.0);
        let mut zi = params.regions.len() - 1;
        for (k, r) in params.regions.iter().enumerate() {
            u -= r.weight;
            if u <= 0.0 {
                zi = k;
                break;
            }
        }
        let r = &params.regions[zi];
        sample_gaussian(
            Vector2::new(r.center[0], r.center[1]),
            Matrix2::new(r.cov[0][0], r.cov[0][1], r.cov[1][0], r.cov[1][1]),
            rng,
        )
    } else {
        let ratio = sample_pareto(params.pareto_alpha, params.pareto_eps, rng);
        let theta = sample_von_mises(params.vm_direction, params.vm_conc, rng);
        x + Vector2::new(theta.cos(), theta.sin()) * (ratio * dt)
    }
}

/// Model-based interpolation/extrapolation onto a common grid using one
/// posterior scan. Grid points at observation times reproduce the
/// observation exactly; Brownian gaps are filled with sequential bridge
/// draws under the segment group's posterior dispersion; jump gaps hold the
/// origin until an instant drawn uniformly in the gap, then sit at the
/// destination; beyond the observed span the path continues by forward (or
/// time-mirrored backward) simulation from the scan parameters.
pub fn interpolate_extrapolate<R: Rng + ?Sized>(
    traj: &Trajectory,
    deltas: &DeltaSeries,
    scan: &PosteriorScan,
    params: &GenerativeParams,
    grid: &[f64],
    rng: &mut R,
) -> Result<Trajectory> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let times = &deltas.times;
    let pos = &deltas.positions;
    let segments = derive_segments(&scan.state.b, &scan.state.c);
    let n = deltas.len();
    let mut out: Vec<GpsRecord> = Vec::with_capacity(grid.len());

    // backward extrapolation first (generated in reverse, then flipped)
    let mut before: Vec<GpsRecord> = Vec::new();
    {
        let mut t_prev = times[0];
        let mut x_prev = pos[0];
        for &t in grid.iter().rev().filter(|&&t| t < times[0]) {
            let dt = t_prev - t;
            x_prev = step_from_params(params, x_prev, dt, rng);
            t_prev = t;
            before.push(GpsRecord::new(&traj.device_id, t, [x_prev.x, x_prev.y]));
        }
        before.reverse();
    }
    out.extend(before);

    // interior: walk gaps in order
    let mut gi = grid.partition_point(|&t| t < times[0]);
    for i in 0..n {
        while gi < grid.len() && grid[gi] == times[i] {
            out.push(GpsRecord::new(&traj.device_id, grid[gi], [pos[i].x, pos[i].y]));
            gi += 1;
        }
        let gap: Vec<f64> = {
            let mut v = Vec::new();
            let mut k = gi;
            while k < grid.len() && grid[k] < times[i + 1] {
                v.push(grid[k]);
                k += 1;
            }
            v
        };
        if gap.is_empty() {
            continue;
        }
        if scan.state.b[i] {
            let instant = rng.gen_range(times[i]..times[i + 1]);
            for &t in &gap {
                let p = if t < instant { pos[i] } else { pos[i + 1] };
                out.push(GpsRecord::new(&traj.device_id, t, [p.x, p.y]));
            }
        } else {
            let k = resolve_segment(&segments, i).expect("non-jump delta lies in a segment");
            let (_, disp) = scan.group_params[segments[k].group as usize];
            let mut t_prev = times[i];
            let mut x_prev = pos[i];
            let t_end = times[i + 1];
            let x_end = pos[i + 1];
            for &t in &gap {
                let frac = (t - t_prev) / (t_end - t_prev);
                let mean = x_prev + (x_end - x_prev) * frac;
                let var = (t - t_prev) * (t_end - t) / (t_end - t_prev);
                let draw = sample_gaussian(mean, disp * var, rng);
                out.push(GpsRecord::new(&traj.device_id, t, [draw.x, draw.y]));
                t_prev = t;
                x_prev = draw;
            }
        }
        gi += gap.len();
    }
    while gi < grid.len() && grid[gi] == times[n] {
        out.push(GpsRecord::new(&traj.device_id, grid[gi], [pos[n].x, pos[n].y]));
        gi += 1;
    }
    // forward extrapolation
    let mut t_prev = times[n];
    let mut x_prev = pos[n];
    while gi < grid.len() {
        let t = grid[gi];
        let dt = t - t_prev;
        x_prev = step_from_params(params, x_prev, dt, rng);
        out.push(GpsRecord::new(&traj.device_id, t, [x_prev.x, x_prev.y]));
        t_prev = t;
        gi += 1;
    }
    Ok(Trajectory {
        device_id: traj.device_id.clone(),
        records: out,
    })
}

/// Piecewise-linear interpolation with constant extension in both directions.
pub fn linear_interpolate_extrapolate(traj: &Trajectory, grid: &[f64]) -> Result<Trajectory> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if traj.is_empty() {
        return Err(Error::EmptyInput);
    }
    let times = traj.times();
    let pos = traj.positions();
    let records = grid
        .iter()
        .map(|&t| {
            let p = if t <= times[0] {
                pos[0]
            } else if t >= *times.last().unwrap() {
                *pos.last().unwrap()
            } else {
                let k = times.partition_point(|&u| u <= t);
                let (t0, t1) = (times[k - 1], times[k]);
                let frac = (t - t0) / (t1 - t0);
                pos[k - 1] + (pos[k] - pos[k - 1]) * frac
            };
            GpsRecord::new(&traj.device_id, t, [p.x, p.y])
        })
        .collect();
    Ok(Trajectory {
        device_id: traj.device_id.clone(),
        records,
    })
}

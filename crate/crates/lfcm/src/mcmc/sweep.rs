//! Per-sweep updates of the collapsed sampler. Every Gibbs block evaluates
//! the exact joint at each candidate and renormalizes, so the chain targets
//! the collapsed posterior without approximation; the eject/absorb move is a
//! Metropolis–Hastings step whose proposal density is accounted for exactly.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::joint::{derive_segments, log_joint, resolve_segment, DeltaCache, Segment};
use super::state::{ActivityRegion, Hyperparams, LatentState, PosteriorScan};
use crate::error::{Error, Result};
use crate::traj::DeltaSeries;

/// Chain controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(sweeps: usize, burn_in: usize, thin: usize, seed: u64) -> Result<Self> {
        if sweeps == 0 || burn_in >= sweeps || thin == 0 {
            return Err(Error::InvalidParam(
                "need sweeps > burn_in >= 0 and thin >= 1".into(),
            ));
        }
        Ok(ChainConfig {
            sweeps,
            burn_in,
            thin,
            seed,
        })
    }
}

/// Random feasible initial state: eligible deltas start as jumps with
/// probability `hyper.init_jump_prob`, group labels are uniform per run over
/// min(2, max_groups) groups, and returns are coin flips with uniformly
/// chosen eligible targets.
pub fn init_state<R: Rng + ?Sized>(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    hyper: &Hyperparams,
    rng: &mut R,
) -> LatentState {
    let n = deltas.len();
    let n_groups = 2.min(hyper.max_groups).max(1);
    let mut b = vec![false; n];
    for i in 0..n {
        if cache.eligible[i] {
            b[i] = rng.gen_range(0.0..1.0) < hyper.init_jump_prob;
        }
    }
    // uniform group label per maximal non-jump run
    let mut c = vec![0u32; n];
    let mut i = 0;
    while i < n {
        if b[i] {
            i += 1;
            continue;
        }
        let g = rng.gen_range(0..n_groups);
        while i < n && !b[i] {
            c[i] = g;
            i += 1;
        }
    }
    let segments = derive_segments(&b, &c);
    let mut eta = vec![false; n];
    let mut z = vec![None; n];
    for i in 0..n {
        if !b[i] {
            continue;
        }
        let eligible_starts: Vec<usize> = segments
            .iter()
            .filter(|s| s.start < i)
            .map(|s| s.start)
            .collect();
        if !eligible_starts.is_empty() && rng.gen_range(0.0..1.0) < 0.5 {
            eta[i] = true;
            z[i] = Some(eligible_starts[rng.gen_range(0..eligible_starts.len())]);
        }
    }
    LatentState {
        b,
        c,
        eta,
        z,
        n_groups,
    }
}

fn sample_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let m = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        m > f64::NEG_INFINITY,
        "all candidates have zero probability"
    );
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..1.0) * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

/// Group-label updates: a single-site Gibbs pass over the label of every
/// non-jump delta, followed by a whole-segment Metropolis relabel pass.
///
/// The segment pass is restricted to labels that do not match an adjacent
/// segment: a merging relabel could never be undone by any single move, which
/// would break reversibility. With that restriction the non-merging candidate
/// count is identical on both sides, so plain min(1, Δ) acceptance is exact.
/// The pointwise pass keeps the full per-point label space reachable; the
/// segment pass is what lets whole stays migrate between groups in one move.
pub fn update_activity_groups<R: Rng + ?Sized>(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &mut LatentState,
    hyper: &Hyperparams,
    rng: &mut R,
) {
    if state.n_groups < 2 {
        return;
    }
    // pointwise Gibbs on c_i
    for i in 0..cache.n {
        if state.b[i] {
            continue;
        }
        let mut log_w = Vec::with_capacity(state.n_groups as usize);
        for g in 0..state.n_groups {
            state.c[i] = g;
            log_w.push(log_joint(deltas, cache, state, hyper));
        }
        state.c[i] = sample_categorical(&log_w, rng) as u32;
    }
    // segment-level Metropolis relabel, fixed index order
    for i in 0..cache.n {
        let segments = derive_segments(&state.b, &state.c);
        let k = match resolve_segment(&segments, i) {
            Some(k) if segments[k].start == i => k,
            _ => continue,
        };
        let seg = segments[k];
        let mut blocked = vec![false; state.n_groups as usize];
        blocked[seg.group as usize] = true;
        if k > 0 && segments[k - 1].end + 1 == seg.start {
            blocked[segments[k - 1].group as usize] = true;
        }
        if k + 1 < segments.len() && seg.end + 1 == segments[k + 1].start {
            blocked[segments[k + 1].group as usize] = true;
        }
        let cands: Vec<u32> = (0..state.n_groups).filter(|&g| !blocked[g as usize]).collect();
        if cands.is_empty() {
            continue;
        }
        let old_lj = log_joint(deltas, cache, state, hyper);
        let g_new = cands[rng.gen_range(0..cands.len())];
        let g_old = seg.group;
        for j in seg.start..=seg.end {
            state.c[j] = g_new;
        }
        let new_lj = log_joint(deltas, cache, state, hyper);
        let ln_acc = new_lj - old_lj;
        if !(ln_acc >= 0.0 || rng.gen_range(0.0..1.0) < ln_acc.exp()) {
            for j in seg.start..=seg.end {
                state.c[j] = g_old;
            }
        }
    }
}

/// Joint Gibbs block on (b_i, c_i, η_i, z_i) for every delta.
pub fn update_jump_indicators<R: Rng + ?Sized>(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &mut LatentState,
    hyper: &Hyperparams,
    rng: &mut R,
) {
    #[derive(Clone, Copy)]
    enum Cand {
        Brownian(u32),
        Jump,
        Return(usize),
    }
    for i in 0..cache.n {
        if !cache.eligible[i] {
            debug_assert!(!state.b[i]);
            continue;
        }
        let mut cands: Vec<Cand> = Vec::new();
        let mut log_w: Vec<f64> = Vec::new();
        // Brownian branches
        state.b[i] = false;
        state.eta[i] = false;
        state.z[i] = None;
        for g in 0..state.n_groups {
            state.c[i] = g;
            cands.push(Cand::Brownian(g));
            log_w.push(log_joint(deltas, cache, state, hyper));
        }
        // exploration jump
        state.b[i] = true;
        state.eta[i] = false;
        state.z[i] = None;
        cands.push(Cand::Jump);
        log_w.push(log_joint(deltas, cache, state, hyper));
        // returns to each eligible segment of the jump configuration
        let segments = derive_segments(&state.b, &state.c);
        state.eta[i] = true;
        for seg in segments.iter().filter(|s| s.start < i) {
            state.z[i] = Some(seg.start);
            cands.push(Cand::Return(seg.start));
            log_w.push(log_joint(deltas, cache, state, hyper));
        }
        let pick = sample_categorical(&log_w, rng);
        match cands[pick] {
            Cand::Brownian(g) => {
                state.b[i] = false;
                state.c[i] = g;
                state.eta[i] = false;
                state.z[i] = None;
            }
            Cand::Jump => {
                state.b[i] = true;
                state.eta[i] = false;
                state.z[i] = None;
            }
            Cand::Return(s) => {
                state.b[i] = true;
                state.eta[i] = true;
                state.z[i] = Some(s);
            }
        }
    }
}

/// Gibbs step on η_i (jointly with z_i) for every jump.
pub fn update_return_indicators<R: Rng + ?Sized>(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &mut LatentState,
    hyper: &Hyperparams,
    rng: &mut R,
) {
    let segments = derive_segments(&state.b, &state.c);
    for i in 0..cache.n {
        if !state.b[i] {
            continue;
        }
        let mut cands: Vec<Option<usize>> = vec![None];
        state.eta[i] = false;
        state.z[i] = None;
        let mut log_w = vec![log_joint(deltas, cache, state, hyper)];
        state.eta[i] = true;
        for seg in segments.iter().filter(|s| s.start < i) {
            state.z[i] = Some(seg.start);
            cands.push(Some(seg.start));
            log_w.push(log_joint(deltas, cache, state, hyper));
        }
        let pick = sample_categorical(&log_w, rng);
        match cands[pick] {
            None => {
                state.eta[i] = false;
                state.z[i] = None;
            }
            Some(s) => {
                state.eta[i] = true;
                state.z[i] = Some(s);
            }
        }
    }
}

/// Gibbs step on z_i for every return.
pub fn update_region_assignments<R: Rng + ?Sized>(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &mut LatentState,
    hyper: &Hyperparams,
    rng: &mut R,
) {
    let segments = derive_segments(&state.b, &state.c);
    for i in 0..cache.n {
        if !(state.b[i] && state.eta[i]) {
            continue;
        }
        let starts: Vec<usize> = segments
            .iter()
            .filter(|s| s.start < i)
            .map(|s| s.start)
            .collect();
        if starts.is_empty() {
            continue;
        }
        let mut log_w = Vec::with_capacity(starts.len());
        for &s in &starts {
            state.z[i] = Some(s);
            log_w.push(log_joint(deltas, cache, state, hyper));
        }
        let pick = sample_categorical(&log_w, rng);
        state.z[i] = Some(starts[pick]);
    }
}

fn ln_alloc_prob(m1: usize, m2: usize, a: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let (m1, m2) = (m1 as f64, m2 as f64);
    ln_gamma(2.0 * a) + ln_gamma(a + m1) + ln_gamma(a + m2)
        - 2.0 * ln_gamma(a)
        - ln_gamma(2.0 * a + m1 + m2)
}

/// Metropolis–Hastings move on the number of groups. The eject move splits a
/// uniformly chosen group by reallocating each of its segments to a fresh
/// label (always the last) with a Beta(𝔞, 𝔞)-distributed probability; the
/// absorb move merges a uniformly chosen group into the last label's group.
/// Restricting absorb to pairs involving the last label makes the two moves
/// exact inverses on labeled states. Absorb proposals that would fuse
/// adjacent segments are rejected outright since no eject can undo them.
pub fn absorb_eject<R: Rng + ?Sized>(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &mut LatentState,
    hyper: &Hyperparams,
    rng: &mut R,
) {
    let m_g = hyper.max_groups;
    if m_g < 2 {
        return;
    }
    let n_g = state.n_groups;
    let p_eject_here: f64 = if n_g == 1 {
        1.0
    } else if n_g == m_g {
        0.0
    } else {
        0.5
    };
    let do_eject = rng.gen_range(0.0..1.0) < p_eject_here;
    let old_lj = log_joint(deltas, cache, state, hyper);

    if do_eject {
        let g = rng.gen_range(0..n_g);
        let segs: Vec<Segment> = derive_segments(&state.b, &state.c)
            .into_iter()
            .filter(|s| s.group == g)
            .collect();
        let rho = sample_beta(hyper.eject_conc, hyper.eject_conc, rng);
        let new_label = n_g;
        let mut moved: Vec<Segment> = Vec::new();
        for s in &segs {
            if rng.gen_range(0.0..1.0) < rho {
                moved.push(*s);
            }
        }
        for s in &moved {
            for i in s.start..=s.end {
                state.c[i] = new_label;
            }
        }
        state.n_groups = n_g + 1;
        let new_lj = log_joint(deltas, cache, state, hyper);
        let p_absorb_after: f64 = if state.n_groups == m_g { 1.0 } else { 0.5 };
        let ln_acc = new_lj - old_lj + p_absorb_after.ln()
            - p_eject_here.ln()
            - ln_alloc_prob(segs.len() - moved.len(), moved.len(), hyper.eject_conc);
        if !(ln_acc >= 0.0 || rng.gen_range(0.0..1.0) < ln_acc.exp()) {
            // revert
            for s in &moved {
                for i in s.start..=s.end {
                    state.c[i] = g;
                }
            }
            state.n_groups = n_g;
        }
    } else {
        // absorb the last label into a uniformly chosen other group
        debug_assert!(n_g >= 2);
        let last = n_g - 1;
        let g1 = rng.gen_range(0..n_g - 1);
        let segments = derive_segments(&state.b, &state.c);
        // reject proposals that would fuse a g1 segment with a last segment
        for w in segments.windows(2) {
            let adjacent = w[0].end + 1 == w[1].start;
            let pair = (w[0].group == g1 && w[1].group == last)
                || (w[0].group == last && w[1].group == g1);
            if adjacent && pair {
                return;
            }
        }
        let m1 = segments.iter().filter(|s| s.group == g1).count();
        let m2 = segments.iter().filter(|s| s.group == last).count();
        let moved: Vec<usize> = (0..cache.n).filter(|&i| state.c[i] == last).collect();
        for &i in &moved {
            state.c[i] = g1;
        }
        state.n_groups = n_g - 1;
        let new_lj = log_joint(deltas, cache, state, hyper);
        let p_eject_after: f64 = if state.n_groups == 1 { 1.0 } else { 0.5 };
        let p_absorb_here: f64 = if n_g == m_g { 1.0 } else { 0.5 };
        let ln_acc = new_lj - old_lj + p_eject_after.ln() + ln_alloc_prob(m1, m2, hyper.eject_conc)
            - p_absorb_here.ln();
        if !(ln_acc >= 0.0 || rng.gen_range(0.0..1.0) < ln_acc.exp()) {
            for &i in &moved {
                state.c[i] = last;
            }
            state.n_groups = n_g;
        }
    }
}

fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    use rand_distr::{Beta, Distribution};
    Beta::new(a, b).unwrap().sample(rng)
}

/// Run the sampler: each sweep updates group labels, the group count, jump
/// flags, return flags, and return targets, recording thinned post-burn-in
/// scans. Deterministic given the seed.
pub fn run_chain(
    deltas: &DeltaSeries,
    hyper: &Hyperparams,
    config: ChainConfig,
) -> Result<Vec<PosteriorScan>> {
    if deltas.len() < 2 {
        return Err(Error::TooShort {
            got: deltas.len() + 1,
            need: 3,
        });
    }
    let cache = DeltaCache::new(deltas, hyper.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_state(deltas, &cache, hyper, &mut rng);
    let mut scans = Vec::new();
    for sweep in 0..config.sweeps {
        update_activity_groups(deltas, &cache, &mut state, hyper, &mut rng);
        absorb_eject(deltas, &cache, &mut state, hyper, &mut rng);
        update_jump_indicators(deltas, &cache, &mut state, hyper, &mut rng);
        update_return_indicators(deltas, &cache, &mut state, hyper, &mut rng);
        update_region_assignments(deltas, &cache, &mut state, hyper, &mut rng);
        if sweep >= config.burn_in && (sweep - config.burn_in) % config.thin == 0 {
            scans.push(snapshot(deltas, &cache, &state, hyper, sweep, config.seed));
        }
    }
    Ok(scans)
}

/// Build a posterior scan from the current state.
pub fn snapshot(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &LatentState,
    hyper: &Hyperparams,
    sweep: usize,
    seed: u64,
) -> PosteriorScan {
    let lj = log_joint(deltas, cache, state, hyper);
    debug_assert!(lj.is_finite(), "recorded scan must have finite log joint");
    let segments = derive_segments(&state.b, &state.c);
    let group_params = group_posterior_params(deltas, state, &segments, hyper);
    let mut ordinal = vec![0u32; state.n_groups as usize];
    let regions = segments
        .iter()
        .map(|seg| {
            let g = seg.group as usize;
            let l = ordinal[g];
            ordinal[g] += 1;
            let t_z = deltas.times[seg.end + 1] - deltas.times[seg.start];
            let (mu, disp) = group_params[g];
            ActivityRegion {
                mu_tilde: deltas.positions[seg.start] + mu * (0.5 * t_z),
                sigma: disp * (t_z / 3.0),
                t_z,
                source: (seg.group, l),
                seg_start: seg.start,
                seg_end: seg.end,
                mass: t_z,
            }
        })
        .collect();
    PosteriorScan {
        sweep,
        log_joint: lj,
        state: state.clone(),
        group_params,
        regions,
        seed,
    }
}

/// Per-group posterior mean (drift, dispersion) given the current state.
pub fn group_posterior_params(
    deltas: &DeltaSeries,
    state: &LatentState,
    segments: &[Segment],
    hyper: &Hyperparams,
) -> Vec<(Vector2<f64>, Matrix2<f64>)> {
    use crate::dist::ScalarObsStats;
    let mut stats = vec![ScalarObsStats::default(); state.n_groups as usize];
    for i in 0..state.n() {
        if state.b[i] {
            if state.eta[i] {
                if let Some(k) = state.z[i].and_then(|a| resolve_segment(segments, a)) {
                    let seg = segments[k];
                    let t_z = deltas.times[seg.end + 1] - deltas.times[seg.start];
                    let disp = deltas.positions[i + 1] - deltas.positions[seg.start];
                    stats[seg.group as usize].add(disp, 0.5 * t_z, 3.0 / t_z);
                }
            }
        } else {
            let dt = deltas.dt[i];
            stats[state.c[i] as usize].add(deltas.dx[i], dt, 1.0 / dt);
        }
    }
    stats.iter().map(|s| s.posterior_mean(&hyper.nw)).collect()
}

/// Scan with the highest joint density; ties break toward the earliest.
pub fn extract_map(scans: &[PosteriorScan]) -> Result<&PosteriorScan> {
    scans
        .iter()
        .reduce(|best, s| if s.log_joint > best.log_joint { s } else { best })
        .ok_or(Error::EmptyChain)
}

/// Brownian-bridge uncertainty ellipse of one within-segment gap, evaluated
/// at the gap midpoint where the bridge variance peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeEllipse {
    pub center: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Squared Mahalanobis radius of the requested coverage level.
    pub chi2: f64,
}

impl BridgeEllipse {
    pub fn contains(&self, p: Vector2<f64>) -> bool {
        let d = p - self.center;
        let inv = self.cov.try_inverse().expect("bridge covariance invertible");
        (d.transpose() * inv * d)[(0, 0)] <= self.chi2
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.chi2 * self.cov.determinant().sqrt()
    }
}

/// Per within-segment consecutive pair: the bridge ellipse centered at the
/// midpoint with covariance (Δt/4)·Σ*_g, drawn at the chi-square(2) contour
/// of the requested level.
pub fn region_ellipses(
    deltas: &DeltaSeries,
    scan: &PosteriorScan,
    level: f64,
) -> Vec<BridgeEllipse> {
    let chi2 = -2.0 * (1.0 - level).ln();
    let segments = derive_segments(&scan.state.b, &scan.state.c);
    let mut out = Vec::new();
    for seg in &segments {
        let (_, disp) = scan.group_params[seg.group as usize];
        for i in seg.start..=seg.end {
            let center = (deltas.positions[i] + deltas.positions[i + 1]) * 0.5;
            let cov = disp * (deltas.dt[i] / 4.0);
            out.push(BridgeEllipse { center, cov, chi2 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{build_delta_series, GpsRecord, Trajectory};
    use approx::assert_relative_eq;

    fn series(points: &[(f64, f64, f64)]) -> DeltaSeries {
        let t = Trajectory {
            device_id: "d".into(),
            records: points
                .iter()
                .map(|&(t, x, y)| GpsRecord::new("d", t, [x, y]))
                .collect(),
        };
        build_delta_series(&t).unwrap()
    }

    fn tiny() -> (DeltaSeries, Hyperparams) {
        let d = series(&[
            (0.0, 0.00, 0.00),
            (10.0, 0.08, 0.03),
            (20.0, 0.02, 0.09),
            (21.0, 2.00, 2.00),
            (31.0, 2.06, 1.97),
            (32.0, 0.05, 0.05),
        ]);
        let mut h = Hyperparams::with_eps(0.05).unwrap();
        h.max_groups = 2;
        (d, h)
    }

    #[test]
    fn init_forces_ineligible_to_brownian() {
        let d = series(&[(0.0, 0.0, 0.0), (10.0, 0.01, 0.0), (20.0, 0.02, 0.0)]);
        let h = Hyperparams::with_eps(0.5).unwrap();
        let cache = DeltaCache::new(&d, h.eps);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = init_state(&d, &cache, &h, &mut rng);
            assert!(s.b.iter().all(|&b| !b));
        }
    }

    #[test]
    fn init_jump_fraction_near_one_fifth() {
        let (d, h) = tiny();
        let cache = DeltaCache::new(&d, h.eps);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut jumps = 0usize;
        let mut eligible = 0usize;
        for _ in 0..10_000 {
            let s = init_state(&d, &cache, &h, &mut rng);
            for i in 0..d.len() {
                if cache.eligible[i] {
                    eligible += 1;
                    jumps += s.b[i] as usize;
                }
            }
        }
        let frac = jumps as f64 / eligible as f64;
        assert!((frac - 0.2).abs() < 0.02, "frac = {frac}");
    }

    #[test]
    fn init_is_reproducible() {
        let (d, h) = tiny();
        let cache = DeltaCache::new(&d, h.eps);
        let a = init_state(&d, &cache, &h, &mut ChaCha8Rng::seed_from_u64(7));
        let b = init_state(&d, &cache, &h, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn chain_is_deterministic_and_finite() {
        let (d, h) = tiny();
        let cfg = ChainConfig::new(60, 10, 2, 42).unwrap();
        let a = run_chain(&d, &h, cfg).unwrap();
        let b = run_chain(&d, &h, cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.state, y.state);
            assert_eq!(x.log_joint, y.log_joint);
            assert!(x.log_joint.is_finite());
        }
    }

    #[test]
    fn extract_map_rules() {
        let (d, h) = tiny();
        let cfg = ChainConfig::new(30, 0, 1, 9).unwrap();
        let scans = run_chain(&d, &h, cfg).unwrap();
        let map = extract_map(&scans).unwrap();
        let best = scans
            .iter()
            .map(|s| s.log_joint)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(map.log_joint, best);
        let first_best = scans.iter().find(|s| s.log_joint == best).unwrap();
        assert_eq!(map.sweep, first_best.sweep);
        assert!(extract_map(&[]).is_err());
    }

    #[test]
    fn predominant_separation_when_evidence_is_strong() {
        // one faraway tight segment: with two groups available the
        // conditional should overwhelmingly separate the two clusters
        let d = series(&[
            (0.0, 0.0, 0.0),
            (1.0, 0.001, 0.0),
            (2.0, 0.0, 0.001),
            (3.0, 50.0, 50.0),
            (4.0, 53.0, 47.0),
            (5.0, 47.0, 52.0),
        ]);
        let mut h = Hyperparams::with_eps(1e6).unwrap(); // nothing eligible
        h.max_groups = 2;
        let cache = DeltaCache::new(&d, h.eps);
        let state = LatentState {
            b: vec![false; 5],
            c: vec![0, 0, 0, 1, 1],
            eta: vec![false; 5],
            z: vec![None; 5],
            n_groups: 2,
        };
        let split = log_joint(&d, &cache, &state, &h);
        let merged = {
            let mut s = state.clone();
            s.c = vec![0; 5];
            log_joint(&d, &cache, &s, &h)
        };
        // enumerate both labelings of the far segment
        let odds = (split - merged).exp();
        assert!(
            odds / (1.0 + odds) > 0.9,
            "separation mass {}",
            odds / (1.0 + odds)
        );
    }

    #[test]
    fn bridge_ellipse_properties() {
        // segment of two identical points: ellipse centered there, area
        // proportional to Δt·|Σ*|^{1/2}; doubling Δt doubles the midpoint
        // variance
        let d1 = series(&[(0.0, 1.0, 1.0), (10.0, 1.0, 1.0), (20.0, 1.0, 1.0)]);
        let h = Hyperparams::with_eps(10.0).unwrap();
        let cache = DeltaCache::new(&d1, h.eps);
        let state = LatentState {
            b: vec![false, false],
            c: vec![0, 0],
            eta: vec![false, false],
            z: vec![None, None],
            n_groups: 1,
        };
        let scan = snapshot(&d1, &cache, &state, &h, 0, 0);
        let es = region_ellipses(&d1, &scan, 0.95);
        assert_eq!(es.len(), 2);
        assert_relative_eq!((es[0].center - Vector2::new(1.0, 1.0)).norm(), 0.0);
        let (_, disp) = scan.group_params[0];
        assert_relative_eq!(
            es[0].area(),
            std::f64::consts::PI * (-2.0 * 0.05_f64.ln()) * (disp * 2.5).determinant().sqrt(),
            max_relative = 1e-12
        );

        let d2 = series(&[(0.0, 1.0, 1.0), (20.0, 1.0, 1.0), (40.0, 1.0, 1.0)]);
        let cache2 = DeltaCache::new(&d2, h.eps);
        let scan2 = snapshot(&d2, &cache2, &state, &h, 0, 0);
        let es2 = region_ellipses(&d2, &scan2, 0.95);
        // same dispersion posterior (scaled obs identical), doubled Δt
        assert_relative_eq!(
            es2[0].cov[(0, 0)] / es[0].cov[(0, 0)],
            2.0,
            max_relative = 1e-9
        );
    }

    /// Enumerate every latent configuration of a tiny instance (per-point
    /// labels, jump/return flags, resolved targets, group count) with its
    /// exact collapsed density.
    fn enumerate_posterior(
        d: &DeltaSeries,
        h: &Hyperparams,
    ) -> std::collections::HashMap<String, f64> {
        use super::super::joint::DeltaCache;
        let cache = DeltaCache::new(d, h.eps);
        let n = d.len();
        let mut table: std::collections::HashMap<String, f64> = Default::default();
        let eligible: Vec<usize> = (0..n).filter(|&i| cache.eligible[i]).collect();
        for mask in 0..(1u32 << eligible.len()) {
            let mut b = vec![false; n];
            for (bit, &i) in eligible.iter().enumerate() {
                b[i] = mask >> bit & 1 == 1;
            }
            let nonjump: Vec<usize> = (0..n).filter(|&i| !b[i]).collect();
            let jumps: Vec<usize> = (0..n).filter(|&i| b[i]).collect();
            for n_groups in 1..=h.max_groups {
                // raw per-point labels over non-jump deltas
                let total_c = (n_groups as u64).pow(nonjump.len() as u32);
                for code in 0..total_c {
                    let mut c = vec![0u32; n];
                    let mut rem = code;
                    for &i in &nonjump {
                        c[i] = (rem % n_groups as u64) as u32;
                        rem /= n_groups as u64;
                    }
                    let segments = derive_segments(&b, &c);
                    // per-jump options: exploration or return to any segment
                    // starting strictly before the jump
                    let opts: Vec<Vec<Option<usize>>> = jumps
                        .iter()
                        .map(|&i| {
                            let mut o: Vec<Option<usize>> = vec![None];
                            o.extend(
                                segments
                                    .iter()
                                    .filter(|s| s.start < i)
                                    .map(|s| Some(s.start)),
                            );
                            o
                        })
                        .collect();
                    let mut idx = vec![0usize; jumps.len()];
                    loop {
                        let mut eta = vec![false; n];
                        let mut z = vec![None; n];
                        for (k, &i) in jumps.iter().enumerate() {
                            if let Some(s) = opts[k][idx[k]] {
                                eta[i] = true;
                                z[i] = Some(s);
                            }
                        }
                        let state = LatentState {
                            b: b.clone(),
                            c: c.clone(),
                            eta,
                            z,
                            n_groups,
                        };
                        let lj = log_joint(d, &cache, &state, h);
                        if lj > f64::NEG_INFINITY {
                            let key = raw_key(&state, &segments);
                            table.insert(key, lj);
                        }
                        // advance the mixed-radix counter over return options
                        let mut k = 0;
                        loop {
                            if k == jumps.len() {
                                break;
                            }
                            idx[k] += 1;
                            if idx[k] < opts[k].len() {
                                break;
                            }
                            idx[k] = 0;
                            k += 1;
                        }
                        if k == jumps.len() {
                            break;
                        }
                    }
                }
            }
        }
        // normalize
        let logs: Vec<f64> = table.values().cloned().collect();
        let logz = crate::log_sum_exp(&logs);
        for v in table.values_mut() {
            *v = (*v - logz).exp();
        }
        table
    }

    /// Raw comparison key: group labels as-is, labels at jump deltas masked,
    /// anchors resolved to their segment start.
    fn raw_key(state: &LatentState, segments: &[Segment]) -> String {
        let mut parts = Vec::with_capacity(state.n() + 1);
        for i in 0..state.n() {
            if state.b[i] {
                match state.z[i].and_then(|a| resolve_segment(segments, a)) {
                    Some(k) if state.eta[i] => parts.push(format!("J{}", segments[k].start)),
                    _ => parts.push("j".into()),
                }
            } else {
                parts.push(format!("{}", state.c[i]));
            }
        }
        parts.push(format!("G{}", state.n_groups));
        parts.join(",")
    }

    #[test]
    fn chain_matches_enumerated_posterior() {
        // one eligible jump, four deltas, two groups allowed
        let d = series(&[
            (0.0, 0.00, 0.00),
            (10.0, 0.05, 0.05),
            (20.0, 0.00, 0.10),
            (21.0, 2.00, 2.00),
            (31.0, 2.05, 1.95),
        ]);
        let mut h = Hyperparams::with_eps(0.05).unwrap();
        h.max_groups = 2;
        let exact = enumerate_posterior(&d, &h);
        assert!(exact.len() > 4, "want a nontrivial state space");

        let cache = DeltaCache::new(&d, h.eps);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut state = init_state(&d, &cache, &h, &mut rng);
        let sweeps = 60_000;
        let mut counts: std::collections::HashMap<String, f64> = Default::default();
        for _ in 0..sweeps {
            update_activity_groups(&d, &cache, &mut state, &h, &mut rng);
            absorb_eject(&d, &cache, &mut state, &h, &mut rng);
            update_jump_indicators(&d, &cache, &mut state, &h, &mut rng);
            update_return_indicators(&d, &cache, &mut state, &h, &mut rng);
            update_region_assignments(&d, &cache, &mut state, &h, &mut rng);
            let segments = derive_segments(&state.b, &state.c);
            *counts.entry(raw_key(&state, &segments)).or_insert(0.0) += 1.0;
        }
        for v in counts.values_mut() {
            *v /= sweeps as f64;
        }
        let mut tv = 0.0;
        for (key, p) in &exact {
            tv += (p - counts.get(key).unwrap_or(&0.0)).abs();
        }
        for (key, q) in &counts {
            assert!(
                exact.contains_key(key),
                "chain visited a state outside the enumerated support: {key}"
            );
            let _ = q;
        }
        tv *= 0.5;
        eprintln!("TV = {tv:.4} over {} states", exact.len());
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn bridge_coverage_monte_carlo() {
        use rand_distr::{Distribution, Normal};
        let (d, h) = tiny();
        let cache = DeltaCache::new(&d, h.eps);
        let state = LatentState {
            b: vec![false; 5],
            c: vec![0; 5],
            eta: vec![false; 5],
            z: vec![None; 5],
            n_groups: 1,
        };
        let scan = snapshot(&d, &cache, &state, &h, 0, 0);
        let es = region_ellipses(&d, &scan, 0.95);
        let e = &es[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chol = nalgebra::Cholesky::new(e.cov).unwrap();
        let l = chol.l();
        let norm = Normal::new(0.0, 1.0).unwrap();
        let n = 10_000;
        let mut inside = 0;
        for _ in 0..n {
            let z = Vector2::new(norm.sample(&mut rng), norm.sample(&mut rng));
            let p = e.center + l * z;
            inside += e.contains(p) as usize;
        }
        let fr = inside as f64 / n as f64;
        assert!((fr - 0.95).abs() < 0.01, "coverage {fr}");
    }
}

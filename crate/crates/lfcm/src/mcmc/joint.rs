//! Exact evaluation of the collapsed joint log-density of (data, state).

use super::state::{Hyperparams, LatentState};
use crate::dist::{log_beta_bernoulli, log_marginal_nw_scalar, ScalarObsStats};
use crate::traj::DeltaSeries;
use statrs::function::gamma::ln_gamma;

/// A maximal run of consecutive non-jump deltas sharing one group label.
/// Delta i spans times[i]..times[i+1], so a segment over deltas start..=end
/// covers positions[start..=end+1] with duration times[end+1] − times[start].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub group: u32,
}

/// Maximal constant-(b = 0, c) runs in delta order.
pub fn derive_segments(b: &[bool], c: &[u32]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] {
            i += 1;
            continue;
        }
        let start = i;
        let group = c[i];
        while i + 1 < b.len() && !b[i + 1] && c[i + 1] == group {
            i += 1;
        }
        out.push(Segment {
            start,
            end: i,
            group,
        });
        i += 1;
    }
    out
}

/// Per-delta quantities precomputed once per chain: jump eligibility and the
/// branch statistics each delta contributes.
#[derive(Debug, Clone)]
pub struct DeltaCache {
    pub n: usize,
    pub eligible: Vec<bool>,
    pub ln_ratio: Vec<f64>,
    pub ln_ratio_over_eps: Vec<f64>,
    pub cos_t: Vec<f64>,
    pub sin_t: Vec<f64>,
}

impl DeltaCache {
    pub fn new(deltas: &DeltaSeries, eps: f64) -> Self {
        let n = deltas.len();
        let mut eligible = Vec::with_capacity(n);
        let mut ln_ratio = Vec::with_capacity(n);
        let mut ln_ratio_over_eps = Vec::with_capacity(n);
        let mut cos_t = Vec::with_capacity(n);
        let mut sin_t = Vec::with_capacity(n);
        for i in 0..n {
            let ratio = deltas.ratio(i);
            eligible.push(ratio >= eps);
            ln_ratio.push(if ratio > 0.0 { ratio.ln() } else { f64::NEG_INFINITY });
            ln_ratio_over_eps.push(if ratio > 0.0 {
                (ratio / eps).ln()
            } else {
                f64::NEG_INFINITY
            });
            cos_t.push(deltas.dtheta[i].cos());
            sin_t.push(deltas.dtheta[i].sin());
        }
        DeltaCache {
            n,
            eligible,
            ln_ratio,
            ln_ratio_over_eps,
            cos_t,
            sin_t,
        }
    }
}

/// Log joint density of the data and latent state, up to a state-independent
/// constant. Returns −∞ for states outside the support: a jump below ε, a
/// return whose anchor does not resolve to a segment, or a return whose
/// target segment does not start strictly before the jump.
pub fn log_joint(
    deltas: &DeltaSeries,
    cache: &DeltaCache,
    state: &LatentState,
    hyper: &Hyperparams,
) -> f64 {
    let n = cache.n;
    debug_assert_eq!(state.n(), n);
    let segments = derive_segments(&state.b, &state.c);

    // group occupancy counts over non-jump deltas, and per-group obs stats
    let n_groups = state.n_groups as usize;
    let mut n_c = vec![0u64; n_groups];
    let mut stats = vec![ScalarObsStats::default(); n_groups];

    let mut n_b = 0u64;
    let mut n_eta = 0u64;
    let mut sum_ln_ratio = 0.0;
    let mut sum_ln_ratio_over_eps = 0.0;
    let mut sum_cos = 0.0;
    let mut sum_sin = 0.0;
    let mut n_z = vec![0u64; segments.len()];

    for i in 0..n {
        if state.b[i] {
            if !cache.eligible[i] {
                return f64::NEG_INFINITY;
            }
            n_b += 1;
            sum_ln_ratio += cache.ln_ratio[i];
            sum_ln_ratio_over_eps += cache.ln_ratio_over_eps[i];
            sum_cos += cache.cos_t[i];
            sum_sin += cache.sin_t[i];
            if state.eta[i] {
                n_eta += 1;
                let anchor = match state.z[i] {
                    Some(a) => a,
                    None => return f64::NEG_INFINITY,
                };
                let seg_idx = match resolve_segment(&segments, anchor) {
                    Some(k) => k,
                    None => return f64::NEG_INFINITY,
                };
                let seg = segments[seg_idx];
                // causality: the target segment must start strictly earlier
                if seg.start >= i {
                    return f64::NEG_INFINITY;
                }
                n_z[seg_idx] += 1;
                let t_z = deltas.times[seg.end + 1] - deltas.times[seg.start];
                let disp = deltas.positions[i + 1] - deltas.positions[seg.start];
                stats[seg.group as usize].add(disp, 0.5 * t_z, 3.0 / t_z);
            }
        } else {
            let g = state.c[i] as usize;
            debug_assert!(g < n_groups);
            n_c[g] += 1;
            let dt = deltas.dt[i];
            stats[g].add(deltas.dx[i], dt, 1.0 / dt);
        }
    }

    let mut lp = 0.0;

    // group labels: Dirichlet-Multinomial over n_groups categories
    lp += dm_symmetric(&n_c, hyper.dir_conc);
    // jump indicators over all deltas
    lp += log_beta_bernoulli(n_b, n as u64, hyper.jump_beta.0, hyper.jump_beta.1);
    // return indicators over jumps
    lp += log_beta_bernoulli(n_eta, n_b, hyper.return_beta.0, hyper.return_beta.1);
    // return targets: Dirichlet-Multinomial over current segments
    if n_eta > 0 && segments.is_empty() {
        return f64::NEG_INFINITY;
    }
    if !segments.is_empty() {
        lp += dm_symmetric(&n_z, hyper.region_conc);
    }
    // jump lengths: Gamma-mixed Pareto marginal over all jumps
    if n_b > 0 {
        let (varpi, zeta) = hyper.pareto_gamma;
        let nb = n_b as f64;
        lp += ln_gamma(varpi + nb) - (varpi + nb) * (zeta + sum_ln_ratio_over_eps).ln()
            - ln_gamma(varpi)
            + varpi * zeta.ln()
            - sum_ln_ratio;
        // jump angles: von Mises marginal with the mean direction integrated
        lp += vm_marginal_from_sums(n_b as f64, sum_cos, sum_sin, hyper);
    }
    // Brownian + return evidence per group
    for s in &stats {
        lp += log_marginal_nw_scalar(s, &hyper.nw);
    }
    // prior on the group count
    lp += hyper.log_prior_n_groups(state.n_groups);
    lp
}

/// Index of the segment containing the anchor delta, if any.
pub fn resolve_segment(segments: &[Segment], anchor: usize) -> Option<usize> {
    // segments are sorted by start; binary search the last start <= anchor
    let mut lo = 0usize;
    let mut hi = segments.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if segments[mid].start <= anchor {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return None;
    }
    let seg = &segments[lo - 1];
    (anchor <= seg.end).then_some(lo - 1)
}

fn dm_symmetric(counts: &[u64], conc: f64) -> f64 {
    let k = counts.len() as f64;
    let total: u64 = counts.iter().sum();
    let mut lp = ln_gamma(k * conc) - ln_gamma(k * conc + total as f64) - k * ln_gamma(conc);
    for &c in counts {
        lp += ln_gamma(conc + c as f64);
    }
    lp
}

fn vm_marginal_from_sums(n_b: f64, sum_cos: f64, sum_sin: f64, hyper: &Hyperparams) -> f64 {
    use crate::dist::ln_bessel_i0;
    let p = hyper.vm_prior;
    let cx = p.r0 * p.mu0.cos() + hyper.vm_conc * sum_cos;
    let sx = p.r0 * p.mu0.sin() + hyper.vm_conc * sum_sin;
    let r_n = cx.hypot(sx);
    -n_b * (std::f64::consts::TAU.ln() + ln_bessel_i0(hyper.vm_conc)) + ln_bessel_i0(r_n)
        - ln_bessel_i0(p.r0)
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

    fn toy() -> (DeltaSeries, Hyperparams) {
        // 5 deltas: two large displacements over short gaps (eligible), three
        // small ones
        let d = series(&[
            (0.0, 0.00, 0.00),
            (10.0, 0.10, 0.05),
            (20.0, 0.05, 0.12),
            (21.0, 3.00, 3.00),
            (31.0, 3.08, 2.95),
            (32.0, 0.10, 0.02),
        ]);
        let h = Hyperparams::with_eps(0.05).unwrap();
        (d, h)
    }

    #[test]
    fn segments_derived_from_runs() {
        let b = [false, false, true, false, false, false];
        let c = [0, 0, 9, 1, 1, 0];
        let segs = derive_segments(&b, &c);
        assert_eq!(
            segs,
            vec![
                Segment { start: 0, end: 1, group: 0 },
                Segment { start: 3, end: 4, group: 1 },
                Segment { start: 5, end: 5, group: 0 },
            ]
        );
        assert_eq!(resolve_segment(&segs, 4), Some(1));
        assert_eq!(resolve_segment(&segs, 2), None);
    }

    #[test]
    fn matches_independent_term_assembly() {
        // assemble the joint term by term through the public distribution API
        let (d, h) = toy();
        assert_eq!(d.len(), 5);
        let cache = DeltaCache::new(&d, h.eps);
        let state = LatentState {
            b: vec![false, false, true, false, true],
            c: vec![0, 0, 0, 1, 0],
            eta: vec![false, false, false, false, true],
            z: vec![None, None, None, None, Some(0)],
            n_groups: 2,
        };
        let got = log_joint(&d, &cache, &state, &h);

        use crate::dist::*;
        let segments = derive_segments(&state.b, &state.c);
        assert_eq!(segments.len(), 2);
        // n_c over non-jump deltas: group0 = {0,1}, group1 = {3}
        let mut expect = log_dirichlet_multinomial(&[2, 1], &[h.dir_conc; 2]);
        expect += log_beta_bernoulli(2, 5, h.jump_beta.0, h.jump_beta.1);
        expect += log_beta_bernoulli(1, 2, h.return_beta.0, h.return_beta.1);
        expect += log_dirichlet_multinomial(&[1, 0], &[h.region_conc; 2]);
        let ratios = [d.ratio(2), d.ratio(4)];
        expect +=
            log_gamma_pareto_marginal(&ratios, h.pareto_gamma.0, h.pareto_gamma.1, h.eps).unwrap();
        let angles = [d.dtheta[2], d.dtheta[4]];
        expect += von_mises_log_marginal(&angles, h.vm_prior, h.vm_conc);
        // group 0: brownian deltas 0, 1 plus the return obs of delta 4, which
        // lands at position index 5 displaced from the segment start
        let t_z = d.times[2] - d.times[0];
        let disp = d.positions[5] - d.positions[0];
        let g0 = vec![
            WeightedGaussObs::isotropic(d.dx[0], d.dt[0], 1.0 / d.dt[0]),
            WeightedGaussObs::isotropic(d.dx[1], d.dt[1], 1.0 / d.dt[1]),
            WeightedGaussObs::isotropic(disp, 0.5 * t_z, 3.0 / t_z),
        ];
        expect += log_marginal_nw(&g0, &h.nw).unwrap();
        let g1 = vec![WeightedGaussObs::isotropic(d.dx[3], d.dt[3], 1.0 / d.dt[3])];
        expect += log_marginal_nw(&g1, &h.nw).unwrap();
        expect += h.log_prior_n_groups(2);

        assert_relative_eq!(got, expect, epsilon = 1e-10);
    }

    #[test]
    fn time_shift_invariance() {
        let (d, h) = toy();
        let cache = DeltaCache::new(&d, h.eps);
        let shifted = series(&[
            (1000.0, 0.00, 0.00),
            (1010.0, 0.10, 0.05),
            (1020.0, 0.05, 0.12),
            (1021.0, 3.00, 3.00),
            (1031.0, 3.08, 2.95),
            (1032.0, 0.10, 0.02),
        ]);
        let cache2 = DeltaCache::new(&shifted, h.eps);
        let state = LatentState {
            b: vec![false, false, true, false, true],
            c: vec![0, 0, 0, 1, 0],
            eta: vec![false, false, false, false, true],
            z: vec![None, None, None, None, Some(0)],
            n_groups: 2,
        };
        assert_relative_eq!(
            log_joint(&d, &cache, &state, &h),
            log_joint(&shifted, &cache2, &state, &h),
            epsilon = 1e-12
        );
    }

    #[test]
    fn label_permutation_invariance() {
        let (d, h) = toy();
        let cache = DeltaCache::new(&d, h.eps);
        let state = LatentState {
            b: vec![false, false, true, false, true],
            c: vec![0, 0, 0, 1, 0],
            eta: vec![false, false, false, false, true],
            z: vec![None, None, None, None, Some(0)],
            n_groups: 2,
        };
        let mut swapped = state.clone();
        for g in swapped.c.iter_mut() {
            *g = 1 - *g;
        }
        assert_relative_eq!(
            log_joint(&d, &cache, &state, &h),
            log_joint(&d, &cache, &swapped, &h),
            epsilon = 1e-12
        );
    }

    #[test]
    fn support_violations_are_neg_inf() {
        let (d, h) = toy();
        let cache = DeltaCache::new(&d, h.eps);
        // ineligible delta forced to jump
        let state = LatentState {
            b: vec![true, false, false, false, false],
            c: vec![0; 5],
            eta: vec![false; 5],
            z: vec![None; 5],
            n_groups: 1,
        };
        assert_eq!(log_joint(&d, &cache, &state, &h), f64::NEG_INFINITY);
        // return to a segment that starts later than the jump
        let state = LatentState {
            b: vec![false, false, true, false, false],
            c: vec![0; 5],
            eta: vec![false, false, true, false, false],
            z: vec![None, None, Some(3), None, None],
            n_groups: 1,
        };
        assert_eq!(log_joint(&d, &cache, &state, &h), f64::NEG_INFINITY);
        // return anchored at a jump delta
        let state = LatentState {
            b: vec![false, false, true, false, true],
            c: vec![0; 5],
            eta: vec![false, false, false, false, true],
            z: vec![None, None, None, None, Some(2)],
            n_groups: 1,
        };
        assert_eq!(log_joint(&d, &cache, &state, &h), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_groups_change_only_count_terms() {
        let (d, h) = toy();
        let cache = DeltaCache::new(&d, h.eps);
        let one = LatentState {
            b: vec![false; 5],
            c: vec![0; 5],
            eta: vec![false; 5],
            z: vec![None; 5],
            n_groups: 1,
        };
        let two = LatentState {
            n_groups: 2,
            ..one.clone()
        };
        let lj1 = log_joint(&d, &cache, &one, &h);
        let lj2 = log_joint(&d, &cache, &two, &h);
        // difference = Δ label-marginal + Δ count prior, both computable
        use crate::dist::log_dirichlet_multinomial;
        let dm1 = log_dirichlet_multinomial(&[5], &[h.dir_conc]);
        let dm2 = log_dirichlet_multinomial(&[5, 0], &[h.dir_conc; 2]);
        let expect = (dm2 - dm1) + (h.log_prior_n_groups(2) - h.log_prior_n_groups(1));
        assert_relative_eq!(lj2 - lj1, expect, epsilon = 1e-10);
    }
}

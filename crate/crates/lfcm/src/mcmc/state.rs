use nalgebra::{Matrix2, Vector2};

use crate::dist::{NwHyper, VonMisesPrior};
use crate::error::{Error, Result};

/// All prior constants of the model plus the sampler controls that depend on
/// them. Defaults follow the prior table: Poisson–Gamma(½, ½) on the group
/// count, Dir(1) on group and region weights, Beta(2, 2) on jump and return
/// probabilities, Gamma(½, ½) on the tail index, NW(0, 0.01, ½, ½I) on the
/// Brownian parameters, and a VM(0, 1) prior on the jump mean direction with
/// fixed unit concentration.
#[derive(Debug, Clone)]
pub struct Hyperparams {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    /// Dirichlet concentration for activity-group labels.
    pub dir_conc: f64,
    /// Dirichlet concentration for return-region labels.
    pub region_conc: f64,
    pub jump_beta: (f64, f64),
    pub return_beta: (f64, f64),
    /// Gamma prior (shape, rate) on the Pareto tail index.
    pub pareto_gamma: (f64, f64),
    /// Known minimal jump scale: deltas with Δr/Δt below it can never be
    /// jumps.
    pub eps: f64,
    pub nw: NwHyper,
    pub vm_prior: VonMisesPrior,
    /// Fixed von Mises concentration of jump angles.
    pub vm_conc: f64,
    /// Cap on the number of mixture components.
    pub max_groups: u32,
    /// Beta(𝔞, 𝔞) concentration of the eject move's reallocation fraction.
    pub eject_conc: f64,
    /// Initial probability that an eligible delta starts as a jump. The
    /// posterior over jump structure can be strongly bimodal (a diffuse
    /// Brownian group can absorb what a jump-leaning basin classifies as
    /// jumps), and single-site flips rarely cross between basins, so the
    /// starting fraction effectively selects the basin being explored.
    pub init_jump_prob: f64,
}

impl Hyperparams {
    pub fn with_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParam(format!("eps must be > 0, got {eps}")));
        }
        Ok(Hyperparams {
            lambda_shape: 0.5,
            lambda_rate: 0.5,
            dir_conc: 1.0,
            region_conc: 1.0,
            jump_beta: (2.0, 2.0),
            return_beta: (2.0, 2.0),
            pareto_gamma: (0.5, 0.5),
            eps,
            nw: NwHyper::table_default(),
            vm_prior: VonMisesPrior::default(),
            vm_conc: 1.0,
            max_groups: 10,
            eject_conc: 1.0,
            init_jump_prob: 0.2,
        })
    }

    /// Log prior over the group count: Poisson(λ) with λ ~ Gamma(shape, rate)
    /// integrated out (a negative binomial), truncated to 1..=max_groups and
    /// renormalized.
    pub fn log_prior_n_groups(&self, n_groups: u32) -> f64 {
        debug_assert!(n_groups >= 1 && n_groups <= self.max_groups);
        let lp = |k: u32| -> f64 {
            use statrs::function::gamma::ln_gamma;
            let kf = k as f64;
            ln_gamma(kf + self.lambda_shape) - ln_gamma(kf + 1.0) - ln_gamma(self.lambda_shape)
                + self.lambda_shape * (self.lambda_rate / (self.lambda_rate + 1.0)).ln()
                + kf * (1.0 / (self.lambda_rate + 1.0)).ln()
        };
        let norm = crate::log_sum_exp(&(1..=self.max_groups).map(lp).collect::<Vec<_>>());
        lp(n_groups) - norm
    }
}

/// Discrete latent state of the sampler. Group labels are 0-based and run
/// over `0..n_groups`; groups may be empty (the absorb move removes them).
/// `z[i]` stores an anchor delta index inside the target segment; anchors are
/// resolved to their containing segment whenever the joint is evaluated, so
/// splits and merges of segments never leave stale references.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub b: Vec<bool>,
    pub c: Vec<u32>,
    pub eta: Vec<bool>,
    pub z: Vec<Option<usize>>,
    pub n_groups: u32,
}

impl LatentState {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Canonical key for histogram comparisons: group labels are relabeled in
    /// first-use order over non-jump deltas and return targets are replaced
    /// by the ordinal of their resolved segment.
    pub fn canonical_key(&self, segments: &[super::Segment]) -> String {
        let mut relabel: Vec<Option<u32>> = vec![None; self.n_groups as usize];
        let mut next = 0u32;
        let mut parts: Vec<String> = Vec::with_capacity(self.n() + 2);
        for i in 0..self.n() {
            if self.b[i] {
                let zi = self.z[i]
                    .and_then(|a| segments.iter().position(|s| s.start <= a && a <= s.end));
                match (self.eta[i], zi) {
                    (true, Some(k)) => parts.push(format!("J{k}")),
                    (true, None) => parts.push("J?".into()),
                    (false, _) => parts.push("j".into()),
                }
            } else {
                let g = self.c[i] as usize;
                let lab = match relabel[g] {
                    Some(l) => l,
                    None => {
                        relabel[g] = Some(next);
                        next += 1;
                        next - 1
                    }
                };
                parts.push(format!("{lab}"));
            }
        }
        parts.push(format!("G{}", self.n_groups));
        parts.join(",")
    }
}

/// A return target: the time-averaged Brownian position distribution of one
/// contiguous segment, N(μ̃_z, Σ_z) with μ̃_z = x(t_{0,z}) + ½T_z μ_g and
/// Σ_z = ⅓T_z Σ*_g, evaluated at the group's current posterior means.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRegion {
    pub mu_tilde: Vector2<f64>,
    pub sigma: Matrix2<f64>,
    pub t_z: f64,
    /// (group, ordinal of the segment within the group)
    pub source: (u32, u32),
    pub seg_start: usize,
    pub seg_end: usize,
    /// Time mass used for ranking and density weighting.
    pub mass: f64,
}

/// One recorded posterior scan: the latent snapshot plus derived per-group
/// posterior means and the region registry.
#[derive(Debug, Clone)]
pub struct PosteriorScan {
    pub sweep: usize,
    pub log_joint: f64,
    pub state: LatentState,
    /// Posterior mean (drift, dispersion) per group label.
    pub group_params: Vec<(Vector2<f64>, Matrix2<f64>)>,
    pub regions: Vec<ActivityRegion>,
    pub seed: u64,
}

//! Lévy-flight cluster model (LFCM) for temporally irregular 2-D location
//! trajectories.
//!
//! The model represents movement as a mixture of group-specific Brownian
//! motions (activities) and Pareto-length / von-Mises-angle jumps, with
//! probabilistic returns to previously visited activity regions. All mixture
//! parameters are analytically integrated out, so posterior inference runs as
//! a collapsed Gibbs sampler over the discrete latent state.
//!
//! Module map:
//! - [`traj`]: trajectories and the first-difference series the model consumes
//! - [`dist`]: closed-form densities and conjugate / integrated marginals
//! - [`tail`]: empirical calibration of the minimal jump scale ε
//! - [`mcmc`]: the collapsed sampler, posterior scans, activity regions
//! - [`sim`]: routine data generator, posterior-driven synthesis, interpolation
//! - [`metrics`]: jump length, MSD, radius of gyration, tail pooling
//! - [`cpt`]: conservative proportional-time baseline estimator
//! - [`activity`]: activity densities, level sets, persistence, similarity
//! - [`io`]: CSV ingestion, partitioning and output formats

pub mod activity;
pub mod cpt;
pub mod dist;
pub mod error;
pub mod io;
pub mod mcmc;
pub mod metrics;
pub mod sim;
pub mod tail;
pub mod traj;

pub use error::{Error, Result};

/// Natural-log sum of exponentials, stable for widely spread inputs.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

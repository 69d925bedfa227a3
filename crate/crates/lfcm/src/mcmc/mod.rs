//! Collapsed Gibbs sampler over the discrete latent state of the mixture:
//! per-delta jump flags `b`, activity-group labels `c` (constant on maximal
//! non-jump runs), return flags `eta`, and return targets `z`. All continuous
//! mixture parameters are integrated out analytically, so a state's posterior
//! mass is computable in closed form and every update renormalizes exact
//! joint evaluations.

mod joint;
mod state;
mod sweep;

pub use joint::{derive_segments, log_joint, resolve_segment, DeltaCache, Segment};
pub use state::{ActivityRegion, Hyperparams, LatentState, PosteriorScan};
pub use sweep::{
    group_posterior_params as group_posterior_params_dbg,
    absorb_eject, extract_map, init_state, region_ellipses, run_chain, update_activity_groups,
    update_jump_indicators, update_region_assignments, update_return_indicators, BridgeEllipse,
    ChainConfig,
};

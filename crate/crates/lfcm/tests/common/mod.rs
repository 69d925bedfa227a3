//! Shared fixtures for the acceptance suite.

use lfcm::activity::{ActivityDensity, Raster};
use lfcm::mcmc::{
    derive_segments, log_joint, resolve_segment, DeltaCache, Hyperparams, LatentState, Segment,
};
use lfcm::sim::RoutineConfig;
use lfcm::traj::DeltaSeries;
use nalgebra::{Matrix2, Vector2};

/// Window used by the routine-study rasters.
pub const BOUNDS: (f64, f64, f64, f64) = (-0.5, -0.5, 1.5, 1.5);
pub const RASTER_N: usize = 200;

/// Time-share-weighted density of the routine generator's stay activity.
pub fn generative_raster(cfg: &RoutineConfig) -> Raster {
    let total = 520.0 + 480.0 + 390.0;
    let d = ActivityDensity {
        components: vec![
            (
                520.0 / total,
                Vector2::new(cfg.home[0], cfg.home[1]),
                Matrix2::identity() * cfg.sigma_home * cfg.sigma_home,
            ),
            (
                480.0 / total,
                Vector2::new(cfg.work[0], cfg.work[1]),
                Matrix2::identity() * cfg.sigma_work * cfg.sigma_work,
            ),
            (
                390.0 / total,
                Vector2::new(cfg.public[0], cfg.public[1]),
                Matrix2::identity() * cfg.sigma_public * cfg.sigma_public,
            ),
        ],
    };
    d.rasterize(BOUNDS, RASTER_N, RASTER_N)
}

/// Piecewise-constant raster of a fitted CPT grid.
pub fn cpt_raster(grid: &lfcm::cpt::CptGrid) -> Raster {
    let mut r = Raster::zeros(BOUNDS, RASTER_N, RASTER_N);
    for iy in 0..RASTER_N {
        for ix in 0..RASTER_N {
            let c = r.center(ix, iy);
            r.values[iy * RASTER_N + ix] = grid.mass_at(c.x, c.y);
        }
    }
    r.normalize();
    r
}

/// Raw comparison key for latent states: group labels as-is (masked at
/// jumps), anchors resolved to segment starts.
pub fn raw_key(state: &LatentState, segments: &[Segment]) -> String {
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

/// Exhaustive normalized posterior over every latent configuration.
pub fn enumerate_posterior(
    d: &DeltaSeries,
    h: &Hyperparams,
) -> std::collections::HashMap<String, f64> {
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
            let total_c = (n_groups as u64).pow(nonjump.len() as u32);
            for code in 0..total_c {
                let mut c = vec![0u32; n];
                let mut rem = code;
                for &i in &nonjump {
                    c[i] = (rem % n_groups as u64) as u32;
                    rem /= n_groups as u64;
                }
                let segments = derive_segments(&b, &c);
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
                        table.insert(raw_key(&state, &segments), lj);
                    }
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
    let logs: Vec<f64> = table.values().cloned().collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logz = m + logs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for v in table.values_mut() {
        *v = (*v - logz).exp();
    }
    table
}

//! Posterior activity densities, raster level sets, persistence curves,
//! top-k regions, similarity metrics between activity areas, and pairwise
//! trajectory distance matrices.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mcmc::{derive_segments, PosteriorScan};
use crate::traj::DeltaSeries;

/// Rectangular raster with uniform cells, row-major values (density per unit
/// area).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub x0: f64,
    pub y0: f64,
    pub nx: usize,
    pub ny: usize,
    pub cell_w: f64,
    pub cell_h: f64,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn zeros(bounds: (f64, f64, f64, f64), nx: usize, ny: usize) -> Self {
        let (x0, y0, x1, y1) = bounds;
        Raster {
            x0,
            y0,
            nx,
            ny,
            cell_w: (x1 - x0) / nx as f64,
            cell_h: (y1 - y0) / ny as f64,
            values: vec![0.0; nx * ny],
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_w * self.cell_h
    }

    pub fn center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        Vector2::new(
            self.x0 + (ix as f64 + 0.5) * self.cell_w,
            self.y0 + (iy as f64 + 0.5) * self.cell_h,
        )
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn normalize(&mut self) {
        let m = self.total_mass();
        if m > 0.0 {
            for v in &mut self.values {
                *v /= m;
            }
        }
    }

    fn same_shape(&self, other: &Raster) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.x0 - other.x0).abs() < 1e-9
            && (self.y0 - other.y0).abs() < 1e-9
            && (self.cell_w - other.cell_w).abs() < 1e-12
            && (self.cell_h - other.cell_h).abs() < 1e-12
    }
}

/// Boolean cell mask over a raster's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            nx: self.nx,
            ny: self.ny,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }
}

/// Weighted 2-D Gaussian mixture evaluable on a raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityDensity {
    /// (weight, mean, covariance); weights sum to one.
    pub components: Vec<(f64, Vector2<f64>, Matrix2<f64>)>,
}

// 8-point Gauss-Legendre rule on (0, 1).
const GL8: [(f64, f64); 8] = [
    (0.019855071751231856, 0.05061426814518813),
    (0.10166676129318664, 0.11119051722668724),
    (0.2372337950418355, 0.15685332293894364),
    (0.40828267875217505, 0.18134189168918099),
    (0.5917173212478249, 0.18134189168918099),
    (0.7627662049581645, 0.15685332293894364),
    (0.8983332387068134, 0.11119051722668724),
    (0.9801449282487684, 0.05061426814518813),
];

impl ActivityDensity {
    /// Mixture of the scan's return targets N(μ̃_z, Σ_z), weighted by their
    /// time mass.
    pub fn from_regions(scan: &PosteriorScan) -> Result<Self> {
        if scan.regions.is_empty() {
            return Err(Error::NoRegions);
        }
        let total: f64 = scan.regions.iter().map(|r| r.mass).sum();
        Ok(ActivityDensity {
            components: scan
                .regions
                .iter()
                .map(|r| (r.mass / total, r.mu_tilde, r.sigma))
                .collect(),
        })
    }

    /// Time-weighted mixture of Brownian-bridge position distributions over
    /// every within-segment gap: the density of the latent path during
    /// activity periods. Each gap's time average is approximated by an
    /// 8-node Gauss-Legendre rule along the bridge.
    pub fn from_bridges(deltas: &DeltaSeries, scan: &PosteriorScan) -> Result<Self> {
        let segments = derive_segments(&scan.state.b, &scan.state.c);
        if segments.is_empty() {
            return Err(Error::NoRegions);
        }
        let total_time: f64 = segments
            .iter()
            .map(|s| deltas.times[s.end + 1] - deltas.times[s.start])
            .sum();
        let mut components = Vec::new();
        for seg in &segments {
            let (_, disp) = scan.group_params[seg.group as usize];
            for i in seg.start..=seg.end {
                let dt = deltas.dt[i];
                let a = deltas.positions[i];
                let b = deltas.positions[i + 1];
                for (u, w) in GL8 {
                    let mean = a + (b - a) * u;
                    let cov = disp * (dt * u * (1.0 - u));
                    components.push((w * dt / total_time, mean, cov));
                }
            }
        }
        Ok(ActivityDensity { components })
    }

    /// Evaluate the mixture on a raster; each component is accumulated only
    /// within a 6-sigma bounding box. The result is renormalized so the
    /// raster integrates to one over the window.
    pub fn rasterize(&self, bounds: (f64, f64, f64, f64), nx: usize, ny: usize) -> Raster {
        let mut raster = Raster::zeros(bounds, nx, ny);
        for &(w, mean, cov) in &self.components {
            let det = cov.determinant();
            if !(det > 0.0) || w <= 0.0 {
                continue;
            }
            let inv = cov.try_inverse().expect("positive determinant");
            let norm = w / (std::f64::consts::TAU * det.sqrt());
            let sx = cov[(0, 0)].sqrt() * 6.0;
            let sy = cov[(1, 1)].sqrt() * 6.0;
            let ix0 = (((mean.x - sx) - raster.x0) / raster.cell_w).floor().max(0.0) as usize;
            let iy0 = (((mean.y - sy) - raster.y0) / raster.cell_h).floor().max(0.0) as usize;
            let ix1 = ((((mean.x + sx) - raster.x0) / raster.cell_w).ceil() as usize).min(nx);
            let iy1 = ((((mean.y + sy) - raster.y0) / raster.cell_h).ceil() as usize).min(ny);
            for iy in iy0..iy1 {
                for ix in ix0..ix1 {
                    let d = raster.center(ix, iy) - mean;
                    let q = inv[(0, 0)] * d.x * d.x
                        + 2.0 * inv[(0, 1)] * d.x * d.y
                        + inv[(1, 1)] * d.y * d.y;
                    if q < 80.0 {
                        raster.values[iy * nx + ix] += norm * (-0.5 * q).exp();
                    }
                }
            }
        }
        raster.normalize();
        raster
    }
}

/// Smallest-area mask capturing at least 1 − γ of the raster mass, built by
/// thresholding cells from the densest down.
pub fn level_set_gamma(raster: &Raster, gamma: f64) -> Mask {
    let target = 1.0 - gamma;
    let area = raster.cell_area();
    let mut order: Vec<usize> = (0..raster.values.len()).collect();
    order.sort_by(|&a, &b| {
        raster.values[b]
            .partial_cmp(&raster.values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cells = vec![false; raster.values.len()];
    let mut acc = 0.0;
    for idx in order {
        if acc >= target || raster.values[idx] <= 0.0 {
            break;
        }
        cells[idx] = true;
        acc += raster.values[idx] * area;
    }
    Mask {
        nx: raster.nx,
        ny: raster.ny,
        cells,
    }
}

/// 4-connected components of a mask, as masks.
pub fn mask_components(mask: &Mask) -> Vec<Mask> {
    let (nx, ny) = (mask.nx, mask.ny);
    let mut seen = vec![false; nx * ny];
    let mut out = Vec::new();
    for start in 0..nx * ny {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        let mut comp = vec![false; nx * ny];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            comp[idx] = true;
            let (ix, iy) = (idx % nx, idx / nx);
            let mut push = |jx: isize, jy: isize| {
                if jx < 0 || jy < 0 || jx as usize >= nx || jy as usize >= ny {
                    return;
                }
                let j = jy as usize * nx + jx as usize;
                if mask.cells[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            push(ix as isize - 1, iy as isize);
            push(ix as isize + 1, iy as isize);
            push(ix as isize, iy as isize - 1);
            push(ix as isize, iy as isize + 1);
        }
        out.push(Mask { nx, ny, cells: comp });
    }
    out
}

/// Component count of the γ level set for each γ in the grid.
pub fn persistence_curve(raster: &Raster, gammas: &[f64]) -> Vec<(f64, usize)> {
    gammas
        .iter()
        .map(|&g| (g, mask_components(&level_set_gamma(raster, g)).len()))
        .collect()
}

/// The k connected components of the (1 − γ)-mass level set holding the most
/// mass, descending. The flag reports whether fewer than k components exist.
pub fn top_k_regions(raster: &Raster, gamma: f64, k: usize) -> (Vec<Mask>, bool) {
    let mask = level_set_gamma(raster, gamma);
    let mut comps: Vec<(f64, Mask)> = mask_components(&mask)
        .into_iter()
        .map(|m| {
            let mass: f64 = m
                .cells
                .iter()
                .zip(&raster.values)
                .filter(|(&c, _)| c)
                .map(|(_, &v)| v)
                .sum::<f64>()
                * raster.cell_area();
            (mass, m)
        })
        .collect();
    comps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let fewer = comps.len() < k;
    comps.truncate(k);
    (comps.into_iter().map(|c| c.1).collect(), fewer)
}

/// Mass-weighted centroid of a mask under a raster.
pub fn mask_centroid(raster: &Raster, mask: &Mask) -> Vector2<f64> {
    let mut m = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for iy in 0..raster.ny {
        for ix in 0..raster.nx {
            let idx = iy * raster.nx + ix;
            if mask.cells[idx] {
                let w = raster.values[idx];
                let c = raster.center(ix, iy);
                m += w;
                cx += w * c.x;
                cy += w * c.y;
            }
        }
    }
    Vector2::new(cx / m, cy / m)
}

fn check_normalized(r: &Raster) -> Result<()> {
    if (r.total_mass() - 1.0).abs() > 1e-3 {
        return Err(Error::UnnormalizedInput);
    }
    Ok(())
}

/// Kullback–Leibler divergence Σ p ln(p/q) · area between two normalized
/// rasters on the same grid, with q floored at `eta_floor` per cell before
/// renormalization.
pub fn kl_divergence(p: &Raster, q: &Raster, eta_floor: f64) -> Result<f64> {
    if !p.same_shape(q) {
        return Err(Error::GridMismatch);
    }
    check_normalized(p)?;
    check_normalized(q)?;
    let area = p.cell_area();
    let qm: f64 = q.values.iter().map(|&v| v.max(eta_floor)).sum::<f64>() * area;
    let mut kl = 0.0;
    for (&pv, &qv) in p.values.iter().zip(&q.values) {
        if pv > 0.0 {
            kl += pv * (pv / (qv.max(eta_floor) / qm)).ln();
        }
    }
    Ok(kl * area)
}

pub const DEFAULT_ETA_FLOOR: f64 = 1e-12;

/// Jensen–Shannon divergence ½KL(p‖m) + ½KL(q‖m) with m the midpoint
/// density, bounded by ln 2.
pub fn js_divergence(p: &Raster, q: &Raster) -> Result<f64> {
    if !p.same_shape(q) {
        return Err(Error::GridMismatch);
    }
    check_normalized(p)?;
    check_normalized(q)?;
    let mut m = p.clone();
    for (mv, &qv) in m.values.iter_mut().zip(&q.values) {
        *mv = 0.5 * (*mv + qv);
    }
    Ok(0.5 * kl_divergence(p, &m, DEFAULT_ETA_FLOOR)?
        + 0.5 * kl_divergence(q, &m, DEFAULT_ETA_FLOOR)?)
}

fn directed_hausdorff(a: &Mask, b: &Mask, cell_w: f64, cell_h: f64) -> f64 {
    let centers = |m: &Mask| -> Vec<Vector2<f64>> {
        let mut v = Vec::new();
        for iy in 0..m.ny {
            for ix in 0..m.nx {
                if m.cells[iy * m.nx + ix] {
                    v.push(Vector2::new(
                        (ix as f64 + 0.5) * cell_w,
                        (iy as f64 + 0.5) * cell_h,
                    ));
                }
            }
        }
        v
    };
    let pa = centers(a);
    let pb = centers(b);
    let mut worst = 0.0_f64;
    for x in &pa {
        let mut best = f64::INFINITY;
        for y in &pb {
            best = best.min((x - y).norm_squared());
            if best == 0.0 {
                break;
            }
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

/// Symmetric Hausdorff distance between two cell masks on a common grid,
/// measured between cell centers. O(|A|·|B|).
pub fn hausdorff(a: &Mask, b: &Mask, cell_w: f64, cell_h: f64) -> Result<f64> {
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::EmptySet);
    }
    Ok(directed_hausdorff(a, b, cell_w, cell_h).max(directed_hausdorff(b, a, cell_w, cell_h)))
}

/// Jaccard distance 1 − |A∩B|/|A∪B|; two empty masks are at distance 0.
pub fn jaccard_distance(a: &Mask, b: &Mask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection_count(b) as f64 / union as f64
}

/// Overlap distance 1 − |A∩B|/|B|: the share of the reference B missed by A.
pub fn overlap_distance(a: &Mask, b: &Mask) -> Result<f64> {
    let nb = b.count();
    if nb == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(1.0 - a.intersection_count(b) as f64 / nb as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaMetric {
    Jaccard,
    Overlap,
    Hausdorff,
}

/// Similarity of estimated activity areas against a reference estimate:
/// for each (w, masks) pair the top-k masks are united and compared to the
/// united reference masks.
pub fn stability_series(
    estimates: &[(usize, Vec<Mask>)],
    reference: &[Mask],
    metric: AreaMetric,
    cell_w: f64,
    cell_h: f64,
) -> Result<Vec<(usize, f64)>> {
    let union_all = |masks: &[Mask]| -> Option<Mask> {
        let mut it = masks.iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, m| acc.union(m)))
    };
    let reference = union_all(reference).ok_or(Error::EmptyReference)?;
    let mut out = Vec::new();
    for (w, masks) in estimates {
        let m = union_all(masks).ok_or(Error::EmptySet)?;
        let v = match metric {
            AreaMetric::Jaccard => jaccard_distance(&m, &reference),
            AreaMetric::Overlap => overlap_distance(&m, &reference)?,
            AreaMetric::Hausdorff => hausdorff(&m, &reference, cell_w, cell_h)?,
        };
        out.push((*w, v));
    }
    Ok(out)
}

/// Device-by-device mean pairwise trajectory distance: entry (i, j) averages
/// over aligned scan indices the time-averaged pointwise Euclidean distance
/// between the devices' interpolated paths on the common grid.
pub fn distance_matrix(paths: &[Vec<Vec<Vector2<f64>>>]) -> Result<Vec<Vec<f64>>> {
    let n_dev = paths.len();
    if n_dev == 0 {
        return Err(Error::EmptyInput);
    }
    let n_scans = paths[0].len();
    let grid_len = paths
        .first()
        .and_then(|d| d.first())
        .map(|p| p.len())
        .ok_or(Error::EmptyInput)?;
    for d in paths {
        if d.len() != n_scans || d.iter().any(|p| p.len() != grid_len) {
            return Err(Error::GridMismatch);
        }
    }
    let mut out = vec![vec![0.0; n_dev]; n_dev];
    for i in 0..n_dev {
        for j in (i + 1)..n_dev {
            let mut acc = 0.0;
            for s in 0..n_scans {
                let mut d = 0.0;
                for (a, b) in paths[i][s].iter().zip(&paths[j][s]) {
                    d += (a - b).norm();
                }
                acc += d / grid_len as f64;
            }
            let v = acc / n_scans as f64;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_raster(
        mean: (f64, f64),
        var: f64,
        bounds: (f64, f64, f64, f64),
        n: usize,
    ) -> Raster {
        let d = ActivityDensity {
            components: vec![(
                1.0,
                Vector2::new(mean.0, mean.1),
                Matrix2::identity() * var,
            )],
        };
        d.rasterize(bounds, n, n)
    }

    #[test]
    fn rasterized_gaussian_integrates_to_one() {
        let r = gaussian_raster((0.0, 0.0), 0.04, (-2.0, -2.0, 2.0, 2.0), 200);
        assert_relative_eq!(r.total_mass(), 1.0, epsilon = 1e-9);
        // un-normalized sum is also close to 1 since the support fits easily
        let d = ActivityDensity {
            components: vec![(1.0, Vector2::zeros(), Matrix2::identity() * 0.04)],
        };
        let mut raw = Raster::zeros((-2.0, -2.0, 2.0, 2.0), 200, 200);
        for &(w, mean, cov) in &d.components {
            let inv = cov.try_inverse().unwrap();
            let norm = w / (std::f64::consts::TAU * cov.determinant().sqrt());
            for iy in 0..200 {
                for ix in 0..200 {
                    let dv = raw.center(ix, iy) - mean;
                    let q = (dv.transpose() * inv * dv)[(0, 0)];
                    raw.values[iy * 200 + ix] = norm * (-0.5 * q).exp();
                }
            }
        }
        assert_relative_eq!(raw.total_mass(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn level_set_of_gaussian_matches_analytic_radius() {
        // the 95%-mass region of an isotropic Gaussian is a disk of radius
        // σ√(χ²₂(0.95))
        let var = 0.05;
        let r = gaussian_raster((0.0, 0.0), var, (-2.0, -2.0, 2.0, 2.0), 256);
        let mask = level_set_gamma(&r, 0.05);
        let radius = (var * (-2.0 * 0.05_f64.ln())).sqrt();
        let analytic_area = std::f64::consts::PI * radius * radius;
        let mask_area = mask.count() as f64 * r.cell_area();
        assert!(
            (mask_area / analytic_area - 1.0).abs() < 0.05,
            "area {mask_area} vs {analytic_area}"
        );
        // near-empty at γ → 1
        let tiny = level_set_gamma(&r, 0.999);
        assert!(tiny.count() <= 4);
    }

    #[test]
    fn level_sets_nest() {
        let r = gaussian_raster((0.0, 0.0), 0.05, (-2.0, -2.0, 2.0, 2.0), 128);
        let mut prev = level_set_gamma(&r, 0.9);
        for &g in &[0.7, 0.5, 0.3, 0.1, 0.02] {
            let m = level_set_gamma(&r, g);
            for (a, b) in prev.cells.iter().zip(&m.cells) {
                assert!(!a || *b, "smaller gamma must contain larger gamma set");
            }
            prev = m;
        }
    }

    #[test]
    fn persistence_single_gaussian_is_one_component() {
        let r = gaussian_raster((0.0, 0.0), 0.05, (-2.0, -2.0, 2.0, 2.0), 128);
        let gammas: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        for (_, count) in persistence_curve(&r, &gammas) {
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn components_match_flood_fill_oracle() {
        // three blobs, one mask: count components against a simple
        // independent union-find over the same cells
        let d = ActivityDensity {
            components: vec![
                (0.5, Vector2::new(-1.0, -1.0), Matrix2::identity() * 0.02),
                (0.3, Vector2::new(1.0, 1.0), Matrix2::identity() * 0.02),
                (0.2, Vector2::new(-1.0, 1.0), Matrix2::identity() * 0.02),
            ],
        };
        let r = d.rasterize((-2.0, -2.0, 2.0, 2.0), 128, 128);
        let mask = level_set_gamma(&r, 0.2);
        let comps = mask_components(&mask);
        // union-find oracle
        let mut parent: Vec<usize> = (0..mask.cells.len()).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for iy in 0..mask.ny {
            for ix in 0..mask.nx {
                let i = iy * mask.nx + ix;
                if !mask.cells[i] {
                    continue;
                }
                if ix + 1 < mask.nx && mask.cells[i + 1] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, i + 1));
                    parent[a] = b;
                }
                if iy + 1 < mask.ny && mask.cells[i + mask.nx] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, i + mask.nx));
                    parent[a] = b;
                }
            }
        }
        let mut roots = std::collections::HashSet::new();
        for i in 0..mask.cells.len() {
            if mask.cells[i] {
                let r = find(&mut parent, i);
                roots.insert(r);
            }
        }
        assert_eq!(comps.len(), roots.len());
        assert_eq!(comps.len(), 3);
    }

    #[test]
    fn top_k_orders_by_mass() {
        let d = ActivityDensity {
            components: vec![
                (0.5, Vector2::new(-1.0, -1.0), Matrix2::identity() * 0.02),
                (0.3, Vector2::new(1.0, 1.0), Matrix2::identity() * 0.02),
                (0.2, Vector2::new(-1.0, 1.0), Matrix2::identity() * 0.02),
            ],
        };
        let r = d.rasterize((-2.0, -2.0, 2.0, 2.0), 128, 128);
        let (masks, fewer) = top_k_regions(&r, 0.2, 3);
        assert!(!fewer);
        assert_eq!(masks.len(), 3);
        let c0 = mask_centroid(&r, &masks[0]);
        let c1 = mask_centroid(&r, &masks[1]);
        let c2 = mask_centroid(&r, &masks[2]);
        assert!((c0 - Vector2::new(-1.0, -1.0)).norm() < 0.1);
        assert!((c1 - Vector2::new(1.0, 1.0)).norm() < 0.1);
        assert!((c2 - Vector2::new(-1.0, 1.0)).norm() < 0.1);
        let (_, fewer1) = top_k_regions(&r, 0.2, 5);
        assert!(fewer1);
    }

    #[test]
    fn kl_zero_for_identical_and_gaussian_shift_formula() {
        let p = gaussian_raster((0.0, 0.0), 0.08, (-3.0, -3.0, 3.0, 3.0), 256);
        assert_relative_eq!(
            kl_divergence(&p, &p, DEFAULT_ETA_FLOOR).unwrap(),
            0.0,
            epsilon = 1e-10
        );
        // unit-variance Gaussians shifted by δ: KL = δ²/2
        let a = gaussian_raster((0.0, 0.0), 1.0, (-8.0, -8.0, 8.0, 8.0), 256);
        let b = gaussian_raster((0.4, 0.0), 1.0, (-8.0, -8.0, 8.0, 8.0), 256);
        let kl = kl_divergence(&a, &b, DEFAULT_ETA_FLOOR).unwrap();
        assert!((kl - 0.08).abs() < 0.002, "kl = {kl}");
        // nonnegativity on a random-ish pair
        let c = gaussian_raster((0.5, -0.6), 0.5, (-8.0, -8.0, 8.0, 8.0), 256);
        assert!(kl_divergence(&a, &c, DEFAULT_ETA_FLOOR).unwrap() >= 0.0);
    }

    #[test]
    fn js_properties() {
        let p = gaussian_raster((0.0, 0.0), 0.05, (-3.0, -3.0, 3.0, 3.0), 128);
        let q = gaussian_raster((1.5, 1.5), 0.05, (-3.0, -3.0, 3.0, 3.0), 128);
        assert_relative_eq!(js_divergence(&p, &p).unwrap(), 0.0, epsilon = 1e-10);
        let js = js_divergence(&p, &q).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(js <= ln2 + 1e-9);
        // effectively disjoint supports approach ln 2
        assert!((js - ln2).abs() < 1e-3, "js = {js}");
        // symmetry
        assert_relative_eq!(
            js,
            js_divergence(&q, &p).unwrap(),
            epsilon = 1e-12
        );
        // shape mismatch is an error
        let other = gaussian_raster((0.0, 0.0), 0.05, (-3.0, -3.0, 3.0, 3.0), 64);
        assert!(matches!(js_divergence(&p, &other), Err(Error::GridMismatch)));
    }

    fn mask_from(cells: &[(usize, usize)], nx: usize, ny: usize) -> Mask {
        let mut m = Mask {
            nx,
            ny,
            cells: vec![false; nx * ny],
        };
        for &(x, y) in cells {
            m.cells[y * nx + x] = true;
        }
        m
    }

    #[test]
    fn hausdorff_cases() {
        let a = mask_from(&[(0, 0), (1, 0)], 8, 8);
        assert_relative_eq!(hausdorff(&a, &a, 1.0, 1.0).unwrap(), 0.0);
        let b = mask_from(&[(4, 3)], 8, 8);
        let c = mask_from(&[(0, 0)], 8, 8);
        assert_relative_eq!(hausdorff(&b, &c, 1.0, 1.0).unwrap(), 5.0); // 3-4-5
        // brute-force cross-check on random masks
        let d = mask_from(&[(0, 0), (2, 5), (7, 7), (3, 3)], 8, 8);
        let e = mask_from(&[(1, 1), (6, 2), (4, 7)], 8, 8);
        let got = hausdorff(&d, &e, 0.5, 0.5).unwrap();
        let pts = |m: &Mask| -> Vec<(f64, f64)> {
            (0..64)
                .filter(|&i| m.cells[i])
                .map(|i| ((i % 8) as f64 * 0.5 + 0.25, (i / 8) as f64 * 0.5 + 0.25))
                .collect()
        };
        let (pa, pb) = (pts(&d), pts(&e));
        let dir = |xs: &[(f64, f64)], ys: &[(f64, f64)]| -> f64 {
            xs.iter()
                .map(|x| {
                    ys.iter()
                        .map(|y| ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        assert_relative_eq!(got, dir(&pa, &pb).max(dir(&pb, &pa)), epsilon = 1e-12);
        assert!(hausdorff(&mask_from(&[], 8, 8), &a, 1.0, 1.0).is_err());
    }

    #[test]
    fn jaccard_and_overlap_identities() {
        let a = mask_from(&[(0, 0), (1, 0), (0, 1), (1, 1)], 8, 8);
        let disjoint = mask_from(&[(5, 5)], 8, 8);
        assert_relative_eq!(jaccard_distance(&a, &a), 0.0);
        assert_relative_eq!(jaccard_distance(&a, &disjoint), 1.0);
        // half-overlap squares: |A|=|B|=4, |A∩B|=2 → 1 − 2/6
        let b = mask_from(&[(1, 0), (1, 1), (2, 0), (2, 1)], 8, 8);
        let half = mask_from(&[(0, 0), (0, 1), (1, 0), (1, 1)], 8, 8);
        assert_relative_eq!(jaccard_distance(&half, &b), 1.0 - 2.0 / 6.0);
        assert_relative_eq!(overlap_distance(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(overlap_distance(&a, &disjoint).unwrap(), 1.0);
        // B ⊆ A covers fully; asymmetry on nested masks
        let sub = mask_from(&[(0, 0)], 8, 8);
        assert_relative_eq!(overlap_distance(&a, &sub).unwrap(), 0.0);
        assert_relative_eq!(overlap_distance(&sub, &a).unwrap(), 0.75);
        let empty = mask_from(&[], 8, 8);
        assert_relative_eq!(jaccard_distance(&empty, &empty), 0.0);
        assert!(overlap_distance(&a, &empty).is_err());
    }

    #[test]
    fn stability_series_reference_against_itself() {
        let a = mask_from(&[(0, 0), (1, 0)], 8, 8);
        let b = mask_from(&[(5, 5)], 8, 8);
        let refs = vec![a.clone(), b.clone()];
        let series = stability_series(
            &[(12, refs.clone())],
            &refs,
            AreaMetric::Overlap,
            1.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(series[0].1, 0.0);
    }

    #[test]
    fn distance_matrix_cases() {
        let grid = 5;
        let path_at = |off: f64| -> Vec<Vector2<f64>> {
            (0..grid).map(|k| Vector2::new(k as f64 + off, 0.0)).collect()
        };
        // identical trajectories → 0; constant offset d → d
        let paths = vec![
            vec![path_at(0.0), path_at(0.0)],
            vec![path_at(0.0), path_at(0.0)],
            vec![path_at(2.0), path_at(2.0)],
        ];
        let m = distance_matrix(&paths).unwrap();
        assert_relative_eq!(m[0][1], 0.0);
        assert_relative_eq!(m[0][2], 2.0);
        // symmetry + zero diagonal
        for i in 0..3 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                assert_relative_eq!(m[i][j], m[j][i], epsilon = 1e-12);
            }
        }
        // brute-force triple loop on 3 devices × 2 scans
        let mut brute = 0.0;
        for s in 0..2 {
            let mut d = 0.0;
            for k in 0..grid {
                d += (paths[0][s][k] - paths[2][s][k]).norm();
            }
            brute += d / grid as f64;
        }
        brute /= 2.0;
        assert_relative_eq!(m[0][2], brute, epsilon = 1e-12);
        // mismatched grids error
        let bad = vec![vec![path_at(0.0)], vec![vec![Vector2::zeros(); 3]]];
        assert!(matches!(distance_matrix(&bad), Err(Error::GridMismatch)));
    }
}

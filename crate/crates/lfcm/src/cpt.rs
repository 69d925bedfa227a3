//! Conservative proportional-time (CPT) baseline: grid-cell occupancy
//! probabilities from same-cell consecutive dwell times, density ranking,
//! level sets, and the matching simulator.

use std::collections::HashMap;

use nalgebra::Vector2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::traj::{GpsRecord, Trajectory};

/// Rectangular window with a fixed cell size; cells are indexed from the
/// lower-left corner and points on boundaries bin by floor index.
#[derive(Debug, Clone)]
pub struct CptGrid {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub cell_size: f64,
    /// Occupancy probability per occupied cell.
    pub pi: HashMap<(i64, i64), f64>,
}

impl CptGrid {
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.x0) / self.cell_size).floor() as i64,
            ((y - self.y0) / self.cell_size).floor() as i64,
        )
    }

    /// Piecewise-constant probability mass of the cell containing (x, y).
    pub fn mass_at(&self, x: f64, y: f64) -> f64 {
        *self.pi.get(&self.cell_of(x, y)).unwrap_or(&0.0)
    }

    pub fn cell_center(&self, cell: (i64, i64)) -> Vector2<f64> {
        Vector2::new(
            self.x0 + (cell.0 as f64 + 0.5) * self.cell_size,
            self.y0 + (cell.1 as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Fit the CPT estimator: π_a ∝ Σ Δt_j over consecutive pairs that stay in
/// cell a; pairs that cross cells are excluded.
pub fn cpt_fit(traj: &Trajectory, cell_size: f64, bounds: (f64, f64, f64, f64)) -> Result<CptGrid> {
    if traj.len() < 2 {
        return Err(Error::TooShort {
            got: traj.len(),
            need: 2,
        });
    }
    if !(cell_size > 0.0) {
        return Err(Error::InvalidParam("cell_size must be > 0".into()));
    }
    let (x0, y0, x1, y1) = bounds;
    let mut grid = CptGrid {
        x0,
        y0,
        x1,
        y1,
        cell_size,
        pi: HashMap::new(),
    };
    let times = traj.times();
    let pos = traj.positions();
    let mut total = 0.0;
    for j in 1..pos.len() {
        let a = grid.cell_of(pos[j - 1].x, pos[j - 1].y);
        let b = grid.cell_of(pos[j].x, pos[j].y);
        if a == b {
            let dt = times[j] - times[j - 1];
            *grid.pi.entry(a).or_insert(0.0) += dt;
            total += dt;
        }
    }
    if total <= 0.0 {
        return Err(Error::NoSameCellPairs);
    }
    for v in grid.pi.values_mut() {
        *v /= total;
    }
    Ok(grid)
}

/// Data bounding box padded by `pad` fraction on each side.
pub fn padded_bounds(traj: &Trajectory, pad: f64) -> (f64, f64, f64, f64) {
    let pos = traj.positions();
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for p in &pos {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (dx, dy) = ((x1 - x0).max(1e-9) * pad, (y1 - y0).max(1e-9) * pad);
    (x0 - dx, y0 - dy, x1 + dx, y1 + dy)
}

/// Density ranking of a query point: the fraction of observations whose
/// estimated density is not above the query's.
pub fn density_ranking(grid: &CptGrid, points: &[Vector2<f64>], query: Vector2<f64>) -> f64 {
    let pq = grid.mass_at(query.x, query.y);
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let count = points
        .iter()
        .filter(|p| grid.mass_at(p.x, p.y) <= pq)
        .count();
    count as f64 / n as f64
}

/// Cells of the level set Â_γ = {occupied cells with ranking ≥ 1 − γ}.
pub fn level_set(grid: &CptGrid, points: &[Vector2<f64>], gamma: f64) -> Vec<(i64, i64)> {
    let mut cells: Vec<(i64, i64)> = grid
        .pi
        .iter()
        .filter(|(cell, _)| {
            let c = grid.cell_center(**cell);
            // ranking is constant within a cell; evaluate at the center
            density_ranking(grid, points, c) >= 1.0 - gamma
        })
        .map(|(cell, _)| *cell)
        .collect();
    cells.sort();
    cells
}

/// Number of 4-connected components of a set of cells.
pub fn component_count(cells: &[(i64, i64)]) -> usize {
    components(cells).len()
}

/// 4-connected components of a set of cells.
pub fn components(cells: &[(i64, i64)]) -> Vec<Vec<(i64, i64)>> {
    let set: std::collections::HashSet<(i64, i64)> = cells.iter().cloned().collect();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &start in cells {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(c) = stack.pop() {
            comp.push(c);
            for d in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let nb = (c.0 + d.0, c.1 + d.1);
                if set.contains(&nb) && seen.insert(nb) {
                    stack.push(nb);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out.sort();
    out
}

/// Simulate a trajectory from the fitted grid: per timestamp, draw a cell
/// with probability π_a and a uniform position inside it. Cells are drawn
/// independently per timestamp.
pub fn cpt_simulate<R: Rng + ?Sized>(
    grid: &CptGrid,
    timestamps: &[f64],
    rng: &mut R,
) -> Trajectory {
    let mut cells: Vec<(&(i64, i64), &f64)> = grid.pi.iter().collect();
    cells.sort_by(|a, b| a.0.cmp(b.0));
    let mut records = Vec::with_capacity(timestamps.len());
    for &t in timestamps {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut chosen = *cells.last().map(|c| c.0).unwrap_or(&(0, 0));
        for (cell, p) in &cells {
            acc += **p;
            if u <= acc {
                chosen = **cell;
                break;
            }
        }
        let cx = grid.x0 + (chosen.0 as f64 + rng.gen_range(0.0..1.0)) * grid.cell_size;
        let cy = grid.y0 + (chosen.1 as f64 + rng.gen_range(0.0..1.0)) * grid.cell_size;
        records.push(GpsRecord::new("cpt-sim", t, [cx, cy]));
    }
    Trajectory {
        device_id: "cpt-sim".into(),
        records,
    }
}

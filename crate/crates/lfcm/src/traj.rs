//! Trajectories and the first-difference observation series.
//!
//! A [`Trajectory`] is a strictly time-ordered sequence of planar locations
//! for one device and observation window. The sampler never sees locations
//! directly; it consumes the [`DeltaSeries`] of first differences, which
//! removes most temporal dependence between observations.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw location record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsRecord {
    pub device_id: String,
    /// Seconds since epoch for real data; model time units for synthetic data.
    pub t: f64,
    /// Planar coordinates in model units (kilometers after projection).
    pub x: [f64; 2],
    pub accuracy: Option<f64>,
    pub speed: Option<f64>,
}

impl GpsRecord {
    pub fn new(device_id: impl Into<String>, t: f64, x: [f64; 2]) -> Self {
        GpsRecord {
            device_id: device_id.into(),
            t,
            x,
            accuracy: None,
            speed: None,
        }
    }
}

/// Time-ordered locations for one device/window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub device_id: String,
    pub records: Vec<GpsRecord>,
}

impl Trajectory {
    /// Build from records, sorting by time and dropping all but the first
    /// record at a duplicated timestamp. Returns the trajectory together with
    /// the number of dropped duplicates. Non-finite rows are rejected.
    pub fn from_records(device_id: impl Into<String>, mut records: Vec<GpsRecord>) -> Result<(Self, usize)> {
        for (i, r) in records.iter().enumerate() {
            if !r.t.is_finite() || !r.x[0].is_finite() || !r.x[1].is_finite() {
                return Err(Error::SchemaError {
                    line: i,
                    msg: "non-finite timestamp or coordinate".into(),
                });
            }
        }
        records.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        let before = records.len();
        records.dedup_by(|b, a| b.t == a.t); // keeps the first of each run
        let dropped = before - records.len();
        Ok((
            Trajectory {
                device_id: device_id.into(),
                records,
            },
            dropped,
        ))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.records.iter().map(|r| Vector2::new(r.x[0], r.x[1])).collect()
    }
}

/// First differences of a trajectory: the sampler's observation units.
///
/// For i = 0..n-1 (n = records − 1): `dx[i] = x(t_{i+1}) − x(t_i)`,
/// `dt[i] = t_{i+1} − t_i > 0`, `dr[i] = ‖dx[i]‖`, `dtheta[i] = atan2 mod 2π`.
/// The original times and positions are retained because activity regions are
/// anchored at segment start locations.
#[derive(Debug, Clone)]
pub struct DeltaSeries {
    pub times: Vec<f64>,
    pub positions: Vec<Vector2<f64>>,
    pub dx: Vec<Vector2<f64>>,
    pub dt: Vec<f64>,
    pub dr: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl DeltaSeries {
    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    /// Normalized jump length Δr/Δt of delta `i`.
    pub fn ratio(&self, i: usize) -> f64 {
        self.dr[i] / self.dt[i]
    }
}

/// Build the first-difference series. Timestamps must be strictly increasing
/// and the trajectory must hold at least two records.
pub fn build_delta_series(traj: &Trajectory) -> Result<DeltaSeries> {
    if traj.len() < 2 {
        return Err(Error::TooShort {
            got: traj.len(),
            need: 2,
        });
    }
    let times = traj.times();
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            return Err(Error::NonMonotoneTime(i));
        }
    }
    let positions = traj.positions();
    let n = positions.len() - 1;
    let mut dx = Vec::with_capacity(n);
    let mut dt = Vec::with_capacity(n);
    let mut dr = Vec::with_capacity(n);
    let mut dtheta = Vec::with_capacity(n);
    for i in 0..n {
        let d = positions[i + 1] - positions[i];
        let r = d.norm();
        // Angle of the zero vector is defined as 0; such a delta can never be
        // classified as a jump since Δr/Δt = 0 < ε.
        let theta = if r == 0.0 {
            0.0
        } else {
            let a = d.y.atan2(d.x);
            if a < 0.0 {
                a + std::f64::consts::TAU
            } else {
                a
            }
        };
        dx.push(d);
        dt.push(times[i + 1] - times[i]);
        dr.push(r);
        dtheta.push(theta);
    }
    Ok(DeltaSeries {
        times,
        positions,
        dx,
        dt,
        dr,
        dtheta,
    })
}

/// Invertible record of the local planar projection applied to a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRecord {
    pub lon0: f64,
    pub lat0: f64,
    /// km per degree longitude at the reference latitude.
    pub kx: f64,
    /// km per degree latitude.
    pub ky: f64,
}

const KM_PER_DEG_LON_EQUATOR: f64 = 111.320;
const KM_PER_DEG_LAT: f64 = 110.574;

impl AffineRecord {
    pub fn forward(&self, lon: f64, lat: f64) -> [f64; 2] {
        [(lon - self.lon0) * self.kx, (lat - self.lat0) * self.ky]
    }

    pub fn inverse(&self, x: f64, y: f64) -> [f64; 2] {
        [self.lon0 + x / self.kx, self.lat0 + y / self.ky]
    }
}

/// Project lon/lat coordinates to kilometers in a local equirectangular frame
/// centered at the trajectory centroid. Returns the projected trajectory and
/// the affine record sufficient to invert the projection.
pub fn normalize_coordinates(traj: &Trajectory) -> (Trajectory, AffineRecord) {
    let n = traj.len().max(1) as f64;
    let lon0 = traj.records.iter().map(|r| r.x[0]).sum::<f64>() / n;
    let lat0 = traj.records.iter().map(|r| r.x[1]).sum::<f64>() / n;
    let affine = AffineRecord {
        lon0,
        lat0,
        kx: KM_PER_DEG_LON_EQUATOR * lat0.to_radians().cos(),
        ky: KM_PER_DEG_LAT,
    };
    let records = traj
        .records
        .iter()
        .map(|r| GpsRecord {
            x: affine.forward(r.x[0], r.x[1]),
            ..r.clone()
        })
        .collect();
    (
        Trajectory {
            device_id: traj.device_id.clone(),
            records,
        },
        affine,
    )
}

//! Dataset ingestion, (device, week) partitioning, deterministic parallel
//! fan-out, and the CSV output formats shared by the CLI.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorScan;
use crate::traj::{GpsRecord, Trajectory};

/// Outcome counts of an ingestion pass; kept + rejected + deduped equals the
/// number of data rows seen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub kept: usize,
    pub deduped: usize,
    pub rejected: Vec<(usize, String)>,
}

/// Read trajectories from CSV with header
/// `device_id,timestamp,lon,lat,accuracy,speed`; accuracy and speed may be
/// empty. Rows with malformed fields are rejected with their line number;
/// rows are sorted per device and duplicate timestamps deduplicated.
pub fn ingest<R: Read>(reader: R) -> Result<(BTreeMap<String, Trajectory>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut rows: BTreeMap<String, Vec<GpsRecord>> = BTreeMap::new();
    let mut report = IngestReport::default();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2; // header is line 1
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push((line, e.to_string()));
                continue;
            }
        };
        if rec.len() < 4 {
            report.rejected.push((line, "fewer than 4 fields".into()));
            continue;
        }
        let device = rec[0].trim().to_string();
        if device.is_empty() {
            report.rejected.push((line, "empty device_id".into()));
            continue;
        }
        let parse = |s: &str| -> std::result::Result<f64, String> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| e.to_string())
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err("non-finite value".into())
                    }
                })
        };
        let t = match parse(&rec[1]) {
            Ok(v) => v,
            Err(e) => {
                report.rejected.push((line, format!("timestamp: {e}")));
                continue;
            }
        };
        let lon = match parse(&rec[2]) {
            Ok(v) => v,
            Err(e) => {
                report.rejected.push((line, format!("lon: {e}")));
                continue;
            }
        };
        let lat = match parse(&rec[3]) {
            Ok(v) => v,
            Err(e) => {
                report.rejected.push((line, format!("lat: {e}")));
                continue;
            }
        };
        let opt = |i: usize| -> Option<f64> {
            rec.get(i)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<f64>().ok())
        };
        rows.entry(device.clone()).or_default().push(GpsRecord {
            device_id: device,
            t,
            x: [lon, lat],
            accuracy: opt(4),
            speed: opt(5),
        });
    }
    let mut out = BTreeMap::new();
    for (device, records) in rows {
        if records.is_empty() {
            return Err(Error::EmptyDevice(device));
        }
        let (traj, deduped) = Trajectory::from_records(device.clone(), records)?;
        report.kept += traj.len();
        report.deduped += deduped;
        out.insert(device, traj);
    }
    Ok((out, report))
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "device_id,timestamp,lon,lat,accuracy,speed")?;
    for r in &traj.records {
        let acc = r.accuracy.map(|v| v.to_string()).unwrap_or_default();
        let spd = r.speed.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.device_id, r.t, r.x[0], r.x[1], acc, spd
        )?;
    }
    Ok(())
}

/// ISO week key of an epoch-second timestamp.
pub fn iso_week_of(epoch_seconds: f64) -> (i32, u32) {
    let dt = DateTime::from_timestamp(epoch_seconds.floor() as i64, 0)
        .unwrap_or_else(|| DateTime::from_timestamp(0, 0).unwrap());
    let w = dt.iso_week();
    (w.year(), w.week())
}

/// Split a trajectory at ISO week boundaries. Partitions with fewer than
/// `min_points` records are dropped; the second return value counts them.
pub fn partition_weeks(
    traj: &Trajectory,
    min_points: usize,
) -> (Vec<((i32, u32), Trajectory)>, usize) {
    let mut parts: BTreeMap<(i32, u32), Vec<GpsRecord>> = BTreeMap::new();
    for r in &traj.records {
        parts.entry(iso_week_of(r.t)).or_default().push(r.clone());
    }
    let mut dropped = 0;
    let mut out = Vec::new();
    for (week, records) in parts {
        if records.len() < min_points {
            dropped += 1;
            continue;
        }
        out.push((
            week,
            Trajectory {
                device_id: traj.device_id.clone(),
                records,
            },
        ));
    }
    (out, dropped)
}

/// FNV-1a over the device id and week key, folded into the base seed, so
/// every partition owns a stable independent stream.
pub fn derive_seed(base: u64, device: &str, week: (i32, u32)) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(device.as_bytes());
    eat(&week.0.to_le_bytes());
    eat(&week.1.to_le_bytes());
    base ^ h
}

/// Run a pure job over partitions on a worker pool. Results come back in
/// ascending key order regardless of the parallelism degree; the first job
/// error aborts with its partition key attached.
pub fn fan_out<K, T, O, F>(partitions: Vec<(K, T)>, jobs: usize, job: F) -> Result<Vec<(K, O)>>
where
    K: Ord + Clone + Send + Sync + std::fmt::Debug,
    T: Sync,
    O: Send,
    F: Fn(&K, &T) -> Result<O> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    let mut results: Vec<(K, Result<O>)> = pool.install(|| {
        partitions
            .par_iter()
            .map(|(k, t)| (k.clone(), job(k, t)))
            .collect()
    });
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = Vec::with_capacity(results.len());
    for (k, r) in results {
        match r {
            Ok(o) => out.push((k, o)),
            Err(e) => {
                return Err(Error::InvalidParam(format!(
                    "partition {k:?} failed: {e}"
                )))
            }
        }
    }
    Ok(out)
}

fn rle<T: PartialEq + std::fmt::Display>(vals: impl Iterator<Item = T>) -> String {
    let mut out = String::new();
    let mut cur: Option<(T, usize)> = None;
    for v in vals {
        match &mut cur {
            Some((c, n)) if *c == v => *n += 1,
            _ => {
                if let Some((c, n)) = cur.take() {
                    out.push_str(&format!("{c}*{n};"));
                }
                cur = Some((v, 1));
            }
        }
    }
    if let Some((c, n)) = cur {
        out.push_str(&format!("{c}*{n}"));
    } else if out.ends_with(';') {
        out.pop();
    }
    out.trim_end_matches(';').to_string()
}

/// One CSV row per scan: sweep, log joint, group count, and run-length
/// encoded latent vectors.
pub fn write_scans_csv<W: Write>(scans: &[PosteriorScan], mut w: W) -> Result<()> {
    writeln!(w, "sweep,log_joint,n_groups,b_rle,c_rle,eta_rle,z_rle")?;
    for s in scans {
        let b = rle(s.state.b.iter().map(|&v| v as u8));
        let c = rle(s.state.c.iter().cloned());
        let eta = rle(s.state.eta.iter().map(|&v| v as u8));
        let z = rle(
            s.state
                .z
                .iter()
                .map(|v| v.map(|a| a as i64).unwrap_or(-1)),
        );
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.sweep, s.log_joint, s.state.n_groups, b, c, eta, z
        )?;
    }
    Ok(())
}

/// One CSV row per activity region per scan.
pub fn write_regions_csv<W: Write>(scans: &[PosteriorScan], mut w: W) -> Result<()> {
    writeln!(
        w,
        "sweep,group,ordinal,seg_start,seg_end,center_x,center_y,cov_xx,cov_xy,cov_yy,t_z,mass"
    )?;
    for s in scans {
        for r in &s.regions {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.sweep,
                r.source.0,
                r.source.1,
                r.seg_start,
                r.seg_end,
                r.mu_tilde.x,
                r.mu_tilde.y,
                r.sigma[(0, 0)],
                r.sigma[(0, 1)],
                r.sigma[(1, 1)],
                r.t_z,
                r.mass
            )?;
        }
    }
    Ok(())
}

/// Read a one-column CSV (optional header) of positive scalars.
pub fn read_scalar_column<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => {
                return Err(Error::SchemaError {
                    line: idx + 1,
                    msg: "non-finite value".into(),
                })
            }
            Err(_) if idx == 0 => continue, // header row
            Err(e) => {
                return Err(Error::SchemaError {
                    line: idx + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Plain `key=value` configuration file; blank lines and `#` comments are
/// skipped. CLI flags override these values.
pub fn read_config<R: Read>(mut reader: R) -> Result<BTreeMap<String, String>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                out.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => {
                return Err(Error::SchemaError {
                    line: i + 1,
                    msg: "expected key=value".into(),
                })
            }
        }
    }
    Ok(out)
}

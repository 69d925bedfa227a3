//! Command-line surface: calibrate the minimal jump scale, fit the model per
//! (device, week), generate synthetic data, interpolate, and evaluate with
//! the mobility metric suite. All stochastic subcommands require a seed and
//! rerunning with identical inputs and seed reproduces every output byte,
//! independently of --jobs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lfcm::activity::{
    mask_centroid, persistence_curve, top_k_regions, ActivityDensity, AreaMetric, Mask, Raster,
};
use lfcm::cpt::{cpt_fit, level_set, padded_bounds};
use lfcm::dist::pareto_mle_alpha;
use lfcm::error::{Error, Result};
use lfcm::io::{
    derive_seed, fan_out, ingest, partition_weeks, read_config, read_scalar_column,
    write_regions_csv, write_scans_csv, write_trajectory_csv,
};
use lfcm::mcmc::{extract_map, run_chain, ChainConfig, Hyperparams, PosteriorScan};
use lfcm::metrics::{
    eccdf, jump_lengths, loglog_slope, metric_summary, new_locations_curve, pooled_alpha,
    PoolMethod,
};
use lfcm::sim::{
    interpolate_extrapolate, linear_interpolate_extrapolate, params_from_scan, simulate_from_params,
    simulate_routine, subsample, GenerativeParams, RoutineConfig,
};
use lfcm::tail::{default_grid, estimate_epsilon, neighborhood_average, TailFit, TailMethod};
use lfcm::traj::{build_delta_series, normalize_coordinates, DeltaSeries, Trajectory};

#[derive(Parser)]
#[command(name = "lfcm", about = "Lévy-flight cluster model mobility toolkit", version)]
struct Cli {
    /// Plain key=value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every stochastic subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-pool size for per-partition fan-out.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Input trajectory CSV (device_id,timestamp,lon,lat,accuracy,speed).
    #[arg(long)]
    input: PathBuf,
    /// Known minimal jump scale ε (normalized jump length units).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    max_groups: Option<u32>,
    /// Independent chains per partition.
    #[arg(long)]
    chains: Option<usize>,
    /// Project lon/lat to kilometers in a local frame before fitting.
    #[arg(long, default_value_t = false)]
    project: bool,
    /// Drop (device, week) partitions smaller than this.
    #[arg(long, default_value_t = 10)]
    min_points: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate ε and the tail index from a one-column CSV of Δr/Δt ratios.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        /// ks | ad | kuiper | kuiper-nbhd
        #[arg(long, default_value = "kuiper")]
        method: String,
        /// Neighborhood size for kuiper-nbhd.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Neighborhood radius as a fraction of the grid span.
        #[arg(long, default_value_t = 0.1)]
        r_frac: f64,
    },
    /// Fit the collapsed sampler per (device, week) partition.
    Fit(FitArgs),
    /// Generate the synthetic daily-routine dataset.
    Routine {
        #[arg(long, default_value_t = 1)]
        days: u32,
        /// Keep a uniform random fraction of the points.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Draw a trajectory from a fitted parameter file on a fixed grid.
    Simulate {
        /// Parameter JSON emitted by `fit`.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        t0: f64,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        step: f64,
        /// Starting location "x,y".
        #[arg(long, default_value = "0,0")]
        start: String,
    },
    /// Interpolate/extrapolate a trajectory onto a uniform grid.
    Interp {
        #[command(flatten)]
        fit: FitArgs,
        /// lfcm | linear
        #[arg(long, default_value = "lfcm")]
        method: String,
        #[arg(long)]
        grid_t0: Option<f64>,
        #[arg(long)]
        grid_t1: Option<f64>,
        #[arg(long)]
        grid_step: f64,
    },
    /// Mobility metric summary (and ECCDF / new-locations curves).
    Metrics {
        #[arg(long)]
        input: PathBuf,
        /// Optional simulated set for a side-by-side table.
        #[arg(long)]
        simulated: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        cell_size: f64,
        /// Pool per-partition tail indices (reml | dl).
        #[arg(long, default_value = "reml")]
        pool: String,
    },
    /// Conservative proportional-time baseline: grid and level set.
    Cpt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        cell_size: f64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
    },
    /// Persistence curves of the fitted activity density (and CPT).
    Persistence {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value_t = 0.2)]
        cpt_cell: f64,
        #[arg(long, default_value_t = 256)]
        raster: usize,
    },
    /// Top-k activity areas of the fitted density.
    Topk {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        gamma: f64,
        #[arg(long, default_value_t = 256)]
        raster: usize,
    },
    /// Stability of top-k areas over growing week spans vs the full span.
    Overlap {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value = "2,4,6,8,10")]
        weeks: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        gamma: f64,
        /// jaccard | overlap | hausdorff
        #[arg(long, default_value = "overlap")]
        metric: String,
        #[arg(long, default_value_t = 128)]
        raster: usize,
    },
    /// Mean pairwise trajectory distance matrix across devices.
    Sociomatrix {
        #[command(flatten)]
        fit: FitArgs,
        /// lfcm | linear interpolation of each device onto the common grid.
        #[arg(long, default_value = "lfcm")]
        method: String,
        #[arg(long, default_value_t = 60.0)]
        grid_step: f64,
        /// Posterior scans per device used for the average.
        #[arg(long, default_value_t = 25)]
        scans: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

struct Ctx {
    seed: u64,
    jobs: usize,
    out: PathBuf,
    config: BTreeMap<String, String>,
}

impl Ctx {
    fn cfg_f64(&self, key: &str) -> Option<f64> {
        self.config.get(key).and_then(|s| s.parse().ok())
    }
    fn cfg_usize(&self, key: &str) -> Option<usize> {
        self.config.get(key).and_then(|s| s.parse().ok())
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => read_config(fs::File::open(path)?)?,
        None => BTreeMap::new(),
    };
    let seed = cli
        .seed
        .or_else(|| config.get("seed").and_then(|s| s.parse().ok()));
    let ctx = Ctx {
        seed: seed.unwrap_or(0),
        jobs: cli.jobs,
        out: cli.out.clone(),
        config,
    };
    let stochastic = !matches!(cli.command, Command::Metrics { .. } | Command::Cpt { .. });
    if stochastic && seed.is_none() {
        return Err(Error::InvalidParam(
            "--seed is required for stochastic subcommands".into(),
        ));
    }
    fs::create_dir_all(&ctx.out)?;
    match cli.command {
        Command::Calibrate {
            input,
            method,
            k,
            r_frac,
        } => calibrate_cmd(&ctx, &input, &method, k, r_frac),
        Command::Fit(args) => fit_cmd(&ctx, &args),
        Command::Routine { days, fraction } => routine_cmd(&ctx, days, fraction),
        Command::Simulate {
            params,
            t0,
            t1,
            step,
            start,
        } => simulate_cmd(&ctx, &params, t0, t1, step, &start),
        Command::Interp {
            fit,
            method,
            grid_t0,
            grid_t1,
            grid_step,
        } => interp_cmd(&ctx, &fit, &method, grid_t0, grid_t1, grid_step),
        Command::Metrics {
            input,
            simulated,
            cell_size,
            pool,
        } => metrics_cmd(&ctx, &input, simulated.as_deref(), cell_size, &pool),
        Command::Cpt {
            input,
            cell_size,
            gamma,
        } => cpt_cmd(&ctx, &input, cell_size, gamma),
        Command::Persistence {
            fit,
            cpt_cell,
            raster,
        } => persistence_cmd(&ctx, &fit, cpt_cell, raster),
        Command::Topk {
            fit,
            k,
            gamma,
            raster,
        } => topk_cmd(&ctx, &fit, k, gamma, raster),
        Command::Overlap {
            fit,
            weeks,
            k,
            gamma,
            metric,
            raster,
        } => overlap_cmd(&ctx, &fit, &weeks, k, gamma, &metric, raster),
        Command::Sociomatrix {
            fit,
            method,
            grid_step,
            scans,
        } => sociomatrix_cmd(&ctx, &fit, &method, grid_step, scans),
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn calibrate_cmd(ctx: &Ctx, input: &Path, method: &str, k: usize, r_frac: f64) -> Result<()> {
    let samples = read_scalar_column(fs::File::open(input)?)?;
    let method: TailMethod = method.parse()?;
    let grid = default_grid(&samples);
    let span = grid.last().unwrap() - grid.first().unwrap();
    let fit: TailFit = match method {
        TailMethod::KuiperNbhd => {
            neighborhood_average(&samples, TailMethod::Kuiper, &grid, k, r_frac * span)?
        }
        m => estimate_epsilon(&samples, m, &grid)?,
    };
    let mut text = String::from("method,eps_hat,alpha_hat,n_tail,statistic\n");
    text.push_str(&format!(
        "{:?},{},{},{},{}\n",
        fit.method, fit.eps_hat, fit.alpha_hat, fit.n_tail, fit.statistic_value
    ));
    write_file(&ctx.out.join("tailfit.csv"), &text)?;
    println!("eps_hat={} alpha_hat={}", fit.eps_hat, fit.alpha_hat);
    Ok(())
}

fn load_partitions(_ctx: &Ctx, args: &FitArgs) -> Result<Vec<((String, i32, u32), Trajectory)>> {
    let (devices, report) = ingest(fs::File::open(&args.input)?)?;
    if !report.rejected.is_empty() {
        for (line, msg) in report.rejected.iter().take(10) {
            eprintln!("rejected line {line}: {msg}");
        }
        eprintln!("rejected {} rows total", report.rejected.len());
    }
    if report.deduped > 0 {
        eprintln!("dropped {} duplicate-timestamp rows", report.deduped);
    }
    let mut partitions = Vec::new();
    for (device, traj) in devices {
        let traj = if args.project {
            normalize_coordinates(&traj).0
        } else {
            traj
        };
        let (parts, dropped) = partition_weeks(&traj, args.min_points);
        if dropped > 0 {
            eprintln!("device {device}: dropped {dropped} short week partitions");
        }
        for ((year, week), t) in parts {
            partitions.push(((device.clone(), year, week), t));
        }
    }
    if partitions.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(partitions)
}

fn hyper_from(ctx: &Ctx, args: &FitArgs) -> Result<Hyperparams> {
    let eps = args
        .eps
        .or_else(|| ctx.cfg_f64("eps"))
        .ok_or_else(|| Error::InvalidParam("--eps is required (or eps= in --config)".into()))?;
    let mut hyper = Hyperparams::with_eps(eps)?;
    if let Some(m) = args
        .max_groups
        .or_else(|| ctx.cfg_usize("max_groups").map(|v| v as u32))
    {
        hyper.max_groups = m.max(1);
    }
    Ok(hyper)
}

fn chain_cfg(ctx: &Ctx, args: &FitArgs, seed: u64) -> Result<ChainConfig> {
    let sweeps = args.sweeps.or_else(|| ctx.cfg_usize("sweeps")).unwrap_or(600);
    let burn_in = args
        .burn_in
        .or_else(|| ctx.cfg_usize("burn_in"))
        .unwrap_or(sweeps / 3);
    let thin = args.thin.or_else(|| ctx.cfg_usize("thin")).unwrap_or(2);
    ChainConfig::new(sweeps, burn_in, thin, seed)
}

struct FitOutput {
    scans: Vec<PosteriorScan>,
    deltas: DeltaSeries,
    traj: Trajectory,
}

fn fit_partition(
    ctx: &Ctx,
    args: &FitArgs,
    key: &(String, i32, u32),
    traj: &Trajectory,
) -> Result<FitOutput> {
    let deltas = build_delta_series(traj)?;
    let hyper = hyper_from(ctx, args)?;
    let chains = args.chains.or_else(|| ctx.cfg_usize("chains")).unwrap_or(1);
    let mut scans = Vec::new();
    for c in 0..chains {
        let seed = derive_seed(
            ctx.seed.wrapping_add((c as u64).wrapping_mul(0x9e3779b97f4a7c15)),
            &key.0,
            (key.1, key.2),
        );
        let cfg = chain_cfg(ctx, args, seed)?;
        scans.extend(run_chain(&deltas, &hyper, cfg)?);
    }
    Ok(FitOutput {
        scans,
        deltas,
        traj: traj.clone(),
    })
}

fn partition_dir(ctx: &Ctx, key: &(String, i32, u32)) -> PathBuf {
    ctx.out.join(format!("{}_{}-W{:02}", key.0, key.1, key.2))
}

fn fit_cmd(ctx: &Ctx, args: &FitArgs) -> Result<()> {
    let partitions = load_partitions(ctx, args)?;
    let hyper = hyper_from(ctx, args)?;
    let results = fan_out(partitions, ctx.jobs, |key, traj| {
        fit_partition(ctx, args, key, traj)
    })?;
    let mut summary = String::from(
        "device,year,week,n_points,map_sweep,map_log_joint,n_groups,n_jumps,n_returns\n",
    );
    for (key, out) in &results {
        let dir = partition_dir(ctx, key);
        fs::create_dir_all(&dir)?;
        let mut scans_text = Vec::new();
        write_scans_csv(&out.scans, &mut scans_text)?;
        write_file(&dir.join("scans.csv"), std::str::from_utf8(&scans_text).unwrap())?;
        let mut regions_text = Vec::new();
        write_regions_csv(&out.scans, &mut regions_text)?;
        write_file(
            &dir.join("regions.csv"),
            std::str::from_utf8(&regions_text).unwrap(),
        )?;
        let map = extract_map(&out.scans)?;
        let params = params_from_scan(&out.deltas, map, &hyper);
        write_file(
            &dir.join("params.json"),
            &serde_json::to_string_pretty(&params)
                .map_err(|e| Error::InvalidParam(e.to_string()))?,
        )?;
        let st = &map.state;
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            key.0,
            key.1,
            key.2,
            out.traj.len(),
            map.sweep,
            map.log_joint,
            st.n_groups,
            st.b.iter().filter(|&&b| b).count(),
            (0..st.n()).filter(|&i| st.b[i] && st.eta[i]).count(),
        ));
    }
    write_file(&ctx.out.join("summary.csv"), &summary)?;
    println!("fitted {} partitions", results.len());
    Ok(())
}

fn routine_cmd(ctx: &Ctx, days: u32, fraction: Option<f64>) -> Result<()> {
    let cfg = RoutineConfig {
        days,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let traj = simulate_routine(&cfg, &mut rng);
    let traj = match fraction {
        Some(f) => subsample(&traj, f, &mut rng)?,
        None => traj,
    };
    let mut text = Vec::new();
    write_trajectory_csv(&traj, &mut text)?;
    write_file(
        &ctx.out.join("routine.csv"),
        std::str::from_utf8(&text).unwrap(),
    )?;
    println!("wrote {} points", traj.len());
    Ok(())
}

fn simulate_cmd(
    ctx: &Ctx,
    params_path: &Path,
    t0: f64,
    t1: f64,
    step: f64,
    start: &str,
) -> Result<()> {
    let params: GenerativeParams = serde_json::from_reader(fs::File::open(params_path)?)
        .map_err(|e| Error::SchemaError {
            line: 0,
            msg: e.to_string(),
        })?;
    let start = parse_pair(start)?;
    let grid = uniform_grid(t0, t1, step)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let traj = simulate_from_params(&params, &grid, start, &mut rng)?;
    let mut text = Vec::new();
    write_trajectory_csv(&traj, &mut text)?;
    write_file(
        &ctx.out.join("simulated.csv"),
        std::str::from_utf8(&text).unwrap(),
    )?;
    println!("wrote {} points", traj.len());
    Ok(())
}

fn parse_pair(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidParam(format!("expected 'x,y', got '{s}'")));
    }
    Ok([
        parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParam("bad x".into()))?,
        parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParam("bad y".into()))?,
    ])
}

fn uniform_grid(t0: f64, t1: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || t1 < t0 {
        return Err(Error::InvalidParam("need t1 >= t0 and step > 0".into()));
    }
    let mut grid = Vec::new();
    let mut t = t0;
    let mut k = 0u64;
    while t <= t1 + 1e-9 {
        grid.push(t);
        k += 1;
        t = t0 + k as f64 * step;
    }
    Ok(grid)
}

fn interp_cmd(
    ctx: &Ctx,
    args: &FitArgs,
    method: &str,
    grid_t0: Option<f64>,
    grid_t1: Option<f64>,
    grid_step: f64,
) -> Result<()> {
    let partitions = load_partitions(ctx, args)?;
    let hyper = hyper_from(ctx, args)?;
    let results = fan_out(partitions, ctx.jobs, |key, traj| {
        let times = traj.times();
        let t0 = grid_t0.unwrap_or_else(|| times[0]);
        let t1 = grid_t1.unwrap_or_else(|| *times.last().unwrap());
        let grid = uniform_grid(t0, t1, grid_step)?;
        let out = match method {
            "linear" => linear_interpolate_extrapolate(traj, &grid)?,
            "lfcm" => {
                let fit = fit_partition(ctx, args, key, traj)?;
                let map = extract_map(&fit.scans)?;
                let params = params_from_scan(&fit.deltas, map, &hyper);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    ctx.seed ^ 0x1f2e3d4c,
                    &key.0,
                    (key.1, key.2),
                ));
                interpolate_extrapolate(traj, &fit.deltas, map, &params, &grid, &mut rng)?
            }
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown interp method '{other}'"
                )))
            }
        };
        Ok(out)
    })?;
    for (key, traj) in &results {
        let mut text = Vec::new();
        write_trajectory_csv(traj, &mut text)?;
        write_file(
            &partition_dir(ctx, key).join("interp.csv"),
            std::str::from_utf8(&text).unwrap(),
        )?;
    }
    println!("interpolated {} partitions", results.len());
    Ok(())
}

fn metrics_cmd(
    ctx: &Ctx,
    input: &Path,
    simulated: Option<&Path>,
    cell_size: f64,
    pool: &str,
) -> Result<()> {
    let (devices, _) = ingest(fs::File::open(input)?)?;
    let trajs: Vec<Trajectory> = devices.into_values().collect();
    let obs = metric_summary(&trajs)?;
    let mut text = String::from(
        "set,mean_jump_length,sd_jump_length,msd,sd_msd,rog,sd_rog\n",
    );
    let row = |name: &str, m: &lfcm::metrics::MetricSummary| {
        format!(
            "{},{},{},{},{},{},{}\n",
            name, m.mean_jump_length, m.sd_jump_length, m.msd, m.sd_msd, m.rog, m.sd_rog
        )
    };
    text.push_str(&row("observed", &obs));
    if let Some(sim_path) = simulated {
        let (sim_devices, _) = ingest(fs::File::open(sim_path)?)?;
        let sims: Vec<Trajectory> = sim_devices.into_values().collect();
        text.push_str(&row("simulated", &metric_summary(&sims)?));
    }
    write_file(&ctx.out.join("metrics.csv"), &text)?;

    // jump-length ECCDF and new-locations curves for plotting
    let mut all_jumps = Vec::new();
    let mut fits = Vec::new();
    for t in &trajs {
        if let Ok(j) = jump_lengths(t) {
            all_jumps.extend_from_slice(&j);
            // per-trajectory tail index at the smallest positive jump
            let pos: Vec<f64> = j.iter().cloned().filter(|&x| x > 0.0).collect();
            if pos.len() >= 5 {
                let eps = pos.iter().cloned().fold(f64::INFINITY, f64::min);
                if let Ok(fit) = pareto_mle_alpha(&pos, eps) {
                    if fit.se > 0.0 {
                        fits.push((fit.alpha, fit.se));
                    }
                }
            }
        }
    }
    let mut ecc_text = String::from("jump_length,survival\n");
    if !all_jumps.is_empty() {
        for (x, s) in eccdf(&all_jumps)? {
            ecc_text.push_str(&format!("{x},{s}\n"));
        }
    }
    write_file(&ctx.out.join("eccdf.csv"), &ecc_text)?;

    let mut nl_text = String::from("device,t_norm,fraction\n");
    let mut slopes = String::from("device,loglog_slope\n");
    for t in &trajs {
        let curve = new_locations_curve(t, cell_size)?;
        for (tn, f) in &curve {
            nl_text.push_str(&format!("{},{tn},{f}\n", t.device_id));
        }
        if let Some(s) = loglog_slope(&curve) {
            slopes.push_str(&format!("{},{s}\n", t.device_id));
        }
    }
    write_file(&ctx.out.join("new_locations.csv"), &nl_text)?;
    write_file(&ctx.out.join("new_locations_slope.csv"), &slopes)?;

    if fits.len() >= 2 {
        let method = match pool {
            "dl" => PoolMethod::DerSimonianLaird,
            _ => PoolMethod::Reml,
        };
        let pooled = pooled_alpha(&fits, method)?;
        write_file(
            &ctx.out.join("pooled_alpha.csv"),
            &format!(
                "alpha,ci_low,ci_high,tau2\n{},{},{},{}\n",
                pooled.alpha, pooled.ci95.0, pooled.ci95.1, pooled.tau2
            ),
        )?;
    }
    println!(
        "observed: jump={:.4} msd={:.4} rog={:.4}",
        obs.mean_jump_length, obs.msd, obs.rog
    );
    Ok(())
}

fn single_trajectory(input: &Path) -> Result<Trajectory> {
    let (devices, _) = ingest(fs::File::open(input)?)?;
    let mut iter = devices.into_values();
    let t = iter.next().ok_or(Error::EmptyInput)?;
    Ok(t)
}

fn cpt_cmd(ctx: &Ctx, input: &Path, cell_size: f64, gamma: f64) -> Result<()> {
    let traj = single_trajectory(input)?;
    let bounds = padded_bounds(&traj, 0.1);
    let grid = cpt_fit(&traj, cell_size, bounds)?;
    let mut cells: Vec<(&(i64, i64), &f64)> = grid.pi.iter().collect();
    cells.sort_by(|a, b| a.0.cmp(b.0));
    let mut text = String::from("i,j,pi\n");
    for (cell, p) in cells {
        text.push_str(&format!("{},{},{}\n", cell.0, cell.1, p));
    }
    write_file(&ctx.out.join("cpt_grid.csv"), &text)?;
    let pts = traj.positions();
    let level = level_set(&grid, &pts, gamma);
    let mut ls_text = String::from("i,j\n");
    for (i, j) in &level {
        ls_text.push_str(&format!("{i},{j}\n"));
    }
    write_file(&ctx.out.join("cpt_levelset.csv"), &ls_text)?;
    println!(
        "{} occupied cells, {} in the {}-level set",
        grid.pi.len(),
        level.len(),
        gamma
    );
    Ok(())
}

fn fit_single(ctx: &Ctx, args: &FitArgs) -> Result<(FitOutput, Hyperparams)> {
    let partitions = load_partitions(ctx, args)?;
    // single-partition helper for density commands: merge all partitions of
    // the lexicographically first device
    let device = partitions[0].0 .0.clone();
    let mut records = Vec::new();
    for (key, t) in &partitions {
        if key.0 == device {
            records.extend(t.records.iter().cloned());
        }
    }
    let (traj, _) = Trajectory::from_records(device.clone(), records)?;
    let key = (device, 0, 0u32);
    let out = fit_partition(ctx, args, &key, &traj)?;
    let hyper = hyper_from(ctx, args)?;
    Ok((out, hyper))
}

fn density_raster(out: &FitOutput, raster: usize) -> Result<(Raster, (f64, f64, f64, f64))> {
    let map = extract_map(&out.scans)?;
    let bounds = padded_bounds(&out.traj, 0.1);
    let density = ActivityDensity::from_bridges(&out.deltas, map)?;
    Ok((density.rasterize(bounds, raster, raster), bounds))
}

fn persistence_cmd(ctx: &Ctx, args: &FitArgs, cpt_cell: f64, raster: usize) -> Result<()> {
    let (out, _) = fit_single(ctx, args)?;
    let (lf_raster, bounds) = density_raster(&out, raster)?;
    let gammas: Vec<f64> = (1..=99).map(|k| k as f64 / 100.0).collect();
    let lf_curve = persistence_curve(&lf_raster, &gammas);
    let grid = cpt_fit(&out.traj, cpt_cell, bounds)?;
    let pts = out.traj.positions();
    let mut text = String::from("gamma,lfcm_components,cpt_components\n");
    for (g, n) in &lf_curve {
        let cpt_n = lfcm::cpt::component_count(&level_set(&grid, &pts, *g));
        text.push_str(&format!("{g},{n},{cpt_n}\n"));
    }
    write_file(&ctx.out.join("persistence.csv"), &text)?;
    println!("wrote persistence curve over {} levels", gammas.len());
    Ok(())
}

fn topk_cmd(ctx: &Ctx, args: &FitArgs, k: usize, gamma: f64, raster: usize) -> Result<()> {
    let (out, _) = fit_single(ctx, args)?;
    let (lf_raster, _) = density_raster(&out, raster)?;
    let (masks, fewer) = top_k_regions(&lf_raster, gamma, k);
    if fewer {
        eprintln!("warning: fewer than {k} components in the level set");
    }
    let mut text = String::from("rank,i,j\n");
    let mut centers = String::from("rank,center_x,center_y\n");
    for (rank, m) in masks.iter().enumerate() {
        let c = mask_centroid(&lf_raster, m);
        centers.push_str(&format!("{},{},{}\n", rank + 1, c.x, c.y));
        for iy in 0..m.ny {
            for ix in 0..m.nx {
                if m.cells[iy * m.nx + ix] {
                    text.push_str(&format!("{},{ix},{iy}\n", rank + 1));
                }
            }
        }
    }
    write_file(&ctx.out.join("topk_cells.csv"), &text)?;
    write_file(&ctx.out.join("topk_centers.csv"), &centers)?;
    println!("wrote {} top areas", masks.len());
    Ok(())
}

fn overlap_cmd(
    ctx: &Ctx,
    args: &FitArgs,
    weeks: &str,
    k: usize,
    gamma: f64,
    metric: &str,
    raster: usize,
) -> Result<()> {
    let metric = match metric {
        "jaccard" => AreaMetric::Jaccard,
        "overlap" => AreaMetric::Overlap,
        "hausdorff" => AreaMetric::Hausdorff,
        other => {
            return Err(Error::InvalidParam(format!("unknown metric '{other}'")))
        }
    };
    let week_list: Vec<usize> = weeks
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidParam("bad --weeks list".into()))?;
    let (devices, _) = ingest(fs::File::open(&args.input)?)?;
    let mut rows = String::from("device,weeks,distance\n");
    for (device, traj) in devices {
        let traj = if args.project {
            normalize_coordinates(&traj).0
        } else {
            traj
        };
        let (parts, _) = partition_weeks(&traj, 2);
        if parts.len() < 2 {
            continue;
        }
        let bounds = padded_bounds(&traj, 0.1);
        let masks_at = |n_weeks: usize, ctx: &Ctx| -> Result<Vec<Mask>> {
            let take = n_weeks.min(parts.len());
            let mut records = Vec::new();
            for (_, p) in parts.iter().take(take) {
                records.extend(p.records.iter().cloned());
            }
            let (sub, _) = Trajectory::from_records(device.clone(), records)?;
            let key = (device.clone(), 0, take as u32);
            let out = fit_partition(ctx, args, &key, &sub)?;
            let map = extract_map(&out.scans)?;
            let density = ActivityDensity::from_bridges(&out.deltas, map)?;
            let r = density.rasterize(bounds, raster, raster);
            Ok(top_k_regions(&r, gamma, k).0)
        };
        let reference = masks_at(parts.len(), ctx)?;
        let mut estimates = Vec::new();
        for &w in &week_list {
            if w >= parts.len() {
                continue;
            }
            estimates.push((w, masks_at(w, ctx)?));
        }
        let cell = (bounds.2 - bounds.0) / raster as f64;
        for (w, v) in lfcm::activity::stability_series(&estimates, &reference, metric, cell, cell)?
        {
            rows.push_str(&format!("{device},{w},{v}\n"));
        }
    }
    write_file(&ctx.out.join("overlap.csv"), &rows)?;
    println!("wrote stability series");
    Ok(())
}

fn sociomatrix_cmd(
    ctx: &Ctx,
    args: &FitArgs,
    method: &str,
    grid_step: f64,
    n_scans: usize,
) -> Result<()> {
    let (devices, _) = ingest(fs::File::open(&args.input)?)?;
    let hyper = hyper_from(ctx, args)?;
    let names: Vec<String> = devices.keys().cloned().collect();
    // common grid across all devices for the week
    let t_min = devices
        .values()
        .map(|t| t.times()[0])
        .fold(f64::INFINITY, f64::min);
    let t_max = devices
        .values()
        .map(|t| *t.times().last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let grid = uniform_grid(t_min, t_max, grid_step)?;
    let jobs: Vec<(String, Trajectory)> = devices.into_iter().collect();
    let results = fan_out(jobs, ctx.jobs, |device, traj| {
        let traj = if args.project {
            normalize_coordinates(traj).0
        } else {
            traj.clone()
        };
        let mut paths = Vec::new();
        match method {
            "linear" => {
                let interp = linear_interpolate_extrapolate(&traj, &grid)?;
                paths.push(interp.positions());
            }
            _ => {
                let key = (device.clone(), 0, 0u32);
                let out = fit_partition(ctx, args, &key, &traj)?;
                let step = (out.scans.len() / n_scans.max(1)).max(1);
                for (si, scan) in out.scans.iter().step_by(step).take(n_scans).enumerate() {
                    let params = params_from_scan(&out.deltas, scan, &hyper);
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        ctx.seed ^ (si as u64),
                        device,
                        (0, 0),
                    ));
                    let interp =
                        interpolate_extrapolate(&traj, &out.deltas, scan, &params, &grid, &mut rng)?;
                    paths.push(interp.positions());
                }
            }
        }
        Ok(paths)
    })?;
    let n_paths = results.iter().map(|(_, p)| p.len()).min().unwrap_or(0);
    let paths: Vec<Vec<Vec<nalgebra::Vector2<f64>>>> = results
        .into_iter()
        .map(|(_, mut p)| {
            p.truncate(n_paths.max(1));
            p
        })
        .collect();
    let matrix = lfcm::activity::distance_matrix(&paths)?;
    let mut text = String::new();
    text.push_str(&names.join(","));
    text.push('\n');
    for row in &matrix {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    write_file(&ctx.out.join("sociomatrix.csv"), &text)?;
    println!("wrote {}x{} distance matrix", names.len(), names.len());
    Ok(())
}


use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lidar_gins_calib::cloud::pcd::read_pcd;
use lidar_gins_calib::cloud::Trajectory;
use lidar_gins_calib::dataset::{format_extrinsics, format_poses, load_dataset, read_extrinsics};
use lidar_gins_calib::metrics::{evaluate_map, MapMetrics};
use lidar_gins_calib::pipeline::{jacobian_suite, prepare_scans, run_pipeline, stitch_map, PipelineConfig};
use lidar_gins_calib::simgen::{write_dataset, SimSettings};
use lidar_gins_calib::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lgcalib", version, about = "Targetless LiDAR-GINS and multi-LiDAR extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with ground truth.
    #[command(after_help = SimSettings::help_text())]
    Simulate {
        /// Settings file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        zero_noise: bool,
        /// Override one key, e.g. `--set ripple_deg=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the calibration pipeline on a dataset.
    #[command(after_help = PipelineConfig::help_text())]
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory for report.txt, report.kv, extrinsics.txt and gins_refined.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Map entropy and plane variance of a point cloud, or of a dataset
    /// stitched with given extrinsics.
    Eval {
        /// PCD map in world coordinates.
        #[arg(long, conflicts_with_all = ["dataset", "extrinsics"])]
        map: Option<PathBuf>,
        #[arg(long, requires = "extrinsics")]
        dataset: Option<PathBuf>,
        /// `id tx ty tz qx qy qz qw` per sensor, GINS from LiDAR.
        #[arg(long, requires = "dataset")]
        extrinsics: Option<PathBuf>,
        /// Neighborhood radius in meters.
        #[arg(long)]
        radius: Option<f64>,
        /// Pipeline config supplying keyframe and downsampling settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference checks of every factor Jacobian.
    Check {
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn split_override(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override '{s}' is not KEY=VALUE")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Dataset(format!("cannot write {}: {e}", path.display())))
}

fn print_metrics(m: &MapMetrics) {
    println!("radius_m = {}", m.radius);
    println!("mme_nat = {:.9}", m.mme);
    println!("mpv_m = {:.9}", m.mpv);
    println!("points = {}", m.n_points);
    println!("points_evaluated = {}", m.n_points_evaluated);
    println!("skipped_fraction = {:.9}", m.skipped_fraction());
}

fn simulate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf, zero_noise: bool, overrides: Vec<String>) -> Result<()> {
    let mut s = match config {
        Some(p) => SimSettings::load(p)?,
        None => SimSettings::default(),
    };
    for o in &overrides {
        let (k, v) = split_override(o)?;
        s.set(k, v)?;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if zero_noise {
        s.zero_noise = true;
    }
    let cfg = s.to_sim_config()?;
    let ds = write_dataset(&cfg, &out)?;
    println!(
        "wrote {} scans of {} sensors to {}",
        ds.scans.iter().map(Vec::len).sum::<usize>(),
        ds.sensors.len(),
        out.display()
    );
    Ok(())
}

fn calibrate(config: Option<PathBuf>, dataset: Option<PathBuf>, out: Option<PathBuf>, overrides: Vec<String>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &overrides {
        let (k, v) = split_override(o)?;
        cfg.set(k, v)?;
    }
    if let Some(d) = dataset {
        cfg.dataset_dir = d.to_string_lossy().into_owned();
    }
    let report = run_pipeline(&cfg)?;
    print!("{}", report.to_text());
    if let Some(dir) = out {
        fs::create_dir_all(&dir).map_err(|e| Error::Dataset(format!("cannot create {}: {e}", dir.display())))?;
        write_text(&dir.join("report.txt"), &report.to_text())?;
        write_text(&dir.join("report.kv"), &report.to_key_value_text())?;
        let items: Vec<_> = report.sensors.iter().cloned().zip(report.g_lm.iter().copied()).collect();
        write_text(&dir.join("extrinsics.txt"), &format_extrinsics(&items))?;
        if let Some(g) = &report.refined_gins {
            write_text(&dir.join("gins_refined.txt"), &format_poses(&Trajectory::new(g.clone())))?;
        }
    }
    Ok(())
}

fn eval(
    map: Option<PathBuf>,
    dataset: Option<PathBuf>,
    extrinsics: Option<PathBuf>,
    radius: Option<f64>,
    config: Option<PathBuf>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let radius = radius.unwrap_or(cfg.metric_radius_m);
    let cloud = match (map, dataset, extrinsics) {
        (Some(m), _, _) => read_pcd(m)?,
        (None, Some(d), Some(e)) => {
            let ds = load_dataset(d)?;
            let items = read_extrinsics(&e)?;
            let ext = ds
                .sensors
                .iter()
                .map(|s| {
                    items
                        .iter()
                        .find(|(id, _)| *id == s.id)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| Error::Dataset(format!("{}: no entry for sensor {}", e.display(), s.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let prepared = prepare_scans(&ds, &cfg)?;
            stitch_map(&prepared.scans, &ext, &cfg.match_params())?
        }
        _ => return Err(Error::Config("eval needs --map or --dataset with --extrinsics".into())),
    };
    print_metrics(&evaluate_map(&cloud, radius)?);
    Ok(())
}

fn check(configs: usize, seed: u64, tol: f64) -> Result<()> {
    let results = jacobian_suite(configs, seed)?;
    let mut worst: f64 = 0.0;
    for r in &results {
        let verdict = if r.max_error < tol { "ok" } else { "FAIL" };
        println!("{:<20} {:>4} configurations  max error {:.3e}  {verdict}", r.family, r.configurations, r.max_error);
        worst = worst.max(r.max_error);
    }
    if worst < tol {
        Ok(())
    } else {
        Err(Error::NumericalFailure(format!("Jacobian error {worst:.3e} exceeds {tol:.1e}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            zero_noise,
            overrides,
        } => simulate(config, seed, out, zero_noise, overrides),
        Command::Calibrate {
            config,
            dataset,
            out,
            overrides,
        } => calibrate(config, dataset, out, overrides),
        Command::Eval {
            map,
            dataset,
            extrinsics,
            radius,
            config,
        } => eval(map, dataset, extrinsics, radius, config),
        Command::Check { configs, seed, tol } => check(configs, seed, tol),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Deterministic synthetic datasets: a static world, a figure-eight drive,
//! ray-cast scans for every sensor and noisy GINS measurements.

pub mod lidar;
mod settings;
pub mod world;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub use lidar::{simulate_moving_scan, simulate_scan, LidarKind, LidarModel, ScanPattern};
pub use settings::SimSettings;
pub use world::{HeightPatch, Obstacle, PatchShape, SurfaceLabel, World};

use crate::cloud::{PointCloud, Trajectory};
use crate::dataset::{self, Dataset, SensorInfo};
use crate::error::{Error, Result};
use crate::se3::{RigidTransform, StampedPose, Twist6};

#[derive(Clone, Debug, PartialEq)]
pub struct SimSensor {
    pub id: String,
    pub base: bool,
    pub model: LidarModel,
    /// GINS-from-LiDAR.
    pub extrinsic: RigidTransform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub amplitude_a_m: f64,
    pub amplitude_b_m: f64,
    pub duration_s: f64,
    pub scan_rate_hz: f64,
    pub scan_period_s: f64,
    pub gins_rate_hz: f64,
    pub h_g_m: f64,
    /// Pitch/roll vibration amplitude; zero keeps the drive strictly planar.
    pub ripple_deg: f64,
    pub gins_pos_sigma_m: f64,
    pub gins_rot_sigma_deg: f64,
    pub sensors: Vec<SimSensor>,
    pub world: World,
}

/// Spinning front LiDAR (base) and a rear solid-state unit looking down and back.
pub fn two_sensor_rig(base_noise_m: f64, other_noise_m: f64) -> Vec<SimSensor> {
    vec![
        SimSensor {
            id: "L0".into(),
            base: true,
            model: LidarModel::spinning_front(base_noise_m),
            extrinsic: RigidTransform::from_rpy(
                0.8f64.to_radians(),
                1.5f64.to_radians(),
                2.0f64.to_radians(),
                Vector3::new(1.2, 0.0, 0.6),
            ),
        },
        SimSensor {
            id: "L1".into(),
            base: false,
            model: LidarModel::rosette(70.0, 6000, other_noise_m),
            extrinsic: RigidTransform::from_rpy(
                0.5f64.to_radians(),
                18.0f64.to_radians(),
                178.0f64.to_radians(),
                Vector3::new(-1.5, 0.2, 0.3),
            ),
        },
    ]
}

/// Two-sensor rig plus left, right and front-down solid-state units.
pub fn five_sensor_rig(base_noise_m: f64, other_noise_m: f64) -> Vec<SimSensor> {
    let mut rig = two_sensor_rig(base_noise_m, other_noise_m);
    let extra = [
        ("L2", 1.0, 15.0, 91.0, Vector3::new(0.1, 0.9, 0.5)),
        ("L3", -0.7, 14.0, -88.0, Vector3::new(-0.1, -0.9, 0.5)),
        ("L4", 0.3, 32.0, 1.0, Vector3::new(2.0, 0.0, 0.2)),
    ];
    for (id, roll, pitch, yaw, t) in extra {
        rig.push(SimSensor {
            id: id.into(),
            base: false,
            model: LidarModel::rosette(70.0, 4000, other_noise_m),
            extrinsic: RigidTransform::from_rpy(
                f64::to_radians(roll),
                f64::to_radians(pitch),
                f64::to_radians(yaw),
                t,
            ),
        });
    }
    rig
}

/// Walls around the drive, boxes inside and outside the loops, a bumpy field
/// and a hill beyond the loop tips.
pub fn default_world() -> World {
    let mut obstacles = vec![
        Obstacle::new([0.0, 24.0], [76.0, 0.6, 3.0]),
        Obstacle::new([0.0, -24.0], [76.0, 0.6, 3.0]),
        Obstacle::new([38.0, 0.0], [0.6, 48.0, 3.0]),
        Obstacle::new([-38.0, 0.0], [0.6, 48.0, 3.0]),
    ];
    let boxes = [
        ([12.0, 0.0], [4.0, 3.0, 2.5]),
        ([-12.0, 0.5], [3.0, 4.0, 2.0]),
        ([0.0, 15.0], [3.0, 2.0, 2.2]),
        ([1.0, -15.0], [2.0, 3.0, 1.6]),
        ([-9.0, 16.0], [2.5, 2.5, 3.0]),
        ([10.0, -16.5], [4.0, 2.0, 2.8]),
        ([12.0, 17.0], [2.0, 2.0, 1.2]),
        ([-13.0, -16.0], [3.0, 1.5, 2.4]),
        ([26.0, 13.0], [2.5, 4.0, 2.0]),
        ([-26.0, -13.0], [3.0, 3.0, 1.8]),
        ([-25.0, 14.0], [2.0, 5.0, 2.6]),
        ([25.0, -14.0], [5.0, 2.0, 1.5]),
        ([6.5, 0.3], [1.0, 1.0, 1.4]),
        ([-6.5, 0.0], [1.2, 0.8, 1.0]),
    ];
    obstacles.extend(boxes.iter().map(|&(c, s)| Obstacle::new(c, s)));
    World {
        patches: vec![
            HeightPatch {
                min: [24.0, -7.0],
                max: [34.0, 7.0],
                shape: PatchShape::Bumps {
                    amplitude: 0.35,
                    nx: 4,
                    ny: 5,
                },
            },
            HeightPatch {
                min: [-34.0, -7.0],
                max: [-24.0, 7.0],
                shape: PatchShape::Hill { height: 1.2 },
            },
        ],
        obstacles,
    }
}

impl SimConfig {
    /// Two-sensor rig on the default world with realistic noise.
    pub fn two_sensor(seed: u64) -> Self {
        Self {
            seed,
            amplitude_a_m: 20.0,
            amplitude_b_m: 20.0,
            duration_s: 30.0,
            scan_rate_hz: 1.0,
            scan_period_s: 0.1,
            gins_rate_hz: 20.0,
            h_g_m: 1.8,
            ripple_deg: 0.0,
            gins_pos_sigma_m: 0.03,
            gins_rot_sigma_deg: 0.1,
            sensors: two_sensor_rig(0.02, 0.01),
            world: default_world(),
        }
    }

    pub fn five_sensor(seed: u64) -> Self {
        Self {
            sensors: five_sensor_rig(0.02, 0.01),
            ..Self::two_sensor(seed)
        }
    }

    /// Same geometry with every noise source switched off.
    pub fn zero_noise(mut self) -> Self {
        self.gins_pos_sigma_m = 0.0;
        self.gins_rot_sigma_deg = 0.0;
        for s in &mut self.sensors {
            s.model.range_noise_m = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("amplitude_a_m", self.amplitude_a_m),
            ("amplitude_b_m", self.amplitude_b_m),
            ("duration_s", self.duration_s),
            ("scan_rate_hz", self.scan_rate_hz),
            ("scan_period_s", self.scan_period_s),
            ("gins_rate_hz", self.gins_rate_hz),
            ("h_g_m", self.h_g_m),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("ripple_deg", self.ripple_deg),
            ("gins_pos_sigma_m", self.gins_pos_sigma_m),
            ("gins_rot_sigma_deg", self.gins_rot_sigma_deg),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be non-negative, got {v}")));
            }
        }
        if self.scan_period_s > 1.0 / self.scan_rate_hz {
            return Err(Error::Config("scan_period_s exceeds the scan interval".into()));
        }
        if self.sensors.iter().filter(|s| s.base).count() != 1 {
            return Err(Error::Config("exactly one base sensor required".into()));
        }
        Ok(())
    }

    /// Scan start times; every scan ends inside the drive.
    pub fn scan_starts(&self) -> Vec<f64> {
        let interval = 1.0 / self.scan_rate_hz;
        (0..)
            .map(|k| k as f64 * interval)
            .take_while(|t| t + self.scan_period_s <= self.duration_s + 1e-9)
            .collect()
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("amplitude_a_m", self.amplitude_a_m.to_string());
        put("amplitude_b_m", self.amplitude_b_m.to_string());
        put("duration_s", self.duration_s.to_string());
        put("scan_rate_hz", self.scan_rate_hz.to_string());
        put("scan_period_s", self.scan_period_s.to_string());
        put("gins_rate_hz", self.gins_rate_hz.to_string());
        put("h_g_m", self.h_g_m.to_string());
        put("ripple_deg", self.ripple_deg.to_string());
        put("gins_pos_sigma_m", self.gins_pos_sigma_m.to_string());
        put("gins_rot_sigma_deg", self.gins_rot_sigma_deg.to_string());
        for s in &self.sensors {
            put(&format!("sensor_{}_noise_m", s.id), s.model.range_noise_m.to_string());
            put(&format!("sensor_{}_hfov_deg", s.id), s.model.horizontal_fov_deg().to_string());
        }
        m
    }
}

/// True world-from-GINS pose at time `t` on the figure-eight.
pub fn gins_pose_at(cfg: &SimConfig, t: f64) -> RigidTransform {
    let (a, b) = (cfg.amplitude_a_m, cfg.amplitude_b_m);
    let w = 2.0 * PI / cfg.duration_s;
    let th = w * t;
    let x = a * th.sin();
    let y = b * th.sin() * th.cos();
    let heading = (b * (2.0 * th).cos()).atan2(a * th.cos());
    let r = cfg.ripple_deg.to_radians();
    let (roll, pitch) = if r > 0.0 {
        (r * (7.3 * w * t).sin(), r * (5.1 * w * t + 0.4).sin())
    } else {
        (0.0, 0.0)
    };
    RigidTransform::from_rpy(roll, pitch, heading, Vector3::new(x, y, cfg.h_g_m))
}

/// Ground-truth GINS trajectory sampled at `gins_rate_hz` over the whole drive.
pub fn generate_trajectory(cfg: &SimConfig) -> Trajectory {
    let n = (cfg.duration_s * cfg.gins_rate_hz + 1e-9).floor() as usize;
    Trajectory::new(
        (0..=n)
            .map(|i| {
                let t = i as f64 / cfg.gins_rate_hz;
                StampedPose::new(t, gins_pose_at(cfg, t))
            })
            .collect(),
    )
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, a, b)`.
fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.wrapping_add(0x5151)))
}

const GINS_STREAM: u64 = u64::MAX;

/// GINS measurements: independent Gaussian errors drawn at knots one scan
/// interval apart (aligned with scan ends) and blended linearly in between.
pub fn noisy_gins(cfg: &SimConfig, truth: &Trajectory) -> Trajectory {
    if cfg.gins_pos_sigma_m == 0.0 && cfg.gins_rot_sigma_deg == 0.0 {
        return truth.clone();
    }
    let interval = 1.0 / cfg.scan_rate_hz;
    let offset = cfg.scan_period_s;
    let n_knots = ((cfg.duration_s - offset) / interval).floor().max(0.0) as usize + 2;
    let mut rng = stream(cfg.seed, GINS_STREAM, 0);
    let std = Normal::new(0.0, 1.0).unwrap();
    let knots: Vec<Twist6> = (0..n_knots)
        .map(|_| {
            let mut xs = [0.0; 6];
            for (i, x) in xs.iter_mut().enumerate() {
                let sigma = if i < 3 {
                    cfg.gins_rot_sigma_deg.to_radians()
                } else {
                    cfg.gins_pos_sigma_m
                };
                *x = sigma * std.sample(&mut rng);
            }
            Twist6::from_slice(&xs)
        })
        .collect();
    let noise_at = |t: f64| -> Twist6 {
        let u = ((t - offset) / interval).max(0.0);
        let k = (u.floor() as usize).min(n_knots - 2);
        let s = (u - k as f64).clamp(0.0, 1.0);
        Twist6(knots[k].0 * (1.0 - s) + knots[k + 1].0 * s)
    };
    Trajectory::new(
        truth
            .poses
            .iter()
            .map(|p| {
                let e = noise_at(p.time);
                let rot = p.pose.rotation * UnitQuaternion::from_scaled_axis(e.omega());
                StampedPose::new(p.time, RigidTransform::new(rot, p.pose.translation + e.v()))
            })
            .collect(),
    )
}

/// Simulates every scan of every sensor. Scans are independent and use their
/// own noise stream, so the output does not depend on the thread count.
pub fn generate_dataset(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let truth = generate_trajectory(cfg);
    let gins = noisy_gins(cfg, &truth);
    let starts = cfg.scan_starts();
    let jobs: Vec<(usize, usize)> = (0..cfg.sensors.len())
        .flat_map(|s| (0..starts.len()).map(move |k| (s, k)))
        .collect();
    let clouds: Vec<PointCloud> = jobs
        .par_iter()
        .map(|&(s, k)| {
            let sensor = &cfg.sensors[s];
            let t0 = starts[k];
            let start = gins_pose_at(cfg, t0).compose(&sensor.extrinsic);
            let end = gins_pose_at(cfg, t0 + cfg.scan_period_s).compose(&sensor.extrinsic);
            let mut rng = stream(cfg.seed, k as u64, s as u64);
            let mut c = simulate_moving_scan(&cfg.world, &sensor.model, &start, &end, cfg.scan_period_s, &mut rng);
            c.timestamp = t0;
            c.sensor_id = sensor.id.clone();
            c
        })
        .collect();
    let mut scans: Vec<Vec<PointCloud>> = vec![Vec::with_capacity(starts.len()); cfg.sensors.len()];
    for (&(s, _), c) in jobs.iter().zip(clouds) {
        scans[s].push(c);
    }
    Ok(Dataset {
        sensors: cfg
            .sensors
            .iter()
            .map(|s| SensorInfo {
                id: s.id.clone(),
                base: s.base,
                model: s.model.kind().to_string(),
            })
            .collect(),
        gins,
        gins_gt: Some(truth),
        scans,
        gt_extrinsics: Some(cfg.sensors.iter().map(|s| s.extrinsic).collect()),
        meta: cfg.echo(),
    })
}

/// Generates the dataset and writes it under `dir`.
pub fn write_dataset(cfg: &SimConfig, dir: impl AsRef<Path>) -> Result<Dataset> {
    let ds = generate_dataset(cfg)?;
    dataset::write_dataset(dir, &ds)?;
    Ok(ds)
}

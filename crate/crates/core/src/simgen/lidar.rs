use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::world::World;
use crate::cloud::PointCloud;
use crate::se3::{exp_map, log_map, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LidarKind {
    Spinning,
    SolidState,
}

impl fmt::Display for LidarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LidarKind::Spinning => "spinning",
            LidarKind::SolidState => "solid_state",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScanPattern {
    /// Rotating head; points outside `horizontal_fov_deg` (centered on +x) are dropped.
    Spinning {
        channels: usize,
        azimuth_steps: usize,
        vertical_min_deg: f64,
        vertical_max_deg: f64,
        horizontal_fov_deg: f64,
    },
    /// Non-repetitive rosette inside a cone of full angle `fov_deg` around +x.
    Rosette { fov_deg: f64, points: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarModel {
    pub pattern: ScanPattern,
    pub min_range_m: f64,
    pub max_range_m: f64,
    pub range_noise_m: f64,
}

impl LidarModel {
    /// 16 channels x 900 azimuth steps, +-15 deg vertical, front half only.
    pub fn spinning_front(range_noise_m: f64) -> Self {
        Self {
            pattern: ScanPattern::Spinning {
                channels: 16,
                azimuth_steps: 900,
                vertical_min_deg: -15.0,
                vertical_max_deg: 15.0,
                horizontal_fov_deg: 180.0,
            },
            min_range_m: 1.0,
            max_range_m: 60.0,
            range_noise_m,
        }
    }

    pub fn rosette(fov_deg: f64, points: usize, range_noise_m: f64) -> Self {
        Self {
            pattern: ScanPattern::Rosette { fov_deg, points },
            min_range_m: 1.0,
            max_range_m: 40.0,
            range_noise_m,
        }
    }

    pub fn kind(&self) -> LidarKind {
        match self.pattern {
            ScanPattern::Spinning { .. } => LidarKind::Spinning,
            ScanPattern::Rosette { .. } => LidarKind::SolidState,
        }
    }

    pub fn horizontal_fov_deg(&self) -> f64 {
        match self.pattern {
            ScanPattern::Spinning { horizontal_fov_deg, .. } => horizontal_fov_deg,
            ScanPattern::Rosette { fov_deg, .. } => fov_deg,
        }
    }

    pub fn vertical_fov_deg(&self) -> f64 {
        match self.pattern {
            ScanPattern::Spinning {
                vertical_min_deg,
                vertical_max_deg,
                ..
            } => vertical_max_deg - vertical_min_deg,
            ScanPattern::Rosette { fov_deg, .. } => fov_deg,
        }
    }

    /// Unit ray directions in the sensor frame with firing times in `[0, period]`,
    /// in firing order.
    pub fn rays(&self, period: f64) -> Vec<(Vector3<f64>, f64)> {
        match self.pattern {
            ScanPattern::Spinning {
                channels,
                azimuth_steps,
                vertical_min_deg,
                vertical_max_deg,
                horizontal_fov_deg,
            } => {
                let half = horizontal_fov_deg.to_radians() / 2.0;
                let mut out = Vec::new();
                for i in 0..azimuth_steps {
                    let az = -PI + 2.0 * PI * (i as f64 + 0.5) / azimuth_steps as f64;
                    if az.abs() > half {
                        continue;
                    }
                    let t = period * i as f64 / azimuth_steps as f64;
                    for c in 0..channels {
                        let frac = if channels > 1 { c as f64 / (channels - 1) as f64 } else { 0.5 };
                        let el = (vertical_min_deg + (vertical_max_deg - vertical_min_deg) * frac).to_radians();
                        out.push((Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()), t));
                    }
                }
                out
            }
            ScanPattern::Rosette { fov_deg, points } => {
                let half = fov_deg.to_radians() / 2.0;
                (0..points)
                    .map(|i| {
                        let u = i as f64 / points as f64;
                        let (a, b) = (2.0 * PI * 113.0 * u, 2.0 * PI * 71.0 * u);
                        let ox = 0.5 * half * (a.cos() + b.cos());
                        let oy = 0.5 * half * (a.sin() - b.sin());
                        let rho = (ox * ox + oy * oy).sqrt().min(half);
                        let phi = oy.atan2(ox);
                        let d = Vector3::new(rho.cos(), rho.sin() * phi.cos(), rho.sin() * phi.sin());
                        (d, period * u)
                    })
                    .collect()
            }
        }
    }
}

/// Ray-casts one scan while the sensor moves on the geodesic from `pose_start`
/// to `pose_end` (world-from-sensor) over `period`. Each point is expressed in
/// the sensor frame at its own firing time.
pub fn simulate_moving_scan<R: Rng>(
    world: &World,
    model: &LidarModel,
    pose_start: &RigidTransform,
    pose_end: &RigidTransform,
    period: f64,
    rng: &mut R,
) -> PointCloud {
    let rays = model.rays(period);
    let xi = if pose_start == pose_end {
        None
    } else {
        Some(log_map(&pose_start.inverse().compose(pose_end)).expect("scan motion below half a turn"))
    };
    let noise = (model.range_noise_m > 0.0).then(|| Normal::new(0.0, model.range_noise_m).unwrap());
    let mut points = Vec::with_capacity(rays.len());
    let mut times = Vec::with_capacity(rays.len());
    for (d, t) in rays {
        let pose = match &xi {
            Some(xi) if period > 0.0 => pose_start.compose(&exp_map(&xi.scaled(t / period))),
            _ => *pose_start,
        };
        let dw = pose.rotate(&d);
        if let Some((s, _)) = world.raycast(&pose.translation, &dw, model.min_range_m, model.max_range_m) {
            let s = match &noise {
                Some(n) => s + n.sample(rng),
                None => s,
            };
            points.push(d * s);
            times.push(t);
        }
    }
    PointCloud {
        points,
        timestamp: 0.0,
        per_point_time: Some(times),
        sensor_id: String::new(),
    }
}

/// Static scan from a single world-from-sensor pose.
pub fn simulate_scan<R: Rng>(world: &World, model: &LidarModel, pose: &RigidTransform, rng: &mut R) -> PointCloud {
    simulate_moving_scan(world, model, pose, pose, 0.0, rng)
}

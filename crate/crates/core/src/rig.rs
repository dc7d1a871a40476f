//! Sensor rig state and the keyframed scans every stage works on.

use rayon::prelude::*;

use crate::cloud::{select_keyframes, KeyframeIndex, PointCloud, Trajectory};
use crate::dataset::{Dataset, SensorInfo};
use crate::error::{Error, Result};
use crate::frames::{prepare_frame, Frame, MatchParams, ScanMotion};
use crate::se3::{RigidTransform, StampedPose};

/// Sensors, GINS trajectory and current extrinsic estimates `G_Lm`.
#[derive(Clone, Debug)]
pub struct Rig {
    pub sensors: Vec<SensorInfo>,
    pub base: usize,
    pub gins: Trajectory,
    pub extrinsics: Vec<RigidTransform>,
    pub h_g: f64,
}

impl Rig {
    pub fn new(sensors: Vec<SensorInfo>, gins: Trajectory, h_g: f64) -> Result<Self> {
        let bases: Vec<usize> = (0..sensors.len()).filter(|&i| sensors[i].base).collect();
        if bases.len() != 1 {
            return Err(Error::Dataset(format!("expected exactly one base sensor, found {}", bases.len())));
        }
        if gins.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if gins.poses.windows(2).any(|w| w[0].time >= w[1].time) {
            return Err(Error::Dataset("GINS trajectory times must be strictly increasing".into()));
        }
        let extrinsics = vec![RigidTransform::identity(); sensors.len()];
        Ok(Self {
            base: bases[0],
            sensors,
            gins,
            extrinsics,
            h_g,
        })
    }

    pub fn from_dataset(ds: &Dataset, h_g: f64) -> Result<Self> {
        Self::new(ds.sensors.clone(), ds.gins.clone(), h_g)
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

/// Keyframes chosen on the base sensor's scans, with the matching scan of
/// every other sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Keyframes {
    pub index: KeyframeIndex,
    /// Scan end times; frames are expressed at these instants.
    pub times: Vec<f64>,
    /// `scans[sensor][k]`: index into the dataset's scans of that sensor.
    pub scans: Vec<Vec<Option<usize>>>,
    pub period: f64,
}

impl Keyframes {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Selects keyframes from the GINS poses at the end of each base scan.
pub fn select_scan_keyframes(
    ds: &Dataset,
    base: usize,
    period: f64,
    dist_thresh: f64,
    angle_thresh_deg: f64,
) -> Result<Keyframes> {
    let (t0, t1) = match (ds.gins.start_time(), ds.gins.end_time()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::EmptyTrajectory),
    };
    let mut usable = Vec::new();
    let mut samples = Vec::new();
    for (i, scan) in ds.scans[base].iter().enumerate() {
        let (s, e) = (scan.timestamp, scan.timestamp + period);
        if s >= t0 && e <= t1 {
            usable.push(i);
            samples.push(StampedPose::new(e, ds.gins.pose_at(e)?));
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset("no base scan lies within the GINS time range".into()));
    }
    let index = select_keyframes(&Trajectory::new(samples), dist_thresh, angle_thresh_deg)?;
    let base_scans: Vec<usize> = index.indices.iter().map(|&j| usable[j]).collect();
    let scans = (0..ds.scans.len())
        .map(|m| {
            base_scans
                .iter()
                .map(|&b| {
                    if m == base {
                        return Some(b);
                    }
                    let t = ds.scans[base][b].timestamp;
                    ds.scans[m]
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| (c.timestamp - t).abs() <= 0.5 * period.max(1e-6))
                        .min_by(|x, y| (x.1.timestamp - t).abs().total_cmp(&(y.1.timestamp - t).abs()))
                        .map(|(i, _)| i)
                })
                .collect()
        })
        .collect();
    Ok(Keyframes {
        times: index.times.clone(),
        index,
        scans,
        period,
    })
}

/// Scan period from metadata, else the largest per-point time offset.
pub fn infer_scan_period(ds: &Dataset) -> Option<f64> {
    if let Some(p) = ds.meta.get("scan_period_s").and_then(|s| s.parse::<f64>().ok()) {
        if p > 0.0 {
            return Some(p);
        }
    }
    ds.scans
        .iter()
        .flatten()
        .filter_map(|c| c.per_point_time.as_ref())
        .flat_map(|t| t.iter().copied())
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
        .filter(|&p| p > 0.0)
}

/// Raw keyframe scans of one sensor with the measured GINS poses at scan start and end.
#[derive(Clone, Debug)]
pub struct KeyframedScans {
    pub sensor: usize,
    /// Keyframe numbers that have a scan of this sensor.
    pub keyframes: Vec<usize>,
    pub clouds: Vec<PointCloud>,
    pub start_poses: Vec<RigidTransform>,
    pub end_poses: Vec<RigidTransform>,
    pub period: f64,
}

impl KeyframedScans {
    pub fn collect(ds: &Dataset, keyframes: &Keyframes, sensor: usize) -> Result<Self> {
        let mut out = KeyframedScans {
            sensor,
            keyframes: Vec::new(),
            clouds: Vec::new(),
            start_poses: Vec::new(),
            end_poses: Vec::new(),
            period: keyframes.period,
        };
        for (k, scan) in keyframes.scans[sensor].iter().enumerate() {
            let Some(i) = *scan else { continue };
            let cloud = &ds.scans[sensor][i];
            out.keyframes.push(k);
            out.start_poses.push(ds.gins.pose_at(keyframes.times[k] - keyframes.period)?);
            out.end_poses.push(ds.gins.pose_at(keyframes.times[k])?);
            out.clouds.push(cloud.clone());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Frames deskewed with `extrinsic` (when given) and the measured GINS motion.
    pub fn prepare(&self, extrinsic: Option<&RigidTransform>, params: &MatchParams) -> Result<Vec<Frame>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let motion = extrinsic.map(|e| ScanMotion {
                    start: self.start_poses[i].compose(e),
                    end: self.end_poses[i].compose(e),
                    period: self.period,
                });
                prepare_frame(&self.clouds[i], motion.as_ref(), self.sensor, self.keyframes[i], params).map(|(f, _)| f)
            })
            .collect()
    }
}

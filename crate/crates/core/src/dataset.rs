//! On-disk dataset layout:
//!
//! ```text
//! gins_poses.txt       measured GINS poses, "t tx ty tz qx qy qz qw"
//! gins_poses_gt.txt    optional ground truth, same format
//! sensors.txt          "id base model" per line, base is 1 for the base LiDAR
//! gt_extrinsics.txt    optional "id tx ty tz qx qy qz qw" (GINS-from-LiDAR)
//! meta.txt             "key = value" lines
//! lidar_<id>/<t>.pcd   one scan per file, <t> is the scan start time
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cloud::pcd::{read_pcd, write_pcd, PcdEncoding};
use crate::cloud::{PointCloud, Trajectory};
use crate::error::{Error, Result};
use crate::se3::{RigidTransform, StampedPose};

pub const GINS_FILE: &str = "gins_poses.txt";
pub const GINS_GT_FILE: &str = "gins_poses_gt.txt";
pub const SENSORS_FILE: &str = "sensors.txt";
pub const GT_EXTRINSICS_FILE: &str = "gt_extrinsics.txt";
pub const META_FILE: &str = "meta.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorInfo {
    pub id: String,
    pub base: bool,
    pub model: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sensors: Vec<SensorInfo>,
    pub gins: Trajectory,
    pub gins_gt: Option<Trajectory>,
    /// Scans per sensor, sorted by start time.
    pub scans: Vec<Vec<PointCloud>>,
    /// GINS-from-LiDAR ground truth per sensor.
    pub gt_extrinsics: Option<Vec<RigidTransform>>,
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn base_index(&self) -> Option<usize> {
        self.sensors.iter().position(|s| s.base)
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }
}

fn dataset_err(msg: impl Into<String>) -> Error {
    Error::Dataset(msg.into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_floats(fields: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| dataset_err(format!("{}:{line}: bad number '{s}'", path.display())))
        })
        .collect()
}

fn pose_from_fields(v: &[f64], path: &Path, line: usize) -> Result<RigidTransform> {
    let q = [v[3], v[4], v[5], v[6]];
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-9) || v.iter().any(|x| !x.is_finite()) {
        return Err(dataset_err(format!("{}:{line}: invalid pose", path.display())));
    }
    Ok(RigidTransform::from_xyzw([v[0], v[1], v[2]], q))
}

fn format_pose(t: &RigidTransform) -> String {
    let q = t.quaternion_xyzw();
    format!(
        "{} {} {} {} {} {} {}",
        t.translation.x, t.translation.y, t.translation.z, q[0], q[1], q[2], q[3]
    )
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut poses = Vec::new();
    for (n, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(dataset_err(format!("{}:{n}: expected 8 fields, got {}", path.display(), fields.len())));
        }
        let v = parse_floats(&fields, path, n)?;
        poses.push(StampedPose::new(v[0], pose_from_fields(&v[1..], path, n)?));
    }
    let traj = Trajectory::new(poses);
    if traj.poses.windows(2).any(|w| w[0].time >= w[1].time) {
        return Err(dataset_err(format!("{}: timestamps are not strictly increasing", path.display())));
    }
    Ok(traj)
}

pub fn format_poses(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in &traj.poses {
        let _ = writeln!(out, "{} {}", p.time, format_pose(&p.pose));
    }
    out
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_poses(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    write_file(path.as_ref(), format_poses(traj))
}

pub fn read_sensors(path: impl AsRef<Path>) -> Result<Vec<SensorInfo>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in content_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 || !(f[1] == "0" || f[1] == "1") {
            return Err(dataset_err(format!("{}:{n}: expected 'id base(0|1) model'", path.display())));
        }
        out.push(SensorInfo {
            id: f[0].to_string(),
            base: f[1] == "1",
            model: f[2].to_string(),
        });
    }
    if out.iter().filter(|s| s.base).count() != 1 {
        return Err(dataset_err(format!("{}: exactly one base sensor required", path.display())));
    }
    Ok(out)
}

/// `id -> GINS-from-LiDAR` lines.
pub fn read_extrinsics(path: impl AsRef<Path>) -> Result<Vec<(String, RigidTransform)>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in content_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(dataset_err(format!("{}:{n}: expected 'id tx ty tz qx qy qz qw'", path.display())));
        }
        let v = parse_floats(&f[1..], path, n)?;
        out.push((f[0].to_string(), pose_from_fields(&v, path, n)?));
    }
    Ok(out)
}

pub fn format_extrinsics(items: &[(String, RigidTransform)]) -> String {
    let mut out = String::from("# id tx ty tz qx qy qz qw (GINS-from-LiDAR)\n");
    for (id, t) in items {
        let _ = writeln!(out, "{id} {}", format_pose(t));
    }
    out
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in content_lines(text) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {n}: expected 'key = value'")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// File name of a scan starting at `t`.
pub fn scan_file_name(t: f64) -> String {
    format!("{t:.6}.pcd")
}

pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_poses(dir.join(GINS_FILE), &ds.gins)?;
    if let Some(gt) = &ds.gins_gt {
        write_poses(dir.join(GINS_GT_FILE), gt)?;
    }
    let mut sensors = String::from("# id base model\n");
    for s in &ds.sensors {
        let _ = writeln!(sensors, "{} {} {}", s.id, u8::from(s.base), s.model);
    }
    write_file(&dir.join(SENSORS_FILE), sensors)?;
    if let Some(gt) = &ds.gt_extrinsics {
        let items: Vec<(String, RigidTransform)> = ds.sensors.iter().map(|s| s.id.clone()).zip(gt.iter().copied()).collect();
        write_file(&dir.join(GT_EXTRINSICS_FILE), format_extrinsics(&items))?;
    }
    let mut meta = String::new();
    for (k, v) in &ds.meta {
        let _ = writeln!(meta, "{k} = {v}");
    }
    write_file(&dir.join(META_FILE), meta)?;
    for (s, scans) in ds.sensors.iter().zip(&ds.scans) {
        let sub = dir.join(format!("lidar_{}", s.id));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for c in scans {
            write_pcd(sub.join(scan_file_name(c.timestamp)), c, PcdEncoding::Binary)?;
        }
    }
    Ok(())
}

fn list_scans(dir: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Dataset(format!("cannot list {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|x| x.to_str()) != Some("pcd") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let t: f64 = stem
            .parse()
            .map_err(|_| dataset_err(format!("{}: file name is not a timestamp", path.display())))?;
        out.push((t, path));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Loads a dataset directory. Ground-truth files are optional.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(dataset_err(format!("{} is not a directory", dir.display())));
    }
    let gins_path = dir.join(GINS_FILE);
    if !gins_path.exists() {
        return Err(dataset_err(format!("missing {}", gins_path.display())));
    }
    let gins = read_poses(&gins_path)?;
    if gins.len() < 2 {
        return Err(dataset_err(format!("{} needs at least two poses", gins_path.display())));
    }
    let sensors_path = dir.join(SENSORS_FILE);
    if !sensors_path.exists() {
        return Err(dataset_err(format!("missing {}", sensors_path.display())));
    }
    let sensors = read_sensors(&sensors_path)?;
    let gt_path = dir.join(GINS_GT_FILE);
    let gins_gt = if gt_path.exists() { Some(read_poses(&gt_path)?) } else { None };
    let ext_path = dir.join(GT_EXTRINSICS_FILE);
    let gt_extrinsics = if ext_path.exists() {
        let items = read_extrinsics(&ext_path)?;
        let mut out = Vec::with_capacity(sensors.len());
        for s in &sensors {
            let t = items
                .iter()
                .find(|(id, _)| *id == s.id)
                .map(|(_, t)| *t)
                .ok_or_else(|| dataset_err(format!("{}: no entry for sensor {}", ext_path.display(), s.id)))?;
            out.push(t);
        }
        Some(out)
    } else {
        None
    };
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        parse_key_values(&read_text(&meta_path)?).map_err(|e| dataset_err(format!("{}: {e}", meta_path.display())))?
    } else {
        BTreeMap::new()
    };
    let mut scans = Vec::with_capacity(sensors.len());
    for s in &sensors {
        let sub = dir.join(format!("lidar_{}", s.id));
        let mut clouds = Vec::new();
        for (t, path) in list_scans(&sub)? {
            let mut c = read_pcd(&path)?;
            c.timestamp = t;
            c.sensor_id = s.id.clone();
            clouds.push(c);
        }
        scans.push(clouds);
    }
    Ok(Dataset {
        sensors,
        gins,
        gins_gt,
        scans,
        gt_extrinsics,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn pose_file_round_trip_is_exact() {
        let traj = Trajectory::new(vec![
            StampedPose::new(0.05, RigidTransform::from_rpy(0.1, 0.2, 0.3, Vector3::new(1.0 / 3.0, 2.0, -0.7))),
            StampedPose::new(0.1, RigidTransform::from_rpy(-0.1, 0.0, 2.9, Vector3::new(0.0, 1e-9, 5.0))),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        write_poses(&p, &traj).unwrap();
        let back = read_poses(&p).unwrap();
        for (a, b) in traj.poses.iter().zip(&back.poses) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.pose.translation, b.pose.translation);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-15);
        }
    }

    #[test]
    fn comments_are_ignored_and_bad_lines_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.txt");
        fs::write(&p, "# header\n\n0 0 0 0 0 0 0 1\n").unwrap();
        assert_eq!(read_poses(&p).unwrap().len(), 1);
        fs::write(&p, "0 0 0 0 0 0 1\n").unwrap();
        assert!(matches!(read_poses(&p), Err(Error::Dataset(_))));
    }

    #[test]
    fn missing_gins_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Dataset(msg)) => assert!(msg.contains(GINS_FILE)),
            other => panic!("unexpected {other:?}"),
        }
    }
}

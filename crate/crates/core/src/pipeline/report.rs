//! Calibration report: human-readable text and a line-oriented key-value form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::metrics::MapMetrics;
use crate::se3::{ExtrinsicError, RigidTransform, StampedPose};

/// Stage names in execution order.
pub const STAGES: [&str; 6] = ["init", "lidar_gins", "ground_align", "multi_lidar", "terrain", "joint"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Completed,
    Skipped,
}

impl StageStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageStatus::Completed => "completed",
            StageStatus::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
    Pose(RigidTransform),
}

/// Nine significant digits.
pub fn format_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

/// `tx ty tz qx qy qz qw` with `qw >= 0`.
pub fn format_pose(t: &RigidTransform) -> String {
    let mut q = t.quaternion_xyzw();
    if q[3] < 0.0 {
        q = q.map(|c| -c);
    }
    let tr = t.translation;
    [tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]]
        .iter()
        .map(|v| format_real(*v + 0.0))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Real(x) => format_real(*x),
            Value::Bool(b) => b.to_string(),
            Value::Text(s) => s.clone(),
            Value::Pose(t) => format_pose(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub name: &'static str,
    pub status: StageStatus,
    /// Wall clock.
    pub seconds: f64,
    pub fields: Vec<(String, Value)>,
}

impl StageRecord {
    pub fn skipped(name: &'static str) -> Self {
        Self {
            name,
            status: StageStatus::Skipped,
            seconds: 0.0,
            fields: Vec::new(),
        }
    }

    pub fn field(&self, key: &str) -> Option<&Value> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorErrors {
    /// Of `G_Lm`.
    pub gins: ExtrinsicError,
    /// Of `L0_Lm`.
    pub base: ExtrinsicError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    /// Effective configuration, dataset-supplied values resolved.
    pub config: Vec<(&'static str, String)>,
    pub sensors: Vec<String>,
    pub base: usize,
    pub keyframe_times: Vec<f64>,
    pub stages: Vec<StageRecord>,
    /// Final `G_Lm` per sensor.
    pub g_lm: Vec<RigidTransform>,
    /// Final `L0_Lm` per sensor.
    pub l0_lm: Vec<RigidTransform>,
    /// Present when the joint stage ran.
    pub g_vl: Option<RigidTransform>,
    pub refined_gins: Option<Vec<StampedPose>>,
    pub metrics_before: Option<MapMetrics>,
    pub metrics_after: Option<MapMetrics>,
    /// Present when the dataset has ground-truth extrinsics.
    pub gt_errors: Option<Vec<SensorErrors>>,
}

fn metric_lines(prefix: &str, m: &MapMetrics, out: &mut Vec<(String, String)>) {
    out.push((format!("{prefix}.mme_nat"), format_real(m.mme)));
    out.push((format!("{prefix}.mpv_m"), format_real(m.mpv)));
    out.push((format!("{prefix}.points"), m.n_points.to_string()));
    out.push((format!("{prefix}.points_evaluated"), m.n_points_evaluated.to_string()));
    out.push((format!("{prefix}.skipped_fraction"), format_real(m.skipped_fraction())));
    out.push((format!("{prefix}.radius_m"), format_real(m.radius)));
}

impl CalibrationReport {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    fn base_id(&self) -> &str {
        &self.sensors[self.base]
    }

    /// All report lines as `(key, value)`, in output order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (k, v) in &self.config {
            out.push((format!("config.{k}"), v.clone()));
        }
        out.push(("dataset.sensors".into(), self.sensors.join(" ")));
        out.push(("dataset.base".into(), self.base_id().to_string()));
        out.push(("dataset.keyframes".into(), self.keyframe_times.len().to_string()));
        for s in &self.stages {
            out.push((format!("stage.{}.status", s.name), s.status.as_str().into()));
            for (k, v) in &s.fields {
                out.push((format!("stage.{}.{k}", s.name), v.render()));
            }
        }
        for (id, t) in self.sensors.iter().zip(&self.g_lm) {
            out.push((format!("final.G_{id}"), format_pose(t)));
        }
        for (id, t) in self.sensors.iter().zip(&self.l0_lm) {
            out.push((format!("final.{}_{id}", self.base_id()), format_pose(t)));
        }
        if let Some(t) = &self.g_vl {
            out.push(("final.G_VL".into(), format_pose(t)));
        }
        if let Some(m) = &self.metrics_before {
            metric_lines("metrics.before", m, &mut out);
        }
        if let Some(m) = &self.metrics_after {
            metric_lines("metrics.after", m, &mut out);
        }
        if let Some(errs) = &self.gt_errors {
            for (id, e) in self.sensors.iter().zip(errs) {
                out.push((format!("gt_error.G_{id}.rot_deg"), format_real(e.gins.rot_deg)));
                out.push((format!("gt_error.G_{id}.trans_m"), format_real(e.gins.trans_m)));
                out.push((format!("gt_error.{}_{id}.rot_deg", self.base_id()), format_real(e.base.rot_deg)));
                out.push((format!("gt_error.{}_{id}.trans_m", self.base_id()), format_real(e.base.trans_m)));
            }
        }
        for s in &self.stages {
            out.push((format!("timing.{}_s", s.name), format_real(s.seconds)));
        }
        out
    }

    pub fn to_key_value_text(&self) -> String {
        self.key_values().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "calibration report");
        let _ = writeln!(
            s,
            "sensors: {} (base {}), keyframes: {}",
            self.sensors.join(", "),
            self.base_id(),
            self.keyframe_times.len()
        );
        let _ = writeln!(s, "\nstages:");
        for st in &self.stages {
            let _ = writeln!(s, "  {:<13} {:<9} {:>9.3} s", st.name, st.status.as_str(), st.seconds);
            for (k, v) in &st.fields {
                let _ = writeln!(s, "      {k}: {}", v.render());
            }
        }
        let _ = writeln!(s, "\nfinal extrinsics (tx ty tz qx qy qz qw):");
        for (id, t) in self.sensors.iter().zip(&self.g_lm) {
            let _ = writeln!(s, "  G_{id}: {}", format_pose(t));
        }
        for (id, t) in self.sensors.iter().zip(&self.l0_lm) {
            let _ = writeln!(s, "  {}_{id}: {}", self.base_id(), format_pose(t));
        }
        if let Some(t) = &self.g_vl {
            let _ = writeln!(s, "  G_VL: {}", format_pose(t));
        }
        for (label, m) in [("before", &self.metrics_before), ("after", &self.metrics_after)] {
            if let Some(m) = m {
                let _ = writeln!(
                    s,
                    "\nmap metrics {label}: MME {:.6} nat, MPV {:.6} m, radius {} m, {} of {} points evaluated",
                    m.mme, m.mpv, m.radius, m.n_points_evaluated, m.n_points
                );
            }
        }
        if let Some(errs) = &self.gt_errors {
            let _ = writeln!(s, "\nerrors against ground truth:");
            for (id, e) in self.sensors.iter().zip(errs) {
                let _ = writeln!(
                    s,
                    "  G_{id}: {:.6} deg, {:.6} m   {}_{id}: {:.6} deg, {:.6} m",
                    e.gins.rot_deg,
                    e.gins.trans_m,
                    self.base_id(),
                    e.base.rot_deg,
                    e.base.trans_m
                );
            }
        }
        let _ = writeln!(s, "\nconfiguration:");
        for (k, v) in &self.config {
            let _ = writeln!(s, "  {k} = {v}");
        }
        s
    }
}

/// Parses the key-value report form.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Keys that differ between two key-value reports, ignoring wall-clock timings.
pub fn report_differences(a: &str, b: &str) -> Vec<String> {
    let (a, b) = (parse_report(a), parse_report(b));
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .filter(|k| !k.starts_with("timing."))
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| format!("{k}: {:?} vs {:?}", a.get(k), b.get(k)))
        .collect()
}

use crate::error::{Error, Result};
use crate::se3::{interpolate_pose, RigidTransform, StampedPose};

/// Time-sorted sequence of poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new(mut poses: Vec<StampedPose>) -> Self {
        poses.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.poses.first().map(|p| p.time)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.poses.last().map(|p| p.time)
    }

    /// Pose at time `t`, interpolated on the geodesic between the bracketing samples.
    pub fn pose_at(&self, t: f64) -> Result<RigidTransform> {
        let (start, end) = match (self.start_time(), self.end_time()) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(Error::EmptyTrajectory),
        };
        let idx = self.poses.partition_point(|p| p.time < t);
        if idx < self.poses.len() && self.poses[idx].time == t {
            return Ok(self.poses[idx].pose);
        }
        if idx == 0 || idx == self.poses.len() {
            return Err(Error::OutOfRange { t, start, end });
        }
        interpolate_pose(&self.poses[idx - 1], &self.poses[idx], t)
    }
}

/// Selected keyframes and the thresholds that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeIndex {
    /// Indices into the source trajectory.
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    pub dist_thresh: f64,
    pub angle_thresh_deg: f64,
}

/// Greedy selection: the first pose is a keyframe, and a later pose becomes one
/// once its translation from the last keyframe reaches `dist_thresh` or its
/// relative rotation reaches `angle_thresh_deg`.
pub fn select_keyframes(trajectory: &Trajectory, dist_thresh: f64, angle_thresh_deg: f64) -> Result<KeyframeIndex> {
    let first = trajectory.poses.first().ok_or(Error::EmptyTrajectory)?;
    let mut indices = vec![0];
    let mut last = first.pose;
    let angle_thresh = angle_thresh_deg.to_radians();
    for (i, sp) in trajectory.poses.iter().enumerate().skip(1) {
        let dist = (sp.pose.translation - last.translation).norm();
        let angle = last.rotation.angle_to(&sp.pose.rotation);
        if dist >= dist_thresh || angle >= angle_thresh {
            indices.push(i);
            last = sp.pose;
        }
    }
    let times = indices.iter().map(|&i| trajectory.poses[i].time).collect();
    Ok(KeyframeIndex {
        indices,
        times,
        dist_thresh,
        angle_thresh_deg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn straight_line_every_fourth() {
        let traj = Trajectory::new(
            (0..20)
                .map(|i| StampedPose::new(i as f64, RigidTransform::from_translation(0.5 * i as f64, 0.0, 0.0)))
                .collect(),
        );
        let kf = select_keyframes(&traj, 2.0, 30.0).unwrap();
        assert_eq!(kf.indices, vec![0, 4, 8, 12, 16]);
    }

    #[test]
    fn yaw_steps_every_third() {
        let traj = Trajectory::new(
            (0..10)
                .map(|i| {
                    let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), (10.0001 * i as f64).to_radians());
                    StampedPose::new(i as f64, RigidTransform::from_rotation(q))
                })
                .collect(),
        );
        let kf = select_keyframes(&traj, 2.0, 30.0).unwrap();
        assert_eq!(kf.indices, vec![0, 3, 6, 9]);
    }

    #[test]
    fn empty_trajectory() {
        assert!(matches!(select_keyframes(&Trajectory::default(), 2.0, 30.0), Err(Error::EmptyTrajectory)));
    }

    #[test]
    fn pose_lookup_interpolates() {
        let traj = Trajectory::new(vec![
            StampedPose::new(0.0, RigidTransform::identity()),
            StampedPose::new(1.0, RigidTransform::from_translation(1.0, 0.0, 0.0)),
        ]);
        assert!((traj.pose_at(0.25).unwrap().translation.x - 0.25).abs() < 1e-15);
        assert!(traj.pose_at(1.5).is_err());
    }
}

use crate::error::{Error, Result};
use crate::se3::{exp_map, log_map, RigidTransform};

use super::PointCloud;

/// Re-expresses every point in the scan-end frame.
///
/// `pose_start` and `pose_end` are world poses of the sensor at relative times
/// `0` and `period`; the pose at each point's capture time is interpolated on
/// the geodesic between them.
pub fn motion_compensate(
    cloud: &PointCloud,
    pose_start: &RigidTransform,
    pose_end: &RigidTransform,
    period: f64,
) -> Result<PointCloud> {
    let times = cloud.per_point_time.as_ref().ok_or(Error::MissingPerPointTime)?;
    if pose_start == pose_end {
        return Ok(cloud.clone());
    }
    let delta = log_map(&pose_start.inverse().compose(pose_end))?;
    let end_from_start = pose_end.inverse().compose(pose_start);
    let mut points = Vec::with_capacity(cloud.len());
    for (p, &t) in cloud.points.iter().zip(times) {
        if !(-1e-9..=period + 1e-9).contains(&t) {
            return Err(Error::OutOfRange {
                t,
                start: 0.0,
                end: period,
            });
        }
        let s = t / period;
        let start_from_point = exp_map(&delta.scaled(s));
        points.push(end_from_start.apply(&start_from_point.apply(p)));
    }
    Ok(PointCloud {
        points,
        timestamp: cloud.timestamp,
        per_point_time: cloud.per_point_time.clone(),
        sensor_id: cloud.sensor_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cloud_with_times(points: Vec<Vector3<f64>>, times: Vec<f64>) -> PointCloud {
        PointCloud {
            points,
            per_point_time: Some(times),
            ..Default::default()
        }
    }

    #[test]
    fn zero_motion_is_identity() {
        let c = cloud_with_times(vec![Vector3::new(1.0, 2.0, 3.0)], vec![0.05]);
        let pose = RigidTransform::from_translation(4.0, 0.0, 0.0);
        assert_eq!(motion_compensate(&c, &pose, &pose, 0.1).unwrap(), c);
    }

    #[test]
    fn mid_scan_point_shifts_half_the_motion() {
        let c = cloud_with_times(vec![Vector3::new(5.0, 0.0, 0.0)], vec![0.05]);
        let start = RigidTransform::identity();
        let end = RigidTransform::from_translation(1.0, 0.0, 0.0);
        let out = motion_compensate(&c, &start, &end, 0.1).unwrap();
        // captured from x = 0.5, expressed from x = 1.0
        assert!((out.points[0] - Vector3::new(4.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn requires_times() {
        let c = PointCloud::new(vec![Vector3::zeros()]);
        let t = RigidTransform::identity();
        assert!(matches!(motion_compensate(&c, &t, &t, 0.1), Err(Error::MissingPerPointTime)));
    }
}

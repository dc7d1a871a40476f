//! Point clouds and the per-scan preprocessing used by every stage.

pub(crate) mod covariance;
mod deskew;
mod keyframe;
pub mod kdtree;
pub mod pcd;

use std::collections::HashMap;

use nalgebra::Vector3;

pub use covariance::{estimate_covariances, neighborhood_covariance, regularize_covariance, PointCovariance, PLANE_EPSILON};
pub use deskew::motion_compensate;
pub use keyframe::{select_keyframes, KeyframeIndex, Trajectory};
pub use kdtree::KdTree;

use crate::se3::RigidTransform;

/// A single scan in its sensor frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Scan reference time, seconds.
    pub timestamp: f64,
    /// Capture time of each point relative to `timestamp`, seconds.
    pub per_point_time: Option<Vec<f64>>,
    pub sensor_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copy with every point mapped through `t`; per-point times are kept.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            timestamp: self.timestamp,
            per_point_time: self.per_point_time.clone(),
            sensor_id: self.sensor_id.clone(),
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.points.iter().all(|p| p.iter().all(|v| v.is_finite()));
        let times_ok = match &self.per_point_time {
            None => true,
            Some(ts) => ts.len() == self.points.len() && ts.windows(2).all(|w| w[0] <= w[1]),
        };
        finite && times_ok
    }
}

/// Replaces the points of every occupied voxel of side `leaf` by their centroid.
///
/// Output order follows the first occurrence of each voxel in the input.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> PointCloud {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cloud.len());
    let mut sums: Vec<(Vector3<f64>, f64, usize)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let t = cloud.per_point_time.as_ref().map_or(0.0, |ts| ts[i]);
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0.0, 0));
            sums.len() - 1
        });
        let s = &mut sums[slot];
        s.0 += p;
        s.1 += t;
        s.2 += 1;
    }
    let points = sums.iter().map(|(p, _, n)| p / *n as f64).collect();
    // Per-point times are no longer monotone after merging, so they are dropped.
    PointCloud {
        points,
        timestamp: cloud.timestamp,
        per_point_time: None,
        sensor_id: cloud.sensor_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_voxel_collapses_to_centroid() {
        let cloud = PointCloud::new(vec![Vector3::new(0.1, 0.1, 0.1), Vector3::new(0.3, 0.1, 0.1)]);
        let out = voxel_downsample(&cloud, 1.0);
        assert_eq!(out.points, vec![Vector3::new(0.2, 0.1, 0.1)]);
    }

    #[test]
    fn fine_leaf_keeps_points() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
        let out = voxel_downsample(&PointCloud::new(pts.clone()), 0.5);
        assert_eq!(out.points, pts);
    }

    #[test]
    fn outputs_stay_inside_their_voxel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..5000)
            .map(|_| Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)))
            .collect();
        let leaf = 0.7;
        let out = voxel_downsample(&PointCloud::new(pts.clone()), leaf);
        assert!(out.len() <= pts.len());
        for p in &out.points {
            let center = p.map(|v| ((v / leaf).floor() + 0.5) * leaf);
            assert!((p - center).norm() <= 3f64.sqrt() / 2.0 * leaf + 1e-12);
        }
    }
}

//! Ground extraction from the base map, patch roughness, and the leveling
//! transform from the base LiDAR to the virtual LiDAR.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::calib_lg::{fit_ground_plane, fit_plane_lsq, RansacParams};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::se3::{rotation_between_planes, PlaneModel, RigidTransform};

pub const MIN_PATCH_POINTS: usize = 50;

/// Fraction of keyframes that must yield a ground plane.
pub const MIN_GROUND_FRACTION: f64 = 0.3;

/// Ground-only points of the base map in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundMap {
    pub cloud: PointCloud,
    /// Keyframes whose scan produced a ground plane.
    pub keyframes_with_ground: usize,
}

/// Union of per-scan RANSAC ground inliers, mapped to the world by the base poses.
///
/// `clouds[k]` is the base scan of keyframe `k` in the sensor frame; the fit
/// runs in the GINS frame given by `g_l0` so the height band applies.
pub fn extract_ground_map(
    clouds: &[Vec<Vector3<f64>>],
    base_poses: &[RigidTransform],
    g_l0: &RigidTransform,
    h_g: f64,
    params: &RansacParams,
) -> Result<GroundMap> {
    let per_scan: Vec<Option<Vec<Vector3<f64>>>> = clouds
        .par_iter()
        .zip(base_poses)
        .map(|(c, pose)| {
            let in_g: Vec<_> = c.iter().map(|p| g_l0.apply(p)).collect();
            fit_ground_plane(&in_g, h_g, params)
                .ok()
                .map(|g| g.inlier_indices.iter().map(|&i| pose.apply(&c[i])).collect())
        })
        .collect();
    let found = per_scan.iter().filter(|s| s.is_some()).count();
    if clouds.is_empty() || (found as f64) < MIN_GROUND_FRACTION * clouds.len() as f64 {
        return Err(Error::NoGroundFound(format!(
            "{found} of {} keyframes yielded ground",
            clouds.len()
        )));
    }
    Ok(GroundMap {
        cloud: PointCloud::new(per_scan.into_iter().flatten().flatten().collect()),
        keyframes_with_ground: found,
    })
}

/// Population standard deviation of signed point-to-plane distances.
pub fn roughness(points: &[Vector3<f64>], plane: &PlaneModel) -> Result<f64> {
    if points.len() < MIN_PATCH_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_PATCH_POINTS,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let d: Vec<f64> = points.iter().map(|p| plane.signed_distance(p)).collect();
    let mean = d.iter().sum::<f64>() / n;
    Ok((d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundPatch {
    /// Keyframe whose pose centers the patch.
    pub keyframe: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
    /// Indices into the ground map.
    pub points: Vec<usize>,
    /// Least-squares plane of the patch, world frame.
    pub plane: PlaneModel,
    pub roughness: f64,
}

/// Patch of ground points within `radius` (horizontal distance) of the pose's
/// ground projection; `None` with fewer than the minimum number of points.
pub fn patch_at(ground: &[Vector3<f64>], pose: &RigidTransform, radius: f64, keyframe: usize) -> Option<GroundPatch> {
    let c = pose.translation;
    let r2 = radius * radius;
    let idx: Vec<usize> = (0..ground.len())
        .filter(|&i| {
            let d = ground[i] - c;
            d.x * d.x + d.y * d.y <= r2
        })
        .collect();
    if idx.len() < MIN_PATCH_POINTS {
        return None;
    }
    let pts: Vec<_> = idx.iter().map(|&i| ground[i]).collect();
    let plane = fit_plane_lsq(&pts)?;
    let rough = roughness(&pts, &plane).ok()?;
    let nz = plane.normal.z;
    let z = if nz.abs() > 1e-12 {
        -(plane.normal.x * c.x + plane.normal.y * c.y + plane.intercept) / nz
    } else {
        c.z
    };
    Some(GroundPatch {
        keyframe,
        center: Vector3::new(c.x, c.y, z),
        radius,
        points: idx,
        plane,
        roughness: rough,
    })
}

/// The lowest-roughness patch over all base poses; the earliest wins ties.
pub fn select_flattest_patch(ground: &[Vector3<f64>], base_poses: &[RigidTransform], radius: f64) -> Result<GroundPatch> {
    let patches: Vec<Option<GroundPatch>> = base_poses
        .par_iter()
        .enumerate()
        .map(|(k, p)| patch_at(ground, p, radius, k))
        .collect();
    patches
        .into_iter()
        .flatten()
        .reduce(|best, p| if p.roughness < best.roughness { p } else { best })
        .ok_or(Error::NoValidPatch)
}

/// `VL_L0`: levels the patch plane, seen from the base pose, onto `z = 0`.
pub fn vlidar_extrinsic(patch: &GroundPatch, base_pose: &RigidTransform) -> RigidTransform {
    let local = patch.plane.pulled_back(base_pose);
    rotation_between_planes(&local, &PlaneModel::horizontal())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(z: impl Fn(f64, f64) -> f64, half: f64, step: f64) -> Vec<Vector3<f64>> {
        let n = (2.0 * half / step) as i32;
        let mut out = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let (x, y) = (-half + i as f64 * step, -half + j as f64 * step);
                out.push(Vector3::new(x, y, z(x, y)));
            }
        }
        out
    }

    #[test]
    fn exact_plane_is_smooth() {
        let pts = grid(|x, y| 0.1 * x - 0.2 * y + 1.0, 5.0, 0.5);
        let plane = fit_plane_lsq(&pts).unwrap();
        assert!(roughness(&pts, &plane).unwrap() < 1e-12);
    }

    #[test]
    fn alternating_offsets() {
        let pts: Vec<_> = (0..100)
            .map(|i| Vector3::new(i as f64, 0.0, if i % 2 == 0 { 0.01 } else { -0.01 }))
            .collect();
        let r = roughness(&pts, &PlaneModel::horizontal()).unwrap();
        assert!((r - 0.01).abs() < 1e-15);
    }

    #[test]
    fn roughness_needs_points() {
        let pts = vec![Vector3::zeros(); 10];
        assert!(matches!(
            roughness(&pts, &PlaneModel::horizontal()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn flat_zone_beats_bumps() {
        let mut g = grid(|_, _| 0.0, 10.0, 0.5);
        g.extend(
            grid(|x, y| 0.2 * (x * 2.0).sin() * (y * 2.0).cos(), 10.0, 0.5)
                .into_iter()
                .map(|p| p + Vector3::new(40.0, 0.0, 0.0)),
        );
        let poses = [
            RigidTransform::from_translation(40.0, 0.0, 2.0),
            RigidTransform::from_translation(0.0, 0.0, 2.0),
        ];
        let p = select_flattest_patch(&g, &poses, 8.0).unwrap();
        assert_eq!(p.keyframe, 1);
        assert!(p.center.x.abs() < 1e-9);
    }

    #[test]
    fn empty_patches_fail() {
        let g = grid(|_, _| 0.0, 1.0, 0.5);
        let poses = [RigidTransform::from_translation(100.0, 0.0, 0.0)];
        assert!(matches!(select_flattest_patch(&g, &poses, 10.0), Err(Error::NoValidPatch)));
    }

    #[test]
    fn level_base_at_height_gives_shift() {
        let g = grid(|_, _| 0.0, 10.0, 1.0);
        let base = RigidTransform::from_translation(0.0, 0.0, 1.5);
        let p = patch_at(&g, &base, 10.0, 0).unwrap();
        let vl = vlidar_extrinsic(&p, &base);
        assert!(vl.rotation.angle() < 1e-12);
        assert!((vl.translation - Vector3::new(0.0, 0.0, 1.5)).norm() < 1e-12);
    }
}

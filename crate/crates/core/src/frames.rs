//! Keyframe scans prepared for matching, and correspondence search between them.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::cloud::{motion_compensate, voxel_downsample, KdTree, PointCloud, PointCovariance};
use crate::error::{Error, Result};
use crate::factors::{build_correspondences, Chain, MatchGroup};
use crate::se3::RigidTransform;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    pub voxel_leaf_m: f64,
    pub k_neighbors: usize,
    pub gate_m: f64,
    pub max_corr_per_pair: usize,
    pub pair_radius_m: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            voxel_leaf_m: 0.3,
            k_neighbors: 20,
            gate_m: 1.0,
            max_corr_per_pair: 2000,
            pair_radius_m: 15.0,
        }
    }
}

/// A scan ready for matching: deskewed to the scan end, downsampled, with
/// per-point covariances and a search tree, all in the sensor frame.
#[derive(Clone, Debug)]
pub struct Frame {
    pub sensor: usize,
    pub keyframe: usize,
    pub points: Vec<Vector3<f64>>,
    pub covariances: Vec<PointCovariance>,
    pub tree: KdTree,
}

/// Sensor motion over one scan, as world poses at scan start and end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanMotion {
    pub start: RigidTransform,
    pub end: RigidTransform,
    pub period: f64,
}

/// Deskews (when per-point times exist and `motion` is given), downsamples and
/// estimates covariances. Returns the frame and whether deskewing ran.
pub fn prepare_frame(
    raw: &PointCloud,
    motion: Option<&ScanMotion>,
    sensor: usize,
    keyframe: usize,
    params: &MatchParams,
) -> Result<(Frame, bool)> {
    let (cloud, deskewed) = match (motion, &raw.per_point_time) {
        (Some(m), Some(_)) if m.period > 0.0 => (motion_compensate(raw, &m.start, &m.end, m.period)?, true),
        _ => (raw.clone(), false),
    };
    let cloud = if params.voxel_leaf_m > 0.0 {
        voxel_downsample(&cloud, params.voxel_leaf_m)
    } else {
        cloud
    };
    if cloud.len() < params.k_neighbors + 1 {
        return Err(Error::TooFewPoints {
            needed: params.k_neighbors + 1,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    let covariances = crate::cloud::covariance::covariances_with_tree(&cloud.points, &tree, params.k_neighbors);
    Ok((
        Frame {
            sensor,
            keyframe,
            points: cloud.points,
            covariances,
            tree,
        },
        deskewed,
    ))
}

/// Unordered frame pairs `(a, b)`, `a < b`, whose anchor positions lie within `radius`.
pub fn frame_pairs(positions: &[Vector3<f64>], radius: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            if (positions[a] - positions[b]).norm() <= radius {
                out.push((a, b));
            }
        }
    }
    out
}

/// Every `stride`-th element so that at most `max` remain.
pub fn stride_subsample<T: Copy>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max || max == 0 {
        return items.to_vec();
    }
    let stride = items.len().div_ceil(max);
    items.iter().step_by(stride).copied().collect()
}

/// One match group per frame pair with at least one gated correspondence.
///
/// `poses[f]` is the current world pose of frame `f` (used for association),
/// `chains[f]` maps the frame's points to the world through the variables.
pub fn build_match_groups(
    frames: &[Frame],
    poses: &[RigidTransform],
    chains: &[Chain],
    pairs: &[(usize, usize)],
    values: &[RigidTransform],
    params: &MatchParams,
) -> Result<Vec<MatchGroup>> {
    let groups: Vec<Option<MatchGroup>> = pairs
        .par_iter()
        .map(|&(a, b)| -> Result<Option<MatchGroup>> {
            let fa = &frames[a];
            let fb = &frames[b];
            let b_from_a = poses[b].inverse().compose(&poses[a]);
            let moved: Vec<Vector3<f64>> = fa.points.iter().map(|p| b_from_a.apply(p)).collect();
            let corr = build_correspondences(a, &moved, b, &fb.tree, params.gate_m);
            let corr = stride_subsample(&corr, params.max_corr_per_pair);
            if corr.is_empty() {
                return Ok(None);
            }
            let mut g = MatchGroup::new(chains[a].clone(), chains[b].clone(), values);
            for c in corr {
                g.push(
                    c,
                    fa.points[c.a.index],
                    &fa.covariances[c.a.index],
                    fb.points[c.b.index],
                    &fb.covariances[c.b.index],
                )?;
            }
            Ok(Some(g))
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Number of correspondences over all groups.
pub fn correspondence_count(groups: &[MatchGroup]) -> usize {
    groups.iter().map(|g| g.len()).sum()
}

/// Points of all frames mapped to the world by `poses`.
pub fn stitch(frames: &[Frame], poses: &[RigidTransform]) -> PointCloud {
    PointCloud::new(
        frames
            .iter()
            .zip(poses)
            .flat_map(|(f, t)| f.points.iter().map(move |p| t.apply(p)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_keeps_at_most_max() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(stride_subsample(&v, 4), vec![0, 3, 6, 9]);
        assert_eq!(stride_subsample(&v, 10), v);
        assert_eq!(stride_subsample(&v, 5), vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn pairs_respect_radius() {
        let p = vec![Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0), Vector3::new(20.0, 0.0, 0.0)];
        assert_eq!(frame_pairs(&p, 15.0), vec![(0, 1), (1, 2)]);
    }
}

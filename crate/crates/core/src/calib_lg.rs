//! LiDAR-GINS extrinsics: rotation-only global initialization, batch
//! refinement against fixed GINS poses, and ground-based height alignment.

use nalgebra::{SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::{voxel_downsample, KdTree, PointCloud};
use crate::error::{Error, Result};
use crate::factors::Chain;
use crate::frames::{build_match_groups, correspondence_count, frame_pairs, stride_subsample, MatchParams};
use crate::rig::KeyframedScans;
use crate::se3::{extrinsic_error, PlaneModel, RigidTransform};
use crate::solver::{
    direct_search, lm_minimize, DirectResult, Factor, LmOptions, RobustKernel, SearchSpace, SolverReport,
    Truncation, VariableBlock,
};

/// Weakly informed extrinsic directions (the height under planar motion) are
/// left at their initial value.
pub const LG_TRUNCATION: Truncation = Truncation {
    relative: 1e-4,
    absolute: 1.0,
    rotation_length_m: 10.0,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitParams {
    pub voxel_leaf_m: f64,
    pub map_points_per_frame: usize,
    pub query_points_per_frame: usize,
    pub gate_m: f64,
    pub max_iterations: usize,
    pub max_evaluations: usize,
    pub min_yaw_span_deg: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            voxel_leaf_m: 0.5,
            map_points_per_frame: 600,
            query_points_per_frame: 120,
            gate_m: 1.0,
            max_iterations: 200,
            max_evaluations: 1200,
            min_yaw_span_deg: 10.0,
        }
    }
}

/// Heading of a pose, radians.
pub fn yaw_of(t: &RigidTransform) -> f64 {
    let r = t.rotation_matrix();
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Range of the unwrapped heading along a pose sequence, degrees.
pub fn yaw_span_deg(poses: &[RigidTransform]) -> f64 {
    let Some(first) = poses.first() else { return 0.0 };
    let mut prev = yaw_of(first);
    let (mut acc, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
    for p in &poses[1..] {
        let y = yaw_of(p);
        let mut d = y - prev;
        d = (d + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        acc += d;
        lo = lo.min(acc);
        hi = hi.max(acc);
        prev = y;
    }
    (hi - lo).to_degrees().min(360.0)
}

/// Mean truncated distance from sampled points of each frame to the nearest
/// point of any other frame, with the frames stitched through `extrinsic`.
pub fn stitching_objective(
    map: &[Vec<nalgebra::Vector3<f64>>],
    queries: &[Vec<nalgebra::Vector3<f64>>],
    poses: &[RigidTransform],
    extrinsic: &RigidTransform,
    gate: f64,
) -> f64 {
    let mut pts = Vec::new();
    let mut owner = Vec::new();
    for (f, (cloud, pose)) in map.iter().zip(poses).enumerate() {
        let t = pose.compose(extrinsic);
        pts.extend(cloud.iter().map(|p| t.apply(p)));
        owner.extend(std::iter::repeat_n(f, cloud.len()));
    }
    let tree = KdTree::build(&pts);
    let sums: Vec<(f64, usize)> = queries
        .par_iter()
        .enumerate()
        .map(|(f, qs)| {
            let t = poses[f].compose(extrinsic);
            let mut s = 0.0;
            for q in qs {
                let w = t.apply(q);
                let d = tree
                    .nearest_filtered(&w, gate, |j| owner[j] != f)
                    .map_or(gate, |(_, d)| d);
                s += d;
            }
            (s, qs.len())
        })
        .collect();
    let (s, n) = sums.iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        gate
    } else {
        s / n as f64
    }
}

/// Rotation-only estimate of `G_L` (translation zero) by DIRECT over
/// roll/pitch in ±30° and full yaw.
pub fn initialize_rotation(
    clouds: &[PointCloud],
    gins_poses: &[RigidTransform],
    params: &InitParams,
) -> Result<(RigidTransform, DirectResult)> {
    let span = yaw_span_deg(gins_poses);
    if clouds.len() < 2 || span < params.min_yaw_span_deg {
        return Err(Error::InsufficientMotion { yaw_span_deg: span });
    }
    let coarse: Vec<Vec<_>> = clouds
        .par_iter()
        .map(|c| voxel_downsample(c, params.voxel_leaf_m).points)
        .collect();
    let map: Vec<Vec<_>> = coarse
        .iter()
        .map(|p| stride_subsample(p, params.map_points_per_frame))
        .collect();
    let queries: Vec<Vec<_>> = coarse
        .iter()
        .map(|p| stride_subsample(p, params.query_points_per_frame))
        .collect();
    let lim = 30f64.to_radians();
    let pi = std::f64::consts::PI;
    let space = SearchSpace::new(vec![-lim, -lim, -pi], vec![lim, lim, pi])?
        .with_budget(params.max_iterations, params.max_evaluations);
    let res = direct_search(
        |x| {
            let e = RigidTransform::from_rpy(x[0], x[1], x[2], Vector3::zeros());
            stitching_objective(&map, &queries, gins_poses, &e, params.gate_m)
        },
        &space,
    )?;
    let x = &res.argmin;
    Ok((RigidTransform::from_rpy(x[0], x[1], x[2], Vector3::zeros()), res))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineParams {
    pub matching: MatchParams,
    pub kernel: RobustKernel,
    pub max_rounds: usize,
    pub tol_trans_m: f64,
    pub tol_rot_deg: f64,
    pub lm: LmOptions,
    pub truncation: Option<Truncation>,
    /// Allowed relative growth of the mean per-correspondence cost between rounds.
    pub divergence_ratio: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            matching: MatchParams::default(),
            kernel: RobustKernel::default(),
            max_rounds: 5,
            tol_trans_m: 1e-4,
            tol_rot_deg: 0.01,
            lm: LmOptions {
                max_iterations: 30,
                ..LmOptions::default()
            },
            truncation: Some(LG_TRUNCATION),
            divergence_ratio: 1.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub correspondences: usize,
    pub mean_cost: f64,
    pub report: SolverReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineResult {
    pub extrinsic: RigidTransform,
    pub rounds: Vec<RoundStats>,
    pub converged: bool,
}

impl RefineResult {
    pub fn last_report(&self) -> Option<&SolverReport> {
        self.rounds.last().map(|r| &r.report)
    }
}

pub(crate) fn check_divergence(rounds: &[RoundStats], ratio: f64) -> Result<()> {
    if let [.., a, b] = rounds {
        if b.mean_cost > a.mean_cost * ratio {
            return Err(Error::DivergedSolve {
                previous: a.mean_cost,
                current: b.mean_cost,
            });
        }
    }
    Ok(())
}

pub(crate) fn small_change(a: &RigidTransform, b: &RigidTransform, tol_m: f64, tol_deg: f64) -> bool {
    let e = extrinsic_error(a, b);
    e.trans_m < tol_m && e.rot_deg < tol_deg
}

/// Refines one sensor's `G_L` against fixed GINS poses by matching its own
/// keyframes to each other; re-associates and re-deskews every round.
///
/// A round that raises the mean cost is discarded and ends the refinement.
pub fn calibrate_lidar_gins(
    scans: &KeyframedScans,
    initial: &RigidTransform,
    params: &RefineParams,
) -> Result<RefineResult> {
    if scans.len() < 2 {
        return Err(Error::InsufficientMotion { yaw_span_deg: 0.0 });
    }
    let positions: Vec<_> = scans.end_poses.iter().map(|p| p.translation).collect();
    let pairs = frame_pairs(&positions, params.matching.pair_radius_m);
    let chains: Vec<Chain> = scans.end_poses.iter().map(|p| Chain::new().constant(*p).var(0)).collect();
    let lm = LmOptions {
        kernel: Some(params.kernel),
        truncation: params.truncation,
        ..params.lm.clone()
    };

    let mut ext = *initial;
    let mut rounds = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_rounds {
        let frames = scans.prepare(Some(&ext), &params.matching)?;
        let poses: Vec<_> = scans.end_poses.iter().map(|p| p.compose(&ext)).collect();
        let groups = build_match_groups(&frames, &poses, &chains, &pairs, &[ext], &params.matching)?;
        let n = correspondence_count(&groups);
        if n == 0 {
            return Err(Error::NumericalFailure("no correspondences between keyframes".into()));
        }
        let factors: Vec<Box<dyn Factor>> = groups.into_iter().map(|g| Box::new(g) as Box<dyn Factor>).collect();
        let mut vars = vec![VariableBlock::extrinsic(ext)];
        let report = lm_minimize(&mut vars, &factors, &lm)?;
        let next = vars[0].value;
        rounds.push(RoundStats {
            correspondences: n,
            mean_cost: report.final_cost / n as f64,
            report,
        });
        check_divergence(&rounds, params.divergence_ratio)?;
        if let [.., a, b] = rounds.as_slice() {
            if b.mean_cost > a.mean_cost {
                rounds.pop();
                converged = true;
                break;
            }
        }
        let done = small_change(&next, &ext, params.tol_trans_m, params.tol_rot_deg);
        ext = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(RefineResult {
        extrinsic: ext,
        rounds,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_thresh_m: f64,
    pub min_inlier_ratio: f64,
    pub max_tilt_deg: f64,
    /// Half-width of the height band around `-h_G` that candidate points must fall in.
    pub band_m: f64,
    pub min_points: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_thresh_m: 0.05,
            min_inlier_ratio: 0.2,
            max_tilt_deg: 30.0,
            band_m: 2.0,
            min_points: 100,
            seed: 0,
        }
    }
}

/// A fitted ground plane with its support.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundPlane {
    pub plane: PlaneModel,
    pub inliers: usize,
    pub rms: f64,
    /// Indices of the inliers in the input slice.
    pub inlier_indices: Vec<usize>,
}

/// Least-squares plane through points: centroid and smallest-eigenvalue normal.
pub fn fit_plane_lsq(points: &[Vector3<f64>]) -> Option<PlaneModel> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let i = eig.eigenvalues.imin();
    let normal: Vector3<f64> = eig.eigenvectors.column(i).into_owned();
    if !normal.iter().all(|x| x.is_finite()) || normal.norm() < 0.5 {
        return None;
    }
    Some(PlaneModel::new(normal, -normal.dot(&c)))
}

/// RANSAC ground plane in the GINS frame, refined by least squares on the inliers.
pub fn fit_ground_plane(points: &[Vector3<f64>], h_g: f64, params: &RansacParams) -> Result<GroundPlane> {
    let lo = -h_g - params.band_m;
    let hi = -h_g + params.band_m;
    let cand: Vec<usize> = (0..points.len()).filter(|&i| (lo..=hi).contains(&points[i].z)).collect();
    if cand.len() < params.min_points {
        return Err(Error::NoGroundFound(format!(
            "{} points in the ground band, need {}",
            cand.len(),
            params.min_points
        )));
    }
    let max_tilt = params.max_tilt_deg.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let count = |plane: &PlaneModel| {
        cand.iter()
            .filter(|&&i| plane.signed_distance(&points[i]).abs() <= params.inlier_thresh_m)
            .count()
    };
    let mut best: Option<(PlaneModel, usize)> = None;
    for _ in 0..params.iterations {
        let a = cand[rng.random_range(0..cand.len())];
        let b = cand[rng.random_range(0..cand.len())];
        let c = cand[rng.random_range(0..cand.len())];
        let (pa, pb, pc) = (points[a], points[b], points[c]);
        let n = (pb - pa).cross(&(pc - pa));
        if n.norm() < 1e-9 {
            continue;
        }
        let plane = PlaneModel::new(n, -n.dot(&pa));
        if plane.tilt() > max_tilt {
            continue;
        }
        let k = count(&plane);
        if best.is_none_or(|(_, bk)| k > bk) {
            best = Some((plane, k));
        }
    }
    let Some((plane, _)) = best else {
        return Err(Error::NoGroundFound("no plane hypothesis passed the tilt gate".into()));
    };
    let inlier_of = |pl: &PlaneModel| -> Vec<usize> {
        cand.iter()
            .copied()
            .filter(|&i| pl.signed_distance(&points[i]).abs() <= params.inlier_thresh_m)
            .collect()
    };
    let inl = inlier_of(&plane);
    let refined = fit_plane_lsq(&inl.iter().map(|&i| points[i]).collect::<Vec<_>>()).unwrap_or(plane);
    let inl = inlier_of(&refined);
    let ratio = inl.len() as f64 / cand.len() as f64;
    if ratio < params.min_inlier_ratio {
        return Err(Error::NoGroundFound(format!(
            "inlier ratio {ratio:.3} below {}",
            params.min_inlier_ratio
        )));
    }
    if refined.tilt() > max_tilt {
        return Err(Error::NoGroundFound(format!(
            "plane tilted {:.2} deg from horizontal",
            refined.tilt().to_degrees()
        )));
    }
    let rms = (inl.iter().map(|&i| refined.signed_distance(&points[i]).powi(2)).sum::<f64>() / inl.len() as f64).sqrt();
    Ok(GroundPlane {
        plane: refined,
        inliers: inl.len(),
        rms,
        inlier_indices: inl,
    })
}

/// Index of the pose with the smallest `|pitch| + |roll|`; the first wins ties.
pub fn flattest_pose(poses: &[RigidTransform]) -> Option<usize> {
    let score = |p: &RigidTransform| {
        let (r, pi, _) = p.rotation.euler_angles();
        r.abs() + pi.abs()
    };
    (0..poses.len()).min_by(|&a, &b| score(&poses[a]).total_cmp(&score(&poses[b])).then(a.cmp(&b)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundAlignResult {
    pub extrinsics: Vec<RigidTransform>,
    /// `d_m - d_0` per sensor; zero for the base.
    pub delta_h: Vec<f64>,
    pub planes: Vec<GroundPlane>,
}

/// Shifts each non-base `G_Lm` by `Tz(d_m - d_0)` so every sensor's ground
/// plane in the GINS frame has the base sensor's intercept.
///
/// `clouds[m]` holds one scan of sensor `m` in its own frame.
pub fn ground_align(
    extrinsics: &[RigidTransform],
    clouds: &[Vec<Vector3<f64>>],
    base: usize,
    h_g: f64,
    params: &RansacParams,
) -> Result<GroundAlignResult> {
    let planes = extrinsics
        .iter()
        .zip(clouds)
        .map(|(e, c)| {
            let in_g: Vec<_> = c.iter().map(|p| e.apply(p)).collect();
            fit_ground_plane(&in_g, h_g, params)
        })
        .collect::<Result<Vec<_>>>()?;
    let d0 = planes[base].plane.intercept;
    let mut delta_h = Vec::with_capacity(planes.len());
    let mut out = Vec::with_capacity(planes.len());
    for (m, (e, p)) in extrinsics.iter().zip(&planes).enumerate() {
        let dh = if m == base { 0.0 } else { p.plane.intercept - d0 };
        delta_h.push(dh);
        out.push(RigidTransform::z_shift(dh).compose(e));
    }
    Ok(GroundAlignResult {
        extrinsics: out,
        delta_h,
        planes,
    })
}

//! Base-LiDAR poses and multi-LiDAR extrinsics `L0_Lm` from matching every
//! sensor's keyframes against every other's.

use crate::calib_lg::{check_divergence, small_change, RefineParams, RoundStats};
use crate::error::{Error, Result};
use crate::factors::Chain;
use crate::frames::{build_match_groups, correspondence_count, frame_pairs, Frame};
use crate::rig::KeyframedScans;
use crate::se3::RigidTransform;
use crate::solver::{lm_minimize, normal_matrix, scaled_condition_number, Factor, LmOptions, VariableBlock};

/// Largest acceptable condition number of the Jacobi-scaled normal matrix.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// `W_L0 = W_G * G_L0` at every keyframe.
pub fn init_base_poses(gins: &[RigidTransform], g_l0: &RigidTransform) -> Vec<RigidTransform> {
    gins.iter().map(|w| w.compose(g_l0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLidarResult {
    /// `L0_Lm` per sensor; identity for the base.
    pub extrinsics: Vec<RigidTransform>,
    /// Refined `W_L0` per keyframe.
    pub base_poses: Vec<RigidTransform>,
    pub rounds: Vec<RoundStats>,
    pub converged: bool,
    pub condition_number: f64,
}

/// Variable layout: keyframe poses first, then one extrinsic per non-base sensor.
pub(crate) fn extrinsic_slots(n_sensors: usize, base: usize, first: usize) -> Vec<Option<usize>> {
    let mut next = first;
    (0..n_sensors)
        .map(|m| {
            if m == base {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect()
}

/// Jointly refines base poses (first one fixed) and `L0_Lm`.
///
/// `scans[m]` are the keyframed scans of sensor `m`; `g_l0` is only used to
/// deskew, together with the current `L0_Lm`.
pub fn calibrate_multi_lidar(
    scans: &[KeyframedScans],
    base: usize,
    base_poses: &[RigidTransform],
    g_l0: &RigidTransform,
    initial: &[RigidTransform],
    params: &RefineParams,
) -> Result<MultiLidarResult> {
    let k = base_poses.len();
    if k < 2 {
        return Err(Error::InsufficientMotion { yaw_span_deg: 0.0 });
    }
    let slots = extrinsic_slots(scans.len(), base, k);
    let lm = LmOptions {
        kernel: Some(params.kernel),
        truncation: None,
        ..params.lm.clone()
    };

    let mut poses = base_poses.to_vec();
    let mut ext = initial.to_vec();
    ext[base] = RigidTransform::identity();
    let mut rounds = Vec::new();
    let mut converged = false;
    let mut condition_number = f64::NAN;
    for _ in 0..params.max_rounds {
        let mut frames: Vec<Frame> = Vec::new();
        for s in scans {
            let deskew = g_l0.compose(&ext[s.sensor]);
            frames.extend(s.prepare(Some(&deskew), &params.matching)?);
        }
        let mut values = poses.clone();
        for (m, slot) in slots.iter().enumerate() {
            if slot.is_some() {
                values.push(ext[m]);
            }
        }
        let frame_poses: Vec<_> = frames.iter().map(|f| poses[f.keyframe].compose(&ext[f.sensor])).collect();
        let chains: Vec<Chain> = frames
            .iter()
            .map(|f| match slots[f.sensor] {
                Some(e) => Chain::new().var(f.keyframe).var(e),
                None => Chain::new().var(f.keyframe),
            })
            .collect();
        let positions: Vec<_> = frames.iter().map(|f| poses[f.keyframe].translation).collect();
        let pairs = frame_pairs(&positions, params.matching.pair_radius_m);
        let groups = build_match_groups(&frames, &frame_poses, &chains, &pairs, &values, &params.matching)?;
        let n = correspondence_count(&groups);
        if n == 0 {
            return Err(Error::NumericalFailure("no correspondences between keyframes".into()));
        }
        let factors: Vec<Box<dyn Factor>> = groups.into_iter().map(|g| Box::new(g) as Box<dyn Factor>).collect();
        let mut vars: Vec<VariableBlock> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i < k {
                    let b = VariableBlock::pose(*v);
                    if i == 0 {
                        b.fixed()
                    } else {
                        b
                    }
                } else {
                    VariableBlock::extrinsic(*v)
                }
            })
            .collect();
        condition_number = scaled_condition_number(&normal_matrix(&vars, &factors, lm.kernel)?);
        if !(condition_number <= MAX_CONDITION_NUMBER) {
            return Err(Error::DegenerateGeometry(condition_number));
        }
        let report = lm_minimize(&mut vars, &factors, &lm)?;
        rounds.push(RoundStats {
            correspondences: n,
            mean_cost: report.final_cost / n as f64,
            report,
        });
        check_divergence(&rounds, params.divergence_ratio)?;
        let mut done = true;
        for (m, slot) in slots.iter().enumerate() {
            if let Some(e) = slot {
                let next = vars[*e].value;
                done &= small_change(&next, &ext[m], params.tol_trans_m, params.tol_rot_deg);
                ext[m] = next;
            }
        }
        for (p, v) in poses.iter_mut().zip(&vars) {
            *p = v.value;
        }
        if done {
            converged = true;
            break;
        }
    }
    Ok(MultiLidarResult {
        extrinsics: ext,
        base_poses: poses,
        rounds,
        converged,
        condition_number,
    })
}

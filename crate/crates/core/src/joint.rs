//! Unified factor graph over the VLiDAR-GINS extrinsic, the multi-LiDAR
//! extrinsics, GINS poses and VLiDAR poses.

use std::ops::Range;

use nalgebra::Vector6;

use crate::calib_lg::{check_divergence, small_change, RefineParams, RoundStats};
use crate::calib_ml::extrinsic_slots;
use crate::error::{Error, Result};
use crate::factors::{default_motion_covariance, Chain, HeightObservation, LogFactor, MotionVars};
use crate::frames::{build_match_groups, correspondence_count, frame_pairs, Frame};
use crate::rig::KeyframedScans;
use crate::se3::RigidTransform;
use crate::solver::{lm_minimize, total_cost, Factor, LmOptions, RobustKernel, Truncation, VariableBlock};

/// Directions carrying less than unit information are left untouched.
pub const JOINT_TRUNCATION: Truncation = Truncation {
    relative: 1e-12,
    absolute: 1.0,
    rotation_length_m: 10.0,
};

#[derive(Clone, Debug, PartialEq)]
pub struct JointParams {
    pub refine: RefineParams,
    pub height_factor: bool,
    pub height: HeightObservation,
    pub prior_sigma_m: f64,
    pub prior_sigma_deg: f64,
    pub motion_variances: Vector6<f64>,
}

impl JointParams {
    pub fn new(h_g: f64) -> Self {
        Self {
            refine: RefineParams {
                max_rounds: 3,
                truncation: Some(JOINT_TRUNCATION),
                ..RefineParams::default()
            },
            height_factor: true,
            height: HeightObservation::new(h_g),
            prior_sigma_m: 0.05,
            prior_sigma_deg: 0.2,
            motion_variances: default_motion_covariance(),
        }
    }

    fn prior_sigmas(&self) -> Vector6<f64> {
        let r = self.prior_sigma_deg.to_radians();
        let t = self.prior_sigma_m;
        Vector6::new(r, r, r, t, t, t)
    }
}

/// Values of every block of the joint problem.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub g_vl: RigidTransform,
    /// Held constant during the solve.
    pub vl_l0: RigidTransform,
    /// `L0_Lm` per sensor; identity for the base.
    pub l0_lm: Vec<RigidTransform>,
    /// `W_G` per keyframe.
    pub gins: Vec<RigidTransform>,
    /// `W_VL` per keyframe.
    pub vl_poses: Vec<RigidTransform>,
}

impl JointState {
    /// Starting point from the multi-LiDAR stage: `G_VL = G_L0 * VL_L0^-1`,
    /// `W_VL = W_L0 * VL_L0^-1`.
    pub fn from_stages(
        g_l0: &RigidTransform,
        vl_l0: &RigidTransform,
        l0_lm: &[RigidTransform],
        gins: &[RigidTransform],
        base_poses: &[RigidTransform],
    ) -> Self {
        let l0_vl = vl_l0.inverse();
        Self {
            g_vl: g_l0.compose(&l0_vl),
            vl_l0: *vl_l0,
            l0_lm: l0_lm.to_vec(),
            gins: gins.to_vec(),
            vl_poses: base_poses.iter().map(|p| p.compose(&l0_vl)).collect(),
        }
    }

    pub fn g_l0(&self) -> RigidTransform {
        self.g_vl.compose(&self.vl_l0)
    }
}

/// Where each block lives in the variable vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLayout {
    pub g_vl: usize,
    pub extrinsics: Vec<Option<usize>>,
    pub gins_first: usize,
    pub vl_first: usize,
    pub keyframes: usize,
}

impl GraphLayout {
    pub fn new(n_sensors: usize, base: usize, keyframes: usize) -> Self {
        let extrinsics = extrinsic_slots(n_sensors, base, 1);
        let n_ext = extrinsics.iter().flatten().count();
        Self {
            g_vl: 0,
            extrinsics,
            gins_first: 1 + n_ext,
            vl_first: 1 + n_ext + keyframes,
            keyframes,
        }
    }

    pub fn gins(&self, k: usize) -> usize {
        self.gins_first + k
    }

    pub fn vl(&self, k: usize) -> usize {
        self.vl_first + k
    }

    pub fn len(&self) -> usize {
        self.vl_first + self.keyframes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Factor ranges by family, in the order the factors are stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorFamilies {
    pub height: Range<usize>,
    pub type2: Range<usize>,
    pub type3: Range<usize>,
    pub motion: Range<usize>,
    pub prior: Range<usize>,
}

pub struct FactorGraph {
    pub variables: Vec<VariableBlock>,
    pub factors: Vec<Box<dyn Factor>>,
    pub layout: GraphLayout,
    pub families: FactorFamilies,
    pub correspondences: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyCosts {
    pub height: f64,
    pub type2: f64,
    pub type3: f64,
    pub motion: f64,
    pub prior: f64,
}

impl FamilyCosts {
    pub fn total(&self) -> f64 {
        self.height + self.type2 + self.type3 + self.motion + self.prior
    }
}

impl FactorGraph {
    pub fn values(&self) -> Vec<RigidTransform> {
        self.variables.iter().map(|v| v.value).collect()
    }

    pub fn family_costs(&self, values: &[RigidTransform], kernel: Option<RobustKernel>) -> Result<FamilyCosts> {
        let c = |r: &Range<usize>| total_cost(&self.factors[r.clone()], values, kernel);
        Ok(FamilyCosts {
            height: c(&self.families.height)?,
            type2: c(&self.families.type2)?,
            type3: c(&self.families.type3)?,
            motion: c(&self.families.motion)?,
            prior: c(&self.families.prior)?,
        })
    }

    pub fn state(&self, template: &JointState) -> JointState {
        let l = &self.layout;
        let v = |i: usize| self.variables[i].value;
        JointState {
            g_vl: v(l.g_vl),
            vl_l0: template.vl_l0,
            l0_lm: l
                .extrinsics
                .iter()
                .map(|s| s.map_or(RigidTransform::identity(), v))
                .collect(),
            gins: (0..l.keyframes).map(|k| v(l.gins(k))).collect(),
            vl_poses: (0..l.keyframes).map(|k| v(l.vl(k))).collect(),
        }
    }
}

/// Frames of all sensors deskewed with the extrinsics implied by `state`.
pub fn prepare_frames(scans: &[KeyframedScans], state: &JointState, refine: &RefineParams) -> Result<Vec<Frame>> {
    let g_l0 = state.g_l0();
    let mut frames = Vec::new();
    for s in scans {
        let e = g_l0.compose(&state.l0_lm[s.sensor]);
        frames.extend(s.prepare(Some(&e), &refine.matching)?);
    }
    Ok(frames)
}

/// Builds variables and all factor families around `state`.
///
/// `measured` are the GINS poses the priors pull towards. The first GINS pose
/// and the first VLiDAR pose are fixed.
pub fn assemble_graph(
    frames: &[Frame],
    base: usize,
    state: &JointState,
    measured: &[RigidTransform],
    params: &JointParams,
) -> Result<FactorGraph> {
    let k = state.gins.len();
    if k == 0 || state.vl_poses.len() != k || measured.len() != k {
        return Err(Error::IncompleteStages(format!(
            "{k} GINS poses, {} VLiDAR poses, {} measurements",
            state.vl_poses.len(),
            measured.len()
        )));
    }
    let layout = GraphLayout::new(state.l0_lm.len(), base, k);
    let mut variables = vec![VariableBlock::extrinsic(state.g_vl); layout.len()];
    for (m, s) in layout.extrinsics.iter().enumerate() {
        if let Some(i) = s {
            variables[*i] = VariableBlock::extrinsic(state.l0_lm[m]);
        }
    }
    for j in 0..k {
        let g = VariableBlock::pose(state.gins[j]);
        let v = VariableBlock::pose(state.vl_poses[j]);
        variables[layout.gins(j)] = if j == 0 { g.fixed() } else { g };
        variables[layout.vl(j)] = if j == 0 { v.fixed() } else { v };
    }
    let values: Vec<RigidTransform> = variables.iter().map(|v| v.value).collect();

    let mut factors: Vec<Box<dyn Factor>> = Vec::new();
    let mut families = FactorFamilies::default();

    let start = factors.len();
    if params.height_factor {
        factors.push(Box::new(LogFactor::height(layout.g_vl, &params.height)));
    }
    families.height = start..factors.len();

    let radius = params.refine.matching.pair_radius_m;
    let mut correspondences = 0;

    // type 2: base clouds through GINS poses and G_VL
    let base_frames: Vec<Frame> = frames.iter().filter(|f| f.sensor == base).cloned().collect();
    let poses: Vec<_> = base_frames
        .iter()
        .map(|f| state.gins[f.keyframe].compose(&state.g_vl).compose(&state.vl_l0))
        .collect();
    let chains: Vec<Chain> = base_frames
        .iter()
        .map(|f| Chain::new().var(layout.gins(f.keyframe)).var(layout.g_vl).constant(state.vl_l0))
        .collect();
    let positions: Vec<_> = poses.iter().map(|p| p.translation).collect();
    let pairs = frame_pairs(&positions, radius);
    let groups = build_match_groups(&base_frames, &poses, &chains, &pairs, &values, &params.refine.matching)?;
    correspondences += correspondence_count(&groups);
    let start = factors.len();
    factors.extend(groups.into_iter().map(|g| Box::new(g) as Box<dyn Factor>));
    families.type2 = start..factors.len();

    // type 3: every sensor through VLiDAR poses and L0_Lm
    let poses: Vec<_> = frames
        .iter()
        .map(|f| {
            state.vl_poses[f.keyframe]
                .compose(&state.vl_l0)
                .compose(&state.l0_lm[f.sensor])
        })
        .collect();
    let chains: Vec<Chain> = frames
        .iter()
        .map(|f| {
            let c = Chain::new().var(layout.vl(f.keyframe)).constant(state.vl_l0);
            match layout.extrinsics[f.sensor] {
                Some(e) => c.var(e),
                None => c,
            }
        })
        .collect();
    let positions: Vec<_> = poses.iter().map(|p| p.translation).collect();
    let pairs = frame_pairs(&positions, radius);
    let groups = build_match_groups(frames, &poses, &chains, &pairs, &values, &params.refine.matching)?;
    correspondences += correspondence_count(&groups);
    let start = factors.len();
    factors.extend(groups.into_iter().map(|g| Box::new(g) as Box<dyn Factor>));
    families.type3 = start..factors.len();

    let whiten = LogFactor::whiten_diagonal(&params.motion_variances);
    let start = factors.len();
    for j in 0..k.saturating_sub(1) {
        factors.push(Box::new(LogFactor::motion(
            MotionVars {
                g_vl: layout.g_vl,
                gins_i: layout.gins(j),
                gins_j: layout.gins(j + 1),
                base_i: layout.vl(j),
                base_j: layout.vl(j + 1),
            },
            whiten,
        )));
    }
    families.motion = start..factors.len();

    let sigmas = params.prior_sigmas();
    let start = factors.len();
    for (j, m) in measured.iter().enumerate().skip(1) {
        factors.push(Box::new(LogFactor::prior(layout.gins(j), *m, &sigmas)));
    }
    families.prior = start..factors.len();

    Ok(FactorGraph {
        variables,
        factors,
        layout,
        families,
        correspondences,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointResult {
    pub state: JointState,
    pub rounds: Vec<RoundStats>,
    pub converged: bool,
}

/// Rounds of re-deskew, re-association and LM on the joint graph.
pub fn joint_optimize(
    scans: &[KeyframedScans],
    base: usize,
    initial: &JointState,
    measured: &[RigidTransform],
    params: &JointParams,
) -> Result<JointResult> {
    let lm = LmOptions {
        kernel: Some(params.refine.kernel),
        truncation: params.refine.truncation,
        ..params.refine.lm.clone()
    };
    let mut state = initial.clone();
    let mut rounds = Vec::new();
    let mut converged = false;
    for _ in 0..params.refine.max_rounds {
        let frames = prepare_frames(scans, &state, &params.refine)?;
        let mut graph = assemble_graph(&frames, base, &state, measured, params)?;
        let report = lm_minimize(&mut graph.variables, &graph.factors, &lm)?;
        let n = graph.correspondences.max(1);
        rounds.push(RoundStats {
            correspondences: graph.correspondences,
            mean_cost: report.final_cost / n as f64,
            report,
        });
        check_divergence(&rounds, params.refine.divergence_ratio)?;
        let next = graph.state(&state);
        let (tm, td) = (params.refine.tol_trans_m, params.refine.tol_rot_deg);
        let done = small_change(&next.g_vl, &state.g_vl, tm, td)
            && next.l0_lm.iter().zip(&state.l0_lm).all(|(a, b)| small_change(a, b, tm, td));
        state = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(JointResult {
        state,
        rounds,
        converged,
    })
}

/// `G_L0 = G_VL * VL_L0` and `G_Lm = G_L0 * L0_Lm`.
pub fn compose_final_extrinsics(
    g_vl: &RigidTransform,
    vl_l0: &RigidTransform,
    l0_lm: &[RigidTransform],
) -> Vec<RigidTransform> {
    let g_l0 = g_vl.compose(vl_l0);
    l0_lm.iter().map(|e| g_l0.compose(e)).collect()
}

//! Stage orchestration: keyframes, rotation search, LiDAR-GINS refinement,
//! ground alignment, multi-LiDAR calibration, terrain analysis and joint
//! optimization, in that order.

mod check;
mod config;
mod report;

use std::time::Instant;

use nalgebra::Vector6;

pub use check::{jacobian_suite, JacobianCheck};
pub use config::{Auto, KeySpec, PipelineConfig};
pub use report::{
    format_pose, format_real, parse_report, report_differences, CalibrationReport, SensorErrors, StageRecord,
    StageStatus, Value, STAGES,
};

use crate::calib_lg::{
    calibrate_lidar_gins, flattest_pose, ground_align, initialize_rotation, InitParams, RansacParams, RefineParams,
    RoundStats, LG_TRUNCATION,
};
use crate::calib_ml::{calibrate_multi_lidar, init_base_poses};
use crate::cloud::PointCloud;
use crate::dataset::{load_dataset, read_extrinsics, Dataset};
use crate::error::{Error, Result};
use crate::frames::{prepare_frame, stitch, MatchParams, ScanMotion};
use crate::joint::{compose_final_extrinsics, joint_optimize, JointParams, JointState, JOINT_TRUNCATION};
use crate::metrics::{evaluate_map, MapMetrics};
use crate::rig::{infer_scan_period, select_scan_keyframes, KeyframedScans, Keyframes};
use crate::se3::{extrinsic_error, RigidTransform, StampedPose};
use crate::solver::{LmOptions, RobustKernel};
use crate::terrain::{extract_ground_map, select_flattest_patch, vlidar_extrinsic};

impl PipelineConfig {
    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            voxel_leaf_m: self.voxel_leaf_m,
            k_neighbors: self.k_neighbors,
            gate_m: self.gate_dist_m,
            max_corr_per_pair: self.max_corr_per_pair,
            pair_radius_m: self.pair_radius_m,
        }
    }

    pub fn init_params(&self) -> InitParams {
        InitParams {
            voxel_leaf_m: self.init_voxel_leaf_m,
            gate_m: self.gate_dist_m,
            max_iterations: self.direct_max_iterations,
            max_evaluations: self.direct_max_evaluations,
            min_yaw_span_deg: self.min_yaw_span_deg,
            ..InitParams::default()
        }
    }

    pub fn refine_params(&self, max_rounds: usize) -> Result<RefineParams> {
        Ok(RefineParams {
            matching: self.match_params(),
            kernel: RobustKernel::new(self.huber_delta)?,
            max_rounds,
            tol_trans_m: self.tol_trans_m,
            tol_rot_deg: self.tol_rot_deg,
            lm: LmOptions {
                max_iterations: self.lm_max_iterations,
                ..LmOptions::default()
            },
            truncation: Some(LG_TRUNCATION),
            divergence_ratio: self.divergence_ratio,
        })
    }

    pub fn ransac_params(&self) -> RansacParams {
        RansacParams {
            iterations: self.ransac_iterations,
            inlier_thresh_m: self.ransac_inlier_m,
            min_inlier_ratio: self.ransac_min_inlier_ratio,
            max_tilt_deg: self.max_ground_tilt_deg,
            band_m: self.ground_band_m,
            seed: self.seed,
            ..RansacParams::default()
        }
    }

    pub fn joint_params(&self, h_g: f64) -> Result<JointParams> {
        let mut p = JointParams::new(h_g);
        p.refine = RefineParams {
            truncation: Some(JOINT_TRUNCATION),
            ..self.refine_params(self.joint_max_rounds)?
        };
        p.height_factor = self.height_factor;
        p.height.c_s = self.height_variance_m2;
        p.prior_sigma_m = self.prior_sigma_m;
        p.prior_sigma_deg = self.prior_sigma_deg;
        let r = self.motion_sigma_deg.to_radians().powi(2);
        let t = self.motion_sigma_m.powi(2);
        p.motion_variances = Vector6::new(r, r, r, t, t, t);
        Ok(p)
    }
}

/// Loads `config.dataset_dir` and calibrates it.
pub fn run_pipeline(config: &PipelineConfig) -> Result<CalibrationReport> {
    config.validate()?;
    if config.dataset_dir.is_empty() {
        return Err(Error::Config("dataset_dir is not set".into()));
    }
    let ds = load_dataset(&config.dataset_dir)?;
    calibrate_dataset(&ds, config)
}

/// Runs every enabled stage on an in-memory dataset.
pub fn calibrate_dataset(ds: &Dataset, config: &PipelineConfig) -> Result<CalibrationReport> {
    config.validate()?;
    if config.threads == 0 {
        return Pipeline::run(ds, config);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", config.threads)))?;
    pool.install(|| Pipeline::run(ds, config))
}

/// Every keyframe scan, deskewed with the measured GINS motion and `g_lm`,
/// downsampled and placed in the world by `W_G * G_Lm`.
pub fn stitch_map(scans: &[KeyframedScans], g_lm: &[RigidTransform], params: &MatchParams) -> Result<PointCloud> {
    let mut points = Vec::new();
    for s in scans {
        let e = &g_lm[s.sensor];
        let frames = s.prepare(Some(e), params)?;
        let poses: Vec<_> = s.end_poses.iter().map(|w| w.compose(e)).collect();
        points.extend(stitch(&frames, &poses).points);
    }
    Ok(PointCloud::new(points))
}

/// Keyframes of a dataset and the keyframed scans of every sensor.
#[derive(Clone, Debug)]
pub struct PreparedScans {
    pub base: usize,
    pub period: f64,
    pub keyframes: Keyframes,
    pub scans: Vec<KeyframedScans>,
}

pub fn prepare_scans(ds: &Dataset, cfg: &PipelineConfig) -> Result<PreparedScans> {
    let base = ds
        .base_index()
        .ok_or_else(|| Error::Dataset("no base sensor in sensors.txt".into()))?;
    if ds.sensors.iter().filter(|s| s.base).count() != 1 {
        return Err(Error::Dataset("exactly one base sensor required".into()));
    }
    let period = match cfg.scan_period_s.0 {
        Some(p) => p,
        None => infer_scan_period(ds).ok_or_else(|| Error::Dataset("cannot infer the scan period".into()))?,
    };
    let keyframes = select_scan_keyframes(ds, base, period, cfg.keyframe_dist_m, cfg.keyframe_angle_deg)
        .map_err(|e| e.in_stage("keyframes"))?;
    let scans = (0..ds.sensors.len())
        .map(|m| KeyframedScans::collect(ds, &keyframes, m))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("keyframes"))?;
    for (s, info) in scans.iter().zip(&ds.sensors) {
        if s.is_empty() {
            return Err(Error::Dataset(format!("sensor {} has no scan at any keyframe", info.id)));
        }
    }
    Ok(PreparedScans {
        base,
        period,
        keyframes,
        scans,
    })
}

fn resolved_h_g(ds: &Dataset, config: &PipelineConfig) -> Result<f64> {
    if let Some(h) = config.h_g_m.0 {
        return Ok(h);
    }
    match ds.meta.get("h_g_m").map(|s| s.parse::<f64>()) {
        Some(Ok(h)) if h > 0.0 && h.is_finite() => Ok(h),
        Some(_) => Err(Error::Dataset("meta h_g_m is not a positive number".into())),
        None => Err(Error::Config("h_g_m is not set and the dataset does not provide it".into())),
    }
}

fn round_fields(prefix: &str, rounds: &[RoundStats], converged: bool, out: &mut Vec<(String, Value)>) {
    out.push((format!("{prefix}rounds"), Value::Int(rounds.len() as i64)));
    out.push((format!("{prefix}converged"), Value::Bool(converged)));
    if let Some(last) = rounds.last() {
        out.push((format!("{prefix}correspondences"), Value::Int(last.correspondences as i64)));
        out.push((format!("{prefix}mean_cost"), Value::Real(last.mean_cost)));
        out.push((format!("{prefix}lm_iterations"), Value::Int(last.report.iterations as i64)));
    }
}

struct Pipeline<'a> {
    ds: &'a Dataset,
    config: &'a PipelineConfig,
    stages: Vec<StageRecord>,
}

impl<'a> Pipeline<'a> {
    fn stage<T>(
        &mut self,
        name: &'static str,
        enabled: bool,
        f: impl FnOnce(&mut Vec<(String, Value)>) -> Result<T>,
    ) -> Result<Option<T>> {
        if !enabled {
            self.stages.push(StageRecord::skipped(name));
            return Ok(None);
        }
        let t0 = Instant::now();
        let mut fields = Vec::new();
        let out = f(&mut fields).map_err(|e| e.in_stage(name))?;
        self.stages.push(StageRecord {
            name,
            status: StageStatus::Completed,
            seconds: t0.elapsed().as_secs_f64(),
            fields,
        });
        Ok(Some(out))
    }

    fn run(ds: &'a Dataset, config: &'a PipelineConfig) -> Result<CalibrationReport> {
        let mut p = Pipeline {
            ds,
            config,
            stages: Vec::new(),
        };
        p.execute()
    }

    fn execute(&mut self) -> Result<CalibrationReport> {
        let (ds, cfg) = (self.ds, self.config);
        let prepared = prepare_scans(ds, cfg)?;
        let (base, period, kf, scans) = (prepared.base, prepared.period, prepared.keyframes, prepared.scans);
        let h_g = resolved_h_g(ds, cfg)?;
        let mut effective = cfg.clone();
        effective.scan_period_s = Auto(Some(period));
        effective.h_g_m = Auto(Some(h_g));
        let n = ds.sensors.len();
        let ids: Vec<String> = ds.sensors.iter().map(|s| s.id.clone()).collect();
        let matching = cfg.match_params();
        let ransac = cfg.ransac_params();
        let measured = scans[base].end_poses.clone();

        let given = if cfg.initial_extrinsics.is_empty() {
            None
        } else {
            let items = read_extrinsics(&cfg.initial_extrinsics)?;
            let ext = ids
                .iter()
                .map(|id| {
                    items.iter().find(|(k, _)| k == id).map(|(_, t)| *t).ok_or_else(|| {
                        Error::Dataset(format!("{}: no entry for sensor {id}", cfg.initial_extrinsics))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(ext)
        };

        let init = self.stage("init", given.is_none() && cfg.stage_init, |f| {
            let params = cfg.init_params();
            let mut out = Vec::with_capacity(n);
            for (s, id) in scans.iter().zip(&ids) {
                let (e, res) = initialize_rotation(&s.clouds, &s.end_poses, &params)?;
                f.push((format!("G_{id}"), Value::Pose(e)));
                f.push((format!("{id}.evaluations"), Value::Int(res.evaluations as i64)));
                f.push((format!("{id}.objective_m"), Value::Real(res.value)));
                out.push(e);
            }
            Ok(out)
        })?;
        let initial = match (given, init) {
            (Some(g), _) => g,
            (None, Some(i)) => i,
            (None, None) => return Err(Error::Config("no initial extrinsics".into())),
        };

        let refine_lg = cfg.refine_params(cfg.lg_max_rounds)?;
        let mut g_lm = initial.clone();
        if let Some(ext) = self.stage("lidar_gins", cfg.stage_lidar_gins, |f| {
            let mut out = Vec::with_capacity(n);
            for (s, id) in scans.iter().zip(&ids) {
                let r = calibrate_lidar_gins(s, &initial[s.sensor], &refine_lg)?;
                f.push((format!("G_{id}"), Value::Pose(r.extrinsic)));
                round_fields(&format!("{id}."), &r.rounds, r.converged, f);
                out.push(r.extrinsic);
            }
            Ok(out)
        })? {
            g_lm = ext;
        }

        if let Some(ext) = self.stage("ground_align", cfg.stage_ground_align, |f| {
            let common: Vec<usize> = (0..kf.len())
                .filter(|k| scans.iter().all(|s| s.keyframes.contains(k)))
                .collect();
            let poses: Vec<_> = common.iter().map(|&k| measured[k]).collect();
            let k = common[flattest_pose(&poses).ok_or_else(|| Error::IncompleteStages("no keyframe seen by every sensor".into()))?];
            let mut clouds = Vec::with_capacity(n);
            for s in &scans {
                let i = s.keyframes.iter().position(|&x| x == k).expect("keyframe present");
                let motion = ScanMotion {
                    start: s.start_poses[i].compose(&g_lm[s.sensor]),
                    end: s.end_poses[i].compose(&g_lm[s.sensor]),
                    period: s.period,
                };
                clouds.push(prepare_frame(&s.clouds[i], Some(&motion), s.sensor, k, &matching)?.0.points);
            }
            let r = ground_align(&g_lm, &clouds, base, h_g, &ransac)?;
            f.push(("keyframe".into(), Value::Int(k as i64)));
            for (m, id) in ids.iter().enumerate() {
                f.push((format!("G_{id}"), Value::Pose(r.extrinsics[m])));
                f.push((format!("{id}.delta_h_m"), Value::Real(r.delta_h[m])));
            }
            Ok(r.extrinsics)
        })? {
            g_lm = ext;
        }

        let g_l0 = g_lm[base];
        let mut l0_lm: Vec<_> = g_lm.iter().map(|e| g_l0.inverse().compose(e)).collect();
        l0_lm[base] = RigidTransform::identity();
        let mut base_poses = init_base_poses(&measured, &g_l0);
        let refine_ml = cfg.refine_params(cfg.ml_max_rounds)?;
        let base_id = ids[base].clone();
        if let Some(r) = self.stage("multi_lidar", cfg.stage_multi_lidar, |f| {
            let r = calibrate_multi_lidar(&scans, base, &base_poses, &g_l0, &l0_lm, &refine_ml)?;
            for (id, e) in ids.iter().zip(&r.extrinsics) {
                f.push((format!("{base_id}_{id}"), Value::Pose(*e)));
            }
            f.push(("condition_number".into(), Value::Real(r.condition_number)));
            round_fields("", &r.rounds, r.converged, f);
            Ok(r)
        })? {
            l0_lm = r.extrinsics;
            base_poses = r.base_poses;
        }

        let vl_l0 = self.stage("terrain", cfg.stage_terrain, |f| {
            let frames = scans[base].prepare(Some(&g_l0), &matching)?;
            let clouds: Vec<_> = frames.into_iter().map(|fr| fr.points).collect();
            let ground = extract_ground_map(&clouds, &base_poses, &g_l0, h_g, &ransac)?;
            let patch = select_flattest_patch(&ground.cloud.points, &base_poses, cfg.patch_radius_m)?;
            let vl_l0 = vlidar_extrinsic(&patch, &base_poses[patch.keyframe]);
            f.push(("ground_points".into(), Value::Int(ground.cloud.len() as i64)));
            f.push(("keyframes_with_ground".into(), Value::Int(ground.keyframes_with_ground as i64)));
            f.push(("keyframe".into(), Value::Int(patch.keyframe as i64)));
            f.push(("patch_points".into(), Value::Int(patch.points.len() as i64)));
            f.push(("roughness_m".into(), Value::Real(patch.roughness)));
            f.push((format!("VL_{base_id}"), Value::Pose(vl_l0)));
            Ok(vl_l0)
        })?;

        let mut g_vl = None;
        let mut refined_gins = None;
        let joint_enabled = cfg.stage_joint && vl_l0.is_some();
        let joint = self.stage("joint", joint_enabled, |f| {
            let vl_l0 = vl_l0.expect("terrain stage ran");
            let mut state = JointState::from_stages(&g_l0, &vl_l0, &l0_lm, &measured, &base_poses);
            state.g_vl = RigidTransform::z_shift(cfg.vl_init_z_offset_m).compose(&state.g_vl);
            let params = cfg.joint_params(h_g)?;
            let r = joint_optimize(&scans, base, &state, &measured, &params)?;
            f.push(("G_VL".into(), Value::Pose(r.state.g_vl)));
            for (id, e) in ids.iter().zip(&r.state.l0_lm) {
                f.push((format!("{base_id}_{id}"), Value::Pose(*e)));
            }
            f.push(("height_factor".into(), Value::Bool(params.height_factor)));
            round_fields("", &r.rounds, r.converged, f);
            Ok(r)
        })?;
        match &joint {
            Some(r) => {
                let vl_l0 = vl_l0.expect("terrain stage ran");
                g_lm = compose_final_extrinsics(&r.state.g_vl, &vl_l0, &r.state.l0_lm);
                l0_lm = r.state.l0_lm.clone();
                g_vl = Some(r.state.g_vl);
                refined_gins = Some(
                    kf.times
                        .iter()
                        .zip(&r.state.gins)
                        .map(|(t, p)| StampedPose::new(*t, *p))
                        .collect(),
                );
            }
            None => g_lm = l0_lm.iter().map(|e| g_l0.compose(e)).collect(),
        }

        let (mut before, mut after): (Option<MapMetrics>, Option<MapMetrics>) = (None, None);
        if cfg.compute_metrics {
            let radius = cfg.metric_radius_m;
            let eval = |ext: &[RigidTransform]| -> Result<MapMetrics> {
                evaluate_map(&stitch_map(&scans, ext, &matching)?, radius)
            };
            before = Some(eval(&initial).map_err(|e| e.in_stage("metrics"))?);
            after = Some(eval(&g_lm).map_err(|e| e.in_stage("metrics"))?);
        }

        let gt_errors = ds.gt_extrinsics.as_ref().map(|gt| {
            let gt_base = gt[base].inverse();
            (0..n)
                .map(|m| SensorErrors {
                    gins: extrinsic_error(&g_lm[m], &gt[m]),
                    base: extrinsic_error(&l0_lm[m], &gt_base.compose(&gt[m])),
                })
                .collect()
        });

        Ok(CalibrationReport {
            config: effective.entries(),
            sensors: ids,
            base,
            keyframe_times: kf.times.clone(),
            stages: std::mem::take(&mut self.stages),
            g_lm,
            l0_lm,
            g_vl,
            refined_gins,
            metrics_before: before,
            metrics_after: after,
            gt_errors,
        })
    }
}

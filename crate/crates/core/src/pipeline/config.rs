//! `key = value` pipeline configuration. Units are part of the key names.

use crate::error::{Error, Result};
pub use crate::keyvalue::{Auto, KeySpec};
use crate::keyvalue::key_value_config;

key_value_config! {
    pub struct PipelineConfig {
        dataset_dir: String = "", "path", "dataset directory";
        seed: u64 = 0u64, "", "seed of the randomized stages";
        threads: usize = 0usize, "", "worker threads, 0 for all cores";
        keyframe_dist_m: f64 = 2.0, "m", "keyframe translation threshold";
        keyframe_angle_deg: f64 = 30.0, "deg", "keyframe rotation threshold";
        scan_period_s: Auto = Auto(None), "s", "scan duration, auto reads the dataset";
        voxel_leaf_m: f64 = 0.3, "m", "downsampling leaf for matching";
        k_neighbors: usize = 20usize, "", "neighbors per point covariance";
        gate_dist_m: f64 = 1.0, "m", "correspondence gate";
        huber_delta: f64 = 0.1, "", "Huber threshold on whitened residual norms";
        max_corr_per_pair: usize = 2000usize, "", "correspondences kept per frame pair";
        pair_radius_m: f64 = 15.0, "m", "largest distance between matched keyframes";
        init_voxel_leaf_m: f64 = 0.5, "m", "downsampling leaf for rotation search";
        direct_max_iterations: usize = 200usize, "", "rotation search iterations";
        direct_max_evaluations: usize = 1200usize, "", "rotation search objective evaluations";
        min_yaw_span_deg: f64 = 10.0, "deg", "heading change required for initialization";
        lg_max_rounds: usize = 5usize, "", "LiDAR-GINS re-association rounds";
        ml_max_rounds: usize = 5usize, "", "multi-LiDAR re-association rounds";
        joint_max_rounds: usize = 3usize, "", "joint re-association rounds";
        lm_max_iterations: usize = 30usize, "", "LM iterations per round";
        tol_trans_m: f64 = 1e-4, "m", "round convergence, translation";
        tol_rot_deg: f64 = 0.01, "deg", "round convergence, rotation";
        divergence_ratio: f64 = 1.1, "", "allowed growth of mean cost between rounds";
        ransac_iterations: usize = 500usize, "", "ground RANSAC iterations";
        ransac_inlier_m: f64 = 0.05, "m", "ground inlier distance";
        ransac_min_inlier_ratio: f64 = 0.2, "", "ground inliers per band point";
        ground_band_m: f64 = 2.0, "m", "half height of the ground search band";
        max_ground_tilt_deg: f64 = 30.0, "deg", "largest ground normal tilt";
        patch_radius_m: f64 = 10.0, "m", "terrain patch radius";
        h_g_m: Auto = Auto(None), "m", "GINS installation height, auto reads the dataset";
        height_variance_m2: f64 = 1e-3, "m^2", "height observation variance";
        prior_sigma_m: f64 = 0.05, "m", "GINS pose prior, translation";
        prior_sigma_deg: f64 = 0.2, "deg", "GINS pose prior, rotation";
        motion_sigma_m: f64 = 0.02, "m", "motion factor, translation";
        motion_sigma_deg: f64 = 0.1, "deg", "motion factor, rotation";
        metric_radius_m: f64 = 1.0, "m", "map metric neighborhood radius";
        compute_metrics: bool = true, "", "evaluate MME/MPV before and after";
        stage_init: bool = true, "", "run the rotation search";
        stage_lidar_gins: bool = true, "", "run LiDAR-GINS refinement";
        stage_ground_align: bool = true, "", "run ground alignment";
        stage_multi_lidar: bool = true, "", "run multi-LiDAR calibration";
        stage_terrain: bool = true, "", "run terrain analysis";
        stage_joint: bool = true, "", "run joint optimization";
        height_factor: bool = true, "", "add the installation height factor";
        initial_extrinsics: String = "", "path", "GINS-from-LiDAR starting values, replaces the rotation search";
        vl_init_z_offset_m: f64 = 0.0, "m", "offset added to the starting GINS-from-VLiDAR z";
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("keyframe_dist_m", self.keyframe_dist_m),
            ("keyframe_angle_deg", self.keyframe_angle_deg),
            ("voxel_leaf_m", self.voxel_leaf_m),
            ("gate_dist_m", self.gate_dist_m),
            ("huber_delta", self.huber_delta),
            ("pair_radius_m", self.pair_radius_m),
            ("init_voxel_leaf_m", self.init_voxel_leaf_m),
            ("min_yaw_span_deg", self.min_yaw_span_deg),
            ("tol_trans_m", self.tol_trans_m),
            ("tol_rot_deg", self.tol_rot_deg),
            ("ransac_inlier_m", self.ransac_inlier_m),
            ("ransac_min_inlier_ratio", self.ransac_min_inlier_ratio),
            ("ground_band_m", self.ground_band_m),
            ("max_ground_tilt_deg", self.max_ground_tilt_deg),
            ("patch_radius_m", self.patch_radius_m),
            ("height_variance_m2", self.height_variance_m2),
            ("prior_sigma_m", self.prior_sigma_m),
            ("prior_sigma_deg", self.prior_sigma_deg),
            ("motion_sigma_m", self.motion_sigma_m),
            ("motion_sigma_deg", self.motion_sigma_deg),
            ("metric_radius_m", self.metric_radius_m),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let counts = [
            ("k_neighbors", self.k_neighbors),
            ("max_corr_per_pair", self.max_corr_per_pair),
            ("direct_max_iterations", self.direct_max_iterations),
            ("direct_max_evaluations", self.direct_max_evaluations),
            ("lg_max_rounds", self.lg_max_rounds),
            ("ml_max_rounds", self.ml_max_rounds),
            ("joint_max_rounds", self.joint_max_rounds),
            ("lm_max_iterations", self.lm_max_iterations),
            ("ransac_iterations", self.ransac_iterations),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.divergence_ratio >= 1.0) {
            return Err(Error::Config("divergence_ratio must be at least 1".into()));
        }
        if !self.vl_init_z_offset_m.is_finite() {
            return Err(Error::Config("vl_init_z_offset_m must be finite".into()));
        }
        for (k, v) in [("scan_period_s", self.scan_period_s), ("h_g_m", self.h_g_m)] {
            if let Some(x) = v.0 {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::Config(format!("{k} must be positive, got {x}")));
                }
            }
        }
        if !self.stage_init && self.initial_extrinsics.is_empty() {
            return Err(Error::Config("stage_init = false needs initial_extrinsics".into()));
        }
        if self.stage_joint && !self.stage_terrain {
            return Err(Error::Config("stage_joint needs stage_terrain".into()));
        }
        Ok(())
    }
}

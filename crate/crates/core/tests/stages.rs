//! Stage-level properties on simulated data.

mod common;

use lidar_gins_calib::calib_lg::{calibrate_lidar_gins, ground_align, stitching_objective};
use lidar_gins_calib::calib_ml::calibrate_multi_lidar;
use lidar_gins_calib::cloud::{voxel_downsample, PointCloud};
use lidar_gins_calib::dataset::Dataset;
use lidar_gins_calib::factors::LogFactor;
use lidar_gins_calib::frames::stride_subsample;
use lidar_gins_calib::joint::{assemble_graph, joint_optimize, prepare_frames, FactorGraph, JointParams, JointState};
use lidar_gins_calib::metrics::evaluate_map;
use lidar_gins_calib::pipeline::{prepare_scans, stitch_map, PipelineConfig, PreparedScans};
use lidar_gins_calib::se3::{exp_map, log_map, rotation_between_planes, PlaneModel, RigidTransform, Twist6};
use lidar_gins_calib::simgen::{generate_dataset, SimConfig};
use lidar_gins_calib::solver::total_cost;
use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{pose_error, relative};

struct Fixture {
    ds: Dataset,
    cfg: PipelineConfig,
    prepared: PreparedScans,
    truth: Vec<RigidTransform>,
    /// Consistent joint state built from ground truth.
    state: JointState,
    measured: Vec<RigidTransform>,
}

fn fixture(sim: SimConfig) -> Fixture {
    let ds = generate_dataset(&sim).unwrap();
    let cfg = PipelineConfig::default();
    let prepared = prepare_scans(&ds, &cfg).unwrap();
    let truth = ds.gt_extrinsics.clone().unwrap();
    let base = prepared.base;
    let measured = prepared.scans[base].end_poses.clone();
    let g_l0 = truth[base];
    let l0_lm: Vec<_> = truth.iter().map(|e| relative(&g_l0, e)).collect();
    let base_poses: Vec<_> = measured.iter().map(|w| w.compose(&g_l0)).collect();
    let local = PlaneModel::horizontal().pulled_back(&base_poses[0]);
    let vl_l0 = rotation_between_planes(&local, &PlaneModel::horizontal());
    let state = JointState::from_stages(&g_l0, &vl_l0, &l0_lm, &measured, &base_poses);
    Fixture {
        ds,
        cfg,
        prepared,
        truth,
        state,
        measured,
    }
}

fn zero_noise() -> Fixture {
    fixture(SimConfig::two_sensor(21).zero_noise())
}

fn params(f: &Fixture, height: bool) -> JointParams {
    let mut p = f.cfg.joint_params(f.ds.meta["h_g_m"].parse().unwrap()).unwrap();
    p.height_factor = height;
    p
}

fn graph(f: &Fixture, p: &JointParams) -> FactorGraph {
    let frames = prepare_frames(&f.prepared.scans, &f.state, &p.refine).unwrap();
    assemble_graph(&frames, f.prepared.base, &f.state, &f.measured, p).unwrap()
}

fn shifted_vl_z(g: &FactorGraph, dz: f64) -> Vec<RigidTransform> {
    let mut v = g.values();
    v[g.layout.g_vl] = v[g.layout.g_vl].compose(&RigidTransform::z_shift(dz));
    v
}

#[test]
fn joint_graph_structure_and_cost_decomposition() {
    let f = zero_noise();
    let p = params(&f, true);
    let g = graph(&f, &p);
    assert_eq!(g.families.height.len(), 1);
    let kernel = Some(p.refine.kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut values = g.values();
    for (i, v) in values.iter_mut().enumerate() {
        if !g.variables[i].fixed {
            let d: [f64; 6] = std::array::from_fn(|j| rng.random_range(-1.0..1.0) * if j < 3 { 1e-3 } else { 1e-2 });
            *v = v.compose(&exp_map(&Twist6::from_slice(&d)));
        }
    }
    for vals in [g.values(), values] {
        let whole = total_cost(&g.factors, &vals, kernel).unwrap();
        let parts = g.family_costs(&vals, kernel).unwrap().total();
        assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0), "{whole} vs {parts}");
    }
    // every free variable is touched by a factor
    let mut touched = vec![false; g.variables.len()];
    for fac in &g.factors {
        for &i in fac.variables() {
            touched[i] = true;
        }
    }
    for (i, v) in g.variables.iter().enumerate() {
        assert!(v.fixed || touched[i], "variable {i} untouched");
    }
}

#[test]
fn consistent_truth_zeroes_motion_and_height_terms() {
    let f = zero_noise();
    let p = params(&f, true);
    let g = graph(&f, &p);
    let c = g.family_costs(&g.values(), None).unwrap();
    assert!(c.motion < 1e-16, "motion {}", c.motion);
    // only the weakly weighted slots contribute
    assert!(c.height < 1e-6, "height {}", c.height);
    let z = LogFactor::height(g.layout.g_vl, &p.height).raw_residual(&g.values()).unwrap()[5];
    assert!(z.abs() < 1e-9, "height residual {z}");
    assert!(c.prior < 1e-16, "prior {}", c.prior);
}

#[test]
fn height_factor_removes_the_flat_vertical_direction() {
    let f = zero_noise();
    let flat = graph(&f, &params(&f, false));
    let full = graph(&f, &params(&f, true));
    let cost = |g: &FactorGraph, dz: f64| total_cost(&g.factors, &shifted_vl_z(g, dz), None).unwrap();
    let c0 = cost(&flat, 0.0);
    assert!(c0 > 0.0);
    let flat_change = [-0.2, 0.2].iter().map(|&dz| (cost(&flat, dz) - c0).abs()).fold(0.0, f64::max);
    assert!(flat_change < 0.01 * c0, "flat change {flat_change} of {c0}");
    let h0 = cost(&full, 0.0);
    let full_change = [-0.2, 0.2].iter().map(|&dz| (cost(&full, dz) - h0).abs()).fold(f64::INFINITY, f64::min);
    assert!(full_change > 100.0 * flat_change, "{full_change} vs {flat_change}");
    assert!(full_change > 0.0);
}

fn perturb(rng: &mut ChaCha8Rng, t: &RigidTransform, rot_deg: f64, trans_m: f64) -> RigidTransform {
    let d: [f64; 6] = std::array::from_fn(|j| {
        rng.random_range(-1.0..1.0) * if j < 3 { rot_deg.to_radians() } else { trans_m }
    });
    t.compose(&exp_map(&Twist6::from_slice(&d)))
}

fn tight(mut p: JointParams) -> JointParams {
    p.refine.max_rounds = 6;
    p.refine.tol_trans_m = 1e-6;
    p.refine.tol_rot_deg = 1e-5;
    p
}

#[test]
fn joint_optimum_is_unique_from_perturbed_starts() {
    let f = zero_noise();
    let p = tight(params(&f, true));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let finals: Vec<Vec<RigidTransform>> = (0..10)
        .map(|_| {
            let mut s = f.state.clone();
            s.g_vl = perturb(&mut rng, &s.g_vl, 0.2, 0.02);
            s.l0_lm[1] = perturb(&mut rng, &s.l0_lm[1], 0.2, 0.02);
            let r = joint_optimize(&f.prepared.scans, f.prepared.base, &s, &f.measured, &p).unwrap();
            vec![r.state.g_vl, r.state.l0_lm[1]]
        })
        .collect();
    for run in &finals[1..] {
        for (a, b) in run.iter().zip(&finals[0]) {
            let (deg, m) = pose_error(a, b);
            assert!(deg < 1e-3 && m < 1e-4, "{deg} deg, {m} m");
        }
    }
    let g_l0 = finals[0][0].compose(&f.state.vl_l0);
    let (deg, m) = pose_error(&g_l0, &f.truth[0]);
    assert!(deg < 0.01 && m < 1e-3, "{deg} deg, {m} m from truth");
}

fn shift_times(ds: &Dataset, dt: f64) -> Dataset {
    let mut out = ds.clone();
    for p in &mut out.gins.poses {
        p.time += dt;
    }
    if let Some(g) = &mut out.gins_gt {
        for p in &mut g.poses {
            p.time += dt;
        }
    }
    for c in out.scans.iter_mut().flatten() {
        c.timestamp += dt;
    }
    out
}

#[test]
fn joint_result_ignores_a_uniform_time_shift() {
    let f = zero_noise();
    let p = params(&f, true);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut start = f.state.clone();
    start.g_vl = perturb(&mut rng, &start.g_vl, 0.3, 0.05);
    start.l0_lm[1] = perturb(&mut rng, &start.l0_lm[1], 0.3, 0.05);
    let a = joint_optimize(&f.prepared.scans, f.prepared.base, &start, &f.measured, &p).unwrap();

    let shifted = shift_times(&f.ds, 1000.0);
    let prep = prepare_scans(&shifted, &f.cfg).unwrap();
    assert_eq!(prep.keyframes.len(), f.prepared.keyframes.len());
    let measured = prep.scans[prep.base].end_poses.clone();
    let mut start2 = start.clone();
    start2.gins = measured.clone();
    let b = joint_optimize(&prep.scans, prep.base, &start2, &measured, &p).unwrap();
    for (x, y) in [(a.state.g_vl, b.state.g_vl), (a.state.l0_lm[1], b.state.l0_lm[1])] {
        let (deg, m) = pose_error(&x, &y);
        assert!(deg < 1e-5 && m < 1e-6, "{deg} deg, {m} m");
    }
}

#[test]
fn multi_lidar_ignores_world_relabeling() {
    let f = zero_noise();
    let refine = f.cfg.refine_params(f.cfg.ml_max_rounds).unwrap();
    let base = f.prepared.base;
    let g_l0 = f.truth[base];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut init: Vec<_> = f.state.l0_lm.clone();
    init[1] = perturb(&mut rng, &init[1], 0.5, 0.05);
    let base_poses: Vec<_> = f.measured.iter().map(|w| w.compose(&g_l0)).collect();
    let a = calibrate_multi_lidar(&f.prepared.scans, base, &base_poses, &g_l0, &init, &refine).unwrap();

    let w = RigidTransform::from_rpy(0.3, -0.2, 1.1, Vector3::new(120.0, -45.0, 7.0));
    let mut scans = f.prepared.scans.clone();
    for s in &mut scans {
        for p in s.start_poses.iter_mut().chain(s.end_poses.iter_mut()) {
            *p = w.compose(p);
        }
    }
    let moved: Vec<_> = base_poses.iter().map(|p| w.compose(p)).collect();
    let b = calibrate_multi_lidar(&scans, base, &moved, &g_l0, &init, &refine).unwrap();
    let (deg, m) = pose_error(&a.extrinsics[1], &b.extrinsics[1]);
    assert!(deg < 1e-6 && m < 1e-6, "{deg} deg, {m} m");
    let (deg, m) = pose_error(&a.extrinsics[1], &f.state.l0_lm[1]);
    assert!(deg < 0.01 && m < 1e-3, "{deg} deg, {m} m from truth");
}

#[test]
fn multi_lidar_optimum_is_unique_from_perturbed_starts() {
    let f = zero_noise();
    let mut refine = f.cfg.refine_params(8).unwrap();
    refine.tol_trans_m = 1e-6;
    refine.tol_rot_deg = 1e-5;
    let base = f.prepared.base;
    let g_l0 = f.truth[base];
    let base_poses: Vec<_> = f.measured.iter().map(|w| w.compose(&g_l0)).collect();
    let truth = f.state.l0_lm[1];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let finals: Vec<RigidTransform> = (0..10)
        .map(|i| {
            let mut init = f.state.l0_lm.clone();
            init[1] = if i == 0 {
                // fixed magnitude: 2 deg about a tilted axis, 0.2 m along another
                let axis = Vector3::new(1.0, 2.0, -1.0).normalize();
                let q = UnitQuaternion::from_scaled_axis(axis * 2f64.to_radians());
                let t = Vector3::new(-1.0, 0.5, 1.0).normalize() * 0.2;
                truth.compose(&RigidTransform::new(q, t))
            } else {
                perturb(&mut rng, &truth, 1.0, 0.1)
            };
            calibrate_multi_lidar(&f.prepared.scans, base, &base_poses, &g_l0, &init, &refine)
                .unwrap()
                .extrinsics[1]
        })
        .collect();
    let (deg, m) = pose_error(&finals[0], &truth);
    assert!(deg < 0.1 && m < 0.02, "{deg} deg, {m} m from truth");
    for e in &finals[1..] {
        let (deg, m) = pose_error(e, &finals[0]);
        assert!(deg < 1e-3 && m < 1e-4, "{deg} deg, {m} m");
    }
}

#[test]
fn joint_refinement_pulls_gins_towards_the_truth() {
    let mut sim = SimConfig::two_sensor(23).zero_noise();
    sim.gins_pos_sigma_m = 0.02;
    sim.gins_rot_sigma_deg = 0.05;
    let f = fixture(sim);
    let truth_traj = f.ds.gins_gt.as_ref().unwrap();
    let truth: Vec<_> = f.prepared.keyframes.times.iter().map(|&t| truth_traj.pose_at(t).unwrap()).collect();
    let p = params(&f, true);
    let r = joint_optimize(&f.prepared.scans, f.prepared.base, &f.state, &f.measured, &p).unwrap();
    // errors relative to the first keyframe, which is held at its measurement
    let rmse = |poses: &[RigidTransform]| {
        let (mut r2, mut t2) = (0.0, 0.0);
        for (a, b) in poses.iter().zip(&truth).skip(1) {
            let (deg, m) = pose_error(&relative(&poses[0], a), &relative(&truth[0], b));
            r2 += deg * deg;
            t2 += m * m;
        }
        let n = (truth.len() - 1) as f64;
        ((r2 / n).sqrt(), (t2 / n).sqrt())
    };
    let before = rmse(&f.measured);
    let after = rmse(&r.state.gins);
    println!("GINS RMSE {before:?} -> {after:?}");
    assert!(after.1 <= 0.8 * before.1, "translation {before:?} -> {after:?}");
    assert!(after.0 <= 0.8 * before.0, "rotation {before:?} -> {after:?}");
}

#[test]
fn rotation_objective_is_smallest_at_the_truth() {
    let f = zero_noise();
    let s = &f.prepared.scans[0];
    let coarse: Vec<Vec<_>> = s.clouds.iter().map(|c| voxel_downsample(c, 0.5).points).collect();
    let map: Vec<_> = coarse.iter().map(|p| stride_subsample(p, 600)).collect();
    let queries: Vec<_> = coarse.iter().map(|p| stride_subsample(p, 120)).collect();
    let rot_only = RigidTransform::from_rotation(f.truth[0].rotation);
    let at_truth = stitching_objective(&map, &queries, &s.end_poses, &rot_only, 1.0);
    for axis in [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(1.0, -1.0, 1.0).normalize()] {
        for deg in [5.0f64, -5.0, 10.0, -20.0] {
            let q = UnitQuaternion::from_scaled_axis(axis * deg.to_radians()) * f.truth[0].rotation;
            let off = stitching_objective(&map, &queries, &s.end_poses, &RigidTransform::from_rotation(q), 1.0);
            assert!(at_truth <= off, "{deg} deg about {axis:?}: {at_truth} > {off}");
        }
    }
}

#[test]
fn lidar_gins_cost_does_not_increase_across_rounds() {
    let f = zero_noise();
    let refine = f.cfg.refine_params(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for m in 0..2 {
        let init = perturb(&mut rng, &f.truth[m], 1.0, 0.1);
        let r = calibrate_lidar_gins(&f.prepared.scans[m], &init, &refine).unwrap();
        for round in &r.rounds {
            let h = &round.report.cost_history;
            assert!(h.windows(2).all(|w| w[1] <= w[0]), "sensor {m}: {h:?}");
        }
        let costs: Vec<f64> = r.rounds.iter().map(|x| x.mean_cost).collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]), "sensor {m}: {costs:?}");
    }
}

/// One deskewed keyframe cloud per sensor, in sensor frames.
fn keyframe_clouds(f: &Fixture, extrinsics: &[RigidTransform], k: usize) -> Vec<Vec<Vector3<f64>>> {
    f.prepared
        .scans
        .iter()
        .map(|s| {
            let frames = s.prepare(Some(&extrinsics[s.sensor]), &f.cfg.match_params()).unwrap();
            frames.into_iter().find(|fr| fr.keyframe == k).unwrap().points
        })
        .collect()
}

#[test]
fn ground_alignment_is_idempotent_and_levels_every_sensor() {
    let f = zero_noise();
    let h_g = 1.8;
    let ransac = f.cfg.ransac_params();
    let mut ext = f.truth.clone();
    ext[1] = RigidTransform::z_shift(0.25).compose(&ext[1]);
    let k = (0..f.prepared.keyframes.len())
        .find(|k| f.prepared.scans.iter().all(|s| s.keyframes.contains(k)))
        .unwrap();
    let once = ground_align(&ext, &keyframe_clouds(&f, &ext, k), 0, h_g, &ransac).unwrap();
    let (_, m) = pose_error(&once.extrinsics[1], &f.truth[1]);
    assert!(m < 1e-3, "residual {m} m");
    let twice = ground_align(&once.extrinsics, &keyframe_clouds(&f, &once.extrinsics, k), 0, h_g, &ransac).unwrap();
    for m in 0..2 {
        let (_, moved) = pose_error(&twice.extrinsics[m], &once.extrinsics[m]);
        assert!(moved < 2.0 * twice.planes[m].rms.max(1e-9) + 1e-9, "sensor {m} moved {moved}");
    }
    let d: Vec<f64> = twice.planes.iter().map(|p| p.plane.intercept).collect();
    assert!((d[0] - d[1]).abs() < 1e-3, "{d:?}");
}

#[test]
fn zero_noise_points_lie_on_the_world() {
    let sim = SimConfig::two_sensor(2).zero_noise();
    let ds = generate_dataset(&sim).unwrap();
    let truth = ds.gins_gt.as_ref().unwrap();
    let gt = ds.gt_extrinsics.as_ref().unwrap();
    for (m, scans) in ds.scans.iter().enumerate() {
        for c in scans.iter().step_by(7) {
            let start = truth.pose_at(c.timestamp).unwrap().compose(&gt[m]);
            let end = truth.pose_at(c.timestamp + sim.scan_period_s).unwrap().compose(&gt[m]);
            let xi = log_map(&start.inverse().compose(&end)).unwrap();
            let times = c.per_point_time.as_ref().unwrap();
            for (p, t) in c.points.iter().zip(times) {
                let pose = start.compose(&exp_map(&xi.scaled(t / sim.scan_period_s)));
                assert!(sim.world.on_surface(&pose.apply(p), 1e-9), "sensor {m} at {}", c.timestamp);
            }
        }
    }
}

#[test]
fn two_sensor_fields_of_view_do_not_overlap() {
    let sim = SimConfig::two_sensor(0);
    let (front, rear) = (&sim.sensors[0], &sim.sensors[1]);
    let half = rear.model.horizontal_fov_deg().to_radians() / 2.0;
    let axis = rear.extrinsic.rotate(&Vector3::x());
    for (d, _) in rear.model.rays(0.1) {
        assert!(rear.extrinsic.rotate(&d).angle(&axis) <= half + 1e-12);
    }
    let closest = front
        .model
        .rays(0.1)
        .iter()
        .map(|(d, _)| front.extrinsic.rotate(d).angle(&axis))
        .fold(f64::INFINITY, f64::min);
    assert!(closest > half, "front ray {:.1} deg from the rear axis", closest.to_degrees());
}

#[test]
fn entropy_is_stable_under_half_subsampling() {
    let ds = generate_dataset(&SimConfig::two_sensor(41)).unwrap();
    let cfg = PipelineConfig::default();
    let prepared = prepare_scans(&ds, &cfg).unwrap();
    let map = stitch_map(&prepared.scans, ds.gt_extrinsics.as_ref().unwrap(), &cfg.match_params()).unwrap();
    let full = evaluate_map(&map, 1.0).unwrap().mme;
    let diffs: Vec<f64> = (0..20u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = map.points.len();
            let half: Vec<_> = sample(&mut rng, n, n / 2).iter().map(|i| map.points[i]).collect();
            evaluate_map(&PointCloud::new(half), 1.0).unwrap().mme - full
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    println!("subsampling MME change: mean {mean:.4} nat, sd {sd:.4}, full map {full:.4}");
    assert!(mean.abs() + 3.0 * sd < 0.1, "mean {mean}, sd {sd}");
}

#[test]
fn five_sensor_rig_with_noise() {
    let f = fixture(SimConfig::five_sensor(31));
    let cfg = PipelineConfig {
        compute_metrics: false,
        ..f.cfg.clone()
    };
    let report = lidar_gins_calib::pipeline::calibrate_dataset(&f.ds, &cfg).unwrap();
    let base = f.prepared.base;
    let (mut rot2, mut trans2) = (0.0, 0.0);
    let others: Vec<usize> = (0..f.truth.len()).filter(|&m| m != base).collect();
    for &m in &others {
        let est = relative(&report.g_lm[base], &report.g_lm[m]);
        let (deg, t) = pose_error(&est, &relative(&f.truth[base], &f.truth[m]));
        rot2 += deg * deg;
        trans2 += t * t;
    }
    let n = others.len() as f64;
    let (rot, trans) = ((rot2 / n).sqrt(), (trans2 / n).sqrt());
    assert!(rot <= 0.3 && trans <= 0.05, "RMSE {rot} deg, {trans} m");
}

//! Finite-difference Jacobian checks of every factor family at random
//! configurations.

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::factors::{
    default_motion_covariance, Chain, Correspondence, HeightObservation, LogFactor, MatchFactor, MatchGroup,
    MotionVars, PointRef,
};
use crate::se3::{exp_map, RigidTransform, Twist6};
use crate::solver::{check_jacobian, Factor};

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianCheck {
    pub family: &'static str,
    pub configurations: usize,
    /// Largest relative error over all configurations.
    pub max_error: f64,
}

const STEP: f64 = 1e-6;

fn random_twist(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Twist6 {
    let mut x = [0.0; 6];
    for (i, v) in x.iter_mut().enumerate() {
        let s = if i < 3 { rot } else { trans };
        *v = rng.random_range(-s..s);
    }
    Twist6::from_slice(&x)
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    exp_map(&random_twist(rng, 1.0, 5.0))
}

fn near(rng: &mut ChaCha8Rng, t: &RigidTransform) -> RigidTransform {
    t.compose(&exp_map(&random_twist(rng, 0.05, 0.1)))
}

fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn random_covariance(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-0.05..0.05));
    a * a.transpose() + Matrix3::identity() * 1e-3
}

fn correspondence() -> Correspondence {
    Correspondence {
        a: PointRef { frame: 0, index: 0 },
        b: PointRef { frame: 1, index: 0 },
        distance: 0.0,
        gate_dist: 1.0,
    }
}

/// Values for six variables plus a factor of the named family.
fn sample(family: &str, rng: &mut ChaCha8Rng) -> Result<(Vec<RigidTransform>, Box<dyn Factor>)> {
    let mut v: Vec<RigidTransform> = (0..6).map(|_| random_pose(rng)).collect();
    let factor: Box<dyn Factor> = match family {
        "match_lidar_gins" => {
            let (pa, pb) = (random_point(rng, 20.0), random_point(rng, 20.0));
            let (ca, cb) = (random_covariance(rng), random_covariance(rng));
            let ka = Chain::new().constant(random_pose(rng)).var(0);
            let kb = Chain::new().constant(random_pose(rng)).var(0);
            Box::new(MatchFactor::new(correspondence(), ka, pa, &ca, kb, pb, &cb, &v)?)
        }
        "match_multi_lidar" => {
            let (pa, pb) = (random_point(rng, 20.0), random_point(rng, 20.0));
            let (ca, cb) = (random_covariance(rng), random_covariance(rng));
            let ka = Chain::new().var(1).var(0);
            let kb = Chain::new().var(2).var(3);
            Box::new(MatchFactor::new(correspondence(), ka, pa, &ca, kb, pb, &cb, &v)?)
        }
        "match_joint_gins" => {
            let (pa, pb) = (random_point(rng, 20.0), random_point(rng, 20.0));
            let (ca, cb) = (random_covariance(rng), random_covariance(rng));
            let c = random_pose(rng);
            let ka = Chain::new().var(1).var(0).constant(c);
            let kb = Chain::new().var(2).var(0).constant(c);
            Box::new(MatchFactor::new(correspondence(), ka, pa, &ca, kb, pb, &cb, &v)?)
        }
        "match_group" => {
            let c = random_pose(rng);
            let mut g = MatchGroup::new(Chain::new().var(4).constant(c).var(3), Chain::new().var(5).constant(c), &v);
            for _ in 0..8 {
                g.push(
                    correspondence(),
                    random_point(rng, 20.0),
                    &random_covariance(rng),
                    random_point(rng, 20.0),
                    &random_covariance(rng),
                )?;
            }
            Box::new(g)
        }
        "height" => {
            let h = rng.random_range(0.5..3.0);
            v[0] = near(rng, &RigidTransform::z_shift(-h));
            Box::new(LogFactor::height(0, &HeightObservation::new(h)))
        }
        "motion" => {
            let (g_vl, gi, gj) = (v[0], v[1], v[2]);
            v[3] = near(rng, &gi.compose(&g_vl));
            v[4] = near(rng, &gj.compose(&g_vl));
            let vars = MotionVars {
                g_vl: 0,
                gins_i: 1,
                gins_j: 2,
                base_i: 3,
                base_j: 4,
            };
            Box::new(LogFactor::motion(vars, LogFactor::whiten_diagonal(&default_motion_covariance())))
        }
        "prior" => {
            let target = near(rng, &v[5]);
            let s = 0.2f64.to_radians();
            Box::new(LogFactor::prior(5, target, &Vector6::new(s, s, s, 0.05, 0.05, 0.05)))
        }
        other => unreachable!("unknown family {other}"),
    };
    Ok((v, factor))
}

pub const FAMILIES: [&str; 7] = [
    "match_lidar_gins",
    "match_multi_lidar",
    "match_joint_gins",
    "match_group",
    "height",
    "motion",
    "prior",
];

/// Worst analytic-vs-numeric Jacobian gap per factor family.
pub fn jacobian_suite(configurations: usize, seed: u64) -> Result<Vec<JacobianCheck>> {
    FAMILIES
        .iter()
        .enumerate()
        .map(|(i, family)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
            let mut worst: f64 = 0.0;
            for _ in 0..configurations {
                let (values, factor) = sample(family, &mut rng)?;
                worst = worst.max(check_jacobian(factor.as_ref(), &values, STEP)?);
            }
            Ok(JacobianCheck {
                family,
                configurations,
                max_error: worst,
            })
        })
        .collect()
}

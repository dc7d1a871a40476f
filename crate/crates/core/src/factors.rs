//! Residual factors: generalized point matching, GINS installation height,
//! motion consistency and pose priors.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use crate::cloud::KdTree;
use crate::error::{Error, Result};
use crate::se3::{exp_map, hat, log_map, se3_right_jacobian_inv, RigidTransform, Twist6};
use crate::solver::{robust_cost, Factor, Linearization, NormalBlock, RobustKernel};

/// One element of a transform product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Link {
    Var(usize),
    InvVar(usize),
    Const(RigidTransform),
}

/// Ordered product of variables and constants, evaluated left to right.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chain(pub Vec<Link>);

impl Chain {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn var(mut self, i: usize) -> Self {
        self.0.push(Link::Var(i));
        self
    }

    pub fn inv(mut self, i: usize) -> Self {
        self.0.push(Link::InvVar(i));
        self
    }

    pub fn constant(mut self, t: RigidTransform) -> Self {
        if t != RigidTransform::identity() {
            self.0.push(Link::Const(t));
        }
        self
    }

    fn link_value(link: &Link, values: &[RigidTransform]) -> RigidTransform {
        match *link {
            Link::Var(i) => values[i],
            Link::InvVar(i) => values[i].inverse(),
            Link::Const(t) => t,
        }
    }

    pub fn eval(&self, values: &[RigidTransform]) -> RigidTransform {
        self.0
            .iter()
            .fold(RigidTransform::identity(), |acc, l| acc.compose(&Self::link_value(l, values)))
    }

    fn push_vars(&self, out: &mut Vec<usize>) {
        for l in &self.0 {
            if let Link::Var(i) | Link::InvVar(i) = *l {
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
    }

    /// Precomputes what the point Jacobians need at `values`.
    fn point_linearizer(&self, values: &[RigidTransform], vars: &[usize]) -> PointLinearizer {
        let n = self.0.len();
        let links: Vec<RigidTransform> = self.0.iter().map(|l| Self::link_value(l, values)).collect();
        // suffix[k] = E_k ... E_{n-1}
        let mut suffix = vec![RigidTransform::identity(); n + 1];
        for k in (0..n).rev() {
            suffix[k] = links[k].compose(&suffix[k + 1]);
        }
        let mut terms = Vec::new();
        let mut prefix = RigidTransform::identity();
        for k in 0..n {
            let with = prefix.compose(&links[k]);
            match self.0[k] {
                Link::Var(i) => {
                    let slot = vars.iter().position(|&v| v == i).unwrap();
                    terms.push((slot, with.rotation_matrix(), suffix[k + 1]));
                }
                Link::InvVar(i) => {
                    let slot = vars.iter().position(|&v| v == i).unwrap();
                    terms.push((slot, -prefix.rotation_matrix(), suffix[k]));
                }
                Link::Const(_) => {}
            }
            prefix = with;
        }
        PointLinearizer { full: suffix[0], terms }
    }

    /// `Log` of the product and its Jacobian with respect to each variable slot in `vars`.
    fn log_jacobians(&self, values: &[RigidTransform], vars: &[usize]) -> Result<(Vector6<f64>, Vec<Matrix6<f64>>)> {
        let n = self.0.len();
        let links: Vec<RigidTransform> = self.0.iter().map(|l| Self::link_value(l, values)).collect();
        // suffix[k] = E_k ... E_{n-1}
        let mut suffix = vec![RigidTransform::identity(); n + 1];
        for k in (0..n).rev() {
            suffix[k] = links[k].compose(&suffix[k + 1]);
        }
        let r = log_map(&suffix[0])?;
        let jr_inv = se3_right_jacobian_inv(&r);
        let mut jac = vec![Matrix6::zeros(); vars.len()];
        for k in 0..n {
            match self.0[k] {
                Link::Var(i) => {
                    let slot = vars.iter().position(|&v| v == i).unwrap();
                    jac[slot] += jr_inv * suffix[k + 1].inverse().adjoint();
                }
                Link::InvVar(i) => {
                    let slot = vars.iter().position(|&v| v == i).unwrap();
                    jac[slot] -= jr_inv * suffix[k].inverse().adjoint();
                }
                Link::Const(_) => {}
            }
        }
        Ok((r.0, jac))
    }
}

/// `d(T exp(delta) s) / d delta` for a transform with rotation `r`.
fn point_block(r: &Matrix3<f64>, s: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut b = Matrix3x6::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r * hat(s)));
    b.fixed_view_mut::<3, 3>(0, 3).copy_from(r);
    b
}

/// Chain evaluated at fixed values: the full transform and, per variable
/// occurrence, `(slot, M, S)` so that the occurrence contributes
/// `M [-hat(S p), I]` to the Jacobian of the image of `p`.
struct PointLinearizer {
    full: RigidTransform,
    terms: Vec<(usize, Matrix3<f64>, RigidTransform)>,
}

impl PointLinearizer {
    /// Adds `sign *` the Jacobian of the image of `p` into `jac[slot]`.
    fn add_jacobians(&self, p: &Vector3<f64>, sign: f64, jac: &mut [Matrix3x6<f64>]) {
        for (slot, m, s) in &self.terms {
            let sp = s.apply(p);
            let blk = point_block(m, &sp);
            jac[*slot] += blk * sign;
        }
    }
}

/// A point of a frame, by caller-assigned frame id and point index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointRef {
    pub frame: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub a: PointRef,
    pub b: PointRef,
    /// Euclidean distance at association time.
    pub distance: f64,
    pub gate_dist: f64,
}

/// Gated nearest neighbor in `b` of every point of `a`; both in a common frame.
///
/// Within a single frame a point is never paired with itself.
pub fn build_correspondences(
    frame_a: usize,
    points_a: &[Vector3<f64>],
    frame_b: usize,
    tree_b: &KdTree,
    gate: f64,
) -> Vec<Correspondence> {
    points_a
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let hit = if frame_a == frame_b {
                tree_b.nearest_filtered(p, gate, |j| j != i)
            } else {
                tree_b.nearest(p, gate)
            };
            hit.map(|(j, d)| Correspondence {
                a: PointRef { frame: frame_a, index: i },
                b: PointRef { frame: frame_b, index: j },
                distance: d,
                gate_dist: gate,
            })
        })
        .collect()
}

/// `d^T Sigma^-1 d`.
pub fn mahalanobis_sq(d: &Vector3<f64>, sigma: &Matrix3<f64>) -> Result<f64> {
    let ch = sigma
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("match covariance is not positive definite".into()))?;
    Ok(d.dot(&ch.solve(d)))
}

/// `Sigma = R_a C_a R_a^T + R_b C_b R_b^T` and `L^T` with `Sigma^-1 = L L^T`.
fn combined_covariance(
    ra: &Matrix3<f64>,
    cov_a: &Matrix3<f64>,
    rb: &Matrix3<f64>,
    cov_b: &Matrix3<f64>,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let sigma = ra * cov_a * ra.transpose() + rb * cov_b * rb.transpose();
    let sigma = (sigma + sigma.transpose()) * 0.5;
    let info = sigma
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("singular match covariance".into()))?;
    let info = (info + info.transpose()) * 0.5;
    let l = info
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("match covariance is not positive definite".into()))?
        .l();
    Ok((sigma, l.transpose()))
}

/// Point-pair difference between two transform chains, whitened by a frozen
/// combined covariance.
#[derive(Clone, Debug)]
pub struct MatchFactor {
    pub correspondence: Correspondence,
    pub chain_a: Chain,
    pub chain_b: Chain,
    pub point_a: Vector3<f64>,
    pub point_b: Vector3<f64>,
    /// Combined covariance at construction time.
    pub sigma: Matrix3<f64>,
    /// `L^T` with `Sigma^-1 = L L^T`.
    whiten: Matrix3<f64>,
    vars: Vec<usize>,
}

impl MatchFactor {
    /// Builds the factor with `Sigma = R_a C_a R_a^T + R_b C_b R_b^T` at `values`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        correspondence: Correspondence,
        chain_a: Chain,
        point_a: Vector3<f64>,
        cov_a: &Matrix3<f64>,
        chain_b: Chain,
        point_b: Vector3<f64>,
        cov_b: &Matrix3<f64>,
        values: &[RigidTransform],
    ) -> Result<Self> {
        let ra = chain_a.eval(values).rotation_matrix();
        let rb = chain_b.eval(values).rotation_matrix();
        let (sigma, whiten) = combined_covariance(&ra, cov_a, &rb, cov_b)?;
        let mut vars = Vec::new();
        chain_a.push_vars(&mut vars);
        chain_b.push_vars(&mut vars);
        Ok(Self {
            correspondence,
            chain_a,
            chain_b,
            point_a,
            point_b,
            sigma,
            whiten,
            vars,
        })
    }

    /// Unwhitened difference `chain_a(p_a) - chain_b(p_b)`.
    pub fn difference(&self, values: &[RigidTransform]) -> Vector3<f64> {
        self.chain_a.eval(values).apply(&self.point_a) - self.chain_b.eval(values).apply(&self.point_b)
    }
}

/// Difference vector and frozen covariance of a match factor.
pub fn match_residual(factor: &MatchFactor, values: &[RigidTransform]) -> (Vector3<f64>, Matrix3<f64>) {
    (factor.difference(values), factor.sigma)
}

impl Factor for MatchFactor {
    fn variables(&self) -> &[usize] {
        &self.vars
    }

    fn dim(&self) -> usize {
        3
    }

    fn residual(&self, values: &[RigidTransform]) -> Result<DVector<f64>> {
        let r = self.whiten * self.difference(values);
        Ok(DVector::from_column_slice(r.as_slice()))
    }

    fn linearize(&self, values: &[RigidTransform]) -> Result<Linearization> {
        let la = self.chain_a.point_linearizer(values, &self.vars);
        let lb = self.chain_b.point_linearizer(values, &self.vars);
        let mut jac = vec![Matrix3x6::zeros(); self.vars.len()];
        la.add_jacobians(&self.point_a, 1.0, &mut jac);
        lb.add_jacobians(&self.point_b, -1.0, &mut jac);
        let r = self.whiten * (la.full.apply(&self.point_a) - lb.full.apply(&self.point_b));
        Ok(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: jac
                .iter()
                .map(|j| {
                    let w = self.whiten * j;
                    DMatrix::from_column_slice(3, 6, w.as_slice())
                })
                .collect(),
        })
    }

    fn robust(&self) -> bool {
        true
    }
}

/// One point pair of a [`MatchGroup`].
#[derive(Clone, Debug)]
pub struct MatchItem {
    pub correspondence: Correspondence,
    pub point_a: Vector3<f64>,
    pub point_b: Vector3<f64>,
    pub sigma: Matrix3<f64>,
    whiten: Matrix3<f64>,
}

/// Every correspondence between two frames, sharing one pair of chains.
///
/// Equivalent to one [`MatchFactor`] per item; the Huber kernel applies to
/// each item separately.
#[derive(Clone, Debug)]
pub struct MatchGroup {
    pub chain_a: Chain,
    pub chain_b: Chain,
    items: Vec<MatchItem>,
    vars: Vec<usize>,
    rot_a: Matrix3<f64>,
    rot_b: Matrix3<f64>,
}

impl MatchGroup {
    /// Covariances of later items are propagated with the chain rotations at `values`.
    pub fn new(chain_a: Chain, chain_b: Chain, values: &[RigidTransform]) -> Self {
        let mut vars = Vec::new();
        chain_a.push_vars(&mut vars);
        chain_b.push_vars(&mut vars);
        let rot_a = chain_a.eval(values).rotation_matrix();
        let rot_b = chain_b.eval(values).rotation_matrix();
        Self {
            chain_a,
            chain_b,
            items: Vec::new(),
            vars,
            rot_a,
            rot_b,
        }
    }

    pub fn push(
        &mut self,
        correspondence: Correspondence,
        point_a: Vector3<f64>,
        cov_a: &Matrix3<f64>,
        point_b: Vector3<f64>,
        cov_b: &Matrix3<f64>,
    ) -> Result<()> {
        let (sigma, whiten) = combined_covariance(&self.rot_a, cov_a, &self.rot_b, cov_b)?;
        self.items.push(MatchItem {
            correspondence,
            point_a,
            point_b,
            sigma,
            whiten,
        });
        Ok(())
    }

    pub fn items(&self) -> &[MatchItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Unwhitened differences of all items.
    pub fn differences(&self, values: &[RigidTransform]) -> Vec<Vector3<f64>> {
        let ta = self.chain_a.eval(values);
        let tb = self.chain_b.eval(values);
        self.items
            .iter()
            .map(|it| ta.apply(&it.point_a) - tb.apply(&it.point_b))
            .collect()
    }

    fn whitened(&self, values: &[RigidTransform]) -> impl Iterator<Item = Vector3<f64>> + '_ {
        let ta = self.chain_a.eval(values);
        let tb = self.chain_b.eval(values);
        self.items
            .iter()
            .map(move |it| it.whiten * (ta.apply(&it.point_a) - tb.apply(&it.point_b)))
    }
}

impl Factor for MatchGroup {
    fn variables(&self) -> &[usize] {
        &self.vars
    }

    fn dim(&self) -> usize {
        3 * self.items.len()
    }

    fn residual(&self, values: &[RigidTransform]) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(
            self.dim(),
            self.whitened(values).flat_map(|r| [r.x, r.y, r.z]),
        ))
    }

    fn linearize(&self, values: &[RigidTransform]) -> Result<Linearization> {
        let la = self.chain_a.point_linearizer(values, &self.vars);
        let lb = self.chain_b.point_linearizer(values, &self.vars);
        let k = self.vars.len();
        let mut jacobians = vec![DMatrix::zeros(self.dim(), 6); k];
        for (n, it) in self.items.iter().enumerate() {
            let mut jac = vec![Matrix3x6::zeros(); k];
            la.add_jacobians(&it.point_a, 1.0, &mut jac);
            lb.add_jacobians(&it.point_b, -1.0, &mut jac);
            for (v, j) in jac.iter().enumerate() {
                jacobians[v].fixed_view_mut::<3, 6>(3 * n, 0).copy_from(&(it.whiten * j));
            }
        }
        Ok(Linearization {
            residual: self.residual(values)?,
            jacobians,
        })
    }

    fn robust(&self) -> bool {
        true
    }

    fn cost(&self, values: &[RigidTransform], kernel: Option<RobustKernel>) -> Result<f64> {
        Ok(self
            .whitened(values)
            .map(|r| robust_cost(r.norm_squared(), true, kernel).0)
            .sum())
    }

    fn normal_block(&self, values: &[RigidTransform], kernel: Option<RobustKernel>) -> Result<NormalBlock> {
        let la = self.chain_a.point_linearizer(values, &self.vars);
        let lb = self.chain_b.point_linearizer(values, &self.vars);
        let k = self.vars.len();
        let mut out = NormalBlock::zeros(k);
        let mut jac = vec![Matrix3x6::zeros(); k];
        for it in &self.items {
            let r = it.whiten * (la.full.apply(&it.point_a) - lb.full.apply(&it.point_b));
            let (c, w) = robust_cost(r.norm_squared(), true, kernel);
            out.cost += c;
            jac.iter_mut().for_each(|j| *j = Matrix3x6::zeros());
            la.add_jacobians(&it.point_a, 1.0, &mut jac);
            lb.add_jacobians(&it.point_b, -1.0, &mut jac);
            for j in jac.iter_mut() {
                *j = it.whiten * *j * w.sqrt();
            }
            let rw = r * w.sqrt();
            for a in 0..k {
                out.g[a] += jac[a].transpose() * rw;
                for b in a..k {
                    out.h[a * k + b] += jac[a].transpose() * jac[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                out.h[a * k + b] = out.h[b * k + a].transpose();
            }
        }
        Ok(out)
    }
}

/// `W Log(chain)` for a fixed 6x6 whitening matrix `W`.
#[derive(Clone, Debug)]
pub struct LogFactor {
    pub chain: Chain,
    pub whiten: Matrix6<f64>,
    vars: Vec<usize>,
}

impl LogFactor {
    pub fn new(chain: Chain, whiten: Matrix6<f64>) -> Self {
        let mut vars = Vec::new();
        chain.push_vars(&mut vars);
        Self { chain, whiten, vars }
    }

    /// Whitening for a diagonal covariance.
    pub fn whiten_diagonal(variances: &Vector6<f64>) -> Matrix6<f64> {
        Matrix6::from_diagonal(&variances.map(|v| 1.0 / v.sqrt()))
    }

    /// `Log(target^-1 T_var)` with the given per-slot standard deviations.
    pub fn prior(var: usize, target: RigidTransform, sigmas: &Vector6<f64>) -> Self {
        Self::new(
            Chain::new().constant(target.inverse()).var(var),
            Matrix6::from_diagonal(&sigmas.map(|s| 1.0 / s)),
        )
    }

    /// Installation-height factor on the GINS-from-VLiDAR extrinsic variable:
    /// `Log(y T_var)`, the inverse of the VLiDAR-from-GINS extrinsic being `T_var`.
    pub fn height(var_g_vl: usize, obs: &HeightObservation) -> Self {
        Self::new(
            Chain::new().constant(obs.measurement()).var(var_g_vl),
            Self::whiten_diagonal(&obs.q_diagonal()),
        )
    }

    /// Motion consistency between GINS poses and VLiDAR poses at two times.
    ///
    /// `Log(VL_G * WG_j^-1 * WG_i * VL_G^-1 * WVL_i^-1 * WVL_j)` where `VL_G` is
    /// the inverse of the `g_vl` variable.
    pub fn motion(vars: MotionVars, whiten: Matrix6<f64>) -> Self {
        Self::new(
            Chain::new()
                .inv(vars.g_vl)
                .inv(vars.gins_j)
                .var(vars.gins_i)
                .var(vars.g_vl)
                .inv(vars.base_i)
                .var(vars.base_j),
            whiten,
        )
    }

    pub fn raw_residual(&self, values: &[RigidTransform]) -> Result<Vector6<f64>> {
        Ok(log_map(&self.chain.eval(values))?.0)
    }
}

/// Variable indices of a motion factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MotionVars {
    pub g_vl: usize,
    pub gins_i: usize,
    pub gins_j: usize,
    pub base_i: usize,
    pub base_j: usize,
}

/// Default motion covariance: (0.1 deg)^2 on rotation, (0.02 m)^2 on translation.
pub fn default_motion_covariance() -> Vector6<f64> {
    let r = 0.1f64.to_radians().powi(2);
    let t = 0.02f64.powi(2);
    Vector6::new(r, r, r, t, t, t)
}

impl Factor for LogFactor {
    fn variables(&self) -> &[usize] {
        &self.vars
    }

    fn dim(&self) -> usize {
        6
    }

    fn residual(&self, values: &[RigidTransform]) -> Result<DVector<f64>> {
        let r = self.whiten * self.raw_residual(values)?;
        Ok(DVector::from_column_slice(r.as_slice()))
    }

    fn linearize(&self, values: &[RigidTransform]) -> Result<Linearization> {
        let (r, jac) = self.chain.log_jacobians(values, &self.vars)?;
        let r = self.whiten * r;
        Ok(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: jac
                .iter()
                .map(|j| {
                    let w = self.whiten * j;
                    DMatrix::from_column_slice(6, 6, w.as_slice())
                })
                .collect(),
        })
    }
}

/// Measured GINS installation height with its degenerate 6x6 covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightObservation {
    pub h_g: f64,
    /// Variance on the five unobserved slots.
    pub c_b: f64,
    /// Variance on the z-translation slot.
    pub c_s: f64,
}

impl HeightObservation {
    pub fn new(h_g: f64) -> Self {
        Self {
            h_g,
            c_b: 1e8,
            c_s: 1e-3,
        }
    }

    /// `y = exp([0, 0, 0, 0, 0, h_G])`.
    pub fn measurement(&self) -> RigidTransform {
        exp_map(&Twist6::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, self.h_g]))
    }

    pub fn q_diagonal(&self) -> Vector6<f64> {
        Vector6::new(self.c_b, self.c_b, self.c_b, self.c_b, self.c_b, self.c_s)
    }
}

/// `Log(y * extrinsic^-1)` for the VLiDAR-from-GINS extrinsic.
pub fn height_residual(extrinsic_vl_g: &RigidTransform, obs: &HeightObservation) -> Result<Vector6<f64>> {
    Ok(log_map(&obs.measurement().compose(&extrinsic_vl_g.inverse()))?.0)
}

/// `r^T Q^-1 r` of the height residual.
pub fn height_cost(extrinsic_vl_g: &RigidTransform, obs: &HeightObservation) -> Result<f64> {
    let r = height_residual(extrinsic_vl_g, obs)?;
    Ok(r.component_div(&obs.q_diagonal()).dot(&r))
}

/// The product of the motion factor evaluated on plain transforms.
pub fn motion_residual(
    vl_g: &RigidTransform,
    gins_i: &RigidTransform,
    gins_j: &RigidTransform,
    base_i: &RigidTransform,
    base_j: &RigidTransform,
) -> Result<Vector6<f64>> {
    let prod = vl_g
        .compose(&gins_j.inverse())
        .compose(gins_i)
        .compose(&vl_g.inverse())
        .compose(&base_i.inverse())
        .compose(base_j);
    Ok(log_map(&prod)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::check_jacobian;
    use nalgebra::Vector3;

    fn t(rpy: [f64; 3], xyz: [f64; 3]) -> RigidTransform {
        RigidTransform::from_rpy(rpy[0], rpy[1], rpy[2], Vector3::from(xyz))
    }

    #[test]
    fn mahalanobis_examples() {
        let d = Vector3::new(1.0, 0.0, 0.0);
        assert!((mahalanobis_sq(&d, &Matrix3::identity()).unwrap() - 1.0).abs() < 1e-15);
        let s = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert!((mahalanobis_sq(&d, &s).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identical_point_and_chain_is_zero() {
        let values = vec![t([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])];
        let p = Vector3::new(0.5, -0.2, 4.0);
        let c = Correspondence {
            a: PointRef { frame: 0, index: 0 },
            b: PointRef { frame: 1, index: 0 },
            distance: 0.0,
            gate_dist: 1.0,
        };
        let f = MatchFactor::new(
            c,
            Chain::new().var(0),
            p,
            &Matrix3::identity(),
            Chain::new().var(0),
            p,
            &Matrix3::identity(),
            &values,
        )
        .unwrap();
        let (d, _) = match_residual(&f, &values);
        assert_eq!(d, Vector3::zeros());
        assert_eq!(f.residual(&values).unwrap().norm(), 0.0);
    }

    #[test]
    fn height_examples() {
        let obs = HeightObservation::new(1.8);
        let r = height_residual(&RigidTransform::from_translation(0.0, 0.0, 1.8), &obs).unwrap();
        assert!(r.norm() < 1e-15);
        let r = height_residual(&RigidTransform::from_translation(0.0, 0.0, 1.9), &obs).unwrap();
        assert!((r[5] + 0.1).abs() < 1e-12);
        assert!(r.rows(0, 5).norm() < 1e-12);
    }

    #[test]
    fn height_cost_is_dominated_by_z() {
        use rand::{Rng, SeedableRng};
        let obs = HeightObservation::new(1.8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let rpy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.1f64..0.1).to_radians());
            let off = height_cost(&t(rpy, [0.0, 0.0, 1.9]), &obs).unwrap();
            let on = height_cost(&t(rpy, [0.0, 0.0, 1.8]), &obs).unwrap();
            assert!(off >= 1e6 * on, "{off} vs {on}");
        }
    }

    #[test]
    fn height_factor_matches_residual() {
        let obs = HeightObservation::new(1.8);
        let vl_g = t([0.02, -0.01, 0.3], [0.1, 0.2, 1.7]);
        let f = LogFactor::height(0, &obs);
        let values = [vl_g.inverse()];
        let whitened = f.residual(&values).unwrap();
        let direct = height_residual(&vl_g, &obs).unwrap();
        for i in 0..6 {
            assert!((whitened[i] - direct[i] / obs.q_diagonal()[i].sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn motion_vanishes_on_consistent_poses() {
        let g_vl = t([0.01, 0.02, 0.5], [1.0, 0.3, -0.2]);
        let wi = t([0.0, 0.0, 0.2], [5.0, 1.0, 1.8]);
        let wj = t([0.01, 0.0, 0.4], [7.0, 2.0, 1.8]);
        let r = motion_residual(&g_vl.inverse(), &wi, &wj, &(wi * g_vl), &(wj * g_vl)).unwrap();
        assert!(r.norm() < 1e-12);
        let id = RigidTransform::identity();
        let r = motion_residual(&id, &wi, &wj, &wi, &wj).unwrap();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn motion_factor_matches_plain_product() {
        let vals = vec![
            t([0.01, 0.02, 0.5], [1.0, 0.3, -0.2]),
            t([0.0, 0.0, 0.2], [5.0, 1.0, 1.8]),
            t([0.01, 0.0, 0.4], [7.0, 2.0, 1.8]),
            t([0.0, 0.03, 0.1], [4.0, 1.0, 1.0]),
            t([0.02, 0.0, 0.3], [6.0, 2.5, 1.2]),
        ];
        let mv = MotionVars {
            g_vl: 0,
            gins_i: 1,
            gins_j: 2,
            base_i: 3,
            base_j: 4,
        };
        let f = LogFactor::motion(mv, Matrix6::identity());
        let a = f.raw_residual(&vals).unwrap();
        let b = motion_residual(&vals[0].inverse(), &vals[1], &vals[2], &vals[3], &vals[4]).unwrap();
        assert!((a - b).norm() < 1e-12);
        assert!(check_jacobian(&f, &vals, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn prior_jacobian_at_target_is_exact() {
        let target = t([0.3, -0.1, 1.0], [0.1, 0.2, 0.3]);
        let f = LogFactor::prior(0, target, &Vector6::repeat(1.0));
        let e = check_jacobian(&f, &[target], 1e-6).unwrap();
        assert!(e < 1e-10, "{e}");
    }

    #[test]
    fn match_jacobian_with_shared_variable() {
        let vals = vec![t([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]), t([-0.2, 0.1, 2.0], [0.5, -1.0, 0.2])];
        let c = Correspondence {
            a: PointRef { frame: 0, index: 0 },
            b: PointRef { frame: 1, index: 0 },
            distance: 0.0,
            gate_dist: 1.0,
        };
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1e-3));
        let f = MatchFactor::new(
            c,
            Chain::new().var(0).var(1),
            Vector3::new(3.0, -1.0, 0.5),
            &cov,
            Chain::new().var(1).constant(t([0.0, 0.0, 0.3], [0.1, 0.0, 0.0])).inv(0),
            Vector3::new(-2.0, 0.5, 1.0),
            &cov,
            &vals,
        )
        .unwrap();
        assert!(check_jacobian(&f, &vals, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn gate_and_self_pairs() {
        let pts: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let tree = KdTree::build(&pts);
        let same = build_correspondences(0, &pts, 1, &tree, 0.5);
        assert!(same.iter().all(|c| c.a.index == c.b.index));
        assert_eq!(same.len(), 5);
        let shifted: Vec<Vector3<f64>> = pts.iter().map(|p| p + Vector3::new(0.0, 1.0, 0.0)).collect();
        assert!(build_correspondences(0, &shifted, 1, &tree, 0.5).is_empty());
        let own = build_correspondences(0, &pts, 0, &tree, 1.5);
        assert!(own.iter().all(|c| c.a.index != c.b.index));
    }

    fn sample_group() -> (Vec<RigidTransform>, MatchGroup, Vec<MatchFactor>) {
        let vals = vec![t([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]), t([-0.2, 0.1, 2.0], [0.5, -1.0, 0.2])];
        let ca = Chain::new().constant(t([0.0, 0.1, 0.0], [0.0, 1.0, 0.0])).var(0).var(1);
        let cb = Chain::new().var(1).inv(0);
        let mut group = MatchGroup::new(ca.clone(), cb.clone(), &vals);
        let mut singles = Vec::new();
        for i in 0..6 {
            let fi = i as f64;
            let pa = Vector3::new(3.0 - fi, -1.0 + 0.3 * fi, 0.5);
            let pb = Vector3::new(-2.0, 0.5 * fi, 1.0 - 0.2 * fi);
            let cov_a = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0 + 0.1 * fi, 1e-3));
            let cov_b = Matrix3::from_diagonal(&Vector3::new(1e-3, 1.0, 1.0));
            let c = Correspondence {
                a: PointRef { frame: 0, index: i },
                b: PointRef { frame: 1, index: i },
                distance: 0.0,
                gate_dist: 1.0,
            };
            group.push(c, pa, &cov_a, pb, &cov_b).unwrap();
            singles.push(MatchFactor::new(c, ca.clone(), pa, &cov_a, cb.clone(), pb, &cov_b, &vals).unwrap());
        }
        (vals, group, singles)
    }

    #[test]
    fn group_equals_sum_of_single_factors() {
        let (vals, group, singles) = sample_group();
        let kernel = Some(RobustKernel::new(0.5).unwrap());
        let gb = group.normal_block(&vals, kernel).unwrap();
        let mut cost = 0.0;
        let mut h = vec![Matrix6::zeros(); 4];
        let mut g = vec![Vector6::zeros(); 2];
        for f in &singles {
            let b = f.normal_block(&vals, kernel).unwrap();
            cost += b.cost;
            for i in 0..4 {
                h[i] += b.h[i];
            }
            for i in 0..2 {
                g[i] += b.g[i];
            }
        }
        assert!((gb.cost - cost).abs() < 1e-9 * cost.max(1.0));
        assert!((gb.cost - group.cost(&vals, kernel).unwrap()).abs() < 1e-9 * cost.max(1.0));
        for i in 0..4 {
            assert!((gb.h[i] - h[i]).norm() < 1e-9 * h[i].norm().max(1.0));
        }
        for i in 0..2 {
            assert!((gb.g[i] - g[i]).norm() < 1e-9 * g[i].norm().max(1.0));
        }
    }

    #[test]
    fn group_jacobian_matches_differences() {
        let (vals, group, _) = sample_group();
        assert!(check_jacobian(&group, &vals, 1e-6).unwrap() < 1e-5);
    }
}

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::se3::{RigidTransform, Twist6};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Pose,
    Extrinsic,
}

/// One optimization variable on SE(3).
#[derive(Clone, Debug, PartialEq)]
pub struct VariableBlock {
    pub kind: BlockKind,
    pub value: RigidTransform,
    pub fixed: bool,
}

impl VariableBlock {
    pub fn pose(value: RigidTransform) -> Self {
        Self {
            kind: BlockKind::Pose,
            value,
            fixed: false,
        }
    }

    pub fn extrinsic(value: RigidTransform) -> Self {
        Self {
            kind: BlockKind::Extrinsic,
            value,
            fixed: false,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.fixed = true;
        self
    }
}

/// Huber kernel with threshold `delta` (meters, or Mahalanobis units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustKernel {
    pub delta: f64,
}

impl RobustKernel {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("Huber delta must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }
}

impl Default for RobustKernel {
    fn default() -> Self {
        Self { delta: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HuberWeight {
    pub rho: f64,
    pub weight: f64,
}

/// Huber cost `rho(r)` and its IRLS weight `rho'(r) / (2 r)`.
pub fn huber_weight(residual_norm: f64, delta: f64) -> HuberWeight {
    let r = residual_norm;
    if r <= delta {
        HuberWeight { rho: r * r, weight: 1.0 }
    } else {
        HuberWeight {
            rho: 2.0 * delta * r - delta * delta,
            weight: delta / r,
        }
    }
}

/// Whitened residual and its Jacobians, one `dim x 6` block per variable.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

/// Cost and Gauss-Newton blocks of one factor over its `variables()`:
/// `h[a * k + b] = sum w J_a^T J_b` and `g[a] = sum w J_a^T r`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalBlock {
    pub cost: f64,
    pub h: Vec<Matrix6<f64>>,
    pub g: Vec<Vector6<f64>>,
}

impl NormalBlock {
    pub fn zeros(k: usize) -> Self {
        Self {
            cost: 0.0,
            h: vec![Matrix6::zeros(); k * k],
            g: vec![Vector6::zeros(); k],
        }
    }
}

/// A residual term over a few SE(3) variables.
///
/// Residuals are whitened: the factor cost is `|r|^2`, or `rho(|r|)` when
/// [`Factor::robust`] is true and a kernel is configured.
pub trait Factor: Send + Sync {
    /// Indices into the variable array, without repeats.
    fn variables(&self) -> &[usize];

    fn dim(&self) -> usize;

    fn residual(&self, values: &[RigidTransform]) -> Result<DVector<f64>>;

    /// Jacobians with respect to right perturbations `T exp(delta)`.
    fn linearize(&self, values: &[RigidTransform]) -> Result<Linearization>;

    fn robust(&self) -> bool {
        false
    }

    fn cost(&self, values: &[RigidTransform], kernel: Option<RobustKernel>) -> Result<f64> {
        Ok(factor_cost(&self.residual(values)?, self.robust(), kernel).0)
    }

    fn normal_block(&self, values: &[RigidTransform], kernel: Option<RobustKernel>) -> Result<NormalBlock> {
        let lin = self.linearize(values)?;
        let (cost, w) = factor_cost(&lin.residual, self.robust(), kernel);
        let k = lin.jacobians.len();
        let mut out = NormalBlock::zeros(k);
        out.cost = cost;
        for a in 0..k {
            let ja = &lin.jacobians[a];
            out.g[a] = Vector6::from_iterator((ja.transpose() * &lin.residual * w).iter().copied());
            for b in 0..k {
                let hab = ja.transpose() * &lin.jacobians[b] * w;
                out.h[a * k + b] = Matrix6::from_iterator(hab.iter().copied());
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub relative_cost_tol: f64,
    pub gradient_tol: f64,
    pub initial_lambda: f64,
    pub kernel: Option<RobustKernel>,
    /// When set, steps are solved in an eigenbasis and weakly informed
    /// directions are left untouched. Otherwise the damped system is solved by
    /// Cholesky.
    pub truncation: Option<Truncation>,
}

/// Eigen-truncation of the normal matrix.
///
/// Rotation coordinates are multiplied by `rotation_length_m` so that all
/// coordinates are lengths; a direction is dropped when its eigenvalue is
/// below `relative * max` or below `absolute`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub relative: f64,
    pub absolute: f64,
    pub rotation_length_m: f64,
}

impl Truncation {
    pub fn relative(relative: f64) -> Self {
        Self {
            relative,
            absolute: 0.0,
            rotation_length_m: 1.0,
        }
    }
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_cost_tol: 1e-9,
            gradient_tol: 1e-10,
            initial_lambda: 1e-4,
            kernel: None,
            truncation: None,
        }
    }
}

const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 0.5;
const LAMBDA_MIN: f64 = 1e-10;
const LAMBDA_MAX: f64 = 1e16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    NoFreeVariables,
    RelativeCostChange,
    GradientNorm,
    MaxIterations,
    /// Damping saturated without finding a cheaper step.
    NoDescent,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::NoFreeVariables => "no_free_variables",
            Termination::RelativeCostChange => "relative_cost_change",
            Termination::GradientNorm => "gradient_norm",
            Termination::MaxIterations => "max_iterations",
            Termination::NoDescent => "no_descent",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverReport {
    /// Accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination_reason: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

pub(crate) fn factor_cost(r: &DVector<f64>, robust: bool, kernel: Option<RobustKernel>) -> (f64, f64) {
    robust_cost(r.norm_squared(), robust, kernel)
}

/// Cost and IRLS weight of a residual with squared norm `sq`.
pub fn robust_cost(sq: f64, robust: bool, kernel: Option<RobustKernel>) -> (f64, f64) {
    match kernel {
        Some(k) if robust => {
            let h = huber_weight(sq.sqrt(), k.delta);
            (h.rho, h.weight)
        }
        _ => (sq, 1.0),
    }
}

/// Robustified total cost at `values`.
pub fn total_cost(factors: &[Box<dyn Factor>], values: &[RigidTransform], kernel: Option<RobustKernel>) -> Result<f64> {
    let costs: Vec<f64> = factors
        .par_iter()
        .map(|f| f.cost(values, kernel))
        .collect::<Result<_>>()?;
    // summed in factor order so the total does not depend on thread count
    Ok(costs.iter().sum())
}

struct Normal {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

fn build_normal_equations(
    factors: &[Box<dyn Factor>],
    values: &[RigidTransform],
    slot: &[Option<usize>],
    n_free: usize,
    kernel: Option<RobustKernel>,
) -> Result<Normal> {
    let blocks: Vec<NormalBlock> = factors
        .par_iter()
        .map(|f| f.normal_block(values, kernel))
        .collect::<Result<_>>()?;
    let dim = 6 * n_free;
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut cost = 0.0;
    for (f, blk) in factors.iter().zip(&blocks) {
        cost += blk.cost;
        let vars = f.variables();
        let k = vars.len();
        for (a, &va) in vars.iter().enumerate() {
            let Some(sa) = slot[va] else { continue };
            let mut gv = g.fixed_rows_mut::<6>(6 * sa);
            gv += &blk.g[a];
            for (b, &vb) in vars.iter().enumerate() {
                if let Some(sb) = slot[vb] {
                    let mut hv = h.fixed_view_mut::<6, 6>(6 * sa, 6 * sb);
                    hv += &blk.h[a * k + b];
                }
            }
        }
    }
    if !cost.is_finite() || h.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite cost or Jacobian".into()));
    }
    Ok(Normal { h, g })
}

fn jacobi_scale(h: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        h.nrows(),
        (0..h.nrows()).map(|i| if h[(i, i)] > 0.0 { 1.0 / h[(i, i)].sqrt() } else { 0.0 }),
    )
}

/// Per-coordinate factors turning rotation coordinates into lengths.
fn metric_scale(n: usize, rotation_length_m: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|i| if i % 6 < 3 { 1.0 / rotation_length_m } else { 1.0 }))
}

fn scaled(h: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut a = h.clone();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            a[(i, j)] *= s[i] * s[j];
        }
    }
    (&a + a.transpose()) * 0.5
}

/// Ratio of extreme eigenvalues of the Jacobi-scaled matrix `D H D`,
/// `D = diag(H)^-1/2`. Infinite when some direction carries no information.
pub fn scaled_condition_number(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return 1.0;
    }
    let s = jacobi_scale(h);
    if s.iter().any(|&v| v == 0.0) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(scaled(h, &s));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Gauss-Newton matrix of the free variables at their current values.
pub fn normal_matrix(
    variables: &[VariableBlock],
    factors: &[Box<dyn Factor>],
    kernel: Option<RobustKernel>,
) -> Result<DMatrix<f64>> {
    let (slot, n_free) = free_slots(variables);
    let values: Vec<RigidTransform> = variables.iter().map(|v| v.value).collect();
    Ok(build_normal_equations(factors, &values, &slot, n_free, kernel)?.h)
}

enum StepSolver {
    Cholesky { h: DMatrix<f64>, g: DVector<f64> },
    Eigen {
        scale: DVector<f64>,
        vectors: DMatrix<f64>,
        values: DVector<f64>,
        /// Scaled gradient projected on the eigenvectors.
        proj: DVector<f64>,
    },
}

impl StepSolver {
    fn new(normal: &Normal, truncation: Option<Truncation>) -> Self {
        match truncation {
            None => StepSolver::Cholesky {
                h: normal.h.clone(),
                g: normal.g.clone(),
            },
            Some(tr) => {
                let scale = metric_scale(normal.h.nrows(), tr.rotation_length_m);
                let eig = SymmetricEigen::new(scaled(&normal.h, &scale));
                let gs = normal.g.component_mul(&scale);
                let max = eig.eigenvalues.max().max(0.0);
                let cut = (tr.relative * max).max(tr.absolute);
                let mut values = eig.eigenvalues.clone();
                for v in values.iter_mut() {
                    if *v <= cut {
                        *v = f64::INFINITY;
                    }
                }
                let proj = eig.eigenvectors.transpose() * gs;
                StepSolver::Eigen {
                    scale,
                    vectors: eig.eigenvectors,
                    values,
                    proj,
                }
            }
        }
    }

    fn step(&self, lambda: f64) -> Option<DVector<f64>> {
        match self {
            StepSolver::Cholesky { h, g } => {
                let mut a = h.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * h[(i, i)].max(1e-9);
                }
                a.cholesky().map(|ch| ch.solve(&(-g)))
            }
            StepSolver::Eigen {
                scale,
                vectors,
                values,
                proj,
            } => {
                let coef = DVector::from_iterator(
                    values.len(),
                    values.iter().zip(proj.iter()).map(|(&mu, &p)| -p / (mu + lambda)),
                );
                Some((vectors * coef).component_mul(scale))
            }
        }
    }
}

fn free_slots(variables: &[VariableBlock]) -> (Vec<Option<usize>>, usize) {
    let mut slot = vec![None; variables.len()];
    let mut n_free = 0;
    for (i, v) in variables.iter().enumerate() {
        if !v.fixed {
            slot[i] = Some(n_free);
            n_free += 1;
        }
    }
    (slot, n_free)
}

fn retract_all(values: &[RigidTransform], slot: &[Option<usize>], step: &DVector<f64>) -> Vec<RigidTransform> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| match slot[i] {
            Some(s) => {
                let d: [f64; 6] = std::array::from_fn(|k| step[6 * s + k]);
                v.retract(&Twist6::from_slice(&d))
            }
            None => *v,
        })
        .collect()
}

/// Levenberg-Marquardt over SE(3) variables with updates `T <- T exp(delta)`.
///
/// Variables are updated in place; fixed blocks are never touched.
pub fn lm_minimize(
    variables: &mut [VariableBlock],
    factors: &[Box<dyn Factor>],
    options: &LmOptions,
) -> Result<SolverReport> {
    let (slot, n_free) = free_slots(variables);
    let mut touched = vec![false; variables.len()];
    for f in factors {
        for &v in f.variables() {
            if v >= variables.len() {
                return Err(Error::NumericalFailure(format!("factor references missing variable {v}")));
            }
            touched[v] = true;
        }
    }
    if let Some(i) = (0..variables.len()).find(|&i| !variables[i].fixed && !touched[i]) {
        return Err(Error::UnconstrainedVariable(i));
    }

    let mut values: Vec<RigidTransform> = variables.iter().map(|v| v.value).collect();
    let kernel = options.kernel;
    let initial_cost = total_cost(factors, &values, kernel)?;
    if !initial_cost.is_finite() {
        return Err(Error::NumericalFailure("initial cost is not finite".into()));
    }
    let mut report = SolverReport {
        iterations: 0,
        initial_cost,
        final_cost: initial_cost,
        converged: true,
        termination_reason: Termination::NoFreeVariables,
        cost_history: vec![initial_cost],
    };
    if n_free == 0 {
        return Ok(report);
    }

    let mut lambda = options.initial_lambda;
    let mut cost = initial_cost;
    report.termination_reason = Termination::MaxIterations;
    report.converged = false;
    let mut normal = build_normal_equations(factors, &values, &slot, n_free, kernel)?;
    while report.iterations < options.max_iterations {
        // gradient of the cost is 2 J^T W r
        if 2.0 * normal.g.norm() < options.gradient_tol {
            report.termination_reason = Termination::GradientNorm;
            report.converged = true;
            break;
        }
        let solver = StepSolver::new(&normal, options.truncation);
        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            let Some(step) = solver.step(lambda) else {
                lambda *= LAMBDA_UP;
                continue;
            };
            let trial = retract_all(&values, &slot, &step);
            match total_cost(factors, &trial, kernel) {
                Ok(c) if c.is_finite() && c < cost => {
                    accepted = Some((trial, c));
                    break;
                }
                _ => lambda *= LAMBDA_UP,
            }
        }
        let Some((trial, new_cost)) = accepted else {
            report.termination_reason = Termination::NoDescent;
            report.converged = true;
            break;
        };
        lambda = (lambda * LAMBDA_DOWN).max(LAMBDA_MIN);
        let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
        values = trial;
        cost = new_cost;
        report.iterations += 1;
        report.cost_history.push(cost);
        if rel < options.relative_cost_tol {
            report.termination_reason = Termination::RelativeCostChange;
            report.converged = true;
            break;
        }
        normal = build_normal_equations(factors, &values, &slot, n_free, kernel)?;
    }
    if report.termination_reason == Termination::MaxIterations && 2.0 * normal.g.norm() < options.gradient_tol {
        report.converged = true;
    }
    report.final_cost = cost;
    for (v, val) in variables.iter_mut().zip(values) {
        if !v.fixed {
            v.value = val;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{exp_map, log_map, se3_right_jacobian_inv};
    use nalgebra::{Matrix6, Vector3};

    struct Prior {
        var: [usize; 1],
        target_inv: RigidTransform,
    }

    impl Factor for Prior {
        fn variables(&self) -> &[usize] {
            &self.var
        }
        fn dim(&self) -> usize {
            6
        }
        fn residual(&self, values: &[RigidTransform]) -> Result<DVector<f64>> {
            let r = log_map(&self.target_inv.compose(&values[self.var[0]]))?;
            Ok(DVector::from_column_slice(r.0.as_slice()))
        }
        fn linearize(&self, values: &[RigidTransform]) -> Result<Linearization> {
            let r = log_map(&self.target_inv.compose(&values[self.var[0]]))?;
            let j: Matrix6<f64> = se3_right_jacobian_inv(&r);
            Ok(Linearization {
                residual: DVector::from_column_slice(r.0.as_slice()),
                jacobians: vec![DMatrix::from_column_slice(6, 6, j.as_slice())],
            })
        }
    }

    fn prior(var: usize, target: RigidTransform) -> Box<dyn Factor> {
        Box::new(Prior {
            var: [var],
            target_inv: target.inverse(),
        })
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber_weight(0.0, 0.1), HuberWeight { rho: 0.0, weight: 1.0 });
        let at = huber_weight(0.1, 0.1);
        assert!((at.rho - 0.01).abs() < 1e-17 && at.weight == 1.0);
        assert!((huber_weight(0.2, 0.1).rho - 0.03).abs() < 1e-15);
        assert!((huber_weight(0.2, 0.1).weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prior_converges_in_three_steps() {
        let target = RigidTransform::from_rpy(0.1, -0.2, 0.3, Vector3::new(1.0, 2.0, -0.5));
        let mut vars = vec![VariableBlock::pose(RigidTransform::identity())];
        let opts = LmOptions {
            max_iterations: 3,
            ..Default::default()
        };
        let rep = lm_minimize(&mut vars, &[prior(0, target)], &opts).unwrap();
        assert!(rep.iterations <= 3);
        assert!(rep.final_cost < 1e-18, "{}", rep.final_cost);
        assert!((vars[0].value.translation - target.translation).norm() < 1e-9);
    }

    #[test]
    fn all_fixed_reports_initial_cost() {
        let mut vars = vec![VariableBlock::pose(RigidTransform::from_translation(1.0, 0.0, 0.0)).fixed()];
        let rep = lm_minimize(&mut vars, &[prior(0, RigidTransform::identity())], &LmOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!((rep.initial_cost - 1.0).abs() < 1e-15);
        assert_eq!(rep.final_cost, rep.initial_cost);
    }

    #[test]
    fn untouched_variable_is_reported() {
        let mut vars = vec![
            VariableBlock::pose(RigidTransform::identity()),
            VariableBlock::pose(RigidTransform::identity()),
        ];
        let err = lm_minimize(&mut vars, &[prior(0, RigidTransform::identity())], &LmOptions::default());
        assert!(matches!(err, Err(Error::UnconstrainedVariable(1))));
    }

    #[test]
    fn fixed_block_is_untouched() {
        let start = exp_map(&Twist6::from_slice(&[0.1, 0.0, 0.0, 0.5, 0.0, 0.0]));
        let mut vars = vec![VariableBlock::pose(start).fixed(), VariableBlock::pose(start)];
        let factors = vec![prior(0, RigidTransform::identity()), prior(1, RigidTransform::identity())];
        let before = total_cost(&factors, &[start, start], None).unwrap();
        let rep = lm_minimize(&mut vars, &factors, &LmOptions::default()).unwrap();
        assert_eq!(vars[0].value, start);
        // the fixed factor keeps half the initial cost
        assert!((rep.final_cost - before / 2.0).abs() < 1e-6 * before);
    }

    /// Pulls only the x translation of variable 0 toward a target.
    struct XOnly {
        var: [usize; 1],
        x: f64,
    }

    impl Factor for XOnly {
        fn variables(&self) -> &[usize] {
            &self.var
        }
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, values: &[RigidTransform]) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, values[0].translation.x - self.x))
        }
        fn linearize(&self, values: &[RigidTransform]) -> Result<Linearization> {
            let r = values[0].rotation_matrix();
            let mut j = DMatrix::zeros(1, 6);
            for k in 0..3 {
                j[(0, 3 + k)] = r[(0, k)];
            }
            Ok(Linearization {
                residual: self.residual(values)?,
                jacobians: vec![j],
            })
        }
    }

    #[test]
    fn truncated_solve_leaves_null_directions() {
        let start = RigidTransform::from_translation(0.0, 0.3, -0.2);
        let mut vars = vec![VariableBlock::pose(start)];
        let f: Vec<Box<dyn Factor>> = vec![Box::new(XOnly { var: [0], x: 1.0 })];
        let opts = LmOptions {
            truncation: Some(Truncation::relative(1e-12)),
            ..Default::default()
        };
        let rep = lm_minimize(&mut vars, &f, &opts).unwrap();
        assert!(rep.final_cost < 1e-20);
        let t = vars[0].value.translation;
        assert!((t.x - 1.0).abs() < 1e-10);
        assert_eq!((t.y, t.z), (0.3, -0.2));
        assert_eq!(vars[0].value.rotation, start.rotation);
    }

    #[test]
    fn condition_number_of_scaled_matrix() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 100.0]);
        assert!((scaled_condition_number(&h) - 1.0).abs() < 1e-12);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((scaled_condition_number(&h) - 3.0).abs() < 1e-12);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(scaled_condition_number(&h).is_infinite());
    }
}

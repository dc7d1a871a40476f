//! Nonlinear least squares on SE(3), derivative-free global search and a
//! finite-difference Jacobian checker.

mod direct;
mod jacobian;
mod lm;

pub use direct::{direct_search, DirectResult, SearchSpace};
pub use jacobian::check_jacobian;
pub use lm::{
    huber_weight, lm_minimize, normal_matrix, robust_cost, scaled_condition_number, total_cost, BlockKind, Factor,
    HuberWeight, Linearization, LmOptions, NormalBlock, RobustKernel, SolverReport, Termination, Truncation, VariableBlock,
};

use nalgebra::DVector;

use super::Factor;
use crate::error::Result;
use crate::se3::{RigidTransform, Twist6};

/// Largest entrywise gap between the analytic Jacobians of `factor` and central
/// differences taken through `T exp(+-step e_i)`, scaled by `max(1, |numeric|)`.
pub fn check_jacobian(factor: &dyn Factor, values: &[RigidTransform], step: f64) -> Result<f64> {
    let lin = factor.linearize(values)?;
    let mut worst: f64 = 0.0;
    let mut perturbed = values.to_vec();
    for (k, &var) in factor.variables().iter().enumerate() {
        let analytic = &lin.jacobians[k];
        for i in 0..6 {
            let mut e = [0.0; 6];
            e[i] = step;
            perturbed[var] = values[var].retract(&Twist6::from_slice(&e));
            let plus = factor.residual(&perturbed)?;
            e[i] = -step;
            perturbed[var] = values[var].retract(&Twist6::from_slice(&e));
            let minus = factor.residual(&perturbed)?;
            perturbed[var] = values[var];
            let numeric: DVector<f64> = (plus - minus) / (2.0 * step);
            for r in 0..numeric.len() {
                let err = (analytic[(r, i)] - numeric[r]).abs() / numeric[r].abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

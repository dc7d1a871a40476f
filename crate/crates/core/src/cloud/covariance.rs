use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};

/// Per-point 3x3 covariance, meters squared.
pub type PointCovariance = Matrix3<f64>;

/// Eigenvalue assigned to the surface-normal direction after regularization.
pub const PLANE_EPSILON: f64 = 1e-3;

/// Unbiased sample covariance of a point set.
pub fn neighborhood_covariance(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = points.len();
    if n < 2 {
        return Matrix3::zeros();
    }
    let mean = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / (n - 1) as f64
}

/// Keeps the eigenvectors of `cov` and replaces its eigenvalues by `(1, 1, eps)`,
/// with `eps` on the direction of least spread.
pub fn regularize_covariance(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let smallest = (0..3)
        .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap();
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        let v = eig.eigenvectors.column(i);
        let lambda = if i == smallest { PLANE_EPSILON } else { 1.0 };
        out += v * v.transpose() * lambda;
    }
    // exact symmetry
    (out + out.transpose()) * 0.5
}

/// Plane-regularized covariance of each point from its `k` nearest neighbors
/// (the point itself included).
pub fn estimate_covariances(cloud: &PointCloud, k: usize) -> Result<Vec<PointCovariance>> {
    if cloud.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    Ok(covariances_with_tree(&cloud.points, &tree, k))
}

pub(crate) fn covariances_with_tree(points: &[Vector3<f64>], tree: &KdTree, k: usize) -> Vec<PointCovariance> {
    points
        .par_iter()
        .map(|p| {
            let nbrs: Vec<Vector3<f64>> = tree.knn(p, k).iter().map(|&(i, _)| points[i]).collect();
            regularize_covariance(&neighborhood_covariance(&nbrs))
        })
        .collect()
}

//! Map consistency: mean map entropy (MME) and mean plane variance (MPV).

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::cloud::{KdTree, PointCloud};
use crate::error::{Error, Result};

pub const MIN_NEIGHBORS: usize = 10;
pub const MIN_DETERMINANT: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapMetrics {
    /// Nats.
    pub mme: f64,
    /// Meters.
    pub mpv: f64,
    /// Points that contributed to the MME.
    pub n_points_evaluated: usize,
    /// Points that contributed to the MPV.
    pub n_plane_points: usize,
    pub n_points: usize,
    pub radius: f64,
}

impl MapMetrics {
    pub fn skipped_fraction(&self) -> f64 {
        if self.n_points == 0 {
            return 0.0;
        }
        1.0 - self.n_points_evaluated as f64 / self.n_points as f64
    }
}

/// Linear interpolation between order statistics (R type 7). `sorted` must be ascending.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_and_covariance(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

/// Differential entropy of a Gaussian with covariance `cov`, nats.
pub fn gaussian_entropy(cov: &Matrix3<f64>) -> f64 {
    0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).powi(3) * cov.determinant()).ln()
}

struct PointEval {
    entropy: Option<f64>,
    plane_q3: Option<f64>,
}

fn evaluate_point(points: &[Vector3<f64>], neighbors: &[usize]) -> PointEval {
    if neighbors.len() < MIN_NEIGHBORS {
        return PointEval {
            entropy: None,
            plane_q3: None,
        };
    }
    let local: Vec<_> = neighbors.iter().map(|&i| points[i]).collect();
    let (mean, cov) = mean_and_covariance(&local);
    let det = cov.determinant();
    let entropy = (det >= MIN_DETERMINANT).then(|| gaussian_entropy(&cov));
    let eig = SymmetricEigen::new(cov);
    let normal = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    let mut d: Vec<f64> = local.iter().map(|p| normal.dot(&(p - mean)).abs()).collect();
    d.sort_by(f64::total_cmp);
    PointEval {
        entropy,
        plane_q3: Some(quantile_type7(&d, 0.75)),
    }
}

fn evaluate_all(map: &PointCloud, radius: f64) -> Vec<PointEval> {
    let tree = KdTree::build(&map.points);
    map.points
        .par_iter()
        .map(|q| evaluate_point(&map.points, &tree.within_radius(q, radius)))
        .collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<(f64, usize)> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| (s / n as f64, n))
}

/// Mean over points of the entropy of the local neighborhood covariance.
///
/// Points with fewer than ten neighbors or a near-singular covariance are skipped.
pub fn mean_map_entropy(map: &PointCloud, radius: f64) -> Result<f64> {
    let evals = evaluate_all(map, radius);
    mean_of(evals.iter().filter_map(|e| e.entropy))
        .map(|(m, _)| m)
        .ok_or(Error::NoEvaluablePoints)
}

/// Mean over points of the upper quartile of neighbor distances to the local
/// least-squares plane.
pub fn mean_plane_variance(map: &PointCloud, radius: f64) -> Result<f64> {
    let evals = evaluate_all(map, radius);
    mean_of(evals.iter().filter_map(|e| e.plane_q3))
        .map(|(m, _)| m)
        .ok_or(Error::NoEvaluablePoints)
}

/// Both metrics from one neighborhood pass.
pub fn evaluate_map(map: &PointCloud, radius: f64) -> Result<MapMetrics> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("metric radius must be positive, got {radius}")));
    }
    let evals = evaluate_all(map, radius);
    let (mme, n_mme) = mean_of(evals.iter().filter_map(|e| e.entropy)).ok_or(Error::NoEvaluablePoints)?;
    let (mpv, n_mpv) = mean_of(evals.iter().filter_map(|e| e.plane_q3)).ok_or(Error::NoEvaluablePoints)?;
    Ok(MapMetrics {
        mme,
        mpv,
        n_points_evaluated: n_mme,
        n_plane_points: n_mpv,
        n_points: map.len(),
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quartiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile_type7(&v, 0.75) - 3.25).abs() < 1e-15);
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
        assert_eq!(quantile_type7(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn exact_plane_has_zero_mpv() {
        let pts: Vec<_> = (0..20)
            .flat_map(|i| (0..20).map(move |j| Vector3::new(0.1 * i as f64, 0.1 * j as f64, 0.0)))
            .collect();
        let mpv = mean_plane_variance(&PointCloud::new(pts.clone()), 0.5).unwrap();
        assert!(mpv < 1e-12);
        assert!(matches!(
            mean_map_entropy(&PointCloud::new(pts), 0.5),
            Err(Error::NoEvaluablePoints)
        ));
    }

    #[test]
    fn isolated_points_are_skipped() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(10.0 * i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            evaluate_map(&PointCloud::new(pts), 1.0),
            Err(Error::NoEvaluablePoints)
        ));
    }
}

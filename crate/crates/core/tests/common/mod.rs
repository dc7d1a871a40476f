#![allow(dead_code)]

use std::path::Path;

use lidar_gins_calib::cloud::KdTree;
use lidar_gins_calib::se3::RigidTransform;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

/// Rotation angle (degrees) and translation distance (meters) between two
/// transforms, computed from the quaternion dot product.
pub fn pose_error(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let dot = est.rotation.coords.dot(&gt.rotation.coords).abs().min(1.0);
    let deg = (2.0 * dot.acos()).to_degrees();
    (deg, (est.translation - gt.translation).norm())
}

pub fn relative(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform::from_matrix(&(a.matrix().try_inverse().unwrap() * b.matrix()))
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Index and distance of the closest point by linear scan; the first wins ties.
pub fn brute_nearest(points: &[Vector3<f64>], q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = (p - q).norm();
        if d <= max_dist && best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best
}

pub fn kd_nearest(tree: &KdTree, q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
    tree.nearest(q, max_dist)
}

/// Unit normal and offset of the total-least-squares plane, `n . p + d = 0`.
pub fn eigen_plane(points: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let i = eig.eigenvalues.imin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(i).into();
    if normal.z < 0.0 {
        normal = -normal;
    }
    (normal, -normal.dot(&c))
}

/// Population standard deviation of signed distances to the fitted plane.
pub fn std_to_plane(points: &[Vector3<f64>]) -> f64 {
    let (nrm, d) = eigen_plane(points);
    let ds: Vec<f64> = points.iter().map(|p| nrm.dot(p) + d).collect();
    let m = ds.iter().sum::<f64>() / ds.len() as f64;
    (ds.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ds.len() as f64).sqrt()
}

/// Every regular file under `dir`, relative path and bytes, sorted by path.
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let h = x.abs() / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(x.abs());
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    let half = s * h / 3.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// `x` with `normal_cdf(x) = p`, by bisection.
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

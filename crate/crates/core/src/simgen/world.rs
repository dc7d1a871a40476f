use std::f64::consts::PI;

use nalgebra::Vector3;

/// Shape of a height-field patch over its rectangular footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PatchShape {
    /// `amplitude * sin^2(pi * nx * u) * sin^2(pi * ny * v)` over normalized coords `u, v`.
    Bumps { amplitude: f64, nx: u32, ny: u32 },
    /// A single smooth mound, zero on the footprint boundary.
    Hill { height: f64 },
    /// Plane rising along +x from the footprint's low edge, `slope` = rise / run.
    Ramp { slope: f64 },
}

/// Height-field region of the ground, `z = height(x, y)` on its footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightPatch {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub shape: PatchShape,
}

impl HeightPatch {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.min[0]) / (self.max[0] - self.min[0]);
        let v = (y - self.min[1]) / (self.max[1] - self.min[1]);
        match self.shape {
            PatchShape::Bumps { amplitude, nx, ny } => {
                amplitude * (PI * nx as f64 * u).sin().powi(2) * (PI * ny as f64 * v).sin().powi(2)
            }
            PatchShape::Hill { height } => height * (PI * u).sin().powi(2) * (PI * v).sin().powi(2),
            PatchShape::Ramp { slope } => slope * (x - self.min[0]),
        }
    }

    fn max_height(&self) -> f64 {
        match self.shape {
            PatchShape::Bumps { amplitude, .. } => amplitude.max(0.0),
            PatchShape::Hill { height } => height.max(0.0),
            PatchShape::Ramp { slope } => (slope * (self.max[0] - self.min[0])).max(0.0),
        }
    }

    fn min_height(&self) -> f64 {
        match self.shape {
            PatchShape::Bumps { amplitude, .. } => amplitude.min(0.0),
            PatchShape::Hill { height } => height.min(0.0),
            PatchShape::Ramp { slope } => (slope * (self.max[0] - self.min[0])).min(0.0),
        }
    }
}

/// Axis-aligned box; also used for walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obstacle {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Obstacle {
    pub fn new(center_xy: [f64; 2], size: [f64; 3]) -> Self {
        Self {
            min: Vector3::new(center_xy[0] - size[0] / 2.0, center_xy[1] - size[1] / 2.0, 0.0),
            max: Vector3::new(center_xy[0] + size[0] / 2.0, center_xy[1] + size[1] / 2.0, size[2]),
        }
    }

    /// Entry distance of the ray `o + s d`, `s > s_min`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, s_min: f64) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - o[i]) / d[i];
            let b = (self.max[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > s_min).then_some(t0)
    }

    pub fn on_surface(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let inside = (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol);
        let on_face = (0..3).any(|i| (p[i] - self.min[i]).abs() <= tol || (p[i] - self.max[i]).abs() <= tol);
        inside && on_face
    }
}

/// Which primitive a ray hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceLabel {
    Ground,
    Patch(usize),
    Obstacle(usize),
}

/// Static scene: ground plane `z = 0`, height-field patches and boxes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct World {
    pub patches: Vec<HeightPatch>,
    pub obstacles: Vec<Obstacle>,
}

const MARCH_STEP: f64 = 0.05;

impl World {
    pub fn flat() -> Self {
        Self::default()
    }

    /// Ground height at `(x, y)`.
    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        self.patches
            .iter()
            .find(|p| p.contains(x, y))
            .map_or(0.0, |p| p.height(x, y))
    }

    fn in_any_patch(&self, x: f64, y: f64) -> bool {
        self.patches.iter().any(|p| p.contains(x, y))
    }

    /// Nearest hit along the unit ray `o + s d` with `s_min < s <= s_max`.
    pub fn raycast(&self, o: &Vector3<f64>, d: &Vector3<f64>, s_min: f64, s_max: f64) -> Option<(f64, SurfaceLabel)> {
        let mut best: Option<(f64, SurfaceLabel)> = None;
        let mut offer = |s: f64, label: SurfaceLabel| {
            if s > s_min && s <= s_max && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, label));
            }
        };
        if d.z < 0.0 {
            let s = -o.z / d.z;
            let hit = o + d * s;
            if !self.in_any_patch(hit.x, hit.y) {
                offer(s, SurfaceLabel::Ground);
            }
        }
        for (i, p) in self.patches.iter().enumerate() {
            if let Some(s) = march_patch(p, o, d, s_min, s_max) {
                offer(s, SurfaceLabel::Patch(i));
            }
        }
        for (i, b) in self.obstacles.iter().enumerate() {
            if let Some(s) = b.intersect(o, d, s_min) {
                offer(s, SurfaceLabel::Obstacle(i));
            }
        }
        best
    }

    /// True when `p` lies on some surface of the world within `tol`.
    pub fn on_surface(&self, p: &Vector3<f64>, tol: f64) -> bool {
        if (p.z - self.ground_height(p.x, p.y)).abs() <= tol {
            return true;
        }
        self.obstacles.iter().any(|b| b.on_surface(p, tol))
    }
}

/// First crossing of the patch surface inside its footprint box, refined by bisection.
fn march_patch(p: &HeightPatch, o: &Vector3<f64>, d: &Vector3<f64>, s_min: f64, s_max: f64) -> Option<f64> {
    // clip the ray to the footprint prism
    let zlo = p.min_height() - 1e-9;
    let zhi = p.max_height() + 1e-9;
    let lo = [p.min[0], p.min[1], zlo];
    let hi = [p.max[0], p.max[1], zhi];
    let mut t0 = s_min.max(0.0);
    let mut t1 = s_max;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
            continue;
        }
        let a = (lo[i] - o[i]) / d[i];
        let b = (hi[i] - o[i]) / d[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    if t0 > t1 {
        return None;
    }
    let f = |s: f64| {
        let q = o + d * s;
        q.z - p.height(q.x.clamp(p.min[0], p.max[0]), q.y.clamp(p.min[1], p.max[1]))
    };
    let mut a = t0;
    if f(a) <= 0.0 {
        return None;
    }
    while a < t1 {
        let b = (a + MARCH_STEP).min(t1);
        let fb = f(b);
        if fb <= 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 {
                    break;
                }
            }
            return Some(hi);
        }
        a = b;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_ray_hits_ground_at_height() {
        let w = World::flat();
        let o = Vector3::new(3.0, -2.0, 2.0);
        let (s, label) = w.raycast(&o, &Vector3::new(0.0, 0.0, -1.0), 0.0, 100.0).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(label, SurfaceLabel::Ground);
    }

    #[test]
    fn slanted_ray_range_is_height_over_cosine() {
        let w = World::flat();
        let inc: f64 = 0.7;
        let d = Vector3::new(inc.sin(), 0.0, -inc.cos());
        let (s, _) = w.raycast(&Vector3::new(0.0, 0.0, 2.0), &d, 0.0, 100.0).unwrap();
        assert!((s - 2.0 / inc.cos()).abs() < 1e-12);
    }

    #[test]
    fn box_face_hit() {
        let w = World {
            obstacles: vec![Obstacle::new([10.0, 0.0], [2.0, 2.0, 3.0])],
            ..Default::default()
        };
        let o = Vector3::new(0.0, 0.0, 1.0);
        let (s, label) = w.raycast(&o, &Vector3::new(1.0, 0.0, 0.0), 0.0, 100.0).unwrap();
        assert_eq!(label, SurfaceLabel::Obstacle(0));
        assert!((s - 9.0).abs() < 1e-12);
        assert!(w.on_surface(&(o + Vector3::new(s, 0.0, 0.0)), 1e-9));
    }

    #[test]
    fn patch_hits_lie_on_height_field() {
        let w = World {
            patches: vec![HeightPatch {
                min: [5.0, -5.0],
                max: [15.0, 5.0],
                shape: PatchShape::Bumps {
                    amplitude: 0.3,
                    nx: 4,
                    ny: 3,
                },
            }],
            ..Default::default()
        };
        let o = Vector3::new(0.0, 0.0, 2.0);
        for k in 0..50 {
            let az = -0.4 + 0.016 * k as f64;
            let d = Vector3::new(az.cos(), az.sin(), -0.2).normalize();
            if let Some((s, _)) = w.raycast(&o, &d, 0.0, 100.0) {
                let q = o + d * s;
                assert!((q.z - w.ground_height(q.x, q.y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn upward_ray_misses() {
        assert!(World::flat()
            .raycast(&Vector3::new(0.0, 0.0, 2.0), &Vector3::new(0.0, 0.0, 1.0), 0.0, 100.0)
            .is_none());
    }
}

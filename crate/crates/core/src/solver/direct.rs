//! Deterministic DIRECT (DIviding RECTangles) global search over a box.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_evaluations: usize,
    pub max_iterations: usize,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("search bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("search bounds need lower < upper in every dimension".into()));
        }
        Ok(Self {
            lower,
            upper,
            max_evaluations: 20_000,
            max_iterations: 200,
        })
    }

    pub fn with_budget(mut self, max_iterations: usize, max_evaluations: usize) -> Self {
        self.max_iterations = max_iterations;
        self.max_evaluations = max_evaluations;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn to_world(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .enumerate()
            .map(|(i, u)| self.lower[i] + u * (self.upper[i] - self.lower[i]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

struct Rect {
    center: Vec<f64>,
    /// Number of trisections per dimension; side = 3^-level.
    levels: Vec<u32>,
    value: f64,
}

impl Rect {
    /// Bits of the squared diagonal; equal level multisets give equal keys.
    fn size_key(&self) -> u64 {
        let mut ls = self.levels.clone();
        ls.sort_unstable();
        let s: f64 = ls.iter().map(|&k| 9f64.powi(-(k as i32))).sum();
        s.to_bits()
    }

    fn size(&self) -> f64 {
        0.5 * f64::from_bits(self.size_key()).sqrt()
    }
}

/// Minimizes `objective` over the box. Returns the best sample seen.
pub fn direct_search<F>(mut objective: F, space: &SearchSpace) -> Result<DirectResult>
where
    F: FnMut(&[f64]) -> f64,
{
    const EPS: f64 = 1e-4;
    let n = space.dim();
    let mut evals = 0usize;
    let mut eval = |unit: &[f64], evals: &mut usize| -> Result<f64> {
        let x = space.to_world(unit);
        *evals += 1;
        let v = objective(&x);
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective(x));
        }
        Ok(v)
    };

    let c0 = vec![0.5; n];
    let f0 = eval(&c0, &mut evals)?;
    let mut rects = vec![Rect {
        center: c0,
        levels: vec![0; n],
        value: f0,
    }];
    let mut best = 0usize;
    let mut iterations = 0;

    while iterations < space.max_iterations && evals < space.max_evaluations {
        iterations += 1;
        let fmin = rects[best].value;
        let selected = potentially_optimal(&rects, fmin, EPS);
        for j in selected {
            if evals >= space.max_evaluations {
                break;
            }
            let parent_levels = rects[j].levels.clone();
            let min_level = *parent_levels.iter().min().unwrap();
            let dims: Vec<usize> = (0..n).filter(|&i| parent_levels[i] == min_level).collect();
            let delta = 3f64.powi(-(min_level as i32 + 1));
            let mut samples = Vec::with_capacity(dims.len());
            for &d in &dims {
                let mut plus = rects[j].center.clone();
                plus[d] += delta;
                let mut minus = rects[j].center.clone();
                minus[d] -= delta;
                let fp = eval(&plus, &mut evals)?;
                let fm = eval(&minus, &mut evals)?;
                samples.push((d, plus, fp, minus, fm));
            }
            samples.sort_by(|a, b| a.2.min(a.4).total_cmp(&b.2.min(b.4)).then(a.0.cmp(&b.0)));
            let mut levels = parent_levels;
            for (d, plus, fp, minus, fm) in samples {
                levels[d] += 1;
                for (c, f) in [(plus, fp), (minus, fm)] {
                    rects.push(Rect {
                        center: c,
                        levels: levels.clone(),
                        value: f,
                    });
                    let k = rects.len() - 1;
                    if f < rects[best].value {
                        best = k;
                    }
                }
            }
            rects[j].levels = levels;
        }
    }

    Ok(DirectResult {
        argmin: space.to_world(&rects[best].center),
        value: rects[best].value,
        evaluations: evals,
        iterations,
    })
}

/// Indices of potentially optimal rectangles, one per size class at most.
fn potentially_optimal(rects: &[Rect], fmin: f64, eps: f64) -> Vec<usize> {
    // best rectangle of every size class; ties go to the lowest index
    let mut by_size: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for (i, r) in rects.iter().enumerate() {
        by_size
            .entry(r.size_key())
            .and_modify(|b| {
                if r.value < rects[*b].value {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    let pts: Vec<(f64, f64, usize)> = by_size.values().map(|&i| (rects[i].size(), rects[i].value, i)).collect();

    let mut out = Vec::new();
    for (a, &(dj, fj, j)) in pts.iter().enumerate() {
        let mut k_low = f64::NEG_INFINITY;
        let mut k_high = f64::INFINITY;
        for (b, &(di, fi, _)) in pts.iter().enumerate() {
            if a == b {
                continue;
            }
            if di < dj {
                k_low = k_low.max((fj - fi) / (dj - di));
            } else {
                k_high = k_high.min((fi - fj) / (di - dj));
            }
        }
        if k_low > k_high || k_high <= 0.0 {
            continue;
        }
        if k_high.is_finite() && fj - k_high * dj > fmin - eps * fmin.abs() {
            continue;
        }
        out.push(j);
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bowl_reaches_origin() {
        let space = SearchSpace::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let r = direct_search(|x| x.iter().map(|v| v * v).sum(), &space).unwrap();
        assert!(r.argmin.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn shifted_bowl_reaches_minimum() {
        let space = SearchSpace::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let r = direct_search(|x| (x[0] - 0.3).powi(2) + (x[1] + 0.7).powi(2) + (x[2] - 0.05).powi(2), &space).unwrap();
        assert!((r.argmin[0] - 0.3).abs() < 1e-2);
        assert!((r.argmin[1] + 0.7).abs() < 1e-2);
        assert!((r.argmin[2] - 0.05).abs() < 1e-2);
    }

    #[test]
    fn constant_objective_returns_center() {
        let space = SearchSpace::new(vec![0.0, -2.0], vec![4.0, 2.0]).unwrap();
        let r = direct_search(|_| 1.5, &space).unwrap();
        assert_eq!(r.argmin, vec![2.0, 0.0]);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let space = SearchSpace::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(direct_search(|_| f64::NAN, &space), Err(Error::NonFiniteObjective(_))));
    }

    #[test]
    fn bounds_are_validated() {
        assert!(SearchSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(SearchSpace::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }
}

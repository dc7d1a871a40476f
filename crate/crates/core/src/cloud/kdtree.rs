//! Exact nearest-neighbor search over 3-D points.
//!
//! Median-split tree with small leaf buckets. Points sharing a coordinate with
//! the split value may land on either side, so the far child is visited
//! whenever the splitting plane is within the current best distance
//! (inclusive); this keeps results exact for heavily duplicated coordinates
//! such as zero-noise planar scans.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Immutable K-D tree over a point set.
#[derive(Clone, Debug)]
pub struct KdTree {
    /// Points in tree order.
    points: Vec<[f64; 3]>,
    /// Original index of each point in tree order.
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// `(distance^2, index)` ordering used for ties: smaller index wins.
#[inline]
fn better(d2: f64, id: u32, best_d2: f64, best_id: u32) -> bool {
    d2 < best_d2 || (d2 == best_d2 && id < best_id)
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut items: Vec<([f64; 3], u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ([p.x, p.y, p.z], i as u32))
            .collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !items.is_empty() {
            let n = items.len();
            build_node(&mut items, 0, n, &mut nodes);
        }
        let (points, ids) = items.into_iter().unzip();
        KdTree { points, ids, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest point within `max_dist`, as `(index, distance)`.
    pub fn nearest(&self, query: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        self.nearest_filtered(query, max_dist, |_| true)
    }

    /// Closest point within `max_dist` among indices accepted by `keep`.
    pub fn nearest_filtered<F: Fn(usize) -> bool>(
        &self,
        query: &Vector3<f64>,
        max_dist: f64,
        keep: F,
    ) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best_d2 = max_dist * max_dist;
        let mut best_id = u32::MAX;
        self.search_nearest(0, &q, &mut best_d2, &mut best_id, &keep);
        (best_id != u32::MAX).then(|| (best_id as usize, best_d2.sqrt()))
    }

    fn search_nearest<F: Fn(usize) -> bool>(
        &self,
        node: usize,
        q: &[f64; 3],
        best_d2: &mut f64,
        best_id: &mut u32,
        keep: &F,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let d2 = dist2(&self.points[i], q);
                    let id = self.ids[i];
                    if d2 <= *best_d2 && (*best_id == u32::MAX || better(d2, id, *best_d2, *best_id)) && keep(id as usize) {
                        *best_d2 = d2;
                        *best_id = id;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_nearest(near as usize, q, best_d2, best_id, keep);
                if diff * diff <= *best_d2 {
                    self.search_nearest(far as usize, q, best_d2, best_id, keep);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search_knn(0, &q, k, &mut heap);
        heap.into_iter()
            .map(|(d2, id)| (id as usize, d2.sqrt()))
            .collect()
    }

    fn search_knn(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let d2 = dist2(&self.points[i], q);
                    let id = self.ids[i];
                    if best.len() == k {
                        let (wd, wi) = best[k - 1];
                        if !better(d2, id, wd, wi) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best
                        .iter()
                        .position(|&(bd, bi)| better(d2, id, bd, bi))
                        .unwrap_or(best.len());
                    best.insert(pos, (d2, id));
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_knn(near as usize, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search_knn(far as usize, q, k, best);
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), in ascending index order.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let q = [query.x, query.y, query.z];
        self.search_radius(0, &q, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn search_radius(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    if dist2(&self.points[i], q) <= r2 {
                        out.push(self.ids[i] as usize);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_radius(near as usize, q, r2, out);
                if diff * diff <= r2 {
                    self.search_radius(far as usize, q, r2, out);
                }
            }
        }
    }
}

fn build_node(items: &mut [([f64; 3], u32)], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let slot = nodes.len();
    nodes.push(Node::Leaf {
        start: start as u32,
        end: end as u32,
    });
    if end - start <= LEAF_SIZE {
        return slot as u32;
    }
    let slice = &mut items[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] - lo[axis] <= 0.0 {
        return slot as u32;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    let value = slice[mid].0[axis];
    let left = build_node(items, start, start + mid, nodes);
    let right = build_node(items, start + mid, end, nodes);
    nodes[slot] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    slot as u32
}

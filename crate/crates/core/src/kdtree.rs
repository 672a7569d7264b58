//! Nearest-neighbour lookup over a fixed point set.
//!
//! Small sets are scanned linearly; larger ones use a balanced 3-d tree laid
//! out implicitly over a permuted index array. Equidistant candidates resolve
//! to the lowest point index.

use nalgebra::Vector3;

/// Sets smaller than this are searched by brute force.
pub const BRUTE_FORCE_BELOW: usize = 1000;

#[derive(Clone, Debug)]
pub struct NearestNeighbors {
    points: Vec<Vector3<f64>>,
    /// Permutation of point indices forming the implicit tree; empty when
    /// searching by brute force.
    order: Vec<usize>,
}

impl NearestNeighbors {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        Self::with_threshold(points, BRUTE_FORCE_BELOW)
    }

    pub fn with_threshold(points: &[Vector3<f64>], brute_below: usize) -> Self {
        let points = points.to_vec();
        let mut order = Vec::new();
        if points.len() >= brute_below {
            order = (0..points.len()).collect();
            build(&points, &mut order, 0);
        }
        NearestNeighbors { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the closest point, `None` when empty.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        if self.order.is_empty() {
            for (i, p) in self.points.iter().enumerate() {
                consider(&mut best, i, (p - q).norm_squared());
            }
        } else {
            self.search(q, 0, self.order.len(), 0, &mut best);
        }
        Some(best)
    }

    fn search(
        &self,
        q: &Vector3<f64>,
        lo: usize,
        hi: usize,
        depth: usize,
        best: &mut (usize, f64),
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        consider(best, idx, (p - q).norm_squared());
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        // `<=` keeps equidistant candidates reachable for the index tie-break.
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn consider(best: &mut (usize, f64), idx: usize, d2: f64) {
    if d2 < best.1 || (d2 == best.1 && idx < best.0) {
        *best = (idx, d2);
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, rest) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut rest[1..], depth + 1);
}

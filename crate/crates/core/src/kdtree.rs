//! Exact nearest-neighbour search over a static set of 3D points.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

pub(crate) struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vector3<f64>]) -> Self {
        let mut tree = Self { points, order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &k in &self.order[start..end] {
            lo = lo.inf(&self.points[k]);
            hi = hi.sup(&self.points[k]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |a, b| pts[*a][axis].total_cmp(&pts[*b][axis]).then(a.cmp(b)));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index and squared distance of the closest point. Ties go to the
    /// lowest index so results do not depend on tree layout.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &k in &self.order[start..end] {
                    let d2 = (self.points[k] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && k < best.0) {
                        *best = (k, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if delta * delta <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (k, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<_> =
            (0..500).map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>() * 0.1)).collect();
        let tree = KdTree::build(&points);
        for _ in 0..300 {
            let q = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            assert_eq!(tree.nearest(&q), Some(brute(&points, &q)));
        }
    }

    #[test]
    fn handles_planar_and_duplicate_points() {
        let mut points: Vec<_> = (0..400).map(|k| Vector3::new((k % 20) as f64, (k / 20) as f64, 5.0)).collect();
        points.extend(std::iter::repeat_n(Vector3::new(1.0, 1.0, 1.0), 50));
        let tree = KdTree::build(&points);
        let (k, d2) = tree.nearest(&Vector3::new(3.2, 4.1, 5.0)).unwrap();
        assert_eq!(k, 83);
        assert!((d2 - 0.05).abs() < 1e-12);
        assert_eq!(tree.nearest(&Vector3::new(1.0, 1.0, 1.0)).unwrap().0, 400);
        assert!(KdTree::build(&[]).nearest(&Vector3::zeros()).is_none());
    }
}

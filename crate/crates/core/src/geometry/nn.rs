//! Nearest-neighbour queries over a fixed point set.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use super::vec3::{dist2, Vec3};

/// Point sets smaller than this are searched exhaustively.
pub const BRUTE_FORCE_BELOW: usize = 512;

enum Backend {
    Brute,
    Tree(Box<ImmutableKdTree<f64, 3>>),
}

/// Exact nearest-neighbour index over a point set.
pub struct NearestNeighbors {
    points: Vec<Vec3>,
    backend: Backend,
}

impl NearestNeighbors {
    pub fn new(points: &[Vec3]) -> Self {
        Self::with_threshold(points, BRUTE_FORCE_BELOW)
    }

    /// `threshold = 0` forces the tree, `usize::MAX` forces brute force.
    pub fn with_threshold(points: &[Vec3], threshold: usize) -> Self {
        let backend = if points.len() < threshold || points.is_empty() {
            Backend::Brute
        } else {
            Backend::Tree(Box::new(
                ImmutableKdTree::new_from_slice(points).expect("finite points fit the tree"),
            ))
        };
        NearestNeighbors {
            points: points.to_vec(),
            backend,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index of the nearest point and the squared distance to it.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest query on an empty set");
        match &self.backend {
            Backend::Brute => brute_nearest(&self.points, q),
            Backend::Tree(tree) => {
                let nn = tree
                    .query(&q)
                    .nearest_one::<SquaredEuclidean<f64>>()
                    .execute();
                (nn.item as usize, nn.distance)
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), sorted ascending.
    pub fn within(&self, q: Vec3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out: Vec<usize> = match &self.backend {
            Backend::Brute => self
                .points
                .iter()
                .enumerate()
                .filter(|(_, &p)| dist2(p, q) <= r2)
                .map(|(i, _)| i)
                .collect(),
            Backend::Tree(tree) => tree
                .query(&q)
                .within::<SquaredEuclidean<f64>>(r2)
                .unsorted()
                .execute()
                .into_iter()
                .map(|n| n.item as usize)
                .collect(),
        };
        out.sort_unstable();
        out
    }
}

pub fn brute_nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let tree = NearestNeighbors::with_threshold(&pts, 0);
        for _ in 0..500 {
            let q = [rng.random(), rng.random(), rng.random()];
            let (_, d_tree) = tree.nearest(q);
            let (_, d_brute) = brute_nearest(&pts, q);
            assert_eq!(d_tree, d_brute);
        }
        let q = [0.5, 0.5, 0.5];
        let exact: Vec<usize> = (0..pts.len()).filter(|&i| dist2(pts[i], q) <= 0.01).collect();
        assert_eq!(tree.within(q, 0.1), exact);
    }
}

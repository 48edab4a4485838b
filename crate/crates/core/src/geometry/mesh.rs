use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vec3::{self, Vec3};
use super::PointCloud;
use crate::error::{Error, Result};

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub watertight: bool,
}

impl TriangleMesh {
    /// Validates face indices and computes the watertight flag.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidInput(format!(
                "face {f:?} references a vertex beyond {n}"
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite vertex".into()));
        }
        let mut mesh = TriangleMesh {
            vertices,
            faces,
            watertight: false,
        };
        mesh.watertight = mesh.is_closed_manifold();
        Ok(mesh)
    }

    /// Every undirected edge used by exactly two faces, traversed once in each direction.
    pub fn is_closed_manifold(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a == b {
                    return false;
                }
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (twice the area).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        vec3::cross(vec3::sub(b, a), vec3::sub(c, a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * vec3::norm(self.face_cross(f))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Positive when faces wind counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.face_vertices(f);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn flip_orientation(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    /// Generalized winding number of `q`: 1 inside and 0 outside a closed,
    /// outward-oriented mesh.
    pub fn winding_number(&self, q: Vec3) -> f64 {
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.face_vertices(f).map(|v| vec3::sub(v, q));
            let (la, lb, lc) = (vec3::norm(a), vec3::norm(b), vec3::norm(c));
            let num = vec3::dot(a, vec3::cross(b, c));
            let den = la * lb * lc + vec3::dot(a, b) * lc + vec3::dot(b, c) * la + vec3::dot(c, a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Exact Euclidean distance from `q` to the surface.
    pub fn distance(&self, q: Vec3) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.face_vertices(f);
                vec3::dist2(q, closest_on_triangle(q, a, b, c))
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Distance to the surface, negative inside; needs a closed mesh.
    pub fn signed_distance(&self, q: Vec3) -> f64 {
        let d = self.distance(q);
        if self.winding_number(q) > 0.5 {
            -d
        } else {
            d
        }
    }

    /// Smallest face area.
    pub fn min_face_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| self.face_area(f))
            .fold(f64::INFINITY, f64::min)
    }

    /// Area-weighted uniform samples with outward face normals.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<PointCloud> {
        let areas: Vec<f64> = (0..self.faces.len()).map(|f| self.face_area(f)).collect();
        let total: f64 = areas.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("mesh has zero surface area".into()));
        }
        let mut cdf = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a / total;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut f = cdf.partition_point(|&c| c < u).min(areas.len() - 1);
            while areas[f] == 0.0 {
                f = (f + 1) % areas.len();
            }
            let [a, b, c] = self.face_vertices(f);
            let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let p = vec3::add(
                a,
                vec3::add(
                    vec3::scale(vec3::sub(b, a), r1),
                    vec3::scale(vec3::sub(c, a), r2),
                ),
            );
            points.push(p);
            normals.push(vec3::normalize(self.face_cross(f)).expect("non-degenerate face"));
        }
        PointCloud::with_normals(points, normals)
    }
}

/// Closest point of triangle `abc` to `p`, by Voronoi region.
fn closest_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let (d1, d2) = (vec3::dot(ab, ap), vec3::dot(ac, ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = vec3::sub(p, b);
    let (d3, d4) = (vec3::dot(ab, bp), vec3::dot(ac, bp));
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return vec3::add(a, vec3::scale(ab, d1 / (d1 - d3)));
    }
    let cp = vec3::sub(p, c);
    let (d5, d6) = (vec3::dot(ab, cp), vec3::dot(ac, cp));
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return vec3::add(a, vec3::scale(ac, d2 / (d2 - d6)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        let bc = vec3::sub(c, b);
        return vec3::add(b, vec3::scale(bc, (d4 - d3) / ((d4 - d3) + (d5 - d6))));
    }
    let denom = 1.0 / (va + vb + vc);
    let (v, w) = (vb * denom, vc * denom);
    vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_cube() -> TriangleMesh {
        let v = vec![
            [-1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0],
            [1.0, 1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
        ];
        let f = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [0, 4, 7],
            [0, 7, 3],
        ];
        TriangleMesh::new(v, f).unwrap()
    }

    #[test]
    fn cube_topology() {
        let cube = unit_cube();
        assert!(cube.watertight);
        assert_eq!(cube.euler_characteristic(), 2);
        assert!((cube.area() - 24.0).abs() < 1e-12);
        assert!((cube.signed_volume() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut cube = unit_cube();
        cube.faces.pop();
        let m = TriangleMesh::new(cube.vertices, cube.faces).unwrap();
        assert!(!m.watertight);
    }

    #[test]
    fn bad_index_rejected() {
        let err = TriangleMesh::new(vec![[0.0; 3]], vec![[0, 1, 2]]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn samples_lie_on_faces_with_outward_normals() {
        let cloud = unit_cube().sample_surface(500, 1).unwrap();
        let normals = cloud.normals.as_ref().unwrap();
        for (p, n) in cloud.points.iter().zip(normals) {
            let linf = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assert!((linf - 1.0).abs() < 1e-12);
            assert!(vec3::dot(*p, *n) > 0.0);
        }
    }

    #[test]
    fn cube_signed_distance_is_exact() {
        let cube = unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let q: Vec3 = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let e = q.map(|c| c.abs() - 1.0);
            let truth = vec3::norm(e.map(|c| c.max(0.0))) + e[0].max(e[1]).max(e[2]).min(0.0);
            assert!((cube.signed_distance(q) - truth).abs() < 1e-12, "{q:?}");
        }
        assert!((cube.winding_number([0.3, -0.2, 0.9]) - 1.0).abs() < 1e-12);
        assert!(cube.winding_number([1.01, 0.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn closest_point_beats_dense_sampling() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 0.9, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let p: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..2.0));
            let best = vec3::dist2(p, closest_on_triangle(p, a, b, c));
            let n = 60;
            for i in 0..=n {
                for j in 0..=n - i {
                    let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                    let x = vec3::add(a, vec3::add(vec3::scale(vec3::sub(b, a), u), vec3::scale(vec3::sub(c, a), v)));
                    assert!(best <= vec3::dist2(p, x) + 1e-12);
                }
            }
        }
    }
}

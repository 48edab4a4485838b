//! Marching cubes over a scalar [`FieldGrid`].
//!
//! The 256-entry case table is derived once from the cube's faces: on each
//! face the crossings are paired so that inside corners are cut off, the
//! resulting segments are chained into closed loops and every loop is
//! fan-triangulated. Neighbouring cubes see identical face configurations,
//! so the extracted surface is crack-free and consistently oriented.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::FieldGrid;
use crate::geometry::{vec3, TriangleMesh, Vec3};
use crate::{Error, Result};

/// Corner `c` sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const CORNERS: usize = 8;

/// Crossings stay this fraction of an edge away from grid nodes so that
/// level values sitting exactly on a node cannot collapse triangles.
const NODE_GAP: f64 = 1e-4;

/// Cube edges as corner pairs.
pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q)| (p, q) == (a, b) || (p, q) == (b, a))
        .expect("adjacent corners")
}

fn corner_pos(c: usize) -> [f64; 3] {
    [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
}

/// Corner cycles of the six faces, counter-clockwise seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        for side in 0..2 {
            let bit = 1 << axis;
            let (u, v) = (1 << ((axis + 1) % 3), 1 << ((axis + 2) % 3));
            let base = if side == 1 { bit } else { 0 };
            let mut cyc = [base, base | u, base | u | v, base | v];
            // orient so that (c1 - c0) x (c2 - c1) points away from the cube
            let p: Vec<_> = cyc.iter().map(|&c| corner_pos(c)).collect();
            let n = vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[1]));
            let outward = if side == 1 { 1.0 } else { -1.0 };
            if n[axis] * outward < 0.0 {
                cyc.reverse();
            }
            out.push(cyc);
        }
    }
    out
}

/// Triangles (as cube-edge triples) for one inside-corner mask.
fn triangulate_case(mask: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for cyc in faces() {
        // crossings in cycle order: (edge, entering the inside region)
        let mut cross = Vec::new();
        for k in 0..4 {
            let (a, b) = (cyc[k], cyc[(k + 1) % 4]);
            if inside(a) != inside(b) {
                cross.push((edge_between(a, b), inside(b)));
            }
        }
        for (k, &(e, entering)) in cross.iter().enumerate() {
            if entering {
                let (exit, _) = cross[(k + 1) % cross.len()];
                next.insert(e, exit);
            }
        }
    }
    let mut tris = Vec::new();
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut seen = [false; 12];
    for s in starts {
        if seen[s] {
            continue;
        }
        let mut ring = vec![s];
        seen[s] = true;
        let mut e = next[&s];
        while e != s {
            seen[e] = true;
            ring.push(e);
            e = next[&e];
        }
        for i in 1..ring.len() - 1 {
            tris.push([ring[0] as u8, ring[i] as u8, ring[i + 1] as u8]);
        }
    }
    tris
}

/// Case table indexed by the mask of corners strictly below the level.
pub fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(triangulate_case).collect())
}

/// Extracts the `level` isosurface of a scalar grid. Triangles face the
/// increasing side of the field.
pub fn extract_isosurface(grid: &FieldGrid, level: f64) -> Result<TriangleMesh> {
    if grid.components != 1 {
        return Err(Error::InvalidInput("isosurface needs a scalar grid".into()));
    }
    let [nx, ny, nz] = grid.spec.counts;
    let table = case_table();
    let node = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut index: HashMap<(usize, usize), u32> = HashMap::new();
    let mut faces = Vec::new();
    let mut any_inside = false;
    let mut any_outside = false;
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut ids = [0usize; CORNERS];
                let mut mask = 0u8;
                for (c, id) in ids.iter_mut().enumerate() {
                    *id = node(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1));
                    if grid.values[*id] < level {
                        mask |= 1 << c;
                    }
                }
                any_inside |= mask != 0;
                any_outside |= mask != 255;
                for tri in &table[mask as usize] {
                    let mut f = [0u32; 3];
                    for (slot, &e) in f.iter_mut().zip(tri) {
                        let (a, b) = EDGES[e as usize];
                        let key = (ids[a].min(ids[b]), ids[a].max(ids[b]));
                        *slot = *index.entry(key).or_insert_with(|| {
                            let (va, vb) = (grid.values[key.0], grid.values[key.1]);
                            let t = ((level - va) / (vb - va)).clamp(NODE_GAP, 1.0 - NODE_GAP);
                            let (pa, pb) = (grid.spec.position(key.0), grid.spec.position(key.1));
                            vertices.push(vec3::add(pa, vec3::scale(vec3::sub(pb, pa), t)));
                            (vertices.len() - 1) as u32
                        });
                    }
                    faces.push(f);
                }
            }
        }
    }
    if !(any_inside && any_outside) || faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    let mut mesh = TriangleMesh::new(vertices, faces)?;
    mesh.faces.retain(|f| {
        let [a, b, c] = f.map(|v| mesh.vertices[v as usize]);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a))) > 1e-12
    });
    if mesh.faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    mesh.watertight = mesh.is_closed_manifold();
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_crossing_edge_is_used_exactly_once_per_side() {
        for (mask, tris) in case_table().iter().enumerate() {
            let inside = |c: usize| mask >> c & 1 == 1;
            let crossing: Vec<usize> = (0..12)
                .filter(|&e| inside(EDGES[e].0) != inside(EDGES[e].1))
                .collect();
            let mut used: Vec<usize> = tris.iter().flatten().map(|&e| e as usize).collect();
            used.sort_unstable();
            used.dedup();
            assert_eq!(used, crossing, "case {mask}");
        }
    }

    #[test]
    fn table_covers_the_fifteen_classes() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        assert_eq!(t[3].len(), 2);
        // complementary single corners produce opposite windings
        let a = t[1][0];
        let b = t[254][0];
        let mut sa = a;
        let mut sb = b;
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
        assert_ne!(a, b);
        assert!(t.iter().all(|c| c.len() <= 12));
    }

    #[test]
    fn single_corner_faces_away_from_inside() {
        // corner 0 inside: normal must point along +(1,1,1)
        let tri = case_table()[1][0];
        let p = tri.map(|e| {
            let (a, b) = EDGES[e as usize];
            vec3::scale(vec3::add(corner_pos(a), corner_pos(b)), 0.5)
        });
        let n = vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[0]));
        assert!(vec3::dot(n, [1.0, 1.0, 1.0]) > 0.0);
    }
}

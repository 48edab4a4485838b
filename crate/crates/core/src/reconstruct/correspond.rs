use serde::{Deserialize, Serialize};

use crate::fieldnet::{DecodedField, FieldModel};
use crate::geometry::{vec3, PointCloud, Vec3};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrespondConfig {
    pub max_iters: usize,
    /// Residual `|q + D_b(q) - (p + D_a(p))|` accepted as converged.
    pub tolerance: f64,
}

impl Default for CorrespondConfig {
    fn default() -> Self {
        CorrespondConfig {
            max_iters: 30,
            tolerance: 1e-6,
        }
    }
}

/// A marked point under `z_a` and its located position under `z_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source: Vec3,
    pub target: Vec3,
    /// Shared position in the nominal frame.
    pub nominal: Vec3,
    /// `target - source`.
    pub delta: Vec3,
    pub residual: f64,
    pub converged: bool,
}

fn solve3(m: [[f64; 3]; 3], b: Vec3) -> Option<Vec3> {
    let det = vec3::dot(m[0], vec3::cross(m[1], m[2]));
    if !(det.abs() > 1e-12) {
        return None;
    }
    // rows of m; Cramer's rule on the transposed system
    let c = [vec3::cross(m[1], m[2]), vec3::cross(m[2], m[0]), vec3::cross(m[0], m[1])];
    Some(std::array::from_fn(|k| {
        (c[0][k] * b[0] + c[1][k] * b[1] + c[2][k] * b[2]) / det
    }))
}

/// Newton solve of `q + D(q) = y` for each target `y`, seeded at `seeds`.
/// Returns the solutions and their residual norms.
pub fn locate(
    field: &DecodedField,
    targets: &[Vec3],
    seeds: &[Vec3],
    cfg: &CorrespondConfig,
) -> (Vec<Vec3>, Vec<f64>) {
    let mut q = seeds.to_vec();
    let mut residual = vec![f64::INFINITY; targets.len()];
    let mut active: Vec<usize> = (0..targets.len()).collect();
    for _ in 0..=cfg.max_iters {
        if active.is_empty() {
            break;
        }
        let pts: Vec<Vec3> = active.iter().map(|&i| q[i]).collect();
        let (vals, jac) = field.eval_jacobian(&pts);
        let mut still = Vec::new();
        for (k, &i) in active.iter().enumerate() {
            let f: Vec3 = std::array::from_fn(|c| pts[k][c] + vals[k][c] - targets[i][c]);
            residual[i] = vec3::norm(f);
            if residual[i] <= cfg.tolerance {
                continue;
            }
            match solve3(newton_matrix(&jac[k]), f) {
                Some(step) => {
                    q[i] = vec3::sub(q[i], step);
                    still.push(i);
                }
                None => residual[i] = f64::INFINITY,
            }
        }
        active = still;
    }
    (q, residual)
}

/// Tracks marked points from deformation `z_a` to `z_b` through the shared
/// nominal frame: Newton iterations on `q + D_b(q) = p + D_a(p)` seeded at `p`.
pub fn correspondences(
    model: &FieldModel,
    alpha: &[f32],
    z_a: &[f32],
    z_b: &[f32],
    marked: &PointCloud,
    cfg: &CorrespondConfig,
) -> Result<Vec<Correspondence>> {
    let da = model.decode_deformation(z_a, alpha)?;
    let db = model.decode_deformation(z_b, alpha)?;
    let p = &marked.points;
    let nominal: Vec<Vec3> = p
        .iter()
        .zip(da.eval(p))
        .map(|(x, d)| [x[0] + d[0], x[1] + d[1], x[2] + d[2]])
        .collect();
    let (q, residual) = locate(&db, &nominal, p, cfg);
    Ok((0..p.len())
        .map(|i| Correspondence {
            source: p[i],
            target: q[i],
            nominal: nominal[i],
            delta: vec3::sub(q[i], p[i]),
            residual: residual[i],
            converged: residual[i] <= cfg.tolerance,
        })
        .collect())
}

/// Where nominal-frame points sit under force code `z`: solves
/// `q + D(q) = p` seeded at `p`. Returns positions and residual norms.
pub fn deformed_positions(
    model: &FieldModel,
    alpha: &[f32],
    z: &[f32],
    nominal: &[Vec3],
    cfg: &CorrespondConfig,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let field = model.decode_deformation(z, alpha)?;
    Ok(locate(&field, nominal, nominal, cfg))
}

fn newton_matrix(jac: &[Vec<f64>; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| {
        std::array::from_fn(|c| jac[c][r] + if r == c { 1.0 } else { 0.0 })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cramer_solves_a_known_system() {
        let m = [[2.0, 1.0, 0.0], [0.0, 3.0, 1.0], [1.0, 0.0, 4.0]];
        let x = [1.0, -2.0, 0.5];
        let b = std::array::from_fn(|r| vec3::dot(m[r], x));
        let got = solve3(m, b).unwrap();
        for k in 0..3 {
            assert!((got[k] - x[k]).abs() < 1e-12);
        }
        assert!(solve3([[1.0, 0.0, 0.0]; 3], [1.0; 3]).is_none());
    }
}

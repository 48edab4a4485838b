//! Loss terms, as plain functions and as tape builders.

use crate::autodiff::{Graph, Mat, Real, Var};
use crate::error::{Error, Result};
use crate::fieldnet::{gradient_of, siren_graph, unit_tangents};
use crate::geometry::{NearestNeighbors, SdfSampleSet, Vec3};

/// `min(delta, max(-delta, s))`.
pub fn clamp(s: f64, delta: f64) -> f64 {
    s.max(-delta).min(delta)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// `a` to `b` plus the same from `b` to `a`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("chamfer distance of an empty cloud".into()));
    }
    let ta = NearestNeighbors::new(a);
    let tb = NearestNeighbors::new(b);
    Ok(one_way(a, &tb) + one_way(b, &ta))
}

fn one_way(from: &[Vec3], to: &NearestNeighbors) -> f64 {
    // fixed-order summation keeps the result independent of thread count
    from.iter().map(|&p| to.nearest(p).1).sum::<f64>() / from.len() as f64
}

/// Rows of `v` as points.
pub fn rows3<T: Real>(v: &Mat<T>) -> Vec<Vec3> {
    (0..v.rows)
        .map(|r| {
            let row = v.row(r);
            [row[0].to_f64().unwrap_or(f64::NAN), row[1].to_f64().unwrap_or(f64::NAN), row[2].to_f64().unwrap_or(f64::NAN)]
        })
        .collect()
}

/// Chamfer distance between the points on the tape `a` (`[n, 3]`) and the
/// fixed cloud behind `target`. Nearest-neighbour assignments are taken from
/// the current values and held constant.
pub fn chamfer_graph<T: Real>(g: &mut Graph<T>, a: Var, target: &NearestNeighbors) -> Var {
    let pts = rows3(g.value(a));
    let b = target.points();
    let to_b: Vec<Vec3> = pts.iter().map(|&p| b[target.nearest(p).0]).collect();
    let nb = g.constant(Mat::from_rows3(&to_b));
    let d1 = g.sub(a, nb);
    let d1 = g.square(d1);
    let d1 = g.row_sum(d1);
    let t1 = g.mean(d1);

    let tree_a = NearestNeighbors::new(&pts);
    let from_b: Vec<usize> = b.iter().map(|&q| tree_a.nearest(q).0).collect();
    let na = g.gather_rows(a, &from_b);
    let bv = g.constant(Mat::from_rows3(b));
    let d2 = g.sub(na, bv);
    let d2 = g.square(d2);
    let d2 = g.row_sum(d2);
    let t2 = g.mean(d2);
    g.add(t1, t2)
}

/// `x + D(x)` on the tape, with the Jacobian tangents `e_k + dD/dx_k` when
/// requested.
pub fn warp_graph<T: Real>(
    g: &mut Graph<T>,
    d_layers: &[(Var, Var)],
    omega0: f64,
    x: Var,
    with_tangents: bool,
) -> (Var, Var, Option<[Var; 3]>) {
    let n = g.shape(x).0;
    let t = with_tangents.then(|| unit_tangents(g, n));
    let (d, dt) = siren_graph(g, d_layers, omega0, x, t);
    let y = g.add(x, d);
    let yt = match (t, dt) {
        (Some(e), Some(dt)) => Some(std::array::from_fn(|k| g.add(e[k], dt[k]))),
        _ => None,
    };
    (y, d, yt)
}

/// Clamped L1 term and normal-alignment term of the SDF loss. The normal term
/// compares the direction of the field gradient with the target normal.
pub struct SdfTerms {
    pub clamp: Var,
    /// Absent when the batch has no surface samples.
    pub normal: Option<Var>,
}

/// SDF loss terms for `O(x)` or, with `d_layers`, for `O(x + D(x))`, where
/// the normal term uses the gradient of the composed field.
pub fn sdf_terms<T: Real>(
    g: &mut Graph<T>,
    o_layers: &[(Var, Var)],
    d_layers: Option<&[(Var, Var)]>,
    omega0: f64,
    samples: &SdfSampleSet,
    delta: f64,
) -> Result<SdfTerms> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty SDF batch".into()));
    }
    let surf = samples.surface_indices();
    let off = samples.off_surface_indices();
    for &i in &surf {
        let n = samples.normals[i];
        if ((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidInput(format!("surface sample {i} has no unit normal")));
        }
    }

    let mut preds = Vec::new();
    let mut order = Vec::new();
    let mut normal = None;
    if !surf.is_empty() {
        let pts: Vec<Vec3> = surf.iter().map(|&i| samples.queries[i]).collect();
        let x = g.constant(Mat::from_rows3(&pts));
        let (y, t) = match d_layers {
            Some(d) => {
                let (y, _, t) = warp_graph(g, d, omega0, x, true);
                (y, t.expect("tangents requested"))
            }
            None => (x, unit_tangents(g, pts.len())),
        };
        let (s, grad) = siren_graph(g, o_layers, omega0, y, Some(t));
        let grad = gradient_of(g, grad.expect("tangents requested"));
        let grad = g.normalize_rows(grad);
        let nrm: Vec<Vec3> = surf.iter().map(|&i| samples.normals[i]).collect();
        let nv = g.constant(Mat::from_rows3(&nrm));
        let dot = g.mul(grad, nv);
        let dot = g.row_sum(dot);
        let m = g.mean(dot);
        let one = g.constant(Mat::filled(1, 1, T::one()));
        normal = Some(g.sub(one, m));
        preds.push(s);
        order.extend_from_slice(&surf);
    }
    if !off.is_empty() {
        let pts: Vec<Vec3> = off.iter().map(|&i| samples.queries[i]).collect();
        let x = g.constant(Mat::from_rows3(&pts));
        let y = match d_layers {
            Some(d) => warp_graph(g, d, omega0, x, false).0,
            None => x,
        };
        let (s, _) = siren_graph(g, o_layers, omega0, y, None);
        preds.push(s);
        order.extend_from_slice(&off);
    }
    let pred = if preds.len() == 1 { preds[0] } else { g.concat_rows(&preds) };
    let target: Vec<T> = order.iter().map(|&i| T::of(clamp(samples.sdf[i], delta))).collect();
    let target = g.constant(Mat::from_vec(order.len(), 1, target));
    let pc = g.clamp(pred, delta);
    let diff = g.sub(pc, target);
    let diff = g.abs(diff);
    Ok(SdfTerms {
        clamp: g.mean(diff),
        normal,
    })
}

/// `L_sdf = clamp term + lambda_normal * normal term`.
pub fn sdf_loss<T: Real>(g: &mut Graph<T>, terms: &SdfTerms, lambda_normal: f64) -> Var {
    match terms.normal {
        Some(n) => {
            let n = g.scale(n, lambda_normal);
            g.add(terms.clamp, n)
        }
        None => terms.clamp,
    }
}

/// `sum_i ||code_i / dim||` over the rows of `codes`.
pub fn latent_graph<T: Real>(g: &mut Graph<T>, codes: Var) -> Var {
    let dim = g.shape(codes).1;
    let s = g.scale(codes, 1.0 / dim as f64);
    let n = g.row_norm(s);
    g.sum(n)
}

/// `||theta|| / len(theta)` for a decoded parameter vector split over head outputs.
pub fn hyper_graph<T: Real>(g: &mut Graph<T>, outputs: &[Var]) -> Var {
    let mut len = 0;
    let mut parts = Vec::with_capacity(outputs.len());
    for &o in outputs {
        len += g.value(o).data.len();
        let sq = g.square(o);
        parts.push(g.sum(sq));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p);
    }
    let norm = g.sqrt(total);
    g.scale(norm, 1.0 / len as f64)
}

/// Minimal-correction objective: `CD(P + D(P), target) + lambda_c * mean ||D(P)||`.
/// Also returns the mean deformation norm.
pub fn correction_graph<T: Real>(
    g: &mut Graph<T>,
    d_layers: &[(Var, Var)],
    omega0: f64,
    p: &[Vec3],
    target: &NearestNeighbors,
    lambda_c: f64,
) -> (Var, Var) {
    let x = g.constant(Mat::from_rows3(p));
    let (y, d, _) = warp_graph(g, d_layers, omega0, x, false);
    let cd = chamfer_graph(g, y, target);
    let norms = g.row_norm(d);
    let mean_d = g.mean(norms);
    let reg = g.scale(mean_d, lambda_c);
    (g.add(cd, reg), mean_d)
}

/// `mean |clamp(O(x + D(x)), delta)|` over observed surface points.
pub fn infer_graph<T: Real>(
    g: &mut Graph<T>,
    o_layers: &[(Var, Var)],
    d_layers: &[(Var, Var)],
    omega0: f64,
    x: &[Vec3],
    delta: f64,
) -> Var {
    let xv = g.constant(Mat::from_rows3(x));
    let (y, _, _) = warp_graph(g, d_layers, omega0, xv, false);
    let (s, _) = siren_graph(g, o_layers, omega0, y, None);
    let s = g.clamp(s, delta);
    let s = g.abs(s);
    g.mean(s)
}

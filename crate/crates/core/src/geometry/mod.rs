//! Point clouds, meshes, normalization and ground-truth SDF sampling.

pub mod io;
mod mesh;
pub mod nn;
pub mod vec3;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use mesh::TriangleMesh;
pub use nn::NearestNeighbors;
pub use vec3::Vec3;

use crate::error::{Error, Result};

/// Half-width of the normalized cube that holds every query and grid.
pub const BOUND: f64 = 1.1;

/// Tolerance on the unit length of stored normals.
pub const NORMAL_TOL: f64 = 1e-6;

/// Unordered 3D point set, optionally oriented.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    /// Meters per unit of `points`.
    pub frame_scale: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(PointCloud {
            points,
            normals: None,
            frame_scale: 1.0,
        })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        if normals.len() != cloud.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} normals for {} points",
                normals.len(),
                cloud.points.len()
            )));
        }
        if let Some(n) = normals
            .iter()
            .find(|n| (vec3::norm(**n) - 1.0).abs() > NORMAL_TOL)
        {
            return Err(Error::InvalidInput(format!("normal {n:?} is not unit length")));
        }
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        vec3::centroid(&self.points)
    }

    /// Points (and normals) at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| idx.iter().map(|&i| n[i]).collect()),
            frame_scale: self.frame_scale,
        }
    }

    /// Mean distance from each point to its nearest other point.
    pub fn mean_spacing(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let nn = NearestNeighbors::new(&self.points);
        let total: f64 = self
            .points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                // nearest other point: query the 2-ball and skip self
                let mut r = 1e-3;
                loop {
                    let near = nn.within(p, r);
                    let best = near
                        .iter()
                        .filter(|&&j| j != i)
                        .map(|&j| vec3::dist2(p, self.points[j]))
                        .fold(f64::INFINITY, f64::min);
                    if best.is_finite() {
                        break best.sqrt();
                    }
                    r *= 2.0;
                }
            })
            .sum();
        total / self.points.len() as f64
    }
}

/// Similarity record taking original coordinates to normalized ones:
/// `normalized = (original + translation) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scale: f64,
    pub translation: Vec3,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::scale(vec3::add(p, self.translation), 1.0 / self.scale)
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        vec3::sub(vec3::scale(p, self.scale), self.translation)
    }

    /// Applies the transform to points; normals are unchanged by a similarity.
    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|&p| self.apply(p)).collect(),
            normals: cloud.normals.clone(),
            frame_scale: cloud.frame_scale * self.scale,
        }
    }
}

/// Centers the cloud at the origin and scales it into the unit ball.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<(PointCloud, Transform)> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty cloud".into()));
    }
    let c = cloud.centroid();
    let radius = cloud
        .points
        .iter()
        .map(|&p| vec3::norm(vec3::sub(p, c)))
        .fold(0.0, f64::max);
    let t = Transform {
        scale: if radius > 0.0 { radius } else { 1.0 },
        translation: vec3::scale(c, -1.0),
    };
    Ok((t.apply_cloud(cloud), t))
}

/// Deterministic subset of `n` distinct points.
pub fn subsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n > cloud.len() {
        return Err(Error::InvalidInput(format!(
            "cannot draw {n} points from a cloud of {}",
            cloud.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = index::sample(&mut rng, cloud.len(), n).into_vec();
    Ok(cloud.select(&idx))
}

/// Query points with ground-truth signed distances.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfSampleSet {
    pub queries: Vec<Vec3>,
    pub sdf: Vec<f64>,
    pub surface_mask: Vec<bool>,
    /// Zero vectors where `surface_mask` is false.
    pub normals: Vec<Vec3>,
}

impl SdfSampleSet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.queries.len();
        if self.sdf.len() != n || self.surface_mask.len() != n || self.normals.len() != n {
            return Err(Error::InvalidInput("sample arrays differ in length".into()));
        }
        for i in 0..n {
            if self.surface_mask[i] {
                if self.sdf[i].abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "surface sample {i} has sdf {}",
                        self.sdf[i]
                    )));
                }
                if (vec3::norm(self.normals[i]) - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidInput(format!(
                        "surface sample {i} lacks a unit normal"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn surface_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.surface_mask[i]).collect()
    }

    pub fn off_surface_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.surface_mask[i]).collect()
    }

    pub fn select(&self, idx: &[usize]) -> SdfSampleSet {
        SdfSampleSet {
            queries: idx.iter().map(|&i| self.queries[i]).collect(),
            sdf: idx.iter().map(|&i| self.sdf[i]).collect(),
            surface_mask: idx.iter().map(|&i| self.surface_mask[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
        }
    }

    /// Uniform random subset of at most `n` samples.
    pub fn subsample(&self, n: usize, rng: &mut impl Rng) -> SdfSampleSet {
        if n >= self.len() {
            return self.clone();
        }
        let idx = index::sample(rng, self.len(), n).into_vec();
        self.select(&idx)
    }

    pub fn extend(&mut self, other: SdfSampleSet) {
        self.queries.extend(other.queries);
        self.sdf.extend(other.sdf);
        self.surface_mask.extend(other.surface_mask);
        self.normals.extend(other.normals);
    }
}

/// `n` off-surface queries uniform in the normalized cube, labelled against
/// the oriented cloud indexed by `nn`.
pub fn uniform_sdf_samples(nn: &NearestNeighbors, normals: &[Vec3], n: usize, rng: &mut impl Rng) -> SdfSampleSet {
    let mut out = SdfSampleSet {
        queries: Vec::with_capacity(n),
        sdf: Vec::with_capacity(n),
        surface_mask: vec![false; n],
        normals: vec![[0.0; 3]; n],
    };
    for _ in 0..n {
        let q = [
            rng.random_range(-BOUND..=BOUND),
            rng.random_range(-BOUND..=BOUND),
            rng.random_range(-BOUND..=BOUND),
        ];
        out.sdf.push(signed_distance(nn, normals, q));
        out.queries.push(q);
    }
    out
}

/// Parameters of [`sample_sdf`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfSampling {
    pub n_total: usize,
    /// Share of samples drawn from the surface (perturbed or not).
    pub near_fraction: f64,
    /// Standard deviation of the perturbation, normalized units.
    pub sigma_near: f64,
    /// Share of the near samples left on the surface.
    pub surface_share: f64,
    /// Surface points drawn from a mesh before sampling.
    pub mesh_surface_points: usize,
}

impl Default for SdfSampling {
    fn default() -> Self {
        SdfSampling {
            n_total: 25_000,
            near_fraction: 0.8,
            sigma_near: 0.01,
            surface_share: 0.25,
            mesh_surface_points: 50_000,
        }
    }
}

/// Surface description accepted by [`sample_sdf`].
#[derive(Clone, Copy, Debug)]
pub enum Surface<'a> {
    Mesh(&'a TriangleMesh),
    Cloud(&'a PointCloud),
}

/// Builds ground-truth SDF samples around an oriented surface.
///
/// For a cloud, distances are Euclidean distances to the nearest surface
/// point and a query is inside (negative) when it lies behind that point's
/// outward normal. For a mesh, distances are exact and the sign comes from
/// the winding number.
pub fn sample_sdf(surface: Surface<'_>, cfg: &SdfSampling, seed: u64) -> Result<SdfSampleSet> {
    if cfg.n_total == 0 {
        return Err(Error::InvalidInput("n_total must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.near_fraction) || !(0.0..=1.0).contains(&cfg.surface_share) {
        return Err(Error::InvalidInput("fractions must lie in [0, 1]".into()));
    }
    if cfg.sigma_near < 0.0 || !cfg.sigma_near.is_finite() {
        return Err(Error::InvalidInput("sigma_near must be non-negative".into()));
    }
    let owned;
    let mut mesh = None;
    let cloud = match surface {
        Surface::Cloud(c) => c,
        Surface::Mesh(m) => {
            mesh = Some(m);
            if !m.watertight {
                return Err(Error::NotWatertight(
                    "inside/outside sign needs a closed surface".into(),
                ));
            }
            owned = m.sample_surface(cfg.mesh_surface_points.max(1), seed ^ 0x5eed)?;
            &owned
        }
    };
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("surface cloud needs oriented normals".into()))?;
    if cloud.is_empty() {
        return Err(Error::InvalidInput("empty surface cloud".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_near = (cfg.n_total as f64 * cfg.near_fraction).round() as usize;
    let n_surface = (n_near as f64 * cfg.surface_share).round() as usize;
    let n_perturbed = n_near - n_surface;
    let n_uniform = cfg.n_total - n_near;

    let pick = |rng: &mut ChaCha8Rng, k: usize| -> Vec<usize> {
        if k <= cloud.len() {
            index::sample(rng, cloud.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..cloud.len())).collect()
        }
    };

    let mut out = SdfSampleSet {
        queries: Vec::with_capacity(cfg.n_total),
        sdf: Vec::with_capacity(cfg.n_total),
        surface_mask: Vec::with_capacity(cfg.n_total),
        normals: Vec::with_capacity(cfg.n_total),
    };
    for i in pick(&mut rng, n_surface) {
        out.queries.push(cloud.points[i]);
        out.sdf.push(0.0);
        out.surface_mask.push(true);
        out.normals.push(normals[i]);
    }

    let mut off = Vec::with_capacity(n_perturbed + n_uniform);
    let noise = Normal::new(0.0, cfg.sigma_near.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for i in pick(&mut rng, n_perturbed) {
        let p = cloud.points[i];
        let q = [
            p[0] + noise.sample(&mut rng),
            p[1] + noise.sample(&mut rng),
            p[2] + noise.sample(&mut rng),
        ];
        off.push(q.map(|c| c.clamp(-BOUND, BOUND)));
    }
    for _ in 0..n_uniform {
        off.push([
            rng.random_range(-BOUND..=BOUND),
            rng.random_range(-BOUND..=BOUND),
            rng.random_range(-BOUND..=BOUND),
        ]);
    }

    let nn = NearestNeighbors::new(&cloud.points);
    for q in off {
        out.sdf.push(match mesh {
            Some(m) => m.signed_distance(q),
            None => signed_distance(&nn, normals, q),
        });
        out.queries.push(q);
        out.surface_mask.push(false);
        out.normals.push([0.0; 3]);
    }
    Ok(out)
}

/// Signed distance of `q` to an oriented cloud via its nearest point.
pub fn signed_distance(nn: &NearestNeighbors, normals: &[Vec3], q: Vec3) -> f64 {
    let (i, d2) = nn.nearest(q);
    let d = d2.sqrt();
    let side = vec3::dot(vec3::sub(q, nn.points()[i]), normals[i]);
    if side < 0.0 {
        -d
    } else {
        d
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Fibonacci-lattice sphere with exact outward normals.
    pub(crate) fn sphere_cloud(n: usize, radius: f64) -> PointCloud {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut pts = Vec::with_capacity(n);
        let mut nrm = Vec::with_capacity(n);
        for i in 0..n {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let u = [r * th.cos(), y, r * th.sin()];
            pts.push(vec3::scale(u, radius));
            nrm.push(u);
        }
        PointCloud::with_normals(pts, nrm).unwrap()
    }

    #[test]
    fn normalize_identity_for_centered_unit_cloud() {
        let cloud = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        let (out, t) = normalize_cloud(&cloud).unwrap();
        assert_eq!(out.points, cloud.points);
        assert_eq!(t, Transform::identity());
    }

    #[test]
    fn normalize_single_point() {
        let cloud = PointCloud::new(vec![[2.0, 2.0, 2.0]]).unwrap();
        let (out, t) = normalize_cloud(&cloud).unwrap();
        assert_eq!(out.points, vec![[0.0; 3]]);
        assert_eq!(t.translation, [-2.0, -2.0, -2.0]);
    }

    #[test]
    fn normalize_random_cloud_centroid_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| {
                [
                    rng.random_range(-3.0..5.0),
                    rng.random_range(0.0..2.0),
                    rng.random_range(10.0..11.0),
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let (out, t) = normalize_cloud(&cloud).unwrap();
        // centroid recomputed independently
        let mut c = [0.0; 3];
        for p in &out.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        assert!(vec3::norm(c) / 100.0 < 1e-9);
        assert!(out.points.iter().all(|p| vec3::norm(*p) <= 1.0 + 1e-12));
        for (orig, n) in pts.iter().zip(&out.points) {
            let back = t.invert(*n);
            assert!(vec3::norm(vec3::sub(back, *orig)) <= 1e-9 * vec3::norm(*orig));
        }
        assert!((out.frame_scale - t.scale).abs() < 1e-15);
    }

    #[test]
    fn normalize_empty_is_error() {
        let cloud = PointCloud::new(vec![]).unwrap();
        assert!(matches!(normalize_cloud(&cloud), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn invalid_normals_rejected() {
        let r = PointCloud::with_normals(vec![[0.0; 3]], vec![[0.0, 0.0, 2.0]]);
        assert!(r.is_err());
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn subsample_contracts() {
        let cloud = sphere_cloud(50, 1.0);
        let all = subsample(&cloud, 50, 1).unwrap();
        let mut a: Vec<_> = all.points.iter().map(|p| p.map(f64::to_bits)).collect();
        let mut b: Vec<_> = cloud.points.iter().map(|p| p.map(f64::to_bits)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(subsample(&cloud, 1, 9).unwrap(), subsample(&cloud, 1, 9).unwrap());
        assert_eq!(
            subsample(&cloud, 25, 4).unwrap(),
            subsample(&cloud, 25, 4).unwrap()
        );
        assert!(subsample(&cloud, 51, 0).is_err());
    }

    #[test]
    fn sphere_sdf_at_center_and_outside() {
        let cloud = sphere_cloud(4000, 1.0);
        let nn = NearestNeighbors::new(&cloud.points);
        let normals = cloud.normals.as_ref().unwrap();
        assert!((signed_distance(&nn, normals, [0.0; 3]) + 1.0).abs() < 0.01);
        assert!((signed_distance(&nn, normals, [0.0, 0.0, 2.0]) - 1.0).abs() < 0.01);
        assert_eq!(signed_distance(&nn, normals, cloud.points[17]), 0.0);
    }

    #[test]
    fn sample_sdf_counts_and_invariants() {
        let cloud = sphere_cloud(4000, 0.8);
        let cfg = SdfSampling {
            n_total: 2000,
            ..Default::default()
        };
        let s = sample_sdf(Surface::Cloud(&cloud), &cfg, 3).unwrap();
        assert_eq!(s.len(), 2000);
        s.validate().unwrap();
        assert_eq!(s.surface_indices().len(), 400);
        assert!(s.queries.iter().flatten().all(|c| c.abs() <= BOUND));
        for i in s.off_surface_indices() {
            let truth = vec3::norm(s.queries[i]) - 0.8;
            if truth.abs() > 0.02 {
                assert_eq!(truth.signum(), s.sdf[i].signum());
            }
        }
        assert_eq!(s, sample_sdf(Surface::Cloud(&cloud), &cfg, 3).unwrap());
    }

    #[test]
    fn sample_sdf_errors() {
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let cfg = SdfSampling::default();
        assert!(sample_sdf(Surface::Cloud(&cloud), &cfg, 0).is_err());
        let zero = SdfSampling {
            n_total: 0,
            ..cfg
        };
        assert!(sample_sdf(Surface::Cloud(&sphere_cloud(10, 1.0)), &zero, 0).is_err());
        let open = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            sample_sdf(Surface::Mesh(&open), &cfg, 0),
            Err(Error::NotWatertight(_))
        ));
    }
}

//! Synthetic deformable-tool dataset.
//!
//! Tools are swept solids along +x: a handle section, a short neck and a
//! blade section, clamped over `fixture_length` at the handle end. Loads act
//! transversely and bend the tool as a single Euler–Bernoulli cantilever with
//! rigid cross-sections, so every deformed point has a closed-form position.

pub mod beam;
mod dataset;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{
    generate_dataset, Dataset, DatasetConfig, DatasetManifest, DeformationRecord, RecordEntry,
    RecordKind, ToolEntry, ToolRecord, MANIFEST_FILE,
};

use crate::error::{Error, Result};
use crate::fieldnet::ContactObservation;
use crate::geometry::{
    normalize_cloud, sample_sdf, vec3, NearestNeighbors, PointCloud, SdfSampleSet, SdfSampling,
    Surface, Transform, TriangleMesh, Vec3,
};

/// Points around each cross-section ring of the swept mesh.
const RING_VERTICES: usize = 48;
/// Largest spacing between rings along the tool axis, meters.
const RING_SPACING: f64 = 0.004;

/// Cross-section of one part of the tool, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub length: f64,
    /// Extent along y.
    pub width: f64,
    /// Extent along z.
    pub thickness: f64,
    /// Superellipse exponent: 2 is an ellipse, large values approach a rectangle.
    #[serde(default = "default_roundness")]
    pub roundness: f64,
}

fn default_roundness() -> f64 {
    2.0
}

impl Section {
    /// Round section of the given radius.
    pub fn round(length: f64, radius: f64) -> Self {
        Section {
            length,
            width: 2.0 * radius,
            thickness: 2.0 * radius,
            roundness: 2.0,
        }
    }

    pub fn slab(length: f64, width: f64, thickness: f64) -> Self {
        Section {
            length,
            width,
            thickness,
            roundness: 8.0,
        }
    }
}

/// Parametric elastic tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub name: String,
    pub handle: Section,
    pub blade: Section,
    /// Young's modulus, Pa.
    pub youngs_modulus: f64,
    /// Clamped length measured from the handle end, meters.
    pub fixture_length: f64,
}

impl ToolSpec {
    /// Kitchen spatula: 0.15 m round handle, 0.10 x 0.08 x 0.002 m blade.
    pub fn spatula() -> Self {
        ToolSpec {
            name: "spatula".into(),
            handle: Section::round(0.15, 0.01),
            blade: Section::slab(0.10, 0.08, 0.002),
            youngs_modulus: 2.0e9,
            fixture_length: 0.03,
        }
    }

    /// Thick paddle, reconstructable at coarse grid resolutions.
    pub fn paddle() -> Self {
        ToolSpec {
            name: "paddle".into(),
            handle: Section::round(0.10, 0.012),
            blade: Section {
                roundness: 6.0,
                ..Section::slab(0.14, 0.06, 0.014)
            },
            youngs_modulus: 5.0e7,
            fixture_length: 0.04,
        }
    }

    /// Flat scraper with a rectangular handle.
    pub fn scraper() -> Self {
        ToolSpec {
            name: "scraper".into(),
            handle: Section {
                roundness: 4.0,
                ..Section::slab(0.08, 0.03, 0.018)
            },
            blade: Section::slab(0.16, 0.05, 0.012),
            youngs_modulus: 1.05e8,
            fixture_length: 0.03,
        }
    }

    /// The two tools used for quick end-to-end runs.
    pub fn desk_set() -> Vec<ToolSpec> {
        vec![Self::paddle(), Self::scraper()]
    }

    /// Six tools of varying proportions.
    pub fn full_set() -> Vec<ToolSpec> {
        let mut out = Self::desk_set();
        let variants = [
            ("spreader", 0.09, 0.011, 0.13, 0.045, 0.010, 6.0e7),
            ("turner", 0.12, 0.010, 0.12, 0.07, 0.012, 1.0e8),
            ("ruler", 0.06, 0.015, 0.20, 0.04, 0.010, 3.0e8),
            ("trowel", 0.11, 0.013, 0.12, 0.08, 0.013, 1.2e8),
        ];
        for (name, hl, hr, bl, bw, bt, e) in variants {
            out.push(ToolSpec {
                name: name.into(),
                handle: Section::round(hl, hr),
                blade: Section::slab(bl, bw, bt),
                youngs_modulus: e,
                fixture_length: 0.03,
            });
        }
        out
    }

    pub fn length(&self) -> f64 {
        self.handle.length + self.blade.length
    }

    /// Transition between handle and blade profiles, taken from the blade.
    pub fn neck_length(&self) -> f64 {
        (0.25 * self.blade.length).min(0.02)
    }

    /// Free length of the cantilever.
    pub fn cantilever_length(&self) -> f64 {
        self.length() - self.fixture_length
    }

    /// Second moments of area of the blade section, `(I_y, I_z)` in m^4,
    /// governing deflection along y and along z respectively.
    pub fn second_moments(&self) -> (f64, f64) {
        let (w, t) = (self.blade.width, self.blade.thickness);
        (t * w.powi(3) / 12.0, w * t.powi(3) / 12.0)
    }

    /// Bending stiffness `(E I_y, E I_z)`, N m^2.
    pub fn stiffness(&self) -> (f64, f64) {
        let (iy, iz) = self.second_moments();
        (self.youngs_modulus * iy, self.youngs_modulus * iz)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(format!("{}: {what}", self.name)));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return bad("name must be a non-empty [A-Za-z0-9_-] identifier");
        }
        for (part, s) in [("handle", &self.handle), ("blade", &self.blade)] {
            let dims = [s.length, s.width, s.thickness, s.roundness];
            if dims.iter().any(|d| !d.is_finite() || *d <= 0.0) {
                return bad(&format!("{part} dimensions must be positive"));
            }
            if s.roundness < 1.0 {
                return bad(&format!("{part} roundness must be at least 1"));
            }
        }
        if !(self.youngs_modulus.is_finite() && self.youngs_modulus > 0.0) {
            return bad("Young's modulus must be positive");
        }
        if !(self.fixture_length > 0.0 && self.fixture_length < self.length()) {
            return bad("fixture must cover part of the tool without swallowing it");
        }
        Ok(())
    }

    /// Section half-extents and exponent at axial position `x`.
    fn profile(&self, x: f64) -> (f64, f64, f64) {
        let h = &self.handle;
        let b = &self.blade;
        let neck_end = h.length + self.neck_length();
        let t = if x <= h.length {
            0.0
        } else if x >= neck_end {
            1.0
        } else {
            let u = (x - h.length) / self.neck_length();
            u * u * (3.0 - 2.0 * u)
        };
        let lerp = |a: f64, c: f64| a + (c - a) * t;
        (
            lerp(h.width, b.width) / 2.0,
            lerp(h.thickness, b.thickness) / 2.0,
            lerp(h.roundness, b.roundness),
        )
    }

    fn stations(&self) -> Vec<f64> {
        let h = self.handle.length;
        let n = h + self.neck_length();
        let l = self.length();
        let mut out = vec![0.0];
        for (a, b) in [(0.0, h), (h, n), (n, l)] {
            let k = ((b - a) / RING_SPACING).ceil().max(1.0) as usize;
            out.extend((1..=k).map(|i| a + (b - a) * i as f64 / k as f64));
        }
        out
    }
}

/// Swept watertight mesh (meters, tool frame) and a surface cloud with
/// outward normals at `surface_density` points per square meter.
pub fn build_nominal(spec: &ToolSpec, surface_density: f64) -> Result<(TriangleMesh, PointCloud)> {
    spec.validate()?;
    if !(surface_density.is_finite() && surface_density > 0.0) {
        return Err(Error::InvalidInput("surface density must be positive".into()));
    }
    let stations = spec.stations();
    let r = RING_VERTICES;
    let mut vertices = Vec::with_capacity(stations.len() * r + 2);
    for &x in &stations {
        let (a, b, n) = spec.profile(x);
        for k in 0..r {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / r as f64;
            let (c, s) = (phi.cos(), phi.sin());
            let e = 2.0 / n;
            vertices.push([x, a * c.signum() * c.abs().powf(e), b * s.signum() * s.abs().powf(e)]);
        }
    }
    let start = vertices.len() as u32;
    vertices.push([0.0, 0.0, 0.0]);
    vertices.push([spec.length(), 0.0, 0.0]);
    let end = start + 1;

    let ring = |i: usize, k: usize| (i * r + k % r) as u32;
    let mut faces = Vec::with_capacity(2 * r * stations.len());
    for i in 0..stations.len() - 1 {
        for k in 0..r {
            faces.push([ring(i, k), ring(i, k + 1), ring(i + 1, k)]);
            faces.push([ring(i, k + 1), ring(i + 1, k + 1), ring(i + 1, k)]);
        }
    }
    let last = stations.len() - 1;
    for k in 0..r {
        faces.push([start, ring(0, k + 1), ring(0, k)]);
        faces.push([end, ring(last, k), ring(last, k + 1)]);
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    if !mesh.watertight {
        return Err(Error::InvalidSpec(format!("{}: swept mesh is not closed", spec.name)));
    }
    let count = (mesh.area() * surface_density).round().max(1.0) as usize;
    let cloud = mesh.sample_surface(count, name_seed(&spec.name))?;
    Ok((mesh, cloud))
}

/// Nominal geometry in normalized units together with its tool-frame transform.
#[derive(Clone, Debug)]
pub struct NominalTool {
    pub spec: ToolSpec,
    pub mesh: TriangleMesh,
    pub cloud: PointCloud,
    /// Tool frame (meters) to normalized units.
    pub transform: Transform,
}

impl NominalTool {
    pub fn build(spec: &ToolSpec, surface_density: f64) -> Result<Self> {
        let (mut mesh, cloud_m) = build_nominal(spec, surface_density)?;
        let (cloud, transform) = normalize_cloud(&cloud_m)?;
        for v in &mut mesh.vertices {
            *v = transform.apply(*v);
        }
        Ok(NominalTool {
            spec: spec.clone(),
            mesh,
            cloud,
            transform,
        })
    }

    pub fn frame_scale(&self) -> f64 {
        self.transform.scale
    }
}

/// A single transverse load applied over a contact patch (tool frame, SI units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub load_point: Vec3,
    /// Newtons.
    pub load_vector: Vec3,
    /// Radius of the contact patch, meters.
    pub contact_radius: f64,
}

/// Nominal and deformed clouds with the contact that produced the deformation.
#[derive(Clone, Debug)]
pub struct DeformationSample {
    pub tool_id: String,
    pub nominal_cloud: PointCloud,
    /// Index-aligned with `nominal_cloud`.
    pub deformed_cloud: PointCloud,
    pub contacts: ContactObservation,
    pub sdf_samples: SdfSampleSet,
    pub bc: BoundaryCondition,
}

/// Per-point displacement (meters) and the slopes of the deflection curve.
fn displacement(spec: &ToolSpec, bc: &BoundaryCondition, x: f64) -> (Vec3, f64, f64) {
    let (ei_y, ei_z) = spec.stiffness();
    let s = x - spec.fixture_length;
    let a = bc.load_point[0] - spec.fixture_length;
    let g = beam::influence(s, a);
    let dg = beam::influence_slope(s, a);
    let [_, fy, fz] = bc.load_vector;
    (
        [0.0, fy * g / ei_y, fz * g / ei_z],
        fy * dg / ei_y,
        fz * dg / ei_z,
    )
}

/// Bends the nominal cloud under `bc` and samples the deformed SDF.
pub fn deform(
    tool: &NominalTool,
    bc: &BoundaryCondition,
    sampling: &SdfSampling,
    seed: u64,
) -> Result<DeformationSample> {
    let spec = &tool.spec;
    if !(bc.contact_radius > 0.0) {
        return Err(Error::InvalidInput("contact radius must be positive".into()));
    }
    if bc.load_vector.iter().chain(&bc.load_point).any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite load".into()));
    }
    let t = tool.transform;
    let nominal = &tool.cloud;
    let normals = nominal
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("nominal cloud needs normals".into()))?;
    let raw: Vec<Vec3> = nominal.points.iter().map(|&p| t.invert(p)).collect();

    let nn = NearestNeighbors::new(&raw);
    let (_, d2) = nn.nearest(bc.load_point);
    if d2.sqrt() > bc.contact_radius {
        return Err(Error::InvalidInput(format!(
            "load point {:?} is {:.4} m from the tool surface",
            bc.load_point,
            d2.sqrt()
        )));
    }
    let q_indices = nn.within(bc.load_point, bc.contact_radius);

    let limit = 0.1 * spec.cantilever_length();
    let mut points = Vec::with_capacity(raw.len());
    let mut new_normals = Vec::with_capacity(raw.len());
    for (i, p) in raw.iter().enumerate() {
        let (d, sy, sz) = displacement(spec, bc, p[0]);
        if vec3::norm(d) >= limit {
            return Err(Error::Regime(format!(
                "deflection {:.4} m reaches 10% of the {:.3} m cantilever",
                vec3::norm(d),
                spec.cantilever_length()
            )));
        }
        points.push(vec3::add(nominal.points[i], vec3::scale(d, 1.0 / t.scale)));
        let n = normals[i];
        let tilt = sy * n[1] + sz * n[2];
        new_normals.push(if tilt == 0.0 {
            n
        } else {
            vec3::normalize([n[0] - tilt, n[1], n[2]]).unwrap_or(n)
        });
    }
    let mut deformed = PointCloud::with_normals(points, new_normals)?;
    deformed.frame_scale = nominal.frame_scale;

    let u = vec3::scale(bc.load_vector, -1.0);
    let contacts = ContactObservation::from_indices(nominal, q_indices, u)?;
    let sdf_samples = sample_sdf(Surface::Cloud(&deformed), sampling, seed)?;
    Ok(DeformationSample {
        tool_id: spec.name.clone(),
        nominal_cloud: nominal.clone(),
        deformed_cloud: deformed,
        contacts,
        sdf_samples,
        bc: bc.clone(),
    })
}

/// Draws a load on the outer blade with log-uniform magnitude in
/// `force_range` and a direction in the plane normal to the tool axis.
pub fn sample_condition(
    tool: &NominalTool,
    cfg: &DatasetConfig,
    rng: &mut impl Rng,
) -> BoundaryCondition {
    let spec = &tool.spec;
    let lo = spec.handle.length + spec.neck_length();
    let span = spec.length() - lo;
    let (x0, x1) = (
        lo + cfg.load_region[0] * span,
        lo + cfg.load_region[1] * span,
    );
    let candidates: Vec<Vec3> = tool
        .cloud
        .points
        .iter()
        .map(|&p| tool.transform.invert(p))
        .filter(|p| p[0] >= x0 && p[0] <= x1)
        .collect();
    let load_point = if candidates.is_empty() {
        tool.transform.invert(tool.cloud.points[rng.random_range(0..tool.cloud.len())])
    } else {
        candidates[rng.random_range(0..candidates.len())]
    };
    let (fmin, fmax) = (cfg.force_range[0], cfg.force_range[1]);
    let magnitude = (fmin.ln() + rng.random::<f64>() * (fmax.ln() - fmin.ln())).exp();
    let angle = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    BoundaryCondition {
        load_point,
        load_vector: [0.0, magnitude * angle.cos(), magnitude * angle.sin()],
        contact_radius: cfg.contact_radius,
    }
}

/// Nominal cloud point at the blade tip (tool frame, meters): the point
/// closest to the far end of the tool axis in the L1 sense.
pub fn tip_point(spec: &ToolSpec, transform: &Transform, cloud: &PointCloud) -> Vec3 {
    let key = |p: &Vec3| (spec.length() - p[0]).abs() + p[1].abs() + p[2].abs();
    cloud
        .points
        .iter()
        .map(|&p| transform.invert(p))
        .min_by(|a, b| key(a).total_cmp(&key(b)))
        .expect("non-empty nominal cloud")
}

/// Zero-load sample with a contact patch at the blade tip.
pub fn zero_load_condition(tool: &NominalTool, contact_radius: f64) -> BoundaryCondition {
    BoundaryCondition {
        load_point: tip_point(&tool.spec, &tool.transform, &tool.cloud),
        load_vector: [0.0; 3],
        contact_radius,
    }
}

/// Stable seed from a tool name (FNV-1a).
pub fn name_seed(name: &str) -> u64 {
    name.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Mixes several integers into one seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

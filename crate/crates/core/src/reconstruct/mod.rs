//! Zero-level-set extraction, field cross-sections and dense correspondences.

mod correspond;
mod mc;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use correspond::{correspondences, deformed_positions, locate, CorrespondConfig, Correspondence};
pub use mc::{case_table, extract_isosurface, EDGES};

use crate::fieldnet::{DeformedField, FieldModel};
use crate::geometry::io::ArrayStore;
use crate::geometry::{vec3, PointCloud, TriangleMesh, Vec3};
use crate::{Error, Result};

/// Half-width of the reconstruction cube in normalized units.
pub const GRID_EXTENT: f64 = 1.1;

/// Axis-aligned node lattice, x varying fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub counts: [usize; 3],
}

impl GridSpec {
    /// `resolution^3` nodes spanning the reconstruction cube.
    pub fn cube(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidInput(format!(
                "grid resolution must be at least 2, got {resolution}"
            )));
        }
        let h = 2.0 * GRID_EXTENT / (resolution - 1) as f64;
        Ok(GridSpec {
            origin: [-GRID_EXTENT; 3],
            spacing: [h; 3],
            counts: [resolution; 3],
        })
    }

    /// `resolution^2` nodes on the plane `x[axis] = offset` inside the cube.
    pub fn plane(plane: Plane, resolution: usize) -> Result<Self> {
        if plane.axis > 2 {
            return Err(Error::InvalidInput(format!("axis {} is not 0, 1 or 2", plane.axis)));
        }
        if !(plane.offset.abs() <= GRID_EXTENT) {
            return Err(Error::InvalidInput(format!(
                "plane offset {} lies outside [-{GRID_EXTENT}, {GRID_EXTENT}]",
                plane.offset
            )));
        }
        let mut spec = GridSpec::cube(resolution)?;
        spec.origin[plane.axis] = plane.offset;
        spec.spacing[plane.axis] = 0.0;
        spec.counts[plane.axis] = 1;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let wide = self.counts.iter().filter(|&&c| c >= 2).count();
        if self.counts.contains(&0) || wide < 2 {
            return Err(Error::InvalidInput(format!("degenerate grid counts {:?}", self.counts)));
        }
        if self.spacing.iter().chain(&self.origin).any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite grid geometry".into()));
        }
        Ok(())
    }

    pub fn position(&self, index: usize) -> Vec3 {
        let [nx, ny, _] = self.counts;
        let (i, j, k) = (index % nx, index / nx % ny, index / (nx * ny));
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Nodes of the `k`-th z slab.
    pub fn slab(&self, k: usize) -> Vec<Vec3> {
        let n = self.counts[0] * self.counts[1];
        (k * n..(k + 1) * n).map(|i| self.position(i)).collect()
    }
}

/// Cutting plane `x[axis] = offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub axis: usize,
    pub offset: f64,
}

/// Field values on a [`GridSpec`]; `components` values per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub components: usize,
    pub values: Vec<f64>,
}

impl FieldGrid {
    /// Evaluates `f` slab by slab; `f` returns `components` values per point.
    pub fn sample<F>(spec: GridSpec, components: usize, f: F) -> Result<Self>
    where
        F: Fn(&[Vec3]) -> Vec<f64> + Sync,
    {
        spec.validate()?;
        let slabs: Vec<Vec<f64>> = (0..spec.counts[2])
            .into_par_iter()
            .map(|k| f(&spec.slab(k)))
            .collect();
        let values: Vec<f64> = slabs.into_iter().flatten().collect();
        if values.len() != spec.len() * components {
            return Err(Error::Shape(format!(
                "field produced {} values for {} nodes x {components}",
                values.len(),
                spec.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite field value on the grid".into()));
        }
        Ok(FieldGrid {
            spec,
            components,
            values,
        })
    }

    pub fn node(&self, index: usize) -> &[f64] {
        &self.values[index * self.components..(index + 1) * self.components]
    }

    /// Writes `grid.json` and the value array into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        let mut store = ArrayStore::create(dir)?;
        let [nx, ny, nz] = self.spec.counts;
        let data: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        store.put(name, &format!("{name}.bin"), &[nz, ny, nx, self.components], &data)?;
        store.finish()?;
        let path = dir.join(format!("{name}.grid.json"));
        let text = serde_json::to_string_pretty(&self.spec).expect("grid spec serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// One row per node: coordinates then values.
    pub fn to_csv(&self, header: &[&str]) -> String {
        let mut out = String::from("x,y,z");
        for h in header {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for i in 0..self.spec.len() {
            let p = self.spec.position(i);
            let _ = write!(out, "{},{},{}", p[0], p[1], p[2]);
            for v in self.node(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// SDF grid of the deformed object (or the nominal object when `z` is absent).
pub fn sdf_grid(model: &FieldModel, alpha: &[f32], z: Option<&[f32]>, spec: GridSpec) -> Result<FieldGrid> {
    let field = match z {
        Some(z) => DeformedField::new(model, z, alpha)?,
        None => DeformedField::nominal(model, alpha)?,
    };
    FieldGrid::sample(spec, 1, |x| field.eval(x))
}

/// Zero isosurface of the model's field on a `resolution^3` grid.
pub fn marching_cubes(model: &FieldModel, alpha: &[f32], z: Option<&[f32]>, resolution: usize) -> Result<TriangleMesh> {
    let grid = sdf_grid(model, alpha, z, GridSpec::cube(resolution)?)?;
    extract_isosurface(&grid, 0.0)
}

/// Area-uniform samples of the reconstructed surface.
pub fn reconstruct_cloud(
    model: &FieldModel,
    alpha: &[f32],
    z: Option<&[f32]>,
    resolution: usize,
    n_points: usize,
    seed: u64,
) -> Result<PointCloud> {
    marching_cubes(model, alpha, z, resolution)?.sample_surface(n_points, seed)
}

/// Three planar grids: deformed SDF, nominal SDF and deformation magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub plane: Plane,
    pub deformed_sdf: FieldGrid,
    pub object_sdf: FieldGrid,
    pub deformation_norm: FieldGrid,
}

impl CrossSection {
    /// Writes the three grids and a combined `cross_section.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.deformed_sdf.write(dir, "deformed_sdf")?;
        self.object_sdf.write(dir, "object_sdf")?;
        self.deformation_norm.write(dir, "deformation_norm")?;
        let combined = FieldGrid {
            spec: self.deformed_sdf.spec,
            components: 3,
            values: (0..self.deformed_sdf.spec.len())
                .flat_map(|i| {
                    [
                        self.deformed_sdf.values[i],
                        self.object_sdf.values[i],
                        self.deformation_norm.values[i],
                    ]
                })
                .collect(),
        };
        let path = dir.join("cross_section.csv");
        std::fs::write(&path, combined.to_csv(&["deformed_sdf", "object_sdf", "deformation_norm"]))
            .map_err(|e| Error::io(&path, e))
    }
}

pub fn export_cross_section(
    model: &FieldModel,
    alpha: &[f32],
    z: &[f32],
    plane: Plane,
    resolution: usize,
) -> Result<CrossSection> {
    let spec = GridSpec::plane(plane, resolution)?;
    let field = DeformedField::new(model, z, alpha)?;
    let d = field.deformation.as_ref().expect("deformation decoded");
    Ok(CrossSection {
        plane,
        deformed_sdf: FieldGrid::sample(spec, 1, |x| field.eval(x))?,
        object_sdf: FieldGrid::sample(spec, 1, |x| field.object.eval(x).into_iter().map(|r| r[0]).collect())?,
        deformation_norm: FieldGrid::sample(spec, 1, |x| {
            d.eval(x).into_iter().map(|r| vec3::norm([r[0], r[1], r[2]])).collect()
        })?,
    })
}

#[cfg(test)]
mod tests;

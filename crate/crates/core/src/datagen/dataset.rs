//! Dataset generation and loading.
//!
//! ```text
//! <root>/manifest.json
//! <root>/tools/<id>/{tool.json, nominal.ply, nominal.bin, nominal_normals.bin, sdf.bin, arrays.json}
//! <root>/tools/<id>/def_<k>/{cloud.bin, cloud_normals.bin, sdf.bin, arrays.json, contacts.json}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{deform, mix_seed, name_seed, rng_for, sample_condition, NominalTool, ToolSpec};
use crate::error::{Error, Result};
use crate::fieldnet::{ContactFile, ContactObservation};
use crate::geometry::io::{read_ply, write_ply, ArrayStore};
use crate::geometry::{sample_sdf, PointCloud, SdfSampleSet, SdfSampling, Surface, Transform, TriangleMesh};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;
/// Load draws tried per condition before giving up on the regime limit.
const MAX_DRAWS: usize = 200;

/// Parameters of [`generate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Loading conditions per tool.
    pub n_conditions: usize,
    /// Nominal cloud density, points per square meter.
    pub surface_density: f64,
    pub sampling: SdfSampling,
    /// Contact patch radius, meters.
    pub contact_radius: f64,
    /// Load magnitude range, Newtons.
    pub force_range: [f64; 2],
    /// Range along the blade, as fractions of its length, where loads are applied.
    pub load_region: [f64; 2],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_conditions: 24,
            surface_density: 2.0e5,
            sampling: SdfSampling::default(),
            contact_radius: 0.01,
            force_range: [0.5, 5.0],
            load_region: [0.3, 1.0],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let [f0, f1] = self.force_range;
        let [r0, r1] = self.load_region;
        if !(f0 > 0.0 && f1 >= f0 && f1.is_finite()) {
            return Err(Error::Config("force_range must satisfy 0 < min <= max".into()));
        }
        if !(0.0..=1.0).contains(&r0) || !(r0..=1.0).contains(&r1) {
            return Err(Error::Config("load_region must satisfy 0 <= lo <= hi <= 1".into()));
        }
        if !(self.contact_radius > 0.0) {
            return Err(Error::Config("contact_radius must be positive".into()));
        }
        if !(self.surface_density > 0.0) {
            return Err(Error::Config("surface_density must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolEntry {
    pub id: String,
    pub dir: String,
    pub n_points: usize,
    pub frame_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Nominal,
    Deformed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub tool_id: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<usize>,
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub tools: Vec<ToolEntry>,
    pub records: Vec<RecordEntry>,
}

impl DatasetManifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.version != FORMAT_VERSION {
            return Err(Error::InvalidDataset(format!(
                "{}: unsupported version {}",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ToolFile {
    spec: ToolSpec,
    transform: Transform,
}

/// Generates nominal geometry and `cfg.n_conditions` deformations per tool.
///
/// Output depends only on the specs, `cfg` and `seed`, not on thread count.
pub fn generate_dataset(
    specs: &[ToolSpec],
    cfg: &DatasetConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(Error::InvalidInput("no tools to generate".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate()?;
        if specs[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::InvalidSpec(format!("duplicate tool name {}", s.name)));
        }
    }
    let tools: Vec<NominalTool> = specs
        .par_iter()
        .map(|s| NominalTool::build(s, cfg.surface_density))
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest {
        version: FORMAT_VERSION,
        seed,
        config: cfg.clone(),
        tools: Vec::new(),
        records: Vec::new(),
    };
    for tool in &tools {
        let dir = format!("tools/{}", tool.spec.name);
        manifest.tools.push(ToolEntry {
            id: tool.spec.name.clone(),
            dir: dir.clone(),
            n_points: tool.cloud.len(),
            frame_scale: tool.frame_scale(),
        });
        manifest.records.push(RecordEntry {
            tool_id: tool.spec.name.clone(),
            kind: RecordKind::Nominal,
            condition: None,
            dir: dir.clone(),
        });
        for k in 0..cfg.n_conditions {
            manifest.records.push(RecordEntry {
                tool_id: tool.spec.name.clone(),
                kind: RecordKind::Deformed,
                condition: Some(k),
                dir: format!("{dir}/def_{k}"),
            });
        }
    }

    tools
        .par_iter()
        .try_for_each(|tool| write_nominal(tool, cfg, seed, &out_dir.join("tools").join(&tool.spec.name)))?;

    let jobs: Vec<(usize, usize)> = (0..tools.len())
        .flat_map(|t| (0..cfg.n_conditions).map(move |k| (t, k)))
        .collect();
    jobs.par_iter().try_for_each(|&(t, k)| {
        let tool = &tools[t];
        let dir = out_dir
            .join("tools")
            .join(&tool.spec.name)
            .join(format!("def_{k}"));
        write_condition(tool, cfg, seed, k, &dir)
    })?;

    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn write_nominal(tool: &NominalTool, cfg: &DatasetConfig, seed: u64, dir: &Path) -> Result<()> {
    let sdf_seed = mix_seed(&[seed, name_seed(&tool.spec.name), u64::MAX]);
    let sdf = sample_sdf(Surface::Mesh(&tool.mesh), &cfg.sampling, sdf_seed)?;
    let mut store = ArrayStore::create(dir)?;
    store.put_cloud("nominal", "nominal.bin", &tool.cloud)?;
    store.put_samples("sdf", "sdf.bin", &sdf)?;
    store.manifest.translation = Some(tool.transform.translation);
    store.finish()?;
    write_ply(&dir.join("nominal.ply"), &tool.mesh, None)?;
    let file = ToolFile {
        spec: tool.spec.clone(),
        transform: tool.transform,
    };
    write_json(&dir.join("tool.json"), &file)
}

fn write_condition(tool: &NominalTool, cfg: &DatasetConfig, seed: u64, k: usize, dir: &Path) -> Result<()> {
    let base = [seed, name_seed(&tool.spec.name), k as u64];
    let mut rng = rng_for(&base);
    let sdf_seed = mix_seed(&[base[0], base[1], base[2], 1]);
    let mut last = None;
    for _ in 0..MAX_DRAWS {
        let bc = sample_condition(tool, cfg, &mut rng);
        match deform(tool, &bc, &cfg.sampling, sdf_seed) {
            Ok(sample) => {
                let mut store = ArrayStore::create(dir)?;
                store.put_cloud("cloud", "cloud.bin", &sample.deformed_cloud)?;
                store.put_samples("sdf", "sdf.bin", &sample.sdf_samples)?;
                store.manifest.translation = Some(tool.transform.translation);
                store.finish()?;
                let contacts = ContactFile {
                    q_indices: sample.contacts.q_indices.clone(),
                    u: sample.contacts.u,
                    load_point: tool.transform.apply(bc.load_point),
                    load_point_m: bc.load_point,
                    load_vector: bc.load_vector,
                    contact_radius: bc.contact_radius,
                };
                return write_json(&dir.join("contacts.json"), &contacts);
            }
            Err(e @ (Error::Regime(_) | Error::InvalidInput(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InvalidInput("no valid load found".into())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// One tool's nominal data in normalized units.
#[derive(Clone, Debug)]
pub struct ToolRecord {
    pub id: String,
    pub spec: ToolSpec,
    pub transform: Transform,
    pub nominal: PointCloud,
    pub sdf: SdfSampleSet,
    pub dir: PathBuf,
}

impl ToolRecord {
    pub fn frame_scale(&self) -> f64 {
        self.transform.scale
    }

    pub fn mesh(&self) -> Result<TriangleMesh> {
        read_ply(&self.dir.join("nominal.ply"))
    }
}

/// One loaded deformation.
#[derive(Clone, Debug)]
pub struct DeformationRecord {
    /// Index into [`Dataset::tools`].
    pub tool: usize,
    pub condition: usize,
    /// Index-aligned with the tool's nominal cloud.
    pub deformed: PointCloud,
    pub sdf: SdfSampleSet,
    pub contacts: ContactObservation,
    pub load: ContactFile,
}

/// A generated dataset loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub tools: Vec<ToolRecord>,
    pub deformations: Vec<DeformationRecord>,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = DatasetManifest::read(&root)?;
        let mut tools = Vec::with_capacity(manifest.tools.len());
        for entry in &manifest.tools {
            let dir = root.join(&entry.dir);
            let file: ToolFile = read_json(&dir.join("tool.json"))?;
            let store = ArrayStore::open(&dir)?;
            let mut nominal = store.get_cloud("nominal")?;
            nominal.frame_scale = file.transform.scale;
            if nominal.len() != entry.n_points || nominal.normals.is_none() {
                return Err(Error::InvalidDataset(format!(
                    "{}: nominal cloud does not match the manifest",
                    dir.display()
                )));
            }
            let sdf = store.get_samples("sdf")?;
            sdf.validate()?;
            tools.push(ToolRecord {
                id: entry.id.clone(),
                spec: file.spec,
                transform: file.transform,
                nominal,
                sdf,
                dir,
            });
        }
        let mut deformations = Vec::new();
        for rec in manifest.records.iter().filter(|r| r.kind == RecordKind::Deformed) {
            let tool = tools
                .iter()
                .position(|t| t.id == rec.tool_id)
                .ok_or_else(|| Error::InvalidDataset(format!("unknown tool {}", rec.tool_id)))?;
            let dir = root.join(&rec.dir);
            let store = ArrayStore::open(&dir)?;
            let mut deformed = store.get_cloud("cloud")?;
            let nominal = &tools[tool].nominal;
            deformed.frame_scale = nominal.frame_scale;
            if deformed.len() != nominal.len() {
                return Err(Error::InvalidDataset(format!(
                    "{}: deformed cloud has {} points, nominal has {}",
                    dir.display(),
                    deformed.len(),
                    nominal.len()
                )));
            }
            let sdf = store.get_samples("sdf")?;
            sdf.validate()?;
            let load: ContactFile = read_json(&dir.join("contacts.json"))?;
            let contacts = ContactObservation::from_indices(nominal, load.q_indices.clone(), load.u)
                .map_err(|e| Error::InvalidDataset(format!("{}: {e}", dir.display())))?;
            deformations.push(DeformationRecord {
                tool,
                condition: rec.condition.unwrap_or(0),
                deformed,
                sdf,
                contacts,
                load,
            });
        }
        Ok(Dataset {
            root,
            manifest,
            tools,
            deformations,
        })
    }

    pub fn tool_index(&self, id: &str) -> Option<usize> {
        self.tools.iter().position(|t| t.id == id)
    }

    /// Deformations of one tool in condition order.
    pub fn deformations_of(&self, tool: usize) -> impl Iterator<Item = &DeformationRecord> {
        self.deformations.iter().filter(move |d| d.tool == tool)
    }
}

//! One JSON document configuring every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{DatasetConfig, ToolSpec};
use crate::fieldnet::ArchConfig;
use crate::inference::{InferConfig, ViewConfig};
use crate::metrics::EvalConfig;
use crate::reconstruct::{CorrespondConfig, Plane};
use crate::training::{LossWeights, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed of data generation and inference.
    pub seed: u64,
    /// `desk`, `full` or `custom`.
    pub tool_set: String,
    /// Tool specs used when `tool_set` is `custom`.
    pub custom_tools: Vec<ToolSpec>,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    /// Held-out loading conditions per tool, drawn with a separate seed.
    pub test_conditions: usize,
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub infer: InferTask,
    pub recon: ReconTask,
    pub interp: InterpTask,
    pub xsection: XsectionTask,
    pub correspond: CorrespondTask,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            tool_set: "desk".into(),
            custom_tools: vec![],
            paths: Paths::default(),
            dataset: DatasetConfig {
                n_conditions: 6,
                surface_density: 1.0e5,
                sampling: crate::geometry::SdfSampling {
                    n_total: 8000,
                    ..Default::default()
                },
                ..Default::default()
            },
            test_conditions: 6,
            arch: ArchConfig::desk(),
            weights: LossWeights::default(),
            train: TrainConfig::default(),
            infer: InferTask::default(),
            recon: ReconTask::default(),
            interp: InterpTask::default(),
            xsection: XsectionTask::default(),
            correspond: CorrespondTask::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Locations relative to the output root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub test_data: PathBuf,
    pub pretrained: PathBuf,
    pub checkpoint: PathBuf,
    /// Directory receiving meshes, grids, logs and results.
    pub results: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "data/train".into(),
            test_data: "data/test".into(),
            pretrained: "model/pretrained.ckpt".into(),
            checkpoint: "model/trained.ckpt".into(),
            results: "results".into(),
        }
    }
}

/// Record selector: a tool id plus `zero`, `def_<k>` or nothing for the
/// nominal shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Target {
    pub tool: String,
    pub record: Option<String>,
}

impl Default for Target {
    fn default() -> Self {
        Target {
            tool: "paddle".into(),
            record: Some("def_0".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferTask {
    /// Deformation record of the training data to observe.
    pub target: Target,
    /// Take the observation from the held-out data instead.
    pub held_out: bool,
    /// Observe the whole deformed cloud instead of a single view.
    pub full_view: bool,
    pub known_force: bool,
    pub view: ViewConfig,
    pub optimizer: InferConfig,
}

impl Default for InferTask {
    fn default() -> Self {
        InferTask {
            target: Target::default(),
            held_out: false,
            full_view: false,
            known_force: true,
            view: ViewConfig::default(),
            optimizer: InferConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconTask {
    pub target: Target,
    pub resolution: usize,
}

impl Default for ReconTask {
    fn default() -> Self {
        ReconTask {
            target: Target::default(),
            resolution: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpTask {
    pub tool: String,
    pub from: String,
    pub to: String,
    pub ts: Vec<f64>,
    pub resolution: usize,
}

impl Default for InterpTask {
    fn default() -> Self {
        InterpTask {
            tool: "paddle".into(),
            from: "zero".into(),
            to: "def_0".into(),
            ts: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            resolution: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XsectionTask {
    pub target: Target,
    pub plane: Plane,
    pub resolution: usize,
}

impl Default for XsectionTask {
    fn default() -> Self {
        XsectionTask {
            target: Target::default(),
            plane: Plane { axis: 1, offset: 0.0 },
            resolution: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrespondTask {
    pub tool: String,
    pub from: String,
    pub to: String,
    pub solver: CorrespondConfig,
}

impl Default for CorrespondTask {
    fn default() -> Self {
        CorrespondTask {
            tool: "paddle".into(),
            from: "zero".into(),
            to: "def_0".into(),
            solver: CorrespondConfig::default(),
        }
    }
}

impl Config {
    pub fn tools(&self) -> Result<Vec<ToolSpec>> {
        match self.tool_set.as_str() {
            "desk" => Ok(ToolSpec::desk_set()),
            "full" => Ok(ToolSpec::full_set()),
            "custom" if !self.custom_tools.is_empty() => Ok(self.custom_tools.clone()),
            "custom" => Err(Error::Config("tool_set custom needs custom_tools".into())),
            other => Err(Error::Config(format!("tool_set: unknown set {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in self.tools()? {
            t.validate().map_err(|e| Error::Config(format!("tools: {e}")))?;
        }
        let at = |section: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{section}: {e}")));
        at("dataset", self.dataset.validate())?;
        at("arch", self.arch.validate())?;
        at("weights", self.weights.validate())?;
        at("train", self.train.validate())?;
        at("infer.optimizer", self.infer.optimizer.validate())?;
        at("eval", self.eval.validate())?;
        if self.dataset.n_conditions == 0 {
            return Err(Error::Config("dataset.n_conditions must be at least 1".into()));
        }
        for (name, r) in [
            ("recon.resolution", self.recon.resolution),
            ("interp.resolution", self.interp.resolution),
            ("xsection.resolution", self.xsection.resolution),
        ] {
            if r < 2 {
                return Err(Error::Config(format!("{name} must be at least 2")));
            }
        }
        Ok(())
    }

    /// Parses a (possibly partial) document over the defaults, then applies
    /// `path=value` overrides. Values parse as JSON, falling back to strings.
    pub fn from_json(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(Config::default()).expect("defaults serialize");
        if let Some(text) = text {
            let user: Value =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("not valid JSON: {e}")))?;
            if !user.is_object() {
                return Err(Error::Config("config must be a JSON object".into()));
            }
            merge(&mut doc, user);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Config = serde_path_to_error::deserialize(doc)
            .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Config::from_json(text.as_deref(), overrides)
    }

    /// Canonical serialization used for hashing and run records.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&serde_json::to_value(self).expect("config serializes")).expect("value serializes")
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *doc;
    for key in path.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| Error::Config(format!("{path}: unknown field {key:?}")))?;
    }
    *slot = value;
    Ok(())
}

/// Every leaf of the schema as `dotted.path = default`.
pub fn schema_fields() -> Vec<String> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, child, out);
                }
            }
            _ => out.push(format!("{prefix} = {v}")),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(Config::default()).expect("defaults serialize"), &mut out);
    out
}

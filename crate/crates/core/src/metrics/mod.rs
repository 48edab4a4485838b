//! Reconstruction and SDF accuracy over nominal, training and held-out records.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::fieldnet::{DeformedField, FieldModel, Stage};
use crate::geometry::{PointCloud, SdfSampleSet};
use crate::reconstruct::reconstruct_cloud;
use crate::training::{chamfer, record_key};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub recon_resolution: usize,
    /// Points sampled from each reconstructed mesh.
    pub recon_points: usize,
    /// Ground-truth surface points compared against; `None` uses all.
    pub gt_points: Option<usize>,
    pub seed: u64,
    /// Multiply reported values by 10^3.
    pub scale_1e3: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            recon_resolution: 128,
            recon_points: 5600,
            gt_points: None,
            seed: 0,
            scale_1e3: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recon_resolution < 2 || self.recon_points == 0 || self.gt_points == Some(0) {
            return Err(Error::Config(
                "eval needs recon_resolution >= 2 and positive point counts".into(),
            ));
        }
        Ok(())
    }
}

/// Mean absolute SDF error over the surface and off-surface partitions;
/// an empty partition is reported as `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdfError {
    pub on_surface: Option<f64>,
    pub off_surface: Option<f64>,
}

fn mean_abs(pred: &[f64], samples: &SdfSampleSet, idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    Some(idx.iter().map(|&i| (pred[i] - samples.sdf[i]).abs()).sum::<f64>() / idx.len() as f64)
}

/// Unclamped L1 error of `predicted` against the sample targets.
pub fn l1_from_predictions(predicted: &[f64], samples: &SdfSampleSet) -> Result<SdfError> {
    if predicted.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            predicted.len(),
            samples.len()
        )));
    }
    Ok(SdfError {
        on_surface: mean_abs(predicted, samples, &samples.surface_indices()),
        off_surface: mean_abs(predicted, samples, &samples.off_surface_indices()),
    })
}

/// L1 SDF error of the deformed field, or of the object field when `z` is absent.
pub fn l1_sdf_error(
    model: &FieldModel,
    alpha: &[f32],
    z: Option<&[f32]>,
    samples: &SdfSampleSet,
) -> Result<SdfError> {
    let field = match z {
        Some(z) => DeformedField::new(model, z, alpha)?,
        None => DeformedField::nominal(model, alpha)?,
    };
    l1_from_predictions(&field.eval(&samples.queries), samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "Train.Nom")]
    TrainNominal,
    #[serde(rename = "Train.Def")]
    TrainDeformed,
    #[serde(rename = "Test.Def")]
    TestDeformed,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::TrainNominal => "Train.Nom",
            Split::TrainDeformed => "Train.Def",
            Split::TestDeformed => "Test.Def",
        }
    }
}

/// One record to evaluate. Nominal items carry no force code.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub split: Split,
    pub key: String,
    pub alpha: Vec<f32>,
    pub z: Option<Vec<f32>>,
    pub surface: PointCloud,
    pub samples: SdfSampleSet,
    pub frame_scale: f64,
}

/// Normalized metrics of one record; metric-unit values follow from `frame_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub split: Split,
    pub key: String,
    /// `None` when no surface could be extracted.
    pub cd: Option<f64>,
    pub l1: SdfError,
    pub frame_scale: f64,
}

/// Split averages in normalized and metric units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: Split,
    pub records: usize,
    pub failed_reconstructions: usize,
    pub cd: Option<f64>,
    pub cd_m2: Option<f64>,
    pub l1_on: Option<f64>,
    pub l1_on_m: Option<f64>,
    pub l1_off: Option<f64>,
    pub l1_off_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    /// Factor already applied to every reported value.
    pub scale: f64,
    pub rows: Vec<SplitRow>,
    pub records: Vec<RecordMetrics>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsTable {
    pub fn row(&self, split: Split) -> Option<&SplitRow> {
        self.rows.iter().find(|r| r.split == split)
    }

    /// Aligned plain-text table, one row per split.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "split", "n", "CD", "CD_m2", "L1_on", "L1_on_m", "L1_off", "L1_off_m"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>4} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                r.split.label(),
                r.records,
                cell(r.cd),
                cell(r.cd_m2),
                cell(r.l1_on),
                cell(r.l1_on_m),
                cell(r.l1_off),
                cell(r.l1_off_m)
            );
        }
        if self.scale != 1.0 {
            let _ = writeln!(out, "values x {}", self.scale);
        }
        out
    }
}

/// Reconstructs and scores every item; rows appear in split order.
pub fn eval_model(model: &FieldModel, items: &[EvalItem], cfg: &EvalConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let records: Vec<RecordMetrics> = items
        .par_iter()
        .map(|it| evaluate_item(model, it, cfg))
        .collect::<Result<_>>()?;
    let scale = if cfg.scale_1e3 { 1e3 } else { 1.0 };
    let mut rows = Vec::new();
    for split in [Split::TrainNominal, Split::TrainDeformed, Split::TestDeformed] {
        let rs: Vec<&RecordMetrics> = records.iter().filter(|r| r.split == split).collect();
        if rs.is_empty() {
            continue;
        }
        let s = |f: &dyn Fn(&RecordMetrics) -> Option<f64>| mean(rs.iter().map(|r| f(r))).map(|v| v * scale);
        rows.push(SplitRow {
            split,
            records: rs.len(),
            failed_reconstructions: rs.iter().filter(|r| r.cd.is_none()).count(),
            cd: s(&|r| r.cd),
            cd_m2: s(&|r| r.cd.map(|c| c * r.frame_scale * r.frame_scale)),
            l1_on: s(&|r| r.l1.on_surface),
            l1_on_m: s(&|r| r.l1.on_surface.map(|v| v * r.frame_scale)),
            l1_off: s(&|r| r.l1.off_surface),
            l1_off_m: s(&|r| r.l1.off_surface.map(|v| v * r.frame_scale)),
        });
    }
    Ok(MetricsTable {
        scale,
        rows,
        records,
    })
}

fn evaluate_item(model: &FieldModel, it: &EvalItem, cfg: &EvalConfig) -> Result<RecordMetrics> {
    let z = it.z.as_deref();
    let cd = match reconstruct_cloud(model, &it.alpha, z, cfg.recon_resolution, cfg.recon_points, cfg.seed) {
        Ok(recon) => {
            let gt = match cfg.gt_points {
                Some(n) if n < it.surface.len() => crate::geometry::subsample(&it.surface, n, cfg.seed)?,
                _ => it.surface.clone(),
            };
            Some(chamfer(&recon.points, &gt.points)?)
        }
        Err(Error::EmptySurface) => None,
        Err(e) => return Err(e),
    };
    Ok(RecordMetrics {
        split: it.split,
        key: it.key.clone(),
        cd,
        l1: l1_sdf_error(model, &it.alpha, z, &it.samples)?,
        frame_scale: it.frame_scale,
    })
}

/// Items for the nominal and deformed records of `train`, plus held-out
/// deformations of `test` encoded from their contact observations.
pub fn dataset_items(model: &FieldModel, train: &Dataset, test: Option<&Dataset>) -> Result<Vec<EvalItem>> {
    model.require_stage(Stage::Trained)?;
    let mut items = Vec::new();
    for tool in &train.tools {
        let i = model.tool_index(&tool.id)?;
        items.push(EvalItem {
            split: Split::TrainNominal,
            key: tool.id.clone(),
            alpha: model.object_code(i),
            z: None,
            surface: tool.nominal.clone(),
            samples: tool.sdf.clone(),
            frame_scale: tool.frame_scale(),
        });
    }
    for d in &train.deformations {
        let tool = &train.tools[d.tool];
        let key = record_key(&tool.id, d.condition);
        items.push(EvalItem {
            split: Split::TrainDeformed,
            alpha: model.object_code(model.tool_index(&tool.id)?),
            z: Some(model.force_code(&key)?),
            key,
            surface: d.deformed.clone(),
            samples: d.sdf.clone(),
            frame_scale: tool.frame_scale(),
        });
    }
    if let Some(test) = test {
        for d in &test.deformations {
            let tool = &test.tools[d.tool];
            let (_, z) = model.encode_force(&d.contacts)?;
            items.push(EvalItem {
                split: Split::TestDeformed,
                key: record_key(&tool.id, d.condition),
                alpha: model.object_code(model.tool_index(&tool.id)?),
                z: Some(z),
                surface: d.deformed.clone(),
                samples: d.sdf.clone(),
                frame_scale: tool.frame_scale(),
            });
        }
    }
    Ok(items)
}

//! Two-phase optimization: nominal pretraining of `Ψ_o` and the object codes,
//! then deformation training of `Ψ_d` and the force encoder.

mod adam;
pub mod losses;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use losses::{chamfer, clamp};

use crate::autodiff::{Graph, Real, Var};
use crate::datagen::{mix_seed, tip_point, Dataset};
use crate::error::{Error, Result};
use crate::fieldnet::{ArchConfig, ContactObservation, FieldModel, Group, Stage};
use crate::geometry::{uniform_sdf_samples, vec3, NearestNeighbors, PointCloud, SdfSampleSet, Vec3};
use losses::{correction_graph, hyper_graph, latent_graph, sdf_loss, sdf_terms};

/// Loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Normal-alignment weight inside the SDF loss.
    pub lambda_normal: f64,
    /// Deformed SDF loss.
    pub lambda1: f64,
    /// Object code prior.
    pub lambda2: f64,
    /// Decoded-parameter prior.
    pub lambda3: f64,
    /// Force code prior.
    pub lambda4: f64,
    /// Minimal-correction prior on the deformation field.
    pub lambda_c: f64,
    /// SDF clamp threshold, normalized units.
    pub delta: f64,
    /// Weight of `Ψ_d` relative to `Ψ_o` in the decoded-parameter prior.
    pub hyper_d_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_normal: 0.1,
            lambda1: 1.0,
            lambda2: 1e-4,
            lambda3: 1e-4,
            lambda4: 1e-4,
            lambda_c: 1e-2,
            delta: 0.1,
            hyper_d_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_normal,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda_c,
            self.hyper_d_weight,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        Ok(())
    }
}

/// Optimization settings for both phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    /// SDF queries per step.
    pub sdf_batch: usize,
    /// Surface points per step for the correction term.
    pub surface_batch: usize,
    pub lr_net: f64,
    pub lr_code: f64,
    /// Learning rate at the end of the cosine schedule, relative to the start.
    pub lr_final_ratio: f64,
    /// Keep `Ψ_o` and the object codes fixed after pretraining.
    pub freeze_object: bool,
    /// Extra weight on `mean ||D||` for zero-load anchor records.
    pub anchor_weight: f64,
    /// Contact radius of the zero-load anchors, meters.
    pub anchor_contact_radius: f64,
    /// Uniform queries drawn afresh each step and labelled from the record's
    /// surface cloud, on top of the stored samples.
    pub fresh_uniform: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            pretrain_epochs: 2000,
            epochs: 1000,
            sdf_batch: 4096,
            surface_batch: 2048,
            lr_net: 1e-4,
            lr_code: 1e-3,
            lr_final_ratio: 0.01,
            freeze_object: true,
            anchor_weight: 1.0,
            anchor_contact_radius: 0.01,
            fresh_uniform: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sdf_batch == 0 || self.surface_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        let rates = [self.lr_net, self.lr_code];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_final_ratio) {
            return Err(Error::Config("lr_final_ratio must lie in [0, 1]".into()));
        }
        if !(self.anchor_weight >= 0.0 && self.anchor_contact_radius > 0.0) {
            return Err(Error::Config("anchor settings must be non-negative".into()));
        }
        Ok(())
    }

    fn lr_for(&self, group: Group) -> f64 {
        match group {
            Group::ObjectCodes => self.lr_code,
            _ => self.lr_net,
        }
    }
}

/// Per-epoch loss summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub phase: String,
    pub epoch: usize,
    pub loss: f64,
    pub lr_scale: f64,
    pub parts: BTreeMap<String, f64>,
}

/// Model plus optimizer and history.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: FieldModel,
    pub optimizer: Adam,
    pub epoch: usize,
    pub log: Vec<LogEntry>,
    pub seed: u64,
}

/// Scalar loss with named components.
pub struct Objective {
    pub total: Var,
    pub parts: Vec<(&'static str, Var)>,
}

/// Pretraining objective for one object.
pub fn nominal_objective<T: Real>(
    model: &FieldModel,
    g: &mut Graph<T>,
    vars: &[Var],
    tool: usize,
    batch: &SdfSampleSet,
) -> Result<Objective> {
    let w = &model.weights;
    let alpha = g.gather_rows(vars[model.object_codes], &[tool]);
    let dec = model.decode_graph(g, vars, &model.psi_o, alpha);
    let terms = sdf_terms(g, &dec.layers, None, model.arch.omega0, batch, w.delta)?;
    let lsdf = sdf_loss(g, &terms, w.lambda_normal);
    let lat = latent_graph(g, alpha);
    let hyp = hyper_graph(g, &dec.outputs);
    let a = g.scale(lat, w.lambda2);
    let b = g.scale(hyp, w.lambda3);
    let total = g.add(lsdf, a);
    let total = g.add(total, b);
    let mut parts = vec![("sdf", lsdf), ("latent", lat), ("hyper", hyp)];
    if let Some(n) = terms.normal {
        parts.push(("normal", n));
    }
    Ok(Objective { total, parts })
}

/// One deformation (or zero-load anchor) prepared for training.
#[derive(Clone, Debug)]
pub struct TrainRecord {
    pub key: String,
    /// Object index in the model.
    pub tool: usize,
    pub deformed: PointCloud,
    pub nominal: PointCloud,
    pub sdf: SdfSampleSet,
    pub obs: ContactObservation,
    pub anchor: bool,
}

/// Random subsets used by one deformation step.
pub struct DeformBatch {
    pub sdf: SdfSampleSet,
    pub surface: Vec<Vec3>,
    pub target: NearestNeighbors,
}

impl DeformBatch {
    pub fn draw(rec: &TrainRecord, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let pick = |cloud: &PointCloud, rng: &mut ChaCha8Rng| -> Vec<Vec3> {
            if cloud.len() <= cfg.surface_batch {
                return cloud.points.clone();
            }
            rand::seq::index::sample(rng, cloud.len(), cfg.surface_batch)
                .into_iter()
                .map(|i| cloud.points[i])
                .collect()
        };
        let surface = pick(&rec.deformed, rng);
        let target = pick(&rec.nominal, rng);
        DeformBatch {
            sdf: rec.sdf.subsample(cfg.sdf_batch, rng),
            surface,
            target: NearestNeighbors::new(&target),
        }
    }
}

/// Deformation-phase objective for one record; the force code always comes
/// from the encoder.
pub fn deformed_objective<T: Real>(
    model: &FieldModel,
    g: &mut Graph<T>,
    vars: &[Var],
    rec: &TrainRecord,
    batch: &DeformBatch,
    anchor_weight: f64,
) -> Result<Objective> {
    let w = &model.weights;
    let omega0 = model.arch.omega0;
    let alpha = g.gather_rows(vars[model.object_codes], &[rec.tool]);
    let (_, z) = model.encode_graph(g, vars, &rec.obs)?;
    let dec_o = model.decode_graph(g, vars, &model.psi_o, alpha);
    let code = model.deformation_code(g, z, alpha);
    let dec_d = model.decode_graph(g, vars, &model.psi_d, code);

    let (mut fc, mean_d) = correction_graph(g, &dec_d.layers, omega0, &batch.surface, &batch.target, w.lambda_c);
    if rec.anchor && anchor_weight > 0.0 {
        let extra = g.scale(mean_d, anchor_weight);
        fc = g.add(fc, extra);
    }
    let terms = sdf_terms(g, &dec_o.layers, Some(&dec_d.layers), omega0, &batch.sdf, w.delta)?;
    let lsdf = sdf_loss(g, &terms, w.lambda_normal);
    let ho = hyper_graph(g, &dec_o.outputs);
    let hd = hyper_graph(g, &dec_d.outputs);
    let hd = g.scale(hd, w.hyper_d_weight);
    let hyp = g.add(ho, hd);
    let lat = latent_graph(g, z);

    let a = g.scale(lsdf, w.lambda1);
    let b = g.scale(hyp, w.lambda3);
    let c = g.scale(lat, w.lambda4);
    let total = g.add(fc, a);
    let total = g.add(total, b);
    let total = g.add(total, c);
    Ok(Objective {
        total,
        parts: vec![("correction", fc), ("mean_d", mean_d), ("sdf", lsdf), ("hyper", hyp), ("latent", lat)],
    })
}

/// Key of a deformation record in the force-code table.
pub fn record_key(tool_id: &str, condition: usize) -> String {
    format!("{tool_id}/def_{condition}")
}

/// Key of a tool's zero-load anchor.
pub fn anchor_key(tool_id: &str) -> String {
    format!("{tool_id}/zero")
}

/// Zero-load contact at the blade tip of a dataset tool.
pub fn anchor_observation(dataset: &Dataset, tool: usize, contact_radius: f64) -> Result<ContactObservation> {
    let t = &dataset.tools[tool];
    let tip = tip_point(&t.spec, &t.transform, &t.nominal);
    let idx: Vec<usize> = (0..t.nominal.len())
        .filter(|&i| vec3::norm(vec3::sub(t.transform.invert(t.nominal.points[i]), tip)) <= contact_radius)
        .collect();
    ContactObservation::from_indices(&t.nominal, idx, [0.0; 3])
}

/// Deformation records of the dataset plus one zero-load anchor per tool.
pub fn deformation_records(dataset: &Dataset, model: &FieldModel, cfg: &TrainConfig) -> Result<Vec<TrainRecord>> {
    let mut out = Vec::new();
    for (ti, t) in dataset.tools.iter().enumerate() {
        let tool = model
            .tool_index(&t.id)
            .map_err(|_| Error::InvalidDataset(format!("tool {} was not pretrained", t.id)))?;
        if t.nominal.is_empty() {
            return Err(Error::InvalidDataset(format!("tool {} has no nominal cloud", t.id)));
        }
        out.push(TrainRecord {
            key: anchor_key(&t.id),
            tool,
            deformed: t.nominal.clone(),
            nominal: t.nominal.clone(),
            sdf: t.sdf.clone(),
            obs: anchor_observation(dataset, ti, cfg.anchor_contact_radius)?,
            anchor: true,
        });
        for d in dataset.deformations_of(ti) {
            out.push(TrainRecord {
                key: record_key(&t.id, d.condition),
                tool,
                deformed: d.deformed.clone(),
                nominal: t.nominal.clone(),
                sdf: d.sdf.clone(),
                obs: d.contacts.clone(),
                anchor: false,
            });
        }
    }
    Ok(out)
}

/// Oriented surface used to label fresh uniform queries.
struct Labeller {
    nn: NearestNeighbors,
    normals: Vec<Vec3>,
}

impl Labeller {
    fn all<'a>(clouds: impl Iterator<Item = &'a PointCloud>, n: usize) -> Result<Vec<Labeller>> {
        if n == 0 {
            return Ok(vec![]);
        }
        clouds
            .map(|c| {
                let normals = c
                    .normals
                    .clone()
                    .ok_or_else(|| Error::InvalidDataset("fresh uniform samples need surface normals".into()))?;
                Ok(Labeller {
                    nn: NearestNeighbors::new(&c.points),
                    normals,
                })
            })
            .collect()
    }

    fn augment(labellers: &[Labeller], r: usize, batch: &mut SdfSampleSet, n: usize, rng: &mut ChaCha8Rng) {
        if let Some(l) = labellers.get(r) {
            batch.extend(uniform_sdf_samples(&l.nn, &l.normals, n, rng));
        }
    }
}

fn cosine(step: usize, total: usize, final_ratio: f64) -> f64 {
    let t = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
    final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

struct Phase<'a> {
    name: &'static str,
    epochs: usize,
    n_records: usize,
    cfg: &'a TrainConfig,
    trainable: &'a dyn Fn(Group) -> bool,
}

fn run_phase(
    model: &mut FieldModel,
    adam: &mut Adam,
    phase: Phase<'_>,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<LogEntry>,
    mut step: impl FnMut(&FieldModel, &mut Graph<f32>, &[Var], usize, &mut ChaCha8Rng) -> Result<Objective>,
    describe: impl Fn(usize) -> String,
) -> Result<()> {
    let total_steps = phase.epochs * phase.n_records;
    let lrs: Vec<f64> = model.groups.iter().map(|&g| phase.cfg.lr_for(g)).collect();
    let mut order: Vec<usize> = (0..phase.n_records).collect();
    let mut k = 0;
    for epoch in 0..phase.epochs {
        order.shuffle(rng);
        let scale = cosine(k, total_steps, phase.cfg.lr_final_ratio);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for &r in &order {
            let s = cosine(k, total_steps, phase.cfg.lr_final_ratio);
            k += 1;
            let mut g = Graph::<f32>::new();
            let vars = model.bind(&mut g, &model.params, phase.trainable);
            let obj = step(model, &mut g, &vars, r, rng)?;
            let loss = g.value(obj.total).scalar() as f64;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} epoch {epoch}: loss became {loss} on {}",
                    phase.name,
                    describe(r)
                )));
            }
            loss_sum += loss;
            for (name, v) in &obj.parts {
                *sums.entry((*name).to_string()).or_default() += g.value(*v).scalar() as f64;
            }
            let mut grads = g.backward(obj.total);
            let grads: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
            if grads.iter().flatten().any(|m| m.data.iter().any(|x| !x.is_finite())) {
                return Err(Error::Numerical(format!(
                    "{} epoch {epoch}: non-finite gradient on {}",
                    phase.name,
                    describe(r)
                )));
            }
            let step_lrs: Vec<f64> = lrs.iter().map(|l| l * s).collect();
            adam.step(&mut model.params, &grads, &step_lrs);
        }
        let n = phase.n_records.max(1) as f64;
        let entry = LogEntry {
            phase: phase.name.into(),
            epoch,
            loss: loss_sum / n,
            lr_scale: scale,
            parts: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        };
        log::debug!("{} epoch {} loss {:.6}", entry.phase, entry.epoch, entry.loss);
        log.push(entry);
    }
    Ok(())
}

/// Fits `Ψ_o` and one object code per tool to the nominal SDF samples, then
/// marks the model pretrained.
pub fn pretrain_nominal(
    dataset: &Dataset,
    arch: &ArchConfig,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    if dataset.tools.is_empty() {
        return Err(Error::InvalidDataset("dataset has no nominal records".into()));
    }
    let ids: Vec<String> = dataset.tools.iter().map(|t| t.id.clone()).collect();
    let mut model = FieldModel::new(arch, weights, &ids, cfg.seed)?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 1]));
    let mut log = Vec::new();
    let trainable = |g: Group| matches!(g, Group::PsiO | Group::ObjectCodes);
    let labellers = Labeller::all(dataset.tools.iter().map(|t| &t.nominal), cfg.fresh_uniform)?;
    let phase = Phase {
        name: "pretrain",
        epochs: cfg.pretrain_epochs,
        n_records: dataset.tools.len(),
        cfg,
        trainable: &trainable,
    };
    run_phase(
        &mut model,
        &mut adam,
        phase,
        &mut rng,
        &mut log,
        |m, g, vars, r, rng| {
            let mut batch = dataset.tools[r].sdf.subsample(cfg.sdf_batch, rng);
            Labeller::augment(&labellers, r, &mut batch, cfg.fresh_uniform, rng);
            nominal_objective(m, g, vars, r, &batch)
        },
        |r| dataset.tools[r].id.clone(),
    )?;
    model.stage = Stage::Pretrained;
    Ok(TrainState {
        model,
        optimizer: adam,
        epoch: cfg.pretrain_epochs,
        log,
        seed: cfg.seed,
    })
}

/// Trains `Ψ_d` and the force encoder on every deformation plus one zero-load
/// anchor per tool, then caches each record's force code in the model.
pub fn train_deformed(state: TrainState, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    state.model.require_stage(Stage::Pretrained)?;
    let TrainState {
        mut model,
        epoch,
        mut log,
        seed,
        ..
    } = state;
    let records = deformation_records(dataset, &model, cfg)?;
    let labellers = Labeller::all(records.iter().map(|r| &r.deformed), cfg.fresh_uniform)?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2]));
    let freeze = cfg.freeze_object;
    let trainable = move |g: Group| match g {
        Group::PsiD | Group::Encoder => true,
        Group::PsiO | Group::ObjectCodes => !freeze,
    };
    let phase = Phase {
        name: "deform",
        epochs: cfg.epochs,
        n_records: records.len(),
        cfg,
        trainable: &trainable,
    };
    run_phase(
        &mut model,
        &mut adam,
        phase,
        &mut rng,
        &mut log,
        |m, g, vars, r, rng| {
            let mut batch = DeformBatch::draw(&records[r], cfg, rng);
            Labeller::augment(&labellers, r, &mut batch.sdf, cfg.fresh_uniform, rng);
            deformed_objective(m, g, vars, &records[r], &batch, cfg.anchor_weight)
        },
        |r| records[r].key.clone(),
    )?;
    cache_force_codes(&mut model, &records)?;
    model.stage = Stage::Trained;
    Ok(TrainState {
        model,
        optimizer: adam,
        epoch: epoch + cfg.epochs,
        log,
        seed,
    })
}

/// Stores the encoder's code for every record in the model table.
pub fn cache_force_codes(model: &mut FieldModel, records: &[TrainRecord]) -> Result<()> {
    let m = model.arch.force_code_dim;
    let mut data = Vec::with_capacity(records.len() * m);
    for r in records {
        data.extend(model.encode_force(&r.obs)?.1);
    }
    model.force_codes = crate::autodiff::Mat::from_vec(records.len(), m, data);
    model.force_keys = records.iter().map(|r| r.key.clone()).collect();
    Ok(())
}

/// Writes the log as one JSON object per line.
pub fn write_log(path: &std::path::Path, log: &[LogEntry]) -> Result<()> {
    let mut text = String::new();
    for e in log {
        text.push_str(&serde_json::to_string(e).map_err(|err| Error::json(path, err))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

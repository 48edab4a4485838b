use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use deformsdf::config::{Config, Target};
use deformsdf::datagen::{generate_dataset, mix_seed, tip_point, Dataset, DatasetConfig, DeformationRecord, ToolRecord};
use deformsdf::fieldnet::{load_checkpoint, save_checkpoint, FieldModel, Provenance};
use deformsdf::geometry::io::{write_cloud_ply, write_obj, write_ply};
use deformsdf::geometry::{vec3, PointCloud, Vec3};
use deformsdf::inference::{
    infer_deformation, interpolate_codes, partial_view, reconstruct_from_code, PartialObservation,
};
use deformsdf::metrics::{dataset_items, eval_model};
use deformsdf::reconstruct::{
    correspondences, deformed_positions, export_cross_section, marching_cubes, reconstruct_cloud,
};
use deformsdf::training::{chamfer, pretrain_nominal, train_deformed, write_log, Adam, TrainState};
use deformsdf::{Error, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::Command;

/// Salt separating the held-out dataset seed from the training one.
const TEST_SALT: u64 = 0x7e57;

struct Ctx<'a> {
    cfg: &'a Config,
    root: &'a Path,
    version: &'a str,
    sha: String,
    outputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    fn results(&self, sub: &str) -> Result<PathBuf> {
        let dir = self.path(&self.cfg.paths.results).join(sub);
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(dir)
    }

    fn provenance(&self, epochs: usize) -> Provenance {
        Provenance {
            seed: self.cfg.train.seed,
            version: self.version.to_string(),
            config_sha256: self.sha.clone(),
            epochs,
        }
    }

    fn emit(&mut self, p: PathBuf) {
        log::info!("wrote {}", p.display());
        self.outputs.push(p);
    }

    fn write_json(&mut self, path: PathBuf, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("results serialize");
        fs::write(&path, text + "\n").map_err(|e| io(&path, e))?;
        self.emit(path);
        Ok(())
    }

    fn dataset(&self, held_out: bool) -> Result<Dataset> {
        let p = if held_out { &self.cfg.paths.test_data } else { &self.cfg.paths.data };
        Dataset::load(self.path(p))
    }

    fn model(&self, pretrained: bool) -> Result<FieldModel> {
        let p = if pretrained { &self.cfg.paths.pretrained } else { &self.cfg.paths.checkpoint };
        Ok(load_checkpoint(&self.path(p))?.0)
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn config_sha256(cfg: &Config) -> String {
    let digest = Sha256::digest(cfg.to_canonical_json().as_bytes());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn run(command: Command, cfg: &Config, root: &Path, version: &str) -> Result<()> {
    let started = unix_now();
    let mut ctx = Ctx {
        cfg,
        root,
        version,
        sha: config_sha256(cfg),
        outputs: vec![],
    };
    match command {
        Command::GenData => gen_data(&mut ctx)?,
        Command::Pretrain => pretrain(&mut ctx)?,
        Command::Train => train(&mut ctx)?,
        Command::Infer => infer(&mut ctx)?,
        Command::Recon => recon(&mut ctx)?,
        Command::Interp => interp(&mut ctx)?,
        Command::Xsection => xsection(&mut ctx)?,
        Command::Correspond => correspond(&mut ctx)?,
        Command::Eval => eval(&mut ctx)?,
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(cfg).expect("config serializes"));
            return Ok(());
        }
    }
    let manifest = json!({
        "command": command.name(),
        "version": version,
        "config_sha256": ctx.sha,
        "seed": cfg.seed,
        "train_seed": cfg.train.seed,
        "started_unix": started,
        "finished_unix": unix_now(),
        "outputs": ctx.outputs,
        "config": cfg,
    });
    let dir = ctx.results("manifests")?;
    let path = dir.join(format!("{}.json", command.name()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io(&path, e))
}

fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let tools = cfg.tools()?;
    let data = ctx.path(&cfg.paths.data);
    let m = generate_dataset(&tools, &cfg.dataset, cfg.seed, &data)?;
    log::info!(
        "{} records ({} tools) in {}",
        m.records.len(),
        m.tools.len(),
        data.display()
    );
    ctx.emit(data);
    if cfg.test_conditions > 0 {
        let test_cfg = DatasetConfig {
            n_conditions: cfg.test_conditions,
            ..cfg.dataset.clone()
        };
        let test = ctx.path(&cfg.paths.test_data);
        generate_dataset(&tools, &test_cfg, mix_seed(&[cfg.seed, TEST_SALT]), &test)?;
        ctx.emit(test);
    }
    Ok(())
}

fn pretrain(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = ctx.dataset(false)?;
    let st = pretrain_nominal(&ds, &cfg.arch, &cfg.weights, &cfg.train)?;
    let ckpt = ctx.path(&cfg.paths.pretrained);
    save_checkpoint(&ckpt, &st.model, &ctx.provenance(st.epoch))?;
    ctx.emit(ckpt);
    let log_path = ctx.results("logs")?.join("pretrain.jsonl");
    write_log(&log_path, &st.log)?;
    ctx.emit(log_path);
    Ok(())
}

fn train(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = ctx.dataset(false)?;
    let mut model = ctx.model(true)?;
    if model.arch != cfg.arch {
        log::warn!("architecture differs from the config; using the checkpoint's");
    }
    model.weights = cfg.weights.clone();
    let state = TrainState {
        optimizer: Adam::new(&model.params),
        model,
        epoch: cfg.train.pretrain_epochs,
        log: vec![],
        seed: cfg.train.seed,
    };
    let st = train_deformed(state, &ds, &cfg.train)?;
    let ckpt = ctx.path(&cfg.paths.checkpoint);
    save_checkpoint(&ckpt, &st.model, &ctx.provenance(st.epoch))?;
    ctx.emit(ckpt);
    let log_path = ctx.results("logs")?.join("train.jsonl");
    write_log(&log_path, &st.log)?;
    ctx.emit(log_path);
    Ok(())
}

fn tool_of<'d>(ds: &'d Dataset, id: &str) -> Result<(usize, &'d ToolRecord)> {
    ds.tools
        .iter()
        .enumerate()
        .find(|(_, t)| t.id == id)
        .ok_or_else(|| Error::Config(format!("tool {id:?} is not in the dataset")))
}

fn record_of<'d>(ds: &'d Dataset, target: &Target) -> Result<(&'d ToolRecord, &'d DeformationRecord)> {
    let (ti, tool) = tool_of(ds, &target.tool)?;
    let k = target
        .record
        .as_deref()
        .and_then(|r| r.strip_prefix("def_"))
        .and_then(|k| k.parse::<usize>().ok())
        .ok_or_else(|| Error::Config(format!("record {:?} is not of the form def_<k>", target.record)))?;
    let rec = ds
        .deformations_of(ti)
        .find(|d| d.condition == k)
        .ok_or_else(|| Error::Config(format!("{}/def_{k} is not in the dataset", target.tool)))?;
    Ok((tool, rec))
}

fn alpha_of(model: &FieldModel, tool: &str) -> Result<Vec<f32>> {
    Ok(model.object_code(model.tool_index(tool)?))
}

/// Cached force code of `<tool>/<record>`; `None` selects the nominal shape.
fn code_of(model: &FieldModel, tool: &str, record: Option<&str>) -> Result<Option<Vec<f32>>> {
    record.map(|r| model.force_code(&format!("{tool}/{r}"))).transpose()
}

fn required_code(model: &FieldModel, tool: &str, record: Option<&str>, field: &str) -> Result<Vec<f32>> {
    code_of(model, tool, record)?.ok_or_else(|| Error::Config(format!("{field} must name a force code")))
}

fn label(target: &Target) -> String {
    format!("{}_{}", target.tool, target.record.as_deref().unwrap_or("nominal"))
}

fn infer(ctx: &mut Ctx) -> Result<()> {
    let task = &ctx.cfg.infer;
    let model = ctx.model(false)?;
    let ds = ctx.dataset(task.held_out)?;
    let (tool, rec) = record_of(&ds, &task.target)?;
    let visible = if task.full_view {
        rec.deformed.clone()
    } else {
        partial_view(tool, &rec.deformed, &task.view)?.0
    };
    let alpha = alpha_of(&model, &tool.id)?;
    let obs = PartialObservation {
        visible_points: visible.clone(),
        known_u: task.known_force.then_some(rec.contacts.u),
        alpha: alpha.clone(),
        camera: Some(task.view.camera),
    };
    let result = infer_deformation(&model, &obs, &task.optimizer, ctx.cfg.seed)?;
    let dir = ctx.results("infer")?;

    let obs_path = dir.join("observation.ply");
    write_cloud_ply(&obs_path, &visible, None)?;
    ctx.emit(obs_path);
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in result.loss_trajectory.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    let traj = dir.join("trajectory.csv");
    fs::write(&traj, csv).map_err(|e| io(&traj, e))?;
    ctx.emit(traj);

    let opt = &task.optimizer;
    let mut cd = json!(null);
    if let Some(cloud) = &result.reconstructed_cloud {
        let p = dir.join("reconstruction.ply");
        write_cloud_ply(&p, cloud, None)?;
        ctx.emit(p);
        let initial = reconstruct_cloud(
            &model,
            &alpha,
            Some(&result.initial_z),
            opt.recon_resolution,
            opt.recon_points,
            ctx.cfg.seed,
        )
        .ok();
        cd = json!({
            "initial": initial.map(|c| chamfer(&c.points, &rec.deformed.points)).transpose()?,
            "final": chamfer(&cloud.points, &rec.deformed.points)?,
        });
    }
    let summary = json!({
        "target": label(&task.target),
        "visible_points": visible.len(),
        "chamfer_to_ground_truth": cd,
        "result": result,
    });
    ctx.write_json(dir.join("result.json"), &summary)
}

fn recon(ctx: &mut Ctx) -> Result<()> {
    let task = &ctx.cfg.recon;
    let nominal_only = task.target.record.is_none() && !ctx.path(&ctx.cfg.paths.checkpoint).exists();
    let model = ctx.model(nominal_only)?;
    let alpha = alpha_of(&model, &task.target.tool)?;
    let z = code_of(&model, &task.target.tool, task.target.record.as_deref())?;
    let mesh = marching_cubes(&model, &alpha, z.as_deref(), task.resolution)?;
    let dir = ctx.results("recon")?;
    let name = label(&task.target);
    let obj = dir.join(format!("{name}.obj"));
    write_obj(&obj, &mesh)?;
    ctx.emit(obj);
    let ply = dir.join(format!("{name}.ply"));
    write_ply(&ply, &mesh, None)?;
    ctx.emit(ply);
    log::info!("{} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    Ok(())
}

fn tip_of(tool: &ToolRecord) -> Vec3 {
    tool.transform.apply(tip_point(&tool.spec, &tool.transform, &tool.nominal))
}

fn interp(ctx: &mut Ctx) -> Result<()> {
    let task = &ctx.cfg.interp;
    let model = ctx.model(false)?;
    let ds = ctx.dataset(false)?;
    let (_, tool) = tool_of(&ds, &task.tool)?;
    let alpha = alpha_of(&model, &tool.id)?;
    let z_l = required_code(&model, &tool.id, Some(&task.from), "interp.from")?;
    let z_r = required_code(&model, &tool.id, Some(&task.to), "interp.to")?;
    let codes = interpolate_codes(&z_l, &z_r, &task.ts)?;
    let tip = tip_of(tool);
    let dir = ctx.results("interp")?;
    let mut rows = Vec::new();
    for (i, (t, z)) in task.ts.iter().zip(&codes).enumerate() {
        let mesh = reconstruct_from_code(&model, &alpha, z, task.resolution)?;
        let obj = dir.join(format!("interp_{i:02}.obj"));
        write_obj(&obj, &mesh)?;
        ctx.emit(obj);
        let (q, residual) = deformed_positions(&model, &alpha, z, &[tip], &ctx.cfg.correspond.solver)?;
        rows.push(json!({
            "t": t,
            "vertices": mesh.vertices.len(),
            "faces": mesh.faces.len(),
            "tip": q[0],
            "tip_deflection": vec3::norm(vec3::sub(q[0], tip)),
            "tip_residual": residual[0],
            "z": z,
        }));
    }
    ctx.write_json(dir.join("interp.json"), &rows)
}

fn xsection(ctx: &mut Ctx) -> Result<()> {
    let task = &ctx.cfg.xsection;
    let model = ctx.model(false)?;
    let alpha = alpha_of(&model, &task.target.tool)?;
    let z = required_code(&model, &task.target.tool, task.target.record.as_deref(), "xsection.target.record")?;
    let cs = export_cross_section(&model, &alpha, &z, task.plane, task.resolution)?;
    let dir = ctx.results("xsection")?;
    cs.write(&dir)?;
    ctx.emit(dir);
    Ok(())
}

fn correspond(ctx: &mut Ctx) -> Result<()> {
    let task = &ctx.cfg.correspond;
    let model = ctx.model(false)?;
    let ds = ctx.dataset(false)?;
    let (_, tool) = tool_of(&ds, &task.tool)?;
    let alpha = alpha_of(&model, &tool.id)?;
    let z_a = required_code(&model, &tool.id, Some(&task.from), "correspond.from")?;
    let z_b = required_code(&model, &tool.id, Some(&task.to), "correspond.to")?;
    let (marked, _) = deformed_positions(&model, &alpha, &z_a, &tool.nominal.points, &task.solver)?;
    let marked = PointCloud::new(marked)?;
    let pairs = correspondences(&model, &alpha, &z_a, &z_b, &marked, &task.solver)?;

    let mut csv = String::from("sx,sy,sz,tx,ty,tz,dx,dy,dz,residual,converged\n");
    for c in &pairs {
        let [s, t, d] = [c.source, c.target, c.delta];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s[0], s[1], s[2], t[0], t[1], t[2], d[0], d[1], d[2], c.residual, c.converged
        );
    }
    let dir = ctx.results("correspond")?;
    let path = dir.join(format!("{}_{}_{}.csv", tool.id, task.from, task.to));
    fs::write(&path, csv).map_err(|e| io(&path, e))?;
    ctx.emit(path);
    let norms: Vec<f64> = pairs.iter().map(|c| vec3::norm(c.delta)).collect();
    let summary = json!({
        "points": pairs.len(),
        "converged": pairs.iter().filter(|c| c.converged).count(),
        "mean_delta": norms.iter().sum::<f64>() / norms.len().max(1) as f64,
        "max_delta": norms.iter().copied().fold(0.0, f64::max),
    });
    ctx.write_json(dir.join(format!("{}_{}_{}.json", tool.id, task.from, task.to)), &summary)
}

fn eval(ctx: &mut Ctx) -> Result<()> {
    let model = ctx.model(false)?;
    let train = ctx.dataset(false)?;
    let test_root = ctx.path(&ctx.cfg.paths.test_data);
    let test = if test_root.join(deformsdf::datagen::MANIFEST_FILE).exists() {
        Some(Dataset::load(&test_root)?)
    } else {
        log::warn!("no held-out dataset at {}", test_root.display());
        None
    };
    let items = dataset_items(&model, &train, test.as_ref())?;
    let table = eval_model(&model, &items, &ctx.cfg.eval)?;
    let text = table.to_text();
    println!("{text}");
    let dir = ctx.results("eval")?;
    let txt = dir.join("metrics.txt");
    fs::write(&txt, &text).map_err(|e| io(&txt, e))?;
    ctx.emit(txt);
    ctx.write_json(dir.join("metrics.json"), &table)
}

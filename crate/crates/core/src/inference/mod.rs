//! Latent recovery from partial observations and force-code interpolation.

mod view;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use view::{partial_view, ViewConfig};

use crate::autodiff::{Graph, Mat, Var};
use crate::datagen::mix_seed;
use crate::fieldnet::{gaussian_vec, FieldModel, Stage};
use crate::geometry::{subsample, vec3, PointCloud, TriangleMesh, Vec3};
use crate::reconstruct::{marching_cubes, reconstruct_cloud};
use crate::training::losses::infer_graph;
use crate::training::Adam;
use crate::{Error, Result};

/// Visible surface points of a deformed known object.
#[derive(Clone, Debug)]
pub struct PartialObservation {
    pub visible_points: PointCloud,
    /// Reaction force in Newtons, held fixed when given.
    pub known_u: Option<Vec3>,
    pub alpha: Vec<f32>,
    /// Camera centre used for free-space ray samples.
    pub camera: Option<Vec3>,
}

impl PartialObservation {
    pub fn validate(&self, model: &FieldModel) -> Result<()> {
        if self.visible_points.is_empty() {
            return Err(Error::InvalidInput("no visible points".into()));
        }
        if !(0..model.n_objects()).any(|i| model.object_code(i) == self.alpha) {
            return Err(Error::InvalidInput("object code is not in the model table".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub iters: usize,
    pub lr: f64,
    pub restarts: usize,
    pub init_std: f64,
    /// Visible points used by the objective; larger views are subsampled.
    pub max_points: usize,
    /// Step-halvings tried before an iteration is recorded without progress.
    pub max_backtracks: usize,
    /// Adds a free-space penalty at samples between the camera and the surface.
    pub ray_augmentation: bool,
    pub ray_offsets: Vec<f64>,
    /// Grid resolution of the returned reconstruction; 0 skips it.
    pub recon_resolution: usize,
    pub recon_points: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            iters: 300,
            lr: 1e-3,
            restarts: 3,
            init_std: 0.01,
            max_points: 2048,
            max_backtracks: 8,
            ray_augmentation: false,
            ray_offsets: vec![0.03, 0.06],
            recon_resolution: 64,
            recon_points: 5600,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.restarts == 0 || self.max_points == 0 {
            return Err(Error::Config("inference needs lr > 0, restarts >= 1 and max_points >= 1".into()));
        }
        if !(self.init_std >= 0.0) || self.ray_offsets.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("init_std must be >= 0 and ray offsets > 0".into()));
        }
        if self.recon_resolution == 1 {
            return Err(Error::Config("recon_resolution must be 0 or at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InferenceResult {
    pub contact_feature: Vec<f32>,
    /// Reaction force used in the fusion input (N); estimated when unknown.
    pub u: Vec3,
    pub z: Vec<f32>,
    /// Objective before the first step followed by one value per iteration.
    pub loss_trajectory: Vec<f64>,
    pub initial_feature: Vec<f32>,
    pub initial_z: Vec<f32>,
    /// Index of the restart that was kept.
    pub restart: usize,
    /// Set when the objective became non-finite; the best iterate is returned.
    pub diverged: bool,
    /// Absent when disabled or when no surface could be extracted.
    #[serde(skip)]
    pub reconstructed_cloud: Option<PointCloud>,
}

/// Objective over the free latent slots with every network weight frozen,
/// evaluated in `f64`.
struct Problem<'a> {
    model: &'a FieldModel,
    params: Vec<Mat<f64>>,
    object: Vec<(Mat<f64>, Mat<f64>)>,
    alpha: Mat<f64>,
    points: Vec<Vec3>,
    rays: Vec<Vec3>,
    u_fixed: Option<Vec3>,
}

fn widen(m: &Mat<f32>) -> Mat<f64> {
    let (r, c) = m.shape();
    Mat::from_f32(r, c, &m.data)
}

impl Problem<'_> {
    /// Loss and gradients for `[feature, u_scaled?]`.
    fn eval(&self, slots: &[Mat<f64>]) -> (f64, Vec<Option<Mat<f64>>>) {
        let m = self.model;
        let mut g = Graph::<f64>::new();
        let vars = m.bind(&mut g, &self.params, |_| false);
        let f = g.variable(slots[0].clone());
        let u = match self.u_fixed {
            Some(u) => g.constant(Mat::from_rows3(&[m.scaled_force(u)])),
            None => g.variable(slots[1].clone()),
        };
        let z = m.fuse_graph(&mut g, &vars, f, u);
        let a = g.constant(self.alpha.clone());
        let code = m.deformation_code(&mut g, z, a);
        let d = m.decode_graph(&mut g, &vars, &m.psi_d, code);
        let o: Vec<(Var, Var)> = self
            .object
            .iter()
            .map(|(w, b)| (g.constant(w.clone()), g.constant(b.clone())))
            .collect();
        let delta = m.weights.delta;
        let mut loss = infer_graph(&mut g, &o, &d.layers, m.arch.omega0, &self.points, delta);
        if !self.rays.is_empty() {
            let x = g.constant(Mat::from_rows3(&self.rays));
            let (y, _, _) = crate::training::losses::warp_graph(&mut g, &d.layers, m.arch.omega0, x, false);
            let (s, _) = crate::fieldnet::siren_graph(&mut g, &o, m.arch.omega0, y, None);
            let s = g.clamp(s, delta);
            let neg = g.scale(s, -1.0);
            let hinge = g.relu(neg);
            let free = g.mean(hinge);
            loss = g.add(loss, free);
        }
        let value = g.value(loss).scalar();
        let mut grads = g.backward(loss);
        let mut out = vec![grads.take(f)];
        if self.u_fixed.is_none() {
            out.push(grads.take(u));
        }
        (value, out)
    }
}

/// Recovers the contact feature (and the force when unknown) of a partial
/// view by descending the surface objective through the frozen model.
pub fn infer_deformation(
    model: &FieldModel,
    obs: &PartialObservation,
    cfg: &InferConfig,
    seed: u64,
) -> Result<InferenceResult> {
    model.require_stage(Stage::Trained)?;
    cfg.validate()?;
    obs.validate(model)?;
    let points = if obs.visible_points.len() > cfg.max_points {
        subsample(&obs.visible_points, cfg.max_points, seed)?.points
    } else {
        obs.visible_points.points.clone()
    };
    let rays = match (cfg.ray_augmentation, obs.camera) {
        (true, Some(c)) => free_space_samples(&points, c, &cfg.ray_offsets),
        (true, None) => return Err(Error::InvalidInput("ray augmentation needs a camera".into())),
        _ => vec![],
    };
    let object = model.decode_object(&obs.alpha)?;
    let problem = Problem {
        model,
        params: model.params.iter().map(widen).collect(),
        object: object.layers.iter().map(|(w, b)| (widen(w), widen(b))).collect(),
        alpha: Mat::from_f32(1, obs.alpha.len(), &obs.alpha),
        points,
        rays,
        u_fixed: obs.known_u,
    };

    let mut best: Option<InferenceResult> = None;
    for restart in 0..cfg.restarts {
        let run = descend(&problem, cfg, mix_seed(&[seed, restart as u64]), restart)?;
        let better = match &best {
            None => true,
            Some(b) => run.loss_trajectory.last() < b.loss_trajectory.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    if cfg.recon_resolution >= 2 {
        best.reconstructed_cloud = match reconstruct_cloud(
            model,
            &obs.alpha,
            Some(&best.z),
            cfg.recon_resolution,
            cfg.recon_points,
            seed,
        ) {
            Ok(c) => Some(c),
            Err(Error::EmptySurface) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(best)
}

fn descend(problem: &Problem<'_>, cfg: &InferConfig, seed: u64, restart: usize) -> Result<InferenceResult> {
    let m = problem.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = m.arch.encoder_point[1];
    let mut slots = vec![Mat::from_f32(1, width, &gaussian_vec(&mut rng, width, cfg.init_std))];
    if problem.u_fixed.is_none() {
        slots.push(Mat::from_f32(1, 3, &gaussian_vec(&mut rng, 3, cfg.init_std)));
    }
    let initial = slots.clone();
    let (mut loss, mut grads) = problem.eval(&slots);
    if !loss.is_finite() {
        return Err(Error::Numerical("inference objective is not finite at the initial code".into()));
    }
    let mut trajectory = vec![loss];
    let mut adam = Adam::new(&slots);
    let mut lr = cfg.lr;
    let mut diverged = false;
    for _ in 0..cfg.iters {
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let mut trial = slots.clone();
            let mut trial_adam = adam.clone();
            let lrs = vec![lr; trial.len()];
            trial_adam.step(&mut trial, &grads, &lrs);
            let (l, g) = problem.eval(&trial);
            diverged |= !l.is_finite();
            if l < loss {
                adam = trial_adam;
                accepted = Some((trial, l, g));
                lr = (lr * 1.2).min(cfg.lr);
                break;
            }
            lr *= 0.5;
        }
        if accepted.is_none() {
            // momentum can point uphill near a minimum; fall back to the gradient
            accepted = steepest_step(problem, &slots, &grads, loss, cfg);
            lr = cfg.lr;
        }
        if let Some((s, l, g)) = accepted {
            slots = s;
            loss = l;
            grads = g;
        }
        trajectory.push(loss);
    }
    let u_of = |s: &[Mat<f64>]| match problem.u_fixed {
        Some(u) => u,
        None => {
            let k = m.arch.force_scale;
            std::array::from_fn(|c| s[1].data[c] / k)
        }
    };
    let feature = slots[0].to_f32();
    let initial_feature = initial[0].to_f32();
    let u = u_of(&slots);
    let initial_u = u_of(&initial);
    Ok(InferenceResult {
        z: m.fuse_feature(&feature, u)?,
        initial_z: m.fuse_feature(&initial_feature, initial_u)?,
        contact_feature: feature,
        u,
        loss_trajectory: trajectory,
        initial_feature,
        restart,
        diverged,
        reconstructed_cloud: None,
    })
}

type Iterate = (Vec<Mat<f64>>, f64, Vec<Option<Mat<f64>>>);

/// Backtracking step along the normalized negative gradient.
fn steepest_step(
    problem: &Problem<'_>,
    slots: &[Mat<f64>],
    grads: &[Option<Mat<f64>>],
    loss: f64,
    cfg: &InferConfig,
) -> Option<Iterate> {
    let norm = grads.iter().flatten().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    let mut step = cfg.lr / norm;
    for _ in 0..2 * (cfg.max_backtracks + 1) {
        let trial: Vec<Mat<f64>> = slots
            .iter()
            .zip(grads)
            .map(|(s, g)| match g {
                Some(g) => {
                    let mut t = s.clone();
                    t.data.iter_mut().zip(&g.data).for_each(|(x, d)| *x -= step * d);
                    t
                }
                None => s.clone(),
            })
            .collect();
        let (l, g) = problem.eval(&trial);
        if l < loss {
            return Some((trial, l, g));
        }
        step *= 0.5;
    }
    None
}

/// Samples along camera rays in front of each visible point.
pub fn free_space_samples(points: &[Vec3], camera: Vec3, offsets: &[f64]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(points.len() * offsets.len());
    for &p in points {
        if let Some(dir) = vec3::normalize(vec3::sub(camera, p)) {
            for &t in offsets {
                out.push(vec3::add(p, vec3::scale(dir, t)));
            }
        }
    }
    out
}

/// `(1 - t) z_l + t z_r` for every `t`; values outside `[0, 1]` extrapolate.
pub fn interpolate_codes(z_l: &[f32], z_r: &[f32], ts: &[f64]) -> Result<Vec<Vec<f32>>> {
    if z_l.len() != z_r.len() {
        return Err(Error::Shape(format!(
            "cannot interpolate codes of length {} and {}",
            z_l.len(),
            z_r.len()
        )));
    }
    Ok(ts
        .iter()
        .map(|&t| {
            z_l.iter()
                .zip(z_r)
                .map(|(&a, &b)| ((1.0 - t) * a as f64 + t * b as f64) as f32)
                .collect()
        })
        .collect())
}

/// Mesh of the deformed object for a given force code.
pub fn reconstruct_from_code(model: &FieldModel, alpha: &[f32], z: &[f32], resolution: usize) -> Result<TriangleMesh> {
    model.require_stage(Stage::Trained)?;
    marching_cubes(model, alpha, Some(z), resolution)
}

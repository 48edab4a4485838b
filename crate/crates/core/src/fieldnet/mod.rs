//! Learnable fields.
//!
//! The object module O and deformation module D are sinusoidal MLPs whose
//! weights are emitted by hypernetworks: `Ψ_o(α)` for O and `Ψ_d([z, α])` for
//! D. The force encoder maps a contact set Q through a shared per-point MLP,
//! max-pools it into a contact feature, appends the scaled reaction force and
//! fuses the result into the force code z.
//!
//! Every network is built from [`Graph`] operations so that training,
//! finite-difference validation (`f64`) and plain evaluation share one code
//! path.

mod checkpoint;
mod contact;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, Provenance};
pub use contact::{ContactFile, ContactObservation};

use crate::autodiff::{Graph, Mat, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::training::LossWeights;

/// Rows evaluated per graph in the evaluation path.
pub const EVAL_CHUNK: usize = 4096;

/// Network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Sinusoidal layers in O and D.
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Width of each hypernetwork head.
    pub hyper_hidden: usize,
    /// Object code dimension l.
    pub object_code_dim: usize,
    /// Force code dimension m.
    pub force_code_dim: usize,
    /// Frequency of the first sinusoidal layer.
    pub omega0: f64,
    /// Multiplier applied to reaction forces (N) before fusion.
    pub force_scale: f64,
    /// Per-point encoder widths.
    pub encoder_point: [usize; 2],
    pub encoder_fuse: usize,
    /// Scale of the code-dependent part of each hypernetwork head at init,
    /// relative to the target layer's init range.
    pub head_init: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden_layers: 5,
            hidden_width: 256,
            hyper_hidden: 256,
            object_code_dim: 8,
            force_code_dim: 32,
            omega0: 30.0,
            force_scale: 0.1,
            encoder_point: [64, 128],
            encoder_fuse: 64,
            head_init: 0.1,
        }
    }
}

impl ArchConfig {
    /// Small networks for single-machine runs.
    pub fn desk() -> Self {
        ArchConfig {
            hidden_layers: 3,
            hidden_width: 64,
            hyper_hidden: 64,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.hidden_layers,
            self.hidden_width,
            self.hyper_hidden,
            self.object_code_dim,
            self.force_code_dim,
            self.encoder_point[0],
            self.encoder_point[1],
            self.encoder_fuse,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        if !(self.omega0 > 0.0 && self.force_scale > 0.0 && self.head_init >= 0.0) {
            return Err(Error::Config("omega0 and force_scale must be positive".into()));
        }
        Ok(())
    }

    /// `(out, in)` of every layer of a field with `out_dim` outputs.
    pub fn target_shapes(&self, out_dim: usize) -> Vec<(usize, usize)> {
        let h = self.hidden_width;
        let mut s = vec![(h, 3)];
        s.extend((1..self.hidden_layers).map(|_| (h, h)));
        s.push((out_dim, h));
        s
    }
}

/// Parameter family, used to select what an optimizer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    PsiO,
    PsiD,
    Encoder,
    ObjectCodes,
}

/// Indices of a dense layer's tensors in the parameter list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
}

/// Hypernetwork: one two-layer head per target layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNet {
    pub heads: Vec<[Dense; 2]>,
    /// `(out, in)` of each target layer.
    pub shapes: Vec<(usize, usize)>,
}

impl HyperNet {
    /// Total length of the decoded parameter vector.
    pub fn target_len(&self) -> usize {
        self.shapes.iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceEncoder {
    pub point: [Dense; 2],
    pub fuse: [Dense; 2],
}

/// Training progress recorded in the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    Pretrained,
    Trained,
}

/// All parameters, code tables and hyperparameters of a model.
#[derive(Clone, Debug)]
pub struct FieldModel {
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub params: Vec<Mat<f32>>,
    pub names: Vec<String>,
    pub groups: Vec<Group>,
    pub psi_o: HyperNet,
    pub psi_d: HyperNet,
    pub encoder: ForceEncoder,
    /// Index of the `[N, l]` object code table in `params`.
    pub object_codes: usize,
    /// Tool identifiers, row-aligned with the object codes.
    pub tool_ids: Vec<String>,
    /// Cached force codes `[M, m]`, filled at the end of deformation training.
    pub force_codes: Mat<f32>,
    /// Record identifiers, row-aligned with `force_codes`.
    pub force_keys: Vec<String>,
    pub stage: Stage,
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<Mat<f32>>,
    names: Vec<String>,
    groups: Vec<Group>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, group: Group, m: Mat<f32>) -> usize {
        self.params.push(m);
        self.names.push(name);
        self.groups.push(group);
        self.params.len() - 1
    }

    fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Mat<f32> {
        if bound == 0.0 {
            return Mat::zeros(rows, cols);
        }
        let d = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| d.sample(self.rng) as f32).collect())
    }

    fn dense(&mut self, name: &str, group: Group, out: usize, inp: usize) -> Dense {
        let bound = (6.0 / inp as f64).sqrt() / 2.0;
        let w = self.uniform(out, inp, bound);
        let b = self.uniform(1, out, 1.0 / (inp as f64).sqrt());
        Dense {
            w: self.push(format!("{name}.w"), group, w),
            b: self.push(format!("{name}.b"), group, b),
        }
    }

    /// Head biases start at a sinusoidal-network init of the target layer so
    /// every code initially decodes to a well-conditioned network.
    fn hypernet(&mut self, name: &str, group: Group, code: usize, shapes: &[(usize, usize)], arch: &ArchConfig, zero_last: bool) -> HyperNet {
        let hh = arch.hyper_hidden;
        let mut heads = Vec::new();
        let last = shapes.len() - 1;
        for (j, &(o, i)) in shapes.iter().enumerate() {
            let l1 = self.dense(&format!("{name}.{j}.l1"), group, hh, code);
            let (w_bound, b_bound) = if j == 0 {
                (1.0 / i as f64, 1.0 / i as f64)
            } else if j == last {
                let r = (6.0 / i as f64).sqrt() / arch.omega0;
                if zero_last {
                    (r * 1e-2, 0.0)
                } else {
                    (r, 1.0 / (i as f64).sqrt() / arch.omega0)
                }
            } else {
                ((6.0 / i as f64).sqrt(), 1.0 / (i as f64).sqrt())
            };
            let mut bias = self.uniform(1, o * i, w_bound).data;
            bias.extend(self.uniform(1, o, b_bound).data);
            let w = self.uniform(o * i + o, hh, arch.head_init * w_bound.max(b_bound) / (hh as f64).sqrt());
            let l2 = Dense {
                w: self.push(format!("{name}.{j}.l2.w"), group, w),
                b: self.push(format!("{name}.{j}.l2.b"), group, Mat::from_vec(1, o * i + o, bias)),
            };
            heads.push([l1, l2]);
        }
        HyperNet {
            heads,
            shapes: shapes.to_vec(),
        }
    }
}

impl FieldModel {
    /// Fresh model for `tool_ids.len()` objects. Object codes are drawn from
    /// `N(0, 0.1^2)`.
    pub fn new(arch: &ArchConfig, weights: &LossWeights, tool_ids: &[String], seed: u64) -> Result<Self> {
        arch.validate()?;
        weights.validate()?;
        if tool_ids.is_empty() {
            return Err(Error::InvalidInput("a model needs at least one object".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            rng: &mut rng,
            params: Vec::new(),
            names: Vec::new(),
            groups: Vec::new(),
        };
        let (l, m) = (arch.object_code_dim, arch.force_code_dim);
        let psi_o = b.hypernet("psi_o", Group::PsiO, l, &arch.target_shapes(1), arch, false);
        let psi_d = b.hypernet("psi_d", Group::PsiD, m + l, &arch.target_shapes(3), arch, true);
        let [p0, p1] = arch.encoder_point;
        let encoder = ForceEncoder {
            point: [
                b.dense("encoder.point.0", Group::Encoder, p0, 3),
                b.dense("encoder.point.1", Group::Encoder, p1, p0),
            ],
            fuse: [
                b.dense("encoder.fuse.0", Group::Encoder, arch.encoder_fuse, p1 + 3),
                b.dense("encoder.fuse.1", Group::Encoder, m, arch.encoder_fuse),
            ],
        };
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let codes: Vec<f32> = (0..tool_ids.len() * l)
            .map(|_| normal.sample(b.rng) as f32)
            .collect();
        let object_codes = b.push(
            "object_codes".into(),
            Group::ObjectCodes,
            Mat::from_vec(tool_ids.len(), l, codes),
        );
        let Builder {
            params,
            names,
            groups,
            ..
        } = b;
        Ok(FieldModel {
            arch: arch.clone(),
            weights: weights.clone(),
            params,
            names,
            groups,
            psi_o,
            psi_d,
            encoder,
            object_codes,
            tool_ids: tool_ids.to_vec(),
            force_codes: Mat::zeros(0, m),
            force_keys: Vec::new(),
            stage: Stage::Initialized,
        })
    }

    pub fn n_objects(&self) -> usize {
        self.tool_ids.len()
    }

    pub fn tool_index(&self, id: &str) -> Result<usize> {
        self.tool_ids
            .iter()
            .position(|t| t == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown object {id}")))
    }

    pub fn object_code(&self, i: usize) -> Vec<f32> {
        self.params[self.object_codes].row(i).to_vec()
    }

    pub fn force_code(&self, key: &str) -> Result<Vec<f32>> {
        let i = self
            .force_keys
            .iter()
            .position(|k| k == key)
            .ok_or_else(|| Error::InvalidInput(format!("no cached force code {key}")))?;
        Ok(self.force_codes.row(i).to_vec())
    }

    pub fn require_stage(&self, stage: Stage) -> Result<()> {
        let rank = |s: Stage| s as u8;
        if rank(self.stage) < rank(stage) {
            return Err(Error::InvalidState(format!(
                "model is {:?}, operation needs {:?}",
                self.stage, stage
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Zeroes the head that emits D's output layer, making D the zero function.
    pub fn zero_deformation_output(&mut self) {
        let [_, l2] = *self.psi_d.heads.last().expect("at least one layer");
        for idx in [l2.w, l2.b] {
            self.params[idx].data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_dims(&self, alpha: &[f32], z: Option<&[f32]>) -> Result<()> {
        if alpha.len() != self.arch.object_code_dim {
            return Err(Error::Shape(format!(
                "object code has {} entries, model expects {}",
                alpha.len(),
                self.arch.object_code_dim
            )));
        }
        if let Some(z) = z {
            if z.len() != self.arch.force_code_dim {
                return Err(Error::Shape(format!(
                    "force code has {} entries, model expects {}",
                    z.len(),
                    self.arch.force_code_dim
                )));
            }
        }
        Ok(())
    }

    /// Places every parameter on the tape; `trainable` selects which receive gradients.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, values: &[Mat<T>], trainable: impl Fn(Group) -> bool) -> Vec<Var> {
        values
            .iter()
            .zip(&self.groups)
            .map(|(v, &grp)| {
                if trainable(grp) {
                    g.variable(v.clone())
                } else {
                    g.constant(v.clone())
                }
            })
            .collect()
    }

    pub fn param_values<T: Real>(&self) -> Vec<Mat<T>> {
        self.params
            .iter()
            .map(|p| Mat::from_f32(p.rows, p.cols, &p.data))
            .collect()
    }

    /// Decodes a hypernetwork for `code` (`[1, c]`).
    pub fn decode_graph<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], net: &HyperNet, code: Var) -> Decoded {
        let mut layers = Vec::with_capacity(net.heads.len());
        let mut outputs = Vec::with_capacity(net.heads.len());
        for (head, &(o, i)) in net.heads.iter().zip(&net.shapes) {
            let h = dense(g, vars, head[0], code);
            let h = g.relu(h);
            let out = dense(g, vars, head[1], h);
            let w = g.slice_cols(out, 0, o * i);
            let w = g.reshape(w, o, i);
            let b = g.slice_cols(out, o * i, o);
            layers.push((w, b));
            outputs.push(out);
        }
        Decoded { layers, outputs }
    }

    /// `[α, ...]` as the input of `Ψ_d`.
    pub fn deformation_code<T: Real>(&self, g: &mut Graph<T>, z: Var, alpha: Var) -> Var {
        g.concat_cols(&[z, alpha])
    }

    /// Pooled contact feature `[1, p1]` of the contact points `q` (`[n, 3]`).
    pub fn contact_feature_graph<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], q: Var) -> Var {
        let h = dense(g, vars, self.encoder.point[0], q);
        let h = g.relu(h);
        let h = dense(g, vars, self.encoder.point[1], h);
        let h = g.relu(h);
        g.max_rows(h)
    }

    /// Force code `[1, m]` from a contact feature and a force already
    /// multiplied by `force_scale`.
    pub fn fuse_graph<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], feature: Var, u_scaled: Var) -> Var {
        let x = g.concat_cols(&[feature, u_scaled]);
        let h = dense(g, vars, self.encoder.fuse[0], x);
        let h = g.relu(h);
        dense(g, vars, self.encoder.fuse[1], h)
    }

    /// Force code for an observation on the tape.
    pub fn encode_graph<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], obs: &ContactObservation) -> Result<(Var, Var)> {
        if obs.q.is_empty() {
            return Err(Error::InvalidInput("contact set Q is empty".into()));
        }
        let q = g.constant(Mat::from_rows3(&obs.q.points));
        let feature = self.contact_feature_graph(g, vars, q);
        let u = g.constant(Mat::from_rows3(&[self.scaled_force(obs.u)]));
        let z = self.fuse_graph(g, vars, feature, u);
        Ok((feature, z))
    }

    pub fn scaled_force(&self, u: Vec3) -> Vec3 {
        u.map(|c| c * self.arch.force_scale)
    }

    /// Decoded object module for `alpha`.
    pub fn decode_object(&self, alpha: &[f32]) -> Result<DecodedField> {
        self.check_dims(alpha, None)?;
        let mut g = Graph::<f32>::new();
        let vars = self.bind(&mut g, &self.params, |_| false);
        let code = g.constant(Mat::from_vec(1, alpha.len(), alpha.to_vec()));
        let d = self.decode_graph(&mut g, &vars, &self.psi_o, code);
        Ok(DecodedField::from_graph(&g, &d, self.arch.omega0))
    }

    /// Decoded deformation module for `(z, alpha)`.
    pub fn decode_deformation(&self, z: &[f32], alpha: &[f32]) -> Result<DecodedField> {
        self.check_dims(alpha, Some(z))?;
        let mut g = Graph::<f32>::new();
        let vars = self.bind(&mut g, &self.params, |_| false);
        let mut code = z.to_vec();
        code.extend_from_slice(alpha);
        let code = g.constant(Mat::from_vec(1, code.len(), code));
        let d = self.decode_graph(&mut g, &vars, &self.psi_d, code);
        Ok(DecodedField::from_graph(&g, &d, self.arch.omega0))
    }

    /// `O(x | Ψ_o(α))`.
    pub fn object_sdf(&self, alpha: &[f32], x: &[Vec3]) -> Result<Vec<f64>> {
        check_points(x)?;
        Ok(self.decode_object(alpha)?.eval(x).into_iter().map(|r| r[0]).collect())
    }

    /// `O` and its spatial gradient.
    pub fn object_sdf_grad(&self, alpha: &[f32], x: &[Vec3]) -> Result<(Vec<f64>, Vec<Vec3>)> {
        check_points(x)?;
        let (v, jac) = self.decode_object(alpha)?.eval_jacobian(x);
        Ok((v.into_iter().map(|r| r[0]).collect(), jac.into_iter().map(|j| [j[0][0], j[1][0], j[2][0]]).collect()))
    }

    /// Contact feature and force code of an observation.
    pub fn encode_force(&self, obs: &ContactObservation) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut g = Graph::<f32>::new();
        let vars = self.bind(&mut g, &self.params, |_| false);
        let (feature, z) = self.encode_graph(&mut g, &vars, obs)?;
        Ok((g.value(feature).data.clone(), g.value(z).data.clone()))
    }

    /// Force code from a given contact feature and reaction force (N).
    pub fn fuse_feature(&self, feature: &[f32], u: Vec3) -> Result<Vec<f32>> {
        if feature.len() != self.arch.encoder_point[1] {
            return Err(Error::Shape(format!(
                "contact feature has {} entries, model expects {}",
                feature.len(),
                self.arch.encoder_point[1]
            )));
        }
        let mut g = Graph::<f32>::new();
        let vars = self.bind(&mut g, &self.params, |_| false);
        let f = g.constant(Mat::from_vec(1, feature.len(), feature.to_vec()));
        let u = g.constant(Mat::from_rows3(&[self.scaled_force(u)]));
        let z = self.fuse_graph(&mut g, &vars, f, u);
        Ok(g.value(z).data.clone())
    }

    /// `D(x | Ψ_d(z, α))`, mapping deformed points toward the nominal shape.
    pub fn deformation_field(&self, z: &[f32], alpha: &[f32], x: &[Vec3]) -> Result<Vec<Vec3>> {
        check_points(x)?;
        Ok(self.decode_deformation(z, alpha)?.eval(x).into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    /// `O(x + D(x))`.
    pub fn deformed_sdf(&self, z: &[f32], alpha: &[f32], x: &[Vec3]) -> Result<Vec<f64>> {
        check_points(x)?;
        let pair = DeformedField::new(self, z, alpha)?;
        Ok(pair.eval(x))
    }
}

fn check_points(x: &[Vec3]) -> Result<()> {
    if x.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite query point".into()));
    }
    Ok(())
}

/// `x W^T + b` for a dense layer given by parameter indices.
pub fn dense<T: Real>(g: &mut Graph<T>, vars: &[Var], layer: Dense, x: Var) -> Var {
    let h = g.matmul_t(x, vars[layer.w]);
    g.add_row(h, vars[layer.b])
}

/// Decoded target-network layers on a tape.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// `(W [out, in], b [1, out])` per layer.
    pub layers: Vec<(Var, Var)>,
    /// Raw head outputs, whose concatenation is the decoded parameter vector.
    pub outputs: Vec<Var>,
}

/// Sinusoidal network on the tape. With `tangents`, also propagates the
/// directional derivatives `d/dx_k` for the three given input tangents.
pub fn siren_graph<T: Real>(
    g: &mut Graph<T>,
    layers: &[(Var, Var)],
    omega0: f64,
    x: Var,
    tangents: Option<[Var; 3]>,
) -> (Var, Option<[Var; 3]>) {
    let last = layers.len() - 1;
    let mut h = x;
    let mut t = tangents;
    for (j, &(w, b)) in layers.iter().enumerate() {
        let pre = g.matmul_t(h, w);
        let mut pre = g.add_row(pre, b);
        let mut tp = t.map(|tk| {
            let mut out = tk;
            for k in 0..3 {
                out[k] = g.matmul_t(tk[k], w);
            }
            out
        });
        if j == last {
            return (pre, tp);
        }
        if j == 0 {
            pre = g.scale(pre, omega0);
            if let Some(tk) = tp.as_mut() {
                for v in tk.iter_mut() {
                    *v = g.scale(*v, omega0);
                }
            }
        }
        h = g.sin(pre);
        if let Some(tk) = tp.as_mut() {
            let c = g.cos(pre);
            for v in tk.iter_mut() {
                *v = g.mul(c, *v);
            }
        }
        t = tp;
    }
    unreachable!("loop returns at the output layer")
}

/// Unit tangents `e_k` for `n` rows.
pub fn unit_tangents<T: Real>(g: &mut Graph<T>, n: usize) -> [Var; 3] {
    std::array::from_fn(|k| {
        let mut m = Mat::zeros(n, 3);
        for r in 0..n {
            m.data[r * 3 + k] = T::one();
        }
        g.constant(m)
    })
}

/// Stacks `n x 1` tangent outputs into an `n x 3` gradient.
pub fn gradient_of<T: Real>(g: &mut Graph<T>, tangents: [Var; 3]) -> Var {
    g.concat_cols(&tangents)
}

/// A target network with concrete weights, evaluated without gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedField {
    pub layers: Vec<(Mat<f32>, Mat<f32>)>,
    pub omega0: f64,
}

impl DecodedField {
    fn from_graph(g: &Graph<f32>, d: &Decoded, omega0: f64) -> Self {
        DecodedField {
            layers: d
                .layers
                .iter()
                .map(|&(w, b)| (g.value(w).clone(), g.value(b).clone()))
                .collect(),
            omega0,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|(w, _)| w.rows).unwrap_or(0)
    }

    fn bind(&self, g: &mut Graph<f32>) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(w, b)| (g.constant(w.clone()), g.constant(b.clone())))
            .collect()
    }

    /// Outputs per point. Each row depends only on its own input.
    pub fn eval(&self, x: &[Vec3]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for chunk in x.chunks(EVAL_CHUNK) {
            let mut g = Graph::<f32>::new();
            let layers = self.bind(&mut g);
            let xv = g.constant(Mat::from_rows3(chunk));
            let (y, _) = siren_graph(&mut g, &layers, self.omega0, xv, None);
            let v = g.value(y);
            out.extend((0..v.rows).map(|r| v.row(r).iter().map(|&c| c as f64).collect()));
        }
        out
    }

    /// Outputs and Jacobian columns `d out / d x_k` per point.
    pub fn eval_jacobian(&self, x: &[Vec3]) -> (Vec<Vec<f64>>, Vec<[Vec<f64>; 3]>) {
        self.eval_with_tangents(x, None)
    }

    /// Outputs and directional derivatives along per-point input tangents
    /// (`tangents[i][k]` is `d x_i / d s_k`); unit tangents when `None`.
    pub fn eval_with_tangents(&self, x: &[Vec3], tangents: Option<&[[Vec3; 3]]>) -> (Vec<Vec<f64>>, Vec<[Vec<f64>; 3]>) {
        let mut vals = Vec::with_capacity(x.len());
        let mut jac = Vec::with_capacity(x.len());
        for (c, chunk) in x.chunks(EVAL_CHUNK).enumerate() {
            let mut g = Graph::<f32>::new();
            let layers = self.bind(&mut g);
            let xv = g.constant(Mat::from_rows3(chunk));
            let t = match tangents {
                None => unit_tangents(&mut g, chunk.len()),
                Some(all) => {
                    let part = &all[c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len()];
                    std::array::from_fn(|k| {
                        let rows: Vec<Vec3> = part.iter().map(|t| t[k]).collect();
                        g.constant(Mat::from_rows3(&rows))
                    })
                }
            };
            let (y, dy) = siren_graph(&mut g, &layers, self.omega0, xv, Some(t));
            let dy = dy.expect("tangents requested");
            let v = g.value(y);
            for r in 0..v.rows {
                vals.push(v.row(r).iter().map(|&c| c as f64).collect());
                jac.push(std::array::from_fn(|k| {
                    g.value(dy[k]).row(r).iter().map(|&c| c as f64).collect()
                }));
            }
        }
        (vals, jac)
    }
}

/// Decoded O and D for one `(z, α)` pair, evaluating `O(x + D(x))`.
#[derive(Clone, Debug)]
pub struct DeformedField {
    pub object: DecodedField,
    pub deformation: Option<DecodedField>,
}

impl DeformedField {
    pub fn new(model: &FieldModel, z: &[f32], alpha: &[f32]) -> Result<Self> {
        Ok(DeformedField {
            object: model.decode_object(alpha)?,
            deformation: Some(model.decode_deformation(z, alpha)?),
        })
    }

    /// Object field only (the deformation is taken as zero).
    pub fn nominal(model: &FieldModel, alpha: &[f32]) -> Result<Self> {
        Ok(DeformedField {
            object: model.decode_object(alpha)?,
            deformation: None,
        })
    }

    /// `x + D(x)` per point.
    pub fn warp(&self, x: &[Vec3]) -> Vec<Vec3> {
        match &self.deformation {
            None => x.to_vec(),
            Some(d) => x
                .iter()
                .zip(d.eval(x))
                .map(|(p, v)| [p[0] + v[0], p[1] + v[1], p[2] + v[2]])
                .collect(),
        }
    }

    pub fn eval(&self, x: &[Vec3]) -> Vec<f64> {
        let y = self.warp(x);
        self.object.eval(&y).into_iter().map(|r| r[0]).collect()
    }

    /// `O(x + D(x))` and its gradient with respect to `x`.
    pub fn eval_grad(&self, x: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        let (y, t) = match &self.deformation {
            None => (x.to_vec(), None),
            Some(d) => {
                let (v, jac) = d.eval_jacobian(x);
                let y = x.iter().zip(&v).map(|(p, v)| [p[0] + v[0], p[1] + v[1], p[2] + v[2]]).collect();
                let t: Vec<[Vec3; 3]> = jac
                    .iter()
                    .map(|j| {
                        std::array::from_fn(|k| {
                            let mut e = [j[k][0], j[k][1], j[k][2]];
                            e[k] += 1.0;
                            e
                        })
                    })
                    .collect();
                (y, Some(t))
            }
        };
        let (v, jac) = self.object.eval_with_tangents(&y, t.as_deref());
        (
            v.into_iter().map(|r| r[0]).collect(),
            jac.into_iter().map(|j| [j[0][0], j[1][0], j[2][0]]).collect(),
        )
    }
}

/// Draws `n` values from `N(0, std^2)`.
pub fn gaussian_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f32> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng) as f32).collect()
}

#[cfg(test)]
mod tests;

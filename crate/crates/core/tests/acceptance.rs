//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! The desk-scale tests share one trained model; the first test to need it
//! pays for data generation and training.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use deformsdf::autodiff::{Graph, Mat, Real, Var};
use deformsdf::datagen::{generate_dataset, tip_point, Dataset, DatasetConfig, DeformationRecord, ToolSpec};
use deformsdf::fieldnet::{ArchConfig, ContactObservation, FieldModel};
use deformsdf::geometry::{
    normalize_cloud, sample_sdf, vec3, NearestNeighbors, PointCloud, SdfSampleSet, SdfSampling, Surface,
    TriangleMesh, Vec3,
};
use deformsdf::inference::{
    infer_deformation, interpolate_codes, partial_view, reconstruct_from_code, InferConfig, PartialObservation,
    ViewConfig,
};
use deformsdf::metrics::{dataset_items, eval_model, EvalConfig, Split};
use deformsdf::reconstruct::{
    correspondences, deformed_positions, extract_isosurface, reconstruct_cloud, sdf_grid, CorrespondConfig,
    FieldGrid, GridSpec,
};
use deformsdf::training::losses::{correction_graph, hyper_graph, infer_graph, latent_graph, sdf_loss, sdf_terms};
use deformsdf::training::{
    anchor_key, chamfer, clamp, pretrain_nominal, record_key, train_deformed, LossWeights, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, name: &str, pass: bool, detail: String) {
    // written past the test harness capture so the lines always show up
    let line = format!(
        "acceptance {criterion} {name}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{}", line.trim_end());
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s/{}s", e.as_secs_f64(), limit.as_secs()))
}

fn random_cloud(rng: &mut impl Rng, n: usize, r: f64) -> Vec<Vec3> {
    (0..n).map(|_| [rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)]).collect()
}

fn fibonacci_sphere(n: usize, r: f64) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let s = (1.0 - y * y).sqrt();
        let t = golden * i as f64;
        pts.push([s * t.cos(), y, s * t.sin()]);
    }
    let points = pts.iter().map(|&p| vec3::scale(p, r)).collect();
    PointCloud::with_normals(points, pts).unwrap()
}

fn box_mesh(h: Vec3) -> TriangleMesh {
    let mut v = Vec::new();
    for i in 0..8 {
        v.push([
            if i & 1 == 0 { -h[0] } else { h[0] },
            if i & 2 == 0 { -h[1] } else { h[1] },
            if i & 4 == 0 { -h[2] } else { h[2] },
        ]);
    }
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh::new(v, faces).unwrap()
}

fn box_sdf(p: Vec3, h: Vec3) -> f64 {
    let q = [p[0].abs() - h[0], p[1].abs() - h[1], p[2].abs() - h[2]];
    let outside = vec3::norm(q.map(|c| c.max(0.0)));
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

#[test]
fn criterion_1_oracle_equivalence() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let na = rng.random_range(1..=64);
        let nb = rng.random_range(1..=64);
        let a = random_cloud(&mut rng, na, 1.0);
        let b = random_cloud(&mut rng, nb, 1.0);
        let one_way = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| vec3::dist2(*p, *q)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        let reference = one_way(&a, &b) + one_way(&b, &a);
        worst = worst.max((chamfer(&a, &b).unwrap() - reference).abs());
    }
    let chamfer_ok = worst <= 1e-9;

    let cfg = SdfSampling {
        n_total: 4000,
        mesh_surface_points: 20_000,
        ..Default::default()
    };
    let sphere = fibonacci_sphere(20_000, 0.5);
    let s = sample_sdf(Surface::Cloud(&sphere), &cfg, 7).unwrap();
    let sphere_err = s
        .queries
        .iter()
        .zip(&s.sdf)
        .map(|(q, d)| (d - (vec3::norm(*q) - 0.5)).abs())
        .fold(0.0, f64::max);
    let sphere_tol = 2.0 * sphere.mean_spacing();

    let h = [0.6, 0.3, 0.15];
    let mesh = box_mesh(h);
    let s = sample_sdf(Surface::Mesh(&mesh), &cfg, 8).unwrap();
    let box_err = s.queries.iter().zip(&s.sdf).map(|(q, d)| (d - box_sdf(*q, h)).abs()).fold(0.0, f64::max);
    let box_tol = 2.0 * mesh.sample_surface(cfg.mesh_surface_points, 8 ^ 0x5eed).unwrap().mean_spacing();

    let (fast, time) = within(t, Duration::from_secs(60));
    report(
        1,
        "oracle equivalence",
        chamfer_ok && sphere_err < sphere_tol && box_err < box_tol && fast,
        format!(
            "chamfer max|diff| {worst:.1e} (<= 1e-9); sphere sdf max err {sphere_err:.4} (< {sphere_tol:.4}); \
             box sdf max err {box_err:.4} (< {box_tol:.4}); {time}"
        ),
    );
}

/// Loss built identically at either precision over a list of inputs.
trait Probe {
    fn inputs(&self, m: &FieldModel) -> Vec<Mat<f32>>;
    fn build<T: Real>(&self, m: &FieldModel, g: &mut Graph<T>, inputs: &[Var]) -> Var;
}

fn cast<T: Real>(m: &Mat<f32>) -> Mat<T> {
    let (r, c) = m.shape();
    Mat::from_f32(r, c, &m.data)
}

struct Scene {
    batch: SdfSampleSet,
    surface: Vec<Vec3>,
    target: NearestNeighbors,
    obs: ContactObservation,
}

fn scene() -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sphere = fibonacci_sphere(400, 0.5);
    let mut batch = sample_sdf(
        Surface::Cloud(&sphere),
        &SdfSampling {
            n_total: 96,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    batch.sdf.iter_mut().for_each(|d| *d = d.clamp(-0.09, 0.09));
    let surface = random_cloud(&mut rng, 48, 0.6);
    let target = NearestNeighbors::new(&fibonacci_sphere(64, 0.55).points);
    let q = PointCloud::new(random_cloud(&mut rng, 5, 0.3)).unwrap();
    let obs = ContactObservation::new(q, [0.4, -1.2, 2.0]).unwrap();
    Scene {
        batch,
        surface,
        target,
        obs,
    }
}

enum Loss {
    SdfNominal,
    SdfComposed,
    Correction,
    Latent,
    Hyper,
}

struct ParamProbe<'a> {
    loss: Loss,
    scene: &'a Scene,
}

impl Probe for ParamProbe<'_> {
    fn inputs(&self, m: &FieldModel) -> Vec<Mat<f32>> {
        m.params.clone()
    }

    fn build<T: Real>(&self, m: &FieldModel, g: &mut Graph<T>, vars: &[Var]) -> Var {
        let w = &m.weights;
        let s = self.scene;
        let alpha = g.gather_rows(vars[m.object_codes], &[0]);
        let dec_o = m.decode_graph(g, vars, &m.psi_o, alpha);
        let (_, z) = m.encode_graph(g, vars, &s.obs).unwrap();
        let code = m.deformation_code(g, z, alpha);
        let dec_d = m.decode_graph(g, vars, &m.psi_d, code);
        match self.loss {
            Loss::SdfNominal => {
                let terms = sdf_terms(g, &dec_o.layers, None, m.arch.omega0, &s.batch, w.delta).unwrap();
                sdf_loss(g, &terms, w.lambda_normal)
            }
            Loss::SdfComposed => {
                let terms =
                    sdf_terms(g, &dec_o.layers, Some(&dec_d.layers), m.arch.omega0, &s.batch, w.delta).unwrap();
                sdf_loss(g, &terms, w.lambda_normal)
            }
            Loss::Correction => correction_graph(g, &dec_d.layers, m.arch.omega0, &s.surface, &s.target, 1.0).0,
            Loss::Latent => {
                let a = latent_graph(g, alpha);
                let b = latent_graph(g, z);
                g.add(a, b)
            }
            Loss::Hyper => {
                let a = hyper_graph(g, &dec_o.outputs);
                let b = hyper_graph(g, &dec_d.outputs);
                g.add(a, b)
            }
        }
    }
}

struct InferProbe<'a> {
    scene: &'a Scene,
    feature: Vec<f32>,
}

impl Probe for InferProbe<'_> {
    fn inputs(&self, _: &FieldModel) -> Vec<Mat<f32>> {
        vec![Mat::from_vec(1, self.feature.len(), self.feature.clone())]
    }

    fn build<T: Real>(&self, m: &FieldModel, g: &mut Graph<T>, inputs: &[Var]) -> Var {
        let vars = m.bind(g, &m.param_values::<T>(), |_| false);
        let u = g.constant(Mat::from_rows3(&[m.scaled_force(self.scene.obs.u)]));
        let z = m.fuse_graph(g, &vars, inputs[0], u);
        let alpha = g.gather_rows(vars[m.object_codes], &[0]);
        let code = m.deformation_code(g, z, alpha);
        let dec_o = m.decode_graph(g, &vars, &m.psi_o, alpha);
        let dec_d = m.decode_graph(g, &vars, &m.psi_d, code);
        let pts: Vec<Vec3> = self.scene.surface.clone();
        infer_graph(g, &dec_o.layers, &dec_d.layers, m.arch.omega0, &pts, m.weights.delta)
    }
}

fn eval_loss<T: Real>(m: &FieldModel, p: &impl Probe, inputs: &[Mat<T>]) -> (f64, Vec<Option<Mat<T>>>) {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let root = p.build(m, &mut g, &vars);
    let value = g.value(root).scalar().to_f64().unwrap();
    let mut grads = g.backward(root);
    (value, vars.iter().map(|&v| grads.take(v)).collect())
}

/// Worst relative error of `f32` autodiff against `f64` central differences
/// over `n` random entries whose gradient is not negligible.
fn gradient_check(m: &FieldModel, p: &impl Probe, n: usize, seed: u64) -> f64 {
    let inputs = p.inputs(m);
    let (_, g32) = eval_loss::<f32>(m, p, &inputs);
    let wide: Vec<Mat<f64>> = inputs.iter().map(cast).collect();
    let (_, g64) = eval_loss::<f64>(m, p, &wide);
    let largest = g64.iter().flatten().flat_map(|g| &g.data).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut candidates: Vec<(usize, usize)> = g64
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
        .flat_map(|(i, g)| g.data.iter().enumerate().filter(|(_, v)| v.abs() >= 1e-3 * largest).map(move |(j, _)| (i, j)))
        .collect();
    assert!(candidates.len() >= n, "only {} usable entries", candidates.len());
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let h = 1e-6;
    let mut worst = 0.0f64;
    for &(i, j) in &candidates[..n] {
        let mut plus = wide.clone();
        plus[i].data[j] += h;
        let mut minus = wide.clone();
        minus[i].data[j] -= h;
        let fd = (eval_loss::<f64>(m, p, &plus).0 - eval_loss::<f64>(m, p, &minus).0) / (2.0 * h);
        let ad = g32[i].as_ref().expect("gradient present").data[j] as f64;
        worst = worst.max((ad - fd).abs() / fd.abs());
    }
    worst
}

#[test]
fn criterion_2_gradient_suite() {
    let t = Instant::now();
    let arch = ArchConfig {
        hidden_layers: 2,
        hidden_width: 32,
        hyper_hidden: 16,
        object_code_dim: 8,
        force_code_dim: 8,
        encoder_point: [16, 24],
        encoder_fuse: 16,
        head_init: 1e-2,
        ..ArchConfig::desk()
    };
    let m = FieldModel::new(&arch, &LossWeights::default(), &["a".to_string(), "b".to_string()], 17).unwrap();
    let s = scene();
    let mut rows = Vec::new();
    let cases = [
        ("L_sdf nominal", Loss::SdfNominal),
        ("L_sdf composed", Loss::SdfComposed),
        ("f_c", Loss::Correction),
        ("L_latent", Loss::Latent),
        ("L_hyper", Loss::Hyper),
    ];
    for (k, (name, loss)) in cases.into_iter().enumerate() {
        let err = gradient_check(&m, &ParamProbe { loss, scene: &s }, 10, 40 + k as u64);
        rows.push((name, err));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let feature = (0..arch.encoder_point[1]).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    rows.push(("L_infer", gradient_check(&m, &InferProbe { scene: &s, feature }, 10, 50)));

    let (fast, time) = within(t, Duration::from_secs(300));
    let ok = rows.iter().all(|(_, e)| *e < 1e-3) && fast;
    let detail = rows.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    report(2, "gradient suite", ok, format!("max rel err (< 1e-3): {detail}; {time}"));
}

#[test]
fn criterion_3_exact_invariances() {
    let t = Instant::now();
    let arch = ArchConfig::desk();
    let m = FieldModel::new(&arch, &LossWeights::default(), &["a".to_string()], 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    let pts = random_cloud(&mut rng, 40, 0.8);
    let u = [0.3, -2.0, 1.1];
    let base = m.encode_force(&ContactObservation::new(PointCloud::new(pts.clone()).unwrap(), u).unwrap()).unwrap();
    let mut permutation_ok = true;
    for _ in 0..20 {
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rng);
        let e = m.encode_force(&ContactObservation::new(PointCloud::new(shuffled).unwrap(), u).unwrap()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        permutation_ok &= bits(&e.0) == bits(&base.0) && bits(&e.1) == bits(&base.1);
    }

    let single = m.encode_force(&ContactObservation::new(PointCloud::new(vec![pts[0]]).unwrap(), u).unwrap()).unwrap();
    let many = m
        .encode_force(&ContactObservation::new(PointCloud::new(vec![pts[0]; 100]).unwrap(), u).unwrap())
        .unwrap();
    let duplicate_ok = single == many;

    let delta = 0.1;
    let mut clamp_ok = true;
    for _ in 0..10_000 {
        let s: f64 = rng.random_range(-1.0..1.0);
        let c = clamp(s, delta);
        clamp_ok &= c == s.clamp(-delta, delta) && clamp(c, delta) == c && clamp(-s, delta) == -c;
        clamp_ok &= if s.abs() <= delta { c == s } else { c == delta.copysign(s) };
    }

    let mut symmetric = true;
    for _ in 0..50 {
        let (na, nb) = (rng.random_range(1..200), rng.random_range(1..200));
        let a = random_cloud(&mut rng, na, 1.0);
        let b = random_cloud(&mut rng, nb, 1.0);
        symmetric &= chamfer(&a, &b).unwrap() == chamfer(&b, &a).unwrap();
    }

    let mut roundtrip = 0.0f64;
    for _ in 0..20 {
        let shift = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let size = 10f64.powf(rng.random_range(-3.0..3.0));
        let original: Vec<Vec3> = random_cloud(&mut rng, 500, size).iter().map(|&p| vec3::add(p, shift)).collect();
        let (normalized, tf) = normalize_cloud(&PointCloud::new(original.clone()).unwrap()).unwrap();
        for (p, q) in original.iter().zip(&normalized.points) {
            roundtrip = roundtrip.max(vec3::norm(vec3::sub(tf.invert(*q), *p)) / vec3::norm(*p).max(f64::MIN_POSITIVE));
        }
    }

    let (fast, time) = within(t, Duration::from_secs(60));
    report(
        3,
        "exact invariances",
        permutation_ok && duplicate_ok && clamp_ok && symmetric && roundtrip <= 1e-9 && fast,
        format!(
            "permutation bitwise {permutation_ok}; duplicates {duplicate_ok}; clamp {clamp_ok}; \
             chamfer symmetric {symmetric}; round-trip rel err {roundtrip:.1e} (<= 1e-9); {time}"
        ),
    );
}

struct Desk {
    _dir: tempfile::TempDir,
    train: Dataset,
    test: Dataset,
    model: FieldModel,
    trained_in: Duration,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let t = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            n_conditions: 6,
            surface_density: 1e5,
            sampling: SdfSampling {
                n_total: 8000,
                ..Default::default()
            },
            ..Default::default()
        };
        let (train_dir, test_dir) = (dir.path().join("train"), dir.path().join("test"));
        generate_dataset(&ToolSpec::desk_set(), &cfg, 1, &train_dir).unwrap();
        generate_dataset(&ToolSpec::desk_set(), &cfg, 2, &test_dir).unwrap();
        let train = Dataset::load(&train_dir).unwrap();
        let test = Dataset::load(&test_dir).unwrap();
        let tc = TrainConfig {
            pretrain_epochs: 300,
            epochs: 60,
            sdf_batch: 2048,
            surface_batch: 1024,
            fresh_uniform: 2048,
            ..Default::default()
        };
        let st = pretrain_nominal(&train, &ArchConfig::desk(), &LossWeights::default(), &tc).unwrap();
        let st = train_deformed(st, &train, &tc).unwrap();
        Desk {
            _dir: dir,
            train,
            test,
            model: st.model,
            trained_in: t.elapsed(),
        }
    })
}

fn max_displacement(ds: &Dataset, tool: usize) -> &DeformationRecord {
    let disp = |d: &DeformationRecord| {
        ds.tools[tool]
            .nominal
            .points
            .iter()
            .zip(&d.deformed.points)
            .map(|(a, b)| vec3::norm(vec3::sub(*a, *b)))
            .fold(0.0, f64::max)
    };
    ds.deformations_of(tool).max_by(|a, b| disp(a).total_cmp(&disp(b))).unwrap()
}

#[test]
fn criterion_4_desk_training() {
    let d = desk();
    let t = Instant::now();
    let m = &d.model;
    let on_surface: Vec<f64> = d
        .train
        .tools
        .iter()
        .map(|tool| {
            let alpha = m.object_code(m.tool_index(&tool.id).unwrap());
            let s = m.object_sdf(&alpha, &tool.nominal.points).unwrap();
            s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64
        })
        .collect();
    let items = dataset_items(m, &d.train, Some(&d.test)).unwrap();
    let table = eval_model(m, &items, &EvalConfig::default()).unwrap();
    let cd = |split: Split| table.rows.iter().find(|r| r.split == split).and_then(|r| r.cd).unwrap_or(f64::INFINITY);
    let (train_cd, test_cd) = (cd(Split::TrainDeformed), cd(Split::TestDeformed));
    let total = d.trained_in + t.elapsed();
    let ok = on_surface.iter().all(|&v| v < 0.01)
        && train_cd < 5.0
        && test_cd < 2.5 * train_cd
        && total <= Duration::from_secs(3600);
    report(
        4,
        "desk-scale training",
        ok,
        format!(
            "on-surface mean |O| {on_surface:.4?} (< 0.01); train CDx1e3 {train_cd:.3} (< 5.0); \
             held-out CDx1e3 {test_cd:.3} = {:.2}x train (< 2.5x); {:.0}s/3600s",
            test_cd / train_cd,
            total.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_inference() {
    let d = desk();
    let t = Instant::now();
    let m = &d.model;
    let tool_idx = d.train.tool_index("scraper").unwrap();
    let tool = &d.train.tools[tool_idx];
    let rec = max_displacement(&d.train, tool_idx);
    let (visible, _) = partial_view(tool, &rec.deformed, &ViewConfig::default()).unwrap();
    let alpha = m.object_code(m.tool_index(&tool.id).unwrap());
    let obs = PartialObservation {
        visible_points: visible,
        known_u: Some(rec.contacts.u),
        alpha: alpha.clone(),
        camera: None,
    };
    let r = infer_deformation(m, &obs, &InferConfig::default(), 0).unwrap();
    let traj = &r.loss_trajectory;
    let strict = traj[..=50].windows(2).all(|w| w[1] < w[0]);
    let initial = reconstruct_cloud(m, &alpha, Some(&r.initial_z), 64, 5600, 0).unwrap();
    let cd0 = chamfer(&initial.points, &rec.deformed.points).unwrap();
    let cd = chamfer(&r.reconstructed_cloud.as_ref().unwrap().points, &rec.deformed.points).unwrap();
    let (fast, time) = within(t, Duration::from_secs(300));
    report(
        5,
        "inference from a partial view",
        strict && cd * 2.0 <= cd0 && fast,
        format!(
            "{}/def_{}: loss {:.5} -> {:.5}, strictly decreasing over 50 iterations {strict}; \
             CDx1e3 {:.3} -> {:.3} ({:.1}x, >= 2x); {time}",
            tool.id,
            rec.condition,
            traj[0],
            traj[traj.len() - 1],
            cd0 * 1e3,
            cd * 1e3,
            cd0 / cd
        ),
    );
}

#[test]
fn criterion_6_interpolation() {
    let d = desk();
    let t = Instant::now();
    let m = &d.model;
    let tool_idx = d.train.tool_index("scraper").unwrap();
    let tool = &d.train.tools[tool_idx];
    let rec = max_displacement(&d.train, tool_idx);
    let alpha = m.object_code(m.tool_index(&tool.id).unwrap());
    let z_l = m.force_code(&anchor_key(&tool.id)).unwrap();
    let z_r = m.force_code(&record_key(&tool.id, rec.condition)).unwrap();
    let codes = interpolate_codes(&z_l, &z_r, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
    let tip = tool.transform.apply(tip_point(&tool.spec, &tool.transform, &tool.nominal));
    let mut faces = Vec::new();
    let mut deflection = Vec::new();
    for z in &codes {
        faces.push(reconstruct_from_code(m, &alpha, z, 64).map(|mesh| mesh.faces.len()).unwrap_or(0));
        let (q, _) = deformed_positions(m, &alpha, z, &[tip], &CorrespondConfig::default()).unwrap();
        deflection.push(vec3::norm(vec3::sub(q[0], tip)));
    }
    let band = 0.1 * deflection.iter().cloned().fold(0.0, f64::max);
    let monotone = deflection.windows(2).all(|w| w[1] >= w[0] - band) && deflection[4] > deflection[0];
    let (fast, time) = within(t, Duration::from_secs(300));
    report(
        6,
        "force-code interpolation",
        faces.iter().all(|&f| f > 0) && monotone && fast,
        format!(
            "{}/zero -> def_{}: faces {faces:?}; tip deflection {deflection:.4?} monotone within {band:.4} {monotone}; {time}",
            tool.id, rec.condition
        ),
    );
}

#[test]
fn criterion_7_correspondence() {
    let d = desk();
    let t = Instant::now();
    let m = &d.model;
    let cfg = CorrespondConfig::default();
    let mut errors = Vec::new();
    let mut spacings = Vec::new();
    let mut identity = 0.0f64;
    for rec in &d.train.deformations {
        let tool = &d.train.tools[rec.tool];
        let alpha = m.object_code(m.tool_index(&tool.id).unwrap());
        let z_a = m.force_code(&anchor_key(&tool.id)).unwrap();
        let z_b = m.force_code(&record_key(&tool.id, rec.condition)).unwrap();
        let idx: Vec<usize> = (0..tool.nominal.len()).step_by(4).collect();
        let marked = tool.nominal.select(&idx);
        let pairs = correspondences(m, &alpha, &z_a, &z_b, &marked, &cfg).unwrap();
        let err = pairs
            .iter()
            .zip(&idx)
            .map(|(c, &i)| vec3::norm(vec3::sub(c.target, rec.deformed.points[i])))
            .sum::<f64>()
            / pairs.len() as f64;
        errors.push(err);
        spacings.push(rec.deformed.mean_spacing());
        let same = correspondences(m, &alpha, &z_b, &z_b, &marked, &cfg).unwrap();
        identity = identity.max(same.iter().map(|c| vec3::norm(c.delta)).fold(0.0, f64::max));
    }
    let mean_err = errors.iter().sum::<f64>() / errors.len() as f64;
    let spacing = spacings.iter().sum::<f64>() / spacings.len() as f64;
    let (fast, time) = within(t, Duration::from_secs(300));
    report(
        7,
        "dense correspondence",
        mean_err < 2.0 * spacing && identity <= cfg.tolerance && fast,
        format!(
            "mean error {mean_err:.5} over {} records (< 2 x spacing {spacing:.5}); \
             identity max |delta| {identity:.1e} (<= {:.0e}); {time}",
            errors.len(),
            cfg.tolerance
        ),
    );
}

#[test]
fn criterion_8_reconstruction_fidelity() {
    let t = Instant::now();
    let r = 0.6;
    let spec = GridSpec::cube(64).unwrap();
    let grid = FieldGrid::sample(spec, 1, |x| x.iter().map(|&p| vec3::norm(p) - r).collect()).unwrap();
    let mesh = extract_isosurface(&grid, 0.0).unwrap();
    let h = spec.spacing[0];
    let radius_err = mesh.vertices.iter().map(|v| (vec3::norm(*v) - r).abs()).fold(0.0, f64::max);

    let m = FieldModel::new(&ArchConfig::desk(), &LossWeights::default(), &["a".to_string()], 3).unwrap();
    let alpha = m.object_code(0);
    let z: Vec<f32> = (0..m.arch.force_code_dim).map(|i| 0.05 * (i as f32 - 8.0)).collect();
    let small = GridSpec::cube(17).unwrap();
    let nodes: Vec<Vec3> = (0..small.len()).map(|i| small.position(i)).collect();
    let deformed = sdf_grid(&m, &alpha, Some(&z), small).unwrap();
    let nominal = sdf_grid(&m, &alpha, None, small).unwrap();
    let exact = deformed.values == m.deformed_sdf(&z, &alpha, &nodes).unwrap()
        && nominal.values == m.object_sdf(&alpha, &nodes).unwrap();

    let (fast, time) = within(t, Duration::from_secs(60));
    report(
        8,
        "reconstruction fidelity",
        !mesh.faces.is_empty() && radius_err < 2.0 * h && exact && fast,
        format!(
            "sphere vertex radius max err {radius_err:.5} (< 2h = {:.5}); grid == pointwise {exact}; {time}",
            2.0 * h
        ),
    );
}

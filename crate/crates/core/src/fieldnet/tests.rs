use super::*;
use crate::geometry::PointCloud;

fn small_arch() -> ArchConfig {
    ArchConfig {
        hidden_layers: 2,
        hidden_width: 16,
        hyper_hidden: 8,
        object_code_dim: 4,
        force_code_dim: 6,
        encoder_point: [8, 12],
        encoder_fuse: 8,
        ..Default::default()
    }
}

fn model() -> FieldModel {
    let ids = vec!["a".to_string(), "b".to_string()];
    FieldModel::new(&small_arch(), &LossWeights::default(), &ids, 7).unwrap()
}

fn points(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.37;
            [t.sin() * 0.8, (1.3 * t).cos() * 0.6, (0.7 * t).sin() * 0.5]
        })
        .collect()
}

fn obs(q: Vec<Vec3>, u: Vec3) -> ContactObservation {
    ContactObservation::new(PointCloud::new(q).unwrap(), u).unwrap()
}

#[test]
fn decoded_shapes_follow_the_architecture() {
    let m = model();
    let d = m.decode_object(&m.object_code(0)).unwrap();
    let shapes: Vec<_> = d.layers.iter().map(|(w, b)| (w.shape(), b.shape())).collect();
    assert_eq!(shapes, vec![((16, 3), (1, 16)), ((16, 16), (1, 16)), ((1, 16), (1, 1))]);
    let z = vec![0.0; 6];
    assert_eq!(m.decode_deformation(&z, &m.object_code(1)).unwrap().out_dim(), 3);
}

#[test]
fn dimension_mismatch_is_a_shape_error() {
    let m = model();
    assert!(matches!(m.object_sdf(&[0.0; 3], &points(2)), Err(Error::Shape(_))));
    assert!(matches!(
        m.deformation_field(&[0.0; 5], &m.object_code(0), &points(2)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn identical_queries_give_identical_outputs() {
    let m = model();
    let p = points(1)[0];
    let s = m.object_sdf(&m.object_code(0), &[p, p]).unwrap();
    assert_eq!(s[0], s[1]);
}

#[test]
fn decoding_is_repeatable() {
    let m = model();
    let a = m.decode_object(&m.object_code(1)).unwrap();
    let b = m.decode_object(&m.object_code(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rows_are_independent_of_batch() {
    let m = model();
    let alpha = m.object_code(0);
    let pts = points(5000);
    let all = m.object_sdf(&alpha, &pts).unwrap();
    for i in [0, 1, 17, 4095, 4096, 4999] {
        let one = m.object_sdf(&alpha, &[pts[i]]).unwrap();
        assert_eq!(one[0], all[i], "row {i}");
    }
}

#[test]
fn encoder_is_permutation_invariant_and_idempotent() {
    let m = model();
    let q = points(37);
    let (_, z) = m.encode_force(&obs(q.clone(), [1.0, -2.0, 0.5])).unwrap();
    let mut shuffled = q.clone();
    shuffled.reverse();
    shuffled.swap(3, 20);
    let (_, zs) = m.encode_force(&obs(shuffled, [1.0, -2.0, 0.5])).unwrap();
    assert_eq!(z, zs);

    let single = vec![q[4]];
    let dup = vec![q[4]; 100];
    let a = m.encode_force(&obs(single, [0.0, 1.0, 0.0])).unwrap();
    let b = m.encode_force(&obs(dup, [0.0, 1.0, 0.0])).unwrap();
    assert_eq!(a, b);

    assert!(matches!(
        m.encode_force(&obs(vec![], [0.0; 3])),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn fused_feature_matches_encoder() {
    let m = model();
    let o = obs(points(9), [0.3, 0.0, -1.0]);
    let (f, z) = m.encode_force(&o).unwrap();
    assert_eq!(m.fuse_feature(&f, o.u).unwrap(), z);
}

#[test]
fn zeroed_output_head_gives_zero_field() {
    let mut m = model();
    m.zero_deformation_output();
    let alpha = m.object_code(0);
    let z = vec![0.3; 6];
    let pts = points(50);
    let d = m.deformation_field(&z, &alpha, &pts).unwrap();
    assert!(d.iter().all(|v| *v == [0.0; 3]));
    assert_eq!(
        m.deformed_sdf(&z, &alpha, &pts).unwrap(),
        m.object_sdf(&alpha, &pts).unwrap()
    );
}

#[test]
fn spatial_gradient_matches_finite_differences() {
    let m = model();
    let alpha = m.object_code(0);
    let pts = points(20);
    let (_, grad) = m.object_sdf_grad(&alpha, &pts).unwrap();
    // central differences of the f64 tape with the same weights
    let dec = m.decode_object(&alpha).unwrap();
    let eval64 = |p: Vec3| -> f64 {
        let mut g = Graph::<f64>::new();
        let layers: Vec<_> = dec
            .layers
            .iter()
            .map(|(w, b)| {
                (
                    g.constant(Mat::from_f32(w.rows, w.cols, &w.data)),
                    g.constant(Mat::from_f32(b.rows, b.cols, &b.data)),
                )
            })
            .collect();
        let x = g.constant(Mat::from_rows3(&[p]));
        let (y, _) = siren_graph(&mut g, &layers, dec.omega0, x, None);
        g.value(y).scalar()
    };
    let h = 1e-4;
    for (p, gr) in pts.iter().zip(&grad) {
        for k in 0..3 {
            let (mut a, mut b) = (*p, *p);
            a[k] += h;
            b[k] -= h;
            let fd = (eval64(a) - eval64(b)) / (2.0 * h);
            let rel = (fd - gr[k]).abs() / fd.abs().max(1e-2);
            assert!(rel < 1e-3, "fd {fd} vs {}", gr[k]);
        }
    }
}

#[test]
fn composed_gradient_matches_finite_differences() {
    let m = model();
    let alpha = m.object_code(1);
    // a visible deformation
    let mut m2 = m.clone();
    let [_, l2] = *m2.psi_d.heads.last().unwrap();
    for v in m2.params[l2.b].data.iter_mut() {
        *v *= 1e3;
    }
    let z = vec![0.2; 6];
    let field = DeformedField::new(&m2, &z, &alpha).unwrap();
    let pts = points(10);
    let (_, grad) = field.eval_grad(&pts);
    let h = 1e-3;
    for (p, gr) in pts.iter().zip(&grad) {
        for k in 0..3 {
            let (mut a, mut b) = (*p, *p);
            a[k] += h;
            b[k] -= h;
            let fd = (field.eval(&[a])[0] - field.eval(&[b])[0]) / (2.0 * h);
            // f32 evaluation limits the finite-difference accuracy
            assert!((fd - gr[k]).abs() < 2e-2 * gr[k].abs().max(1.0), "fd {fd} vs {}", gr[k]);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = model();
    m.force_codes = Mat::from_vec(2, 6, (0..12).map(|i| i as f32 * 0.1).collect());
    m.force_keys = vec!["a/def_0".into(), "b/zero".into()];
    m.stage = Stage::Trained;
    let prov = Provenance {
        seed: 3,
        ..Default::default()
    };
    save_checkpoint(&path, &m, &prov).unwrap();
    let (back, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(meta.provenance.seed, 3);
    assert_eq!(back.params, m.params);
    assert_eq!(back.force_codes, m.force_codes);
    assert_eq!(back.stage, Stage::Trained);
    let pts = points(30);
    let z = m.force_code("a/def_0").unwrap();
    assert_eq!(
        back.deformed_sdf(&z, &back.object_code(0), &pts).unwrap(),
        m.deformed_sdf(&z, &m.object_code(0), &pts).unwrap()
    );
}

#[test]
fn checkpoint_shape_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = model();
    save_checkpoint(&path, &m, &Provenance::default()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header = String::from_utf8(bytes[8..8 + hlen].to_vec()).unwrap();
    let tampered = header.replacen("\"hidden_width\":16", "\"hidden_width\":17", 1);
    assert_ne!(tampered, header);
    let mut out = (tampered.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(tampered.as_bytes());
    out.extend_from_slice(&bytes[8 + hlen..]);
    std::fs::write(&path, out).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
}

#[test]
fn stage_gate() {
    let m = model();
    assert!(m.require_stage(Stage::Initialized).is_ok());
    assert!(matches!(m.require_stage(Stage::Trained), Err(Error::InvalidState(_))));
}

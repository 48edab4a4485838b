use std::sync::OnceLock;

use deformsdf::fieldnet::{ArchConfig, ContactObservation, FieldModel};
use deformsdf::geometry::{normalize_cloud, vec3, PointCloud, Vec3};
use deformsdf::inference::interpolate_codes;
use deformsdf::reconstruct::{extract_isosurface, FieldGrid, GridSpec};
use deformsdf::training::{chamfer, clamp, LossWeights};
use proptest::collection::vec;
use proptest::prelude::*;

fn point(r: f64) -> impl Strategy<Value = Vec3> {
    [-r..r, -r..r, -r..r]
}

fn cloud(r: f64, max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    vec(point(r), 1..max)
}

fn model() -> &'static FieldModel {
    static M: OnceLock<FieldModel> = OnceLock::new();
    M.get_or_init(|| {
        let arch = ArchConfig {
            hidden_layers: 2,
            hidden_width: 16,
            hyper_hidden: 8,
            encoder_point: [8, 12],
            encoder_fuse: 8,
            force_code_dim: 6,
            ..Default::default()
        };
        FieldModel::new(&arch, &LossWeights::default(), &["t".to_string()], 2).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_vanishes_on_itself(a in cloud(2.0, 40), b in cloud(2.0, 40)) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_of_a_shift_is_bounded_by_its_square(a in cloud(1.0, 30), t in point(0.5)) {
        let b: Vec<Vec3> = a.iter().map(|&p| vec3::add(p, t)).collect();
        prop_assert!(chamfer(&a, &b).unwrap() <= 2.0 * vec3::dot(t, t) + 1e-12);
    }

    #[test]
    fn clamp_is_bounded_odd_and_idempotent(s in -10.0f64..10.0, delta in 1e-3f64..1.0) {
        let c = clamp(s, delta);
        prop_assert!(c.abs() <= delta);
        prop_assert_eq!(clamp(c, delta), c);
        prop_assert_eq!(clamp(-s, delta), -c);
    }

    #[test]
    fn normalization_round_trips(pts in cloud(100.0, 60), shift in point(1e3)) {
        let pts: Vec<Vec3> = pts.iter().map(|&p| vec3::add(p, shift)).collect();
        let (n, tf) = normalize_cloud(&PointCloud::new(pts.clone()).unwrap()).unwrap();
        let c = n.centroid();
        prop_assert!(vec3::norm(c) < 1e-9);
        prop_assert!(n.points.iter().all(|p| vec3::norm(*p) <= 1.0 + 1e-12));
        for (p, q) in pts.iter().zip(&n.points) {
            let back = tf.invert(*q);
            prop_assert!(vec3::norm(vec3::sub(back, *p)) <= 1e-9 * vec3::norm(*p).max(1.0));
        }
    }

    #[test]
    fn interpolation_hits_its_endpoints(pair in vec((-1.0f32..1.0, -1.0f32..1.0), 1..40)) {
        let (l, r): (Vec<f32>, Vec<f32>) = pair.into_iter().unzip();
        let codes = interpolate_codes(&l, &r, &[0.0, 0.5, 1.0]).unwrap();
        prop_assert_eq!(&codes[0], &l);
        prop_assert_eq!(&codes[2], &r);
        for ((m, a), b) in codes[1].iter().zip(&l).zip(&r) {
            prop_assert!((m - 0.5 * (a + b)).abs() <= 1e-6);
        }
    }

    #[test]
    fn encoder_ignores_order_and_duplicates(pts in cloud(0.8, 20), u in point(5.0), seed in any::<u64>()) {
        let m = model();
        let obs = |p: Vec<Vec3>| ContactObservation::new(PointCloud::new(p).unwrap(), u).unwrap();
        let base = m.encode_force(&obs(pts.clone())).unwrap();
        let mut shuffled = pts.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed % n as u64) as usize);
        shuffled.reverse();
        prop_assert_eq!(&m.encode_force(&obs(shuffled)).unwrap(), &base);
        let mut doubled = pts.clone();
        doubled.extend_from_slice(&pts);
        prop_assert_eq!(&m.encode_force(&obs(doubled)).unwrap(), &base);
    }

    #[test]
    fn sphere_isosurfaces_are_closed(c in point(0.3), r in 0.2f64..0.6, res in 12usize..28) {
        let grid = FieldGrid::sample(GridSpec::cube(res).unwrap(), 1, |x| {
            x.iter().map(|&p| vec3::norm(vec3::sub(p, c)) - r).collect()
        })
        .unwrap();
        let mesh = extract_isosurface(&grid, 0.0).unwrap();
        prop_assert!(mesh.watertight);
        prop_assert_eq!(mesh.euler_characteristic(), 2);
        prop_assert!(mesh.signed_volume() > 0.0);
        let h = 2.2 / (res - 1) as f64;
        for v in &mesh.vertices {
            prop_assert!((vec3::norm(vec3::sub(*v, c)) - r).abs() < h);
        }
    }
}

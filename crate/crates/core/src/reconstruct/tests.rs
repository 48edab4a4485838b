use super::*;
use crate::fieldnet::ArchConfig;
use crate::training::LossWeights;

fn sphere(x: &[Vec3]) -> Vec<f64> {
    x.iter().map(|p| vec3::norm(*p) - 0.8).collect()
}

fn small_model() -> FieldModel {
    let arch = ArchConfig {
        hidden_layers: 2,
        hidden_width: 16,
        hyper_hidden: 8,
        object_code_dim: 4,
        force_code_dim: 6,
        encoder_point: [8, 12],
        encoder_fuse: 8,
        ..Default::default()
    };
    FieldModel::new(&arch, &LossWeights::default(), &["a".to_string()], 5).unwrap()
}

#[test]
fn sphere_vertices_lie_near_the_radius() {
    let grid = FieldGrid::sample(GridSpec::cube(64).unwrap(), 1, sphere).unwrap();
    let mesh = extract_isosurface(&grid, 0.0).unwrap();
    let h = grid.spec.spacing[0];
    let worst = mesh
        .vertices
        .iter()
        .map(|v| (vec3::norm(*v) - 0.8).abs())
        .fold(0.0, f64::max);
    assert!(worst < 2.0 * h, "worst {worst} spacing {h}");
    assert!(mesh.watertight);
    assert_eq!(mesh.euler_characteristic(), 2);
    assert!(mesh.signed_volume() > 0.0);
    assert!(mesh.min_face_area() > 1e-12);
}

#[test]
fn faces_point_along_the_field_gradient() {
    let grid = FieldGrid::sample(GridSpec::cube(40).unwrap(), 1, sphere).unwrap();
    let mesh = extract_isosurface(&grid, 0.0).unwrap();
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_vertices(f);
        let centroid = vec3::scale(vec3::add(a, vec3::add(b, c)), 1.0 / 3.0);
        assert!(vec3::dot(mesh.face_cross(f), centroid) > 0.0);
    }
}

#[test]
fn two_separate_blobs_are_closed() {
    let f = |x: &[Vec3]| -> Vec<f64> {
        x.iter()
            .map(|p| {
                let a = vec3::norm(vec3::sub(*p, [0.5, 0.0, 0.0])) - 0.3;
                let b = vec3::norm(vec3::sub(*p, [-0.5, 0.1, 0.0])) - 0.35;
                a.min(b)
            })
            .collect()
    };
    let grid = FieldGrid::sample(GridSpec::cube(33).unwrap(), 1, f).unwrap();
    let mesh = extract_isosurface(&grid, 0.0).unwrap();
    assert!(mesh.watertight);
    assert_eq!(mesh.euler_characteristic(), 4);
}

#[test]
fn saddle_heavy_field_stays_watertight() {
    // a gyroid crosses every ambiguous face configuration
    let f = |x: &[Vec3]| -> Vec<f64> {
        x.iter()
            .map(|p| {
                let s = 4.0;
                let g = (s * p[0]).sin() * (s * p[1]).cos()
                    + (s * p[1]).sin() * (s * p[2]).cos()
                    + (s * p[2]).sin() * (s * p[0]).cos();
                g.max(vec3::norm(*p) - 0.9)
            })
            .collect()
    };
    let grid = FieldGrid::sample(GridSpec::cube(29).unwrap(), 1, f).unwrap();
    // the centre node lies exactly on the level set
    assert!(grid.values.contains(&0.0));
    let mesh = extract_isosurface(&grid, 0.0).unwrap();
    assert!(mesh.watertight);
    assert!(mesh.min_face_area() > 1e-12);
}

#[test]
fn constant_field_has_no_surface() {
    let grid = FieldGrid::sample(GridSpec::cube(8).unwrap(), 1, |x| vec![1.0; x.len()]).unwrap();
    assert!(matches!(extract_isosurface(&grid, 0.0), Err(Error::EmptySurface)));
}

#[test]
fn degenerate_resolution_rejected() {
    assert!(matches!(GridSpec::cube(1), Err(Error::InvalidInput(_))));
    let m = small_model();
    assert!(marching_cubes(&m, &m.object_code(0), None, 1).is_err());
}

#[test]
fn grid_nodes_equal_pointwise_evaluation() {
    let m = small_model();
    let alpha = m.object_code(0);
    let z = vec![0.1; 6];
    let spec = GridSpec::cube(9).unwrap();
    let grid = sdf_grid(&m, &alpha, Some(&z), spec).unwrap();
    for i in [0, 1, 80, 81, 400, 728] {
        let direct = m.deformed_sdf(&z, &alpha, &[spec.position(i)]).unwrap()[0];
        assert_eq!(grid.values[i], direct, "node {i}");
    }
}

#[test]
fn plane_outside_the_cube_rejected() {
    let m = small_model();
    let plane = Plane { axis: 1, offset: 1.5 };
    let r = export_cross_section(&m, &m.object_code(0), &[0.0; 6], plane, 8);
    assert!(matches!(r, Err(Error::InvalidInput(_))));
}

#[test]
fn zero_field_cross_sections_agree() {
    let mut m = small_model();
    m.zero_deformation_output();
    let plane = Plane { axis: 1, offset: 0.0 };
    let cs = export_cross_section(&m, &m.object_code(0), &[0.2; 6], plane, 12).unwrap();
    assert_eq!(cs.deformed_sdf.values, cs.object_sdf.values);
    assert!(cs.deformation_norm.values.iter().all(|&v| v == 0.0));
    assert_eq!(cs.deformed_sdf.spec.counts, [12, 1, 12]);

    let dir = tempfile::tempdir().unwrap();
    cs.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("cross_section.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 144);
    assert!(dir.path().join("deformed_sdf.grid.json").exists());
}

#[test]
fn identical_codes_give_identity_correspondence() {
    let m = small_model();
    let alpha = m.object_code(0);
    let z = vec![0.3; 6];
    let pts = PointCloud::new((0..40).map(|i| [0.01 * i as f64, 0.2, -0.1]).collect()).unwrap();
    let pairs = correspondences(&m, &alpha, &z, &z, &pts, &CorrespondConfig::default()).unwrap();
    for c in pairs {
        assert!(c.converged);
        assert_eq!(c.delta, [0.0; 3]);
    }
}

#[test]
fn correspondence_inverts_a_known_shift() {
    let m = small_model();
    let alpha = m.object_code(0);
    let pts = PointCloud::new((0..20).map(|i| [0.03 * i as f64 - 0.3, 0.1, 0.05]).collect()).unwrap();
    let za = vec![0.0; 6];
    let zb = vec![0.5, -0.2, 0.1, 0.4, 0.0, 0.3];
    let pairs = correspondences(&m, &alpha, &za, &zb, &pts, &CorrespondConfig::default()).unwrap();
    let db = m.deformation_field(&zb, &alpha, &pairs.iter().map(|c| c.target).collect::<Vec<_>>()).unwrap();
    for (c, d) in pairs.iter().zip(db) {
        assert!(c.converged, "residual {}", c.residual);
        let back = vec3::add(c.target, d);
        assert!(vec3::norm(vec3::sub(back, c.nominal)) < 1e-5);
    }
}


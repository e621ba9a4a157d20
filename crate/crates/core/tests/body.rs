use ddt_core::body::{
    dataset_load, dataset_save, forward_kinematics, generate_dataset, generate_sequence, pose,
    project_weak_perspective, read_dataset, rot6d_to_rotmat, rotmat_to_rot6d, skin_vertices, write_dataset,
    Camera, SequenceConfig, ToyBody, IDENTITY_6D,
};
use ddt_core::metrics::accel_error;
use ddt_core::CoreError;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn close(a: Vector3<f64>, b: [f64; 3], tol: f64) -> bool {
    (a - Vector3::from(b)).norm() < tol
}

#[test]
fn rot6d_examples() {
    let id = nalgebra::Matrix3::identity();
    for r6 in [[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], [2.0, 0.0, 0.0, 0.0, 3.0, 0.0], [1.0, 0.0, 0.0, 1.0, 1.0, 0.0]] {
        assert!((rot6d_to_rotmat(&r6).unwrap() - id).norm() < 1e-15, "{r6:?}");
    }
    let parallel = rot6d_to_rotmat(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    assert!(matches!(parallel, Err(CoreError::Singular(msg)) if msg.contains("parallel")));
    assert!(matches!(rot6d_to_rotmat(&[0.0; 6]), Err(CoreError::Singular(_))));
}

#[test]
fn fk_examples() {
    let body = ToyBody::chain(&[1.0, 1.0], Vector3::x()).unwrap();
    let theta: Vec<f64> = IDENTITY_6D.repeat(3);
    let j = forward_kinematics(&body, &theta).unwrap();
    assert!(close(j[0], [0.0, 0.0, 0.0], 1e-15));
    assert!(close(j[1], [1.0, 0.0, 0.0], 1e-15));
    assert!(close(j[2], [2.0, 0.0, 0.0], 1e-15));

    let body = ToyBody::chain(&[1.0], Vector3::x()).unwrap();
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
    let mut theta = rotmat_to_rot6d(rz.matrix()).to_vec();
    theta.extend_from_slice(&IDENTITY_6D);
    let j = forward_kinematics(&body, &theta).unwrap();
    assert!(close(j[1], [0.0, 1.0, 0.0], 1e-12));

    let mut bad = IDENTITY_6D.repeat(2);
    bad[6..12].copy_from_slice(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!(matches!(forward_kinematics(&body, &bad), Err(CoreError::Singular(_))));
}

#[test]
fn skinning_examples() {
    let body = ToyBody::chain(&[2.0, 3.0], Vector3::y()).unwrap();
    let theta = IDENTITY_6D.repeat(3);
    let v = skin_vertices(&body, &theta).unwrap();
    let j = forward_kinematics(&body, &theta).unwrap();
    assert_eq!(v, j);

    let body = ToyBody::standard(8, 24).unwrap();
    let theta = IDENTITY_6D.repeat(8);
    let v = skin_vertices(&body, &theta).unwrap();
    let j = forward_kinematics(&body, &theta).unwrap();
    for (i, p) in v.iter().enumerate() {
        let expected = j[body.vertex_joint(i)] + body.vertex_offset(i);
        assert!((p - expected).norm() < 1e-12);
    }
}

#[test]
fn projection_examples() {
    let p = [Vector3::new(1.0, 1.0, 5.0), Vector3::new(-2.0, 0.5, 9.0)];
    let id = project_weak_perspective(&p, Camera { scale: 1.0, tx: 0.0, ty: 0.0 }).unwrap();
    assert_eq!(id, vec![[1.0, 1.0], [-2.0, 0.5]]);
    let uv = project_weak_perspective(&p[..1], Camera { scale: 2.0, tx: 1.0, ty: 1.0 }).unwrap();
    assert_eq!(uv, vec![[3.0, 3.0]]);
    assert!(project_weak_perspective(&p, Camera { scale: 0.0, tx: 0.0, ty: 0.0 }).is_err());
}

fn small_config() -> SequenceConfig {
    SequenceConfig { frames: 10, ..SequenceConfig::default() }
}

#[test]
fn generation_is_deterministic_and_consistent() {
    let cfg = SequenceConfig { noise_level: 0.0, ..small_config() };
    let a = generate_sequence(&cfg, 42).unwrap();
    let b = generate_sequence(&cfg, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_sequence(&cfg, 43).unwrap());
    assert_eq!(accel_error(&a.joints, &a.joints, Some(cfg.fps)).unwrap(), 0.0);

    let body = ToyBody::standard(cfg.joints, cfg.vertices).unwrap().with_lengths(&a.beta).unwrap();
    for f in 0..cfg.frames {
        let theta = &a.theta.data()[f * 48..(f + 1) * 48];
        let j = forward_kinematics(&body, theta).unwrap();
        let v = skin_vertices(&body, theta).unwrap();
        for (k, p) in j.iter().enumerate() {
            for c in 0..3 {
                assert!((a.joints.at(&[f, k, c]) - p[c]).abs() < 1e-9);
            }
        }
        for (k, p) in v.iter().enumerate() {
            for c in 0..3 {
                assert!((a.vertices.at(&[f, k, c]) - p[c]).abs() < 1e-9);
            }
        }
    }
    assert!(a.features.is_finite());
}

#[test]
fn generated_motion_is_smooth_but_nontrivial() {
    let cfg = small_config();
    let s = generate_sequence(&cfg, 1).unwrap();
    let k = cfg.joints;
    let step = |f: usize| -> f64 {
        (0..k * 3).map(|i| (s.joints.data()[(f + 1) * k * 3 + i] - s.joints.data()[f * k * 3 + i]).abs()).fold(0.0, f64::max)
    };
    let largest = (0..cfg.frames - 1).map(step).fold(0.0, f64::max);
    assert!(largest > 1.0 && largest < 200.0, "largest frame-to-frame joint step {largest} mm");
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let cfg = small_config();
    let seqs = generate_dataset(&cfg, 5, 9).unwrap();
    let mut bytes = Vec::new();
    let header = write_dataset(&mut bytes, &seqs, cfg.fps).unwrap();
    let (read_header, loaded) = read_dataset(&mut bytes.as_slice()).unwrap();
    assert_eq!(header, read_header);
    assert_eq!(read_header.fps, 25.0);
    for (orig, back) in seqs.iter().zip(&loaded) {
        let pairs = [
            (&orig.theta, &back.theta),
            (&orig.joints, &back.joints),
            (&orig.vertices, &back.vertices),
            (&orig.features, &back.features),
        ];
        for (o, b) in pairs {
            assert_eq!(o.shape(), b.shape());
            for (x, y) in o.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
                assert_eq!(*y, (*y as f32) as f64);
            }
        }
        assert_eq!(orig.beta.iter().map(|b| *b as f32).collect::<Vec<_>>(), back.beta.iter().map(|b| *b as f32).collect::<Vec<_>>());
    }
    let mut again = Vec::new();
    write_dataset(&mut again, &loaded, f64::from(read_header.fps)).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn dataset_rejects_bad_files() {
    let seqs = generate_dataset(&small_config(), 2, 1).unwrap();
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &seqs, 25.0).unwrap();

    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(read_dataset(&mut wrong.as_slice()), Err(CoreError::Format(_))));
    let mut version = bytes.clone();
    version[4] = 2;
    assert!(matches!(read_dataset(&mut version.as_slice()), Err(CoreError::Format(_))));

    let cut = bytes.len() - 10;
    match read_dataset(&mut &bytes[..cut]) {
        Err(CoreError::Corrupt { offset, .. }) => assert_eq!(offset, cut as u64),
        other => panic!("expected corruption error, got {other:?}"),
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(read_dataset(&mut long.as_slice()), Err(CoreError::Corrupt { .. })));
}

#[test]
fn dataset_file_size_accounting() {
    let cfg = SequenceConfig::default();
    let seqs = generate_dataset(&cfg, 500, 2024).unwrap();
    let dir = std::env::temp_dir().join(format!("ddts-size-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("toy.ddts");
    dataset_save(&path, &seqs, cfg.fps).unwrap();
    // 32-byte header; each record is 4·(7 + 16·(48 + 24 + 72 + 64)) = 13340 bytes.
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 32 + 500 * 13340);
    let (header, loaded) = dataset_load(&path).unwrap();
    assert_eq!(header.sequences, 500);
    assert_eq!(loaded.len(), 500);
    std::fs::remove_dir_all(&dir).unwrap();
}

fn rotation_6d() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-2.0f64..2.0).prop_filter("non-degenerate", |r| {
        let a = Vector3::new(r[0], r[1], r[2]);
        let b = Vector3::new(r[3], r[4], r[5]);
        a.norm() > 0.1 && a.cross(&b).norm() > 0.1 * a.norm() * b.norm().max(0.1)
    })
}

proptest! {
    #[test]
    fn rot6d_is_a_rotation(r6 in rotation_6d()) {
        let r = rot6d_to_rotmat(&r6).unwrap();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fk_preserves_bone_lengths(poses in prop::collection::vec(rotation_6d(), 8), scale in prop::collection::vec(0.5f64..1.5, 7)) {
        let template = ToyBody::standard(8, 24).unwrap();
        let lengths: Vec<f64> = template.bone_lengths.iter().zip(&scale).map(|(l, s)| l * s).collect();
        let body = template.with_lengths(&lengths).unwrap();
        let theta: Vec<f64> = poses.iter().flatten().copied().collect();
        let posed = pose(&body, &theta).unwrap();
        for k in 1..8 {
            let p = body.parent(k).unwrap();
            prop_assert!(((posed.joints[k] - posed.joints[p]).norm() - lengths[k - 1]).abs() < 1e-9);
        }
        let verts = skin_vertices(&body, &theta).unwrap();
        for (v, p) in verts.iter().enumerate() {
            let j = body.vertex_joint(v);
            prop_assert!(((p - posed.joints[j]).norm() - body.vertex_offset(v).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_commutes_with_translation(
        cloud in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 1..20),
        shift in prop::array::uniform3(-50.0f64..50.0),
        s in 0.1f64..3.0, tx in -10.0f64..10.0, ty in -10.0f64..10.0,
    ) {
        let cam = Camera { scale: s, tx, ty };
        let pts: Vec<Vector3<f64>> = cloud.iter().map(|p| Vector3::from(*p)).collect();
        let moved: Vec<Vector3<f64>> = pts.iter().map(|p| p + Vector3::from(shift)).collect();
        let a = project_weak_perspective(&pts, cam).unwrap();
        let b = project_weak_perspective(&moved, cam).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((q[0] - p[0] - s * shift[0]).abs() < 1e-9);
            prop_assert!((q[1] - p[1] - s * shift[1]).abs() < 1e-9);
        }
    }
}

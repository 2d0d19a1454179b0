use arbor_core::annotation::{ImageAnnotation, KeypointId};
use arbor_core::camera::{Camera, CameraSet, Extrinsics, Intrinsics, Ray};
use arbor_core::multiview::*;
use arbor_core::synthetic::{project_annotation, random_tree, ring_cameras};
use arbor_core::Vec3;
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn intrinsics() -> Intrinsics {
    Intrinsics::new(900.0, 900.0, 639.5, 479.5, 1280, 960).unwrap()
}

fn tree_scene(seed: u64) -> (Branch3D, CameraSet, Vec<ImageAnnotation>) {
    let tree = random_tree(50, seed);
    let cams = ring_cameras(6, 10.0, 3.0, Vec3::new(0.0, 0.0, 1.5), intrinsics());
    let anns = cams
        .values()
        .map(|c| project_annotation(&tree, c, &format!("img_{}", c.id)))
        .collect();
    (tree, cams, anns)
}

fn add_noise(anns: &mut [ImageAnnotation], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    for a in anns {
        for v in &mut a.vertices {
            v.x += n.sample(&mut rng);
            v.y += n.sample(&mut rng);
        }
    }
}

fn truth<'a>(tree: &'a Branch3D, id: &KeypointId) -> &'a BranchVertex {
    tree.vertices.iter().find(|v| v.keypoint.as_ref() == Some(id)).unwrap()
}

#[test]
fn tree_keypoints_exact() {
    let (tree, cams, anns) = tree_scene(11);
    for a in &anns {
        assert!(a.validate().is_empty(), "{:?}", a.validate());
    }
    let (kps, report) = triangulate_keypoints(&anns, &cams);
    assert_eq!(kps.len(), 51);
    assert!(report.is_empty(), "{report:?}");
    for kp in &kps {
        let t = truth(&tree, &kp.id);
        assert!((kp.pos() - t.position()).norm() < 1e-6);
        assert!(((kp.radius - t.thickness) / t.thickness).abs() < 1e-6);
        assert!(kp.residual < 1e-9);
    }
    let (branch, report) = transfer_topology(&anns, &kps);
    assert!(report.is_empty());
    assert_eq!(branch.edges.len(), 50);
    assert_eq!(branch.roots, vec![0]);
    let json = serde_json::to_value(&branch).unwrap();
    assert!(json["vertices"][0]["pos"].is_array());
    assert_eq!(json["edges"].as_array().unwrap().len(), 50);
}

#[test]
fn misaligned_only_keypoint_is_skipped() {
    let (_, mut cams, mut anns) = tree_scene(2);
    for c in cams.values_mut().skip(1) {
        c.aligned = false;
    }
    // A keypoint seen by every camera but only one aligned one.
    anns.truncate(6);
    let (kps, report) = triangulate_keypoints(&anns, &cams);
    assert!(kps.is_empty());
    assert_eq!(report.len(), 51);
}

#[test]
fn straight_branch_subdivision_exact() {
    // Level cameras see a vertical segment at constant depth, so image fractions match.
    let cams = ring_cameras(4, 8.0, 1.5, Vec3::new(0.0, 0.0, 1.5), intrinsics());
    let (a, b) = (Vec3::new(0.1, -0.2, 0.0), Vec3::new(0.1, -0.2, 3.0));
    let gt = Branch3D {
        vertices: vec![
            BranchVertex { id: 0, pos: a.into(), thickness: 0.2, keypoint: Some("A".into()), observations: vec![] },
            BranchVertex { id: 1, pos: b.into(), thickness: 0.1, keypoint: Some("B".into()), observations: vec![] },
        ],
        edges: vec![[0, 1]],
        roots: vec![0],
    };
    let anns: Vec<_> = cams.values().map(|c| project_annotation(&gt, c, &c.id)).collect();
    let (kps, _) = triangulate_keypoints(&anns, &cams);
    let (branch, _) = transfer_topology(&anns, &kps);
    let (sub, report) = subdivide_curves(&branch, &anns, &cams, 5);
    assert!(report.is_empty());
    assert_eq!(sub.vertices.len(), 7);
    assert_eq!(sub.edges.len(), 6);
    for v in sub.vertices.iter().filter(|v| v.keypoint.is_none()) {
        let p = v.position();
        let along = (p - a).dot(&(b - a).normalize());
        let off = ((p - a) - (b - a).normalize() * along).norm();
        assert!(off < 1e-6, "{off}");
        let f = along / (b - a).norm();
        assert!((v.thickness - (0.2 - 0.1 * f)).abs() < 1e-6);
    }
}

#[test]
fn arc_subdivision_within_half_percent() {
    // Views facing the arc's plane from well outside its depth extent. Perspective makes
    // image arc-length fractions disagree between views, which shows up as depth error.
    let tele = Intrinsics::new(1800.0, 1800.0, 639.5, 479.5, 1280, 960).unwrap();
    let target = Vec3::new(0.75, 0.0, 1.25);
    let cams: CameraSet = [(-35.0f64, 20.0f64), (35.0, 20.0), (-30.0, -15.0), (30.0, -15.0)]
    .iter()
    .map(|(az, el)| {
        let (az, el) = (az.to_radians(), el.to_radians());
        target + Vec3::new(az.sin() * el.cos(), -az.cos() * el.cos(), el.sin()) * 18.0
    })
    .enumerate()
    .map(|(i, e)| {
        let c = Camera::new(format!("f{i}"), tele, Extrinsics::look_at(&e, &target, &Vec3::z()).unwrap());
        (c.id.clone(), c)
    })
    .collect();
    let (center, radius, sweep) = (Vec3::new(0.45, 0.0, 0.95), 0.3, std::f64::consts::FRAC_PI_2);
    let arc = |t: f64| center + Vec3::new(radius * t.cos(), 0.0, radius * t.sin());
    let n = 40;
    let gt = Branch3D {
        vertices: (0..=n)
            .map(|i| BranchVertex {
                id: i,
                pos: arc(sweep * i as f64 / n as f64).into(),
                thickness: 0.05,
                keypoint: match i {
                    0 => Some("A".into()),
                    i if i == n => Some("B".into()),
                    _ => None,
                },
                observations: vec![],
            })
            .collect(),
        edges: (0..n).map(|i| [i, i + 1]).collect(),
        roots: vec![0],
    };
    let anns: Vec<_> = cams.values().map(|c| project_annotation(&gt, c, &c.id)).collect();
    let (kps, _) = triangulate_keypoints(&anns, &cams);
    let (branch, _) = transfer_topology(&anns, &kps);
    let (sub, report) = subdivide_curves(&branch, &anns, &cams, 9);
    assert!(report.is_empty());
    let length: f64 = (0..n as usize)
        .map(|i| (Vec3::from(gt.vertices[i + 1].pos) - Vec3::from(gt.vertices[i].pos)).norm())
        .sum();
    let dense: Vec<Vec3> = (0..=20000).map(|i| arc(sweep * i as f64 / 20000.0)).collect();
    let worst = sub
        .vertices
        .iter()
        .map(|v| dense.iter().map(|q| (q - v.position()).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    assert!(worst <= 0.005 * length, "{worst} vs {}", 0.005 * length);
}

#[test]
fn cylinder_radius_five_cameras() {
    let k = intrinsics();
    let eyes = [
        Vec3::new(7.0, 1.0, 2.0),
        Vec3::new(-6.0, 3.0, 1.0),
        Vec3::new(0.5, -8.0, 3.0),
        Vec3::new(4.0, 6.0, -1.0),
        Vec3::new(-3.0, -5.0, 4.0),
    ];
    let cams: CameraSet = eyes
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let c = Camera::new(format!("c{i}"), k, Extrinsics::look_at(e, &Vec3::new(0.0, 0.0, 1.0), &Vec3::z()).unwrap());
            (c.id.clone(), c)
        })
        .collect();
    let r = 0.137;
    let gt = Branch3D {
        vertices: vec![
            BranchVertex { id: 0, pos: [0.0, 0.0, 0.0], thickness: r, keypoint: Some("a".into()), observations: vec![] },
            BranchVertex { id: 1, pos: [0.0, 0.0, 2.0], thickness: r, keypoint: Some("b".into()), observations: vec![] },
        ],
        edges: vec![[0, 1]],
        roots: vec![0],
    };
    let anns: Vec<_> = cams.values().map(|c| project_annotation(&gt, c, &c.id)).collect();
    let (kps, _) = triangulate_keypoints(&anns, &cams);
    assert_eq!(kps.len(), 2);
    for kp in &kps {
        assert_eq!(kp.observations.len(), 5);
        assert!(((estimate_thickness(kp, &cams).unwrap() - r) / r).abs() < 1e-6);
    }
}

#[test]
fn clamp_keeps_reprojection() {
    // Narrow-baseline stereo pair.
    let k = intrinsics();
    let target = Vec3::new(0.0, 0.0, 1.5);
    let cams: CameraSet = [Vec3::new(-0.05, -10.0, 1.5), Vec3::new(0.05, -10.0, 1.5)]
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let c = Camera::new(format!("s{i}"), k, Extrinsics::look_at(e, &target, &Vec3::z()).unwrap());
            (c.id.clone(), c)
        })
        .collect();
    let tree = random_tree(20, 5);
    let mut anns: Vec<_> = cams.values().map(|c| project_annotation(&tree, c, &c.id)).collect();
    add_noise(&mut anns, 0.05, 9);
    let (kps, _) = triangulate_keypoints(&anns, &cams);
    let (branch, _) = transfer_topology(&anns, &kps);
    for alpha in [0.0, 0.5, 0.9, 1.0] {
        let out = clamp_narrow_baseline(&branch, branch.roots[0], &cams, alpha).unwrap();
        for v in &out.vertices {
            for o in &v.observations {
                let px = cams[&o.camera_id].project(&v.position()).unwrap();
                let err = (px - o.pixel()).norm();
                assert!(err < 0.5, "alpha {alpha} vertex {} err {err}", v.id);
            }
        }
        if alpha == 1.0 {
            for (u, w) in out.vertices.iter().zip(&branch.vertices) {
                assert!((u.position() - w.position()).norm() < 1e-12);
            }
        }
    }
}

fn scrambled_scene(noise: f64) -> (Branch3D, CameraSet, CameraSet, Vec<ImageAnnotation>) {
    let tree = random_tree(50, 21);
    let truth = ring_cameras(6, 10.0, 3.0, Vec3::new(0.0, 0.0, 1.5), intrinsics());
    let mut anns: Vec<_> = truth.values().map(|c| project_annotation(&tree, c, &c.id)).collect();
    if noise > 0.0 {
        add_noise(&mut anns, noise, 3);
    }
    let mut cams = truth.clone();
    let bad = cams.get_mut("cam03").unwrap();
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(1.0, 2.0, 0.5)), 0.4);
    bad.extrinsics = Extrinsics::new(rot.matrix() * bad.extrinsics.rotation(), bad.extrinsics.translation() + Vec3::new(0.7, -0.3, 1.1)).unwrap();
    bad.aligned = false;
    (tree, truth, cams, anns)
}

#[test]
fn reregistration_recovers_pose() {
    let (_, truth, cams, anns) = scrambled_scene(0.0);
    let (first, _) = triangulate_keypoints(&anns, &cams);
    let rr = reregister_misaligned(&first, &anns, &cams);
    let (got, want) = (&rr.cameras["cam03"], &truth["cam03"]);
    assert!(got.aligned);
    assert!((got.extrinsics.rotation() - want.extrinsics.rotation()).abs().max() < 1e-4);
    assert!((got.extrinsics.translation() - want.extrinsics.translation()).abs().max() < 1e-4);
    assert!(rr.report.iter().any(|e| matches!(e, ReportEntry::CameraReregistered { .. })));
    assert!(rr.keypoints.iter().all(|k| k.observations.len() == 6));
}

#[test]
fn second_pass_improves_accuracy() {
    let (tree, _, cams, anns) = scrambled_scene(0.5);
    let rms = |kps: &[Keypoint3D]| {
        let s: f64 = kps.iter().map(|k| (k.pos() - truth(&tree, &k.id).position()).norm_squared()).sum();
        (s / kps.len() as f64).sqrt()
    };
    let (first, _) = triangulate_keypoints(&anns, &cams);
    let rr = reregister_misaligned(&first, &anns, &cams);
    assert_eq!(rr.keypoints.len(), first.len());
    assert!(rms(&rr.keypoints) < rms(&first), "{} vs {}", rms(&rr.keypoints), rms(&first));
}

#[test]
fn reregistration_edge_cases() {
    let (_, _, cams, anns) = scrambled_scene(0.0);
    let (first, _) = triangulate_keypoints(&anns, &cams);
    // Keep only three keypoints in the misaligned image.
    let mut few = anns.clone();
    let img = few.iter_mut().find(|a| a.camera_id == "cam03").unwrap();
    for v in img.vertices.iter_mut().skip(3) {
        v.keypoint = None;
    }
    let rr = reregister_misaligned(&first, &few, &cams);
    assert!(!rr.cameras["cam03"].aligned);
    assert!(matches!(&rr.report[0], ReportEntry::CameraExcluded { shared_keypoints: 3, .. }));
    assert_eq!(rr.keypoints, first);

    let mut all_aligned = cams.clone();
    all_aligned.get_mut("cam03").unwrap().aligned = true;
    let rr = reregister_misaligned(&first, &anns, &all_aligned);
    assert_eq!(rr.keypoints, first);
    assert!(rr.report.is_empty());
}

fn rays_strategy() -> impl Strategy<Value = Vec<([f64; 3], [f64; 3])>> {
    prop::collection::vec(
        (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform3(-1.0..1.0f64)),
        3..8,
    )
}

proptest! {
    #[test]
    fn triangulation_is_order_and_rigid_invariant(
        raw in rays_strategy(),
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.0..3.0f64,
        shift in prop::array::uniform3(-3.0..3.0f64),
    ) {
        let target = Vec3::new(0.3, -0.2, 0.5);
        let rays: Vec<Ray> = raw
            .iter()
            .filter_map(|(o, jitter)| {
                let o = Vec3::from(*o) * 2.0 + Vec3::new(0.0, 0.0, 12.0);
                Ray::new(o, target + Vec3::from(*jitter) * 0.1 - o)
            })
            .collect();
        let Ok((x, res)) = triangulate_point(&rays) else { return Ok(()) };
        let mut rev = rays.clone();
        rev.reverse();
        let (y, res2) = triangulate_point(&rev).unwrap();
        prop_assert!((x - y).norm() < 1e-9 * (1.0 + x.norm()));
        prop_assert!((res - res2).abs() < 1e-9);
        let Some(axis) = Unit::try_new(Vec3::from(axis), 1e-3) else { return Ok(()) };
        let rot = Rotation3::from_axis_angle(&axis, angle);
        let t = Vec3::from(shift);
        let moved: Vec<Ray> = rays
            .iter()
            .map(|r| Ray::new(rot * r.origin() + t, rot * r.direction()).unwrap())
            .collect();
        let (z, _) = triangulate_point(&moved).unwrap();
        prop_assert!((z - (rot * x + t)).norm() < 1e-7 * (1.0 + x.norm()));
    }
}

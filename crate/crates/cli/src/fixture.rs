//! Deterministic synthetic scene: a random tree seen by a ring of cameras, with rendered
//! photographs, annotations, a surface point cloud and two offset video feeds.

use std::path::Path;

use arbor_core::annotation::{rasterize_mask, ImageAnnotation};
use arbor_core::camera::{cameras_to_json, Camera, CameraSet, Extrinsics, Intrinsics};
use arbor_core::io::{atomic_write, write_json, IoError};
use arbor_core::multiview::Branch3D;
use arbor_core::synthetic::{project_annotation, random_tree, ring_cameras};
use arbor_core::treegeom::PointCloud;
use arbor_core::{Mat3, Vec3};
use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n_edges: usize,
    pub n_cameras: usize,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    /// Camera whose stored pose is perturbed and flagged misaligned.
    pub misaligned: Option<usize>,
    pub cloud_points: usize,
    pub video_frames: usize,
    /// Frames by which feed `a` starts after feed `b`.
    pub video_offset: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 11,
            n_edges: 12,
            n_cameras: 6,
            width: 640,
            height: 560,
            fx: 900.0,
            misaligned: Some(3),
            cloud_points: 20_000,
            video_frames: 60,
            video_offset: 7,
        }
    }
}

const BARK: [[u8; 3]; 2] = [[96, 64, 40], [140, 100, 62]];

fn bark(z: f64) -> [u8; 3] {
    BARK[((z / 0.2).floor() as i64).rem_euclid(2) as usize]
}

fn png(img: image::DynamicImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("PNG encoding to memory");
    buf.into_inner()
}

pub fn scene(spec: &FixtureSpec) -> (Branch3D, CameraSet) {
    let mut tree = random_tree(spec.n_edges, spec.seed);
    for v in &mut tree.vertices {
        v.thickness *= 0.4;
    }
    let k = Intrinsics::new(
        spec.fx,
        spec.fx,
        (spec.width as f64 - 1.0) / 2.0,
        (spec.height as f64 - 1.0) / 2.0,
        spec.width,
        spec.height,
    )
    .expect("fixture intrinsics");
    let cams = ring_cameras(spec.n_cameras, 9.0, 1.8, Vec3::new(0.0, 0.0, 1.4), k);
    (tree, cams)
}

/// Photograph: sky gradient over ground, branches in banded bark.
fn render(ann: &ImageAnnotation, cam: &Camera, tree: &Branch3D) -> image::RgbImage {
    let mask = rasterize_mask(ann).expect("fixture annotation rasterizes");
    let (w, h) = (ann.width, ann.height);
    // Per-pixel band from the nearest projected vertex height.
    let proj: Vec<(f64, f64, f64)> = tree
        .vertices
        .iter()
        .map(|v| {
            let p = cam.project(&v.position()).expect("in front");
            (p.x, p.y, v.pos[2])
        })
        .collect();
    image::RgbImage::from_fn(w, h, |x, y| {
        if *mask.get(x as usize, y as usize) != 0 {
            let (fx, fy) = (x as f64, y as f64);
            let z = proj
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - fx).powi(2) + (a.1 - fy).powi(2);
                    let db = (b.0 - fx).powi(2) + (b.1 - fy).powi(2);
                    da.total_cmp(&db)
                })
                .map_or(0.0, |p| p.2);
            image::Rgb(bark(z))
        } else if y > h * 3 / 4 {
            image::Rgb([70, 110, 50])
        } else {
            let t = y as f64 / h as f64;
            image::Rgb([(150.0 + 60.0 * t) as u8, (190.0 + 40.0 * t) as u8, 235])
        }
    })
}

/// Points on the lateral surface of every edge's frustum, area-weighted.
pub fn surface_cloud(tree: &Branch3D, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segs: Vec<(Vec3, Vec3, f64, f64)> = tree
        .edges
        .iter()
        .map(|&[a, b]| {
            let (va, vb) = (tree.vertex(a).expect("edge endpoint"), tree.vertex(b).expect("edge endpoint"));
            (va.position(), vb.position(), va.thickness, vb.thickness)
        })
        .collect();
    let areas: Vec<f64> = segs.iter().map(|(a, b, ra, rb)| (b - a).norm() * (ra + rb)).collect();
    let total: f64 = areas.iter().sum();
    let (mut points, mut colors) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for ((a, b, ra, rb), area) in segs.iter().zip(&areas) {
        let count = ((area / total) * n as f64).round() as usize;
        let axis = (b - a).normalize();
        let helper = if axis.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let u = helper.cross(&axis).normalize();
        let v = axis.cross(&u);
        for _ in 0..count {
            let s: f64 = rng.random_range(0.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = ra + s * (rb - ra);
            let p = a + (b - a) * s + (u * phi.cos() + v * phi.sin()) * r;
            points.push([p.x, p.y, p.z]);
            colors.push(bark(p.z));
        }
    }
    PointCloud::new(points, colors)
}

/// Frames of feed `a` start `offset` frames after those of feed `b`.
fn video(spec: &FixtureSpec) -> (Vec<image::RgbImage>, Vec<image::RgbImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let total = spec.video_frames + spec.video_offset;
    let (mut x, mut y) = (16i32, 12i32);
    let frames: Vec<image::RgbImage> = (0..total)
        .map(|_| {
            x = (x + rng.random_range(-4..=4)).clamp(4, 27);
            y = (y + rng.random_range(-3..=3)).clamp(4, 19);
            let level: u8 = rng.random_range(40..200);
            image::RgbImage::from_fn(32, 24, |px, py| {
                if (px as i32 - x).abs() <= 3 && (py as i32 - y).abs() <= 3 {
                    image::Rgb([250, 250, 250])
                } else {
                    image::Rgb([level, level / 2, 30])
                }
            })
        })
        .collect();
    let a = frames[spec.video_offset..].to_vec();
    let b = frames[..spec.video_frames].to_vec();
    (a, b)
}

/// Writes the fixture into `dir` (inputs plus `config.json` with output `out`).
pub fn generate(dir: &Path, spec: &FixtureSpec) -> Result<(), IoError> {
    let (tree, mut cams) = scene(spec);
    let anns: Vec<(ImageAnnotation, Camera)> = cams
        .values()
        .map(|cam| {
            let ann = project_annotation(&tree, cam, &cam.id);
            for v in &ann.vertices {
                assert!(
                    v.x > 8.0 && v.y > 8.0 && v.x < spec.width as f64 - 9.0 && v.y < spec.height as f64 - 9.0,
                    "fixture vertex {} leaves image {}",
                    v.id.0,
                    cam.id
                );
            }
            (ann, cam.clone())
        })
        .collect();
    for (ann, cam) in &anns {
        write_json(&dir.join("annotations").join(format!("{}.json", ann.image_id)), ann)?;
        atomic_write(
            &dir.join("images").join(format!("{}.png", ann.image_id)),
            &png(render(ann, cam, &tree).into()),
        )?;
    }
    if let Some(i) = spec.misaligned {
        let cam = cams.values_mut().nth(i).expect("misaligned camera index");
        let tweak: Mat3 = *Rotation3::from_euler_angles(0.02, -0.015, 0.01).matrix();
        let ext = Extrinsics::new(tweak * cam.extrinsics.rotation(), cam.extrinsics.translation() + Vec3::new(0.05, -0.03, 0.04))
            .expect("rotation stays orthonormal");
        cam.extrinsics = ext;
        cam.aligned = false;
    }
    atomic_write(&dir.join("cameras.json"), cameras_to_json(&cams).as_bytes())?;
    atomic_write(&dir.join("cloud.ply"), &arbor_core::io::ply_bytes(&surface_cloud(&tree, spec.cloud_points, spec.seed)))?;
    let (va, vb) = video(spec);
    for (name, frames) in [("video_a", va), ("video_b", vb)] {
        for (i, f) in frames.into_iter().enumerate() {
            atomic_write(&dir.join(name).join(format!("frame_{i:04}.png")), &png(f.into()))?;
        }
    }
    let config = json!({
        "paths": {
            "cameras": "cameras.json",
            "annotations": "annotations",
            "images": "images",
            "cloud": "cloud.ply",
            "video_a": "video_a",
            "video_b": "video_b",
            "output": "out",
        },
        "seed": spec.seed,
        "sync": { "fps": 30.0, "max_lag": 20 },
        "dataset": { "crops_per_image": 4 },
    });
    write_json(&dir.join("config.json"), &config)
}

//! Synthetic masks and scenes with analytically known answers, for tests and fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{AnnotationVertex, ImageAnnotation, KeypointId, VertexId};
use crate::camera::{Camera, CameraSet, Extrinsics, Intrinsics};
use crate::multiview::{Branch3D, BranchVertex};
use crate::raster::Grid;
use crate::treegeom::{MeshVertex, SkinnedMesh};
use crate::{Vec2, Vec3};

/// Distance from `p` to the infinite line through `c` at angle `theta`.
pub fn line_distance(p: Vec2, c: Vec2, theta: f64) -> f64 {
    let n = Vec2::new(-theta.sin(), theta.cos());
    (p - c).dot(&n).abs()
}

/// Pixels whose centers lie within `width / 2` of the line through `center` at `theta`.
pub fn band_mask(w: usize, h: usize, center: Vec2, theta: f64, width: f64) -> Grid<u8> {
    Grid::from_fn(w, h, |x, y| {
        u8::from(line_distance(Vec2::new(x as f64, y as f64), center, theta) <= width / 2.0)
    })
}

pub fn disk_mask(w: usize, h: usize, center: Vec2, radius: f64) -> Grid<u8> {
    Grid::from_fn(w, h, |x, y| u8::from((Vec2::new(x as f64, y as f64) - center).norm() <= radius))
}

/// Centerline `y = y0 + A sin(2πx / λ)`.
pub fn sine_center(x: f64, y0: f64, amplitude: f64, wavelength: f64) -> f64 {
    y0 + amplitude * (std::f64::consts::TAU * x / wavelength).sin()
}

/// Distance from `p` to the sine centerline restricted to `x ∈ [x_range.0, x_range.1]`.
pub fn sine_distance(p: Vec2, y0: f64, amplitude: f64, wavelength: f64, x_range: (f64, f64)) -> f64 {
    let f = |x: f64| Vec2::new(x, sine_center(x, y0, amplitude, wavelength));
    // Coarse scan over the window that can possibly be closest, then golden refinement.
    let span = (p.y - y0).abs() + amplitude.abs() + 1.0;
    let lo = (p.x - span).max(x_range.0);
    let hi = (p.x + span).min(x_range.1);
    if lo > hi {
        let end = if p.x < x_range.0 { x_range.0 } else { x_range.1 };
        return (p - f(end)).norm();
    }
    let n = ((hi - lo) / 0.25).ceil().max(1.0) as usize;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let d = (p - f(x)).norm();
        if d < best.1 {
            best = (x, d);
        }
    }
    let (mut a, mut b) = ((best.0 - 0.25).max(lo), (best.0 + 0.25).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if (p - f(c)).norm() < (p - f(d)).norm() {
            b = d;
        } else {
            a = c;
        }
    }
    (p - f(0.5 * (a + b))).norm().min(best.1)
}

/// Sinusoidal band of full width `band_width` around [`sine_center`] for `x` in
/// `x_range`, with round ends. Also returns the exact distance field.
pub fn sine_band_mask(
    w: usize,
    h: usize,
    y0: f64,
    amplitude: f64,
    wavelength: f64,
    band_width: f64,
    x_range: (f64, f64),
) -> (Grid<u8>, Grid<f64>) {
    let dist = Grid::from_fn(w, h, |x, y| {
        let p = Vec2::new(x as f64, y as f64);
        if (p.y - y0).abs() > amplitude.abs() + band_width {
            f64::INFINITY
        } else {
            sine_distance(p, y0, amplitude, wavelength, x_range)
        }
    });
    (dist.map(|&d| u8::from(d <= band_width / 2.0)), dist)
}

/// `n` cameras on a horizontal circle of `radius` at height `height`, all looking at
/// `target` with world `+z` up. Ids are `cam00`, `cam01`, ...
pub fn ring_cameras(n: usize, radius: f64, height: f64, target: Vec3, intrinsics: Intrinsics) -> CameraSet {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vec3::new(radius * a.cos(), radius * a.sin(), height);
            let ext = Extrinsics::look_at(&eye, &target, &Vec3::z()).expect("eye is off the vertical through target");
            let cam = Camera::new(format!("cam{i:02}"), intrinsics, ext);
            (cam.id.clone(), cam)
        })
        .collect()
}

/// Random tree with `n_edges` edges grown upward from the origin. Every vertex is a
/// keypoint named `k000`, `k001`, ...; each vertex has at most two children and the
/// root exactly one, so all degrees stay within 3. Radii shrink toward the tips.
pub fn random_tree(n_edges: usize, seed: u64) -> Branch3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = vec![BranchVertex {
        id: 0,
        pos: [0.0, 0.0, 0.0],
        thickness: 0.12,
        keypoint: Some(KeypointId("k000".into())),
        observations: vec![],
    }];
    let mut children = vec![0usize];
    let mut edges = Vec::new();
    while edges.len() < n_edges {
        let parent = rng.random_range(0..vertices.len());
        let limit = if parent == 0 { 1 } else { 2 };
        if children[parent] >= limit {
            continue;
        }
        let p = Vec3::from(vertices[parent].pos);
        let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.3..1.5));
        let q = p + dir.normalize() * rng.random_range(0.25..0.5);
        if q.x.abs() > 2.0 || q.y.abs() > 2.0 || q.z > 4.0 {
            continue;
        }
        let id = vertices.len() as u64;
        vertices.push(BranchVertex {
            id,
            pos: q.into(),
            thickness: (vertices[parent].thickness * 0.9).max(0.01),
            keypoint: Some(KeypointId(format!("k{id:03}"))),
            observations: vec![],
        });
        children[parent] += 1;
        children.push(0);
        edges.push([parent as u64, id]);
    }
    Branch3D {
        vertices,
        edges,
        roots: vec![0],
    }
}

/// Projects a branch into a camera as an annotation: one vertex per branch vertex (same
/// id and keypoint label) with radius `r fx / depth`, one edge per branch edge.
pub fn project_annotation(branch: &Branch3D, camera: &Camera, image_id: &str) -> ImageAnnotation {
    let k = &camera.intrinsics;
    let mut ann = ImageAnnotation::new(image_id, camera.id.clone(), k.width, k.height);
    for v in &branch.vertices {
        let p = v.position();
        let px = camera.project(&p).expect("vertex in front of camera");
        ann.vertices.push(AnnotationVertex {
            id: VertexId(v.id),
            x: px.x,
            y: px.y,
            thickness: v.thickness * k.fx / camera.depth(&p),
            keypoint: v.keypoint.clone(),
        });
    }
    ann.edges = branch.edges.iter().map(|&[a, b]| [VertexId(a), VertexId(b)]).collect();
    ann
}

/// Flat `nx × ny` vertex grid in the `z = 0` plane with spacing `h`, normals `+z`.
/// Vertex `(i, j)` has index `j * nx + i`; each cell is split along its `(+1, +1)`
/// diagonal.
pub fn grid_mesh(nx: usize, ny: usize, h: f64) -> SkinnedMesh {
    let vertices = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| MeshVertex {
            pos: [i as f64 * h, j as f64 * h, 0.0],
            normal: [0.0, 0.0, 1.0],
            color: [128; 3],
            bindings: vec![],
            node: 0,
        })
        .collect();
    let mut triangles = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let v = j * nx + i;
            triangles.push([v, v + 1, v + nx + 1]);
            triangles.push([v, v + nx + 1, v + nx]);
        }
    }
    SkinnedMesh { vertices, triangles }
}

/// Straight branch between two keypoints `ka` at `a` and `kb` at `b` with constant radius.
pub fn straight_branch(a: Vec3, b: Vec3, radius: f64, ka: &str, kb: &str) -> Branch3D {
    let v = |id: u64, p: Vec3, kp: &str| BranchVertex {
        id,
        pos: p.into(),
        thickness: radius,
        keypoint: Some(KeypointId(kp.into())),
        observations: vec![],
    };
    Branch3D {
        vertices: vec![v(0, a, ka), v(1, b, kb)],
        edges: vec![[0, 1]],
        roots: vec![0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_distance_on_curve_is_zero() {
        for x in [3.0, 50.0, 117.3] {
            let p = Vec2::new(x, sine_center(x, 40.0, 20.0, 200.0));
            assert!(sine_distance(p, 40.0, 20.0, 200.0, (0.0, 200.0)) < 1e-9);
        }
        // Beyond the end cap: distance to the endpoint.
        let d = sine_distance(Vec2::new(-3.0, 40.0), 40.0, 20.0, 200.0, (0.0, 200.0));
        assert!((d - 3.0).abs() < 1e-9);
    }

    #[test]
    fn band_widths() {
        let m = band_mask(40, 40, Vec2::new(20.0, 20.0), 0.0, 6.0);
        assert_eq!((0..40).filter(|&y| *m.get(5, y) != 0).count(), 7);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{epipolar_line, fundamental_matrix, Camera, CameraError};
use crate::{Vec2, Vec3};

use super::{ImageAnnotation, VertexId};

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("camera {0} is marked misaligned")]
    NotAligned(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("vertex {0} has no epipolar constraint")]
    Unconstrained(VertexId),
}

/// An annotation copied into a partner image, each vertex carrying its epipolar line
/// `[a, b, c]` with `a² + b² = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoDraft {
    pub annotation: ImageAnnotation,
    pub lines: BTreeMap<VertexId, [f64; 3]>,
}

fn closest_on_line(l: &Vec3, p: &Vec2) -> Vec2 {
    let n = Vec2::new(l.x, l.y);
    p - n * (n.dot(p) + l.z)
}

impl StereoDraft {
    /// Moves a vertex by `s` pixels along its epipolar line.
    pub fn slide(&mut self, vertex: VertexId, s: f64) -> Result<Vec2, StereoError> {
        let l = self.lines.get(&vertex).ok_or(StereoError::Unconstrained(vertex))?;
        let v = self
            .annotation
            .vertices
            .iter_mut()
            .find(|v| v.id == vertex)
            .ok_or(StereoError::Unconstrained(vertex))?;
        let dir = Vec2::new(-l[1], l[0]);
        let p = closest_on_line(&Vec3::from(*l), &v.pos()) + dir * s;
        v.x = p.x;
        v.y = p.y;
        Ok(p)
    }
}

/// Copies `ann` (drawn in `cam1`) into `cam2`'s image: topology, thicknesses and
/// keypoints are kept verbatim and each vertex starts at the point of its epipolar line
/// closest to its source position.
pub fn epipolar_transfer(
    ann: &ImageAnnotation,
    cam1: &Camera,
    cam2: &Camera,
    target_image_id: &str,
) -> Result<StereoDraft, StereoError> {
    for cam in [cam1, cam2] {
        if !cam.aligned {
            return Err(StereoError::NotAligned(cam.id.clone()));
        }
    }
    let f = fundamental_matrix(cam1, cam2)?;
    let mut out = ImageAnnotation {
        image_id: target_image_id.to_owned(),
        camera_id: cam2.id.clone(),
        width: cam2.intrinsics.width,
        height: cam2.intrinsics.height,
        vertices: Vec::with_capacity(ann.vertices.len()),
        edges: ann.edges.clone(),
    };
    let mut lines = BTreeMap::new();
    for v in &ann.vertices {
        let mut nv = v.clone();
        // The source pixel is the epipole itself only in degenerate setups; keep it in place.
        if let Some(l) = epipolar_line(&f, &v.pos()) {
            let p = closest_on_line(&l, &v.pos());
            nv.x = p.x;
            nv.y = p.y;
            lines.insert(v.id, [l.x, l.y, l.z]);
        }
        out.vertices.push(nv);
    }
    Ok(StereoDraft { annotation: out, lines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Extrinsics, Intrinsics};
    use crate::Mat3;
    use nalgebra::{Rotation3, Vector3};

    fn intr() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn rectified_pair_keeps_positions() {
        let c1 = Camera::new("l", intr(), Extrinsics::identity());
        let c2 = Camera::new("r", intr(), Extrinsics::new(Mat3::identity(), Vector3::new(-0.2, 0.0, 0.0)).unwrap());
        let mut ann = ImageAnnotation::new("a", "l", 640, 480);
        ann.add_polyline(&[(100.0, 50.0, 2.0), (200.0, 80.5, 3.0), (260.0, 300.0, 1.0)]);
        let draft = epipolar_transfer(&ann, &c1, &c2, "b").unwrap();
        assert_eq!(draft.annotation.edges, ann.edges);
        for (a, b) in ann.vertices.iter().zip(&draft.annotation.vertices) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            assert_eq!(a.thickness, b.thickness);
        }
    }

    #[test]
    fn slid_vertices_stay_on_their_lines() {
        let c1 = Camera::new("l", intr(), Extrinsics::identity());
        let rot = Rotation3::from_euler_angles(0.05, -0.2, 0.1);
        let c2 = Camera::new("r", intr(), Extrinsics::new(*rot.matrix(), Vector3::new(-0.5, 0.1, 0.2)).unwrap());
        let mut ann = ImageAnnotation::new("a", "l", 640, 480);
        let ids = ann.add_polyline(&[(100.0, 50.0, 2.0), (400.0, 380.0, 3.0)]);
        let mut draft = epipolar_transfer(&ann, &c1, &c2, "b").unwrap();
        for s in [-120.0, -3.5, 0.0, 0.25, 77.0] {
            for id in &ids {
                let p = draft.slide(*id, s).unwrap();
                let l = draft.lines[id];
                assert!((l[0] * p.x + l[1] * p.y + l[2]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_annotation_gives_empty_draft() {
        let c1 = Camera::new("l", intr(), Extrinsics::identity());
        let c2 = Camera::new("r", intr(), Extrinsics::new(Mat3::identity(), Vector3::new(-0.2, 0.0, 0.0)).unwrap());
        let draft = epipolar_transfer(&ImageAnnotation::new("a", "l", 640, 480), &c1, &c2, "b").unwrap();
        assert!(draft.annotation.vertices.is_empty() && draft.lines.is_empty());
    }

    #[test]
    fn misaligned_and_coincident_rejected() {
        let c1 = Camera::new("l", intr(), Extrinsics::identity());
        let mut c2 = c1.clone();
        c2.id = "r".into();
        let ann = ImageAnnotation::new("a", "l", 640, 480);
        assert!(matches!(
            epipolar_transfer(&ann, &c1, &c2, "b"),
            Err(StereoError::Camera(CameraError::CoincidentCenters))
        ));
        c2.aligned = false;
        assert!(matches!(epipolar_transfer(&ann, &c1, &c2, "b"), Err(StereoError::NotAligned(_))));
    }
}

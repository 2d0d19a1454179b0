use std::collections::BTreeMap;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PointCloud, SkinnedMesh, TreeSkeleton, TreegeomError};
use crate::annotation::{ImageAnnotation, KeypointCurve, KeypointId};
use crate::camera::CameraSet;
use crate::spatial::PointIndex;
use crate::Vec3;

/// Colors every vertex with its nearest cloud point's color (no blending).
pub fn texture_nearest(mesh: &SkinnedMesh, cloud: &PointCloud) -> Result<Vec<[u8; 3]>, TreegeomError> {
    let index = PointIndex::new(&cloud.positions()).ok_or(TreegeomError::EmptyCloud)?;
    Ok(mesh
        .vertices
        .par_iter()
        .map(|v| cloud.colors[index.nearest(&v.position()).0])
        .collect())
}

/// View quality of a camera for a surface point: `max(0, n̂·v̂) / (1 + d²)` with `v̂` the
/// unit vector toward the camera and `d` its distance.
pub fn quality(normal: &Vec3, point: &Vec3, camera_center: &Vec3) -> f64 {
    let to_cam = camera_center - point;
    let d = to_cam.norm();
    let (Some(n), Some(v)) = (normal.try_normalize(0.0), to_cam.try_normalize(0.0)) else {
        return 0.0;
    };
    n.dot(&v).max(0.0) / (1.0 + d * d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureResult {
    pub colors: Vec<Option<[u8; 3]>>,
    pub uncolored: Vec<usize>,
}

/// Colors vertices from annotated photographs.
///
/// A vertex inherits its skeleton node's keypoint span. In each image with an aligned
/// camera and a curve for that span, the sample sits at the span fraction along the
/// curve, offset along the curve normal by the vertex's fractional position across the
/// branch (its projected offset from the axis over the projected node radius) times the
/// annotated radius. The sample from the camera with the highest [`quality`] wins;
/// vertices without a positive-quality sample stay uncolored.
pub fn texture_from_images(
    mesh: &SkinnedMesh,
    skeleton: &TreeSkeleton,
    annotations: &[ImageAnnotation],
    cameras: &CameraSet,
    images: &BTreeMap<String, RgbImage>,
) -> TextureResult {
    let index = skeleton.index();
    type CurveMap = BTreeMap<(KeypointId, KeypointId), KeypointCurve>;
    let views: Vec<(&ImageAnnotation, CurveMap)> = annotations
        .iter()
        .filter(|a| cameras.get(&a.camera_id).is_some_and(|c| c.aligned) && images.contains_key(&a.image_id))
        .map(|a| {
            let mut m = CurveMap::new();
            for c in a.keypoint_curves() {
                m.entry((c.from.clone(), c.to.clone())).or_insert(c);
            }
            (a, m)
        })
        .collect();
    let colors: Vec<Option<[u8; 3]>> = mesh
        .vertices
        .par_iter()
        .map(|v| {
            let node = &skeleton.nodes[*index.get(&v.node)?];
            let span = node.span.as_ref()?;
            let x = v.position();
            let center = node.position();
            let mut best: Option<(f64, [u8; 3])> = None;
            for (ann, curves) in &views {
                let (curve, f) = if span.from <= span.to {
                    (curves.get(&(span.from.clone(), span.to.clone())), span.fraction)
                } else {
                    (curves.get(&(span.to.clone(), span.from.clone())), 1.0 - span.fraction)
                };
                let Some(curve) = curve else { continue };
                let cam = &cameras[&ann.camera_id];
                let q = quality(&v.normal(), &x, &cam.center());
                if q <= 0.0 || best.is_some_and(|(bq, _)| bq >= q) {
                    continue;
                }
                let (Ok(cx), Ok(px)) = (cam.project(&center), cam.project(&x)) else {
                    continue;
                };
                let r_pred = node.radius * cam.intrinsics.fx / cam.depth(&center);
                let (p, r) = curve.at_fraction(f);
                let n = curve.normal_at_fraction(f);
                let t = if r_pred > 0.0 { ((px - cx).dot(&n) / r_pred).clamp(-1.0, 1.0) } else { 0.0 };
                let s = p + n * (t * r);
                let img = &images[&ann.image_id];
                let (ix, iy) = (s.x.round(), s.y.round());
                if ix < 0.0 || iy < 0.0 || ix >= f64::from(img.width()) || iy >= f64::from(img.height()) {
                    continue;
                }
                best = Some((q, img.get_pixel(ix as u32, iy as u32).0));
            }
            best.map(|b| b.1)
        })
        .collect();
    let uncolored = colors.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| i).collect();
    TextureResult { colors, uncolored }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_prefers_near_and_facing() {
        let n = Vec3::x();
        let p = Vec3::zeros();
        assert!(quality(&n, &p, &Vec3::new(2.0, 0.0, 0.0)) > quality(&n, &p, &Vec3::new(4.0, 0.0, 0.0)));
        assert_eq!(quality(&n, &p, &Vec3::new(-2.0, 0.0, 0.0)), 0.0);
        assert_eq!(quality(&n, &p, &Vec3::new(0.0, 3.0, 0.0)), 0.0);
    }

    #[test]
    fn nearest_point_colors() {
        let mesh = SkinnedMesh {
            vertices: [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 1.0, 0.0]]
                .iter()
                .map(|p| super::super::MeshVertex {
                    pos: *p,
                    normal: [0.0, 0.0, 1.0],
                    color: [0; 3],
                    bindings: vec![],
                    node: 0,
                })
                .collect(),
            triangles: vec![],
        };
        let cloud = PointCloud::new(vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]], vec![[255, 0, 0], [0, 0, 255]]);
        assert_eq!(texture_nearest(&mesh, &cloud).unwrap(), vec![[255, 0, 0], [0, 0, 255], [0, 0, 255]]);
        assert_eq!(texture_nearest(&mesh, &PointCloud::default()), Err(TreegeomError::EmptyCloud));
    }
}

use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use super::{Keypoint3D, MultiviewError, Observation, ReportEntry};
use crate::annotation::{ImageAnnotation, KeypointId};
use crate::camera::{CameraSet, Ray};
use crate::{Mat3, Vec3};

/// Smallest accepted ratio of the extreme eigenvalues of `Σ (I − d dᵀ)`.
pub const CONDITION_LIMIT: f64 = 1e-8;

/// Observing cameras of a keypoint should span at least this angle (degrees).
pub const MIN_VIEWPOINT_SPREAD_DEG: f64 = 10.0;

/// Least-squares intersection of rays: the point minimizing the summed squared
/// perpendicular distances. Returns the point and the RMS distance.
pub fn triangulate_point(rays: &[Ray]) -> Result<(Vec3, f64), MultiviewError> {
    if rays.len() < 2 {
        return Err(MultiviewError::TooFewRays(rays.len()));
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for r in rays {
        let d = r.direction();
        let p = Mat3::identity() - d * d.transpose();
        a += p;
        b += p * r.origin();
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min / max < CONDITION_LIMIT {
        return Err(MultiviewError::DegenerateRays);
    }
    let x = a.cholesky().ok_or(MultiviewError::DegenerateRays)?.solve(&b);
    let ss: f64 = rays.iter().map(|r| r.distance_to(&x).powi(2)).sum();
    Ok((x, (ss / rays.len() as f64).sqrt()))
}

/// World radius from one sighting: `r_c` pixels scaled by the ratio of the distance to the
/// plane intersection and the distance to the annotated image-plane point.
pub fn similar_triangles_radius(annotation_distance: f64, plane_distance: f64, radius_px: f64) -> f64 {
    plane_distance / annotation_distance * radius_px
}

/// Mean over observing cameras of the similar-triangles radius.
///
/// The annotated point is placed on the image plane at distance `fx` (pixel units, with the
/// vertical offset rescaled by `fx / fy`), and its ray from the optical center is cut by the
/// plane through the keypoint parallel to that camera's image plane.
pub fn estimate_thickness(kp: &Keypoint3D, cameras: &CameraSet) -> Result<f64, MultiviewError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for obs in &kp.observations {
        let Some(cam) = cameras.get(&obs.camera_id).filter(|c| c.aligned) else {
            continue;
        };
        let k = &cam.intrinsics;
        let on_plane = Vec3::new(obs.pixel[0] - k.cx, (obs.pixel[1] - k.cy) * k.fx / k.fy, k.fx);
        let ray = cam.pixel_ray(&obs.pixel());
        let Ok(hit) = cam.parallel_plane_intersect(&ray, &kp.pos()) else {
            continue;
        };
        sum += similar_triangles_radius(on_plane.norm(), (hit - cam.center()).norm(), obs.radius_px);
        n += 1;
    }
    if n == 0 {
        return Err(MultiviewError::NoObservations(kp.id.clone()));
    }
    Ok(sum / n as f64)
}

/// Largest angle (degrees) between directions from `x` to the observing camera centers.
fn viewpoint_spread(x: &Vec3, centers: &[Vec3]) -> f64 {
    let dirs: Vec<Vec3> = centers.iter().filter_map(|c| (c - x).try_normalize(0.0)).collect();
    let mut best = 0.0f64;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.max(dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos().to_degrees());
        }
    }
    best
}

/// Triangulates every keypoint labeled in at least two images from aligned cameras.
///
/// Results are sorted by keypoint id and carry estimated radii. Keypoints with fewer
/// observations, degenerate ray bundles or no radius estimate are skipped and reported.
pub fn triangulate_keypoints(
    annotations: &[ImageAnnotation],
    cameras: &CameraSet,
) -> (Vec<Keypoint3D>, Vec<ReportEntry>) {
    let mut report = Vec::new();
    let mut aligned: BTreeMap<KeypointId, Vec<Observation>> = BTreeMap::new();
    let mut all_ids: BTreeMap<KeypointId, usize> = BTreeMap::new();
    for ann in annotations {
        let cam = cameras.get(&ann.camera_id);
        if cam.is_none() {
            report.push(ReportEntry::UnknownCamera {
                image_id: ann.image_id.clone(),
                camera_id: ann.camera_id.clone(),
            });
        }
        for v in &ann.vertices {
            let Some(kp) = &v.keypoint else { continue };
            *all_ids.entry(kp.clone()).or_default() += 1;
            if cam.is_some_and(|c| c.aligned) {
                aligned.entry(kp.clone()).or_default().push(Observation {
                    camera_id: ann.camera_id.clone(),
                    image_id: ann.image_id.clone(),
                    pixel: [v.x, v.y],
                    radius_px: v.thickness,
                });
            }
        }
    }
    let jobs: Vec<(KeypointId, Vec<Observation>)> = all_ids
        .keys()
        .map(|id| (id.clone(), aligned.remove(id).unwrap_or_default()))
        .collect();
    let results: Vec<Result<(Keypoint3D, Option<ReportEntry>), ReportEntry>> = jobs
        .into_par_iter()
        .map(|(id, observations)| {
            let skip = |reason: &str, n: usize| ReportEntry::KeypointSkipped {
                keypoint: id.clone(),
                aligned_observations: n,
                reason: reason.to_owned(),
            };
            let n = observations.len();
            if n < 2 {
                return Err(skip("fewer than 2 aligned observations", n));
            }
            let rays: Vec<Ray> = observations
                .iter()
                .map(|o| cameras[&o.camera_id].pixel_ray(&o.pixel()))
                .collect();
            let (x, residual) = match triangulate_point(&rays) {
                Ok(r) => r,
                Err(e) => return Err(skip(&e.to_string(), n)),
            };
            let mut kp = Keypoint3D {
                id: id.clone(),
                position: x.into(),
                radius: 0.0,
                residual,
                observations,
            };
            kp.radius = match estimate_thickness(&kp, cameras) {
                Ok(r) => r,
                Err(e) => return Err(skip(&e.to_string(), n)),
            };
            let centers: Vec<Vec3> = kp.observations.iter().map(|o| cameras[&o.camera_id].center()).collect();
            let spread = viewpoint_spread(&x, &centers);
            let lint = (spread < MIN_VIEWPOINT_SPREAD_DEG).then(|| ReportEntry::LowViewpointDiversity {
                keypoint: id.clone(),
                spread_deg: spread,
            });
            Ok((kp, lint))
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        match r {
            Ok((kp, lint)) => {
                out.push(kp);
                report.extend(lint);
            }
            Err(entry) => report.push(entry),
        }
    }
    (out, report)
}

use std::collections::BTreeMap;

use super::{triangulate_keypoints, Keypoint3D, ReportEntry};
use crate::annotation::{ImageAnnotation, KeypointId};
use crate::camera::CameraSet;
use crate::pnp::{solve_pnp, Correspondence, MIN_CORRESPONDENCES};
use crate::Vec2;

#[derive(Debug, Clone)]
pub struct Reregistration {
    pub cameras: CameraSet,
    pub keypoints: Vec<Keypoint3D>,
    pub report: Vec<ReportEntry>,
}

/// Recovers poses of cameras flagged misaligned from first-pass keypoints, then
/// triangulates again with every aligned camera.
///
/// A misaligned camera needs at least [`MIN_CORRESPONDENCES`] keypoints shared with the
/// first pass. On success its extrinsics are replaced and it is marked aligned; otherwise
/// it stays excluded. Without any recovered camera the first pass is returned unchanged.
pub fn reregister_misaligned(
    first_pass: &[Keypoint3D],
    annotations: &[ImageAnnotation],
    cameras: &CameraSet,
) -> Reregistration {
    let known: BTreeMap<&KeypointId, &Keypoint3D> = first_pass.iter().map(|k| (&k.id, k)).collect();
    let mut out = cameras.clone();
    let mut report = Vec::new();
    let mut recovered = false;
    for (id, cam) in cameras.iter().filter(|(_, c)| !c.aligned) {
        let mut corr: BTreeMap<&KeypointId, Correspondence> = BTreeMap::new();
        for ann in annotations.iter().filter(|a| &a.camera_id == id) {
            for v in &ann.vertices {
                if let Some(kp) = v.keypoint.as_ref().and_then(|k| known.get(k)) {
                    corr.entry(&kp.id).or_insert((kp.pos(), Vec2::new(v.x, v.y)));
                }
            }
        }
        let shared = corr.len();
        if shared < MIN_CORRESPONDENCES {
            report.push(ReportEntry::CameraExcluded {
                camera_id: id.clone(),
                shared_keypoints: shared,
                reason: format!("needs at least {MIN_CORRESPONDENCES} shared keypoints"),
            });
            continue;
        }
        let corr: Vec<Correspondence> = corr.into_values().collect();
        match solve_pnp(&corr, &cam.intrinsics) {
            Ok(sol) => {
                let c = out.get_mut(id).unwrap();
                c.extrinsics = sol.extrinsics;
                c.aligned = true;
                recovered = true;
                report.push(ReportEntry::CameraReregistered {
                    camera_id: id.clone(),
                    shared_keypoints: shared,
                    rms_px: sol.rms,
                });
            }
            Err(e) => report.push(ReportEntry::CameraExcluded {
                camera_id: id.clone(),
                shared_keypoints: shared,
                reason: e.to_string(),
            }),
        }
    }
    let keypoints = if recovered {
        let (kps, second) = triangulate_keypoints(annotations, &out);
        report.extend(second);
        kps
    } else {
        first_pass.to_vec()
    };
    Reregistration {
        cameras: out,
        keypoints,
        report,
    }
}

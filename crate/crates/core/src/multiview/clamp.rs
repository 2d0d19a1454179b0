use std::collections::{BTreeMap, VecDeque};

use super::{Branch3D, MultiviewError};
use crate::camera::CameraSet;
use crate::Vec3;

pub const DEFAULT_CLAMP_FRACTION: f64 = 0.9;

/// Pulls each vertex toward its parent's depth while keeping it on its annotation rays.
///
/// Vertices are visited breadth-first from `root`. For a child `c` at `c_x` with an already
/// clamped parent `p`, each aligned camera that observes `c` gives `c′`, the intersection of
/// the ray through the annotated pixel with the plane through `p` parallel to the image
/// plane, and the candidate `c′ + α (c_x − c′)`. The child moves to the mean candidate.
/// Children without usable observations keep their position. Vertices not reachable
/// from `root` are untouched. `α = 1` returns the branch unchanged.
pub fn clamp_narrow_baseline(
    branch: &Branch3D,
    root: u64,
    cameras: &CameraSet,
    alpha: f64,
) -> Result<Branch3D, MultiviewError> {
    let index = branch.index();
    if !index.contains_key(&root) {
        return Err(MultiviewError::UnknownVertex(root));
    }
    if alpha == 1.0 {
        return Ok(branch.clone());
    }
    let adj = branch.adjacency();
    let mut out = branch.clone();
    let mut parent: BTreeMap<u64, u64> = BTreeMap::new();
    let mut queue = VecDeque::from([root]);
    parent.insert(root, root);
    while let Some(p) = queue.pop_front() {
        let anchor = out.vertices[index[&p]].position();
        for &c in &adj[&p] {
            if parent[&p] == c && c != p {
                continue;
            }
            if parent.contains_key(&c) {
                return Err(MultiviewError::CycleDetected(c));
            }
            parent.insert(c, p);
            queue.push_back(c);
            let v = &branch.vertices[index[&c]];
            let cx = v.position();
            let candidates: Vec<Vec3> = v
                .observations
                .iter()
                .filter_map(|o| {
                    let cam = cameras.get(&o.camera_id).filter(|cam| cam.aligned)?;
                    let ray = cam.pixel_ray(&o.pixel());
                    let cp = cam.parallel_plane_intersect(&ray, &anchor).ok()?;
                    Some(cp + (cx - cp) * alpha)
                })
                .collect();
            if !candidates.is_empty() {
                let mean = candidates.iter().sum::<Vec3>() / candidates.len() as f64;
                out.vertices[index[&c]].pos = mean.into();
            }
        }
    }
    Ok(out)
}

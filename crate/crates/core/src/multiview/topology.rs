use std::collections::{BTreeMap, BTreeSet};

use super::{triangulate_point, Branch3D, BranchVertex, Keypoint3D, Observation, ReportEntry};
use crate::annotation::{ImageAnnotation, KeypointCurve, KeypointId};
use crate::camera::{CameraSet, Ray};
use crate::Vec3;

/// Keypoint pairs joined by a curve in any annotation, as sorted pairs.
fn curve_pairs(annotations: &[ImageAnnotation]) -> BTreeSet<(KeypointId, KeypointId)> {
    annotations
        .iter()
        .flat_map(|a| a.keypoint_curves())
        .filter(|c| c.from != c.to)
        .map(|c| if c.from < c.to { (c.from, c.to) } else { (c.to, c.from) })
        .collect()
}

/// One vertex per triangulated keypoint (ids in keypoint order) joined wherever some
/// annotation has a curve between the two keypoints. Roots are the lowest vertex of each
/// component. Keypoints left without edges are reported.
pub fn transfer_topology(annotations: &[ImageAnnotation], keypoints: &[Keypoint3D]) -> (Branch3D, Vec<ReportEntry>) {
    let mut branch = Branch3D {
        vertices: keypoints
            .iter()
            .enumerate()
            .map(|(i, kp)| BranchVertex {
                id: i as u64,
                pos: kp.position,
                thickness: kp.radius,
                keypoint: Some(kp.id.clone()),
                observations: kp.observations.clone(),
            })
            .collect(),
        edges: Vec::new(),
        roots: Vec::new(),
    };
    branch = merge_topology(&branch, annotations);
    let used: BTreeSet<u64> = branch.edges.iter().flatten().copied().collect();
    let report = branch
        .vertices
        .iter()
        .filter(|v| !used.contains(&v.id))
        .map(|v| ReportEntry::EdgelessKeypoint {
            keypoint: v.keypoint.clone().unwrap(),
        })
        .collect();
    branch.assign_lowest_roots();
    (branch, report)
}

/// Adds an edge between keypoint-sourced vertices for every annotated curve joining their
/// keypoints. Existing edges and roots are kept; applying it twice changes nothing.
pub fn merge_topology(branch: &Branch3D, annotations: &[ImageAnnotation]) -> Branch3D {
    let by_kp: BTreeMap<&KeypointId, u64> = branch
        .vertices
        .iter()
        .filter_map(|v| v.keypoint.as_ref().map(|k| (k, v.id)))
        .collect();
    let mut out = branch.clone();
    for (a, b) in curve_pairs(annotations) {
        if let (Some(&ia), Some(&ib)) = (by_kp.get(&a), by_kp.get(&b)) {
            out.edges.push([ia, ib]);
        }
    }
    out.normalize_edges();
    out
}

/// Inserts `n_sub` vertices along every edge joining two keypoint-sourced vertices.
///
/// The vertex at fraction `f = i / (n_sub + 1)` is triangulated from the points at
/// fraction `f` of arc length along each aligned image curve between the two keypoints.
/// With fewer than two curves, or a degenerate ray bundle, it falls back to linear
/// interpolation of the endpoints and the fallback is reported. Radii are interpolated
/// linearly between the endpoints.
pub fn subdivide_curves(
    branch: &Branch3D,
    annotations: &[ImageAnnotation],
    cameras: &CameraSet,
    n_sub: usize,
) -> (Branch3D, Vec<ReportEntry>) {
    if n_sub == 0 {
        return (branch.clone(), Vec::new());
    }
    let mut curves: BTreeMap<(KeypointId, KeypointId), Vec<(String, String, KeypointCurve)>> = BTreeMap::new();
    for ann in annotations {
        if !cameras.get(&ann.camera_id).is_some_and(|c| c.aligned) {
            continue;
        }
        let mut seen = BTreeSet::new();
        for c in ann.keypoint_curves() {
            let key = (c.from.clone(), c.to.clone());
            // One curve per image and pair.
            if seen.insert(key.clone()) {
                curves
                    .entry(key)
                    .or_default()
                    .push((ann.camera_id.clone(), ann.image_id.clone(), c));
            }
        }
    }
    let index = branch.index();
    let mut out = branch.clone();
    out.edges.clear();
    let mut next = branch.next_id();
    let mut report = Vec::new();
    let mut edges = branch.edges.clone();
    edges.sort_unstable();
    for [ia, ib] in edges {
        let (Some(&i), Some(&j)) = (index.get(&ia), index.get(&ib)) else {
            continue;
        };
        let (va, vb) = (&branch.vertices[i], &branch.vertices[j]);
        let (Some(ka), Some(kb)) = (&va.keypoint, &vb.keypoint) else {
            out.edges.push([ia, ib]);
            continue;
        };
        // Curves oriented from `va` to `vb`.
        let oriented: Vec<(&str, &str, KeypointCurve)> = if ka <= kb {
            curves.get(&(ka.clone(), kb.clone()))
        } else {
            curves.get(&(kb.clone(), ka.clone()))
        }
        .map(|list| {
            list.iter()
                .map(|(cam, img, c)| (cam.as_str(), img.as_str(), if ka <= kb { c.clone() } else { c.reversed() }))
                .collect()
        })
        .unwrap_or_default();
        let mut prev = ia;
        for s in 1..=n_sub {
            let f = s as f64 / (n_sub + 1) as f64;
            let observations: Vec<Observation> = oriented
                .iter()
                .map(|(cam, img, c)| {
                    let (p, r) = c.at_fraction(f);
                    Observation {
                        camera_id: (*cam).to_owned(),
                        image_id: (*img).to_owned(),
                        pixel: [p.x, p.y],
                        radius_px: r,
                    }
                })
                .collect();
            let rays: Vec<Ray> = observations
                .iter()
                .map(|o| cameras[&o.camera_id].pixel_ray(&o.pixel()))
                .collect();
            let lerp = va.position() + (vb.position() - va.position()) * f;
            let pos: Vec3 = match triangulate_point(&rays) {
                Ok((x, _)) => x,
                Err(_) => {
                    report.push(ReportEntry::SubdivisionFallback {
                        edge: [ia, ib],
                        fraction: f,
                        views: rays.len(),
                    });
                    lerp
                }
            };
            out.vertices.push(BranchVertex {
                id: next,
                pos: pos.into(),
                thickness: va.thickness + (vb.thickness - va.thickness) * f,
                keypoint: None,
                observations,
            });
            out.edges.push([prev, next]);
            prev = next;
            next += 1;
        }
        out.edges.push([prev, ib]);
    }
    out.normalize_edges();
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ImageAnnotation;

    fn ann(image: &str, curves: &[(&str, &str)]) -> ImageAnnotation {
        let mut a = ImageAnnotation::new(image, "c", 100, 100);
        for (k, (from, to)) in curves.iter().enumerate() {
            let y = 10.0 * k as f64 + 5.0;
            let ids = a.add_polyline(&[(5.0, y, 2.0), (20.0, y, 2.0), (40.0, y, 2.0)]);
            a.set_keypoint(ids[0], *from).unwrap();
            a.set_keypoint(ids[2], *to).unwrap();
        }
        a
    }

    fn kp(id: &str, z: f64) -> Keypoint3D {
        Keypoint3D {
            id: id.into(),
            position: [0.0, 0.0, z],
            radius: 0.1,
            residual: 0.0,
            observations: vec![],
        }
    }

    #[test]
    fn union_and_idempotence() {
        let anns = [ann("1", &[("A", "B")]), ann("2", &[("B", "A"), ("C", "D")])];
        let kps = [kp("A", 1.0), kp("B", 0.0), kp("C", 2.0), kp("E", 3.0)];
        let (b, report) = transfer_topology(&anns, &kps);
        assert_eq!(b.edges, vec![[0, 1]]);
        assert_eq!(b.roots, vec![1, 2, 3]);
        assert_eq!(report.len(), 2);
        assert_eq!(merge_topology(&b, &anns), b);
        assert_eq!(merge_topology(&merge_topology(&b, &anns), &anns), b);
    }

    #[test]
    fn zero_subdivision_is_identity() {
        let anns = [ann("1", &[("A", "B")])];
        let (b, _) = transfer_topology(&anns, &[kp("A", 1.0), kp("B", 0.0)]);
        let (s, r) = subdivide_curves(&b, &anns, &CameraSet::new(), 0);
        assert_eq!(s, b);
        assert!(r.is_empty());
    }

    #[test]
    fn missing_views_fall_back_to_lerp() {
        let anns = [ann("1", &[("A", "B")])];
        let (b, _) = transfer_topology(&anns, &[kp("A", 1.0), kp("B", 0.0)]);
        let (s, r) = subdivide_curves(&b, &anns, &CameraSet::new(), 3);
        assert_eq!(s.vertices.len(), 5);
        assert_eq!(s.edges.len(), 4);
        assert_eq!(r.len(), 3);
        let mid = s.vertex(3).unwrap();
        assert!((mid.pos[2] - 0.5).abs() < 1e-12);
    }
}

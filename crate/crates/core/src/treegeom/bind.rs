use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{SkinnedMesh, TreeSkeleton, TreegeomError};
use crate::{Mat3, Vec3};

/// Distance from `p` to segment `ab` and the clamped parameter of the closest point.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    let d = b - a;
    let len2 = d.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((a + d * s - p).norm(), s)
}

/// Local frame of the segment `a → b`: origin `a`, rotation columns `(u, v, axis)` with
/// `u = normalize(z × axis)` (x-axis when the segment is vertical).
pub fn edge_frame(a: &Vec3, b: &Vec3) -> (Vec3, Mat3) {
    let t = (b - a).try_normalize(0.0).unwrap_or_else(Vec3::z);
    let u = Vec3::z().cross(&t);
    let u = if u.norm() > 1e-9 { u.normalize() } else { Vec3::x().cross(&t).normalize() };
    let v = t.cross(&u);
    (*a, Mat3::from_columns(&[u, v, t]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointBinding {
    pub edge: usize,
    /// Position in the edge's local frame.
    pub local: [f64; 3],
    pub distance: f64,
}

/// Binds each point to the skeleton edge at smallest point-to-segment distance; ties go
/// to the lowest edge id.
pub fn bind_orphan_points(points: &[Vec3], skel: &TreeSkeleton) -> Result<Vec<PointBinding>, TreegeomError> {
    if skel.edges.is_empty() {
        return Err(TreegeomError::Empty);
    }
    let index = skel.index();
    let segs: Vec<(Vec3, Vec3)> = skel
        .edges
        .iter()
        .map(|[a, b]| (skel.nodes[index[a]].position(), skel.nodes[index[b]].position()))
        .collect();
    let frames: Vec<(Vec3, Mat3)> = segs.iter().map(|(a, b)| edge_frame(a, b)).collect();
    Ok(points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (e, (a, b)) in segs.iter().enumerate() {
                let d = point_segment_distance(p, a, b).0;
                if d < best.1 {
                    best = (e, d);
                }
            }
            let (o, r) = &frames[best.0];
            PointBinding {
                edge: best.0,
                local: (r.transpose() * (p - o)).into(),
                distance: best.1,
            }
        })
        .collect())
}

/// Rigid motion `x ↦ R x + t`, serialized as a row-major 3×4 matrix `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Mat3::identity() && self.translation == Vec3::zeros()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation by `r` about the fixed point `pivot`.
    pub fn about(pivot: &Vec3, r: &Mat3) -> Self {
        Self {
            rotation: *r,
            translation: pivot - r * pivot,
        }
    }

    fn rows(&self) -> [[f64; 4]; 3] {
        let mut out = [[0.0; 4]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for j in 0..3 {
                row[j] = self.rotation[(i, j)];
            }
            row[3] = self.translation[i];
        }
        out
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = <[[f64; 4]; 3]>::deserialize(d)?;
        Ok(Self {
            rotation: Mat3::from_fn(|i, j| m[i][j]),
            translation: Vec3::new(m[0][3], m[1][3], m[2][3]),
        })
    }
}

/// Per-edge world-space rigid motions applied to the rest geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub transforms: Vec<RigidTransform>,
}

const POSE_TOL: f64 = 1e-9;

impl Pose {
    pub fn identity(n_edges: usize) -> Self {
        Self {
            transforms: vec![RigidTransform::identity(); n_edges],
        }
    }

    /// World transforms from per-edge rotations about each edge's parent node, relative
    /// to the parent edge's motion.
    pub fn from_joint_rotations(skel: &TreeSkeleton, rotations: &[Mat3]) -> Result<Self, TreegeomError> {
        if rotations.len() != skel.edges.len() {
            return Err(TreegeomError::InconsistentPose(format!(
                "{} rotations for {} edges",
                rotations.len(),
                skel.edges.len()
            )));
        }
        let index = skel.index();
        let parent_edge = skel.parent_edge();
        let children = skel.children();
        let mut transforms = vec![RigidTransform::identity(); skel.edges.len()];
        let mut stack: Vec<usize> = children[&skel.root].iter().map(|&(e, _)| e).collect();
        while let Some(e) = stack.pop() {
            let [a, b] = skel.edges[e];
            let pivot = skel.nodes[index[&a]].position();
            let local = RigidTransform::about(&pivot, &rotations[e]);
            transforms[e] = match parent_edge.get(&a) {
                Some(&pe) => transforms[pe].compose(&local),
                None => local,
            };
            stack.extend(children[&b].iter().map(|&(c, _)| c));
        }
        Ok(Self { transforms })
    }

    /// Rejects poses with the wrong edge count, non-rigid rotations, or parent and child
    /// edges that move their shared node to different places.
    pub fn validate(&self, skel: &TreeSkeleton) -> Result<(), TreegeomError> {
        if self.transforms.len() != skel.edges.len() {
            return Err(TreegeomError::InconsistentPose(format!(
                "{} transforms for {} edges",
                self.transforms.len(),
                skel.edges.len()
            )));
        }
        for (e, t) in self.transforms.iter().enumerate() {
            let r = &t.rotation;
            if (r.transpose() * r - Mat3::identity()).abs().max() > POSE_TOL || (r.determinant() - 1.0).abs() > POSE_TOL {
                return Err(TreegeomError::InconsistentPose(format!("edge {e} rotation is not proper orthogonal")));
            }
        }
        let index = skel.index();
        let parent_edge = skel.parent_edge();
        for (e, &[a, _]) in skel.edges.iter().enumerate() {
            if let Some(&pe) = parent_edge.get(&a) {
                let j = skel.nodes[index[&a]].position();
                let gap = (self.transforms[pe].apply(&j) - self.transforms[e].apply(&j)).norm();
                if gap > POSE_TOL * (1.0 + j.norm()) {
                    return Err(TreegeomError::InconsistentPose(format!(
                        "edges {pe} and {e} disagree on node {a} by {gap}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Linear blend skinning of the mesh and rigid motion of bound points.
///
/// A vertex moves to `Σ wᵢ Tᵢ(x)`; vertices whose bound transforms are all exact
/// identities are copied unchanged. Points follow their bound edge's transform.
pub fn apply_pose(
    mesh: &SkinnedMesh,
    points: &[Vec3],
    bindings: &[PointBinding],
    skel: &TreeSkeleton,
    pose: &Pose,
) -> Result<(SkinnedMesh, Vec<Vec3>), TreegeomError> {
    pose.validate(skel)?;
    if points.len() != bindings.len() {
        return Err(TreegeomError::InvalidParams("one binding per point".into()));
    }
    let mut out = mesh.clone();
    out.vertices.par_iter_mut().try_for_each(|v| {
        if v.bindings.iter().any(|&(e, _)| e >= pose.transforms.len()) {
            return Err(TreegeomError::InconsistentPose("vertex bound to unknown edge".into()));
        }
        if v.bindings.iter().all(|&(e, _)| pose.transforms[e].is_identity()) {
            return Ok(());
        }
        let x = v.position();
        let n = v.normal();
        let mut p = Vec3::zeros();
        let mut nn = Vec3::zeros();
        for &(e, w) in &v.bindings {
            let t = &pose.transforms[e];
            p += t.apply(&x) * w;
            nn += t.rotation * n * w;
        }
        v.pos = p.into();
        v.normal = nn.try_normalize(0.0).unwrap_or(n).into();
        Ok(())
    })?;
    let moved = points
        .iter()
        .zip(bindings)
        .map(|(p, b)| {
            let t = pose.transforms.get(b.edge).ok_or(TreegeomError::InconsistentPose("point bound to unknown edge".into()))?;
            Ok(if t.is_identity() { *p } else { t.apply(p) })
        })
        .collect::<Result<Vec<_>, TreegeomError>>()?;
    Ok((out, moved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treegeom::SkeletonNode;

    #[test]
    fn segment_distance_and_ties() {
        let skel = TreeSkeleton {
            nodes: vec![
                SkeletonNode { id: 0, pos: [0.0, 0.0, 0.0], radius: 0.1, span: None },
                SkeletonNode { id: 1, pos: [0.0, 0.0, 1.0], radius: 0.1, span: None },
                SkeletonNode { id: 2, pos: [2.0, 0.0, 1.0], radius: 0.1, span: None },
            ],
            edges: vec![[0, 1], [1, 2]],
            root: 0,
        };
        let b = bind_orphan_points(&[Vec3::new(0.0, 0.0, 0.5), Vec3::new(1.0, 0.0, 0.0)], &skel).unwrap();
        assert_eq!(b[0].edge, 0);
        assert_eq!(b[0].distance, 0.0);
        // (1, 0, 0) is at distance 1 from both edges.
        assert_eq!(b[1].edge, 0);
        assert!((b[1].distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transform_json_is_3x4() {
        let t = RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::new(1.0, 2.0, 3.0),
        };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "[[1.0,0.0,0.0,1.0],[0.0,1.0,0.0,2.0],[0.0,0.0,1.0,3.0]]");
        assert_eq!(serde_json::from_str::<RigidTransform>(&s).unwrap(), t);
    }
}

//! Generalized-cylinder tree geometry: skeletons, skinned meshes, displacement,
//! texturing, posing and rigid-body export.

mod bind;
mod displace;
mod rigid;
mod skeleton;
mod skin;
mod texture;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::KeypointId;
use crate::Vec3;

pub use bind::{apply_pose, bind_orphan_points, edge_frame, point_segment_distance, Pose, PointBinding, RigidTransform};
pub use displace::{
    displace_mesh, laplace_fill, laplacian_energy, mesh_adjacency, region_contains, smooth, DisplaceReport, FillResult,
};
pub use rigid::{export_rigid_bodies, frustum_properties, FrustumProperties, Joint, RigidBody, RigidBodyModel};
pub use skeleton::{bspline_eval, skeleton_from_branches, BSpline};
pub use skin::{
    directed_edge_counts, euler_characteristic, parallel_transport_frames, skin_skeleton, tube_mesh, Frame, TubeMesh,
};
pub use texture::{quality, texture_from_images, texture_nearest, TextureResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreegeomError {
    #[error("input graph has a cycle through vertex {0}")]
    CyclicInput(u64),
    #[error("{0} vertices are not reachable from the root")]
    Disconnected(usize),
    #[error("node {0} has more than two children")]
    TooManyChildren(u64),
    #[error("input has no vertices")]
    Empty,
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("inconsistent pose: {0}")]
    InconsistentPose(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

/// Location of a skeleton node along an annotated keypoint-to-keypoint curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSpan {
    pub from: KeypointId,
    pub to: KeypointId,
    /// Fraction of image arc length from `from` to `to`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub id: u64,
    pub pos: [f64; 3],
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<KeypointSpan>,
}

impl SkeletonNode {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.pos)
    }
}

/// Rooted tree of frusta. Edge `i` of `edges` is `[parent, child]` and is the
/// generalized cylinder with id `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSkeleton {
    pub nodes: Vec<SkeletonNode>,
    pub edges: Vec<[u64; 2]>,
    pub root: u64,
}

impl TreeSkeleton {
    pub fn index(&self) -> BTreeMap<u64, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    pub fn node(&self, id: u64) -> Option<&SkeletonNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Child node ids with the edge ids leading to them, in edge order.
    pub fn children(&self) -> BTreeMap<u64, Vec<(usize, u64)>> {
        let mut out: BTreeMap<u64, Vec<(usize, u64)>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for (e, &[p, c]) in self.edges.iter().enumerate() {
            out.entry(p).or_default().push((e, c));
        }
        out
    }

    /// Edge entering each non-root node.
    pub fn parent_edge(&self) -> BTreeMap<u64, usize> {
        self.edges.iter().enumerate().map(|(e, &[_, c])| (c, e)).collect()
    }

    /// Checks connectivity from the root, acyclicity, positive radii and at most two
    /// children per node.
    pub fn validate(&self) -> Result<(), TreegeomError> {
        if self.nodes.is_empty() {
            return Err(TreegeomError::Empty);
        }
        let index = self.index();
        if !index.contains_key(&self.root) {
            return Err(TreegeomError::UnknownNode(self.root));
        }
        for n in &self.nodes {
            if !(n.radius > 0.0) {
                return Err(TreegeomError::InvalidParams(format!("node {} has radius {}", n.id, n.radius)));
            }
        }
        for &[p, c] in &self.edges {
            for id in [p, c] {
                if !index.contains_key(&id) {
                    return Err(TreegeomError::UnknownNode(id));
                }
            }
        }
        let children = self.children();
        let mut seen = std::collections::BTreeSet::from([self.root]);
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            if children[&v].len() > 2 {
                return Err(TreegeomError::TooManyChildren(v));
            }
            for &(_, c) in &children[&v] {
                if !seen.insert(c) {
                    return Err(TreegeomError::CyclicInput(c));
                }
                stack.push(c);
            }
        }
        if seen.len() != self.nodes.len() || self.edges.len() + 1 != self.nodes.len() {
            return Err(TreegeomError::Disconnected(self.nodes.len().saturating_sub(seen.len())));
        }
        Ok(())
    }

    /// Maximal node paths whose interior nodes have exactly one child. Each chain starts
    /// at the root or at a node with two children, and the edge ids between consecutive
    /// nodes are returned alongside.
    pub fn chains(&self) -> Vec<(Vec<u64>, Vec<usize>)> {
        let children = self.children();
        let mut out = Vec::new();
        let mut starts = vec![(self.root, None)];
        while let Some((start, first)) = starts.pop() {
            let firsts: Vec<(usize, u64)> = match first {
                Some(f) => vec![f],
                None => children[&start].clone(),
            };
            if firsts.len() > 1 && first.is_none() && start == self.root {
                // A root with two children starts two chains.
                for f in firsts.into_iter().rev() {
                    starts.push((start, Some(f)));
                }
                continue;
            }
            let Some(&(e0, n0)) = firsts.first() else { continue };
            let mut nodes = vec![start, n0];
            let mut edges = vec![e0];
            let mut cur = n0;
            loop {
                let ch = &children[&cur];
                if ch.len() == 1 {
                    edges.push(ch[0].0);
                    nodes.push(ch[0].1);
                    cur = ch[0].1;
                } else {
                    for &f in ch.iter().rev() {
                        starts.push((cur, Some(f)));
                    }
                    break;
                }
            }
            out.push((nodes, edges));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshVertex {
    pub pos: [f64; 3],
    pub normal: [f64; 3],
    pub color: [u8; 3],
    /// Up to two `(edge id, weight)` pairs with weights summing to 1.
    pub bindings: Vec<(usize, f64)>,
    /// Skeleton node whose ring (or cap) generated the vertex.
    pub node: u64,
}

impl MeshVertex {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.pos)
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.normal)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkinnedMesh {
    pub vertices: Vec<MeshVertex>,
    pub triangles: Vec<[usize; 3]>,
}

impl SkinnedMesh {
    pub fn positions(&self) -> Vec<Vec3> {
        self.vertices.iter().map(MeshVertex::position).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Vec<[u8; 3]>) -> Self {
        assert_eq!(points.len(), colors.len(), "one color per point");
        Self { points, colors }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| Vec3::from(*p)).collect()
    }
}

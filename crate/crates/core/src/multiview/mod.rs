//! Lifting image annotations to 3D branches.

mod clamp;
mod reregister;
mod topology;
mod triangulate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::KeypointId;
use crate::camera::Camera;
use crate::{Vec2, Vec3};

pub use clamp::{clamp_narrow_baseline, DEFAULT_CLAMP_FRACTION};
pub use reregister::{reregister_misaligned, Reregistration};
pub use topology::{merge_topology, subdivide_curves, transfer_topology};
pub use triangulate::{
    estimate_thickness, similar_triangles_radius, triangulate_keypoints, triangulate_point, CONDITION_LIMIT,
    MIN_VIEWPOINT_SPREAD_DEG,
};

#[derive(Debug, Error, PartialEq)]
pub enum MultiviewError {
    #[error("need at least 2 rays, got {0}")]
    TooFewRays(usize),
    #[error("ray bundle is (nearly) parallel")]
    DegenerateRays,
    #[error("keypoint {0} has no usable observations")]
    NoObservations(KeypointId),
    #[error("cycle through vertex {0}")]
    CycleDetected(u64),
    #[error("unknown vertex {0}")]
    UnknownVertex(u64),
}

/// One annotated sighting of a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub camera_id: String,
    pub image_id: String,
    pub pixel: [f64; 2],
    /// Annotated radius, pixels.
    pub radius_px: f64,
}

impl Observation {
    pub fn pixel(&self) -> Vec2 {
        Vec2::new(self.pixel[0], self.pixel[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint3D {
    pub id: KeypointId,
    pub position: [f64; 3],
    /// World-space radius; zero until estimated.
    pub radius: f64,
    /// RMS distance from the position to the observation rays.
    pub residual: f64,
    pub observations: Vec<Observation>,
}

impl Keypoint3D {
    pub fn pos(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchVertex {
    pub id: u64,
    pub pos: [f64; 3],
    /// World-space radius.
    pub thickness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint: Option<KeypointId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<Observation>,
}

impl BranchVertex {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.pos)
    }
}

/// 3D branch graph: positions with radii joined by undirected edges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Branch3D {
    pub vertices: Vec<BranchVertex>,
    pub edges: Vec<[u64; 2]>,
    #[serde(default)]
    pub roots: Vec<u64>,
}

impl Branch3D {
    pub fn index(&self) -> BTreeMap<u64, usize> {
        self.vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect()
    }

    pub fn vertex(&self, id: u64) -> Option<&BranchVertex> {
        self.vertices.iter().find(|v| v.id == id)
    }

    pub fn next_id(&self) -> u64 {
        self.vertices.iter().map(|v| v.id + 1).max().unwrap_or(0)
    }

    pub fn adjacency(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut adj: BTreeMap<u64, BTreeSet<u64>> = self.vertices.iter().map(|v| (v.id, BTreeSet::new())).collect();
        for &[a, b] in &self.edges {
            if a != b && adj.contains_key(&a) && adj.contains_key(&b) {
                adj.get_mut(&a).unwrap().insert(b);
                adj.get_mut(&b).unwrap().insert(a);
            }
        }
        adj.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }

    /// Sorts edge endpoints, sorts the edge list and removes duplicates.
    pub fn normalize_edges(&mut self) {
        for e in &mut self.edges {
            if e[0] > e[1] {
                e.swap(0, 1);
            }
        }
        self.edges.sort_unstable();
        self.edges.dedup();
    }

    /// Connected components as sorted vertex-id lists, ordered by smallest id.
    pub fn components(&self) -> Vec<Vec<u64>> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in adj.keys() {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = vec![start];
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &n in &adj[&v] {
                    if seen.insert(n) {
                        comp.push(n);
                        stack.push(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Picks one root per component: the vertex with the smallest world `z`
    /// (ties to the smaller id).
    pub fn assign_lowest_roots(&mut self) {
        let index = self.index();
        self.roots = self
            .components()
            .iter()
            .map(|comp| {
                *comp
                    .iter()
                    .min_by(|a, b| {
                        let za = self.vertices[index[a]].pos[2];
                        let zb = self.vertices[index[b]].pos[2];
                        za.total_cmp(&zb).then(a.cmp(b))
                    })
                    .unwrap()
            })
            .collect();
    }
}

/// Validation findings from the 3D lifting stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportEntry {
    KeypointSkipped {
        keypoint: KeypointId,
        aligned_observations: usize,
        reason: String,
    },
    UnknownCamera {
        image_id: String,
        camera_id: String,
    },
    LowViewpointDiversity {
        keypoint: KeypointId,
        spread_deg: f64,
    },
    EdgelessKeypoint {
        keypoint: KeypointId,
    },
    SubdivisionFallback {
        edge: [u64; 2],
        fraction: f64,
        views: usize,
    },
    CameraReregistered {
        camera_id: String,
        shared_keypoints: usize,
        rms_px: f64,
    },
    CameraExcluded {
        camera_id: String,
        shared_keypoints: usize,
        reason: String,
    },
    UnobservedVertex {
        vertex: u64,
    },
}

/// A projected branch segment for drawing over an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySegment {
    pub edge: [u64; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Projected radii at `a` and `b`, pixels.
    pub thickness: [f64; 2],
}

/// Smallest camera-frame depth kept when clipping segments against the camera.
pub const NEAR_DEPTH: f64 = 1e-6;

/// Projects every edge into `camera`, clipping the part with depth below [`NEAR_DEPTH`].
/// Segments entirely behind the camera are dropped.
pub fn project_branch(branch: &Branch3D, camera: &Camera) -> Vec<OverlaySegment> {
    let index = branch.index();
    let mut out = Vec::new();
    for &[ia, ib] in &branch.edges {
        let (Some(&i), Some(&j)) = (index.get(&ia), index.get(&ib)) else {
            continue;
        };
        let (va, vb) = (&branch.vertices[i], &branch.vertices[j]);
        let (mut pa, mut pb) = (camera.to_camera(&va.position()), camera.to_camera(&vb.position()));
        let (mut ra, mut rb) = (va.thickness, vb.thickness);
        if pa.z < NEAR_DEPTH && pb.z < NEAR_DEPTH {
            continue;
        }
        if pa.z < NEAR_DEPTH || pb.z < NEAR_DEPTH {
            let s = (NEAR_DEPTH - pa.z) / (pb.z - pa.z);
            let cut = pa + (pb - pa) * s;
            let rc = ra + (rb - ra) * s;
            if pa.z < NEAR_DEPTH {
                pa = cut;
                ra = rc;
            } else {
                pb = cut;
                rb = rc;
            }
        }
        let k = &camera.intrinsics;
        let (qa, qb) = (k.project_cam(&pa), k.project_cam(&pb));
        out.push(OverlaySegment {
            edge: [ia, ib],
            a: [qa.x, qa.y],
            b: [qb.x, qb.y],
            thickness: [ra * k.fx / pa.z, rb * k.fx / pb.z],
        });
    }
    out
}

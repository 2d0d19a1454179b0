//! Branch annotations: polylines with per-vertex radius and optional shared keypoints.

mod crops;
mod raster;
mod saturation;
mod stereo;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

pub use crops::{extract_crop, gen_crops, CropError, CropSpec, CROP_ATTEMPTS_PER_CROP, CROP_SIZE, MIN_CENTER_SPACING};
pub use raster::{capsule_covers, rasterize_mask};
pub use saturation::{
    cluster_features, composite_masks, percentile, saturation, saturation_features, ClusterError, KMeans,
    SaturationFeature, COMPOSITE_WINDOW,
};
pub use stereo::{epipolar_transfer, StereoDraft, StereoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u64);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointId(pub String);

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KeypointId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationVertex {
    pub id: VertexId,
    pub x: f64,
    pub y: f64,
    /// Branch radius in pixels.
    pub thickness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint: Option<KeypointId>,
}

impl AnnotationVertex {
    pub fn new(id: u64, x: f64, y: f64, thickness: f64) -> Self {
        Self {
            id: VertexId(id),
            x,
            y,
            thickness,
            keypoint: None,
        }
    }

    pub fn with_keypoint(mut self, kp: impl Into<String>) -> Self {
        self.keypoint = Some(KeypointId(kp.into()));
        self
    }

    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub vertices: Vec<AnnotationVertex>,
    #[serde(default)]
    pub edges: Vec<[VertexId; 2]>,
}

/// A rule broken by an annotation document. Edges are referenced by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum Violation {
    DanglingEdge { edge: usize, missing: VertexId },
    SelfLoop { edge: usize, vertex: VertexId },
    DuplicateEdge { edge: usize, first: usize },
    DegreeViolation { vertex: VertexId, degree: usize },
    NonPositiveThickness { vertex: VertexId },
    OutOfBounds { vertex: VertexId },
    DuplicateKeypoint { keypoint: KeypointId, vertices: Vec<VertexId> },
    DuplicateVertexId { vertex: VertexId },
}

impl Violation {
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::DanglingEdge { .. } => "DanglingEdge",
            Violation::SelfLoop { .. } => "SelfLoop",
            Violation::DuplicateEdge { .. } => "DuplicateEdge",
            Violation::DegreeViolation { .. } => "DegreeViolation",
            Violation::NonPositiveThickness { .. } => "NonPositiveThickness",
            Violation::OutOfBounds { .. } => "OutOfBounds",
            Violation::DuplicateKeypoint { .. } => "DuplicateKeypoint",
            Violation::DuplicateVertexId { .. } => "DuplicateVertexId",
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation has {} violation(s), first: {:?}", .0.len(), .0.first())]
    Invalid(Vec<Violation>),
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
}

/// Path between two keypoint vertices through unlabeled degree-2 vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointCurve {
    pub from: KeypointId,
    pub to: KeypointId,
    pub points: Vec<Vec2>,
    pub thicknesses: Vec<f64>,
}

impl KeypointCurve {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Point and radius at fraction `f` of the polyline's arc length.
    pub fn at_fraction(&self, f: f64) -> (Vec2, f64) {
        let total = self.length();
        if self.points.len() == 1 || total == 0.0 {
            return (self.points[0], self.thicknesses[0]);
        }
        let target = f.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for i in 0..self.points.len() - 1 {
            let seg = (self.points[i + 1] - self.points[i]).norm();
            if acc + seg >= target || i + 2 == self.points.len() {
                let s = if seg > 0.0 { ((target - acc) / seg).clamp(0.0, 1.0) } else { 0.0 };
                return (
                    self.points[i] + (self.points[i + 1] - self.points[i]) * s,
                    self.thicknesses[i] + (self.thicknesses[i + 1] - self.thicknesses[i]) * s,
                );
            }
            acc += seg;
        }
        unreachable!()
    }

    /// Unit normal at fraction `f` (left of the local tangent in image coordinates).
    pub fn normal_at_fraction(&self, f: f64) -> Vec2 {
        let total = self.length();
        let target = f.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        let mut tangent = Vec2::new(1.0, 0.0);
        for w in self.points.windows(2) {
            let d = w[1] - w[0];
            let seg = d.norm();
            if seg > 0.0 {
                tangent = d / seg;
            }
            if acc + seg >= target {
                break;
            }
            acc += seg;
        }
        Vec2::new(-tangent.y, tangent.x)
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        let mut thicknesses = self.thicknesses.clone();
        points.reverse();
        thicknesses.reverse();
        Self {
            from: self.to.clone(),
            to: self.from.clone(),
            points,
            thicknesses,
        }
    }
}

impl ImageAnnotation {
    pub fn new(image_id: impl Into<String>, camera_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            camera_id: camera_id.into(),
            width,
            height,
            vertices: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn vertex(&self, id: VertexId) -> Option<&AnnotationVertex> {
        self.vertices.iter().find(|v| v.id == id)
    }

    pub fn vertex_index(&self) -> HashMap<VertexId, usize> {
        self.vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect()
    }

    pub fn next_vertex_id(&self) -> u64 {
        self.vertices.iter().map(|v| v.id.0 + 1).max().unwrap_or(0)
    }

    /// Appends an open polyline and returns the new vertex ids.
    pub fn add_polyline(&mut self, points: &[(f64, f64, f64)]) -> Vec<VertexId> {
        let base = self.next_vertex_id();
        let ids: Vec<VertexId> = (0..points.len() as u64).map(|i| VertexId(base + i)).collect();
        for (id, &(x, y, t)) in ids.iter().zip(points) {
            self.vertices.push(AnnotationVertex {
                id: *id,
                x,
                y,
                thickness: t,
                keypoint: None,
            });
        }
        for w in ids.windows(2) {
            self.edges.push([w[0], w[1]]);
        }
        ids
    }

    pub fn set_keypoint(&mut self, id: VertexId, kp: impl Into<String>) -> Result<(), AnnotationError> {
        let v = self
            .vertices
            .iter_mut()
            .find(|v| v.id == id)
            .ok_or(AnnotationError::UnknownVertex(id))?;
        v.keypoint = Some(KeypointId(kp.into()));
        Ok(())
    }

    /// Adjacency lists (sorted neighbor ids), ignoring dangling edges and self-loops.
    pub fn adjacency(&self) -> BTreeMap<VertexId, Vec<VertexId>> {
        let mut adj: BTreeMap<VertexId, BTreeSet<VertexId>> =
            self.vertices.iter().map(|v| (v.id, BTreeSet::new())).collect();
        for &[a, b] in &self.edges {
            if a == b || !adj.contains_key(&a) || !adj.contains_key(&b) {
                continue;
            }
            adj.get_mut(&a).unwrap().insert(b);
            adj.get_mut(&b).unwrap().insert(a);
        }
        adj.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn keypoint_vertex(&self, kp: &KeypointId) -> Option<&AnnotationVertex> {
        self.vertices.iter().find(|v| v.keypoint.as_ref() == Some(kp))
    }

    /// Curves connecting pairs of keypoint vertices.
    ///
    /// Starting at each keypoint vertex, every incident edge is followed through
    /// unlabeled degree-2 vertices. A walk that ends on another keypoint vertex yields a
    /// curve; walks ending at unlabeled endpoints or junctions yield nothing. Each curve
    /// is reported once, oriented from the lexicographically smaller keypoint.
    pub fn keypoint_curves(&self) -> Vec<KeypointCurve> {
        let index = self.vertex_index();
        let adj = self.adjacency();
        let mut out = Vec::new();
        let mut seen: BTreeSet<(VertexId, VertexId, VertexId)> = BTreeSet::new();
        for start in self.vertices.iter().filter(|v| v.keypoint.is_some()) {
            for &first in &adj[&start.id] {
                let mut path = vec![start.id, first];
                let mut prev = start.id;
                let mut cur = first;
                let end = loop {
                    let v = &self.vertices[index[&cur]];
                    if v.keypoint.is_some() {
                        break Some(cur);
                    }
                    let nbrs = &adj[&cur];
                    if nbrs.len() != 2 {
                        break None;
                    }
                    let next = if nbrs[0] == prev { nbrs[1] } else { nbrs[0] };
                    if next == start.id && path.len() > 2 {
                        break Some(next);
                    }
                    if path.contains(&next) {
                        break None;
                    }
                    path.push(next);
                    prev = cur;
                    cur = next;
                };
                let Some(end) = end else { continue };
                if end == start.id {
                    continue;
                }
                // Identify the path by its endpoints and the vertex next to the smaller one.
                let key = if start.id < end {
                    (start.id, end, path[1])
                } else {
                    (end, start.id, path[path.len() - 2])
                };
                if !seen.insert(key) {
                    continue;
                }
                let vs: Vec<&AnnotationVertex> = path.iter().map(|id| &self.vertices[index[id]]).collect();
                let curve = KeypointCurve {
                    from: start.keypoint.clone().unwrap(),
                    to: vs.last().unwrap().keypoint.clone().unwrap(),
                    points: vs.iter().map(|v| v.pos()).collect(),
                    thicknesses: vs.iter().map(|v| v.thickness).collect(),
                };
                out.push(if curve.from <= curve.to { curve } else { curve.reversed() });
            }
        }
        out
    }
}

/// Checks every document invariant. An empty result means the annotation is valid.
///
/// Vertex positions must lie on the image, i.e. within `[-0.5, width - 0.5]` horizontally
/// and `[-0.5, height - 0.5]` vertically (pixel centers sit on integer coordinates).
pub fn validate(ann: &ImageAnnotation) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for v in &ann.vertices {
        if !ids.insert(v.id) {
            out.push(Violation::DuplicateVertexId { vertex: v.id });
        }
    }
    for v in &ann.vertices {
        if !(v.thickness > 0.0) {
            out.push(Violation::NonPositiveThickness { vertex: v.id });
        }
        let inside = v.x >= -0.5
            && v.y >= -0.5
            && v.x <= f64::from(ann.width) - 0.5
            && v.y <= f64::from(ann.height) - 0.5;
        if !inside {
            out.push(Violation::OutOfBounds { vertex: v.id });
        }
    }

    let mut degree: BTreeMap<VertexId, usize> = ann.vertices.iter().map(|v| (v.id, 0)).collect();
    let mut seen: HashMap<(VertexId, VertexId), usize> = HashMap::new();
    for (i, &[a, b]) in ann.edges.iter().enumerate() {
        let mut dangling = false;
        for end in [a, b] {
            if !ids.contains(&end) {
                out.push(Violation::DanglingEdge { edge: i, missing: end });
                dangling = true;
            }
        }
        if a == b {
            out.push(Violation::SelfLoop { edge: i, vertex: a });
            continue;
        }
        if dangling {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&first) = seen.get(&key) {
            out.push(Violation::DuplicateEdge { edge: i, first });
            continue;
        }
        seen.insert(key, i);
        *degree.get_mut(&a).unwrap() += 1;
        *degree.get_mut(&b).unwrap() += 1;
    }
    for (&vertex, &d) in &degree {
        if !(1..=3).contains(&d) {
            out.push(Violation::DegreeViolation { vertex, degree: d });
        }
    }

    let mut by_kp: BTreeMap<&KeypointId, Vec<VertexId>> = BTreeMap::new();
    for v in &ann.vertices {
        if let Some(kp) = &v.keypoint {
            by_kp.entry(kp).or_default().push(v.id);
        }
    }
    for (kp, vs) in by_kp {
        if vs.len() > 1 {
            out.push(Violation::DuplicateKeypoint {
                keypoint: kp.clone(),
                vertices: vs,
            });
        }
    }
    out
}

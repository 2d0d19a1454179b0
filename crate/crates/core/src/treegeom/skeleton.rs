use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{KeypointSpan, SkeletonNode, TreeSkeleton, TreegeomError};
use crate::multiview::Branch3D;
use crate::Vec3;

/// Endpoint-clamped uniform B-spline of degree `min(3, n - 1)` over `n` control points.
#[derive(Debug, Clone, PartialEq)]
pub struct BSpline {
    control: Vec<Vec3>,
    degree: usize,
    knots: Vec<f64>,
}

impl BSpline {
    /// Panics on an empty control polygon.
    pub fn new(control: Vec<Vec3>) -> Self {
        assert!(!control.is_empty(), "B-spline needs a control point");
        let n = control.len();
        let degree = 3.min(n - 1);
        let spans = n - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|i| i as f64));
        knots.extend(std::iter::repeat(spans as f64).take(degree + 1));
        Self { control, degree, knots }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Parameter range `[0, n - degree]`.
    pub fn domain(&self) -> (f64, f64) {
        (0.0, (self.control.len() - self.degree) as f64)
    }

    /// Curve point at parameter `u` (clamped to the domain).
    pub fn eval(&self, u: f64) -> Vec3 {
        bspline_eval(&self.control, self.degree, &self.knots, u)
    }

    /// Dense `(parameter, cumulative arc length)` table with `per_span` samples per knot span.
    pub fn arc_table(&self, per_span: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.domain();
        let n = ((b - a) as usize).max(1) * per_span.max(1);
        let mut out = Vec::with_capacity(n + 1);
        let mut prev = self.eval(a);
        let mut acc = 0.0;
        out.push((a, 0.0));
        for i in 1..=n {
            let u = a + (b - a) * i as f64 / n as f64;
            let p = self.eval(u);
            acc += (p - prev).norm();
            out.push((u, acc));
            prev = p;
        }
        out
    }
}

/// de Boor evaluation of a B-spline with the given knot vector.
pub fn bspline_eval(control: &[Vec3], degree: usize, knots: &[f64], u: f64) -> Vec3 {
    if degree == 0 || control.len() == 1 {
        return control[0];
    }
    let lo = knots[degree];
    let hi = knots[control.len()];
    let u = u.clamp(lo, hi);
    // Knot span k with knots[k] <= u < knots[k+1], using the last span at the end.
    let mut k = degree;
    while k + 1 < control.len() && knots[k + 1] <= u {
        k += 1;
    }
    let mut d: Vec<Vec3> = (0..=degree).map(|j| control[j + k - degree]).collect();
    for r in 1..=degree {
        for j in (r..=degree).rev() {
            let i = j + k - degree;
            let den = knots[i + degree + 1 - r] - knots[i];
            let alpha = if den > 0.0 { (u - knots[i]) / den } else { 0.0 };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    d[degree]
}

/// Parameter where the cumulative length in `table` reaches `s`.
fn invert_arc(table: &[(f64, f64)], s: f64) -> f64 {
    let i = table.partition_point(|&(_, l)| l < s);
    if i == 0 {
        return table[0].0;
    }
    if i >= table.len() {
        return table[table.len() - 1].0;
    }
    let (u0, l0) = table[i - 1];
    let (u1, l1) = table[i];
    if l1 > l0 {
        u0 + (u1 - u0) * (s - l0) / (l1 - l0)
    } else {
        u0
    }
}

/// Closest point on a polyline: segment index and local fraction.
fn project_to_polyline(poly: &[Vec3], p: &Vec3) -> (usize, f64) {
    let mut best = (0, 0.0, f64::INFINITY);
    for (j, w) in poly.windows(2).enumerate() {
        let d = w[1] - w[0];
        let len2 = d.norm_squared();
        let s = if len2 > 0.0 { ((p - w[0]).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let dist = (w[0] + d * s - p).norm_squared();
        if dist < best.2 {
            best = (j, s, dist);
        }
    }
    (best.0, best.1)
}

/// Smooth generalized-cylinder skeleton from a 3D branch graph.
///
/// The graph is rooted at its first listed root (or its lowest vertex) and split into
/// maximal chains whose interior vertices have one child. Each chain's vertices are the
/// control points of an endpoint-clamped cubic B-spline, resampled at uniform arc length
/// with `samples_per_segment` edges per control segment. Radii are interpolated linearly
/// along the control polygon at the same arc-length fraction. Chain endpoints stay shared
/// nodes, so bifurcations are preserved. Nodes between two keypoint vertices record their
/// fraction along that keypoint span.
pub fn skeleton_from_branches(branch: &Branch3D, samples_per_segment: usize) -> Result<TreeSkeleton, TreegeomError> {
    if branch.vertices.is_empty() {
        return Err(TreegeomError::Empty);
    }
    let index = branch.index();
    let root = match branch.roots.first() {
        Some(r) if index.contains_key(r) => *r,
        Some(r) => return Err(TreegeomError::UnknownNode(*r)),
        None => {
            branch
                .vertices
                .iter()
                .min_by(|a, b| a.pos[2].total_cmp(&b.pos[2]).then(a.id.cmp(&b.id)))
                .unwrap()
                .id
        }
    };
    let adj = branch.adjacency();
    let mut parent: BTreeMap<u64, u64> = BTreeMap::from([(root, root)]);
    let mut children: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let mut ch = Vec::new();
        for &n in &adj[&v] {
            if n == parent[&v] && n != v {
                continue;
            }
            if parent.contains_key(&n) {
                return Err(TreegeomError::CyclicInput(n));
            }
            parent.insert(n, v);
            ch.push(n);
            queue.push_back(n);
        }
        if ch.len() > 2 {
            return Err(TreegeomError::TooManyChildren(v));
        }
        children.insert(v, ch);
    }
    if parent.len() != branch.vertices.len() {
        return Err(TreegeomError::Disconnected(branch.vertices.len() - parent.len()));
    }

    let samples = samples_per_segment.max(1);
    let mut nodes: Vec<SkeletonNode> = Vec::new();
    let mut edges: Vec<[u64; 2]> = Vec::new();
    let mut node_of: BTreeMap<u64, u64> = BTreeMap::new();
    let vtx = |id: u64| &branch.vertices[index[&id]];
    let add_node = |nodes: &mut Vec<SkeletonNode>, pos: Vec3, radius: f64, span: Option<KeypointSpan>| {
        let id = nodes.len() as u64;
        nodes.push(SkeletonNode {
            id,
            pos: pos.into(),
            radius,
            span,
        });
        id
    };
    let root_v = vtx(root);
    let root_span = span_for_vertex(branch, &children, root);
    let rid = add_node(&mut nodes, root_v.position(), root_v.thickness, root_span);
    node_of.insert(root, rid);

    // Chains as branch-vertex paths, generated depth-first in child order.
    let mut starts: Vec<(u64, u64)> = children[&root].iter().rev().map(|&c| (root, c)).collect();
    let mut visited_chain_starts = BTreeSet::new();
    while let Some((start, first)) = starts.pop() {
        if !visited_chain_starts.insert((start, first)) {
            continue;
        }
        let mut path = vec![start, first];
        let mut cur = first;
        while children[&cur].len() == 1 {
            cur = children[&cur][0];
            path.push(cur);
        }
        for &c in children[&cur].iter().rev() {
            starts.push((cur, c));
        }
        let control: Vec<Vec3> = path.iter().map(|&id| vtx(id).position()).collect();
        let radii: Vec<f64> = path.iter().map(|&id| vtx(id).thickness).collect();
        let keypoints: Vec<Option<&crate::annotation::KeypointId>> =
            path.iter().map(|&id| vtx(id).keypoint.as_ref()).collect();
        let spline = BSpline::new(control.clone());
        let table = spline.arc_table(256);
        let total = table.last().unwrap().1;
        let mut poly_len = vec![0.0];
        for w in control.windows(2) {
            poly_len.push(poly_len.last().unwrap() + (w[1] - w[0]).norm());
        }
        let poly_total = *poly_len.last().unwrap();
        let radius_at = |f: f64| {
            let s = f * poly_total;
            let j = poly_len.partition_point(|&l| l < s).clamp(1, poly_len.len() - 1);
            let seg = poly_len[j] - poly_len[j - 1];
            let t = if seg > 0.0 { ((s - poly_len[j - 1]) / seg).clamp(0.0, 1.0) } else { 0.0 };
            radii[j - 1] + (radii[j] - radii[j - 1]) * t
        };
        let n_seg = samples * (path.len() - 1);
        let mut prev = node_of[&start];
        for k in 1..=n_seg {
            let f = k as f64 / n_seg as f64;
            let id = if k == n_seg {
                let end = *path.last().unwrap();
                let v = vtx(end);
                let span = span_for_vertex(branch, &children, end);
                let id = add_node(&mut nodes, v.position(), v.thickness, span);
                node_of.insert(end, id);
                id
            } else {
                let u = invert_arc(&table, f * total);
                let p = spline.eval(u);
                let span = polyline_span(&control, &keypoints, &p);
                add_node(&mut nodes, p, radius_at(f), span)
            };
            edges.push([prev, id]);
            prev = id;
        }
    }
    Ok(TreeSkeleton { nodes, edges, root: rid })
}

/// Span of an interior point of a chain: position between the surrounding keypoint
/// vertices, counting control vertices as evenly spaced.
fn polyline_span(
    control: &[Vec3],
    keypoints: &[Option<&crate::annotation::KeypointId>],
    p: &Vec3,
) -> Option<KeypointSpan> {
    let (j, s) = project_to_polyline(control, p);
    let a = (0..=j).rev().find(|&i| keypoints[i].is_some())?;
    let b = (j + 1..control.len()).find(|&i| keypoints[i].is_some())?;
    Some(KeypointSpan {
        from: keypoints[a].unwrap().clone(),
        to: keypoints[b].unwrap().clone(),
        fraction: (j as f64 + s - a as f64) / (b - a) as f64,
    })
}

/// Span of a keypoint vertex: fraction 0 on the edge toward its first child keypoint or
/// fraction 1 from its parent-side keypoint.
fn span_for_vertex(branch: &Branch3D, children: &BTreeMap<u64, Vec<u64>>, id: u64) -> Option<KeypointSpan> {
    let index = branch.index();
    let kp = branch.vertices[index[&id]].keypoint.clone()?;
    // Walk down the first child path to the next keypoint.
    let mut cur = id;
    while let Some(&c) = children.get(&cur).and_then(|ch| ch.first()) {
        if let Some(k) = &branch.vertices[index[&c]].keypoint {
            return Some(KeypointSpan {
                from: kp,
                to: k.clone(),
                fraction: 0.0,
            });
        }
        cur = c;
    }
    // Leaf side: walk up to the nearest keypoint ancestor.
    let parent_of = |v: u64| children.iter().find(|(_, ch)| ch.contains(&v)).map(|(p, _)| *p);
    let mut cur = id;
    while let Some(p) = parent_of(cur) {
        if let Some(k) = &branch.vertices[index[&p]].keypoint {
            return Some(KeypointSpan {
                from: k.clone(),
                to: kp,
                fraction: 1.0,
            });
        }
        cur = p;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiview::BranchVertex;

    fn chain(points: &[[f64; 3]]) -> Branch3D {
        Branch3D {
            vertices: points
                .iter()
                .enumerate()
                .map(|(i, p)| BranchVertex {
                    id: i as u64,
                    pos: *p,
                    thickness: 0.1 + 0.01 * i as f64,
                    keypoint: None,
                    observations: vec![],
                })
                .collect(),
            edges: (1..points.len() as u64).map(|i| [i - 1, i]).collect(),
            roots: vec![0],
        }
    }

    #[test]
    fn two_vertex_chain_is_linear() {
        let b = chain(&[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]);
        let s = skeleton_from_branches(&b, 4).unwrap();
        assert_eq!(s.nodes.len(), 5);
        for (k, n) in s.nodes.iter().enumerate() {
            assert!((n.pos[2] - 0.5 * k as f64).abs() < 1e-9);
            assert!((n.radius - (0.1 + 0.01 * k as f64 / 4.0)).abs() < 1e-12);
        }
        s.validate().unwrap();
    }

    #[test]
    fn endpoints_interpolated() {
        let sp = BSpline::new(vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(2.0, 1.0, 3.0), Vec3::z()]);
        let (a, b) = sp.domain();
        assert!((sp.eval(a) - Vec3::zeros()).norm() < 1e-15);
        assert!((sp.eval(b) - Vec3::z()).norm() < 1e-15);
        assert_eq!(sp.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn errors() {
        let mut b = chain(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        b.edges.push([0, 2]);
        assert_eq!(skeleton_from_branches(&b, 2), Err(TreegeomError::CyclicInput(2)));
        let mut b = chain(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        b.edges = vec![[0, 1], [1, 2], [1, 3], [1, 4]];
        assert_eq!(skeleton_from_branches(&b, 2), Err(TreegeomError::TooManyChildren(1)));
        b.edges = vec![[0, 1], [1, 2]];
        assert_eq!(skeleton_from_branches(&b, 2), Err(TreegeomError::Disconnected(2)));
    }
}

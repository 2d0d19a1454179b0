use std::collections::{BTreeMap, HashMap};

use super::{MeshVertex, SkinnedMesh, TreeSkeleton, TreegeomError};
use crate::Vec3;

const DEFAULT_COLOR: [u8; 3] = [128, 128, 128];

/// Orthonormal frame along a curve: `v = tangent × u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub tangent: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

fn seed_normal(t: &Vec3) -> Vec3 {
    let n = Vec3::z().cross(t);
    if n.norm() > 1e-9 {
        n.normalize()
    } else {
        Vec3::x().cross(t).normalize()
    }
}

/// Rotation-minimizing frames at polyline vertices.
///
/// Tangents are central differences (one-sided at the ends). The first `u` is
/// `up × tangent` with `up = +z` (x-axis when parallel). Each following `u` is the
/// previous one reflected twice: across the plane normal to the previous tangent, which
/// leaves `u` fixed and negates the tangent, then across the plane normal to the sum of
/// both tangents. The composite is the smallest rotation taking one tangent to the next,
/// so frames do not twist about the curve.
pub fn parallel_transport_frames(points: &[Vec3]) -> Vec<Frame> {
    let n = points.len();
    assert!(n >= 2, "need at least two points");
    let tangents: Vec<Vec3> = (0..n)
        .map(|i| {
            let (a, b) = (points[i.saturating_sub(1)], points[(i + 1).min(n - 1)]);
            (b - a).try_normalize(0.0).unwrap_or_else(Vec3::z)
        })
        .collect();
    let mut frames = Vec::with_capacity(n);
    let u0 = seed_normal(&tangents[0]);
    frames.push(Frame {
        tangent: tangents[0],
        u: u0,
        v: tangents[0].cross(&u0),
    });
    for i in 1..n {
        let prev = frames[i - 1];
        let t = tangents[i];
        let w = t + prev.tangent;
        let ww = w.norm_squared();
        let mut u = if ww > 1e-24 { prev.u - w * (2.0 * w.dot(&prev.u) / ww) } else { prev.u };
        u = (u - t * t.dot(&u)).try_normalize(0.0).unwrap_or_else(|| seed_normal(&t));
        frames.push(Frame {
            tangent: t,
            u,
            v: t.cross(&u),
        });
    }
    frames
}

/// A single swept tube before welding.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// First vertex of each ring; ring `i` occupies `ring_start[i]..ring_start[i] + sides`.
    pub ring_start: Vec<usize>,
    pub cap_centers: [Option<usize>; 2],
    pub frames: Vec<Frame>,
}

/// Tube of circular rings around a polyline with per-point radii, outward-facing
/// triangles, and optional fan caps at either end.
pub fn tube_mesh(points: &[Vec3], radii: &[f64], sides: usize, cap_start: bool, cap_end: bool) -> TubeMesh {
    assert_eq!(points.len(), radii.len());
    assert!(sides >= 3, "a ring needs at least 3 sides");
    let frames = parallel_transport_frames(points);
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut ring_start = Vec::new();
    for ((p, r), f) in points.iter().zip(radii).zip(&frames) {
        ring_start.push(positions.len());
        for j in 0..sides {
            let a = std::f64::consts::TAU * j as f64 / sides as f64;
            let dir = f.u * a.cos() + f.v * a.sin();
            positions.push(p + dir * *r);
            normals.push(dir);
        }
    }
    let mut triangles = Vec::new();
    for i in 0..points.len() - 1 {
        let (a, b) = (ring_start[i], ring_start[i + 1]);
        for j in 0..sides {
            let k = (j + 1) % sides;
            triangles.push([a + j, a + k, b + k]);
            triangles.push([a + j, b + k, b + j]);
        }
    }
    let mut cap_centers = [None, None];
    if cap_start {
        let c = positions.len();
        positions.push(points[0]);
        normals.push(-frames[0].tangent);
        let a = ring_start[0];
        for j in 0..sides {
            triangles.push([c, a + (j + 1) % sides, a + j]);
        }
        cap_centers[0] = Some(c);
    }
    if cap_end {
        let last = points.len() - 1;
        let c = positions.len();
        positions.push(points[last]);
        normals.push(frames[last].tangent);
        let a = ring_start[last];
        for j in 0..sides {
            triangles.push([c, a + j, a + (j + 1) % sides]);
        }
        cap_centers[1] = Some(c);
    }
    TubeMesh {
        positions,
        normals,
        triangles,
        ring_start,
        cap_centers,
        frames,
    }
}

/// Number of triangles using each directed edge.
pub fn directed_edge_counts(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut out = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            *out.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    out
}

/// `V - E + F` counting only vertices referenced by a triangle.
pub fn euler_characteristic(triangles: &[[usize; 3]]) -> i64 {
    let mut verts = std::collections::BTreeSet::new();
    let mut edges = std::collections::BTreeSet::new();
    for t in triangles {
        for k in 0..3 {
            verts.insert(t[k]);
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    verts.len() as i64 - edges.len() as i64 + triangles.len() as i64
}

/// Sweeps every chain of the skeleton into a tube and joins them into one mesh.
///
/// Chain ends without a continuation (the root and leaves) get fan caps. A chain that
/// starts at a bifurcation has its first ring welded onto the nearest vertices of the
/// ring its parent chain ends with; triangles collapsed by the weld are dropped. Ring
/// vertices are bound to their generating edge with weight 1, except rings at interior
/// chain nodes, which blend the two incident edges 50/50.
pub fn skin_skeleton(skel: &TreeSkeleton, sides: usize) -> Result<SkinnedMesh, TreegeomError> {
    skel.validate()?;
    if sides < 3 {
        return Err(TreegeomError::InvalidParams(format!("ring_sides {sides} < 3")));
    }
    let index = skel.index();
    let parent_edge = skel.parent_edge();
    let children = skel.children();
    let mut mesh = SkinnedMesh::default();
    let mut end_rings: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (nodes, edges) in skel.chains() {
        let pts: Vec<Vec3> = nodes.iter().map(|id| skel.nodes[index[id]].position()).collect();
        let radii: Vec<f64> = nodes.iter().map(|id| skel.nodes[index[id]].radius).collect();
        let start = nodes[0];
        let end = *nodes.last().unwrap();
        let welded_to = parent_edge.get(&start).and_then(|_| end_rings.get(&start)).cloned();
        let cap_start = welded_to.is_none();
        let cap_end = children[&end].is_empty();
        let tube = tube_mesh(&pts, &radii, sides, cap_start, cap_end);
        let base = mesh.vertices.len();
        let last = nodes.len() - 1;
        let mut remap: Vec<usize> = (0..tube.positions.len()).map(|i| base + i).collect();
        if let Some(ring) = &welded_to {
            for j in 0..sides {
                let p = tube.positions[tube.ring_start[0] + j];
                let nearest = ring
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        let da = (mesh.vertices[a].position() - p).norm_squared();
                        let db = (mesh.vertices[b].position() - p).norm_squared();
                        da.total_cmp(&db).then(a.cmp(&b))
                    })
                    .unwrap();
                remap[tube.ring_start[0] + j] = nearest;
            }
        }
        // Compact the remaining tube vertices after the welded ones.
        let mut next = base;
        for (i, slot) in remap.iter_mut().enumerate() {
            let welded = welded_to.is_some() && i >= tube.ring_start[0] && i < tube.ring_start[0] + sides;
            if !welded {
                *slot = next;
                next += 1;
            }
        }
        for i in 0..tube.positions.len() {
            if remap[i] < base {
                continue;
            }
            let (ring, node) = if Some(i) == tube.cap_centers[0] {
                (0, nodes[0])
            } else if Some(i) == tube.cap_centers[1] {
                (last, nodes[last])
            } else {
                let r = (i - tube.ring_start[0]) / sides;
                (r, nodes[r])
            };
            let bindings = if ring == 0 {
                vec![(edges[0], 1.0)]
            } else if ring == last {
                vec![(edges[last - 1], 1.0)]
            } else {
                vec![(edges[ring - 1], 0.5), (edges[ring], 0.5)]
            };
            mesh.vertices.push(MeshVertex {
                pos: tube.positions[i].into(),
                normal: tube.normals[i].into(),
                color: DEFAULT_COLOR,
                bindings,
                node,
            });
        }
        for t in &tube.triangles {
            let m = [remap[t[0]], remap[t[1]], remap[t[2]]];
            if m[0] != m[1] && m[1] != m[2] && m[0] != m[2] {
                mesh.triangles.push(m);
            }
        }
        if !children[&end].is_empty() {
            let s = tube.ring_start[last];
            end_rings.insert(end, (s..s + sides).map(|i| remap[i]).collect());
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treegeom::SkeletonNode;

    fn node(id: u64, pos: [f64; 3], radius: f64) -> SkeletonNode {
        SkeletonNode { id, pos, radius, span: None }
    }

    #[test]
    fn single_cylinder_counts() {
        let skel = TreeSkeleton {
            nodes: vec![node(0, [0.0, 0.0, 0.0], 0.5), node(1, [0.0, 0.0, 2.0], 0.5)],
            edges: vec![[0, 1]],
            root: 0,
        };
        let mesh = skin_skeleton(&skel, 16).unwrap();
        assert_eq!(mesh.triangles.len(), 64);
        assert_eq!(mesh.vertices.len(), 34);
        for v in mesh.vertices.iter().filter(|v| v.pos[0] != 0.0 || v.pos[1] != 0.0) {
            assert!(((v.pos[0].powi(2) + v.pos[1].powi(2)).sqrt() - 0.5).abs() < 1e-9);
        }
        assert_eq!(euler_characteristic(&mesh.triangles), 2);
        assert!(directed_edge_counts(&mesh.triangles).values().all(|&c| c == 1));
    }

    #[test]
    fn outward_orientation() {
        let tube = tube_mesh(&[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.3), Vec3::new(2.0, 0.5, 0.3)], &[0.2; 3], 8, true, true);
        for t in &tube.triangles {
            let [a, b, c] = t.map(|i| tube.positions[i]);
            let n = (b - a).cross(&(c - a));
            let avg: Vec3 = t.iter().map(|&i| tube.normals[i]).sum();
            assert!(n.dot(&avg) > 0.0);
        }
    }

    #[test]
    fn bifurcation_is_connected() {
        let skel = TreeSkeleton {
            nodes: vec![
                node(0, [0.0, 0.0, 0.0], 0.3),
                node(1, [0.0, 0.0, 1.0], 0.3),
                node(2, [0.5, 0.0, 2.0], 0.2),
                node(3, [-0.5, 0.0, 2.0], 0.2),
            ],
            edges: vec![[0, 1], [1, 2], [1, 3]],
            root: 0,
        };
        let mesh = skin_skeleton(&skel, 12).unwrap();
        // Trunk: 2 rings + root cap; each child: 1 new ring + tip cap.
        assert_eq!(mesh.vertices.len(), 24 + 1 + 2 * (12 + 1));
        for v in &mesh.vertices {
            let w: f64 = v.bindings.iter().map(|b| b.1).sum();
            assert!((w - 1.0).abs() < 1e-12);
        }
        // Every vertex is reachable through triangle edges.
        let mut adj = vec![Vec::new(); mesh.vertices.len()];
        for t in &mesh.triangles {
            for k in 0..3 {
                adj[t[k]].push(t[(k + 1) % 3]);
                adj[t[(k + 1) % 3]].push(t[k]);
            }
        }
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &n in &adj[v] {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}

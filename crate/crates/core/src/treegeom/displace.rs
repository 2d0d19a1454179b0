use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PointCloud, SkinnedMesh, TreegeomError};
use crate::spatial::PointIndex;
use crate::Vec3;

/// Sorted neighbor lists of the triangle graph.
pub fn mesh_adjacency(n_vertices: usize, triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n_vertices];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Closed cylinder test: `p` is inside when its offset along `axis` is within
/// `±half_height` and its distance from the axis is at most `radius`.
pub fn region_contains(center: &Vec3, axis: &Vec3, p: &Vec3, radius: f64, half_height: f64) -> bool {
    let d = p - center;
    let h = d.dot(axis);
    h.abs() <= half_height && (d - axis * h).norm_squared() <= radius * radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResult {
    pub heights: Vec<f64>,
    /// Unknown vertices in regions without any known neighbor; set to 0.
    pub zero_filled: Vec<usize>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Harmonic completion of partially known vertex values.
///
/// Unknown values satisfy `deg(v) h(v) = Σ h(neighbors)` with known values as Dirichlet
/// data. The system is solved by Jacobi-preconditioned conjugate gradients to a relative
/// residual of `1e-12`. Unknown regions that touch no known vertex are set to zero and
/// listed in `zero_filled`.
pub fn laplace_fill(adj: &[Vec<usize>], known: &[Option<f64>]) -> FillResult {
    let n = adj.len();
    assert_eq!(known.len(), n);
    let mut heights: Vec<f64> = known.iter().map(|k| k.unwrap_or(0.0)).collect();
    // Unknown components and whether they touch a known vertex.
    let mut comp = vec![usize::MAX; n];
    let mut touches = Vec::new();
    for s in 0..n {
        if known[s].is_some() || comp[s] != usize::MAX {
            continue;
        }
        let c = touches.len();
        let mut hit = false;
        comp[s] = c;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if known[w].is_some() {
                    hit = true;
                } else if comp[w] == usize::MAX {
                    comp[w] = c;
                    stack.push(w);
                }
            }
        }
        touches.push(hit);
    }
    let zero_filled: Vec<usize> = (0..n).filter(|&v| known[v].is_none() && !touches[comp[v]]).collect();
    let free: Vec<usize> = (0..n).filter(|&v| known[v].is_none() && touches[comp[v]]).collect();
    if free.is_empty() {
        return FillResult {
            heights,
            zero_filled,
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut slot = vec![usize::MAX; n];
    for (i, &v) in free.iter().enumerate() {
        slot[v] = i;
    }
    let deg: Vec<f64> = free.iter().map(|&v| adj[v].len() as f64).collect();
    let b: Vec<f64> = free
        .iter()
        .map(|&v| adj[v].iter().filter_map(|&w| known[w]).sum())
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (i, &v) in free.iter().enumerate() {
            let mut s = deg[i] * x[i];
            for &w in &adj[v] {
                if slot[w] != usize::MAX {
                    s -= x[slot[w]];
                }
            }
            out[i] = s;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let m = free.len();
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; m];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&deg).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let mut rz = dot(&r, &z);
    let tol = 1e-12 * bnorm;
    let mut iterations = 0;
    let max_iter = 10 * m + 100;
    while dot(&r, &r).sqrt() > tol && iterations < max_iter {
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..m {
            z[i] = r[i] / deg[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
    // True residual of the returned solution.
    apply(&x, &mut ap);
    let res: f64 = ap.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    for (i, &v) in free.iter().enumerate() {
        heights[v] = x[i];
    }
    FillResult {
        heights,
        zero_filled,
        iterations,
        relative_residual: if bnorm > 0.0 { res / bnorm } else { res },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplaceReport {
    /// Final per-vertex offsets along the normal.
    pub heights: Vec<f64>,
    /// Vertices whose sampling region held at least one point.
    pub known: usize,
    pub unknown: usize,
    pub zero_filled: usize,
    pub warnings: Vec<String>,
}

/// Offsets each vertex along its normal toward the point cloud.
///
/// A vertex samples the closed cylinder of radius `sample_radius` and half-height
/// `sample_height` along its normal; its height is the mean enclosed point's offset
/// along the normal. Vertices with empty regions get harmonic heights from
/// [`laplace_fill`].
pub fn displace_mesh(
    mesh: &SkinnedMesh,
    cloud: &PointCloud,
    sample_radius: f64,
    sample_height: f64,
) -> Result<(SkinnedMesh, DisplaceReport), TreegeomError> {
    if !(sample_radius > 0.0 && sample_height > 0.0) {
        return Err(TreegeomError::InvalidParams("sampling region must have positive size".into()));
    }
    let pts = cloud.positions();
    let index = PointIndex::new(&pts);
    let reach2 = sample_radius * sample_radius + sample_height * sample_height;
    let known: Vec<Option<f64>> = mesh
        .vertices
        .par_iter()
        .map(|v| {
            let index = index.as_ref()?;
            let c = v.position();
            let n = v.normal().try_normalize(0.0)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in index.within(&c, reach2 * (1.0 + 1e-12)) {
                if region_contains(&c, &n, &pts[i], sample_radius, sample_height) {
                    sum += (pts[i] - c).dot(&n);
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    let n_known = known.iter().filter(|k| k.is_some()).count();
    let mut warnings = Vec::new();
    if n_known == 0 {
        warnings.push("no vertex sampled any point; displacement is zero".to_owned());
    }
    let adj = mesh_adjacency(mesh.vertices.len(), &mesh.triangles);
    let fill = laplace_fill(&adj, &known);
    if !fill.zero_filled.is_empty() && n_known > 0 {
        warnings.push(format!("{} vertices in regions without samples set to zero", fill.zero_filled.len()));
    }
    let mut out = mesh.clone();
    for (v, h) in out.vertices.iter_mut().zip(&fill.heights) {
        let n = v.normal().try_normalize(0.0).unwrap_or_else(Vec3::zeros);
        v.pos = (v.position() + n * *h).into();
    }
    let report = DisplaceReport {
        heights: fill.heights,
        known: n_known,
        unknown: known.len() - n_known,
        zero_filled: fill.zero_filled.len(),
        warnings,
    };
    Ok((out, report))
}

/// `Σ deg(v) ‖mean(neighbors) − v‖²` over vertices with neighbors.
pub fn laplacian_energy(positions: &[Vec3], adj: &[Vec<usize>]) -> f64 {
    positions
        .iter()
        .zip(adj)
        .filter(|(_, nb)| !nb.is_empty())
        .map(|(p, nb)| {
            let mean = nb.iter().map(|&j| positions[j]).sum::<Vec3>() / nb.len() as f64;
            nb.len() as f64 * (mean - p).norm_squared()
        })
        .sum()
}

/// Uniform Laplacian smoothing: each iteration moves every vertex by
/// `lambda · (mean(neighbors) − vertex)`. Returns the mesh and the degree-weighted
/// Laplacian energy before the first and after every iteration.
pub fn smooth(mesh: &SkinnedMesh, iterations: usize, lambda: f64) -> Result<(SkinnedMesh, Vec<f64>), TreegeomError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(TreegeomError::InvalidParams(format!("lambda {lambda} outside (0, 1]")));
    }
    let adj = mesh_adjacency(mesh.vertices.len(), &mesh.triangles);
    let mut pos = mesh.positions();
    let mut energies = vec![laplacian_energy(&pos, &adj)];
    for _ in 0..iterations {
        pos = pos
            .par_iter()
            .zip(&adj)
            .map(|(p, nb)| {
                if nb.is_empty() {
                    return *p;
                }
                let mean = nb.iter().map(|&j| pos[j]).sum::<Vec3>() / nb.len() as f64;
                p + (mean - p) * lambda
            })
            .collect();
        energies.push(laplacian_energy(&pos, &adj));
    }
    let mut out = mesh.clone();
    for (v, p) in out.vertices.iter_mut().zip(&pos) {
        v.pos = (*p).into();
    }
    Ok((out, energies))
}

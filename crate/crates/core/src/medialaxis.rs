//! Medial-axis tracing over a flow field by alternating projection and advection.
//!
//! Projection moves a point to the middle of the flow-consistent cross-section through
//! it; advection steps along the local flow direction, optionally pulled toward a target
//! endpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::FlowField;
use crate::Vec2;

const BISECTION_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    /// Advection step, pixels.
    pub step: f64,
    /// Half-angle of the direction cone, degrees.
    pub cone_deg: f64,
    pub max_steps: usize,
    /// Farthest distance probed on either side of a point, pixels.
    pub max_probe: f64,
    /// Probe spacing along the cross-section before bisection refines the boundary.
    pub probe_step: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            step: 2.0,
            cone_deg: 15.0,
            max_steps: 5000,
            max_probe: 16.0,
            probe_step: 0.5,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let ok = self.step > 0.0
            && self.cone_deg > 0.0
            && self.cone_deg < 90.0
            && self.max_steps > 0
            && self.max_probe > 0.0
            && self.probe_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TraceError::InvalidParams)
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("no flow at ({}, {})", .0.x, .0.y)]
    NoFlowAtPoint(Vec2),
    #[error("no flow direction at ({}, {}) lies within the cone", .0.x, .0.y)]
    ConeMismatch(Vec2),
    #[error("flow vanished at ({}, {})", .0.x, .0.y)]
    ZeroFlow(Vec2),
    #[error("no flow at the start point ({}, {})", .0.x, .0.y)]
    NoFlowAtStart(Vec2),
    #[error("invalid trace parameters")]
    InvalidParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ZeroFlow,
    ReachedEndpoint,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedialAxisPolyline {
    pub points: Vec<[f64; 2]>,
    /// Full cross-section width at each point, pixels.
    pub thicknesses: Vec<f64>,
    pub termination: Termination,
}

impl MedialAxisPolyline {
    pub fn points_vec(&self) -> Vec<Vec2> {
        self.points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }
}

fn unit(v: Vec2) -> Vec2 {
    v / v.norm()
}

fn within_cone(dirs: &[Vec2], n: &Vec2, cos_cone: f64) -> bool {
    dirs.iter().any(|d| (d.dot(n) / d.norm()).abs() >= cos_cone)
}

/// Fraction (by bilinear weight) of the four pixels around `q` that carry a direction
/// within the cone of `n` is at least one half.
fn passes(flow: &FlowField, q: Vec2, n: &Vec2, cos_cone: f64) -> bool {
    let (x0, y0) = (q.x.floor(), q.y.floor());
    let (fx, fy) = (q.x - x0, q.y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut w = 0.0;
    for (dx, dy, wt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if wt > 0.0 && within_cone(flow.get_checked(x0 + dx, y0 + dy), n, cos_cone) {
            w += wt;
        }
    }
    w >= 0.5
}

/// Distance from `p` along `m` to the edge of the cone-consistent run.
fn probe(flow: &FlowField, p: Vec2, m: Vec2, n: &Vec2, cos_cone: f64, params: &TraceParams) -> f64 {
    let mut inside = 0.0;
    loop {
        let next = inside + params.probe_step;
        if next > params.max_probe {
            return params.max_probe;
        }
        if !passes(flow, p + m * next, n, cos_cone) {
            let (mut lo, mut hi) = (inside, next);
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if passes(flow, p + m * mid, n, cos_cone) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        inside = next;
    }
}

/// Moves `p` to the midpoint of the cross-section perpendicular to `n` on which the
/// flow stays within the cone; returns the midpoint and the section length.
pub fn project_to_axis(p: Vec2, n: Vec2, flow: &FlowField, params: &TraceParams) -> Result<(Vec2, f64), TraceError> {
    if flow.at_point(p).is_empty() {
        return Err(TraceError::NoFlowAtPoint(p));
    }
    let n = unit(n);
    let cos_cone = params.cone_deg.to_radians().cos();
    if !passes(flow, p, &n, cos_cone) {
        return Err(TraceError::ConeMismatch(p));
    }
    let m = Vec2::new(-n.y, n.x);
    let b = probe(flow, p, m, &n, cos_cone, params);
    let a = probe(flow, p, -m, &n, cos_cone, params);
    let pa = p - m * a;
    let pb = p + m * b;
    Ok(((pa + pb) * 0.5, a + b))
}

/// Stored direction at `p` closest to `n_prev`, sign-flipped to agree with it.
pub fn closest_direction(flow: &FlowField, p: Vec2, n_prev: &Vec2) -> Option<Vec2> {
    flow.at_point(p)
        .iter()
        .map(|d| {
            let u = unit(*d);
            if u.dot(n_prev) < 0.0 {
                -u
            } else {
                u
            }
        })
        .max_by(|a, b| a.dot(n_prev).total_cmp(&b.dot(n_prev)))
}

/// Next direction and position from the projected point `p`.
///
/// With a target `(p0, p1)` the flow direction `n_f` is blended with the unit direction
/// `n_d` toward `p1` as `w n_f + (1 - w) n_d`, `w = clamp(‖p - p1‖ / ‖p0 - p1‖, 0, 1)`.
pub fn advect_step(
    p: Vec2,
    n_prev: Vec2,
    flow: &FlowField,
    params: &TraceParams,
    target: Option<(Vec2, Vec2)>,
) -> Result<(Vec2, Vec2), TraceError> {
    let n_f = closest_direction(flow, p, &unit(n_prev)).ok_or(TraceError::ZeroFlow(p))?;
    let n = match target {
        Some((p0, p1)) => {
            let span = (p0 - p1).norm();
            let w = if span > 0.0 {
                ((p - p1).norm() / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let to_target = p1 - p;
            let n_d = if to_target.norm() > 0.0 { unit(to_target) } else { n_f };
            let blend = n_f * w + n_d * (1.0 - w);
            if blend.norm() > 1e-12 {
                unit(blend)
            } else {
                n_f
            }
        }
        None => n_f,
    };
    Ok((n, p + n * params.step))
}

/// Traces a medial axis from `p0`, optionally guided toward `p1`.
///
/// The start direction is the strongest stored direction at `p0`, oriented toward `p1`
/// when given. Before each projection the direction is refreshed from the flow at the
/// current point. Tracing stops when the flow runs out (or stops agreeing with the
/// cone), when a projected point comes within one step of `p1`, or after `max_steps`.
pub fn trace(flow: &FlowField, p0: Vec2, p1: Option<Vec2>, params: &TraceParams) -> Result<MedialAxisPolyline, TraceError> {
    params.validate()?;
    let first = flow.at_point(p0).first().copied().ok_or(TraceError::NoFlowAtStart(p0))?;
    let mut n = unit(first);
    if let Some(p1) = p1 {
        if n.dot(&(p1 - p0)) < 0.0 {
            n = -n;
        }
    }
    let target = p1.map(|p1| (p0, p1));
    let mut points = Vec::new();
    let mut thicknesses = Vec::new();
    let mut p = p0;
    let termination = loop {
        if points.len() >= params.max_steps {
            break Termination::MaxSteps;
        }
        let Some(local) = closest_direction(flow, p, &n) else {
            break Termination::ZeroFlow;
        };
        let (q, width) = match project_to_axis(p, local, flow, params) {
            Ok(r) => r,
            Err(_) => break Termination::ZeroFlow,
        };
        points.push([q.x, q.y]);
        thicknesses.push(width);
        if let Some(p1) = p1 {
            if (q - p1).norm() <= params.step {
                break Termination::ReachedEndpoint;
            }
        }
        match advect_step(q, local, flow, params, target) {
            Ok((n_next, next)) => {
                n = n_next;
                p = next;
            }
            Err(_) => break Termination::ZeroFlow,
        }
    };
    if points.is_empty() {
        return Err(TraceError::NoFlowAtStart(p0));
    }
    Ok(MedialAxisPolyline {
        points,
        thicknesses,
        termination,
    })
}

/// `count` points spaced evenly by arc length along a polyline.
pub fn resample_polyline(points: &[Vec2], count: usize) -> Vec<Vec2> {
    if points.len() < 2 || count < 2 {
        return points.iter().take(count.max(1)).copied().collect();
    }
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut seg = 0;
    (0..count)
        .map(|i| {
            let s = total * i as f64 / (count - 1) as f64;
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let f = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
            points[seg] + (points[seg + 1] - points[seg]) * f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::{compute_flow, FlowParams};
    use crate::raster::Grid;
    use crate::synthetic;

    fn row_band_flow() -> FlowField {
        let mask = Grid::from_fn(100, 30, |_, y| u8::from((10..=17).contains(&y)));
        compute_flow(&mask, &FlowParams::default()).unwrap()
    }

    fn uniform_flow(w: usize, h: usize, d: Vec2) -> FlowField {
        let mut f = FlowField::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                f.set(x, y, &[d]);
            }
        }
        f
    }

    #[test]
    fn projects_to_band_center() {
        let flow = row_band_flow();
        let params = TraceParams::default();
        let (q, width) = project_to_axis(Vec2::new(50.0, 12.0), Vec2::new(1.0, 0.0), &flow, &params).unwrap();
        assert!((q - Vec2::new(50.0, 13.5)).norm() < 1e-6, "{q:?}");
        assert!((width - 8.0).abs() < 1e-6);
        let (q2, _) = project_to_axis(q, Vec2::new(1.0, 0.0), &flow, &params).unwrap();
        assert!((q2 - q).norm() < 1e-6);
    }

    #[test]
    fn projection_errors() {
        let flow = row_band_flow();
        let params = TraceParams::default();
        assert!(matches!(
            project_to_axis(Vec2::new(50.0, 25.0), Vec2::new(1.0, 0.0), &flow, &params),
            Err(TraceError::NoFlowAtPoint(_))
        ));
        assert!(matches!(
            project_to_axis(Vec2::new(50.0, 13.0), Vec2::new(0.0, 1.0), &flow, &params),
            Err(TraceError::ConeMismatch(_))
        ));
    }

    #[test]
    fn advect_examples() {
        let params = TraceParams::default();
        let d = Vec2::new(0.6, 0.8);
        let flow = uniform_flow(20, 20, d * 3.0);
        let p = Vec2::new(10.0, 10.0);
        let (n, next) = advect_step(p, d, &flow, &params, None).unwrap();
        assert!((n - d).norm() < 1e-6 && (next - (p + d * 2.0)).norm() < 1e-6);
        // Sign follows the previous direction.
        let (n, _) = advect_step(p, -d, &flow, &params, None).unwrap();
        assert!((n + d).norm() < 1e-6);
        // At p0 the flow wins; at p1 the attraction wins.
        let p1 = Vec2::new(18.0, 2.0);
        let (n, _) = advect_step(p, d, &flow, &params, Some((p, p1))).unwrap();
        assert!((n - d).norm() < 1e-6);
        let p0 = Vec2::new(2.0, 2.0);
        let q = Vec2::new(10.0, 10.0);
        let (n, _) = advect_step(q, d, &flow, &params, Some((p0, q))).unwrap();
        assert!((n - d).norm() < 1e-6, "p′ = p1 has no attraction direction; keeps the flow");
        let (q, p0, p1) = (Vec2::new(10.0, 10.0), Vec2::new(10.0, -90.0), Vec2::new(10.0, 10.001));
        let (n, _) = advect_step(q, d, &flow, &params, Some((p0, p1))).unwrap();
        assert!((n - Vec2::new(0.0, 1.0)).norm() < 1e-3);
        assert!(matches!(
            advect_step(Vec2::new(50.0, 50.0), d, &flow, &params, None),
            Err(TraceError::ZeroFlow(_))
        ));
    }

    #[test]
    fn straight_band_trace() {
        let flow = row_band_flow();
        let params = TraceParams::default();
        let line = trace(&flow, Vec2::new(60.0, 13.0), None, &params).unwrap();
        assert_eq!(line.termination, Termination::ZeroFlow);
        assert!(line.points.len() > 15);
        let pts = line.points_vec();
        for (i, p) in pts.iter().enumerate() {
            assert!((p.y - 13.5).abs() < 0.5, "{p:?}");
            if i > 0 {
                let gap = (p - pts[i - 1]).norm();
                assert!((gap - params.step).abs() < 0.5);
            }
        }
        for t in &line.thicknesses[1..line.thicknesses.len() - 1] {
            assert!((t - 8.0).abs() <= 8.0 * 0.15);
        }
    }

    #[test]
    fn empty_start_fails() {
        let flow = row_band_flow();
        assert_eq!(
            trace(&flow, Vec2::new(50.0, 26.0), None, &TraceParams::default()),
            Err(TraceError::NoFlowAtStart(Vec2::new(50.0, 26.0)))
        );
    }

    #[test]
    fn reversed_trace_matches() {
        let (mask, _) = synthetic::sine_band_mask(260, 100, 50.0, 10.0, 200.0, 8.0, (20.0, 240.0));
        let flow = compute_flow(&mask, &FlowParams::default()).unwrap();
        let params = TraceParams::default();
        let y = |x: f64| synthetic::sine_center(x, 50.0, 10.0, 200.0);
        let (a, b) = (Vec2::new(30.0, y(30.0)), Vec2::new(230.0, y(230.0)));
        let fwd = trace(&flow, a, Some(b), &params).unwrap();
        let bwd = trace(&flow, b, Some(a), &params).unwrap();
        assert_eq!(fwd.termination, Termination::ReachedEndpoint);
        assert_eq!(bwd.termination, Termination::ReachedEndpoint);
        let mut r = bwd.points_vec();
        r.reverse();
        // The two traces stop up to one step short of opposite ends, so compare each
        // resampled point against the other polyline rather than index by index.
        let fa = resample_polyline(&fwd.points_vec(), 200);
        let ra = resample_polyline(&r, 200);
        let gap = |p: &Vec2, line: &[Vec2]| line.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
        let interior = |p: &&Vec2| (*p - a).norm() > 2.0 * params.step && (*p - b).norm() > 2.0 * params.step;
        for p in fa.iter().filter(interior) {
            assert!(gap(p, &ra) <= 1.0, "{p:?}");
        }
        for p in ra.iter().filter(interior) {
            assert!(gap(p, &fa) <= 1.0, "{p:?}");
        }
    }
}

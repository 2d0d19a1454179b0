use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::activations::ActivationStack;
use crate::Vec2;

/// Activation floor applied before scale reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Threshold {
    /// Fraction of the stack's global maximum.
    Relative(f64),
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(0.35)
    }
}

/// Per-pixel principal directions: up to two nonzero vectors whose length is the summed
/// activation of their block. Components are rounded to `f32` precision so the field
/// survives a round trip through the binary file format unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    counts: Vec<u8>,
    vectors: Vec<[Vec2; 2]>,
}

fn round_f32(v: Vec2) -> Vec2 {
    Vec2::new(f64::from(v.x as f32), f64::from(v.y as f32))
}

impl FlowField {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: vec![0; width * height],
            vectors: vec![[Vec2::zeros(); 2]; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &[Vec2] {
        let i = y * self.width + x;
        &self.vectors[i][..self.counts[i] as usize]
    }

    pub fn get_checked(&self, x: i64, y: i64) -> &[Vec2] {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            &[]
        } else {
            self.get(x as usize, y as usize)
        }
    }

    /// Directions at the pixel nearest to a continuous position.
    pub fn at_point(&self, p: Vec2) -> &[Vec2] {
        self.get_checked(p.x.round() as i64, p.y.round() as i64)
    }

    /// Stores up to two vectors; zero vectors are dropped and values rounded to `f32`.
    pub fn set(&mut self, x: usize, y: usize, vs: &[Vec2]) {
        let i = y * self.width + x;
        let mut n = 0;
        for v in vs.iter().map(|v| round_f32(*v)).filter(|v| v.norm() > 0.0).take(2) {
            self.vectors[i][n] = v;
            n += 1;
        }
        for slot in &mut self.vectors[i][n..] {
            *slot = Vec2::zeros();
        }
        self.counts[i] = n as u8;
    }

    pub fn count_nonempty(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Splits a circular angle histogram into blocks and returns one vector per block.
///
/// Runs of nonzero bins are separated by zero bins, wrapping from the last bin to the
/// first. Inside a run, a bin that is strictly below its predecessor and no greater than
/// its successor is a local minimum: its weight is shared equally by the blocks on either
/// side. Angles inside a block are unwrapped (170° is followed by 180°, not 0°) so that a
/// block straddling the wrap sums coherently.
pub fn block_vectors(hist: &[f64], step: f64) -> Vec<Vec2> {
    let n = hist.len();
    let mut out = Vec::new();
    let dir = |k: usize| {
        let a = step * k as f64;
        Vec2::new(a.cos(), a.sin())
    };
    for start in 0..n {
        if hist[start] <= 0.0 || hist[(start + n - 1) % n] > 0.0 {
            continue;
        }
        let mut acc = Vec2::zeros();
        let mut k = 0;
        while k < n && hist[(start + k) % n] > 0.0 {
            let j = (start + k) % n;
            let a = hist[j];
            let prev = hist[(j + n - 1) % n];
            let next = hist[(j + 1) % n];
            let d = dir(start + k);
            if k > 0 && a < prev && a <= next && next > 0.0 {
                acc += d * (0.5 * a);
                out.push(acc);
                acc = d * (0.5 * a);
            } else {
                acc += d * a;
            }
            k += 1;
        }
        out.push(acc);
    }
    out
}

/// Principal flow directions from an activation stack.
///
/// Per pixel: activations below the threshold are zeroed, scales are reduced by maximum,
/// pixels with no nonzero bin or with more than half of the bins nonzero are skipped, the
/// remaining histogram is split by [`block_vectors`] and the two longest vectors kept.
/// When `restrict_to_mask` is set, only pixels inside the stack's mask carry flow.
pub fn extract_flow(stack: &ActivationStack, threshold: Threshold, restrict_to_mask: bool) -> FlowField {
    let (w, h) = stack.dims();
    let floor = match threshold {
        Threshold::Relative(f) => f * f64::from(stack.max()),
        Threshold::Absolute(a) => a,
    };
    let n_ang = stack.angles.len();
    let step = if n_ang > 1 {
        stack.angles[1] - stack.angles[0]
    } else {
        std::f64::consts::PI
    };
    let rows: Vec<Vec<Vec<Vec2>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut hist = vec![0.0f64; n_ang];
            (0..w)
                .map(|x| {
                    if restrict_to_mask && *stack.mask().get(x, y) == 0 {
                        return Vec::new();
                    }
                    for (a, slot) in hist.iter_mut().enumerate() {
                        *slot = (0..stack.scales.len())
                            .map(|s| f64::from(stack.get(s, a, x, y)))
                            .map(|v| if v >= floor && v > 0.0 { v } else { 0.0 })
                            .fold(0.0, f64::max);
                    }
                    let nonzero = hist.iter().filter(|&&v| v > 0.0).count();
                    if nonzero == 0 || 2 * nonzero > n_ang {
                        return Vec::new();
                    }
                    let mut vs = block_vectors(&hist, step);
                    vs.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
                    vs.truncate(2);
                    vs
                })
                .collect()
        })
        .collect();
    let mut field = FlowField::empty(w, h);
    for (y, row) in rows.iter().enumerate() {
        for (x, vs) in row.iter().enumerate() {
            if !vs.is_empty() {
                field.set(x, y, vs);
            }
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEP: f64 = std::f64::consts::PI / 18.0;

    fn angle_deg(v: &Vec2) -> f64 {
        v.y.atan2(v.x).to_degrees().rem_euclid(180.0)
    }

    #[test]
    fn single_block() {
        let mut h = vec![0.0; 18];
        h[3] = 1.0;
        h[4] = 2.0;
        h[5] = 1.0;
        let vs = block_vectors(&h, STEP);
        assert_eq!(vs.len(), 1);
        assert!((angle_deg(&vs[0]) - 40.0).abs() < 1e-9);
    }

    #[test]
    fn local_minimum_splits_evenly() {
        let mut h = vec![0.0; 18];
        h[2] = 3.0;
        h[3] = 1.0;
        h[4] = 3.0;
        let vs = block_vectors(&h, STEP);
        assert_eq!(vs.len(), 2);
        let total: f64 = h.iter().sum();
        // Each block holds 3 + 0.5 in weight; vectors are nearly aligned so norms ≈ weights.
        assert!(vs.iter().all(|v| v.norm() < 3.5 + 1e-12 && v.norm() > 3.4));
        assert!((vs[0].norm() + vs[1].norm() - total).abs() < 0.05);
    }

    #[test]
    fn wraparound_block_is_unwrapped() {
        let mut h = vec![0.0; 18];
        h[17] = 1.0;
        h[0] = 1.0;
        let vs = block_vectors(&h, STEP);
        assert_eq!(vs.len(), 1);
        assert!((angle_deg(&vs[0]) - 175.0).abs() < 1e-9);
        assert!((vs[0].norm() - 2.0 * (5f64.to_radians()).cos()).abs() < 1e-12);
    }

    #[test]
    fn plateau_is_not_split() {
        let mut h = vec![0.0; 18];
        h[6] = 2.0;
        h[7] = 2.0;
        h[8] = 2.0;
        assert_eq!(block_vectors(&h, STEP).len(), 1);
    }

    #[test]
    fn set_drops_zero_and_rounds() {
        let mut f = FlowField::empty(2, 1);
        f.set(0, 0, &[Vec2::new(0.1, 0.0), Vec2::zeros(), Vec2::new(0.0, 2.0)]);
        assert_eq!(f.get(0, 0).len(), 2);
        assert_eq!(f.get(0, 0)[0].x, f64::from(0.1f32));
        assert!(f.get(1, 0).is_empty());
        assert!(f.get_checked(-1, 0).is_empty());
    }
}

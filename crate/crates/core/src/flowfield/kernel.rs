use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::Vec2;

/// Number of kernels in a bank: 0° to 170° in 10° steps (the filters are bidirectional).
pub const BANK_SIZE: usize = 18;

/// Normalization radius of the linear falloff `w = 1 - ‖p‖ / falloff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Falloff {
    /// `falloff = r`, the literal formula. Far-field weights go strongly negative.
    Thickness,
    /// `falloff = N / 2`, so the weight reaches zero at the grid edge.
    HalfExtent,
    Radius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    /// Branch half-thickness the kernel responds to, pixels.
    pub r: f64,
    pub sigma: f64,
    /// Grid side length (odd); offsets span `-(N-1)/2 ..= (N-1)/2`.
    pub n: usize,
    pub falloff: Falloff,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            r: 4.0,
            sigma: 1.8,
            n: 35,
            falloff: Falloff::HalfExtent,
        }
    }
}

impl KernelParams {
    /// The alternative parameter set `r = 3.8, σ = 0.8`.
    pub fn narrow() -> Self {
        Self {
            r: 3.8,
            sigma: 0.8,
            ..Self::default()
        }
    }

    pub fn falloff_radius(&self) -> f64 {
        match self.falloff {
            Falloff::Thickness => self.r,
            Falloff::HalfExtent => self.n as f64 / 2.0,
            Falloff::Radius(f) => f,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidParams(m.to_owned()));
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad("r must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.n % 2 == 0 {
            return bad("N must be odd");
        }
        if !(self.falloff_radius() > 0.0) {
            return bad("falloff radius must be positive");
        }
        Ok(())
    }
}

/// Continuous kernel value at offset `p` for a line at angle `theta`.
///
/// With `v = (cos θ, sin θ)`, `d = ‖p - (p·v) v‖ / r` and `w = 1 - ‖p‖ / falloff`:
/// `w cos(dπ/2)` for `d < 1`, `-(w/σ) sin((d-1)π/σ)` for `1 < d < 1+σ`, else 0.
pub fn kernel_weight(p: Vec2, theta: f64, r: f64, sigma: f64, falloff: f64) -> f64 {
    let v = Vec2::new(theta.cos(), theta.sin());
    let d = (p - v * p.dot(&v)).norm() / r;
    let w = 1.0 - p.norm() / falloff;
    if d < 1.0 {
        w * (d * PI / 2.0).cos()
    } else if d > 1.0 && d < 1.0 + sigma {
        -w / sigma * ((d - 1.0) * PI / sigma).sin()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalKernel {
    pub theta: f64,
    pub params: KernelParams,
    /// Row-major `N × N`; entry `(i, j)` is offset `(i - h, j - h)` with `h = (N-1)/2`.
    pub weights: Vec<f64>,
}

impl DirectionalKernel {
    pub fn half(&self) -> usize {
        (self.params.n - 1) / 2
    }

    pub fn at(&self, dx: i64, dy: i64) -> f64 {
        let h = self.half() as i64;
        let n = self.params.n as i64;
        self.weights[((dy + h) * n + dx + h) as usize]
    }
}

/// Kernel with the literal falloff `w = 1 - ‖p‖ / r`.
pub fn make_kernel(theta: f64, r: f64, sigma: f64, n: usize) -> Result<DirectionalKernel, FlowError> {
    make_kernel_with(
        theta,
        &KernelParams {
            r,
            sigma,
            n,
            falloff: Falloff::Thickness,
        },
    )
}

pub fn make_kernel_with(theta: f64, params: &KernelParams) -> Result<DirectionalKernel, FlowError> {
    params.validate()?;
    let h = ((params.n - 1) / 2) as i64;
    let falloff = params.falloff_radius();
    let mut weights = Vec::with_capacity(params.n * params.n);
    for dy in -h..=h {
        for dx in -h..=h {
            weights.push(kernel_weight(
                Vec2::new(dx as f64, dy as f64),
                theta,
                params.r,
                params.sigma,
                falloff,
            ));
        }
    }
    Ok(DirectionalKernel {
        theta,
        params: *params,
        weights,
    })
}

pub fn bank_angles() -> Vec<f64> {
    (0..BANK_SIZE).map(|i| (10.0 * i as f64).to_radians()).collect()
}

pub fn make_bank(params: &KernelParams) -> Result<Vec<DirectionalKernel>, FlowError> {
    bank_angles().into_iter().map(|t| make_kernel_with(t, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_value() {
        let k = make_kernel(0.0, 4.0, 1.8, 35).unwrap();
        // Offset (0, 2): w = 0.5, d = 0.5.
        assert!((k.at(0, 2) - 0.5 * (PI / 4.0).cos()).abs() < 1e-12);
        assert!((k.at(0, 2) - 0.35355).abs() < 1e-5);
    }

    #[test]
    fn center_and_symmetry() {
        for params in [KernelParams::default(), KernelParams::narrow(), KernelParams { falloff: Falloff::Thickness, ..Default::default() }] {
            for k in make_bank(&params).unwrap() {
                assert_eq!(k.at(0, 0), 1.0);
                let h = k.half() as i64;
                for dy in -h..=h {
                    for dx in -h..=h {
                        assert!((k.at(dx, dy) - k.at(-dx, -dy)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn continuous_at_branch_boundaries() {
        let (r, s, f) = (4.0, 1.8, 17.5);
        for theta in bank_angles() {
            let normal = Vec2::new(-theta.sin(), theta.cos());
            let along = Vec2::new(theta.cos(), theta.sin()) * 1.3;
            for d in [1.0, 1.0 + s] {
                let at = kernel_weight(along + normal * d * r, theta, r, s, f);
                assert!(at.abs() < 1e-12);
                for eps in [1e-7, -1e-7] {
                    let near = kernel_weight(along + normal * (d + eps) * r, theta, r, s, f);
                    assert!(near.abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn bank_layout() {
        let bank = make_bank(&KernelParams::default()).unwrap();
        assert_eq!(bank.len(), 18);
        assert!((bank[17].theta - 170f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_pairs() {
        let (r, s, f) = (4.0, 1.8, 17.5);
        let angles = bank_angles();
        for i in 0..9 {
            for (x, y) in [(1.3, 2.7), (-5.0, 0.4), (3.3, -8.1)] {
                let p = Vec2::new(x, y);
                let rotated = Vec2::new(-p.y, p.x);
                let a = kernel_weight(p, angles[i], r, s, f);
                let b = kernel_weight(rotated, angles[i + 9], r, s, f);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_params() {
        assert!(make_kernel(0.0, 0.0, 1.8, 35).is_err());
        assert!(make_kernel(0.0, 4.0, -1.0, 35).is_err());
        assert!(make_kernel(0.0, 4.0, 1.8, 34).is_err());
    }
}

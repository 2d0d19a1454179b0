use rayon::prelude::*;

use super::kernel::DirectionalKernel;
use super::FlowError;
use crate::raster::Grid;

/// `{1, 1/√2, 1/2, 1/(2√2), 1/4}`.
pub fn default_scales() -> Vec<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    vec![1.0, r, 0.5, 0.5 * r, 0.25]
}

/// Directional responses for every (scale, kernel) pair.
///
/// Grids are kept at their native resolution and read back at reference resolution with
/// nearest-neighbor lookup: reference pixel `x` maps to `floor(x · w / W)`.
#[derive(Debug, Clone)]
pub struct ActivationStack {
    width: usize,
    height: usize,
    pub scales: Vec<f64>,
    pub angles: Vec<f64>,
    /// `grids[scale][angle]`.
    grids: Vec<Vec<Grid<f32>>>,
    mask: Grid<u8>,
}

impl ActivationStack {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self) -> &Grid<u8> {
        &self.mask
    }

    pub fn native(&self, scale: usize, angle: usize) -> &Grid<f32> {
        &self.grids[scale][angle]
    }

    /// Activation at reference pixel `(x, y)`.
    #[inline]
    pub fn get(&self, scale: usize, angle: usize, x: usize, y: usize) -> f32 {
        let g = &self.grids[scale][angle];
        let sx = (x * g.width() / self.width).min(g.width() - 1);
        let sy = (y * g.height() / self.height).min(g.height() - 1);
        *g.get(sx, sy)
    }

    pub fn max(&self) -> f32 {
        self.grids
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter().copied())
            .fold(0.0f32, f32::max)
    }
}

/// Zero-padded 2D convolution restricted to nonzero input pixels.
///
/// Every nonzero input sample scatters its weighted kernel into the output window; the
/// kernel is point-symmetric so scatter and gather coincide. Row-major visiting order
/// makes the floating-point result independent of scheduling.
pub fn convolve(input: &Grid<f64>, kernel: &DirectionalKernel) -> Grid<f64> {
    let (w, h) = input.dims();
    let n = kernel.params.n;
    let half = kernel.half() as i64;
    let mut out = Grid::new(w, h, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let v = *input.get(x, y);
            if v == 0.0 {
                continue;
            }
            let x0 = (x as i64 - half).max(0);
            let x1 = (x as i64 + half).min(w as i64 - 1);
            for ky in 0..n as i64 {
                let oy = y as i64 + ky - half;
                if oy < 0 || oy >= h as i64 {
                    continue;
                }
                let krow = &kernel.weights[(ky as usize) * n..(ky as usize + 1) * n];
                let kx0 = (x0 - (x as i64 - half)) as usize;
                let row = &mut out.data_mut()[oy as usize * w..(oy as usize + 1) * w];
                for (o, k) in row[x0 as usize..=x1 as usize].iter_mut().zip(&krow[kx0..]) {
                    *o += v * k;
                }
            }
        }
    }
    out
}

fn scaled_dims(w: usize, h: usize, s: f64) -> (usize, usize) {
    (
        ((w as f64 * s).round() as usize).max(1),
        ((h as f64 * s).round() as usize).max(1),
    )
}

/// Convolves bilinearly downsampled copies of `mask` with every kernel in `bank`.
pub fn directional_activations(
    mask: &Grid<u8>,
    bank: &[DirectionalKernel],
    scales: &[f64],
) -> Result<ActivationStack, FlowError> {
    let (w, h) = mask.dims();
    if w == 0 || h == 0 {
        return Err(FlowError::EmptyMask);
    }
    if let Some(&s) = scales.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
        return Err(FlowError::InvalidParams(format!("scale {s} outside (0, 1]")));
    }
    let base = mask.map(|&v| if v != 0 { 1.0 } else { 0.0 });
    let resized: Vec<Grid<f64>> = scales
        .iter()
        .map(|&s| {
            let (sw, sh) = scaled_dims(w, h, s);
            if (sw, sh) == (w, h) {
                base.clone()
            } else {
                base.resize_bilinear(sw, sh)
            }
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..scales.len())
        .flat_map(|s| (0..bank.len()).map(move |k| (s, k)))
        .collect();
    let flat: Vec<Grid<f32>> = jobs
        .par_iter()
        .map(|&(s, k)| convolve(&resized[s], &bank[k]).map(|&v| v as f32))
        .collect();
    let mut it = flat.into_iter();
    let grids = (0..scales.len())
        .map(|_| it.by_ref().take(bank.len()).collect())
        .collect();
    Ok(ActivationStack {
        width: w,
        height: h,
        scales: scales.to_vec(),
        angles: bank.iter().map(|k| k.theta).collect(),
        grids,
        mask: mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::kernel::{make_bank, KernelParams};
    use super::*;

    #[test]
    fn zero_mask_zero_stack() {
        let bank = make_bank(&KernelParams::default()).unwrap();
        let st = directional_activations(&Grid::new(20, 15, 0u8), &bank, &default_scales()).unwrap();
        assert_eq!(st.max(), 0.0);
        assert_eq!(st.native(4, 0).dims(), (5, 4));
    }

    #[test]
    fn single_pixel_hits_center_weight() {
        let bank = make_bank(&KernelParams::default()).unwrap();
        let mut m = Grid::new(41, 41, 0u8);
        m.set(20, 20, 1);
        let st = directional_activations(&m, &bank, &[1.0]).unwrap();
        for k in 0..bank.len() {
            assert_eq!(st.get(0, k, 20, 20), 1.0);
            // Away from the pixel the response is the kernel value at the offset.
            assert_eq!(st.get(0, k, 23, 18), bank[k].at(3, -2) as f32);
        }
    }

    #[test]
    fn matches_direct_gather() {
        let bank = make_bank(&KernelParams::narrow()).unwrap();
        let m = Grid::from_fn(30, 22, |x, y| u8::from((x * 7 + y * 3) % 5 == 0));
        let input = m.map(|&v| f64::from(v));
        let out = convolve(&input, &bank[4]);
        let h = bank[4].half() as i64;
        for y in 0..22i64 {
            for x in 0..30i64 {
                let mut s = 0.0;
                for dy in -h..=h {
                    for dx in -h..=h {
                        if let Some(v) = input.get_checked(x + dx, y + dy) {
                            s += v * bank[4].at(dx, dy);
                        }
                    }
                }
                assert!((s - out.get(x as usize, y as usize)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_dims_rejected() {
        let bank = make_bank(&KernelParams::default()).unwrap();
        assert!(matches!(
            directional_activations(&Grid::new(0, 0, 0u8), &bank, &[1.0]),
            Err(FlowError::EmptyMask)
        ));
    }
}

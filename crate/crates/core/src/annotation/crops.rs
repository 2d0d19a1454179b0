use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Grid, IntegralImage};

pub const CROP_SIZE: usize = 512;
pub const MIN_CENTER_SPACING: f64 = 50.0;
/// Rejection sampling gives up after `count × CROP_ATTEMPTS_PER_CROP` candidates.
pub const CROP_ATTEMPTS_PER_CROP: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CropError {
    #[error("image {width}x{height} is smaller than a {CROP_SIZE}x{CROP_SIZE} crop")]
    ImageTooSmall { width: usize, height: usize },
    #[error("image is {image:?} but mask is {mask:?}")]
    DimensionMismatch { image: (usize, usize), mask: (usize, usize) },
}

/// A square training crop. The crop covers `[cx - 256, cx + 256) × [cy - 256, cy + 256)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub center: [usize; 2],
    pub size: usize,
    pub image_id: String,
    pub mask_id: String,
}

impl CropSpec {
    pub fn origin(&self) -> (usize, usize) {
        (self.center[0] - self.size / 2, self.center[1] - self.size / 2)
    }
}

/// Samples up to `count` crops whose masks contain both values and whose centers are at
/// least [`MIN_CENTER_SPACING`] pixels apart. Deterministic for a fixed seed.
pub fn gen_crops(
    image_dims: (usize, usize),
    mask: &Grid<u8>,
    ids: (&str, &str),
    count: usize,
    seed: u64,
) -> Result<Vec<CropSpec>, CropError> {
    let (w, h) = mask.dims();
    if image_dims != (w, h) {
        return Err(CropError::DimensionMismatch {
            image: image_dims,
            mask: (w, h),
        });
    }
    if w < CROP_SIZE || h < CROP_SIZE {
        return Err(CropError::ImageTooSmall { width: w, height: h });
    }
    let half = CROP_SIZE / 2;
    let full = (CROP_SIZE * CROP_SIZE) as u64;
    let integral = IntegralImage::new(mask);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[usize; 2]> = Vec::with_capacity(count);
    for _ in 0..count.saturating_mul(CROP_ATTEMPTS_PER_CROP) {
        if centers.len() == count {
            break;
        }
        let c = [rng.random_range(half..=w - half), rng.random_range(half..=h - half)];
        let set = integral.count(c[0] - half, c[1] - half, c[0] + half, c[1] + half);
        if set == 0 || set == full {
            continue;
        }
        let far = centers.iter().all(|o| {
            let dx = o[0] as f64 - c[0] as f64;
            let dy = o[1] as f64 - c[1] as f64;
            dx.hypot(dy) >= MIN_CENTER_SPACING
        });
        if far {
            centers.push(c);
        }
    }
    Ok(centers
        .into_iter()
        .map(|center| CropSpec {
            center,
            size: CROP_SIZE,
            image_id: ids.0.to_owned(),
            mask_id: ids.1.to_owned(),
        })
        .collect())
}

pub fn extract_crop<T: Clone>(grid: &Grid<T>, spec: &CropSpec) -> Grid<T> {
    let (x0, y0) = spec.origin();
    Grid::from_fn(spec.size, spec.size, |x, y| grid.get(x0 + x, y0 + y).clone())
}

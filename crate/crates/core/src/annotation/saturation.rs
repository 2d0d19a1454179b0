use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Grid;

/// Default side length of the neighborhood used for per-pixel composite weights.
pub const COMPOSITE_WINDOW: usize = 15;

const KMEANS_TOL: f64 = 1e-9;
const KMEANS_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationFeature {
    pub p30: f64,
    pub p90: f64,
}

impl SaturationFeature {
    fn dist(&self, c: &[f64; 2]) -> f64 {
        (self.p30 - c[0]).hypot(self.p90 - c[1])
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("image is empty")]
    EmptyImage,
    #[error("need at least {k} distinct points, got {distinct}")]
    InsufficientPoints { k: usize, distinct: usize },
    #[error("inputs have mismatched dimensions")]
    DimensionMismatch,
}

/// HSV saturation `(max - min) / max`, 0 for black.
pub fn saturation(rgb: [u8; 3]) -> f64 {
    let max = rgb.iter().copied().max().unwrap();
    let min = rgb.iter().copied().min().unwrap();
    if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    }
}

/// Percentile `q ∈ [0, 1]` of sorted data, linearly interpolated at position `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn feature_of(values: &mut [f64]) -> SaturationFeature {
    values.sort_by(f64::total_cmp);
    SaturationFeature {
        p30: percentile(values, 0.3),
        p90: percentile(values, 0.9),
    }
}

pub fn saturation_features(img: &image::RgbImage) -> Result<SaturationFeature, ClusterError> {
    if img.width() == 0 || img.height() == 0 {
        return Err(ClusterError::EmptyImage);
    }
    let mut values: Vec<f64> = img.pixels().map(|p| saturation(p.0)).collect();
    Ok(feature_of(&mut values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centers: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centers.
    pub cost: f64,
}

fn nearest(p: &SaturationFeature, centers: &[[f64; 2]]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, p.dist(c).powi(2)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's k-means with k-means++ seeding, run until no center moves more than 1e-9.
pub fn cluster_features(features: &[SaturationFeature], k: usize, seed: u64) -> Result<KMeans, ClusterError> {
    let mut distinct: Vec<[u64; 2]> = features.iter().map(|f| [f.p30.to_bits(), f.p90.to_bits()]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        return Err(ClusterError::InsufficientPoints {
            k,
            distinct: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = &features[rng.random_range(0..features.len())];
    let mut centers = vec![[first.p30, first.p90]];
    while centers.len() < k {
        let d2: Vec<f64> = features.iter().map(|f| nearest(f, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let mut pick = rng.random_range(0.0..total);
        let mut chosen = d2.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if pick < *d {
                chosen = i;
                break;
            }
            pick -= d;
        }
        // Zero-weight points are never picked; guard against rounding at the tail.
        if d2[chosen] == 0.0 {
            chosen = d2.iter().rposition(|&d| d > 0.0).unwrap();
        }
        centers.push([features[chosen].p30, features[chosen].p90]);
    }

    let mut assignments = vec![0; features.len()];
    for _ in 0..KMEANS_MAX_ITER {
        for (a, f) in assignments.iter_mut().zip(features) {
            *a = nearest(f, &centers).0;
        }
        let mut sums = vec![[0.0f64; 3]; k];
        for (a, f) in assignments.iter().zip(features) {
            sums[*a][0] += f.p30;
            sums[*a][1] += f.p90;
            sums[*a][2] += 1.0;
        }
        let mut moved = 0.0f64;
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                let n = [s[0] / s[2], s[1] / s[2]];
                moved = moved.max((n[0] - c[0]).hypot(n[1] - c[1]));
                *c = n;
            }
        }
        if moved <= KMEANS_TOL {
            break;
        }
    }
    for (a, f) in assignments.iter_mut().zip(features) {
        *a = nearest(f, &centers).0;
    }
    let cost = assignments.iter().zip(features).map(|(a, f)| f.dist(&centers[*a]).powi(2)).sum();
    Ok(KMeans {
        centers,
        assignments,
        cost,
    })
}

/// Blends two candidate masks per pixel by how close the pixel's neighborhood saturation
/// feature is to each model's cluster center.
///
/// With `dA`, `dB` the distances to `center_a` and `center_b`, the weight of `mask_a` is
/// `dB / (dA + dB)` (0.5 when both vanish). The neighborhood is a `window × window`
/// square truncated at the image border.
pub fn composite_masks(
    mask_a: &Grid<f64>,
    mask_b: &Grid<f64>,
    image: &image::RgbImage,
    center_a: [f64; 2],
    center_b: [f64; 2],
    window: usize,
) -> Result<Grid<f64>, ClusterError> {
    let dims = mask_a.dims();
    if mask_b.dims() != dims || (image.width() as usize, image.height() as usize) != dims {
        return Err(ClusterError::DimensionMismatch);
    }
    let (w, h) = dims;
    let sat = Grid::from_fn(w, h, |x, y| saturation(image.get_pixel(x as u32, y as u32).0));
    let half = window / 2;
    let data: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let (x, y) = (i % w, i / w);
            buf.clear();
            for yy in y.saturating_sub(half)..(y + half + 1).min(h) {
                buf.extend_from_slice(&sat.row(yy)[x.saturating_sub(half)..(x + half + 1).min(w)]);
            }
            let f = feature_of(buf);
            let (da, db) = (f.dist(&center_a), f.dist(&center_b));
            let wa = if da + db > 0.0 { db / (da + db) } else { 0.5 };
            wa * mask_a.data()[i] + (1.0 - wa) * mask_b.data()[i]
        })
        .collect();
    Ok(Grid::from_vec(w, h, data).unwrap())
}

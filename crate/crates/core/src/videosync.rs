//! Integer frame alignment of two video feeds from their motion-magnitude series.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::raster::Grid;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("motion series is empty")]
    EmptySeries,
    #[error("max lag {max_lag} must be below the shorter series length {len}")]
    LagTooLarge { max_lag: usize, len: usize },
    #[error("reading {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeries {
    /// L1 distance between consecutive frames; one shorter than the frame count.
    pub values: Vec<f64>,
    pub fps: f64,
}

impl MotionSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Worst-case timing error left after integer alignment, in seconds.
    pub fn max_temporal_error(&self) -> f64 {
        max_temporal_error(self.fps)
    }
}

pub fn max_temporal_error(fps: f64) -> f64 {
    0.5 / fps
}

pub fn luma(img: &image::RgbImage) -> Grid<f64> {
    let (w, h) = img.dimensions();
    Grid::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        LUMA[0] * f64::from(p[0]) + LUMA[1] * f64::from(p[1]) + LUMA[2] * f64::from(p[2])
    })
}

pub fn frame_diff_sequence(frames: &[Grid<f64>], fps: f64) -> Result<MotionSeries, SyncError> {
    if frames.len() < 2 {
        return Err(SyncError::TooFewFrames(frames.len()));
    }
    let expected = frames[0].dims();
    if let Some((index, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != expected) {
        return Err(SyncError::DimensionMismatch {
            index,
            expected,
            got: f.dims(),
        });
    }
    let values = frames
        .windows(2)
        .map(|w| w[0].data().iter().zip(w[1].data()).map(|(a, b)| (b - a).abs()).sum())
        .collect();
    Ok(MotionSeries { values, fps })
}

/// Loads every PNG/JPEG in `dir` in lexicographic file-name order as a luma frame.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<Grid<f64>>, SyncError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            image::open(&path)
                .map(|img| luma(&img.to_rgb8()))
                .map_err(|source| SyncError::Image { path, source })
        })
        .collect()
}

/// Zero-mean, unit-variance correlation of `b[i + lag]` against `a[i]` over their overlap.
/// Returns `None` when the overlap has fewer than two samples, and 0 when either side
/// has zero variance.
pub fn normalized_cross_correlation(a: &[f64], b: &[f64], lag: i64) -> Option<f64> {
    let start = 0.max(-lag) as usize;
    let end = (a.len() as i64).min(b.len() as i64 - lag);
    if end - (start as i64) < 2 {
        return None;
    }
    let end = end as usize;
    let n = (end - start) as f64;
    let xs = &a[start..end];
    let ys = &b[(start as i64 + lag) as usize..(end as i64 + lag) as usize];
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Some(0.0);
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Lag `L` in `[-max_lag, max_lag]` maximizing the correlation of `b[i + L]` with `a[i]`.
///
/// Candidates are visited in order 0, -1, 1, -2, 2, ... and only a strictly better score
/// replaces the incumbent, so ties resolve toward the smaller `|L|`.
pub fn best_offset(a: &MotionSeries, b: &MotionSeries, max_lag: usize) -> Result<i64, SyncError> {
    if a.is_empty() || b.is_empty() {
        return Err(SyncError::EmptySeries);
    }
    let len = a.len().min(b.len());
    if max_lag >= len {
        return Err(SyncError::LagTooLarge { max_lag, len });
    }
    let mut best = (0i64, f64::NEG_INFINITY);
    for m in 0..=max_lag as i64 {
        for lag in if m == 0 { vec![0] } else { vec![-m, m] } {
            if let Some(score) = normalized_cross_correlation(&a.values, &b.values, lag) {
                if score > best.1 {
                    best = (lag, score);
                }
            }
        }
    }
    Ok(best.0)
}

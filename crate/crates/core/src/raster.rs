//! Dense row-major 2D grids used for masks, activations and grayscale frames.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps row-major data. Returns `None` when the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    /// Bounds-checked access with signed coordinates.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64) -> Option<&T> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Grid<f64> {
    /// Bilinear sample with edge clamping; pixel centers sit on integer coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize to `(new_w, new_h)`.
    ///
    /// Output pixel `i` samples the source at `(i + 0.5) * w / new_w - 0.5`, clamped to
    /// the source extent.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Grid<f64> {
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        Grid::from_fn(new_w, new_h, |i, j| {
            self.sample_bilinear((i as f64 + 0.5) * sx - 0.5, (j as f64 + 0.5) * sy - 0.5)
        })
    }
}

impl Grid<u8> {
    /// Converts a 0/255 (or any nonzero) grayscale image into a 0/1 mask.
    pub fn from_gray_image(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Grid {
            width: w as usize,
            height: h as usize,
            data: img.as_raw().iter().map(|&v| u8::from(v >= 128)).collect(),
        }
    }

    /// Renders a 0/1 mask as an 8-bit image with values 0 and 255.
    pub fn to_gray_image(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("grid dimensions match buffer")
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Summed-area table over a mask, for O(1) rectangle counts.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    sums: Vec<u64>,
}

impl IntegralImage {
    pub fn new(mask: &Grid<u8>) -> Self {
        let (w, h) = mask.dims();
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut acc = 0u64;
            for x in 0..w {
                acc += u64::from(*mask.get(x, y) != 0);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + acc;
            }
        }
        Self { width: w, sums }
    }

    /// Number of set pixels in `[x0, x1) × [y0, y1)`.
    pub fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        let s = self.width + 1;
        self.sums[y1 * s + x1] + self.sums[y0 * s + x0] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
    }
}

//! `FFLD` binary flow files and HSV debug images.
//!
//! Layout, all little-endian: magic `FFLD`, `u32` version (1), `u32` width, `u32` height,
//! then per pixel in row-major order a `u8` count (0 to 2) followed by `count` pairs of
//! `f32` (dx, dy).

use std::io::{self, Read, Write};

use thiserror::Error;

use super::FlowField;
use crate::Vec2;

pub const FFLD_MAGIC: &[u8; 4] = b"FFLD";
pub const FFLD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FfldError {
    #[error("not a flow file (bad magic)")]
    BadMagic,
    #[error("unsupported flow file version {0}")]
    UnsupportedVersion(u32),
    #[error("pixel {index} has invalid vector count {count}")]
    BadCount { index: usize, count: u8 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_ffld<W: Write>(field: &FlowField, mut out: W) -> io::Result<()> {
    let (w, h) = field.dims();
    let mut buf = Vec::with_capacity(16 + w * h);
    buf.extend_from_slice(FFLD_MAGIC);
    buf.extend_from_slice(&FFLD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let vs = field.get(x, y);
            buf.push(vs.len() as u8);
            for v in vs {
                buf.extend_from_slice(&(v.x as f32).to_le_bytes());
                buf.extend_from_slice(&(v.y as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)
}

pub fn read_ffld<R: Read>(mut input: R) -> Result<FlowField, FfldError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = io::Cursor::new(bytes);
    let mut word = [0u8; 4];
    cur.read_exact(&mut word)?;
    if &word != FFLD_MAGIC {
        return Err(FfldError::BadMagic);
    }
    let mut u32_le = |cur: &mut io::Cursor<Vec<u8>>| -> io::Result<u32> {
        cur.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = u32_le(&mut cur)?;
    if version != FFLD_VERSION {
        return Err(FfldError::UnsupportedVersion(version));
    }
    let w = u32_le(&mut cur)? as usize;
    let h = u32_le(&mut cur)? as usize;
    let mut field = FlowField::empty(w, h);
    let f32_le = |cur: &mut io::Cursor<Vec<u8>>| -> io::Result<f64> {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b)?;
        Ok(f64::from(f32::from_le_bytes(b)))
    };
    for index in 0..w * h {
        let mut c = [0u8; 1];
        cur.read_exact(&mut c)?;
        if c[0] > 2 {
            return Err(FfldError::BadCount { index, count: c[0] });
        }
        let mut vs = [Vec2::zeros(); 2];
        for v in vs.iter_mut().take(c[0] as usize) {
            *v = Vec2::new(f32_le(&mut cur)?, f32_le(&mut cur)?);
        }
        field.set(index % w, index / w, &vs[..c[0] as usize]);
    }
    Ok(field)
}

/// Primary direction as color: hue is the line angle (mod 180°) spread over the full
/// color wheel, value is magnitude relative to the field maximum. Empty pixels are black.
pub fn flow_to_hsv(field: &FlowField) -> image::RgbImage {
    let (w, h) = field.dims();
    let max = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter_map(|(x, y)| field.get(x, y).first().map(|v| v.norm()))
        .fold(0.0f64, f64::max);
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let Some(v) = field.get(x as usize, y as usize).first() else {
            return image::Rgb([0, 0, 0]);
        };
        let hue = 2.0 * v.y.atan2(v.x).to_degrees().rem_euclid(180.0);
        let value = if max > 0.0 { v.norm() / max } else { 0.0 };
        hsv_to_rgb(hue, 1.0, value)
    })
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> image::Rgb<u8> {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    image::Rgb([q(r), q(g), q(b)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FlowField {
        let mut f = FlowField::empty(3, 2);
        f.set(0, 0, &[Vec2::new(1.5, -0.25)]);
        f.set(2, 1, &[Vec2::new(0.1, 0.2), Vec2::new(-3.0, 1e-3)]);
        f
    }

    #[test]
    fn exact_layout() {
        let mut bytes = Vec::new();
        write_ffld(&sample(), &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"FFLD");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes[16], 1);
        assert_eq!(&bytes[17..21], &1.5f32.to_le_bytes());
        assert_eq!(&bytes[21..25], &(-0.25f32).to_le_bytes());
        assert_eq!(&bytes[25..29], &[0, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 + 3 * 8);
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let mut bytes = Vec::new();
        write_ffld(&f, &mut bytes).unwrap();
        let back = read_ffld(bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        let mut again = Vec::new();
        write_ffld(&back, &mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_ffld(&b"FFLX\x01\0\0\0"[..]), Err(FfldError::BadMagic)));
        assert!(matches!(
            read_ffld(&b"FFLD\x02\0\0\0\x01\0\0\0\x01\0\0\0\0"[..]),
            Err(FfldError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            read_ffld(&b"FFLD\x01\0\0\0\x01\0\0\0\x01\0\0\0\x05"[..]),
            Err(FfldError::BadCount { index: 0, count: 5 })
        ));
        assert!(matches!(read_ffld(&b"FFLD\x01\0\0\0\x02\0\0\0\x01\0\0\0\0"[..]), Err(FfldError::Io(_))));
    }

    #[test]
    fn hsv_colors() {
        let img = flow_to_hsv(&sample());
        assert_eq!(img.get_pixel(1, 0).0, [0, 0, 0]);
        let p = img.get_pixel(0, 0).0;
        assert_eq!(p.iter().copied().max().unwrap(), 255);
    }
}

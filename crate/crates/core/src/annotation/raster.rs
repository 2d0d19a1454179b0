use crate::raster::Grid;
use crate::Vec2;

use super::{validate, AnnotationError, ImageAnnotation};

/// True when `p` lies in the union of disks swept along `a → b`, with the radius varying
/// linearly from `ra` to `rb`. Boundary points count as covered.
pub fn capsule_covers(p: Vec2, a: Vec2, ra: f64, b: Vec2, rb: f64) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len == 0.0 {
        return (p - a).norm() <= ra.max(rb);
    }
    let e = ab / len;
    let ap = p - a;
    let u = ap.dot(&e);
    let h = (ap - e * u).norm();
    let k = (rb - ra) / len;
    // f(τ) = |p - c(τ)| - r(τ) is convex in τ; one end disk contains the other when |k| >= 1.
    let tau = if k.abs() >= 1.0 {
        if k > 0.0 {
            len
        } else {
            0.0
        }
    } else {
        (u + k * h / (1.0 - k * k).sqrt()).clamp(0.0, len)
    };
    let dist = ((tau - u).powi(2) + h * h).sqrt();
    dist <= ra + k * tau
}

/// Renders the annotation as a 0/1 mask of size `width × height`.
///
/// Each edge covers the pixel centers inside its swept-disk capsule (see
/// [`capsule_covers`]); a horizontal edge of radius 3 therefore covers 7 rows.
pub fn rasterize_mask(ann: &ImageAnnotation) -> Result<Grid<u8>, AnnotationError> {
    let violations = validate(ann);
    if !violations.is_empty() {
        return Err(AnnotationError::Invalid(violations));
    }
    let (w, h) = (ann.width as usize, ann.height as usize);
    let mut mask = Grid::new(w, h, 0u8);
    let index = ann.vertex_index();
    for &[ia, ib] in &ann.edges {
        let va = &ann.vertices[index[&ia]];
        let vb = &ann.vertices[index[&ib]];
        let (a, b) = (va.pos(), vb.pos());
        let r = va.thickness.max(vb.thickness);
        let x0 = (a.x.min(b.x) - r).floor().max(0.0) as usize;
        let y0 = (a.y.min(b.y) - r).floor().max(0.0) as usize;
        let x1 = ((a.x.max(b.x) + r).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let y1 = ((a.y.max(b.y) + r).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        if w == 0 || h == 0 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                if capsule_covers(Vec2::new(x as f64, y as f64), a, va.thickness, b, vb.thickness) {
                    mask.set(x, y, 1);
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense sampling of the swept disks, independent of the closed-form minimizer.
    fn covered_by_sampling(p: Vec2, a: Vec2, ra: f64, b: Vec2, rb: f64) -> (bool, f64) {
        let mut best = f64::INFINITY;
        for i in 0..=20_000 {
            let t = i as f64 / 20_000.0;
            let c = a + (b - a) * t;
            best = best.min((p - c).norm() - (ra + (rb - ra) * t));
        }
        (best <= 0.0, best)
    }

    #[test]
    fn empty_annotation_gives_empty_mask() {
        let m = rasterize_mask(&ImageAnnotation::new("i", "c", 20, 10)).unwrap();
        assert_eq!(m.count_nonzero(), 0);
        assert_eq!(m.dims(), (20, 10));
    }

    #[test]
    fn horizontal_edge_covers_seven_rows() {
        let mut a = ImageAnnotation::new("i", "c", 40, 30);
        a.add_polyline(&[(10.0, 15.0, 3.0), (30.0, 15.0, 3.0)]);
        let m = rasterize_mask(&a).unwrap();
        let rows: Vec<usize> = (0..30).filter(|&y| *m.get(20, y) != 0).collect();
        assert_eq!(rows, (12..=18).collect::<Vec<_>>());
    }

    #[test]
    fn matches_distance_oracle_on_random_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..6 {
            let mut ann = ImageAnnotation::new("i", "c", 64, 64);
            let pts: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(8.0..56.0),
                        rng.random_range(8.0..56.0),
                        rng.random_range(0.5..6.0),
                    )
                })
                .collect();
            ann.add_polyline(&pts);
            let m = rasterize_mask(&ann).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    let p = Vec2::new(x as f64, y as f64);
                    let mut oracle = false;
                    let mut margin = f64::INFINITY;
                    for w in pts.windows(2) {
                        let (c, d) = covered_by_sampling(p, Vec2::new(w[0].0, w[0].1), w[0].2, Vec2::new(w[1].0, w[1].1), w[1].2);
                        oracle |= c;
                        margin = margin.min(d.abs());
                    }
                    // Sampling resolution only matters within a hair of the boundary.
                    if margin > 0.01 {
                        assert_eq!(*m.get(x, y) != 0, oracle, "pixel ({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn adding_a_curve_never_unsets_pixels() {
        let mut ann = ImageAnnotation::new("i", "c", 64, 64);
        ann.add_polyline(&[(5.0, 5.0, 2.0), (50.0, 40.0, 4.0)]);
        let before = rasterize_mask(&ann).unwrap();
        ann.add_polyline(&[(60.0, 5.0, 1.0), (5.0, 60.0, 3.0)]);
        let after = rasterize_mask(&ann).unwrap();
        assert!(before.data().iter().zip(after.data()).all(|(b, a)| *a >= *b));
    }

    #[test]
    fn invalid_annotation_rejected() {
        let mut ann = ImageAnnotation::new("i", "c", 64, 64);
        ann.add_polyline(&[(5.0, 5.0, -2.0), (50.0, 40.0, 4.0)]);
        assert!(matches!(rasterize_mask(&ann), Err(AnnotationError::Invalid(_))));
    }
}

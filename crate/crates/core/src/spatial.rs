//! Nearest-neighbor and radius queries over static 3D point sets.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::Vec3;

/// Immutable k-d tree over points, answering with indices into the input slice.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl std::fmt::Debug for PointIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PointIndex").field("len", &self.len).finish()
    }
}

impl PointIndex {
    /// `None` for an empty point set.
    pub fn new(points: &[Vec3]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&raw).ok()?;
        Some(Self { tree, len: points.len() })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the nearest point and its squared distance. Equidistant points resolve
    /// to the smallest index.
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let q = [p.x, p.y, p.z];
        let hit = self.tree.query(&q).nearest_one::<SquaredEuclidean<f64>>().execute();
        let ties = self.tree.query(&q).within::<SquaredEuclidean<f64>>(hit.distance).execute();
        let best = ties
            .iter()
            .filter(|t| t.distance <= hit.distance)
            .map(|t| t.item as usize)
            .min()
            .unwrap_or(hit.item as usize);
        (best, hit.distance)
    }

    /// Indices of all points with squared distance `<= r2`, ascending.
    pub fn within(&self, p: &Vec3, r2: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tree
            .query(&[p.x, p.y, p.z])
            .within::<SquaredEuclidean<f64>>(r2)
            .execute()
            .iter()
            .map(|t| t.item as usize)
            .collect();
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = PointIndex::new(&pts).unwrap();
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-0.2..1.2), rng.random(), rng.random());
            let brute = (0..pts.len())
                .min_by(|&a, &b| (pts[a] - q).norm_squared().total_cmp(&(pts[b] - q).norm_squared()))
                .unwrap();
            assert_eq!(idx.nearest(&q).0, brute);
            let r2 = 0.01;
            let want: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm_squared() <= r2).collect();
            assert_eq!(idx.within(&q, r2), want);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let idx = PointIndex::new(&pts).unwrap();
        assert_eq!(idx.nearest(&Vec3::zeros()), (0, 1.0));
        assert!(PointIndex::new(&[]).is_none());
    }
}

//! Perspective-n-point pose recovery.
//!
//! A normalized direct linear transform gives the initial pose, which Gauss–Newton then
//! refines on pixel reprojection error with a backtracking line search, so the RMS
//! residual never increases between iterations. [`solve_pnp_ransac`] wraps both stages
//! for correspondence sets with outliers.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraError, Extrinsics, Intrinsics};
use crate::{Mat3, Vec2, Vec3};

pub const MIN_CORRESPONDENCES: usize = 6;

const MAX_ITERATIONS: usize = 100;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PnpSolution {
    pub extrinsics: Extrinsics,
    /// RMS reprojection error in pixels.
    pub rms: f64,
    pub iterations: usize,
    /// RMS residual after the linear stage and after each accepted refinement step.
    pub history: Vec<f64>,
}

pub type Correspondence = (Vec3, Vec2);

pub fn solve_pnp(correspondences: &[Correspondence], intrinsics: &Intrinsics) -> Result<PnpSolution, CameraError> {
    let initial = dlt_pose(correspondences, intrinsics)?;
    refine_pose(correspondences, intrinsics, initial)
}

/// Linear pose estimate from at least six non-coplanar correspondences.
pub fn dlt_pose(correspondences: &[Correspondence], intrinsics: &Intrinsics) -> Result<Extrinsics, CameraError> {
    let n = correspondences.len();
    if n < MIN_CORRESPONDENCES {
        return Err(CameraError::DegenerateConfiguration(format!(
            "need at least {MIN_CORRESPONDENCES} correspondences, got {n}"
        )));
    }

    // Hartley-style conditioning of the 3D points.
    let centroid = correspondences.iter().map(|(x, _)| x).sum::<Vec3>() / n as f64;
    let mean_dist = correspondences.iter().map(|(x, _)| (x - centroid).norm()).sum::<f64>() / n as f64;
    if mean_dist <= 0.0 {
        return Err(CameraError::DegenerateConfiguration("all 3D points coincide".into()));
    }
    let k = 3f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (xw, px)) in correspondences.iter().enumerate() {
        let xn = intrinsics.backproject(px);
        let p = (xw - centroid) * k;
        let h = [p.x, p.y, p.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -xn.x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -xn.y * h[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CameraError::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |r: usize| svd.singular_values[order[r]];
    if order.len() < 12 || s(10) <= RANK_TOL * s(0) {
        return Err(CameraError::DegenerateConfiguration(
            "points are coplanar or collinear; linear pose is not unique".into(),
        ));
    }
    let null = v_t.row(order[11]);

    // Undo the conditioning: P = P' T with T = [kI, -k c; 0 1].
    let mut p = nalgebra::Matrix3x4::<f64>::zeros();
    for r in 0..3 {
        for c in 0..3 {
            p[(r, c)] = null[4 * r + c] * k;
        }
        p[(r, 3)] = null[4 * r + 3] - k * (0..3).map(|c| null[4 * r + c] * centroid[c]).sum::<f64>();
    }
    let mut m: Mat3 = p.fixed_view::<3, 3>(0, 0).into_owned();
    let mut last = p.column(3).into_owned();
    if m.determinant() < 0.0 {
        m = -m;
        last = -last;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut rot = u * v_t;
    if rot.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        rot = u * v_t;
    }
    let scale = svd.singular_values.mean();
    if scale <= 0.0 || !scale.is_finite() {
        return Err(CameraError::DegenerateConfiguration("degenerate projection matrix".into()));
    }
    Extrinsics::new(orthonormalize(&rot), last / scale)
}

fn orthonormalize(r: &Mat3) -> Mat3 {
    *Rotation3::from_matrix_eps(r, 1e-15, 100, Rotation3::identity()).matrix()
}

fn residual_rms(correspondences: &[Correspondence], k: &Intrinsics, rot: &Mat3, t: &Vec3) -> f64 {
    let sum: f64 = correspondences
        .iter()
        .map(|(x, u)| {
            let pc = rot * x + t;
            if pc.z <= 0.0 {
                return f64::INFINITY;
            }
            (k.project_cam(&pc) - u).norm_squared()
        })
        .sum();
    (sum / correspondences.len() as f64).sqrt()
}

fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Gauss–Newton refinement of `initial`; the RMS residual is non-increasing.
pub fn refine_pose(
    correspondences: &[Correspondence],
    intrinsics: &Intrinsics,
    initial: Extrinsics,
) -> Result<PnpSolution, CameraError> {
    let mut rot = *initial.rotation();
    let mut t = *initial.translation();
    let mut rms = residual_rms(correspondences, intrinsics, &rot, &t);
    if !rms.is_finite() {
        return Err(CameraError::DegenerateConfiguration(
            "initial pose places points behind the camera".into(),
        ));
    }
    let mut history = vec![rms];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (x, u) in correspondences {
            let rx = rot * x;
            let pc = rx + t;
            let (z, z2) = (pc.z, pc.z * pc.z);
            let dproj = Matrix2x3::new(
                intrinsics.fx / z,
                0.0,
                -intrinsics.fx * pc.x / z2,
                0.0,
                intrinsics.fy / z,
                -intrinsics.fy * pc.y / z2,
            );
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            let r = intrinsics.project_cam(&pc) - u;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(chol) = h.cholesky() else {
            return Err(CameraError::DegenerateConfiguration("singular normal equations".into()));
        };
        let delta = -chol.solve(&g);
        if delta.norm() < 1e-14 {
            converged = true;
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let d = delta * step;
            let cand_rot = orthonormalize(&(Rotation3::new(Vector3::new(d[0], d[1], d[2])).matrix() * rot));
            let cand_t = t + Vector3::new(d[3], d[4], d[5]);
            let cand_rms = residual_rms(correspondences, intrinsics, &cand_rot, &cand_t);
            if cand_rms <= rms {
                accepted = Some((cand_rot, cand_t, cand_rms));
                break;
            }
            step *= 0.5;
        }
        let Some((new_rot, new_t, new_rms)) = accepted else {
            converged = true;
            break;
        };
        let improvement = rms - new_rms;
        rot = new_rot;
        t = new_t;
        rms = new_rms;
        history.push(rms);
        if improvement <= 1e-15 * rms.max(1e-300) || rms < 1e-13 {
            converged = true;
            break;
        }
    }

    if !converged || !rms.is_finite() {
        return Err(CameraError::NoConvergence { iterations });
    }
    Ok(PnpSolution {
        extrinsics: Extrinsics::new(rot, t)?,
        rms,
        iterations,
        history,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RansacOptions {
    /// Inlier threshold on reprojection error, pixels.
    pub threshold_px: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            threshold_px: 4.0,
            max_iterations: 500,
            seed: 0,
        }
    }
}

/// RANSAC over minimal six-point DLT fits, followed by refinement on the best inlier set.
/// Returns the solution and the inlier mask.
pub fn solve_pnp_ransac(
    correspondences: &[Correspondence],
    intrinsics: &Intrinsics,
    options: &RansacOptions,
) -> Result<(PnpSolution, Vec<bool>), CameraError> {
    let n = correspondences.len();
    if n < MIN_CORRESPONDENCES {
        return Err(CameraError::DegenerateConfiguration(format!(
            "need at least {MIN_CORRESPONDENCES} correspondences, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let thr2 = options.threshold_px * options.threshold_px;
    let inliers_of = |pose: &Extrinsics| -> Vec<bool> {
        correspondences
            .iter()
            .map(|(x, u)| {
                let pc = pose.transform(x);
                pc.z > 0.0 && (intrinsics.project_cam(&pc) - u).norm_squared() <= thr2
            })
            .collect()
    };

    let mut best: Option<Vec<bool>> = None;
    let mut best_count = 0;
    for _ in 0..options.max_iterations {
        let idx = sample(&mut rng, n, MIN_CORRESPONDENCES);
        let subset: Vec<Correspondence> = idx.iter().map(|i| correspondences[i]).collect();
        let Ok(pose) = dlt_pose(&subset, intrinsics) else {
            continue;
        };
        let mask = inliers_of(&pose);
        let count = mask.iter().filter(|&&b| b).count();
        if count > best_count {
            best_count = count;
            best = Some(mask);
            if count == n {
                break;
            }
        }
    }
    let Some(mask) = best.filter(|_| best_count >= MIN_CORRESPONDENCES) else {
        return Err(CameraError::DegenerateConfiguration("no consensus set found".into()));
    };
    let inliers: Vec<Correspondence> = correspondences
        .iter()
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .map(|(c, _)| *c)
        .collect();
    let solution = solve_pnp(&inliers, intrinsics)?;
    let final_mask = inliers_of(&solution.extrinsics);
    Ok((solution, final_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn intrinsics() -> Intrinsics {
        Intrinsics::new(800.0, 780.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn scene(seed: u64, n: usize) -> (Extrinsics, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
            rng.random_range(-3.1..3.1),
        );
        let pose = Extrinsics::new(
            *rot.matrix(),
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 6.0),
        )
        .unwrap();
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                )
            })
            .collect();
        (pose, pts)
    }

    fn correspondences(pose: &Extrinsics, pts: &[Vec3], k: &Intrinsics) -> Vec<Correspondence> {
        pts.iter().map(|p| (*p, k.project_cam(&pose.transform(p)))).collect()
    }

    fn pose_error(a: &Extrinsics, b: &Extrinsics) -> (f64, f64) {
        let rel = a.rotation().transpose() * b.rotation();
        let dr = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        (dr, (a.translation() - b.translation()).norm())
    }

    #[test]
    fn exact_correspondences_recover_pose() {
        let k = intrinsics();
        for seed in 0..10 {
            let (pose, pts) = scene(seed, 12);
            let sol = solve_pnp(&correspondences(&pose, &pts, &k), &k).unwrap();
            let (dr, dt) = pose_error(&sol.extrinsics, &pose);
            assert!(dr < 1e-6 && dt < 1e-6, "seed {seed}: dr={dr} dt={dt}");
            assert!(sol.rms < 1e-6);
        }
    }

    #[test]
    fn noisy_correspondences_small_residual_and_monotone_history() {
        let k = intrinsics();
        let noise = Normal::new(0.0, 1.0).unwrap();
        for seed in 0..20 {
            let (pose, pts) = scene(100 + seed, 50);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corr: Vec<Correspondence> = correspondences(&pose, &pts, &k)
                .into_iter()
                .map(|(x, u)| (x, u + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))))
                .collect();
            let sol = solve_pnp(&corr, &k).unwrap();
            assert!(sol.rms <= 2.0, "seed {seed}: rms {}", sol.rms);
            assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn too_few_correspondences_is_degenerate() {
        let k = intrinsics();
        let (pose, pts) = scene(7, 5);
        assert!(matches!(
            solve_pnp(&correspondences(&pose, &pts, &k), &k),
            Err(CameraError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn coplanar_points_are_degenerate_for_linear_stage() {
        let k = intrinsics();
        let (pose, mut pts) = scene(8, 20);
        for p in &mut pts {
            p.z = 0.0;
        }
        assert!(matches!(
            solve_pnp(&correspondences(&pose, &pts, &k), &k),
            Err(CameraError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn ransac_rejects_gross_outliers() {
        let k = intrinsics();
        let (pose, pts) = scene(9, 40);
        let mut corr = correspondences(&pose, &pts, &k);
        for c in corr.iter_mut().take(8) {
            c.1 += Vector2::new(60.0, -45.0);
        }
        let (sol, mask) = solve_pnp_ransac(&corr, &k, &RansacOptions::default()).unwrap();
        let (dr, dt) = pose_error(&sol.extrinsics, &pose);
        assert!(dr < 1e-6 && dt < 1e-6);
        assert_eq!(mask.iter().filter(|&&m| !m).count(), 8);
    }
}

//! Pinhole cameras, rays and two-view epipolar geometry.
//!
//! Extrinsics map world to camera coordinates (`x_cam = R x_world + t`), the camera
//! looks down its `+z` axis and there is no lens distortion. The optical center in
//! world coordinates is therefore `-Rᵀ t`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Mat3, Vec2, Vec3};

const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point has non-positive depth {depth} in camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("ray is parallel to the image-parallel plane")]
    RayParallelToPlane,
    #[error("cameras share an optical center")]
    CoincidentCenters,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("pose refinement did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width) && self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} sensor",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel of a camera-frame point (no depth check).
    #[inline]
    pub fn project_cam(&self, p: &Vec3) -> Vec2 {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-frame direction `(x/z, y/z, 1)` through a pixel.
    #[inline]
    pub fn backproject(&self, px: &Vec2) -> Vec3 {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    rotation: Mat3,
    translation: Vec3,
}

impl Extrinsics {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, CameraError> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if ortho > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(CameraError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds extrinsics for a camera at `eye` looking at `target`; `up` fixes the roll
    /// (image `-y` points roughly along `up`).
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<Self, CameraError> {
        let z = (target - eye).normalize();
        let x = z.cross(up);
        if x.norm() < 1e-12 {
            return Err(CameraError::DegenerateConfiguration("view direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self {
            rotation: r,
            translation: -(r * eye),
        })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec3,
    direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`; returns `None` for a zero vector.
    pub fn new(origin: Vec3, direction: Vec3) -> Option<Self> {
        let n = direction.norm();
        (n > 0.0 && n.is_finite()).then(|| Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vec3 {
        &self.direction
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.origin + self.direction * s
    }

    /// Perpendicular distance from `p` to the infinite line of the ray.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let v = p - self.origin;
        (v - self.direction * v.dot(&self.direction)).norm()
    }

    /// Closest point on the ray's line.
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        self.at((p - self.origin).dot(&self.direction))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    /// Cameras flagged misaligned are withheld from first-pass triangulation.
    pub aligned: bool,
}

impl Camera {
    pub fn new(id: impl Into<String>, intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        Self {
            id: id.into(),
            intrinsics,
            extrinsics,
            aligned: true,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.extrinsics.center()
    }

    /// World-space unit vector along the optical axis.
    pub fn view_axis(&self) -> Vec3 {
        self.extrinsics.rotation.row(2).transpose()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.extrinsics.transform(p)
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, p: &Vec3) -> f64 {
        self.to_camera(p).z
    }

    pub fn project(&self, p: &Vec3) -> Result<Vec2, CameraError> {
        let pc = self.to_camera(p);
        if pc.z <= 0.0 {
            return Err(CameraError::NonPositiveDepth { depth: pc.z });
        }
        Ok(self.intrinsics.project_cam(&pc))
    }

    /// World point at camera-frame depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vec2, depth: f64) -> Vec3 {
        let pc = self.intrinsics.backproject(pixel) * depth;
        self.extrinsics.rotation.transpose() * (pc - self.extrinsics.translation)
    }

    pub fn pixel_ray(&self, pixel: &Vec2) -> Ray {
        let d_cam = self.intrinsics.backproject(pixel);
        let d = self.extrinsics.rotation.transpose() * d_cam;
        Ray::new(self.center(), d).expect("backprojected direction has unit z component")
    }

    /// Intersects `ray` with the plane through `anchor` whose normal is the view axis.
    pub fn parallel_plane_intersect(&self, ray: &Ray, anchor: &Vec3) -> Result<Vec3, CameraError> {
        let axis = self.view_axis();
        let denom = ray.direction.dot(&axis);
        if denom.abs() <= 1e-12 {
            return Err(CameraError::RayParallelToPlane);
        }
        let s = (anchor - ray.origin).dot(&axis) / denom;
        Ok(ray.at(s))
    }

    pub fn contains_pixel(&self, px: &Vec2) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x < f64::from(self.intrinsics.width) - 0.5
            && px.y < f64::from(self.intrinsics.height) - 0.5
    }
}

fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix with `x2ᵀ F x1 = 0` for homogeneous pixels of one world point.
pub fn fundamental_matrix(cam1: &Camera, cam2: &Camera) -> Result<Mat3, CameraError> {
    let (c1, c2) = (cam1.center(), cam2.center());
    let scale = c1.norm().max(c2.norm()).max(1.0);
    if (c1 - c2).norm() <= 1e-12 * scale {
        return Err(CameraError::CoincidentCenters);
    }
    let r1 = cam1.extrinsics.rotation();
    let r2 = cam2.extrinsics.rotation();
    let r = r2 * r1.transpose();
    let t = cam2.extrinsics.translation() - r * cam1.extrinsics.translation();
    let essential = skew(&t) * r;
    let f = cam2.intrinsics.inverse_matrix().transpose() * essential * cam1.intrinsics.inverse_matrix();
    Ok(f / f.norm())
}

/// Epipolar line `(a, b, c)` in image 2 of pixel `x1`, normalized so `a² + b² = 1`.
pub fn epipolar_line(f: &Mat3, x1: &Vec2) -> Option<Vec3> {
    let l = f * Vector3::new(x1.x, x1.y, 1.0);
    let n = (l.x * l.x + l.y * l.y).sqrt();
    (n > 1e-300).then(|| l / n)
}

/// Cameras keyed by id, iterated in id order.
pub type CameraSet = BTreeMap<String, Camera>;

/// On-disk camera record: `{id, fx, fy, cx, cy, width, height, R, t, aligned}` with `R`
/// as 9 row-major numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    #[serde(default = "default_true")]
    pub aligned: bool,
}

fn default_true() -> bool {
    true
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = CameraError;

    fn try_from(rec: &CameraRecord) -> Result<Self, Self::Error> {
        let intrinsics = Intrinsics::new(rec.fx, rec.fy, rec.cx, rec.cy, rec.width, rec.height)?;
        let r = Matrix3::from_row_slice(&rec.r);
        let extrinsics = Extrinsics::new(r, Vector3::from_row_slice(&rec.t))?;
        Ok(Camera {
            id: rec.id.clone(),
            intrinsics,
            extrinsics,
            aligned: rec.aligned,
        })
    }
}

impl From<&Camera> for CameraRecord {
    fn from(cam: &Camera) -> Self {
        let r = cam.extrinsics.rotation();
        let mut rows = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rows[i * 3 + j] = r[(i, j)];
            }
        }
        let t = cam.extrinsics.translation();
        CameraRecord {
            id: cam.id.clone(),
            fx: cam.intrinsics.fx,
            fy: cam.intrinsics.fy,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
            width: cam.intrinsics.width,
            height: cam.intrinsics.height,
            r: rows,
            t: [t.x, t.y, t.z],
            aligned: cam.aligned,
        }
    }
}

/// Parses a cameras JSON array.
pub fn cameras_from_json(text: &str) -> Result<CameraSet, CamerasFileError> {
    let records: Vec<CameraRecord> = serde_json::from_str(text)?;
    let mut set = CameraSet::new();
    for rec in &records {
        let cam = Camera::try_from(rec).map_err(|e| CamerasFileError::Invalid {
            id: rec.id.clone(),
            source: e,
        })?;
        if set.insert(rec.id.clone(), cam).is_some() {
            return Err(CamerasFileError::DuplicateId(rec.id.clone()));
        }
    }
    Ok(set)
}

pub fn cameras_to_json(cameras: &CameraSet) -> String {
    let records: Vec<CameraRecord> = cameras.values().map(CameraRecord::from).collect();
    serde_json::to_string_pretty(&records).expect("camera records serialize")
}

#[derive(Debug, Error)]
pub enum CamerasFileError {
    #[error("malformed cameras file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("camera {id}: {source}")]
    Invalid { id: String, source: CameraError },
    #[error("duplicate camera id {0}")]
    DuplicateId(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_camera(f: f64, c: f64) -> Camera {
        Camera::new(
            "c",
            Intrinsics::new(f, f, c, c, 1000, 1000).unwrap(),
            Extrinsics::identity(),
        )
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-3.0..3.0),
        );
        let t = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Camera::new(
            "r",
            Intrinsics::new(
                rng.random_range(300.0..900.0),
                rng.random_range(300.0..900.0),
                rng.random_range(200.0..440.0),
                rng.random_range(150.0..330.0),
                640,
                480,
            )
            .unwrap(),
            Extrinsics::new(*rot.matrix(), t).unwrap(),
        )
    }

    #[test]
    fn project_on_axis_and_hand_example() {
        let cam = unit_camera(1.0, 0.0);
        assert_eq!(cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(0.0, 0.0));
        let cam = unit_camera(100.0, 50.0);
        assert_eq!(cam.project(&Vector3::new(1.0, 1.0, 2.0)).unwrap(), Vector2::new(100.0, 100.0));
    }

    #[test]
    fn project_rejects_points_behind() {
        let cam = unit_camera(1.0, 0.0);
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(CameraError::NonPositiveDepth { .. })
        ));
        assert!(cam.project(&Vector3::new(1.0, 0.0, -2.0)).is_err());
    }

    #[test]
    fn unproject_project_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let depth = rng.random_range(0.5..20.0);
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let p = cam.unproject(&px, depth);
            assert!((cam.depth(&p) - depth).abs() < 1e-9);
            let back = cam.project(&p).unwrap();
            assert!((back - px).norm() < 1e-9);
            let again = cam.unproject(&back, depth);
            assert!((again - p).norm() < 1e-9);
        }
    }

    #[test]
    fn pixel_ray_principal_point_and_center() {
        let cam = unit_camera(500.0, 320.0);
        let ray = cam.pixel_ray(&Vector2::new(320.0, 320.0));
        assert!((ray.direction() - Vector3::z()).norm() < 1e-15);

        let t = Vector3::new(1.0, -2.0, 3.0);
        let rot = Rotation3::from_euler_angles(0.1, 0.2, 0.3);
        let cam = Camera::new(
            "t",
            Intrinsics::new(400.0, 400.0, 300.0, 200.0, 640, 480).unwrap(),
            Extrinsics::new(*rot.matrix(), t).unwrap(),
        );
        let ray = cam.pixel_ray(&Vector2::new(10.0, 20.0));
        assert!((ray.origin() + rot.matrix().transpose() * t).norm() < 1e-12);
    }

    #[test]
    fn pixel_ray_is_fixed_point_of_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cam = random_camera(&mut rng);
        for _ in 0..100 {
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let ray = cam.pixel_ray(&px);
            assert!((ray.direction().norm() - 1.0).abs() < 1e-12);
            for s in [0.1, 1.0, 7.5, 100.0] {
                let back = cam.project(&ray.at(s)).unwrap();
                assert!((back - px).norm() < 1e-9, "{back} vs {px}");
            }
        }
    }

    #[test]
    fn parallel_plane_examples() {
        let cam = unit_camera(1.0, 0.0);
        let anchor = Vector3::new(0.0, 0.0, 5.0);
        let ray = Ray::new(Vector3::zeros(), Vector3::z()).unwrap();
        assert!((cam.parallel_plane_intersect(&ray, &anchor).unwrap() - anchor).norm() < 1e-12);
        let ray = Ray::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0)).unwrap();
        let p = cam.parallel_plane_intersect(&ray, &anchor).unwrap();
        assert!((p - Vector3::new(5.0, 0.0, 5.0)).norm() < 1e-12);
        let ray = Ray::new(Vector3::zeros(), Vector3::x()).unwrap();
        assert_eq!(
            cam.parallel_plane_intersect(&ray, &anchor),
            Err(CameraError::RayParallelToPlane)
        );
    }

    #[test]
    fn parallel_plane_preserves_anchor_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let anchor = cam.unproject(&Vector2::new(300.0, 200.0), rng.random_range(1.0..10.0));
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let p = cam.parallel_plane_intersect(&cam.pixel_ray(&px), &anchor).unwrap();
            assert!((cam.depth(&p) - cam.depth(&anchor)).abs() < 1e-9);
        }
    }

    #[test]
    fn fundamental_rectified_pair_gives_horizontal_lines() {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let c1 = Camera::new("l", k, Extrinsics::identity());
        let c2 = Camera::new("r", k, Extrinsics::new(Mat3::identity(), Vector3::new(-0.2, 0.0, 0.0)).unwrap());
        let f = fundamental_matrix(&c1, &c2).unwrap();
        for (x, y) in [(10.0, 30.0), (320.0, 240.0), (600.0, 470.0)] {
            let l = epipolar_line(&f, &Vector2::new(x, y)).unwrap();
            // line a x + b y + c = 0 must be y = const
            assert!(l.x.abs() < 1e-12);
            assert!((-l.z / l.y - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fundamental_satisfies_epipolar_constraint_and_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_camera(&mut rng);
        let b = random_camera(&mut rng);
        let f = fundamental_matrix(&a, &b).unwrap();
        let mut checked = 0;
        while checked < 100 {
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let (Ok(x1), Ok(x2)) = (a.project(&p), b.project(&p)) else {
                continue;
            };
            let v = Vector3::new(x2.x, x2.y, 1.0).dot(&(f * Vector3::new(x1.x, x1.y, 1.0)));
            assert!(v.abs() < 1e-9, "residual {v}");
            checked += 1;
        }
        let sv = f.svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[1] > 1e-6 && s[2] < 1e-12 * s[0]);
    }

    #[test]
    fn fundamental_rejects_coincident_centers() {
        let cam = unit_camera(10.0, 5.0);
        let mut other = cam.clone();
        other.extrinsics = Extrinsics::new(*Rotation3::from_euler_angles(0.0, 0.3, 0.0).matrix(), Vector3::zeros()).unwrap();
        assert_eq!(fundamental_matrix(&cam, &other), Err(CameraError::CoincidentCenters));
    }

    #[test]
    fn invalid_rotation_rejected() {
        let mut r = Mat3::identity();
        r[(0, 0)] = -1.0;
        assert_eq!(Extrinsics::new(r, Vec3::zeros()), Err(CameraError::InvalidRotation));
        assert!(Intrinsics::new(-1.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
    }

    #[test]
    fn cameras_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut set = CameraSet::new();
        for i in 0..3 {
            let mut c = random_camera(&mut rng);
            c.id = format!("cam{i}");
            c.aligned = i != 1;
            set.insert(c.id.clone(), c);
        }
        let text = cameras_to_json(&set);
        let back = cameras_from_json(&text).unwrap();
        assert_eq!(back, set);
        let dup = format!("[{0},{0}]", serde_json::to_string(&CameraRecord::from(&set["cam0"])).unwrap());
        assert!(matches!(cameras_from_json(&dup), Err(CamerasFileError::DuplicateId(_))));
    }
}

//! Rigid-body transforms, Euler angles and the pinhole camera model.
//!
//! Frames follow the usual camera convention: x right, y down, z forward.
//! Extrinsics map camera coordinates into the rig frame, so the relative
//! transform taking camera-`i` coordinates into camera-`j` coordinates is
//! `X_j^-1 * X_i`.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points with a camera-frame depth at or below this value are not "in front".
pub const Z_MIN: f64 = 1e-6;

/// Rotation drift (max entry of `R^T R - I`) above which a composed rotation
/// is projected back onto SO(3).
const REORTHO_TOLERANCE: f64 = 1e-12;

/// Pitch margin from +-pi/2 inside which Euler extraction is flagged.
pub const GIMBAL_MARGIN: f64 = 1e-3;

/// An element of SE(3): `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// unit determinant (1e-9 per entry).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let drift = orthonormal_drift(&rotation);
        let det = rotation.determinant();
        if drift >= 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "rotation is not in SO(3) (drift {drift:e}, det {det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Domain(format!(
                "homogeneous row must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        if orthonormal_drift(&rotation) > REORTHO_TOLERANCE {
            rotation = orthonormalize(&rotation);
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

/// Largest entry of `|R^T R - I|`.
pub fn orthonormal_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Re-expresses a motion predicted in camera `i`'s frame in camera `j`'s frame:
/// `X_j^-1 X_i pose X_i^-1 X_j`.
pub fn to_canonical(
    pose_i: &RigidTransform,
    extrinsics_i: &RigidTransform,
    extrinsics_j: &RigidTransform,
) -> RigidTransform {
    if extrinsics_i == extrinsics_j {
        return *pose_i;
    }
    let c = extrinsics_j.inverse().compose(extrinsics_i);
    c.compose(pose_i).compose(&c.inverse())
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Intrinsic Z-Y-X Euler angles: `R = Rz(psi) * Ry(theta) * Rx(phi)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    /// Roll about x.
    pub phi: f64,
    /// Pitch about y.
    pub theta: f64,
    /// Yaw about z.
    pub psi: f64,
}

/// Result of extracting Euler angles from a rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerExtraction {
    pub angles: EulerAngles,
    /// Set when `|theta|` is within [`GIMBAL_MARGIN`] of pi/2, where roll and
    /// yaw are no longer separable.
    pub near_gimbal_lock: bool,
}

impl EulerAngles {
    pub fn new(phi: f64, theta: f64, psi: f64) -> Self {
        Self { phi, theta, psi }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.phi, self.theta, self.psi]
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        rot_z(self.psi) * rot_y(self.theta) * rot_x(self.phi)
    }

    /// Partial derivatives of [`EulerAngles::to_rotation`] with respect to
    /// `phi`, `theta` and `psi`, in that order.
    pub fn rotation_partials(&self) -> [Matrix3<f64>; 3] {
        let (rx, ry, rz) = (rot_x(self.phi), rot_y(self.theta), rot_z(self.psi));
        [
            rz * ry * d_rot_x(self.phi),
            rz * d_rot_y(self.theta) * rx,
            d_rot_z(self.psi) * ry * rx,
        ]
    }

    pub fn from_rotation(r: &Matrix3<f64>) -> EulerExtraction {
        let s = (-r[(2, 0)]).clamp(-1.0, 1.0);
        let theta = s.asin();
        let near_gimbal_lock = theta.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN;
        let (phi, psi) = if (1.0 - s.abs()) < 1e-15 {
            // Exactly locked: fold everything into yaw.
            (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
        } else {
            (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
        };
        EulerExtraction {
            angles: EulerAngles { phi, theta, psi },
            near_gimbal_lock,
        }
    }

    /// Gradient of `from_rotation` contracted with an upstream gradient on the
    /// three angles, returned as a gradient on the matrix entries.
    pub(crate) fn from_rotation_vjp(r: &Matrix3<f64>, upstream: [f64; 3]) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        // phi = atan2(r21, r22)
        let n = r[(2, 1)] * r[(2, 1)] + r[(2, 2)] * r[(2, 2)];
        if n > 0.0 {
            g[(2, 1)] += upstream[0] * r[(2, 2)] / n;
            g[(2, 2)] -= upstream[0] * r[(2, 1)] / n;
        }
        // theta = asin(-r20)
        let s = r[(2, 0)];
        let denom = (1.0 - s * s).max(0.0).sqrt();
        if denom > 0.0 {
            g[(2, 0)] -= upstream[1] / denom;
        }
        // psi = atan2(r10, r00)
        let n = r[(1, 0)] * r[(1, 0)] + r[(0, 0)] * r[(0, 0)];
        if n > 0.0 {
            g[(1, 0)] += upstream[2] * r[(0, 0)] / n;
            g[(0, 0)] -= upstream[2] * r[(1, 0)] / n;
        }
        g
    }
}

/// A continuous pixel position plus whether the source point was in front of
/// the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub in_front: bool,
}

/// Pinhole camera with zero skew and its pose on the rig.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-rig transform.
    pub extrinsics: RigidTransform,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        extrinsics: RigidTransform,
    ) -> Result<Self> {
        let cam = Self {
            name: name.into(),
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsics,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if !ok {
            return Err(Error::Domain(format!(
                "camera {}: need fx, fy > 0 and principal point inside the {}x{} image",
                self.name, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Horizontal field of view in radians.
    pub fn hfov(&self) -> f64 {
        let w = (self.width - 1) as f64;
        (self.cx / self.fx).atan() + ((w - self.cx) / self.fx).atan()
    }

    /// Viewing ray through `(u, v)` with unit z.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn unproject(&self, pixel: Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::Domain(format!("depth must be positive, got {depth}")));
        }
        Ok(self.ray(pixel.x, pixel.y) * depth)
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        Projection {
            pixel: Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy),
            in_front: p.z > Z_MIN,
        }
    }

    /// Transform taking this camera's coordinates into `other`'s.
    pub fn relative_to(&self, other: &CameraModel) -> RigidTransform {
        if self.extrinsics == other.extrinsics {
            return RigidTransform::identity();
        }
        other.extrinsics.inverse().compose(&self.extrinsics)
    }

    /// Unit optical axis in the rig frame.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.extrinsics.rotation.column(2).into_owned()
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    name: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    extrinsics: [[f64; 4]; 4],
}

/// An ordered set of cameras; index 0 is the canonical (front) camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub cameras: Vec<CameraModel>,
}

#[derive(Serialize, Deserialize)]
struct RigRecord {
    cameras: Vec<CameraRecord>,
}

impl Rig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Config("rig has no cameras".into()));
        }
        for c in &cameras {
            c.validate()?;
        }
        Ok(Self { cameras })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.name == name)
    }

    /// `X_{i->j} = X_j^-1 X_i`.
    pub fn relative_extrinsics(&self, i: usize, j: usize) -> RigidTransform {
        if i == j {
            return RigidTransform::identity();
        }
        self.cameras[i].relative_to(&self.cameras[j])
    }

    /// Cameras whose viewing frusta can intersect camera `i`'s: the angle
    /// between optical axes is below the mean of the two horizontal FOVs.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let a = &self.cameras[i];
        (0..self.len())
            .filter(|&j| j != i)
            .filter(|&j| {
                let b = &self.cameras[j];
                let cos = a.optical_axis().dot(&b.optical_axis()).clamp(-1.0, 1.0);
                cos.acos() < 0.5 * (a.hfov() + b.hfov())
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let record = RigRecord {
            cameras: self
                .cameras
                .iter()
                .map(|c| {
                    let m = c.extrinsics.to_matrix4();
                    let mut rows = [[0.0; 4]; 4];
                    for (r, row) in rows.iter_mut().enumerate() {
                        for (k, v) in row.iter_mut().enumerate() {
                            *v = m[(r, k)];
                        }
                    }
                    CameraRecord {
                        name: c.name.clone(),
                        fx: c.fx,
                        fy: c.fy,
                        cx: c.cx,
                        cy: c.cy,
                        width: c.width,
                        height: c.height,
                        extrinsics: rows,
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: RigRecord = serde_json::from_str(text)?;
        let cameras = record
            .cameras
            .into_iter()
            .map(|c| {
                let m = Matrix4::from_fn(|r, k| c.extrinsics[r][k]);
                let extrinsics = RigidTransform::from_matrix4(&m)
                    .map_err(|e| Error::Config(format!("camera {}: extrinsics: {e}", c.name)))?;
                CameraModel::new(c.name, c.fx, c.fy, c.cx, c.cy, c.width, c.height, extrinsics)
            })
            .collect::<Result<Vec<_>>>()?;
        Rig::new(cameras)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn naive_mul(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn sample_transform(seed: f64) -> RigidTransform {
        let e = EulerAngles::new(0.3 * seed.sin(), 0.2 * seed.cos(), 1.1 * seed);
        RigidTransform::new(e.to_rotation(), Vector3::new(seed, -2.0 * seed, 0.5 + seed * seed)).unwrap()
    }

    fn test_camera() -> CameraModel {
        CameraModel::new("c", 100.0, 100.0, 50.0, 50.0, 101, 101, RigidTransform::identity()).unwrap()
    }

    #[test]
    fn compose_identity_and_inverse() {
        let x = sample_transform(0.7);
        assert_eq!(RigidTransform::identity().compose(&x), x);
        assert!(x.compose(&x.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        assert!(x.inverse().compose(&x).max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn compose_quarter_turns_matches_naive_product() {
        let q = RigidTransform::from_rotation(rot_z(FRAC_PI_2));
        let half = q.compose(&q);
        let oracle = naive_mul(&rot_z(FRAC_PI_2), &rot_z(FRAC_PI_2));
        assert!((half.rotation - oracle).amax() < 1e-15);
        assert!((half.rotation - rot_z(PI)).amax() < 1e-15);
    }

    #[test]
    fn rejects_non_rotations() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        assert!(RigidTransform::new(m * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn canonical_same_frame_is_unchanged() {
        let pose = sample_transform(0.4);
        let x1 = sample_transform(1.3);
        assert_eq!(to_canonical(&pose, &x1, &x1), pose);
    }

    #[test]
    fn canonical_translation_of_yawed_camera() {
        // Side camera yawed +90 deg about the rig's vertical (y) axis: its
        // optical axis points along rig +x.
        let side = RigidTransform::from_rotation(rot_y(FRAC_PI_2));
        let front = RigidTransform::identity();
        let pose = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let c = to_canonical(&pose, &side, &front);
        // Camera x maps to rig -z under Ry(+90 deg).
        assert!((c.translation - Vector3::new(0.0, 0.0, -1.0)).amax() < 1e-12);
        // Yaw about the camera's optical axis instead (rig z).
        let rolled = RigidTransform::from_rotation(rot_z(FRAC_PI_2));
        let c = to_canonical(&pose, &rolled, &front);
        assert!((c.translation - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
        let c = to_canonical(&pose, &RigidTransform::from_rotation(rot_z(-FRAC_PI_2)), &front);
        assert!((c.translation - Vector3::new(0.0, -1.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn euler_zero_is_identity() {
        assert_eq!(EulerAngles::default().to_rotation(), Matrix3::identity());
    }

    #[test]
    fn euler_round_trip_and_triple_product() {
        let e = EulerAngles::new(0.1, 0.2, 0.3);
        let r = e.to_rotation();
        let back = EulerAngles::from_rotation(&r);
        assert!(!back.near_gimbal_lock);
        assert!((back.angles.phi - 0.1).abs() < 1e-9);
        assert!((back.angles.theta - 0.2).abs() < 1e-9);
        assert!((back.angles.psi - 0.3).abs() < 1e-9);

        let (c1, s1) = (0.1f64.cos(), 0.1f64.sin());
        let (c2, s2) = (0.2f64.cos(), 0.2f64.sin());
        let (c3, s3) = (0.3f64.cos(), 0.3f64.sin());
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, c1, -s1, 0.0, s1, c1);
        let ry = Matrix3::new(c2, 0.0, s2, 0.0, 1.0, 0.0, -s2, 0.0, c2);
        let rz = Matrix3::new(c3, -s3, 0.0, s3, c3, 0.0, 0.0, 0.0, 1.0);
        let oracle = naive_mul(&naive_mul(&rz, &ry), &rx);
        assert!((r - oracle).amax() < 1e-15);
    }

    #[test]
    fn euler_flags_gimbal_lock() {
        let r = EulerAngles::new(0.2, FRAC_PI_2 - 1e-4, 0.1).to_rotation();
        assert!(EulerAngles::from_rotation(&r).near_gimbal_lock);
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let e = EulerAngles::new(0.3, -0.4, 1.2);
        let partials = e.rotation_partials();
        let h = 1e-6;
        for (k, p) in partials.iter().enumerate() {
            let mut a = e.to_array();
            let mut b = e.to_array();
            a[k] += h;
            b[k] -= h;
            let fd = (EulerAngles::new(a[0], a[1], a[2]).to_rotation()
                - EulerAngles::new(b[0], b[1], b[2]).to_rotation())
                / (2.0 * h);
            assert!((fd - p).amax() < 1e-8, "partial {k}");
        }
    }

    #[test]
    fn unproject_examples() {
        let cam = test_camera();
        let p = cam.unproject(Vector2::new(50.0, 50.0), 5.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 5.0));
        let p = cam.unproject(Vector2::new(150.0, 50.0), 2.0).unwrap();
        assert!((p - Vector3::new(2.0, 0.0, 2.0)).amax() < 1e-15);
        assert!(cam.unproject(Vector2::new(1.0, 1.0), 0.0).is_err());
        assert!(cam.unproject(Vector2::new(1.0, 1.0), -3.0).is_err());
    }

    #[test]
    fn project_examples() {
        let cam = test_camera();
        let p = cam.project(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(p.pixel, Vector2::new(50.0, 50.0));
        assert!(p.in_front);
        assert!(!cam.project(&Vector3::new(0.0, 0.0, -1.0)).in_front);
        let p = cam.project(&Vector3::new(1.0, 1.0, 4.0));
        assert!((p.pixel - Vector2::new(75.0, 75.0)).amax() < 1e-12);
        assert!(!cam.project(&Vector3::new(0.0, 0.0, 0.0)).in_front);
    }

    #[test]
    fn relative_extrinsics_self_is_identity() {
        let mut cams = Vec::new();
        for k in 0..3 {
            let mut c = test_camera();
            c.name = format!("c{k}");
            c.extrinsics = sample_transform(k as f64 + 0.5);
            cams.push(c);
        }
        let rig = Rig::new(cams).unwrap();
        for i in 0..3 {
            assert!(rig.relative_extrinsics(i, i).is_identity());
            for j in 0..3 {
                let a = rig.relative_extrinsics(i, j);
                let b = rig.relative_extrinsics(j, i).inverse();
                assert!(a.max_abs_diff(&b) < 1e-9);
            }
        }
    }

    #[test]
    fn rig_json_round_trip() {
        let mut c = test_camera();
        c.extrinsics = sample_transform(0.9);
        let rig = Rig::new(vec![c]).unwrap();
        let text = rig.to_json().unwrap();
        let back = Rig::from_json(&text).unwrap();
        assert_eq!(back, rig);
        assert!(Rig::from_json("{\"cameras\": [{\"name\": \"x\"}]}").is_err());
    }
}

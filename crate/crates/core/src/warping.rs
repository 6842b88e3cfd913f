//! View synthesis: pixel warps between cameras and timesteps, bilinear
//! resampling and non-overlap masks.
//!
//! Pixel centers sit on integer coordinates, so an image of width `W` covers
//! `[0, W-1]` horizontally. A warped pixel is valid only if its source point
//! is in front of the context camera and all four bilinear neighbors exist;
//! there is no edge clamping.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RigidTransform, Z_MIN};
use crate::grid::{BinaryMask, DepthField, ImagePlane};
use crate::io::{write_pfm, FloatRaster};

/// Slack on the image-domain test so that coordinates produced by an exact
/// round trip through unproject/project are not rejected at the border.
pub const BOUNDS_SLACK: f64 = 1e-9;

/// Per-target-pixel source coordinates plus validity.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    width: usize,
    height: usize,
    source_width: usize,
    source_height: usize,
    coords: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl WarpField {
    /// Builds a field from explicit coordinates, deriving validity from the
    /// source image bounds.
    pub fn from_coords(
        width: usize,
        height: usize,
        source_width: usize,
        source_height: usize,
        coords: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if coords.len() != width * height {
            return Err(Error::Domain("warp coordinate count mismatch".into()));
        }
        let valid = coords
            .iter()
            .map(|c| in_domain(c[0], c[1], source_width, source_height))
            .collect();
        Ok(Self {
            width,
            height,
            source_width,
            source_height,
            coords,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.source_width, self.source_height)
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn validity_mask(&self) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.valid.clone()).expect("dims")
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len().max(1) as f64
    }

    /// Three-channel PFM: source x, source y, validity (0 or 1).
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let mut data = Vec::with_capacity(self.coords.len() * 3);
        for (c, v) in self.coords.iter().zip(&self.valid) {
            let (x, y) = if *v { (c[0], c[1]) } else { (-1.0, -1.0) };
            data.extend_from_slice(&[x as f32, y as f32, if *v { 1.0 } else { 0.0 }]);
        }
        write_pfm(
            path,
            &FloatRaster {
                width: self.width,
                height: self.height,
                channels: 3,
                data,
            },
        )
    }
}

#[inline]
pub(crate) fn in_domain(x: f64, y: f64, w: usize, h: usize) -> bool {
    w >= 2
        && h >= 2
        && x >= -BOUNDS_SLACK
        && y >= -BOUNDS_SLACK
        && x <= (w - 1) as f64 + BOUNDS_SLACK
        && y <= (h - 1) as f64 + BOUNDS_SLACK
}

/// Bilinear cell for a continuous coordinate: the integer corner and the
/// fractional offset from it. On an exact integer the left/lower cell is
/// chosen (offset 1), which fixes the one-sided derivative used there.
/// Out-of-range coordinates reuse the border cell and extrapolate linearly.
#[inline]
pub(crate) fn bilinear_cell(x: f64, n: usize) -> (usize, f64) {
    let x0 = if x <= 0.0 {
        0
    } else {
        ((x.ceil() as i64) - 1).max(0) as usize
    };
    let x0 = x0.min(n - 2);
    (x0, x - x0 as f64)
}

/// Projects `point` (already in the context camera frame) into `cam`.
#[inline]
pub(crate) fn project_point(cam: &CameraModel, q: &Vector3<f64>) -> ([f64; 2], bool) {
    let x = cam.fx * q.x / q.z + cam.cx;
    let y = cam.fy * q.y / q.z + cam.cy;
    (
        [x, y],
        q.z > Z_MIN && x.is_finite() && y.is_finite() && in_domain(x, y, cam.width, cam.height),
    )
}

/// Core warp: unproject with `target`'s intrinsics, move by `motion`,
/// project with `context`'s intrinsics.
pub fn warp_with_transform(
    depth: &DepthField,
    target: &CameraModel,
    motion: &RigidTransform,
    context: &CameraModel,
) -> Result<WarpField> {
    if depth.dims() != (target.width, target.height) {
        return Err(Error::dims(
            format!("depth for camera {}", target.name),
            (target.width, target.height),
            depth.dims(),
        ));
    }
    let (w, h) = depth.dims();
    let mut coords = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    let logd = depth.log_depth();
    for v in 0..h {
        for u in 0..w {
            let d = logd[v * w + u].exp();
            let p = target.ray(u as f64, v as f64) * d;
            let q = motion.apply(&p);
            let (c, ok) = project_point(context, &q);
            coords.push(c);
            valid.push(ok);
        }
    }
    Ok(WarpField {
        width: w,
        height: h,
        source_width: context.width,
        source_height: context.height,
        coords,
        valid,
    })
}

/// Same camera, different timestep: `p' = pi(R phi(p, d) + t)`.
pub fn warp_temporal(depth: &DepthField, ego: &RigidTransform, cam: &CameraModel) -> Result<WarpField> {
    warp_with_transform(depth, cam, ego, cam)
}

/// Camera `i` into camera `j` at the same timestep via `X_{i->j}`.
pub fn warp_spatial(depth_i: &DepthField, cam_i: &CameraModel, cam_j: &CameraModel) -> Result<WarpField> {
    warp_with_transform(depth_i, cam_i, &cam_i.relative_to(cam_j), cam_j)
}

/// Camera `i` at `t` into camera `j` at the context timestep, through the
/// composed motion `X_{i->j} * ego_i`.
pub fn warp_spatiotemporal(
    depth_i: &DepthField,
    ego_i: &RigidTransform,
    cam_i: &CameraModel,
    cam_j: &CameraModel,
) -> Result<WarpField> {
    let motion = spatiotemporal_motion(ego_i, cam_i, cam_j);
    warp_with_transform(depth_i, cam_i, &motion, cam_j)
}

pub(crate) fn spatiotemporal_motion(
    ego_i: &RigidTransform,
    cam_i: &CameraModel,
    cam_j: &CameraModel,
) -> RigidTransform {
    cam_i.relative_to(cam_j).compose(ego_i)
}

/// Bilinear sample of all channels at a valid coordinate.
#[inline]
pub(crate) fn sample_bilinear(source: &ImagePlane, x: f64, y: f64, out: &mut [f64]) {
    let (w, h, ch) = (source.width(), source.height(), source.channels());
    let (x0, fx) = bilinear_cell(x, w);
    let (y0, fy) = bilinear_cell(y, h);
    let data = source.data();
    let i00 = (y0 * w + x0) * ch;
    let i10 = i00 + ch;
    let i01 = i00 + w * ch;
    let i11 = i01 + ch;
    let (w00, w10, w01, w11) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy);
    for c in 0..ch {
        out[c] = w00 * data[i00 + c] + w10 * data[i10 + c] + w01 * data[i01 + c] + w11 * data[i11 + c];
    }
}

/// Resamples `source` at each valid warp coordinate. Invalid pixels are zero
/// and cleared in the returned mask.
pub fn synthesize(source: &ImagePlane, warp: &WarpField) -> Result<(ImagePlane, BinaryMask)> {
    if source.dims() != warp.source_dims() {
        return Err(Error::dims("synthesis source", warp.source_dims(), source.dims()));
    }
    let ch = source.channels();
    let mut out = ImagePlane::zeros(warp.width, warp.height, ch);
    let mut px = [0.0; 3];
    for (k, (c, ok)) in warp.coords.iter().zip(&warp.valid).enumerate() {
        if *ok {
            sample_bilinear(source, c[0], c[1], &mut px[..ch]);
            out.data_mut()[k * ch..(k + 1) * ch].copy_from_slice(&px[..ch]);
        }
    }
    let mask = warp.validity_mask();
    Ok((out, mask))
}

/// Nearest-neighbor warp of a source mask onto the target grid; invalid warp
/// pixels come out unset.
pub fn warp_mask_nearest(source: &BinaryMask, warp: &WarpField) -> Result<BinaryMask> {
    if source.dims() != warp.source_dims() {
        return Err(Error::dims("mask warp source", warp.source_dims(), source.dims()));
    }
    let (sw, sh) = warp.source_dims();
    let bits = warp
        .coords
        .iter()
        .zip(&warp.valid)
        .map(|(c, ok)| {
            if !*ok {
                return false;
            }
            let (x, y) = (c[0].round(), c[1].round());
            if x < 0.0 || y < 0.0 || x > (sw - 1) as f64 || y > (sh - 1) as f64 {
                return false;
            }
            source.get(x as usize, y as usize)
        })
        .collect();
    BinaryMask::new(warp.width, warp.height, bits)
}

/// Warps a unit tensor with nearest-neighbor lookup: set wherever the target
/// pixel lands inside the context image.
pub fn non_overlap_mask(warp: &WarpField) -> BinaryMask {
    let (sw, sh) = warp.source_dims();
    let ones = BinaryMask::ones(sw, sh);
    warp_mask_nearest(&ones, warp).expect("dims match by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_y;
    use nalgebra::{Matrix4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(name: &str, w: usize, h: usize, f: f64, ext: RigidTransform) -> CameraModel {
        CameraModel::new(name, f, f, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h, ext).unwrap()
    }

    fn ramp_depth(w: usize, h: usize) -> DepthField {
        let d: Vec<f64> = (0..w * h)
            .map(|k| 4.0 + (k % 7) as f64 * 0.3 + (k / w) as f64 * 0.1)
            .collect();
        DepthField::from_depth(w, h, &d).unwrap()
    }

    #[test]
    fn identity_ego_maps_pixels_to_themselves() {
        let c = cam("a", 16, 12, 10.0, RigidTransform::identity());
        let wf = warp_temporal(&ramp_depth(16, 12), &RigidTransform::identity(), &c).unwrap();
        assert!(wf.valid().iter().all(|v| *v));
        for (k, p) in wf.coords().iter().enumerate() {
            assert!((p[0] - (k % 16) as f64).abs() < 1e-12);
            assert!((p[1] - (k / 16) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_motion_on_fronto_parallel_plane() {
        let (w, h, f) = (21, 21, 10.0);
        let c = cam("a", w, h, f, RigidTransform::identity());
        let d = 5.0;
        let delta = 1.0;
        // Moving the camera forward by delta brings points closer by delta.
        let ego = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -delta));
        let wf = warp_temporal(&DepthField::constant(w, h, d), &ego, &c).unwrap();
        let center = 10 * w + 10;
        assert!((wf.coords()[center][0] - 10.0).abs() < 1e-12);
        assert!((wf.coords()[center][1] - 10.0).abs() < 1e-12);
        // Hand-computed: offset from the principal point grows by d / (d - delta).
        for (u, v) in [(12usize, 10usize), (10, 4), (16, 15)] {
            let got = wf.coords()[v * w + u];
            let ex = 10.0 + (u as f64 - 10.0) * d / (d - delta);
            let ey = 10.0 + (v as f64 - 10.0) * d / (d - delta);
            assert!((got[0] - ex).abs() < 1e-12 && (got[1] - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn ego_behind_camera_invalidates_everything() {
        let c = cam("a", 8, 6, 5.0, RigidTransform::identity());
        let ego = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -50.0));
        let wf = warp_temporal(&DepthField::constant(8, 6, 3.0), &ego, &c).unwrap();
        assert!(wf.valid().iter().all(|v| !*v));
    }

    #[test]
    fn spatial_same_camera_is_identity_and_opposite_is_empty() {
        let a = cam("a", 12, 8, 6.0, RigidTransform::identity());
        let depth = ramp_depth(12, 8);
        let wf = warp_spatial(&depth, &a, &a).unwrap();
        let id = warp_temporal(&depth, &RigidTransform::identity(), &a).unwrap();
        assert_eq!(wf, id);
        let back = cam(
            "b",
            12,
            8,
            6.0,
            RigidTransform::from_rotation(rot_y(std::f64::consts::PI)),
        );
        let wf = warp_spatial(&depth, &a, &back).unwrap();
        assert_eq!(wf.valid_fraction(), 0.0);
        assert_eq!(non_overlap_mask(&wf).count_ones(), 0);
    }

    #[test]
    fn spatiotemporal_reduces_to_spatial_and_temporal_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cam("a", 14, 10, 8.0, RigidTransform::identity());
        let b = cam(
            "b",
            14,
            10,
            8.0,
            RigidTransform::new(rot_y(0.4), Vector3::new(0.3, 0.0, 0.1)).unwrap(),
        );
        let depth = ramp_depth(14, 10);
        let ego = RigidTransform::new(
            crate::geometry::EulerAngles::new(rng.random_range(-0.05..0.05), 0.02, -0.03).to_rotation(),
            Vector3::new(0.1, -0.05, 0.4),
        )
        .unwrap();
        assert_eq!(
            warp_spatiotemporal(&depth, &RigidTransform::identity(), &a, &b).unwrap(),
            warp_spatial(&depth, &a, &b).unwrap()
        );
        assert_eq!(
            warp_spatiotemporal(&depth, &ego, &a, &a).unwrap(),
            warp_temporal(&depth, &ego, &a).unwrap()
        );
    }

    #[test]
    fn spatiotemporal_matches_dense_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut rand_tf = |scale: f64| {
                RigidTransform::new(
                    crate::geometry::EulerAngles::new(
                        rng.random_range(-scale..scale),
                        rng.random_range(-scale..scale),
                        rng.random_range(-scale..scale),
                    )
                    .to_rotation(),
                    Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    ),
                )
                .unwrap()
            };
            let (xi, xj, ego) = (rand_tf(0.5), rand_tf(0.5), rand_tf(0.1));
            let a = cam("a", 10, 8, 7.0, xi);
            let b = CameraModel::new("b", 9.0, 8.5, 4.2, 3.9, 11, 9, xj).unwrap();
            let depth = ramp_depth(10, 8);
            let wf = warp_spatiotemporal(&depth, &ego, &a, &b).unwrap();
            // Oracle: dense 4x4 chain Xj^-1 * Xi * ego, point by point.
            let chain: Matrix4<f64> = xj.to_matrix4().try_inverse().unwrap() * xi.to_matrix4() * ego.to_matrix4();
            let ki = a.intrinsics().try_inverse().unwrap();
            for v in 0..8 {
                for u in 0..10 {
                    let d = depth.depth_at(u, v);
                    let ray = ki * Vector3::new(u as f64, v as f64, 1.0) * d;
                    let q = chain * Vector4::new(ray.x, ray.y, ray.z, 1.0);
                    let pix = b.intrinsics() * Vector3::new(q.x, q.y, q.z);
                    let got = wf.coords()[v * 10 + u];
                    if q.z > 0.1 {
                        assert!((got[0] - pix.x / pix.z).abs() < 1e-9);
                        assert!((got[1] - pix.y / pix.z).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn scale_ambiguity_of_temporal_warps() {
        let c = cam("a", 12, 9, 7.0, RigidTransform::identity());
        let depth = ramp_depth(12, 9);
        let ego = RigidTransform::new(rot_y(0.03), Vector3::new(0.2, -0.1, 0.5)).unwrap();
        let base = warp_temporal(&depth, &ego, &c).unwrap();
        for s in [0.5, 2.0, 10.0, 0.013] {
            let scaled_ego = RigidTransform::new(ego.rotation, ego.translation * s).unwrap();
            let wf = warp_temporal(&depth.scaled(s), &scaled_ego, &c).unwrap();
            for (a, b) in base.coords().iter().zip(wf.coords()) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synthesize_identity_reproduces_source() {
        let c = cam("a", 9, 7, 5.0, RigidTransform::identity());
        let src = ImagePlane::from_fn(9, 7, 3, |x, y, ch| ((x * 3 + y * 5 + ch) % 11) as f64 / 10.0);
        let wf = warp_temporal(&DepthField::constant(9, 7, 2.0), &RigidTransform::identity(), &c).unwrap();
        let (out, mask) = synthesize(&src, &wf).unwrap();
        assert_eq!(mask.count_ones(), 63);
        for (a, b) in out.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn synthesize_half_pixel_shift_on_linear_ramp() {
        let (w, h) = (10, 4);
        let src = ImagePlane::from_fn(w, h, 1, |x, _, _| x as f64 / 10.0);
        let coords = (0..w * h).map(|k| [(k % w) as f64 + 0.5, (k / w) as f64]).collect();
        let wf = WarpField::from_coords(w, h, w, h, coords).unwrap();
        let (out, mask) = synthesize(&src, &wf).unwrap();
        for y in 0..h {
            for x in 0..w {
                if x == w - 1 {
                    assert!(!mask.get(x, y));
                    assert_eq!(out.get(x, y, 0), 0.0);
                } else {
                    assert!(mask.get(x, y));
                    assert!((out.get(x, y, 0) - (x as f64 + 0.5) / 10.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn all_invalid_warp_gives_zero_image() {
        let coords = vec![[-5.0, -5.0]; 12];
        let wf = WarpField::from_coords(4, 3, 4, 3, coords).unwrap();
        let src = ImagePlane::from_fn(4, 3, 1, |_, _, _| 0.7);
        let (out, mask) = synthesize(&src, &wf).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
        assert_eq!(mask.count_ones(), 0);
        assert_eq!(non_overlap_mask(&wf).count_ones(), 0);
    }

    #[test]
    fn valid_pixels_have_all_bilinear_neighbors_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (7, 5);
        let coords: Vec<[f64; 2]> = (0..w * h)
            .map(|_| [rng.random_range(-1.0..8.0), rng.random_range(-1.0..6.0)])
            .collect();
        let wf = WarpField::from_coords(w, h, w, h, coords).unwrap();
        for (c, ok) in wf.coords().iter().zip(wf.valid()) {
            if *ok {
                let (x0, _) = bilinear_cell(c[0], w);
                let (y0, _) = bilinear_cell(c[1], h);
                assert!(x0 + 1 < w && y0 + 1 < h);
            }
        }
        assert_eq!(non_overlap_mask(&wf), wf.validity_mask());
    }

    #[test]
    fn cell_choice_at_integer_coordinates() {
        assert_eq!(bilinear_cell(0.0, 5), (0, 0.0));
        assert_eq!(bilinear_cell(2.0, 5), (1, 1.0));
        assert_eq!(bilinear_cell(4.0, 5), (3, 1.0));
        assert_eq!(bilinear_cell(2.25, 5), (2, 0.25));
    }
}

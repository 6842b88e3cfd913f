//! Photometric, smoothness and pose-consistency losses, and their weighted
//! combination over a multi-camera sample.

use serde::{Deserialize, Serialize};

use crate::differentiation::PoseParams;
use crate::error::{Error, Result};
use crate::geometry::{to_canonical, EulerAngles, Rig, RigidTransform};
use crate::grid::{BinaryMask, DepthField, ImagePlane};
use crate::objective;
use crate::sample::MultiCamSample;

/// SSIM stabilizers for intensities in `[0, 1]`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// SSIM share of the photometric loss; the rest is L1.
    pub alpha: f64,
    pub alpha_t: f64,
    pub alpha_r: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            alpha_t: 0.1,
            alpha_r: 0.1,
            lambda_s: 0.1,
            lambda_t: 1.0,
            lambda_d: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("alpha_t", self.alpha_t),
            ("alpha_r", self.alpha_r),
            ("lambda_s", self.lambda_s),
            ("lambda_t", self.lambda_t),
            ("lambda_d", self.lambda_d),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.alpha > 1.0 {
            return Err(Error::Config(format!(
                "weight alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Which families of terms participate in the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermToggles {
    pub use_spatial: bool,
    pub use_spatiotemporal: bool,
    pub use_pcc: bool,
    pub use_self_occ_masks: bool,
}

impl Default for TermToggles {
    fn default() -> Self {
        Self {
            use_spatial: true,
            use_spatiotemporal: true,
            use_pcc: true,
            use_self_occ_masks: true,
        }
    }
}

/// Per-step loss values. `total` is exactly the weighted sum of the parts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub photometric_temporal: f64,
    pub photometric_spatial: f64,
    pub smoothness: f64,
    pub pcc_translation: f64,
    pub pcc_rotation: f64,
    pub total: f64,
    pub temporal_valid_pixels: usize,
    pub spatial_valid_pixels: usize,
    pub temporal_terms: usize,
    pub spatial_terms: usize,
    /// Cameras whose photometric terms all had empty masks.
    pub cameras_without_valid_pixels: Vec<usize>,
    pub gimbal_lock_warning: bool,
}

impl LossBreakdown {
    /// Name of the first loss family with a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        [
            ("photometric_temporal", self.photometric_temporal),
            ("photometric_spatial", self.photometric_spatial),
            ("smoothness", self.smoothness),
            ("pcc_translation", self.pcc_translation),
            ("pcc_rotation", self.pcc_rotation),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name.to_owned())
    }

    pub(crate) fn combine(&mut self, w: &LossWeights) {
        self.total = w.lambda_t * self.photometric_temporal
            + w.lambda_s * self.photometric_spatial
            + w.lambda_d * self.smoothness
            + w.alpha_t * self.pcc_translation
            + w.alpha_r * self.pcc_rotation;
    }
}

/// Per-pixel, per-channel similarity values in `[-1, 1]` (interleaved like
/// [`ImagePlane`]); zero where the mask is unset.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

/// Zero-padded 3x3 box sum.
pub(crate) fn box3(src: &[f64], w: usize, h: usize, out: &mut [f64], tmp: &mut [f64]) {
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let t = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = row[x];
            if x > 0 {
                s += row[x - 1];
            }
            if x + 1 < w {
                s += row[x + 1];
            }
            t[x] = s;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut s = tmp[y * w + x];
            if y > 0 {
                s += tmp[(y - 1) * w + x];
            }
            if y + 1 < h {
                s += tmp[(y + 1) * w + x];
            }
            out[y * w + x] = s;
        }
    }
}

/// Window statistics of one channel over masked pixels.
pub(crate) struct SsimStats {
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub e_xx: Vec<f64>,
    pub e_yy: Vec<f64>,
    pub e_xy: Vec<f64>,
}

pub(crate) fn ssim_stats(x: &[f64], y: &[f64], mask: &[bool], count: &[f64], w: usize, h: usize) -> SsimStats {
    let n = w * h;
    let mut tmp = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut filtered = |f: &dyn Fn(usize) -> f64| {
        for k in 0..n {
            buf[k] = if mask[k] { f(k) } else { 0.0 };
        }
        let mut out = vec![0.0; n];
        box3(&buf, w, h, &mut out, &mut tmp);
        for k in 0..n {
            if count[k] > 0.0 {
                out[k] /= count[k];
            }
        }
        out
    };
    let mu_x = filtered(&|k| x[k]);
    let mu_y = filtered(&|k| y[k]);
    let e_xx = filtered(&|k| x[k] * x[k]);
    let e_yy = filtered(&|k| y[k] * y[k]);
    let e_xy = filtered(&|k| x[k] * y[k]);
    SsimStats {
        mu_x,
        mu_y,
        e_xx,
        e_yy,
        e_xy,
    }
}

pub(crate) fn window_counts(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    let ones: Vec<f64> = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    let mut out = vec![0.0; w * h];
    let mut tmp = vec![0.0; w * h];
    box3(&ones, w, h, &mut out, &mut tmp);
    out
}

#[inline]
pub(crate) fn ssim_value(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64) -> f64 {
    let sxy = exy - mx * my;
    let sxx = exx - mx * mx;
    let syy = eyy - my * my;
    ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2))
}

fn check_dims(context: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::dims(context, a, b));
    }
    Ok(())
}

/// SSIM over 3x3 windows restricted to masked pixels, per channel.
pub fn ssim(a: &ImagePlane, b: &ImagePlane, mask: &BinaryMask) -> Result<SimilarityMap> {
    check_dims("ssim inputs", a.dims(), b.dims())?;
    check_dims("ssim mask", a.dims(), mask.dims())?;
    if a.channels() != b.channels() {
        return Err(Error::Domain("ssim inputs differ in channel count".into()));
    }
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let counts = window_counts(mask.bits(), w, h);
    let mut values = vec![0.0; w * h * ch];
    for c in 0..ch {
        let xs: Vec<f64> = (0..w * h).map(|k| a.data()[k * ch + c]).collect();
        let ys: Vec<f64> = (0..w * h).map(|k| b.data()[k * ch + c]).collect();
        let st = ssim_stats(&xs, &ys, mask.bits(), &counts, w, h);
        for k in 0..w * h {
            if mask.bits()[k] && counts[k] > 0.0 {
                values[k * ch + c] = ssim_value(st.mu_x[k], st.mu_y[k], st.e_xx[k], st.e_yy[k], st.e_xy[k]);
            }
        }
    }
    Ok(SimilarityMap {
        width: w,
        height: h,
        channels: ch,
        values,
    })
}

/// `alpha * (1 - SSIM) / 2 + (1 - alpha) * |a - b|`, averaged over channels;
/// zero outside the mask.
pub fn photometric_loss(target: &ImagePlane, synth: &ImagePlane, mask: &BinaryMask, alpha: f64) -> Result<Vec<f64>> {
    let sim = ssim(target, synth, mask)?;
    let ch = target.channels();
    let inv = 1.0 / ch as f64;
    Ok((0..target.width() * target.height())
        .map(|k| {
            if !mask.bits()[k] {
                return 0.0;
            }
            let mut l = 0.0;
            for c in 0..ch {
                let i = k * ch + c;
                l += alpha * (1.0 - sim.values[i]) * 0.5 + (1.0 - alpha) * (target.data()[i] - synth.data()[i]).abs();
            }
            l * inv
        })
        .collect())
}

/// Scalar photometric loss after both masks: the mean over surviving pixels,
/// with the surviving count. An empty mask yields `(0, 0)`.
pub fn masked_photometric_loss(
    loss_map: &[f64],
    non_overlap: &BinaryMask,
    self_occlusion: &BinaryMask,
) -> Result<(f64, usize)> {
    check_dims("photometric masks", non_overlap.dims(), self_occlusion.dims())?;
    if loss_map.len() != non_overlap.bits().len() {
        return Err(Error::Domain("loss map size does not match masks".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((l, a), b) in loss_map.iter().zip(non_overlap.bits()).zip(self_occlusion.bits()) {
        if *a && *b {
            sum += l;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, 0));
    }
    Ok((sum / count as f64, count))
}

/// Edge-aware first-order smoothness of mean-normalized depth, as the sum of
/// the mean horizontal and mean vertical penalties.
pub fn smoothness_loss(depth: &DepthField, image: &ImagePlane) -> Result<f64> {
    check_dims("smoothness inputs", depth.dims(), image.dims())?;
    let edges = objective::EdgeWeights::new(image);
    Ok(objective::smoothness(depth.log_depth(), &edges, None))
}

/// Translation and rotation consistency for one set of simultaneous
/// per-camera motion predictions, canonicalized into camera 0's frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseConsistency {
    pub translation: f64,
    pub rotation: f64,
    pub near_gimbal_lock: bool,
}

impl PoseConsistency {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.alpha_t * self.translation + w.alpha_r * self.rotation
    }
}

pub fn pose_consistency_loss(poses: &[RigidTransform], rig: &Rig) -> Result<PoseConsistency> {
    if poses.len() != rig.len() {
        return Err(Error::Domain(format!(
            "{} poses for a {}-camera rig",
            poses.len(),
            rig.len()
        )));
    }
    if poses.len() < 2 {
        return Err(Error::Domain("pose consistency needs at least two cameras".into()));
    }
    let front = &poses[0];
    let front_euler = EulerAngles::from_rotation(&front.rotation);
    let mut out = PoseConsistency {
        near_gimbal_lock: front_euler.near_gimbal_lock,
        ..Default::default()
    };
    let x0 = &rig.cameras[0].extrinsics;
    for (pose, cam) in poses.iter().zip(&rig.cameras).skip(1) {
        let canon = to_canonical(pose, &cam.extrinsics, x0);
        out.translation += (front.translation - canon.translation).norm_squared();
        let e = EulerAngles::from_rotation(&canon.rotation);
        out.near_gimbal_lock |= e.near_gimbal_lock;
        let (a, b) = (front_euler.angles, e.angles);
        out.rotation += (a.phi - b.phi).powi(2) + (a.theta - b.theta).powi(2) + (a.psi - b.psi).powi(2);
    }
    Ok(out)
}

/// Per-camera pose parameters for the two temporal contexts
/// (`[previous, next]`).
pub type CameraPoses = [PoseParams; 2];

/// Evaluates the full weighted objective with masks computed at this point.
pub fn total_loss(
    sample: &MultiCamSample,
    depths: &[DepthField],
    poses: &[CameraPoses],
    weights: &LossWeights,
    toggles: &TermToggles,
) -> Result<LossBreakdown> {
    let problem = objective::Problem::new(sample, weights, toggles)?;
    let masks = problem.compute_masks(depths, poses)?;
    Ok(problem.evaluate(depths, poses, &masks, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_y, CameraModel};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_fn(w, h, 1, |x, y, _| ((x + y) % 2) as f64)
    }

    /// Closed-form SSIM for a window holding `k` ones and `n - k` zeros in `x`
    /// with `y = 1 - x`.
    fn ssim_inverted_binary_window(n: f64, k: f64) -> f64 {
        let mx = k / n;
        let my = 1.0 - mx;
        let var = mx * (1.0 - mx);
        ((2.0 * mx * my + SSIM_C1) * (-2.0 * var + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (2.0 * var + SSIM_C2))
    }

    #[test]
    fn ssim_self_similarity_is_one() {
        let img = ImagePlane::from_fn(7, 5, 3, |x, y, c| ((x * 7 + y * 3 + c) % 10) as f64 / 9.0);
        let mask = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 3 != 0);
        let s = ssim(&img, &img, &mask).unwrap();
        for k in 0..35 {
            for c in 0..3 {
                let v = s.values[k * 3 + c];
                if mask.bits()[k] {
                    assert!((v - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn ssim_of_inverted_checkerboard() {
        let a = checkerboard(6, 6);
        let b = ImagePlane::from_fn(6, 6, 1, |x, y, _| 1.0 - a.get(x, y, 0));
        let s = ssim(&a, &b, &BinaryMask::ones(6, 6)).unwrap();
        // Interior windows hold 5 of one level and 4 of the other.
        let even = ssim_inverted_binary_window(9.0, 4.0);
        let odd = ssim_inverted_binary_window(9.0, 5.0);
        for y in 1..5 {
            for x in 1..5 {
                let expect = if (x + y) % 2 == 0 { even } else { odd };
                assert!((s.values[y * 6 + x] - expect).abs() < 1e-12);
                assert!(s.values[y * 6 + x] < -0.97);
            }
        }
    }

    #[test]
    fn ssim_of_two_constants() {
        let a = ImagePlane::from_fn(4, 4, 1, |_, _, _| 0.2);
        let b = ImagePlane::from_fn(4, 4, 1, |_, _, _| 0.8);
        let s = ssim(&a, &b, &BinaryMask::ones(4, 4)).unwrap();
        let expect = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.04 + 0.64 + SSIM_C1);
        for v in s.values {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn photometric_loss_examples() {
        let a = ImagePlane::from_fn(5, 4, 3, |x, y, c| (x + y + c) as f64 / 12.0);
        let ones = BinaryMask::ones(5, 4);
        assert!(photometric_loss(&a, &a, &ones, 0.85)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));

        let b = ImagePlane::from_fn(5, 4, 3, |x, y, c| (x + y + c) as f64 / 12.0 * 0.5 + 0.3);
        let c = ImagePlane::from_fn(5, 4, 3, |x, y, ch| b.get(x, y, ch) - 0.3);
        let l = photometric_loss(&b, &c, &ones, 0.0).unwrap();
        assert!(l.iter().all(|v| (v - 0.3).abs() < 1e-12));

        let lo = ImagePlane::from_fn(4, 4, 1, |_, _, _| 0.2);
        let hi = ImagePlane::from_fn(4, 4, 1, |_, _, _| 0.8);
        let s = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.04 + 0.64 + SSIM_C1);
        let expect = 0.85 * (1.0 - s) / 2.0 + 0.15 * 0.6;
        let l = photometric_loss(&lo, &hi, &BinaryMask::ones(4, 4), 0.85).unwrap();
        assert!(l.iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn masked_loss_examples() {
        let (w, h) = (6, 4);
        let map = vec![0.4; w * h];
        let ones = BinaryMask::ones(w, h);
        let (v, n) = masked_photometric_loss(&map, &ones, &ones).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(n, 24);
        let top = BinaryMask::from_fn(w, h, |_, y| y < h / 2);
        let (v, n) = masked_photometric_loss(&map, &ones, &top).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(n, 12);
        assert_eq!(
            masked_photometric_loss(&map, &BinaryMask::zeros(w, h), &ones).unwrap(),
            (0.0, 0)
        );

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let map: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
            let a = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(0.7));
            let b = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(0.7));
            let (mut s, mut m) = (0.0, 0.0);
            for (k, l) in map.iter().enumerate() {
                let bit = if a.bits()[k] && b.bits()[k] { 1.0 } else { 0.0 };
                s += l * bit;
                m += bit;
            }
            let (v, _) = masked_photometric_loss(&map, &a, &b).unwrap();
            let expect = if m > 0.0 { s / m } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothness_examples() {
        let (w, h) = (8, 5);
        let flat = ImagePlane::from_fn(w, h, 1, |_, _, _| 0.5);
        assert_eq!(smoothness_loss(&DepthField::constant(w, h, 3.0), &flat).unwrap(), 0.0);

        let (a, s) = (2.0, 0.5);
        let depth: Vec<f64> = (0..w * h).map(|k| a + s * (k % w) as f64).collect();
        let mean = depth.iter().sum::<f64>() / depth.len() as f64;
        let l = smoothness_loss(&DepthField::from_depth(w, h, &depth).unwrap(), &flat).unwrap();
        assert!((l - s / mean).abs() < 1e-12);

        // Depth step aligned with an image edge.
        let g = 0.6;
        let img = ImagePlane::from_fn(w, h, 1, |x, _, _| if x < 4 { 0.2 } else { 0.2 + g });
        let depth: Vec<f64> = (0..w * h).map(|k| if k % w < 4 { 2.0 } else { 3.0 }).collect();
        let mean = depth.iter().sum::<f64>() / depth.len() as f64;
        // Scalar loop oracle.
        let mut sx = 0.0;
        for y in 0..h {
            for x in 0..w - 1 {
                let dd = (depth[y * w + x + 1] - depth[y * w + x]).abs() / mean;
                let di = (img.get(x + 1, y, 0) - img.get(x, y, 0)).abs();
                sx += dd * (-di).exp();
            }
        }
        let expect = sx / ((w - 1) * h) as f64;
        let l = smoothness_loss(&DepthField::from_depth(w, h, &depth).unwrap(), &img).unwrap();
        assert!((l - expect).abs() < 1e-12);
        let unattenuated = (1.0 / mean) * h as f64 / ((w - 1) * h) as f64;
        assert!((l - unattenuated * (-g).exp()).abs() < 1e-12);
    }

    fn ring_rig(n: usize) -> Rig {
        let cams = (0..n)
            .map(|i| {
                let yaw = i as f64 * std::f64::consts::TAU / n as f64;
                let ext = RigidTransform::new(rot_y(yaw), Vector3::new(yaw.sin(), 0.1, yaw.cos())).unwrap();
                CameraModel::new(format!("c{i}"), 20.0, 20.0, 16.0, 12.0, 32, 24, ext).unwrap()
            })
            .collect();
        Rig::new(cams).unwrap()
    }

    #[test]
    fn pcc_zero_for_consistent_predictions() {
        let rig = ring_rig(6);
        let motion = RigidTransform::new(
            EulerAngles::new(0.01, 0.05, -0.02).to_rotation(),
            Vector3::new(0.1, 0.0, 1.2),
        )
        .unwrap();
        let poses: Vec<_> = rig
            .cameras
            .iter()
            .map(|c| c.extrinsics.inverse().compose(&motion).compose(&c.extrinsics))
            .collect();
        let p = pose_consistency_loss(&poses, &rig).unwrap();
        assert!(p.translation < 1e-9 && p.rotation < 1e-9);
    }

    #[test]
    fn pcc_hand_computed_offsets() {
        let front = RigidTransform::identity();
        let side = RigidTransform::new(rot_y(std::f64::consts::FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let mk = |ext| CameraModel::new("c", 20.0, 20.0, 10.0, 10.0, 21, 21, ext).unwrap();
        let rig = Rig::new(vec![mk(front), mk(side)]).unwrap();
        let front_pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -1.0));
        // Side camera sees the same motion shifted by +0.1 m along rig z.
        let rig_motion = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -1.1));
        let side_pose = side.inverse().compose(&rig_motion).compose(&side);
        let p = pose_consistency_loss(&[front_pose, side_pose], &rig).unwrap();
        assert!((p.translation - 0.01).abs() < 1e-12);
        assert!(p.rotation < 1e-20);

        // Rotation-only discrepancy of 0.05 rad yaw (about z).
        let yawed = RigidTransform::from_rotation(crate::geometry::rot_z(0.05));
        let side_pose = side.inverse().compose(&yawed).compose(&side);
        let p = pose_consistency_loss(&[RigidTransform::identity(), side_pose], &rig).unwrap();
        assert!((p.rotation - 0.0025).abs() < 1e-12);
        assert!(p.translation < 1e-20);
    }

    #[test]
    fn pcc_rejects_single_camera() {
        let rig = ring_rig(1);
        assert!(pose_consistency_loss(&[RigidTransform::identity()], &rig).is_err());
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            lambda_s: -0.1,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}

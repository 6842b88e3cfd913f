//! Fused forward/reverse evaluation of the multi-camera objective.
//!
//! Each photometric term is evaluated with explicit image-sized adjoints:
//! SSIM window statistics are box filters, so their transpose is the same
//! box filter. Masks are inputs here; callers decide whether they are fresh
//! or frozen.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::differentiation::{GradientBundle, PoseParams};
use crate::error::{Error, Result};
use crate::geometry::{to_canonical, CameraModel, EulerAngles, RigidTransform};
use crate::grid::{DepthField, ImagePlane};
use crate::losses::{box3, window_counts, CameraPoses, LossBreakdown, LossWeights, TermToggles, SSIM_C1, SSIM_C2};
use crate::sample::{Frame, MultiCamSample, CONTEXTS};
use crate::warping::{bilinear_cell, project_point};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    Temporal,
    Spatial,
    SpatioTemporal,
}

/// One photometric comparison: target camera at `t` against `source` camera
/// at `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Term {
    pub kind: TermKind,
    pub target: usize,
    pub source: usize,
    pub frame: Frame,
    /// Pose slot of the target camera, for terms that move in time.
    pub context: Option<usize>,
}

impl Term {
    pub fn is_temporal(&self) -> bool {
        self.kind == TermKind::Temporal
    }
}

/// Frozen per-term pixel masks (non-overlap and self-occlusion combined).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<Vec<bool>>,
}

/// Edge-aware smoothness weights `exp(-|dI|)` of one image.
pub(crate) struct EdgeWeights {
    width: usize,
    height: usize,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl EdgeWeights {
    pub fn new(image: &ImagePlane) -> Self {
        let (w, h, ch) = (image.width(), image.height(), image.channels());
        let diff = |a: usize, b: usize| {
            let d = image.data();
            let mut s = 0.0;
            for c in 0..ch {
                s += (d[a * ch + c] - d[b * ch + c]).abs();
            }
            (-(s / ch as f64)).exp()
        };
        let mut wx = Vec::with_capacity(w.saturating_sub(1) * h);
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                wx.push(diff(y * w + x + 1, y * w + x));
            }
        }
        let mut wy = Vec::with_capacity(w * h.saturating_sub(1));
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                wy.push(diff((y + 1) * w + x, y * w + x));
            }
        }
        Self {
            width: w,
            height: h,
            wx,
            wy,
        }
    }
}

/// Edge-aware smoothness of mean-normalized depth. When `grad` is given, the
/// derivative with respect to log-depth is added into it.
pub(crate) fn smoothness(log_depth: &[f64], edges: &EdgeWeights, grad: Option<(&mut [f64], f64)>) -> f64 {
    let (w, h) = (edges.width, edges.height);
    let n = w * h;
    let depth: Vec<f64> = log_depth.iter().map(|l| l.exp()).collect();
    let mean = depth.iter().sum::<f64>() / n as f64;
    let norm: Vec<f64> = depth.iter().map(|d| d / mean).collect();
    let nx = edges.wx.len();
    let ny = edges.wy.len();
    let mut lx = 0.0;
    let mut ly = 0.0;
    let mut g_norm = grad.as_ref().map(|_| vec![0.0; n]);
    if nx > 0 {
        let scale = 1.0 / nx as f64;
        for y in 0..h {
            for x in 0..w - 1 {
                let (a, b) = (y * w + x, y * w + x + 1);
                let wgt = edges.wx[y * (w - 1) + x];
                let diff = norm[b] - norm[a];
                lx += diff.abs() * wgt;
                if let Some(g) = g_norm.as_mut() {
                    let s = diff.signum_or_zero() * wgt * scale;
                    g[b] += s;
                    g[a] -= s;
                }
            }
        }
        lx *= scale;
    }
    if ny > 0 {
        let scale = 1.0 / ny as f64;
        for y in 0..h - 1 {
            for x in 0..w {
                let (a, b) = (y * w + x, (y + 1) * w + x);
                let wgt = edges.wy[y * w + x];
                let diff = norm[b] - norm[a];
                ly += diff.abs() * wgt;
                if let Some(g) = g_norm.as_mut() {
                    let s = diff.signum_or_zero() * wgt * scale;
                    g[b] += s;
                    g[a] -= s;
                }
            }
        }
        ly *= scale;
    }
    if let (Some((out, weight)), Some(g)) = (grad, g_norm) {
        // d(norm_j)/d(d_k) = delta_jk / m - d_j / (m^2 n)
        let coupled: f64 = g.iter().zip(&norm).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for k in 0..n {
            let dd = (g[k] - coupled) / mean;
            out[k] += weight * dd * depth[k];
        }
    }
    lx + ly
}

/// Photometric residuals this close to zero are rounding noise around an
/// exact match; they take the zero subgradient.
const L1_DEAD_ZONE: f64 = 1e-12;

#[inline]
fn l1_sign(diff: f64) -> f64 {
    if diff.abs() <= L1_DEAD_ZONE {
        0.0
    } else {
        diff.signum()
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    #[inline]
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Inputs of one photometric term, resolved against the sample.
struct TermInputs<'a> {
    log_depth: &'a [f64],
    target_cam: &'a CameraModel,
    source_cam: &'a CameraModel,
    /// Full motion from target camera at `t` into the source camera frame.
    motion: RigidTransform,
    /// Fixed left factor `E` with `motion = E * pose`; only its rotation is
    /// needed to pull gradients back onto the pose.
    lead_rotation: Matrix3<f64>,
    target: &'a ImagePlane,
    source: &'a ImagePlane,
    alpha: f64,
}

struct TermOutput {
    value: f64,
    count: usize,
    d_log_depth: Option<Vec<f64>>,
    /// Gradient with respect to the pose rotation matrix and translation.
    d_rotation: Matrix3<f64>,
    d_translation: Vector3<f64>,
}

/// Computes the frozen mask of one term at the current point.
fn term_mask(inp: &TermInputs, target_so: Option<&[bool]>, source_so: Option<&[bool]>) -> Vec<bool> {
    let (w, h) = (inp.target_cam.width, inp.target_cam.height);
    let sw = inp.source_cam.width;
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let k = v * w + u;
            if target_so.is_some_and(|m| !m[k]) {
                out.push(false);
                continue;
            }
            let p = inp.target_cam.ray(u as f64, v as f64) * inp.log_depth[k].exp();
            let q = inp.motion.apply(&p);
            let (c, ok) = project_point(inp.source_cam, &q);
            // Nearest-neighbor lookup of the unit tensor and, optionally, of
            // the source camera's self-occlusion mask.
            let keep = ok
                && source_so.is_none_or(|m| {
                    let x = c[0].round().max(0.0) as usize;
                    let y = c[1].round().max(0.0) as usize;
                    m[y * sw + x]
                });
            out.push(keep);
        }
    }
    out
}

/// Camera point, moved point, and the bilinear cell `(x0, fx, y0, fy)`.
type PixelSample = (Vector3<f64>, Vector3<f64>, usize, f64, usize, f64);

fn eval_term(inp: &TermInputs, mask: &[bool], want_grad: bool) -> TermOutput {
    let (w, h) = (inp.target_cam.width, inp.target_cam.height);
    let (sw, sh) = (inp.source_cam.width, inp.source_cam.height);
    let ch = inp.target.channels();
    let n = w * h;
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return TermOutput {
            value: 0.0,
            count: 0,
            d_log_depth: want_grad.then(|| vec![0.0; n]),
            d_rotation: Matrix3::zeros(),
            d_translation: Vector3::zeros(),
        };
    }

    let src = inp.source.data();
    let tgt = inp.target.data();
    let mut synth = vec![0.0; n * ch];
    // Per masked pixel: camera point P, moved point Q, bilinear cell.
    let mut points: Vec<PixelSample> = Vec::with_capacity(count);
    for v in 0..h {
        for u in 0..w {
            let k = v * w + u;
            if !mask[k] {
                continue;
            }
            let p = inp.target_cam.ray(u as f64, v as f64) * inp.log_depth[k].exp();
            let q = inp.motion.apply(&p);
            let x = inp.source_cam.fx * q.x / q.z + inp.source_cam.cx;
            let y = inp.source_cam.fy * q.y / q.z + inp.source_cam.cy;
            let (x0, fx) = bilinear_cell(x, sw);
            let (y0, fy) = bilinear_cell(y, sh);
            let i00 = (y0 * sw + x0) * ch;
            let i01 = i00 + sw * ch;
            for c in 0..ch {
                let top = (1.0 - fx) * src[i00 + c] + fx * src[i00 + ch + c];
                let bot = (1.0 - fx) * src[i01 + c] + fx * src[i01 + ch + c];
                synth[k * ch + c] = (1.0 - fy) * top + fy * bot;
            }
            if want_grad {
                points.push((p, q, x0, fx, y0, fy));
            }
        }
    }

    let counts = window_counts(mask, w, h);
    let mut tmp = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut box_mean = |f: &dyn Fn(usize) -> f64, out: &mut Vec<f64>| {
        for k in 0..n {
            buf[k] = if mask[k] { f(k) } else { 0.0 };
        }
        box3(&buf, w, h, out, &mut tmp);
        for k in 0..n {
            if counts[k] > 0.0 {
                out[k] /= counts[k];
            }
        }
    };

    let alpha = inp.alpha;
    let inv_ch = 1.0 / ch as f64;
    let g = 1.0 / count as f64;
    let mut loss_sum = 0.0;
    let mut d_synth = if want_grad { vec![0.0; n * ch] } else { Vec::new() };
    let (mut mx, mut my, mut exx, mut eyy, mut exy) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut ca, mut cb, mut cc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for c in 0..ch {
        let xs = |k: usize| tgt[k * ch + c];
        let ys = |k: usize| synth[k * ch + c];
        box_mean(&xs, &mut mx);
        box_mean(&ys, &mut my);
        box_mean(&|k| xs(k) * xs(k), &mut exx);
        box_mean(&|k| ys(k) * ys(k), &mut eyy);
        box_mean(&|k| xs(k) * ys(k), &mut exy);
        if want_grad {
            ca.iter_mut().for_each(|v| *v = 0.0);
            cb.iter_mut().for_each(|v| *v = 0.0);
            cc.iter_mut().for_each(|v| *v = 0.0);
        }
        for k in 0..n {
            if !mask[k] {
                continue;
            }
            let (ux, uy) = (mx[k], my[k]);
            let sxy = exy[k] - ux * uy;
            let sxx = exx[k] - ux * ux;
            let syy = eyy[k] - uy * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            let diff = ys(k) - xs(k);
            loss_sum += inv_ch * (alpha * (1.0 - s) * 0.5 + (1.0 - alpha) * diff.abs());
            if want_grad {
                let up = -g * alpha * 0.5 * inv_ch / counts[k];
                let inv = 1.0 / (b1 * b2);
                let ds_dmy = (2.0 * ux * a2 - 2.0 * ux * a1) * inv - s * (2.0 * uy / b1 - 2.0 * uy / b2);
                let ds_deyy = -s / b2;
                let ds_dexy = 2.0 * a1 * inv;
                ca[k] = up * ds_dmy;
                cb[k] = up * ds_deyy;
                cc[k] = up * ds_dexy;
                d_synth[k * ch + c] += g * (1.0 - alpha) * inv_ch * l1_sign(diff);
            }
        }
        if want_grad {
            // The 3x3 window is symmetric, so scattering coefficients back to
            // window members is the same box sum.
            let mut sa = vec![0.0; n];
            let mut sb = vec![0.0; n];
            let mut sc = vec![0.0; n];
            let mut scratch = vec![0.0; n];
            box3(&ca, w, h, &mut sa, &mut scratch);
            box3(&cb, w, h, &mut sb, &mut scratch);
            box3(&cc, w, h, &mut sc, &mut scratch);
            for k in 0..n {
                if mask[k] {
                    d_synth[k * ch + c] += sa[k] + 2.0 * sb[k] * ys(k) + sc[k] * xs(k);
                }
            }
        }
    }
    let value = loss_sum / count as f64;

    if !want_grad {
        return TermOutput {
            value,
            count,
            d_log_depth: None,
            d_rotation: Matrix3::zeros(),
            d_translation: Vector3::zeros(),
        };
    }

    let mut d_log = vec![0.0; n];
    let mut g_rot = Matrix3::zeros();
    let mut g_trans = Vector3::zeros();
    let (sfx, sfy) = (inp.source_cam.fx, inp.source_cam.fy);
    let rot = inp.motion.rotation;
    let mut it = points.iter();
    for k in 0..n {
        if !mask[k] {
            continue;
        }
        let (p, q, x0, fx, y0, fy) = *it.next().expect("one record per masked pixel");
        let i00 = (y0 * sw + x0) * ch;
        let i10 = i00 + ch;
        let i01 = i00 + sw * ch;
        let i11 = i01 + ch;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for c in 0..ch {
            let ds = d_synth[k * ch + c];
            if ds == 0.0 {
                continue;
            }
            let (s00, s10, s01, s11) = (src[i00 + c], src[i10 + c], src[i01 + c], src[i11 + c]);
            gx += ds * ((1.0 - fy) * (s10 - s00) + fy * (s11 - s01));
            gy += ds * ((1.0 - fx) * (s01 - s00) + fx * (s11 - s10));
        }
        if gx == 0.0 && gy == 0.0 {
            continue;
        }
        let iz = 1.0 / q.z;
        let gq = Vector3::new(
            gx * sfx * iz,
            gy * sfy * iz,
            -(gx * sfx * q.x + gy * sfy * q.y) * iz * iz,
        );
        // dQ/d(log d) = R P
        d_log[k] = gq.dot(&(rot * p));
        g_rot += gq * p.transpose();
        g_trans += gq;
    }
    let lead_t = inp.lead_rotation.transpose();
    TermOutput {
        value,
        count,
        d_log_depth: Some(d_log),
        d_rotation: lead_t * g_rot,
        d_translation: lead_t * g_trans,
    }
}

/// See [`Problem::branch_pattern`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchPattern {
    pub cells: Vec<[usize; 2]>,
    pub signs: Vec<i8>,
}

impl BranchPattern {
    /// True when `other` lies on the same piece as `self`. A zero sign in
    /// `self` matches anything: the zero subgradient there equals the
    /// central difference of a symmetric kink.
    pub fn same_piece(&self, other: &BranchPattern) -> bool {
        self.cells == other.cells
            && self.signs.len() == other.signs.len()
            && self.signs.iter().zip(&other.signs).all(|(a, b)| *a == 0 || a == b)
    }
}

fn sign(v: f64) -> i8 {
    v.signum_or_zero() as i8
}

fn term_branches(inp: &TermInputs, mask: &[bool], out: &mut BranchPattern) {
    let (w, h) = (inp.target_cam.width, inp.target_cam.height);
    let (sw, sh) = (inp.source_cam.width, inp.source_cam.height);
    let ch = inp.target.channels();
    let (src, tgt) = (inp.source.data(), inp.target.data());
    for v in 0..h {
        for u in 0..w {
            let k = v * w + u;
            if !mask[k] {
                continue;
            }
            let p = inp.target_cam.ray(u as f64, v as f64) * inp.log_depth[k].exp();
            let q = inp.motion.apply(&p);
            let x = inp.source_cam.fx * q.x / q.z + inp.source_cam.cx;
            let y = inp.source_cam.fy * q.y / q.z + inp.source_cam.cy;
            let (x0, fx) = bilinear_cell(x, sw);
            let (y0, fy) = bilinear_cell(y, sh);
            out.cells.push([x0, y0]);
            let i00 = (y0 * sw + x0) * ch;
            let i01 = i00 + sw * ch;
            for c in 0..ch {
                let top = (1.0 - fx) * src[i00 + c] + fx * src[i00 + ch + c];
                let bot = (1.0 - fx) * src[i01 + c] + fx * src[i01 + ch + c];
                out.signs
                    .push(l1_sign((1.0 - fy) * top + fy * bot - tgt[k * ch + c]) as i8);
            }
        }
    }
}

/// Gradient of a scalar with respect to the rotation matrix, pulled back onto
/// Euler parameters.
fn rotation_grad_to_euler(euler: &EulerAngles, g: &Matrix3<f64>) -> [f64; 3] {
    let partials = euler.rotation_partials();
    [
        g.component_mul(&partials[0]).sum(),
        g.component_mul(&partials[1]).sum(),
        g.component_mul(&partials[2]).sum(),
    ]
}

/// A fixed sample, weighting and term schedule.
pub struct Problem<'a> {
    pub sample: &'a MultiCamSample,
    pub weights: LossWeights,
    pub toggles: TermToggles,
    pub terms: Vec<Term>,
    edges: Vec<EdgeWeights>,
}

impl<'a> Problem<'a> {
    pub fn new(sample: &'a MultiCamSample, weights: &LossWeights, toggles: &TermToggles) -> Result<Self> {
        sample.validate()?;
        weights.validate()?;
        let n = sample.len();
        let mut terms = Vec::new();
        for i in 0..n {
            for (slot, frame) in CONTEXTS.iter().enumerate() {
                terms.push(Term {
                    kind: TermKind::Temporal,
                    target: i,
                    source: i,
                    frame: *frame,
                    context: Some(slot),
                });
            }
            for j in sample.rig.neighbors(i) {
                if toggles.use_spatial {
                    terms.push(Term {
                        kind: TermKind::Spatial,
                        target: i,
                        source: j,
                        frame: Frame::Current,
                        context: None,
                    });
                }
                if toggles.use_spatiotemporal {
                    for (slot, frame) in CONTEXTS.iter().enumerate() {
                        terms.push(Term {
                            kind: TermKind::SpatioTemporal,
                            target: i,
                            source: j,
                            frame: *frame,
                            context: Some(slot),
                        });
                    }
                }
            }
        }
        let edges = sample
            .cameras
            .iter()
            .map(|c| EdgeWeights::new(c.image(Frame::Current)))
            .collect();
        Ok(Self {
            sample,
            weights: *weights,
            toggles: *toggles,
            terms,
            edges,
        })
    }

    fn check_inputs(&self, depths: &[DepthField], poses: &[CameraPoses]) -> Result<()> {
        let n = self.sample.len();
        if depths.len() != n || poses.len() != n {
            return Err(Error::Config(format!(
                "expected {n} depth fields and pose pairs, got {} and {}",
                depths.len(),
                poses.len()
            )));
        }
        for (cam, d) in self.sample.rig.cameras.iter().zip(depths) {
            if d.dims() != (cam.width, cam.height) {
                return Err(Error::dims(
                    format!("depth of camera {}", cam.name),
                    (cam.width, cam.height),
                    d.dims(),
                ));
            }
        }
        Ok(())
    }

    fn inputs<'b>(&'b self, term: &Term, depths: &'b [DepthField], rigid: &[[RigidTransform; 2]]) -> TermInputs<'b> {
        let rig = &self.sample.rig;
        let target_cam = &rig.cameras[term.target];
        let source_cam = &rig.cameras[term.source];
        let (motion, lead) = match term.kind {
            TermKind::Temporal => (rigid[term.target][term.context.unwrap()], Matrix3::identity()),
            TermKind::Spatial => (target_cam.relative_to(source_cam), Matrix3::identity()),
            TermKind::SpatioTemporal => {
                let rel = target_cam.relative_to(source_cam);
                (rel.compose(&rigid[term.target][term.context.unwrap()]), rel.rotation)
            }
        };
        TermInputs {
            log_depth: depths[term.target].log_depth(),
            target_cam,
            source_cam,
            motion,
            lead_rotation: lead,
            target: self.sample.cameras[term.target].image(Frame::Current),
            source: self.sample.cameras[term.source].image(term.frame),
            alpha: self.weights.alpha,
        }
    }

    fn rigid_poses(poses: &[CameraPoses]) -> Vec<[RigidTransform; 2]> {
        poses.iter().map(|p| [p[0].to_rigid(), p[1].to_rigid()]).collect()
    }

    /// Masks of every term at the current point.
    pub fn compute_masks(&self, depths: &[DepthField], poses: &[CameraPoses]) -> Result<MaskSet> {
        self.check_inputs(depths, poses)?;
        let rigid = Self::rigid_poses(poses);
        let use_so = self.toggles.use_self_occ_masks;
        let masks = self
            .terms
            .par_iter()
            .map(|term| {
                let inp = self.inputs(term, depths, &rigid);
                let t_so = use_so.then(|| self.sample.cameras[term.target].self_occlusion.bits());
                let s_so = use_so.then(|| self.sample.cameras[term.source].self_occlusion.bits());
                term_mask(&inp, t_so, s_so)
            })
            .collect();
        Ok(MaskSet { masks })
    }

    /// Masked photometric value and surviving pixel count of every term, in
    /// schedule order.
    pub fn term_values(
        &self,
        depths: &[DepthField],
        poses: &[CameraPoses],
        masks: &MaskSet,
    ) -> Result<Vec<(f64, usize)>> {
        self.check_inputs(depths, poses)?;
        let rigid = Self::rigid_poses(poses);
        Ok(self
            .terms
            .par_iter()
            .zip(masks.masks.par_iter())
            .map(|(term, mask)| {
                let out = eval_term(&self.inputs(term, depths, &rigid), mask, false);
                (out.value, out.count)
            })
            .collect())
    }

    /// Which linear piece every non-smooth operation sits on at this point:
    /// the bilinear cell of each masked sample, the sign of each L1
    /// residual and the sign of each smoothness difference. Two points with
    /// equal patterns lie on one smooth piece of the loss.
    pub fn branch_pattern(
        &self,
        depths: &[DepthField],
        poses: &[CameraPoses],
        masks: &MaskSet,
    ) -> Result<BranchPattern> {
        self.check_inputs(depths, poses)?;
        let rigid = Self::rigid_poses(poses);
        let mut out = BranchPattern::default();
        for (term, mask) in self.terms.iter().zip(&masks.masks) {
            term_branches(&self.inputs(term, depths, &rigid), mask, &mut out);
        }
        if self.weights.lambda_d > 0.0 {
            for (i, depth) in depths.iter().enumerate() {
                let (w, h) = (self.edges[i].width, self.edges[i].height);
                let l = depth.log_depth();
                for y in 0..h {
                    for x in 0..w {
                        let k = y * w + x;
                        if x + 1 < w {
                            out.signs.push(sign(l[k + 1] - l[k]));
                        }
                        if y + 1 < h {
                            out.signs.push(sign(l[k + w] - l[k]));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Loss breakdown and, optionally, the full gradient under fixed masks.
    pub fn evaluate(
        &self,
        depths: &[DepthField],
        poses: &[CameraPoses],
        masks: &MaskSet,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<GradientBundle>)> {
        self.check_inputs(depths, poses)?;
        if masks.masks.len() != self.terms.len() {
            return Err(Error::Config("mask set does not match the term schedule".into()));
        }
        let rigid = Self::rigid_poses(poses);
        let outputs: Vec<TermOutput> = self
            .terms
            .par_iter()
            .zip(masks.masks.par_iter())
            .map(|(term, mask)| eval_term(&self.inputs(term, depths, &rigid), mask, want_grad))
            .collect();

        let n_cams = self.sample.len();
        let w = &self.weights;
        let mut bd = LossBreakdown::default();
        let temporal_terms = self.terms.iter().filter(|t| t.is_temporal()).count();
        let spatial_terms = self.terms.len() - temporal_terms;
        bd.temporal_terms = temporal_terms;
        bd.spatial_terms = spatial_terms;
        let mut camera_pixels = vec![0usize; n_cams];
        for (term, out) in self.terms.iter().zip(&outputs) {
            camera_pixels[term.target] += out.count;
            if term.is_temporal() {
                bd.photometric_temporal += out.value;
                bd.temporal_valid_pixels += out.count;
            } else {
                bd.photometric_spatial += out.value;
                bd.spatial_valid_pixels += out.count;
            }
        }
        if temporal_terms > 0 {
            bd.photometric_temporal /= temporal_terms as f64;
        }
        if spatial_terms > 0 {
            bd.photometric_spatial /= spatial_terms as f64;
        }
        bd.cameras_without_valid_pixels = (0..n_cams).filter(|i| camera_pixels[*i] == 0).collect();

        let mut grad = want_grad.then(|| GradientBundle::zeros(self.sample));
        let smooth_scale = w.lambda_d / n_cams as f64;
        for (i, depth) in depths.iter().enumerate() {
            let g = grad.as_mut().map(|g| (g.d_log_depth[i].as_mut_slice(), smooth_scale));
            bd.smoothness += smoothness(depth.log_depth(), &self.edges[i], g);
        }
        bd.smoothness /= n_cams as f64;

        if self.toggles.use_pcc && n_cams >= 2 {
            let pcc = self.pose_consistency(poses, &rigid, grad.as_mut());
            bd.pcc_translation = pcc.0;
            bd.pcc_rotation = pcc.1;
            bd.gimbal_lock_warning = pcc.2;
        }
        bd.combine(w);

        if let Some(g) = grad.as_mut() {
            let t_scale = if temporal_terms > 0 {
                w.lambda_t / temporal_terms as f64
            } else {
                0.0
            };
            let s_scale = if spatial_terms > 0 {
                w.lambda_s / spatial_terms as f64
            } else {
                0.0
            };
            let mut rot_grads = vec![[Matrix3::zeros(); 2]; n_cams];
            let mut trans_grads = vec![[Vector3::zeros(); 2]; n_cams];
            for (term, out) in self.terms.iter().zip(&outputs) {
                let scale = if term.is_temporal() { t_scale } else { s_scale };
                if scale == 0.0 {
                    continue;
                }
                if let Some(d) = &out.d_log_depth {
                    for (acc, v) in g.d_log_depth[term.target].iter_mut().zip(d) {
                        *acc += scale * v;
                    }
                }
                if let Some(slot) = term.context {
                    rot_grads[term.target][slot] += out.d_rotation * scale;
                    trans_grads[term.target][slot] += out.d_translation * scale;
                }
            }
            for i in 0..n_cams {
                for slot in 0..2 {
                    let e = poses[i][slot].euler;
                    let ge = rotation_grad_to_euler(&e, &rot_grads[i][slot]);
                    let d = &mut g.d_pose[i][slot];
                    for a in 0..3 {
                        d[a] += trans_grads[i][slot][a];
                        d[3 + a] += ge[a];
                    }
                }
            }
            g.loss_value = bd.total;
            g.breakdown = bd.clone();
        }
        Ok((bd, grad))
    }

    /// Translation and rotation consistency summed over both contexts, with
    /// gradients added into `grad`.
    fn pose_consistency(
        &self,
        poses: &[CameraPoses],
        rigid: &[[RigidTransform; 2]],
        mut grad: Option<&mut GradientBundle>,
    ) -> (f64, f64, bool) {
        let w = &self.weights;
        let rig = &self.sample.rig;
        let x0 = &rig.cameras[0].extrinsics;
        let mut t_loss = 0.0;
        let mut r_loss = 0.0;
        let mut gimbal = false;
        for slot in 0..2 {
            let front = &rigid[0][slot];
            let fe = EulerAngles::from_rotation(&front.rotation);
            gimbal |= fe.near_gimbal_lock;
            let fa = fe.angles.to_array();
            let mut g_front_t = Vector3::zeros();
            let mut g_front_angles = [0.0; 3];
            for j in 1..rig.len() {
                let xj = &rig.cameras[j].extrinsics;
                let pose = &rigid[j][slot];
                let canon = to_canonical(pose, xj, x0);
                let dt = front.translation - canon.translation;
                t_loss += dt.norm_squared();
                let ce = EulerAngles::from_rotation(&canon.rotation);
                gimbal |= ce.near_gimbal_lock;
                let ca = ce.angles.to_array();
                let da = [fa[0] - ca[0], fa[1] - ca[1], fa[2] - ca[2]];
                r_loss += da.iter().map(|v| v * v).sum::<f64>();

                if let Some(g) = grad.as_deref_mut() {
                    g_front_t += dt * (2.0 * w.alpha_t);
                    for a in 0..3 {
                        g_front_angles[a] += 2.0 * w.alpha_r * da[a];
                    }
                    // canon = C pose C^-1 with C = X_0^-1 X_j = (A, b):
                    // t~ = -A R c + A t + b, R~ = A R A^T, c = A^T b.
                    let c_tf = x0.inverse().compose(xj);
                    let a_mat = c_tf.rotation;
                    let c_vec = a_mat.transpose() * c_tf.translation;
                    let g_tc = -dt * (2.0 * w.alpha_t);
                    let g_t = a_mat.transpose() * g_tc;
                    let mut g_r = -(a_mat.transpose() * g_tc) * c_vec.transpose();
                    let up = [
                        -2.0 * w.alpha_r * da[0],
                        -2.0 * w.alpha_r * da[1],
                        -2.0 * w.alpha_r * da[2],
                    ];
                    let g_rc = EulerAngles::from_rotation_vjp(&canon.rotation, up);
                    g_r += a_mat.transpose() * g_rc * a_mat;
                    let ge = rotation_grad_to_euler(&poses[j][slot].euler, &g_r);
                    let d = &mut g.d_pose[j][slot];
                    for a in 0..3 {
                        d[a] += g_t[a];
                        d[3 + a] += ge[a];
                    }
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let g_r = EulerAngles::from_rotation_vjp(&front.rotation, g_front_angles);
                let ge = rotation_grad_to_euler(&poses[0][slot].euler, &g_r);
                let d = &mut g.d_pose[0][slot];
                for a in 0..3 {
                    d[a] += g_front_t[a];
                    d[3 + a] += ge[a];
                }
            }
        }
        (t_loss, r_loss, gimbal)
    }
}

/// Identity poses for every camera and context.
pub fn identity_poses(n: usize) -> Vec<CameraPoses> {
    vec![[PoseParams::default(); 2]; n]
}

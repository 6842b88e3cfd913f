//! Procedural multi-camera scenes: rig layout, textured Lambertian geometry,
//! a per-pixel raycaster, ego-body masks and the standard sample.

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_y, CameraModel, Rig, RigidTransform};
use crate::grid::{BinaryMask, ImagePlane};
use crate::sample::{CameraFrames, Frame, MultiCamSample, Trajectory};

/// Z-depth assigned to rays that hit nothing.
pub const FAR_PLANE: f64 = 1000.0;

const SKY_INTENSITY: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSpec {
    /// Heading of each camera in radians, positive toward +x (right).
    pub yaws: Vec<f64>,
    /// Distance of every camera from the vehicle center, meters.
    pub radial_offset: f64,
    pub width: usize,
    pub height: usize,
    /// One entry shared by all cameras, or one per camera.
    pub intrinsics: Vec<Intrinsics>,
    #[serde(default)]
    pub names: Vec<String>,
}

fn heading(yaw: f64) -> Vector3<f64> {
    Vector3::new(yaw.sin(), 0.0, yaw.cos())
}

/// Cameras on a horizontal circle facing outward. The rig frame is attached
/// to camera 0, whose extrinsics are the identity.
pub fn build_rig(spec: &RigSpec) -> Result<Rig> {
    let n = spec.yaws.len();
    if n == 0 {
        return Err(Error::Config("rig.yaws: need at least one camera".into()));
    }
    for a in 0..n {
        for b in a + 1..n {
            let d = (spec.yaws[a] - spec.yaws[b]).rem_euclid(std::f64::consts::TAU);
            if d < 1e-9 || std::f64::consts::TAU - d < 1e-9 {
                return Err(Error::Config(format!(
                    "rig.yaws: cameras {a} and {b} share a placement"
                )));
            }
        }
    }
    if spec.intrinsics.len() != 1 && spec.intrinsics.len() != n {
        return Err(Error::Config(format!(
            "rig.intrinsics: expected 1 or {n} entries, found {}",
            spec.intrinsics.len()
        )));
    }
    if !spec.names.is_empty() && spec.names.len() != n {
        return Err(Error::Config(format!(
            "rig.names: expected {n} entries, found {}",
            spec.names.len()
        )));
    }
    if !(spec.radial_offset >= 0.0) {
        return Err(Error::Config("rig.radial_offset: must be non-negative".into()));
    }
    let y0 = spec.yaws[0];
    let origin = heading(y0) * spec.radial_offset;
    let cameras = (0..n)
        .map(|i| {
            let k = spec.intrinsics[if spec.intrinsics.len() == 1 { 0 } else { i }];
            let rel = spec.yaws[i] - y0;
            let extrinsics = if i == 0 {
                RigidTransform::identity()
            } else {
                // Positions relative to camera 0, expressed in its frame.
                let p = rot_y(-y0) * (heading(spec.yaws[i]) * spec.radial_offset - origin);
                RigidTransform::new(rot_y(rel), p)?
            };
            let name = spec.names.get(i).cloned().unwrap_or_else(|| format!("cam{i}"));
            CameraModel::new(name, k.fx, k.fy, k.cx, k.cy, spec.width, spec.height, extrinsics)
        })
        .collect::<Result<Vec<_>>>()?;
    Rig::new(cameras)
}

/// Fraction of camera `i`'s pixels whose ray, at z-depth `range` (or at
/// infinity when `range` is infinite), falls inside camera `j`'s image.
pub fn frustum_overlap(rig: &Rig, i: usize, j: usize, range: f64) -> f64 {
    let a = &rig.cameras[i];
    let b = &rig.cameras[j];
    let rel = rig.relative_extrinsics(i, j);
    let mut hits = 0usize;
    for v in 0..a.height {
        for u in 0..a.width {
            let ray = a.ray(u as f64, v as f64);
            let q = if range.is_finite() {
                rel.apply(&(ray * range))
            } else {
                rel.rotation * ray
            };
            if q.z <= 0.0 {
                continue;
            }
            let x = b.fx * q.x / q.z + b.cx;
            let y = b.fy * q.y / q.z + b.cy;
            if (0.0..=(b.width - 1) as f64).contains(&x) && (0.0..=(b.height - 1) as f64).contains(&y) {
                hits += 1;
            }
        }
    }
    hits as f64 / (a.width * a.height) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub target: usize,
    pub source: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Spatial overlap of every camera with each of its neighbors.
    pub spatial: Vec<PairOverlap>,
    /// Per camera, mean temporal overlap over both contexts.
    pub temporal: Vec<f64>,
}

/// Overlap fractions measured by warping ground-truth depth with ground-truth
/// motion.
pub fn overlap_report(sample: &MultiCamSample) -> Result<OverlapReport> {
    use crate::grid::DepthField;
    use crate::sample::CONTEXTS;
    use crate::warping::{warp_spatial, warp_temporal};
    let depth = |i: usize| -> Result<DepthField> {
        let cam = &sample.rig.cameras[i];
        let d: Vec<f64> = sample.cameras[i]
            .gt_depth
            .iter()
            .map(|&d| if d > 0.0 { d } else { FAR_PLANE })
            .collect();
        DepthField::from_depth(cam.width, cam.height, &d)
    };
    let mut spatial = Vec::new();
    let mut temporal = Vec::new();
    for i in 0..sample.len() {
        let d = depth(i)?;
        let cam = &sample.rig.cameras[i];
        for j in sample.rig.neighbors(i) {
            let w = warp_spatial(&d, cam, &sample.rig.cameras[j])?;
            spatial.push(PairOverlap {
                target: i,
                source: j,
                fraction: w.valid_fraction(),
            });
        }
        let mut t = 0.0;
        for f in CONTEXTS {
            t += warp_temporal(&d, &sample.gt_camera_motion(i, f), cam)?.valid_fraction();
        }
        temporal.push(t / CONTEXTS.len() as f64);
    }
    Ok(OverlapReport { spatial, temporal })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub seed: u64,
    /// Linear RGB albedo before modulation.
    pub color: [f64; 3],
    /// Modulation depth of the noise, in `[0, 1]`.
    pub contrast: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    /// World y of the plane (y points down).
    pub height: f64,
    pub texture: TextureSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Render the inside faces instead of the outside ones (a room).
    #[serde(default)]
    pub interior: bool,
    pub texture: TextureSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureFloor {
    pub min_variance: f64,
    /// Largest tolerated fraction of 3x3 windows below `min_variance`.
    pub max_flat_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    /// Noise lattice spacings in meters, coarse to fine.
    pub noise_cells: Vec<f64>,
    /// Direction the light travels, world frame.
    pub light: [f64; 3],
    pub ambient: f64,
    /// Rig-to-world pose at `t-1`, `t`, `t+1`.
    pub trajectory: [[[f64; 4]; 4]; 3],
    #[serde(default)]
    pub texture_floor: Option<TextureFloor>,
}

impl SceneSpec {
    pub fn trajectory(&self) -> Result<Trajectory> {
        let parse = |m: &[[f64; 4]; 4]| {
            RigidTransform::from_matrix4(&Matrix4::from_fn(|r, k| m[r][k]))
                .map_err(|e| Error::Config(format!("scene.trajectory: {e}")))
        };
        Ok(Trajectory {
            rig_to_world: [
                parse(&self.trajectory[0])?,
                parse(&self.trajectory[1])?,
                parse(&self.trajectory[2])?,
            ],
        })
    }
}

fn matrix_rows(t: &RigidTransform) -> [[f64; 4]; 4] {
    let m = t.to_matrix4();
    std::array::from_fn(|r| std::array::from_fn(|k| m[(r, k)]))
}

/// Rig-to-world poses for constant forward speed and yaw rate, with `t` at the
/// world origin.
pub fn constant_velocity(forward: f64, yaw: f64) -> [[[f64; 4]; 4]; 3] {
    let step = RigidTransform {
        rotation: rot_y(yaw),
        translation: Vector3::new(0.0, 0.0, forward),
    };
    [
        matrix_rows(&step.inverse()),
        matrix_rows(&RigidTransform::identity()),
        matrix_rows(&step),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoBodySpec {
    /// Trapezoid height as a fraction of image height.
    pub fraction: f64,
    /// Top edge width relative to the bottom edge, in `[0, 1]`.
    pub top_ratio: f64,
    pub intensity: f64,
}

impl EgoBodySpec {
    /// Area of the trapezoid relative to its bounding rectangle.
    pub fn shape_factor(&self) -> f64 {
        0.5 * (1.0 + self.top_ratio)
    }
}

/// Bottom-edge trapezoid of `floor(fraction * H * W * shape_factor)` zero
/// pixels, filled bottom-up with centered rows.
pub fn self_occlusion_mask(spec: &EgoBodySpec, width: usize, height: usize) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&spec.fraction) || !(0.0..=1.0).contains(&spec.top_ratio) {
        return Err(Error::Config(
            "ego_body: fraction and top_ratio must lie in [0, 1]".into(),
        ));
    }
    let w = width as f64;
    let rows = spec.fraction * height as f64;
    // Area of the trapezoid below height y, measured up from the bottom edge.
    let area = |y: f64| {
        if rows <= 0.0 {
            return 0.0;
        }
        let y = y.min(rows);
        w * y - w * (1.0 - spec.top_ratio) / rows * y * y * 0.5
    };
    let mut bits = vec![true; width * height];
    for k in 0..height {
        let span = (area(k as f64 + 1.0).floor() - area(k as f64).floor()) as usize;
        let span = span.min(width);
        if span == 0 {
            continue;
        }
        let y = height - 1 - k;
        let start = (width - span) / 2;
        for x in start..start + span {
            bits[y * width + x] = false;
        }
    }
    BinaryMask::new(width, height, bits)
}

/// Self-occlusion mask from a user PNG, checked against the camera.
pub fn load_self_occlusion(path: &std::path::Path, cam: &CameraModel) -> Result<BinaryMask> {
    let m = crate::io::read_mask_png(path)?;
    if m.dims() != (cam.width, cam.height) {
        return Err(Error::dims(
            format!("self-occlusion mask for camera {}", cam.name),
            (cam.width, cam.height),
            m.dims(),
        ));
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub rig: RigSpec,
    pub scene: SceneSpec,
    #[serde(default)]
    pub ego_body: Option<EgoBodySpec>,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    /// Subsamples per pixel along each axis.
    pub supersample: usize,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn hash(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut z = seed
        .wrapping_add((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(u: f64, v: f64, cell: f64, seed: u64) -> f64 {
    let (x, y) = (u / cell, v / cell);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash(ix, iy, seed);
    let b = hash(ix + 1, iy, seed);
    let c = hash(ix, iy + 1, seed);
    let d = hash(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Multi-octave noise in `[0, 1]`, amplitudes halving per octave.
fn fractal_noise(u: f64, v: f64, cells: &[f64], seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    for (k, &cell) in cells.iter().enumerate() {
        sum += amp * value_noise(u, v, cell, seed.wrapping_add(k as u64 * 7919));
        norm += amp;
        amp *= 0.6;
    }
    if norm > 0.0 {
        sum / norm
    } else {
        0.5
    }
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    texture: TextureSpec,
    /// In-surface coordinates for the texture lookup.
    uv: (f64, f64),
}

fn face_uv(p: &Vector3<f64>, axis: usize) -> (f64, f64) {
    match axis {
        0 => (p.z, p.y),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    }
}

fn intersect_box(b: &BoxSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    let mut far_axis = 0;
    let mut near_sign = 0.0;
    let mut far_sign = 0.0;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let t1 = (b.min[a] - o[a]) / d[a];
        let t2 = (b.max[a] - o[a]) / d[a];
        let (lo, hi, lo_sign, hi_sign) = if t1 < t2 {
            (t1, t2, -1.0, 1.0)
        } else {
            (t2, t1, 1.0, -1.0)
        };
        if lo > t_near {
            t_near = lo;
            near_axis = a;
            near_sign = lo_sign;
        }
        if hi < t_far {
            t_far = hi;
            far_axis = a;
            far_sign = hi_sign;
        }
    }
    if t_near > t_far {
        return None;
    }
    if b.interior {
        // Exit face, normal pointing back into the room.
        (t_far > 0.0).then_some((t_far, far_axis, -far_sign))
    } else {
        (t_near > 0.0).then_some((t_near, near_axis, near_sign))
    }
}

fn trace(scene: &SceneSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if let Some(g) = &scene.ground {
        if d.y.abs() > 1e-15 {
            let t = (g.height - o.y) / d.y;
            if t > 0.0 {
                let p = o + d * t;
                best = Some(Hit {
                    t,
                    // Facing the viewer.
                    normal: Vector3::new(0.0, if o.y < g.height { -1.0 } else { 1.0 }, 0.0),
                    texture: g.texture,
                    uv: (p.x, p.z),
                });
            }
        }
    }
    for b in &scene.boxes {
        if let Some((t, axis, sign)) = intersect_box(b, o, d) {
            if best.as_ref().is_none_or(|h| t < h.t) {
                let p = o + d * t;
                let mut normal = Vector3::zeros();
                normal[axis] = sign;
                best = Some(Hit {
                    t,
                    normal,
                    texture: b.texture,
                    uv: face_uv(&p, axis),
                });
            }
        }
    }
    best
}

fn shade(scene: &SceneSpec, hit: &Hit, channels: usize) -> [f64; 3] {
    let l = Vector3::from(scene.light).normalize();
    let lambert = (-l).dot(&hit.normal).max(0.0);
    let light = scene.ambient + (1.0 - scene.ambient) * lambert;
    let tex = &hit.texture;
    let n = fractal_noise(hit.uv.0, hit.uv.1, &scene.noise_cells, tex.seed);
    let m = 1.0 - tex.contrast + 2.0 * tex.contrast * n;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (tex.color[c] * m * light).clamp(0.0, 1.0);
    }
    if channels == 1 {
        let g = (out[0] + out[1] + out[2]) / 3.0;
        out = [g; 3];
    }
    out
}

/// One camera's rendering at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: ImagePlane,
    /// Z-depth of the center ray; [`FAR_PLANE`] where nothing is hit.
    pub depth: Vec<f64>,
    pub hit: Vec<bool>,
}

/// Raycasts `cam` posed at `cam_to_world`. Pixels outside `body` (unset bits)
/// show the ego body instead of the scene and get no depth.
pub fn render_view(
    scene: &SceneSpec,
    cam: &CameraModel,
    cam_to_world: &RigidTransform,
    channels: usize,
    supersample: usize,
    body: Option<(&BinaryMask, f64)>,
) -> Result<RenderedView> {
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    if supersample == 0 {
        return Err(Error::Config("supersample must be at least 1".into()));
    }
    let (w, h) = (cam.width, cam.height);
    let o = cam_to_world.translation;
    let r = cam_to_world.rotation;
    let ss = supersample as f64;
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut img = vec![0.0; w * channels];
            let mut depth = vec![FAR_PLANE; w];
            let mut hit = vec![false; w];
            for x in 0..w {
                if let Some((mask, intensity)) = body {
                    if !mask.get(x, y) {
                        // Static pattern attached to the camera.
                        let v = intensity * (0.8 + 0.4 * hash(x as i64 / 3, y as i64 / 3, 17));
                        for c in 0..channels {
                            img[x * channels + c] = v.clamp(0.0, 1.0);
                        }
                        depth[x] = 0.0;
                        continue;
                    }
                }
                let center = r * cam.ray(x as f64, y as f64);
                if let Some(hc) = trace(scene, &o, &center) {
                    depth[x] = hc.t;
                    hit[x] = true;
                }
                let mut acc = [0.0; 3];
                for sy in 0..supersample {
                    for sx in 0..supersample {
                        let u = x as f64 + (sx as f64 + 0.5) / ss - 0.5;
                        let v = y as f64 + (sy as f64 + 0.5) / ss - 0.5;
                        let d = r * cam.ray(u, v);
                        let c = match trace(scene, &o, &d) {
                            Some(hit) => shade(scene, &hit, channels),
                            None => [SKY_INTENSITY; 3],
                        };
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                let inv = 1.0 / (ss * ss);
                for c in 0..channels {
                    img[x * channels + c] = acc[c] * inv;
                }
            }
            (img, depth, hit)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * channels);
    let mut depth = Vec::with_capacity(w * h);
    let mut hit = Vec::with_capacity(w * h);
    for (i, d, m) in rows {
        data.extend(i);
        depth.extend(d);
        hit.extend(m);
    }
    let mut image = ImagePlane::new(w, h, channels, data)?;
    image.quantize_u8();
    Ok(RenderedView { image, depth, hit })
}

/// Fraction of interior 3x3 windows whose intensity variance is below
/// `min_variance`.
pub fn flat_window_fraction(image: &ImagePlane, min_variance: f64) -> f64 {
    let (w, h) = image.dims();
    if w < 3 || h < 3 {
        return 1.0;
    }
    let lum = image.luminance();
    let mut flat = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    let v = lum[(y + dy - 1) * w + x + dx - 1];
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / 9.0;
            if s2 / 9.0 - mean * mean < min_variance {
                flat += 1;
            }
        }
    }
    flat as f64 / ((w - 2) * (h - 2)) as f64
}

/// Renders every camera at `t-1`, `t`, `t+1`.
pub fn render_sample(spec: &SynthSpec) -> Result<MultiCamSample> {
    let rig = build_rig(&spec.rig)?;
    let trajectory = spec.scene.trajectory()?;
    let mut cameras = Vec::with_capacity(rig.len());
    for cam in &rig.cameras {
        let self_occlusion = match &spec.ego_body {
            Some(b) => self_occlusion_mask(b, cam.width, cam.height)?,
            None => BinaryMask::ones(cam.width, cam.height),
        };
        let body = spec.ego_body.map(|b| (&self_occlusion, b.intensity));
        let mut images = Vec::with_capacity(3);
        let mut gt_depth = Vec::new();
        for frame in Frame::ALL {
            let pose = trajectory.rig_to_world[frame.index()].compose(&cam.extrinsics);
            let view = render_view(&spec.scene, cam, &pose, spec.channels, spec.supersample, body)?;
            if frame == Frame::Current {
                if let Some(floor) = &spec.scene.texture_floor {
                    let flat = flat_window_fraction(&view.image, floor.min_variance);
                    if flat > floor.max_flat_fraction {
                        return Err(Error::Config(format!(
                            "camera {}: {:.1}% of windows are textureless (limit {:.1}%)",
                            cam.name,
                            100.0 * flat,
                            100.0 * floor.max_flat_fraction
                        )));
                    }
                }
                gt_depth = view
                    .depth
                    .iter()
                    .zip(&view.hit)
                    .map(|(&d, &h)| if h { d } else { 0.0 })
                    .collect();
            }
            images.push(view.image);
        }
        let images: [ImagePlane; 3] = images.try_into().expect("three frames");
        cameras.push(CameraFrames {
            images,
            gt_depth,
            self_occlusion,
        });
    }
    let sample = MultiCamSample {
        rig,
        cameras,
        trajectory,
    };
    sample.validate()?;
    Ok(sample)
}

/// Names in front, front-left, front-right, back-left, back-right, back order.
pub const SURROUND_NAMES: [&str; 6] = ["Front", "F.Left", "F.Right", "B.Left", "B.Right", "Back"];

fn tex(seed: u64, color: [f64; 3]) -> TextureSpec {
    TextureSpec {
        seed,
        color,
        contrast: 0.45,
    }
}

const VEHICLE_CENTER_Z: f64 = -0.8;

/// Box resting on the standard ground plane along the heading `yaw_deg` from
/// the vehicle center.
fn axis_box(yaw_deg: f64, distance: f64, size: f64, tall: f64, texture: TextureSpec) -> BoxSpec {
    let c = heading(yaw_deg.to_radians()) * distance + Vector3::new(0.0, 0.0, VEHICLE_CENTER_Z);
    let h = size / 2.0;
    BoxSpec {
        min: [c.x - h, 1.5 - tall, c.z - h],
        max: [c.x + h, 1.5, c.z + h],
        interior: false,
        texture,
    }
}

/// Six outward cameras at 60 degree spacing, 96x64, roughly 90 degree HFOV,
/// driving forward through a textured room with a few boxes and an ego-body
/// occluder at the bottom of every view.
pub fn standard_spec() -> SynthSpec {
    let deg = std::f64::consts::PI / 180.0;
    let yaws = [0.0, -60.0, 60.0, -120.0, 120.0, 180.0]
        .iter()
        .map(|d| d * deg)
        .collect();
    SynthSpec {
        rig: RigSpec {
            yaws,
            radial_offset: -VEHICLE_CENTER_Z,
            width: 96,
            height: 64,
            intrinsics: vec![Intrinsics {
                fx: 48.0,
                fy: 48.0,
                cx: 47.5,
                cy: 31.5,
            }],
            names: SURROUND_NAMES.iter().map(|s| s.to_string()).collect(),
        },
        scene: SceneSpec {
            ground: Some(GroundSpec {
                height: 1.5,
                texture: tex(11, [0.75, 0.7, 0.6]),
            }),
            boxes: vec![
                BoxSpec {
                    min: [-7.0, -6.0, -8.5],
                    max: [7.0, 1.5, 10.0],
                    interior: true,
                    texture: tex(23, [0.8, 0.8, 0.85]),
                },
                // One box on the axis of most cameras, clear of the regions
                // neighbors share.
                axis_box(0.0, 5.5, 1.4, 2.0, tex(37, [0.9, 0.6, 0.5])),
                axis_box(-60.0, 4.8, 1.3, 2.5, tex(41, [0.5, 0.8, 0.6])),
                axis_box(60.0, 4.2, 1.2, 1.5, tex(43, [0.6, 0.6, 0.9])),
                axis_box(120.0, 5.2, 1.2, 2.2, tex(47, [0.85, 0.85, 0.5])),
                axis_box(180.0, 5.0, 1.2, 2.0, tex(53, [0.7, 0.5, 0.8])),
            ],
            noise_cells: vec![1.5, 0.75, 0.375],
            light: [0.4, 1.0, 0.6],
            ambient: 0.45,
            trajectory: constant_velocity(0.3, 2.0 * deg),
            texture_floor: Some(TextureFloor {
                min_variance: 1e-5,
                max_flat_fraction: 0.2,
            }),
        },
        ego_body: Some(EgoBodySpec {
            fraction: 0.15,
            top_ratio: 0.5,
            intensity: 0.25,
        }),
        channels: 1,
        supersample: 3,
    }
}

pub fn standard_sample() -> Result<MultiCamSample> {
    render_sample(&standard_spec())
}

/// The standard scene seen by the first `cameras` cameras of the standard
/// rig at a reduced resolution, with a 90° horizontal field of view and no
/// texture floor.
pub fn compact_spec(cameras: usize, width: usize, height: usize) -> Result<SynthSpec> {
    let mut spec = standard_spec();
    if cameras == 0 || cameras > spec.rig.yaws.len() {
        return Err(Error::Config(format!(
            "cameras must lie in 1..={}, got {cameras}",
            spec.rig.yaws.len()
        )));
    }
    if width < 2 || height < 2 {
        return Err(Error::Config(format!(
            "image must be at least 2x2, got {width}x{height}"
        )));
    }
    spec.rig.yaws.truncate(cameras);
    spec.rig.names.truncate(cameras);
    spec.rig.width = width;
    spec.rig.height = height;
    let f = width as f64 / 2.0;
    spec.rig.intrinsics = vec![Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    }];
    spec.scene.texture_floor = None;
    Ok(spec)
}

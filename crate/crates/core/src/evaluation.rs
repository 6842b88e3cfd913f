//! Depth metrics under three scaling protocols, and point-cloud assembly.

use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rig;
use crate::grid::{BinaryMask, DepthField, ImagePlane};
use crate::sample::MultiCamSample;

/// Default evaluation range cap in meters.
pub const DEFAULT_CAP: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub delta_125: f64,
    pub count: usize,
}

fn check_dims(context: &str, pred: &DepthField, gt: &[f64], valid: &BinaryMask) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::dims(
            format!("{context}: ground truth"),
            pred.dims(),
            (gt.len(), 1),
        ));
    }
    if valid.dims() != pred.dims() {
        return Err(Error::dims(format!("{context}: mask"), pred.dims(), valid.dims()));
    }
    Ok(())
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap > 0.0) {
        return Err(Error::Domain(format!("range cap must be positive, got {cap}")));
    }
    Ok(())
}

/// Pixel indices with ground truth in `(0, cap]` and the mask set.
fn eval_pixels<'a>(gt: &'a [f64], valid: &'a BinaryMask, cap: f64) -> impl Iterator<Item = usize> + 'a {
    (0..gt.len()).filter(move |&k| valid.bits()[k] && gt[k] > 0.0 && gt[k] <= cap)
}

/// Metrics over pixels with `0 < gt <= cap` inside `valid`. `None` when no
/// pixel qualifies.
pub fn compute_metrics(pred: &DepthField, gt: &[f64], valid: &BinaryMask, cap: f64) -> Result<Option<DepthMetrics>> {
    check_dims("metrics", pred, gt, valid)?;
    check_cap(cap)?;
    let lp = pred.log_depth();
    let (mut abs_rel, mut sq_rel, mut sq, mut inliers) = (0.0, 0.0, 0.0, 0usize);
    let mut n = 0usize;
    for k in eval_pixels(gt, valid, cap) {
        let d = lp[k].exp();
        let g = gt[k];
        let e = d - g;
        abs_rel += e.abs() / g;
        sq_rel += e * e / g;
        sq += e * e;
        if (d / g).max(g / d) < 1.25 {
            inliers += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Ok(None);
    }
    let nf = n as f64;
    Ok(Some(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        delta_125: inliers as f64 / nf,
        count: n,
    }))
}

/// Lower middle element for even counts.
fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

fn median_ratio(gt: &mut [f64], pred: &mut [f64]) -> Result<f64> {
    let mg = lower_median(gt).ok_or_else(|| Error::Empty("no valid pixels for median scaling".into()))?;
    let mp = lower_median(pred).ok_or_else(|| Error::Empty("no valid pixels for median scaling".into()))?;
    if !(mp > 0.0) {
        return Err(Error::Domain("median of predicted depth is zero".into()));
    }
    Ok(mg / mp)
}

/// `median(gt) / median(pred)` over valid pixels, and the rescaled prediction.
pub fn per_frame_median_scale(
    pred: &DepthField,
    gt: &[f64],
    valid: &BinaryMask,
    cap: f64,
) -> Result<(DepthField, f64)> {
    check_dims("median scaling", pred, gt, valid)?;
    check_cap(cap)?;
    let idx: Vec<usize> = eval_pixels(gt, valid, cap).collect();
    let mut g: Vec<f64> = idx.iter().map(|&k| gt[k]).collect();
    let mut p: Vec<f64> = idx.iter().map(|&k| pred.log_depth()[k].exp()).collect();
    let f = median_ratio(&mut g, &mut p)?;
    Ok((pred.scaled(f), f))
}

/// One factor for all cameras from medians of the pooled valid pixels.
pub fn shared_median_scale(
    preds: &[DepthField],
    gts: &[&[f64]],
    valids: &[BinaryMask],
    cap: f64,
) -> Result<(Vec<DepthField>, f64)> {
    if preds.len() != gts.len() || preds.len() != valids.len() {
        return Err(Error::Config(
            "shared scaling needs one ground truth and mask per prediction".into(),
        ));
    }
    check_cap(cap)?;
    let mut g = Vec::new();
    let mut p = Vec::new();
    for (i, ((pred, gt), valid)) in preds.iter().zip(gts).zip(valids).enumerate() {
        check_dims(&format!("shared scaling, camera {i}"), pred, gt, valid)?;
        for k in eval_pixels(gt, valid, cap) {
            g.push(gt[k]);
            p.push(pred.log_depth()[k].exp());
        }
    }
    let f = median_ratio(&mut g, &mut p)?;
    Ok((preds.iter().map(|d| d.scaled(f)).collect(), f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    None,
    PerFrame,
    Shared,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::None, Protocol::PerFrame, Protocol::Shared];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::None => "none",
            Protocol::PerFrame => "per-frame",
            Protocol::Shared => "shared",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRow {
    pub camera: String,
    /// Scale applied to this camera's prediction.
    pub scale: f64,
    pub metrics: Option<DepthMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub rows: Vec<CameraRow>,
    /// Mean over cameras with metrics.
    pub average: Option<DepthMetrics>,
}

/// Evaluates per-camera predictions against per-camera ground truth.
pub fn evaluate(
    names: &[String],
    preds: &[DepthField],
    gts: &[&[f64]],
    valids: &[BinaryMask],
    protocol: Protocol,
    cap: f64,
) -> Result<EvalReport> {
    let n = preds.len();
    if names.len() != n || gts.len() != n || valids.len() != n {
        return Err(Error::Config("evaluation inputs disagree on camera count".into()));
    }
    let (scaled, scales): (Vec<DepthField>, Vec<f64>) = match protocol {
        Protocol::None => (preds.to_vec(), vec![1.0; n]),
        Protocol::PerFrame => {
            let mut out = Vec::with_capacity(n);
            let mut f = Vec::with_capacity(n);
            for i in 0..n {
                check_dims(&format!("camera {}", names[i]), &preds[i], gts[i], &valids[i])?;
                match per_frame_median_scale(&preds[i], gts[i], &valids[i], cap) {
                    Ok((d, s)) => {
                        out.push(d);
                        f.push(s);
                    }
                    Err(Error::Empty(_)) => {
                        out.push(preds[i].clone());
                        f.push(1.0);
                    }
                    Err(e) => return Err(e),
                }
            }
            (out, f)
        }
        Protocol::Shared => {
            let (d, g) = shared_median_scale(preds, gts, valids, cap)?;
            (d, vec![g; n])
        }
    };
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        check_dims(&format!("camera {}", names[i]), &scaled[i], gts[i], &valids[i])?;
        rows.push(CameraRow {
            camera: names[i].clone(),
            scale: scales[i],
            metrics: compute_metrics(&scaled[i], gts[i], &valids[i], cap)?,
        });
    }
    let present: Vec<&DepthMetrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let average = (!present.is_empty()).then(|| {
        let m = present.len() as f64;
        DepthMetrics {
            abs_rel: present.iter().map(|r| r.abs_rel).sum::<f64>() / m,
            sq_rel: present.iter().map(|r| r.sq_rel).sum::<f64>() / m,
            rmse: present.iter().map(|r| r.rmse).sum::<f64>() / m,
            delta_125: present.iter().map(|r| r.delta_125).sum::<f64>() / m,
            count: present.iter().map(|r| r.count).sum(),
        }
    });
    Ok(EvalReport {
        protocol,
        rows,
        average,
    })
}

/// Evaluates predictions for every camera of a sample; ground-truth validity
/// excludes the ego body.
pub fn evaluate_sample(
    sample: &MultiCamSample,
    preds: &[DepthField],
    protocol: Protocol,
    cap: f64,
) -> Result<EvalReport> {
    let names: Vec<String> = sample.rig.cameras.iter().map(|c| c.name.clone()).collect();
    let gts: Vec<&[f64]> = sample.cameras.iter().map(|c| c.gt_depth.as_slice()).collect();
    let valids: Vec<BinaryMask> = (0..sample.len()).map(|i| sample.gt_valid_mask(i, cap)).collect();
    evaluate(&names, preds, &gts, &valids, protocol, cap)
}

/// Points in the rig frame with 8-bit colors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts every masked pixel of every camera into the rig frame.
pub fn assemble_pointcloud(
    depths: &[DepthField],
    images: &[&ImagePlane],
    masks: &[BinaryMask],
    rig: &Rig,
) -> Result<PointCloud> {
    let n = rig.len();
    if depths.len() != n || images.len() != n || masks.len() != n {
        return Err(Error::Config("point cloud inputs disagree on camera count".into()));
    }
    let mut cloud = PointCloud::default();
    for (i, cam) in rig.cameras.iter().enumerate() {
        let dims = (cam.width, cam.height);
        for (what, got) in [
            ("depth", depths[i].dims()),
            ("image", images[i].dims()),
            ("mask", masks[i].dims()),
        ] {
            if got != dims {
                return Err(Error::dims(format!("{what} of camera {}", cam.name), dims, got));
            }
        }
        let img = images[i];
        let ch = img.channels();
        for v in 0..cam.height {
            for u in 0..cam.width {
                if !masks[i].get(u, v) {
                    continue;
                }
                let p = cam.unproject(Vector2::new(u as f64, v as f64), depths[i].depth_at(u, v))?;
                cloud.points.push(cam.extrinsics.apply(&p));
                let c = |k: usize| (img.get(u, v, k.min(ch - 1)).clamp(0.0, 1.0) * 255.0).round() as u8;
                cloud.colors.push([c(0), c(1), c(2)]);
            }
        }
    }
    Ok(cloud)
}

/// Binary little-endian PLY with float xyz and uchar rgb.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + cloud.len() * 15);
    write!(
        buf,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .expect("writing to memory");
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        for v in p.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(c);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

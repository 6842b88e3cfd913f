//! Multi-camera samples: three consecutive frames per camera plus ground
//! truth, and their on-disk layout.
//!
//! ```text
//! <dir>/rig.json
//! <dir>/trajectory.json
//! <dir>/cam{i}/{t-1,t,t+1}.png
//! <dir>/cam{i}/gt_depth.pfm
//! <dir>/cam{i}/self_occ.png
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::differentiation::PoseParams;
use crate::error::{Error, Result};
use crate::geometry::{Rig, RigidTransform};
use crate::grid::{BinaryMask, DepthField, ImagePlane};
use crate::io;
use crate::losses::CameraPoses;

/// Frame slots of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    Previous,
    Current,
    Next,
}

impl Frame {
    pub const ALL: [Frame; 3] = [Frame::Previous, Frame::Current, Frame::Next];

    pub fn index(self) -> usize {
        match self {
            Frame::Previous => 0,
            Frame::Current => 1,
            Frame::Next => 2,
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Frame::Previous => "t-1",
            Frame::Current => "t",
            Frame::Next => "t+1",
        }
    }
}

/// Temporal contexts of the target frame, in pose-slot order.
pub const CONTEXTS: [Frame; 2] = [Frame::Previous, Frame::Next];

/// Rig-to-world poses at `t-1`, `t`, `t+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub rig_to_world: [RigidTransform; 3],
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    frames: Vec<String>,
    rig_to_world: Vec<[[f64; 4]; 4]>,
}

impl Trajectory {
    /// Rig motion taking rig coordinates at `t` to rig coordinates at `frame`.
    pub fn rig_motion(&self, frame: Frame) -> RigidTransform {
        self.rig_to_world[frame.index()]
            .inverse()
            .compose(&self.rig_to_world[Frame::Current.index()])
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = |t: &RigidTransform| {
            let m = t.to_matrix4();
            let mut out = [[0.0; 4]; 4];
            for (r, row) in out.iter_mut().enumerate() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = m[(r, k)];
                }
            }
            out
        };
        let rec = TrajectoryRecord {
            frames: Frame::ALL.iter().map(|f| f.file_stem().to_owned()).collect(),
            rig_to_world: self.rig_to_world.iter().map(rows).collect(),
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: TrajectoryRecord = serde_json::from_str(text)?;
        if rec.rig_to_world.len() != 3 {
            return Err(Error::Config(format!(
                "trajectory needs 3 poses, found {}",
                rec.rig_to_world.len()
            )));
        }
        let parse = |m: &[[f64; 4]; 4]| RigidTransform::from_matrix4(&Matrix4::from_fn(|r, k| m[r][k]));
        Ok(Self {
            rig_to_world: [
                parse(&rec.rig_to_world[0])?,
                parse(&rec.rig_to_world[1])?,
                parse(&rec.rig_to_world[2])?,
            ],
        })
    }
}

/// Everything recorded for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrames {
    /// Images at `t-1`, `t`, `t+1`.
    pub images: [ImagePlane; 3],
    /// Metric z-depth at `t`; zero marks pixels without ground truth.
    pub gt_depth: Vec<f64>,
    /// Unset where the ego-vehicle body covers the image.
    pub self_occlusion: BinaryMask,
}

impl CameraFrames {
    pub fn image(&self, frame: Frame) -> &ImagePlane {
        &self.images[frame.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiCamSample {
    pub rig: Rig,
    pub cameras: Vec<CameraFrames>,
    pub trajectory: Trajectory,
}

impl MultiCamSample {
    pub fn validate(&self) -> Result<()> {
        if self.rig.len() != self.cameras.len() {
            return Err(Error::Config(format!(
                "rig has {} cameras but sample has {}",
                self.rig.len(),
                self.cameras.len()
            )));
        }
        let channels = self.cameras[0].images[0].channels();
        for (cam, frames) in self.rig.cameras.iter().zip(&self.cameras) {
            let dims = (cam.width, cam.height);
            for img in &frames.images {
                if img.dims() != dims {
                    return Err(Error::dims(format!("image of camera {}", cam.name), dims, img.dims()));
                }
                if img.channels() != channels {
                    return Err(Error::Config(format!("camera {}: mixed channel counts", cam.name)));
                }
            }
            if frames.self_occlusion.dims() != dims {
                return Err(Error::dims(
                    format!("self-occlusion mask of camera {}", cam.name),
                    dims,
                    frames.self_occlusion.dims(),
                ));
            }
            if frames.gt_depth.len() != cam.width * cam.height {
                return Err(Error::dims(
                    format!("ground-truth depth of camera {}", cam.name),
                    dims,
                    (frames.gt_depth.len(), 1),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// True per-camera motion `X_i^-1 M X_i` from `t` to `frame`.
    pub fn gt_camera_motion(&self, camera: usize, frame: Frame) -> RigidTransform {
        let x = &self.rig.cameras[camera].extrinsics;
        x.inverse().compose(&self.trajectory.rig_motion(frame)).compose(x)
    }

    /// Pixels with usable ground truth: positive depth not beyond `cap`, and
    /// outside the ego body.
    pub fn gt_valid_mask(&self, camera: usize, cap: f64) -> BinaryMask {
        let cam = &self.rig.cameras[camera];
        let f = &self.cameras[camera];
        let bits = f
            .gt_depth
            .iter()
            .zip(f.self_occlusion.bits())
            .map(|(d, so)| *d > 0.0 && *d <= cap && *so)
            .collect();
        BinaryMask::new(cam.width, cam.height, bits).expect("validated dims")
    }

    /// Ground-truth depth fields, with `fill` wherever ground truth is missing.
    pub fn gt_depth_fields(&self, fill: f64) -> Result<Vec<DepthField>> {
        self.rig
            .cameras
            .iter()
            .zip(&self.cameras)
            .map(|(cam, f)| {
                let d: Vec<f64> = f.gt_depth.iter().map(|&d| if d > 0.0 { d } else { fill }).collect();
                DepthField::from_depth(cam.width, cam.height, &d)
            })
            .collect()
    }

    /// Ground-truth per-camera motions in pose-slot order.
    pub fn gt_poses(&self) -> Vec<CameraPoses> {
        (0..self.len())
            .map(|i| CONTEXTS.map(|f| PoseParams::from_rigid(&self.gt_camera_motion(i, f))))
            .collect()
    }

    /// Half-resolution copy: 2x2 box-filtered images, intrinsics rescaled about
    /// pixel centers, a pixel occluded if any of its four parents is, and
    /// ground truth kept only where all four parents have it (their mean).
    pub fn downsample(&self) -> Result<MultiCamSample> {
        let mut cams = Vec::with_capacity(self.len());
        let mut frames = Vec::with_capacity(self.len());
        for (cam, f) in self.rig.cameras.iter().zip(&self.cameras) {
            let (w, h) = (cam.width / 2, cam.height / 2);
            if w == 0 || h == 0 {
                return Err(Error::Config(format!("camera {} is too small to downsample", cam.name)));
            }
            let mut c = cam.clone();
            c.width = w;
            c.height = h;
            c.fx = cam.fx / 2.0;
            c.fy = cam.fy / 2.0;
            c.cx = ((cam.cx + 0.5) / 2.0 - 0.5).clamp(0.0, w as f64 - 1.0);
            c.cy = ((cam.cy + 0.5) / 2.0 - 0.5).clamp(0.0, h as f64 - 1.0);
            c.validate()?;
            let parents = |x: usize, y: usize| {
                [
                    (2 * x, 2 * y),
                    (2 * x + 1, 2 * y),
                    (2 * x, 2 * y + 1),
                    (2 * x + 1, 2 * y + 1),
                ]
            };
            let images = f.images.each_ref().map(|img| {
                ImagePlane::from_fn(w, h, img.channels(), |x, y, ch| {
                    parents(x, y).iter().map(|&(px, py)| img.get(px, py, ch)).sum::<f64>() / 4.0
                })
            });
            let self_occlusion = BinaryMask::from_fn(w, h, |x, y| {
                parents(x, y).iter().all(|&(px, py)| f.self_occlusion.get(px, py))
            });
            let gt_depth = (0..w * h)
                .map(|k| {
                    let vals = parents(k % w, k / w).map(|(px, py)| f.gt_depth[py * cam.width + px]);
                    if vals.iter().all(|&d| d > 0.0) {
                        vals.iter().sum::<f64>() / 4.0
                    } else {
                        0.0
                    }
                })
                .collect();
            cams.push(c);
            frames.push(CameraFrames {
                images,
                gt_depth,
                self_occlusion,
            });
        }
        Ok(MultiCamSample {
            rig: Rig::new(cams)?,
            cameras: frames,
            trajectory: self.trajectory.clone(),
        })
    }

    pub fn camera_dir(root: &Path, camera: usize) -> PathBuf {
        root.join(format!("cam{camera}"))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_json(&dir.join("rig.json"), &self.rig.to_json()?)?;
        io::write_json(&dir.join("trajectory.json"), &self.trajectory.to_json()?)?;
        for (i, (cam, frames)) in self.rig.cameras.iter().zip(&self.cameras).enumerate() {
            let cdir = Self::camera_dir(dir, i);
            std::fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
            for frame in Frame::ALL {
                io::write_image_png(&cdir.join(format!("{}.png", frame.file_stem())), frames.image(frame))?;
            }
            io::write_depth_values_pfm(&cdir.join("gt_depth.pfm"), cam.width, cam.height, &frames.gt_depth)?;
            io::write_mask_png(&cdir.join("self_occ.png"), &frames.self_occlusion)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rig = Rig::from_json(&io::read_text(&dir.join("rig.json"))?)?;
        let trajectory = Trajectory::from_json(&io::read_text(&dir.join("trajectory.json"))?)?;
        let mut cameras = Vec::with_capacity(rig.len());
        for (i, cam) in rig.cameras.iter().enumerate() {
            let cdir = Self::camera_dir(dir, i);
            let read = |f: Frame| io::read_image_png(&cdir.join(format!("{}.png", f.file_stem())));
            let images = [read(Frame::Previous)?, read(Frame::Current)?, read(Frame::Next)?];
            let gt_path = cdir.join("gt_depth.pfm");
            let (w, h, gt_depth) = io::read_depth_values_pfm(&gt_path)?;
            if (w, h) != (cam.width, cam.height) {
                return Err(Error::dims(
                    format!("ground truth of camera {}", cam.name),
                    (cam.width, cam.height),
                    (w, h),
                ));
            }
            let self_occlusion = io::read_mask_png(&cdir.join("self_occ.png"))?;
            cameras.push(CameraFrames {
                images,
                gt_depth,
                self_occlusion,
            });
        }
        let sample = Self {
            rig,
            cameras,
            trajectory,
        };
        sample.validate()?;
        Ok(sample)
    }
}

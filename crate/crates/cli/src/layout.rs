//! Locating depth maps in the directory layouts the commands produce.

use std::path::{Path, PathBuf};

use rigdepth::io::read_depth_values_pfm;
use rigdepth::{BinaryMask, DepthField, Error, Rig};

use crate::error::{CliError, CliResult};

/// Depth file of camera `i`: `<dir>/depth/cam{i}.pfm` as written by
/// `optimize`, `<dir>/cam{i}.pfm`, or `<dir>/cam{i}/gt_depth.pfm` of a sample.
pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    let candidates = [
        dir.join("depth").join(format!("cam{i}.pfm")),
        dir.join(format!("cam{i}.pfm")),
        dir.join(format!("cam{i}")).join("gt_depth.pfm"),
    ];
    candidates
        .iter()
        .find(|p| p.exists())
        .cloned()
        .unwrap_or_else(|| candidates[0].clone())
}

/// Depth maps for every camera of `rig`, with a mask of usable pixels
/// (positive and finite). Unusable pixels hold a placeholder of 1 m.
pub fn load_depths(dir: &Path, rig: &Rig) -> CliResult<(Vec<DepthField>, Vec<BinaryMask>)> {
    let mut depths = Vec::with_capacity(rig.len());
    let mut masks = Vec::with_capacity(rig.len());
    for (i, cam) in rig.cameras.iter().enumerate() {
        let path = depth_path(dir, i);
        let (w, h, values) = read_depth_values_pfm(&path)?;
        if (w, h) != (cam.width, cam.height) {
            return Err(Error::Dimension {
                context: format!("depth of camera {} ({})", cam.name, path.display()),
                expected_w: cam.width,
                expected_h: cam.height,
                got_w: w,
                got_h: h,
            }
            .into());
        }
        let ok: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let filled: Vec<f64> = values
            .iter()
            .zip(&ok)
            .map(|(v, ok)| if *ok { *v } else { 1.0 })
            .collect();
        depths.push(DepthField::from_depth(w, h, &filled)?);
        masks.push(BinaryMask::new(w, h, ok)?);
    }
    Ok((depths, masks))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

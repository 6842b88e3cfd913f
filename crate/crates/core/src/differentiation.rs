//! Exact gradients of the objective with respect to per-pixel log-depth and
//! per-camera 6-dof poses, plus a central-difference checker.
//!
//! Masks (warp validity, non-overlap and self-occlusion) are constants within
//! one evaluation. At exact bilinear cell boundaries the derivative of the
//! left/lower cell is used; `|x|` and the SSIM-free L1 term use a zero
//! subgradient at zero.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{EulerAngles, RigidTransform};
use crate::grid::DepthField;
use crate::losses::{CameraPoses, LossBreakdown, LossWeights, TermToggles};
use crate::objective::{BranchPattern, MaskSet, Problem};
use crate::sample::MultiCamSample;

/// Translation in meters and Z-Y-X Euler angles in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub translation: Vector3<f64>,
    pub euler: EulerAngles,
}

impl PoseParams {
    pub fn to_rigid(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.euler.to_rotation(),
            translation: self.translation,
        }
    }

    pub fn from_rigid(t: &RigidTransform) -> Self {
        Self {
            translation: t.translation,
            euler: EulerAngles::from_rotation(&t.rotation).angles,
        }
    }

    /// `[tx, ty, tz, phi, theta, psi]`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.euler.phi,
            self.euler.theta,
            self.euler.psi,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            translation: Vector3::new(a[0], a[1], a[2]),
            euler: EulerAngles::new(a[3], a[4], a[5]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    /// Per camera, per pixel.
    pub d_log_depth: Vec<Vec<f64>>,
    /// Per camera, per context slot, in [`PoseParams::to_array`] order.
    pub d_pose: Vec<[[f64; 6]; 2]>,
    pub loss_value: f64,
    pub breakdown: LossBreakdown,
}

impl GradientBundle {
    pub(crate) fn zeros(sample: &MultiCamSample) -> Self {
        Self {
            d_log_depth: sample
                .rig
                .cameras
                .iter()
                .map(|c| vec![0.0; c.width * c.height])
                .collect(),
            d_pose: vec![[[0.0; 6]; 2]; sample.len()],
            loss_value: 0.0,
            breakdown: LossBreakdown::default(),
        }
    }

    /// Name of the first family holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, d) in self.d_log_depth.iter().enumerate() {
            if let Some(k) = d.iter().position(|v| !v.is_finite()) {
                return Some(format!("d_log_depth[camera {i}][pixel {k}]"));
            }
        }
        for (i, p) in self.d_pose.iter().enumerate() {
            for (slot, v) in p.iter().enumerate() {
                if v.iter().any(|x| !x.is_finite()) {
                    return Some(format!("d_pose[camera {i}][context {slot}]"));
                }
            }
        }
        None
    }

    pub fn max_abs(&self) -> f64 {
        let d = self.d_log_depth.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let p = self
            .d_pose
            .iter()
            .flat_map(|p| p.iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        d.max(p)
    }
}

/// Gradient at a point, with masks computed at that point.
pub fn gradients(
    sample: &MultiCamSample,
    depths: &[DepthField],
    poses: &[CameraPoses],
    weights: &LossWeights,
    toggles: &TermToggles,
) -> Result<GradientBundle> {
    let problem = Problem::new(sample, weights, toggles)?;
    let masks = problem.compute_masks(depths, poses)?;
    let (_, g) = problem.evaluate(depths, poses, &masks, true)?;
    Ok(g.expect("gradient requested"))
}

/// A scalar coordinate of the optimization vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordinate {
    LogDepth {
        camera: usize,
        pixel: usize,
    },
    Pose {
        camera: usize,
        context: usize,
        index: usize,
    },
}

impl std::fmt::Display for Coordinate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coordinate::LogDepth { camera, pixel } => write!(f, "log_depth[cam {camera}][px {pixel}]"),
            Coordinate::Pose { camera, context, index } => {
                const NAMES: [&str; 6] = ["tx", "ty", "tz", "phi", "theta", "psi"];
                write!(f, "pose[cam {camera}][ctx {context}].{}", NAMES[*index])
            }
        }
    }
}

impl GradientBundle {
    pub fn at(&self, c: Coordinate) -> f64 {
        match c {
            Coordinate::LogDepth { camera, pixel } => self.d_log_depth[camera][pixel],
            Coordinate::Pose { camera, context, index } => self.d_pose[camera][context][index],
        }
    }
}

fn perturbed(
    depths: &[DepthField],
    poses: &[CameraPoses],
    c: Coordinate,
    delta: f64,
) -> (Vec<DepthField>, Vec<CameraPoses>) {
    let mut d = depths.to_vec();
    let mut p = poses.to_vec();
    match c {
        Coordinate::LogDepth { camera, pixel } => d[camera].log_depth_mut()[pixel] += delta,
        Coordinate::Pose { camera, context, index } => {
            let mut a = p[camera][context].to_array();
            a[index] += delta;
            p[camera][context] = PoseParams::from_array(a);
        }
    }
    (d, p)
}

/// Central difference of the loss along one coordinate with frozen masks.
pub fn central_difference(
    problem: &Problem,
    depths: &[DepthField],
    poses: &[CameraPoses],
    masks: &MaskSet,
    c: Coordinate,
    step: f64,
) -> Result<f64> {
    let (dp, pp) = perturbed(depths, poses, c, step);
    let (dm, pm) = perturbed(depths, poses, c, -step);
    let fp = problem.evaluate(&dp, &pp, masks, false)?.0.total;
    let fm = problem.evaluate(&dm, &pm, masks, false)?.0.total;
    Ok((fp - fm) / (2.0 * step))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub coordinate: Coordinate,
    /// Finite-difference step actually used.
    pub step: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
    /// Coordinates dropped because no step inside the halving budget kept
    /// the perturbation on one smooth piece.
    pub skipped: Vec<Coordinate>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSettings {
    /// Coordinates to check; skipped ones are replaced by fresh draws.
    pub coordinates: usize,
    pub depth_step: f64,
    pub pose_step: f64,
    /// How often a step may be halved to keep `x - h` and `x + h` on the
    /// same smooth piece as `x`.
    pub max_halvings: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            coordinates: 50,
            depth_step: 1e-4,
            pose_step: 1e-5,
            max_halvings: 12,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            seed: 0,
        }
    }
}

fn draw_coordinate(rng: &mut ChaCha8Rng, depths: &[DepthField], pose: bool) -> Coordinate {
    let n_cams = depths.len();
    if pose {
        let k = rng.random_range(0..n_cams * 12);
        Coordinate::Pose {
            camera: k / 12,
            context: (k / 6) % 2,
            index: k % 6,
        }
    } else {
        let camera = rng.random_range(0..n_cams);
        let pixel = rng.random_range(0..depths[camera].len());
        Coordinate::LogDepth { camera, pixel }
    }
}

/// Frozen state shared by every coordinate of one check.
struct Checker<'a> {
    problem: Problem<'a>,
    depths: &'a [DepthField],
    poses: &'a [CameraPoses],
    masks: MaskSet,
    grad: GradientBundle,
    base: BranchPattern,
}

impl<'a> Checker<'a> {
    fn new(
        sample: &'a MultiCamSample,
        depths: &'a [DepthField],
        poses: &'a [CameraPoses],
        weights: &LossWeights,
        toggles: &TermToggles,
    ) -> Result<Self> {
        let problem = Problem::new(sample, weights, toggles)?;
        let masks = problem.compute_masks(depths, poses)?;
        let grad = problem
            .evaluate(depths, poses, &masks, true)?
            .1
            .expect("gradient requested");
        let base = problem.branch_pattern(depths, poses, &masks)?;
        Ok(Self {
            problem,
            depths,
            poses,
            masks,
            grad,
            base,
        })
    }

    fn on_piece(&self, c: Coordinate, delta: f64) -> Result<bool> {
        let (d, p) = perturbed(self.depths, self.poses, c, delta);
        Ok(self.base.same_piece(&self.problem.branch_pattern(&d, &p, &self.masks)?))
    }

    /// `None` when no step inside the halving budget stays on one piece.
    fn check(&self, c: Coordinate, settings: &GradCheckSettings) -> Result<Option<CoordinateCheck>> {
        let mut step = match c {
            Coordinate::LogDepth { .. } => settings.depth_step,
            Coordinate::Pose { .. } => settings.pose_step,
        };
        let mut halvings = 0;
        while !(self.on_piece(c, step)? && self.on_piece(c, -step)?) {
            if halvings == settings.max_halvings {
                return Ok(None);
            }
            step *= 0.5;
            halvings += 1;
        }
        let numeric = central_difference(&self.problem, self.depths, self.poses, &self.masks, c, step)?;
        let analytic = self.grad.at(c);
        let abs_error = (analytic - numeric).abs();
        let rel_error = abs_error / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        Ok(Some(CoordinateCheck {
            coordinate: c,
            step,
            analytic,
            numeric,
            abs_error,
            rel_error,
            passed: rel_error <= settings.rel_tol || abs_error <= settings.abs_tol,
        }))
    }
}

fn report(checks: Vec<CoordinateCheck>, skipped: Vec<Coordinate>) -> GradCheckReport {
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let max_abs_error = checks.iter().map(|c| c.abs_error).fold(0.0, f64::max);
    GradCheckReport {
        checks,
        skipped,
        max_rel_error,
        max_abs_error,
    }
}

/// Compares analytic and central-difference derivatives on randomly chosen
/// coordinates, alternating pose and depth. Masks are frozen at the base
/// point. A step is halved while `x - h` or `x + h` crosses a bilinear cell
/// boundary or an absolute-value kink, since the difference quotient is
/// then not a derivative of either piece.
pub fn grad_check(
    sample: &MultiCamSample,
    depths: &[DepthField],
    poses: &[CameraPoses],
    weights: &LossWeights,
    toggles: &TermToggles,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    let checker = Checker::new(sample, depths, poses, weights, toggles)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut checks = Vec::with_capacity(settings.coordinates);
    let mut skipped = Vec::new();
    let max_draws = settings.coordinates * 4;
    let mut draws = 0;
    while checks.len() < settings.coordinates && draws < max_draws {
        let c = draw_coordinate(&mut rng, depths, draws % 2 == 0);
        draws += 1;
        match checker.check(c, settings)? {
            Some(check) => checks.push(check),
            None => skipped.push(c),
        }
    }
    Ok(report(checks, skipped))
}

/// [`grad_check`] on an explicit list of coordinates.
pub fn check_coordinates(
    sample: &MultiCamSample,
    depths: &[DepthField],
    poses: &[CameraPoses],
    weights: &LossWeights,
    toggles: &TermToggles,
    coordinates: &[Coordinate],
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    let checker = Checker::new(sample, depths, poses, weights, toggles)?;
    let mut checks = Vec::with_capacity(coordinates.len());
    let mut skipped = Vec::new();
    for &c in coordinates {
        match checker.check(c, settings)? {
            Some(check) => checks.push(check),
            None => skipped.push(c),
        }
    }
    Ok(report(checks, skipped))
}

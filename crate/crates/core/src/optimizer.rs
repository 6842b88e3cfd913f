//! Direct Adam minimization over per-pixel log-depth and per-camera poses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::differentiation::{GradientBundle, PoseParams};
use crate::error::{Error, Result};
use crate::grid::DepthField;
use crate::losses::{CameraPoses, LossBreakdown, LossWeights, TermToggles};
use crate::objective::{identity_poses, Problem};
use crate::sample::MultiCamSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    /// One bias-corrected update at 1-based step `t`.
    pub fn update(&self, lr: f64, t: usize, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub steps: usize,
    /// Step size for log-depth.
    pub learning_rate: f64,
    /// Step size for pose parameters.
    pub pose_learning_rate: f64,
    pub adam: AdamParams,
    /// `[d_min, d_max]` in meters.
    pub depth_bounds: [f64; 2],
    pub seed: u64,
    /// Standard deviation of the initial log-depth jitter.
    pub init_jitter: f64,
    /// Standard deviation of noise added to the initial pose parameters.
    pub init_pose_noise: f64,
    /// Resolution levels, each half the previous; 1 optimizes at full
    /// resolution only.
    pub pyramid_levels: usize,
    /// Steps spent on each level coarser than the finest.
    pub coarse_steps: usize,
    pub toggles: TermToggles,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            learning_rate: 0.05,
            pose_learning_rate: 0.002,
            adam: AdamParams::default(),
            depth_bounds: [0.5, 200.0],
            seed: 0,
            init_jitter: 0.05,
            init_pose_noise: 0.0,
            pyramid_levels: 3,
            coarse_steps: 300,
            toggles: TermToggles::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let [lo, hi] = self.depth_bounds;
        let checks = [
            ((0.0..1.0).contains(&a.beta1), "adam.beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&a.beta2), "adam.beta2 must lie in [0, 1)"),
            (a.epsilon > 0.0, "adam.epsilon must be positive"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            (self.pose_learning_rate > 0.0, "pose_learning_rate must be positive"),
            (lo > 0.0 && lo < hi, "depth_bounds must satisfy 0 < d_min < d_max"),
            (self.init_jitter >= 0.0, "init_jitter must be non-negative"),
            (self.init_pose_noise >= 0.0, "init_pose_noise must be non-negative"),
            (self.pyramid_levels >= 1, "pyramid_levels must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}

/// Smoothness weight used for direct optimization. Per-pixel depths have no
/// network prior, so the training default of 0.001 leaves textureless pixels
/// nearly unconstrained.
pub const RUN_LAMBDA_D: f64 = 0.03;

/// Default loss weights with [`RUN_LAMBDA_D`].
pub fn run_weights() -> LossWeights {
    LossWeights {
        lambda_d: RUN_LAMBDA_D,
        ..LossWeights::default()
    }
}

/// Named ablations of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Every term on.
    Fsm,
    /// Temporal terms only: no spatial or spatio-temporal terms, no pose
    /// consistency.
    Mono,
    /// Spatial terms kept, spatio-temporal terms off.
    FsmNoStc,
    FsmNoPcc,
    FsmNoMask,
    MonoNoMask,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fsm,
        Preset::Mono,
        Preset::FsmNoStc,
        Preset::FsmNoPcc,
        Preset::FsmNoMask,
        Preset::MonoNoMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fsm => "fsm",
            Preset::Mono => "mono",
            Preset::FsmNoStc => "fsm-no-stc",
            Preset::FsmNoPcc => "fsm-no-pcc",
            Preset::FsmNoMask => "fsm-no-mask",
            Preset::MonoNoMask => "mono-no-mask",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn toggles(self) -> TermToggles {
        let all = TermToggles::default();
        match self {
            Preset::Fsm => all,
            Preset::Mono => TermToggles {
                use_spatial: false,
                use_spatiotemporal: false,
                use_pcc: false,
                ..all
            },
            Preset::FsmNoStc => TermToggles {
                use_spatiotemporal: false,
                ..all
            },
            Preset::FsmNoPcc => TermToggles { use_pcc: false, ..all },
            Preset::FsmNoMask => TermToggles {
                use_self_occ_masks: false,
                ..all
            },
            Preset::MonoNoMask => TermToggles {
                use_self_occ_masks: false,
                ..Preset::Mono.toggles()
            },
        }
    }

    /// Loss weights for the preset; the monocular presets zero the spatial
    /// weight.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        match self {
            Preset::Mono | Preset::MonoNoMask => LossWeights { lambda_s: 0.0, ..*base },
            _ => *base,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub depths: Vec<DepthField>,
    pub poses: Vec<CameraPoses>,
    m_depth: Vec<Vec<f64>>,
    v_depth: Vec<Vec<f64>>,
    m_pose: Vec<[f64; 12]>,
    v_pose: Vec<[f64; 12]>,
    pub step: usize,
    pub history: Vec<LossBreakdown>,
}

impl OptimState {
    /// Starts from explicit depths and poses with zero moments.
    pub fn from_parts(depths: Vec<DepthField>, poses: Vec<CameraPoses>) -> Self {
        let n = depths.len();
        Self {
            m_depth: depths.iter().map(|d| vec![0.0; d.len()]).collect(),
            v_depth: depths.iter().map(|d| vec![0.0; d.len()]).collect(),
            m_pose: vec![[0.0; 12]; n],
            v_pose: vec![[0.0; 12]; n],
            depths,
            poses,
            step: 0,
            history: Vec::new(),
        }
    }
}

fn pose_vector(p: &CameraPoses) -> [f64; 12] {
    let a = p[0].to_array();
    let b = p[1].to_array();
    std::array::from_fn(|k| if k < 6 { a[k] } else { b[k - 6] })
}

fn pose_from_vector(v: &[f64; 12]) -> CameraPoses {
    [
        PoseParams::from_array(std::array::from_fn(|k| v[k])),
        PoseParams::from_array(std::array::from_fn(|k| v[6 + k])),
    ]
}

/// Log-depth at the geometric mean of the bounds plus seeded Gaussian jitter;
/// identity poses, optionally perturbed.
pub fn init_state(sample: &MultiCamSample, config: &OptimConfig) -> Result<OptimState> {
    sample.validate()?;
    config.validate()?;
    let [lo, hi] = config.depth_bounds;
    let mid = 0.5 * (lo.ln() + hi.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = Normal::new(0.0, config.init_jitter).map_err(|e| Error::Config(e.to_string()))?;
    let depths = sample
        .rig
        .cameras
        .iter()
        .map(|c| {
            let n = c.width * c.height;
            let log = (0..n)
                .map(|_| {
                    let j = if config.init_jitter > 0.0 {
                        jitter.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (mid + j).clamp(lo.ln(), hi.ln())
                })
                .collect();
            DepthField::from_log_depth(c.width, c.height, log)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut poses = identity_poses(sample.len());
    if config.init_pose_noise > 0.0 {
        let noise = Normal::new(0.0, config.init_pose_noise).map_err(|e| Error::Config(e.to_string()))?;
        for p in &mut poses {
            let mut v = pose_vector(p);
            for x in &mut v {
                *x += noise.sample(&mut rng);
            }
            *p = pose_from_vector(&v);
        }
    }
    Ok(OptimState::from_parts(depths, poses))
}

/// A prepared problem plus the settings of one run.
pub struct Optimizer<'a> {
    problem: Problem<'a>,
    config: OptimConfig,
}

impl<'a> Optimizer<'a> {
    pub fn new(sample: &'a MultiCamSample, weights: &LossWeights, config: &OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            problem: Problem::new(sample, weights, &config.toggles)?,
            config: config.clone(),
        })
    }

    pub fn problem(&self) -> &Problem<'a> {
        &self.problem
    }

    /// Loss and gradient at the current state with freshly computed masks.
    pub fn gradient(&self, state: &OptimState) -> Result<GradientBundle> {
        let masks = self.problem.compute_masks(&state.depths, &state.poses)?;
        let (_, g) = self.problem.evaluate(&state.depths, &state.poses, &masks, true)?;
        Ok(g.expect("gradient requested"))
    }

    /// One Adam update. Fails without touching the state when the loss or the
    /// gradient is non-finite.
    pub fn step(&self, state: &mut OptimState) -> Result<()> {
        let g = self.gradient(state)?;
        if let Some(term) = g.breakdown.first_non_finite() {
            return Err(Error::NonFinite { term });
        }
        if let Some(term) = g.first_non_finite() {
            return Err(Error::NonFinite { term });
        }
        self.apply(state, &g);
        Ok(())
    }

    /// Applies a precomputed gradient.
    pub fn apply(&self, state: &mut OptimState, g: &GradientBundle) {
        let c = &self.config;
        let t = state.step + 1;
        for i in 0..state.depths.len() {
            c.adam.update(
                c.learning_rate,
                t,
                state.depths[i].log_depth_mut(),
                &g.d_log_depth[i],
                &mut state.m_depth[i],
                &mut state.v_depth[i],
            );
            state.depths[i].clamp_depth(c.depth_bounds[0], c.depth_bounds[1]);
            let mut p = pose_vector(&state.poses[i]);
            let gp: [f64; 12] = std::array::from_fn(|k| g.d_pose[i][k / 6][k % 6]);
            c.adam.update(
                c.pose_learning_rate,
                t,
                &mut p,
                &gp,
                &mut state.m_pose[i],
                &mut state.v_pose[i],
            );
            state.poses[i] = pose_from_vector(&p);
        }
        state.step = t;
        state.history.push(g.breakdown.clone());
    }

    /// Runs the configured number of steps from `state`.
    pub fn run(&self, state: &mut OptimState) -> Result<()> {
        while state.step < self.config.steps {
            self.step(state)?;
        }
        Ok(())
    }

    /// Loss breakdown at the current state.
    pub fn loss(&self, state: &OptimState) -> Result<LossBreakdown> {
        let masks = self.problem.compute_masks(&state.depths, &state.poses)?;
        Ok(self.problem.evaluate(&state.depths, &state.poses, &masks, false)?.0)
    }
}

/// Loss at the start of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Pyramid level, 0 being full resolution.
    pub level: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub depths: Vec<DepthField>,
    pub poses: Vec<CameraPoses>,
    pub trace: Vec<TraceEntry>,
    /// Loss at the returned point.
    pub final_loss: LossBreakdown,
}

/// Runs the configured schedule. With several pyramid levels the coarsest
/// level starts from [`init_state`]; every finer level starts from the
/// upsampled depths and the poses of the level below, with fresh Adam
/// moments. The trace covers all levels in order. Zero steps return the
/// full-resolution initialization.
pub fn optimize(sample: &MultiCamSample, weights: &LossWeights, config: &OptimConfig) -> Result<OptimResult> {
    config.validate()?;
    let mut levels = vec![sample.clone()];
    if config.steps > 0 {
        for _ in 1..config.pyramid_levels {
            let next = levels.last().expect("non-empty").downsample()?;
            levels.push(next);
        }
    }
    let mut trace = Vec::new();
    let mut carried: Option<(Vec<DepthField>, Vec<CameraPoses>)> = None;
    for (k, level) in levels.iter().enumerate().rev() {
        let steps = if k == 0 { config.steps } else { config.coarse_steps };
        let level_cfg = OptimConfig {
            steps,
            ..config.clone()
        };
        let opt = Optimizer::new(level, weights, &level_cfg)?;
        let mut state = match carried.take() {
            None => init_state(level, &level_cfg)?,
            Some((depths, poses)) => {
                let depths = depths
                    .iter()
                    .zip(&level.rig.cameras)
                    .map(|(d, c)| d.resample(c.width, c.height))
                    .collect();
                OptimState::from_parts(depths, poses)
            }
        };
        opt.run(&mut state)?;
        trace.extend(state.history.drain(..).map(|loss| TraceEntry { level: k, loss }));
        if k == 0 {
            let final_loss = opt.loss(&state)?;
            return Ok(OptimResult {
                depths: state.depths,
                poses: state.poses,
                trace,
                final_loss,
            });
        }
        carried = Some((state.depths, state.poses));
    }
    unreachable!("the finest level always returns")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{
        constant_velocity, render_sample, GroundSpec, Intrinsics, RigSpec, SceneSpec, SynthSpec, TextureSpec,
    };

    #[test]
    fn adam_matches_scalar_reference_on_quadratic() {
        // f(x) = 0.5 * a * (x - c)^2
        let (a, c, lr) = (3.0, 1.7, 0.1);
        let adam = AdamParams::default();
        let mut x = [-2.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let (mut rx, mut rm, mut rv) = (-2.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = [a * (x[0] - c)];
            adam.update(lr, t, &mut x, &g, &mut m, &mut v);
            let rg = a * (rx - c);
            rm = 0.9 * rm + 0.1 * rg;
            rv = 0.999 * rv + 0.001 * rg * rg;
            let mh = rm / (1.0 - 0.9f64.powi(t as i32));
            let vh = rv / (1.0 - 0.999f64.powi(t as i32));
            rx -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((x[0] - rx).abs() <= 1e-12, "step {t}: {} vs {rx}", x[0]);
        }
        assert!((x[0] - c).abs() < (-2.0f64 - c).abs() / 10.0);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let mut c = OptimConfig::default();
        c.adam.beta1 = 1.0;
        assert!(c.validate().is_err());
        let c = OptimConfig {
            depth_bounds: [5.0, 5.0],
            ..OptimConfig::default()
        };
        assert!(c.validate().is_err());
        let c = OptimConfig {
            learning_rate: 0.0,
            ..OptimConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets_round_trip_names() {
        for p in Preset::ALL {
            assert_eq!(Preset::parse(p.name()), Some(p));
        }
        let f = Preset::Fsm.toggles();
        assert!(f.use_spatial && f.use_spatiotemporal && f.use_pcc && f.use_self_occ_masks);
        let m = Preset::Mono.toggles();
        assert!(!m.use_spatial && !m.use_spatiotemporal && !m.use_pcc && m.use_self_occ_masks);
        assert_eq!(Preset::Mono.weights(&LossWeights::default()).lambda_s, 0.0);
        assert!(!Preset::FsmNoStc.toggles().use_spatiotemporal);
        assert!(!Preset::FsmNoPcc.toggles().use_pcc);
        assert!(!Preset::FsmNoMask.toggles().use_self_occ_masks);
    }

    fn tiny_sample() -> MultiCamSample {
        let deg = std::f64::consts::PI / 180.0;
        render_sample(&SynthSpec {
            rig: RigSpec {
                yaws: vec![0.0, 60.0 * deg, -60.0 * deg],
                radial_offset: 0.5,
                width: 24,
                height: 16,
                intrinsics: vec![Intrinsics {
                    fx: 12.0,
                    fy: 12.0,
                    cx: 11.5,
                    cy: 7.5,
                }],
                names: vec![],
            },
            scene: SceneSpec {
                ground: Some(GroundSpec {
                    height: 1.5,
                    texture: TextureSpec {
                        seed: 4,
                        color: [0.7, 0.7, 0.7],
                        contrast: 0.5,
                    },
                }),
                boxes: vec![],
                noise_cells: vec![1.0, 0.5],
                light: [0.2, 1.0, 0.3],
                ambient: 0.4,
                trajectory: constant_velocity(0.3, 0.0),
                texture_floor: None,
            },
            ego_body: None,
            channels: 1,
            supersample: 2,
        })
        .unwrap()
    }

    #[test]
    fn init_examples() {
        let s = tiny_sample();
        let cfg = OptimConfig {
            depth_bounds: [1.0, 100.0],
            init_jitter: 0.0,
            ..OptimConfig::default()
        };
        let st = init_state(&s, &cfg).unwrap();
        for d in &st.depths {
            assert!(d.depths().iter().all(|&v| (v - 10.0).abs() < 1e-12));
            assert!(d.log_depth().iter().all(|&v| v == d.log_depth()[0]));
        }
        assert!(st
            .poses
            .iter()
            .all(|p| p[0] == PoseParams::default() && p[1] == PoseParams::default()));
        let jit = OptimConfig { seed: 5, ..cfg.clone() };
        let jit = OptimConfig {
            init_jitter: 0.05,
            ..jit
        };
        assert_eq!(init_state(&s, &jit).unwrap(), init_state(&s, &jit).unwrap());
    }

    #[test]
    fn zero_gradient_leaves_state() {
        let s = tiny_sample();
        let cfg = OptimConfig::default();
        let opt = Optimizer::new(&s, &LossWeights::default(), &cfg).unwrap();
        let mut st = init_state(&s, &cfg).unwrap();
        let before = st.clone();
        let mut g = GradientBundle::zeros(&s);
        g.breakdown = LossBreakdown::default();
        opt.apply(&mut st, &g);
        assert_eq!(st.step, 1);
        assert_eq!(st.depths, before.depths);
        assert_eq!(st.poses, before.poses);
    }

    #[test]
    fn loss_trends_down_and_is_deterministic() {
        let s = tiny_sample();
        let cfg = OptimConfig {
            steps: 50,
            pyramid_levels: 1,
            ..OptimConfig::default()
        };
        let a = optimize(&s, &LossWeights::default(), &cfg).unwrap();
        let totals: Vec<f64> = a.trace.iter().map(|e| e.loss.total).collect();
        let head: f64 = totals[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = totals[40..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
        let b = optimize(&s, &LossWeights::default(), &cfg).unwrap();
        assert_eq!(a, b);
        for d in &a.depths {
            assert!(d.depths().iter().all(|&v| (0.5 - 1e-12..=200.0 + 1e-9).contains(&v)));
        }
    }
}

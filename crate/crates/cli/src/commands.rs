use std::fs::File;
use std::io::Write;
use std::path::Path;

use rigdepth::differentiation::{grad_check as run_grad_check, GradCheckSettings};
use rigdepth::evaluation::{
    assemble_pointcloud, evaluate, per_frame_median_scale, shared_median_scale, write_ply, DepthMetrics, EvalReport,
    Protocol,
};
use rigdepth::io::{write_depth_pfm, write_image_png, write_json, write_mask_png};
use rigdepth::losses::photometric_loss;
use rigdepth::optimizer::{init_state, optimize as run_optimize, run_weights, OptimConfig, Preset};
use rigdepth::synthetic::{render_sample, standard_spec, SynthSpec};
use rigdepth::warping::{
    non_overlap_mask, synthesize, warp_mask_nearest, warp_spatial, warp_spatiotemporal, warp_temporal, WarpField,
};
use rigdepth::{BinaryMask, DepthField, Frame, ImagePlane, MultiCamSample, PoseParams, Rig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_error, CliError, CliResult};
use crate::layout::{create_dir, load_depths};
use crate::{EvalArgs, ExportPlyArgs, GradCheckArgs, OptimizeArgs, SynthArgs, WarpDebugArgs};

/// Relative deviation of the shared scale from 1 above which an unscaled
/// evaluation gets a note.
const SCALE_NOTE_THRESHOLD: f64 = 0.1;
const DEBUG_ALPHA: f64 = 0.85;

fn load_sample(dir: &Path) -> CliResult<MultiCamSample> {
    if !dir.exists() {
        return Err(CliError::Data(format!("missing sample directory {}", dir.display())));
    }
    Ok(MultiCamSample::load(dir)?)
}

fn parse_preset(name: &str) -> CliResult<Preset> {
    Preset::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        CliError::Usage(format!("unknown preset {name:?}; expected one of {}", known.join(", ")))
    })
}

fn parse_protocol(name: &str) -> CliResult<Protocol> {
    Protocol::parse(name)
        .ok_or_else(|| CliError::Usage(format!("unknown protocol {name:?}; expected none, per-frame or shared")))
}

fn camera_index(rig: &Rig, name: &str) -> CliResult<usize> {
    rig.index_of(name).ok_or_else(|| {
        let known: Vec<&str> = rig.cameras.iter().map(|c| c.name.as_str()).collect();
        CliError::Data(format!("unknown camera {name:?}; the rig has {}", known.join(", ")))
    })
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let spec = match &args.spec {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Data(format!("missing file {}", path.display())));
            }
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            SynthSpec::from_json(&text)?
        }
        None => standard_spec(),
    };
    let sample = render_sample(&spec)?;
    create_dir(&args.out)?;
    sample.save(&args.out)?;
    if let Some(path) = &args.write_spec {
        write_json(path, &(spec.to_json()? + "\n"))?;
    }
    println!("wrote {} cameras to {}", sample.len(), args.out.display());
    Ok(())
}

fn run_config(args: &OptimizeArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let (Some(sample), Some(out)) = (&args.sample, &args.out) else {
                return Err(CliError::Usage(
                    "optimize needs --config or both --sample and --out".into(),
                ));
            };
            RunConfig::new(sample.clone(), out.clone())
        }
    };
    if let Some(s) = &args.sample {
        cfg.sample_dir = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = &args.preset {
        cfg.preset = Some(parse_preset(p)?);
    }
    if let Some(n) = args.steps {
        cfg.optim.steps = n;
    }
    if let Some(s) = args.seed {
        cfg.optim.seed = s;
    }
    cfg.resolve()
}

#[derive(Serialize)]
struct CameraPoseRecord<'a> {
    camera: &'a str,
    previous: PoseParams,
    next: PoseParams,
}

const TRACE_COLUMNS: [&str; 10] = [
    "step",
    "level",
    "photometric_temporal",
    "photometric_spatial",
    "smoothness",
    "pcc_translation",
    "pcc_rotation",
    "total",
    "temporal_valid_pixels",
    "spatial_valid_pixels",
];

/// One row per step, fields in [`TRACE_COLUMNS`] order.
#[derive(Serialize)]
struct TraceRow {
    step: usize,
    level: usize,
    photometric_temporal: f64,
    photometric_spatial: f64,
    smoothness: f64,
    pcc_translation: f64,
    pcc_rotation: f64,
    total: f64,
    temporal_valid_pixels: usize,
    spatial_valid_pixels: usize,
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    protocol: &'a str,
    camera: &'a str,
    scale: f64,
    abs_rel: Option<f64>,
    sq_rel: Option<f64>,
    rmse: Option<f64>,
    delta_125: Option<f64>,
    count: usize,
}

impl<'a> MetricsRow<'a> {
    fn new(protocol: Protocol, camera: &'a str, scale: f64, m: Option<&DepthMetrics>) -> Self {
        Self {
            protocol: protocol.name(),
            camera,
            scale,
            abs_rel: m.map(|m| m.abs_rel),
            sq_rel: m.map(|m| m.sq_rel),
            rmse: m.map(|m| m.rmse),
            delta_125: m.map(|m| m.delta_125),
            count: m.map_or(0, |m| m.count),
        }
    }
}

fn metrics_csv(report: &EvalReport) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(MetricsRow::new(report.protocol, &r.camera, r.scale, r.metrics.as_ref()))?;
    }
    let avg_scale = report.rows.iter().map(|r| r.scale).sum::<f64>() / report.rows.len().max(1) as f64;
    w.serialize(MetricsRow::new(
        report.protocol,
        "Avg",
        avg_scale,
        report.average.as_ref(),
    ))?;
    w.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut f = File::create(path).map_err(|e| io_error(path, e))?;
    f.write_all(bytes).map_err(|e| io_error(path, e))
}

/// Ground truth, with validity restricted to pixels where the prediction is
/// usable.
fn eval_against(
    sample: &MultiCamSample,
    preds: &[DepthField],
    usable: Option<&[BinaryMask]>,
    protocol: Protocol,
    cap: f64,
) -> CliResult<(EvalReport, Vec<BinaryMask>)> {
    let names: Vec<String> = sample.rig.cameras.iter().map(|c| c.name.clone()).collect();
    let gts: Vec<&[f64]> = sample.cameras.iter().map(|c| c.gt_depth.as_slice()).collect();
    let mut valids = Vec::with_capacity(sample.len());
    for i in 0..sample.len() {
        let v = sample.gt_valid_mask(i, cap);
        valids.push(match usable {
            Some(u) => v.and(&u[i])?,
            None => v,
        });
    }
    let report = evaluate(&names, preds, &gts, &valids, protocol, cap)?;
    Ok((report, valids))
}

pub fn optimize(args: &OptimizeArgs) -> CliResult<()> {
    let cfg = run_config(args)?;
    let sample = load_sample(&cfg.sample_dir)?;
    let result = run_optimize(&sample, &cfg.weights, &cfg.optim)?;
    if let Some(term) = result.final_loss.first_non_finite() {
        return Err(CliError::Numerical(format!("loss term {term} is not finite")));
    }

    let out = &cfg.out_dir;
    create_dir(&out.join("depth"))?;
    for (i, d) in result.depths.iter().enumerate() {
        write_depth_pfm(&out.join("depth").join(format!("cam{i}.pfm")), d)?;
    }
    let poses: Vec<CameraPoseRecord> = sample
        .rig
        .cameras
        .iter()
        .zip(&result.poses)
        .map(|(c, p)| CameraPoseRecord {
            camera: &c.name,
            previous: p[0],
            next: p[1],
        })
        .collect();
    write_json(&out.join("poses.json"), &(serde_json::to_string_pretty(&poses)? + "\n"))?;

    // Headers are written explicitly so that a run without steps still
    // produces them.
    let mut trace = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    trace.write_record(TRACE_COLUMNS)?;
    for (step, e) in result.trace.iter().enumerate() {
        let l = &e.loss;
        trace.serialize(TraceRow {
            step,
            level: e.level,
            photometric_temporal: l.photometric_temporal,
            photometric_spatial: l.photometric_spatial,
            smoothness: l.smoothness,
            pcc_translation: l.pcc_translation,
            pcc_rotation: l.pcc_rotation,
            total: l.total,
            temporal_valid_pixels: l.temporal_valid_pixels,
            spatial_valid_pixels: l.spatial_valid_pixels,
        })?;
    }
    let trace = trace.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))?;
    write_bytes(&out.join("trace.csv"), &trace)?;
    write_json(&out.join("config.json"), &cfg.to_json())?;
    write_json(
        &out.join("final_loss.json"),
        &(serde_json::to_string_pretty(&result.final_loss)? + "\n"),
    )?;

    let (report, _) = eval_against(
        &sample,
        &result.depths,
        None,
        cfg.protocol,
        rigdepth::evaluation::DEFAULT_CAP,
    )?;
    write_bytes(&out.join("metrics.csv"), &metrics_csv(&report)?)?;

    println!(
        "{} steps, final loss {:.6}; outputs in {}",
        result.trace.len(),
        result.final_loss.total,
        out.display()
    );
    if let Some(a) = &report.average {
        println!("{} Abs Rel {:.4}", report.protocol.name(), a.abs_rel);
    }
    Ok(())
}

/// Explains unscaled metrics of predictions that are off metric scale: a
/// note when the shared factor or any camera's own median factor deviates
/// from 1 by more than [`SCALE_NOTE_THRESHOLD`].
fn scale_note(
    sample: &MultiCamSample,
    preds: &[DepthField],
    valids: &[BinaryMask],
    cap: f64,
) -> CliResult<Option<String>> {
    let gts: Vec<&[f64]> = sample.cameras.iter().map(|c| c.gt_depth.as_slice()).collect();
    let off = |f: f64| (f - 1.0).abs() > SCALE_NOTE_THRESHOLD;
    let mut flagged = Vec::new();
    if let Ok((_, gamma)) = shared_median_scale(preds, &gts, valids, cap) {
        if off(gamma) {
            flagged.push(format!("shared {gamma:.3}"));
        }
    }
    for (i, cam) in sample.rig.cameras.iter().enumerate() {
        match per_frame_median_scale(&preds[i], gts[i], &valids[i], cap) {
            Ok((_, f)) if off(f) => flagged.push(format!("{} {f:.3}", cam.name)),
            Ok(_) | Err(rigdepth::Error::Empty(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok((!flagged.is_empty()).then(|| {
        format!(
            "unscaled predictions are off metric scale (median factors: {}); Abs Rel reflects scale error",
            flagged.join(", ")
        )
    }))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    report: &'a EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let protocol = parse_protocol(&args.protocol)?;
    let sample = load_sample(&args.gt)?;
    if !args.pred.exists() {
        return Err(CliError::Data(format!(
            "missing prediction directory {}",
            args.pred.display()
        )));
    }
    let (preds, usable) = load_depths(&args.pred, &sample.rig)?;
    let (report, valids) = eval_against(&sample, &preds, Some(&usable), protocol, args.cap)?;

    let note = if protocol == Protocol::None {
        scale_note(&sample, &preds, &valids, args.cap)?
    } else {
        None
    };

    let csv_bytes = metrics_csv(&report)?;
    if let Some(path) = &args.out {
        write_bytes(path, &csv_bytes)?;
    }
    if args.json {
        let out = EvalOutput {
            report: &report,
            note: note.clone(),
        };
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else if args.out.is_none() {
        print!("{}", String::from_utf8_lossy(&csv_bytes));
    }
    if let Some(n) = &note {
        eprintln!("note: {n}");
    }
    Ok(())
}

#[derive(Serialize)]
struct WarpSummary {
    kind: &'static str,
    /// Target pixels landing inside the source image.
    overlap_fraction: f64,
    /// Pixels entering the loss: overlapping and self-occluded in neither
    /// view.
    loss_pixels: usize,
    mean_loss: Option<f64>,
}

fn debug_warp(
    out: &Path,
    kind: &'static str,
    warp: &WarpField,
    source: &ImagePlane,
    source_occlusion: &BinaryMask,
    target: &ImagePlane,
    target_occlusion: &BinaryMask,
) -> CliResult<WarpSummary> {
    let (synth, _) = synthesize(source, warp)?;
    let overlap = non_overlap_mask(warp);
    let mask = overlap
        .and(target_occlusion)?
        .and(&warp_mask_nearest(source_occlusion, warp)?)?;
    let loss = photometric_loss(target, &synth, &mask, DEBUG_ALPHA)?;
    let (w, h) = target.dims();
    let heat = ImagePlane::new(w, h, 1, loss.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    write_image_png(&out.join(format!("{kind}_synth.png")), &synth)?;
    write_image_png(&out.join(format!("{kind}_loss.png")), &heat)?;
    write_mask_png(&out.join(format!("{kind}_overlap.png")), &overlap)?;
    let n = mask.count_ones();
    let sum: f64 = loss.iter().zip(mask.bits()).filter(|(_, m)| **m).map(|(l, _)| l).sum();
    Ok(WarpSummary {
        kind,
        overlap_fraction: overlap.fraction(),
        loss_pixels: n,
        mean_loss: (n > 0).then(|| sum / n as f64),
    })
}

pub fn warp_debug(args: &WarpDebugArgs) -> CliResult<()> {
    let context = match args.context.as_str() {
        "previous" => Frame::Previous,
        "next" => Frame::Next,
        other => {
            return Err(CliError::Usage(format!(
                "unknown context {other:?}; expected previous or next"
            )))
        }
    };
    let sample = load_sample(&args.sample)?;
    let t = camera_index(&sample.rig, &args.target)?;
    let s = camera_index(&sample.rig, &args.source)?;
    let depths = match &args.depth {
        Some(dir) => load_depths(dir, &sample.rig)?.0,
        None => sample.gt_depth_fields(rigdepth::synthetic::FAR_PLANE)?,
    };
    let (cam_t, cam_s) = (&sample.rig.cameras[t], &sample.rig.cameras[s]);
    let ego = sample.gt_camera_motion(t, context);
    let target = sample.cameras[t].image(Frame::Current);
    let occ = &sample.cameras[t].self_occlusion;
    create_dir(&args.out)?;

    let summaries = vec![
        debug_warp(
            &args.out,
            "temporal",
            &warp_temporal(&depths[t], &ego, cam_t)?,
            sample.cameras[t].image(context),
            occ,
            target,
            occ,
        )?,
        debug_warp(
            &args.out,
            "spatial",
            &warp_spatial(&depths[t], cam_t, cam_s)?,
            sample.cameras[s].image(Frame::Current),
            &sample.cameras[s].self_occlusion,
            target,
            occ,
        )?,
        debug_warp(
            &args.out,
            "spatiotemporal",
            &warp_spatiotemporal(&depths[t], &ego, cam_t, cam_s)?,
            sample.cameras[s].image(context),
            &sample.cameras[s].self_occlusion,
            target,
            occ,
        )?,
    ];
    write_json(
        &args.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summaries)? + "\n"),
    )?;
    for w in &summaries {
        println!(
            "{:<15} overlap {:.3}  loss pixels {:>6}  mean loss {}",
            w.kind,
            w.overlap_fraction,
            w.loss_pixels,
            w.mean_loss.map_or("-".to_string(), |l| format!("{l:.4}"))
        );
    }
    Ok(())
}

pub fn export_ply(args: &ExportPlyArgs) -> CliResult<()> {
    let sample = load_sample(&args.sample)?;
    let (depths, usable) = match &args.depth {
        Some(dir) => load_depths(dir, &sample.rig)?,
        None => {
            let mut d = Vec::with_capacity(sample.len());
            let mut u = Vec::with_capacity(sample.len());
            for (cam, frames) in sample.rig.cameras.iter().zip(&sample.cameras) {
                let ok: Vec<bool> = frames.gt_depth.iter().map(|v| v.is_finite() && *v > 0.0).collect();
                let filled: Vec<f64> = frames
                    .gt_depth
                    .iter()
                    .zip(&ok)
                    .map(|(v, ok)| if *ok { *v } else { 1.0 })
                    .collect();
                d.push(DepthField::from_depth(cam.width, cam.height, &filled)?);
                u.push(BinaryMask::new(cam.width, cam.height, ok)?);
            }
            (d, u)
        }
    };
    let masks = usable
        .iter()
        .zip(&sample.cameras)
        .map(|(u, c)| u.and(&c.self_occlusion))
        .collect::<Result<Vec<_>, _>>()?;
    let images: Vec<&ImagePlane> = sample.cameras.iter().map(|c| c.image(Frame::Current)).collect();
    let cloud = assemble_pointcloud(&depths, &images, &masks, &sample.rig)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_ply(&args.out, &cloud)?;
    println!("wrote {} points to {}", cloud.len(), args.out.display());
    Ok(())
}

pub fn grad_check(args: &GradCheckArgs) -> CliResult<()> {
    let preset = parse_preset(&args.preset)?;
    let sample = load_sample(&args.sample)?;
    let optim = OptimConfig {
        init_pose_noise: args.pose_noise,
        seed: args.seed,
        ..OptimConfig::default()
    };
    let state = init_state(&sample, &optim)?;
    let settings = GradCheckSettings {
        coordinates: args.coords,
        seed: args.seed,
        ..GradCheckSettings::default()
    };
    let weights = preset.weights(&run_weights());
    let report = run_grad_check(
        &sample,
        &state.depths,
        &state.poses,
        &weights,
        &preset.toggles(),
        &settings,
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for c in &report.checks {
            println!(
                "{:<36} analytic {:>13.6e} numeric {:>13.6e} rel {:.2e} {}",
                c.coordinate.to_string(),
                c.analytic,
                c.numeric,
                c.rel_error,
                if c.passed { "ok" } else { "FAIL" }
            );
        }
        println!(
            "{} checked, {} skipped, max rel error {:.3e}, max abs error {:.3e}",
            report.checks.len(),
            report.skipped.len(),
            report.max_rel_error,
            report.max_abs_error
        );
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} coordinates disagree with finite differences",
            report.checks.len()
        )));
    }
    if report.checks.len() < args.coords {
        return Err(CliError::Numerical(format!(
            "only {} of {} coordinates could be checked on a smooth piece",
            report.checks.len(),
            args.coords
        )));
    }
    Ok(())
}

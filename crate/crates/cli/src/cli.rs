//! Command-line surface. Every command is deterministic given `--seed` and
//! writes its artifacts plus `manifest.txt` under `--out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use stereogc::field::disparity_to_depth;
use stereogc::geometry::{backproject, icp, IcpConfig, RigidTransform};
use stereogc::metrics::{evaluate, MetricReport, METRIC_COLUMNS};
use stereogc::objective::{optimize, StereoPair, TraceRow};
use stereogc::structured_light::{
    decode_gray, generate_gray_patterns, modulation_depth, projector_coordinates, refine_with_phase,
    render_gray_captures, render_phase_captures, triangulate, PhasePatternSet, ProjectorModel,
    DEFAULT_CONTRAST_EPSILON, DEFAULT_MODULATION_THRESHOLD, DEFAULT_PHASE_SHIFTS,
};
use stereogc::warp::{blind_mask, View};
use stereogc::{BinaryMask, CameraRig, DepthMap, ImagePlane};

use crate::config::ExperimentConfig;
use crate::dataset::{ingest_dataset, Calibration, Layout};
use crate::error::{HarnessError, HarnessResult};
use crate::experiments::{ablate, optimize_synthetic, ABLATION_LABELS};
use crate::io::*;
use crate::run::{parallel_map, worker_count, write_manifest};
use crate::synth::{synth_scene, ScenePreset};

#[derive(Parser, Debug)]
#[command(name = "stereogc", version, about = "Stereo depth objective with 3D geometric consistency")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random choice; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct Resolution {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic stereo scene with ground truth.
    Synth {
        #[arg(long, default_value = "plane")]
        scene: String,
        #[command(flatten)]
        res: Resolution,
        #[command(flatten)]
        common: Common,
    },
    /// Optimize disparity fields directly on a stereo pair.
    Optimize {
        /// Synthetic scene to render instead of reading images.
        #[arg(long, conflicts_with_all = ["left", "right"])]
        synth: Option<String>,
        #[arg(long, requires_all = ["right", "calib"])]
        left: Option<PathBuf>,
        #[arg(long)]
        right: Option<PathBuf>,
        /// Calibration file for `--left/--right`.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        /// Also write backprojected clouds as PLY.
        #[arg(long)]
        export_clouds: bool,
        #[command(flatten)]
        res: Resolution,
        #[command(flatten)]
        common: Common,
    },
    /// Depth metrics of a prediction against ground truth.
    Eval {
        #[arg(long, requires = "gt", conflicts_with = "dataset")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Optional PNG mask restricting the evaluated pixels.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Dataset root; predictions are read from `--pred-dir/<sequence>/<frame>.pfm`.
        #[arg(long, requires_all = ["layout", "pred_dir"])]
        dataset: Option<PathBuf>,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Decode structured-light captures into projector columns and depth.
    SlDecode {
        /// Directory of captures (see docs/formats.md).
        #[arg(long, conflicts_with = "synth")]
        captures: Option<PathBuf>,
        /// Render captures of a synthetic scene first, then decode them.
        #[arg(long)]
        synth: Option<String>,
        #[command(flatten)]
        res: Resolution,
        #[command(flatten)]
        common: Common,
    },
    /// Rigidly register one PLY cloud onto another.
    IcpRegister {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Blind mask of a disparity map.
    Mask {
        #[arg(long)]
        disparity: PathBuf,
        #[arg(long, default_value = "left")]
        view: String,
        #[command(flatten)]
        common: Common,
    },
    /// 2D-only vs +3GC vs +3GC+mask on a synthetic scene.
    Ablate {
        #[arg(long, default_value = "slant-occluded")]
        synth: String,
        /// Number of consecutive seeds, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        iters: Option<usize>,
        #[command(flatten)]
        res: Resolution,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, res: Option<&Resolution>) -> HarnessResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| HarnessError::usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = res {
        if let Some(h) = r.height {
            cfg.height = h;
        }
        if let Some(w) = r.width {
            cfg.width = w;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn metrics_rows(label_cols: &[String], r: &MetricReport) -> Vec<String> {
    let mut row = label_cols.to_vec();
    row.extend(r.values().iter().map(|v| v.to_string()));
    row
}

fn write_metrics(path: &Path, r: &MetricReport) -> HarnessResult<()> {
    write_csv(path, &METRIC_COLUMNS, &[metrics_rows(&[], r)])
}

fn trace_rows(trace: &[TraceRow]) -> Vec<Vec<String>> {
    trace
        .iter()
        .map(|t| {
            let m = &t.terms;
            [t.iteration as f64, m.ap_l, m.ap_r, m.ds_l, m.ds_r, m.lr2d_l, m.lr2d_r, m.gc3d, m.total, t.grad_norm]
                .iter()
                .map(|v| v.to_string())
                .collect()
        })
        .collect()
}

const TRACE_COLUMNS: [&str; 10] =
    ["iteration", "ap_l", "ap_r", "ds_l", "ds_r", "lr2d_l", "lr2d_r", "gc3d", "total", "grad_norm"];

fn read_calibration(path: &Path) -> HarnessResult<Calibration> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Calibration::parse(&text).map_err(|detail| HarnessError::Format { path: path.to_path_buf(), detail })
}

fn cmd_synth(scene: &str, res: &Resolution, common: &Common) -> HarnessResult<()> {
    let cfg = resolve(common, Some(res))?;
    let preset = ScenePreset::parse(scene).map_err(|e| HarnessError::usage(e.to_string()))?;
    let (scene, r) = synth_scene(preset, cfg.height, cfg.width, cfg.seed)?;
    let out = &common.out;
    write_image_png16(&out.join("left.png"), &r.pair.left)?;
    write_image_png16(&out.join("right.png"), &r.pair.right)?;
    write_disparity(&out.join("gt_disp_l.pfm"), &r.gt_disp_l)?;
    write_disparity(&out.join("gt_disp_r.pfm"), &r.gt_disp_r)?;
    write_depth(&out.join("gt_depth_l.pfm"), &r.gt_depth_l)?;
    write_depth(&out.join("gt_depth_r.pfm"), &r.gt_depth_r)?;
    write_depth_png16(&out.join("gt_depth_l_mm.png"), &r.gt_depth_l, 1000.0)?;
    write_mask_png(&out.join("covisible_l.png"), &r.covisible_l)?;
    write_mask_png(&out.join("covisible_r.png"), &r.covisible_r)?;
    write_text(&out.join("calibration.txt"), &Calibration::from_rig(&scene.rig).to_text())?;
    write_manifest(
        out,
        "synth",
        &[("scene", preset.name().into()), ("depth_png_scale", "1000 (value = depth * 1000)".into())],
        &cfg,
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    synth: Option<&str>,
    left: Option<&Path>,
    right: Option<&Path>,
    calib: Option<&Path>,
    iters: Option<usize>,
    export_clouds: bool,
    res: &Resolution,
    common: &Common,
) -> HarnessResult<()> {
    let mut cfg = resolve(common, Some(res))?;
    if let Some(n) = iters {
        cfg.iterations = n;
    }
    let out = &common.out;
    let mut args = Vec::new();
    let (disp_l, disp_r, rig, trace) = match (synth, left, right, calib) {
        (Some(name), None, None, _) => {
            let preset = ScenePreset::parse(name).map_err(|e| HarnessError::usage(e.to_string()))?;
            args.push(("synth", preset.name().to_string()));
            let run = optimize_synthetic(preset, &cfg)?;
            write_metrics(&out.join("metrics.csv"), &run.metrics)?;
            write_text(&out.join("disparity_error.txt"), &format!("{}\n", run.mean_disparity_error()))?;
            (run.disp_l, run.disp_r, run.scene.rig, run.optimization.trace)
        }
        (None, Some(l), Some(r), Some(c)) => {
            let pair = StereoPair::new(read_image_png(l)?, read_image_png(r)?)?;
            let (h, w) = pair.dims();
            cfg.height = h;
            cfg.width = w;
            let rig = read_calibration(c)?.rig(h, w)?;
            args.extend([
                ("left", l.display().to_string()),
                ("right", r.display().to_string()),
                ("calib", c.display().to_string()),
            ]);
            let o = optimize(&pair, &rig, &cfg.effective_weights(), &cfg.objective(), &cfg.optim())?;
            let (dl, dr) = o.params.disparities()?;
            (dl, dr, rig, o.trace)
        }
        _ => return Err(HarnessError::usage("optimize needs --synth NAME or --left, --right and --calib")),
    };
    write_disparity(&out.join("disp_l.pfm"), &disp_l)?;
    write_disparity(&out.join("disp_r.pfm"), &disp_r)?;
    write_depth(&out.join("depth_l.pfm"), &disparity_to_depth(&disp_l, &rig)?)?;
    write_depth(&out.join("depth_r.pfm"), &disparity_to_depth(&disp_r, &rig)?)?;
    write_csv(&out.join("trace.csv"), &TRACE_COLUMNS, &trace_rows(&trace))?;
    if export_clouds {
        let (h, w) = disp_l.dims();
        for (view, d, name) in [(View::Left, &disp_l, "cloud_l.ply"), (View::Right, &disp_r, "cloud_r.ply")] {
            let (cloud, _) = backproject(d, &rig, &BinaryMask::ones(h, w), view)?;
            write_ply(&out.join(name), &cloud)?;
        }
    }
    write_manifest(out, "optimize", &args, &cfg)
}

fn cmd_eval(
    pred: Option<&Path>,
    gt: Option<&Path>,
    mask: Option<&Path>,
    dataset: Option<&Path>,
    layout: Option<&str>,
    pred_dir: Option<&Path>,
    common: &Common,
) -> HarnessResult<()> {
    let cfg = resolve(common, None)?;
    let out = &common.out;
    let opts = cfg.eval_options();
    match (pred, gt, dataset, layout, pred_dir) {
        (Some(p), Some(g), None, _, _) => {
            let (pred, gt) = (read_depth(p)?, read_depth(g)?);
            let valid = match mask {
                Some(m) => read_mask_png(m)?,
                None => BinaryMask::ones(gt.height(), gt.width()),
            };
            let report = evaluate(&pred, &gt, &valid, &opts)?;
            println!("{}\n{}", MetricReport::csv_header(), report.csv_row());
            write_metrics(&out.join("metrics.csv"), &report)?;
            write_manifest(out, "eval", &[("pred", p.display().to_string()), ("gt", g.display().to_string())], &cfg)
        }
        (None, _, Some(root), Some(layout), Some(pred_dir)) => {
            let layout = Layout::parse(layout)?;
            let ds = ingest_dataset(root, layout)?;
            let mut skipped: Vec<Vec<String>> = ds
                .skipped()
                .iter()
                .map(|s| vec![s.sequence.clone(), s.frame.clone().unwrap_or_default(), s.reason.clone()])
                .collect();
            let results =
                parallel_map(ds.entries(), worker_count()?, |entry| -> Result<Option<MetricReport>, String> {
                    let sample = entry.load()?;
                    let Some(gt) = sample.gt_depth else { return Ok(None) };
                    let pred_path = pred_dir.join(&entry.sequence).join(format!("{}.pfm", entry.frame));
                    let pred = read_depth(&pred_path).map_err(|e| e.to_string())?;
                    let valid = BinaryMask::ones(gt.height(), gt.width());
                    evaluate(&pred, &gt, &valid, &opts).map(Some).map_err(|e| e.to_string())
                })?;
            let mut rows = Vec::new();
            for (entry, res) in ds.entries().iter().zip(results) {
                match res {
                    Ok(Some(r)) => rows.push(metrics_rows(&[entry.sequence.clone(), entry.frame.clone()], &r)),
                    Ok(None) => {}
                    Err(reason) => skipped.push(vec![entry.sequence.clone(), entry.frame.clone(), reason]),
                }
            }
            let mut header = vec!["sequence", "frame"];
            header.extend(METRIC_COLUMNS);
            write_csv(&out.join("metrics.csv"), &header, &rows)?;
            write_csv(&out.join("skipped.csv"), &["sequence", "frame", "reason"], &skipped)?;
            println!("evaluated {} samples, skipped {}", rows.len(), skipped.len());
            write_manifest(
                out,
                "eval",
                &[
                    ("dataset", root.display().to_string()),
                    ("layout", layout.name().into()),
                    ("pred_dir", pred_dir.display().to_string()),
                ],
                &cfg,
            )
        }
        _ => Err(HarnessError::usage("eval needs --pred and --gt, or --dataset, --layout and --pred-dir")),
    }
}

/// Projector description stored next to structured-light captures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectorFile {
    pub model: ProjectorModel,
    pub phase_period: f64,
}

impl ProjectorFile {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        format!(
            "focal = {}\ncx = {}\nbaseline = {}\nwidth = {}\nphase_period = {}\n",
            m.focal, m.cx, m.baseline, m.width, self.phase_period
        )
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let bad = |d: String| HarnessError::Format { path: path.to_path_buf(), detail: d };
        let mut vals = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line '{line}'")))?;
            let v: f64 = v.trim().parse().map_err(|_| bad(format!("bad number in '{line}'")))?;
            match k.trim() {
                key @ ("focal" | "cx" | "baseline" | "width" | "phase_period") => {
                    vals.insert(key.to_string(), v);
                }
                other => return Err(bad(format!("unknown projector key '{other}'"))),
            }
        }
        let get = |k: &str| vals.get(k).copied().ok_or_else(|| bad(format!("missing '{k}'")));
        let width = get("width")?;
        if width.fract() != 0.0 || width < 2.0 {
            return Err(bad("width must be an integer >= 2".into()));
        }
        Ok(Self {
            model: ProjectorModel {
                focal: get("focal")?,
                cx: get("cx")?,
                baseline: get("baseline")?,
                width: width as usize,
            },
            phase_period: get("phase_period")?,
        })
    }
}

fn sl_scene(name: &str, h: usize, w: usize) -> HarnessResult<(CameraRig, ProjectorFile, DepthMap)> {
    let camera = CameraRig::centered(w as f64, 5.0, h, w)?;
    let width = 1024usize;
    let projector = ProjectorModel {
        focal: width as f64,
        cx: (width as f64 - 1.0) / 2.0 + 0.1 * width as f64,
        baseline: 5.0,
        width,
    };
    let depth: Vec<f64> = match name {
        "plane" => vec![50.0; h * w],
        "ramp" => (0..h * w).map(|k| 40.0 + 20.0 * (k % w) as f64 / w as f64).collect(),
        _ => return Err(HarnessError::usage(format!("unknown structured-light scene '{name}' (plane or ramp)"))),
    };
    Ok((camera, ProjectorFile { model: projector, phase_period: 16.0 }, DepthMap::from_values(h, w, depth)?))
}

fn render_sl_captures(dir: &Path, name: &str, h: usize, w: usize) -> HarnessResult<DepthMap> {
    let (camera, proj, gt) = sl_scene(name, h, w)?;
    let coords = projector_coordinates(&gt, &camera, &proj.model)?;
    let set = generate_gray_patterns(proj.model.width)?;
    for k in 0..set.bit_count {
        write_gray_png8(&dir.join("patterns").join(format!("pattern_{k:02}.png")), &set.render(k, false, 1)?)?;
    }
    let (caps, invs) = render_gray_captures(&set, &coords, 0.1, 0.9)?;
    for (k, (c, i)) in caps.iter().zip(&invs).enumerate() {
        write_image_png16(&dir.join(format!("gray_{k:02}.png")), c)?;
        write_image_png16(&dir.join(format!("gray_inv_{k:02}.png")), i)?;
    }
    let phase = render_phase_captures(
        &coords,
        proj.phase_period,
        0.5,
        0.4,
        DEFAULT_PHASE_SHIFTS,
        DEFAULT_MODULATION_THRESHOLD,
    )?;
    for (k, c) in phase.captures.iter().enumerate() {
        write_image_png16(&dir.join(format!("phase_{k}.png")), c)?;
    }
    write_text(&dir.join("calibration.txt"), &Calibration::from_rig(&camera).to_text())?;
    write_text(&dir.join("projector.txt"), &proj.to_text())?;
    Ok(gt)
}

fn cmd_sl_decode(captures: Option<&Path>, synth: Option<&str>, res: &Resolution, common: &Common) -> HarnessResult<()> {
    let cfg = resolve(common, Some(res))?;
    let out = &common.out;
    let mut args = Vec::new();
    let (dir, gt) = match (captures, synth) {
        (Some(d), None) => {
            args.push(("captures", d.display().to_string()));
            (d.to_path_buf(), None)
        }
        (None, Some(name)) => {
            args.push(("synth", name.to_string()));
            let dir = out.join("captures");
            let gt = render_sl_captures(&dir, name, cfg.height, cfg.width)?;
            (dir, Some(gt))
        }
        _ => return Err(HarnessError::usage("sl-decode needs --captures DIR or --synth NAME")),
    };
    let proj = ProjectorFile::load(&dir.join("projector.txt"))?;
    let set = generate_gray_patterns(proj.model.width)?;
    let read_all = |prefix: &str| -> HarnessResult<Vec<ImagePlane>> {
        (0..set.bit_count).map(|k| read_image_png(&dir.join(format!("{prefix}_{k:02}.png")))).collect()
    };
    let (caps, invs) = (read_all("gray")?, read_all("gray_inv")?);
    let coarse = decode_gray(&set, &caps, &invs, DEFAULT_CONTRAST_EPSILON)?;
    let (h, w) = coarse.columns.dims();
    let camera = read_calibration(&dir.join("calibration.txt"))?.rig(h, w)?;
    let phase_paths: Vec<PathBuf> = (0..3).map(|k| dir.join(format!("phase_{k}.png"))).collect();
    let map = if phase_paths.iter().all(|p| p.is_file()) {
        let [a, b, c] = [&phase_paths[0], &phase_paths[1], &phase_paths[2]].map(|p| read_image_png(p));
        let phase = PhasePatternSet::new([a?, b?, c?], DEFAULT_PHASE_SHIFTS, DEFAULT_MODULATION_THRESHOLD)?;
        let (t, _) = modulation_depth(&phase);
        write_pfm(&out.join("modulation.pfm"), &PfmImage::from_f64(h, w, 1, t.values()))?;
        refine_with_phase(&coarse, &phase, proj.phase_period)?
    } else {
        coarse
    };
    write_pfm(&out.join("columns.pfm"), &PfmImage::from_f64(h, w, 1, map.columns.values()))?;
    write_mask_png(&out.join("certain.png"), &map.certain)?;
    let depth = triangulate(&map, &camera, &proj.model)?;
    write_depth(&out.join("depth.pfm"), &depth)?;
    if let Some(gt) = gt {
        let valid = BinaryMask::from_fn(h, w, |i, j| depth.get(i, j).is_some());
        let report = evaluate(&depth, &gt, &valid, &Default::default())?;
        write_metrics(&out.join("metrics.csv"), &report)?;
    }
    write_manifest(out, "sl-decode", &args, &cfg)
}

fn transform_text(t: &RigidTransform) -> String {
    let r = &t.rotation;
    let tr = &t.translation;
    (0..3).map(|i| format!("{} {} {} {}\n", r[(i, 0)], r[(i, 1)], r[(i, 2)], tr[i])).collect()
}

fn cmd_icp(source: &Path, target: &Path, common: &Common) -> HarnessResult<()> {
    let cfg = resolve(common, None)?;
    let out = &common.out;
    let (src, dst) = (read_ply(source)?, read_ply(target)?);
    let res = icp(&src, &dst, &IcpConfig { max_iter: cfg.icp_max_iter, tol: cfg.icp_tol })?;
    write_text(&out.join("transform.txt"), &transform_text(&res.transform))?;
    write_ply(&out.join("aligned.ply"), &src.transformed(&res.transform))?;
    let rows: Vec<Vec<String>> =
        res.history.iter().enumerate().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect();
    write_csv(&out.join("history.csv"), &["iteration", "rms"], &rows)?;
    println!("residual {} after {} iterations (converged: {})", res.residual, res.iterations_used, res.converged);
    write_manifest(
        out,
        "icp-register",
        &[("source", source.display().to_string()), ("target", target.display().to_string())],
        &cfg,
    )
}

fn cmd_mask(disparity: &Path, view: &str, common: &Common) -> HarnessResult<()> {
    let cfg = resolve(common, None)?;
    let view = match view {
        "left" => View::Left,
        "right" => View::Right,
        v => return Err(HarnessError::usage(format!("view must be left or right, got '{v}'"))),
    };
    let d = read_disparity(disparity)?;
    let m = blind_mask(&d, view);
    write_mask_png(&common.out.join("mask.png"), &m)?;
    println!("{} of {} pixels visible", m.count(), d.values().len());
    write_manifest(&common.out, "mask", &[("disparity", disparity.display().to_string())], &cfg)
}

fn cmd_ablate(synth: &str, seeds: usize, iters: Option<usize>, res: &Resolution, common: &Common) -> HarnessResult<()> {
    let mut cfg = resolve(common, Some(res))?;
    if let Some(n) = iters {
        cfg.iterations = n;
    }
    if seeds == 0 {
        return Err(HarnessError::usage("--seeds must be at least 1"));
    }
    let preset = ScenePreset::parse(synth).map_err(|e| HarnessError::usage(e.to_string()))?;
    let rows = ablate(preset, &cfg, seeds, worker_count()?)?;
    let mut header = vec!["config"];
    header.extend(METRIC_COLUMNS);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| std::iter::once(r.label.to_string()).chain(r.median().iter().map(|v| v.to_string())).collect())
        .collect();
    write_csv(&common.out.join("ablation.csv"), &header, &table)?;
    let mut run_header = vec!["config", "seed"];
    run_header.extend(METRIC_COLUMNS);
    let runs: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| r.runs.iter().map(move |(s, m)| metrics_rows(&[r.label.to_string(), s.to_string()], m)))
        .collect();
    write_csv(&common.out.join("ablation_runs.csv"), &run_header, &runs)?;
    for r in &rows {
        println!("{:>10}  rmse {}", r.label, r.median_rmse());
    }
    debug_assert_eq!(rows.len(), ABLATION_LABELS.len());
    write_manifest(&common.out, "ablate", &[("synth", preset.name().into()), ("seeds", seeds.to_string())], &cfg)
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> HarnessResult<()> {
    match &cli.command {
        Command::Synth { scene, res, common } => cmd_synth(scene, res, common),
        Command::Optimize { synth, left, right, calib, iters, export_clouds, res, common } => cmd_optimize(
            synth.as_deref(),
            left.as_deref(),
            right.as_deref(),
            calib.as_deref(),
            *iters,
            *export_clouds,
            res,
            common,
        ),
        Command::Eval { pred, gt, mask, dataset, layout, pred_dir, common } => cmd_eval(
            pred.as_deref(),
            gt.as_deref(),
            mask.as_deref(),
            dataset.as_deref(),
            layout.as_deref(),
            pred_dir.as_deref(),
            common,
        ),
        Command::SlDecode { captures, synth, res, common } => {
            cmd_sl_decode(captures.as_deref(), synth.as_deref(), res, common)
        }
        Command::IcpRegister { source, target, common } => cmd_icp(source, target, common),
        Command::Mask { disparity, view, common } => cmd_mask(disparity, view, common),
        Command::Ablate { synth, seeds, iters, res, common } => cmd_ablate(synth, *seeds, *iters, res, common),
    }
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

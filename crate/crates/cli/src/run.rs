use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;

use uvcycle::export::{evaluate_obj, layout_svg, points_obj_text, write_json, write_uv_obj, ChartSidecar};
use uvcycle::geometry::{load_mesh, load_points, load_uv_mesh};
use uvcycle::global::{extract_seams, train_global, GlobalRunConfig, IterationLog, SeamSet, SurfaceInput};
use uvcycle::losses::{ChartLossWeights, DynamicThresholds, GlobalLossWeights, ThresholdCoefs, UvLayout};
use uvcycle::multichart::{train_multichart, ChartIterationLog, ChartRunConfig};
use uvcycle::networks::{ChartArch, GlobalArch};
use uvcycle::{Error, Result};

use crate::manifest::{sha256_file, InputRef, Mode, RunConfig, RunManifest};
use crate::{ChartArgs, Command, EvalArgs, GlobalArgs, ReplayArgs, SeamArgs};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Global(a) => {
            let cfg = global_config(&a)?;
            let point_input = is_point_file(&a.common.input) || a.pointcloud;
            execute(&a.common.input, &a.common.out, RunConfig::Global(cfg), point_input, a.common.progress_every).map(|_| ())
        }
        Command::Charts(a) => {
            let cfg = chart_config(&a)?;
            execute(&a.common.input, &a.common.out, RunConfig::Charts(cfg), false, a.common.progress_every).map(|_| ())
        }
        Command::Eval(a) => eval(&a),
        Command::Seams(a) => seams(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn is_point_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| !e.eq_ignore_ascii_case("obj"))
}

fn global_config(a: &GlobalArgs) -> Result<GlobalRunConfig> {
    let c = &a.common;
    let weights = match &a.weights {
        Some(w) => GlobalLossWeights::from_slice(w).ok_or_else(|| Error::Argument("--weights needs 5 finite non-negative values".into()))?,
        None => GlobalLossWeights::default(),
    };
    let defaults = GlobalArch::default();
    let arch = match (c.hidden, a.latent) {
        (None, None) => defaults,
        (h, l) => {
            let h = h.unwrap_or(defaults.unwrap.channels[1]);
            GlobalArch::with_widths(h, l.unwrap_or(64.min(h)))
        }
    };
    let cfg = GlobalRunConfig {
        iterations: c.iters,
        seed: c.seed,
        lr: c.lr,
        ju: c.ju,
        jcut: a.jcut,
        thresholds: ThresholdCoefs {
            eps_coef: c.eps_coef,
            tau_coef: a.tau_coef,
            tau_spacing_coef: a.tau_spacing,
        },
        weights,
        point_cloud_mode: a.pointcloud || is_point_file(&c.input),
        checkpoint_every: c.checkpoint_every,
        checkpoint_dir: (c.checkpoint_every > 0).then(|| c.out.clone()),
        arch,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn chart_config(a: &ChartArgs) -> Result<ChartRunConfig> {
    let c = &a.common;
    let mut cfg = ChartRunConfig::new(a.charts);
    cfg.iterations = c.iters;
    cfg.seed = c.seed;
    cfg.lr = c.lr;
    cfg.ju = c.ju;
    cfg.thresholds.eps_coef = c.eps_coef;
    if let Some(w) = &a.weights {
        cfg.weights = ChartLossWeights::from_slice(w).ok_or_else(|| Error::Argument("--weights needs 3 finite non-negative values".into()))?;
    }
    if let Some(h) = c.hidden {
        cfg.arch = chart_arch(a.charts, h);
    }
    cfg.checkpoint_every = c.checkpoint_every;
    cfg.checkpoint_dir = (c.checkpoint_every > 0).then(|| c.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

/// Reduced chart networks: wrap blocks at half width, latent capped at 64.
pub fn chart_arch(charts: usize, hidden: usize) -> ChartArch {
    let half = (hidden / 2).max(1);
    ChartArch::with_widths(charts, hidden, half, half.min(64))
}

fn stem(input: &Path) -> String {
    input.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_string()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn global_progress(every: usize) -> impl FnMut(&IterationLog) {
    move |l: &IterationLog| {
        if every > 0 && l.iteration % every == 0 {
            let t = &l.terms;
            eprintln!(
                "iter={} lr={:e} unwrap={:e} wrap={:e} cycle={:e} diff={:e} tri={:e} normal={:e} total={:e}",
                l.iteration, l.lr, t.unwrap, t.wrap, t.cycle, t.diff, t.tri, l.normal, l.total
            );
        }
    }
}

fn chart_progress(every: usize) -> impl FnMut(&ChartIterationLog) {
    move |l: &ChartIterationLog| {
        if every > 0 && l.iteration % every == 0 {
            let t = &l.terms;
            eprintln!(
                "iter={} lr={:e} unwrap={:e} cycle={:e} tri={:e} charts={} total={:e}",
                l.iteration, l.lr, t.unwrap, t.cycle, t.tri, l.nonempty_charts, l.total
            );
        }
    }
}

/// Trains, writes every artifact plus the manifest, and returns the manifest.
pub fn execute(input: &Path, out: &Path, config: RunConfig, point_input: bool, progress_every: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let sha256 = sha256_file(input)?;
    create_dir(out)?;
    let name = stem(input);
    let mut artifacts = BTreeMap::new();
    let mode;

    match &config {
        RunConfig::Global(cfg) => {
            let obj_name = format!("{name}_uv.obj");
            let obj = out.join(&obj_name);
            let (seams, iterations) = if point_input {
                mode = Mode::Pointcloud;
                // normals are never used for point clouds
                let ps = if is_point_file(input) { load_points(input)? } else { load_mesh(input)?.to_point_set(false) };
                let cfg = GlobalRunConfig {
                    point_cloud_mode: true,
                    ..cfg.clone()
                };
                let res = train_global(SurfaceInput::from(&ps), &cfg, &mut global_progress(progress_every))?;
                write_text(&obj, &points_obj_text(ps.points.view(), &ps.normalization, res.uv.view()))?;
                let svg = layout_svg(&UvLayout::single_chart(res.uv.clone(), &[], vec![]), &seam_points(&res.uv, &res.seams));
                write_text(&out.join(format!("{name}_uv.svg")), &svg)?;
                (res.seams, cfg.iterations)
            } else {
                mode = Mode::Global;
                let mesh = load_mesh(input)?;
                let res = train_global(SurfaceInput::from(&mesh), cfg, &mut global_progress(progress_every))?;
                let layout = UvLayout::single_chart(res.uv.clone(), &mesh.faces, res.seams.vertices.clone());
                write_uv_obj(&obj, mesh.vertices.view(), &mesh.normalization, &mesh.faces, &layout)?;
                write_text(&out.join(format!("{name}_uv.svg")), &layout_svg(&layout, &seam_points(&res.uv, &res.seams)))?;
                (res.seams, cfg.iterations)
            };
            write_json(&out.join("seams.json"), &seams)?;
            let report = evaluate_obj(&obj, None, Some(&seams.vertices))?.with_run(iterations, started.elapsed().as_secs_f64(), cfg.seed);
            write_json(&out.join("report.json"), &report)?;
            artifacts.insert("obj".into(), obj_name);
            artifacts.insert("svg".into(), format!("{name}_uv.svg"));
            artifacts.insert("seams".into(), "seams.json".into());
        }
        RunConfig::Charts(cfg) => {
            mode = Mode::Multichart;
            let mesh = load_mesh(input)?;
            if mesh.faces.is_empty() {
                return Err(Error::Argument("multi-chart mode needs a mesh with faces".into()));
            }
            let res = train_multichart(&mesh, cfg, &mut chart_progress(progress_every))?;
            let obj_name = format!("{name}_atlas.obj");
            let obj = out.join(&obj_name);
            write_uv_obj(&obj, mesh.vertices.view(), &mesh.normalization, &mesh.faces, &res.layout)?;
            let sidecar = ChartSidecar {
                charts: cfg.charts(),
                vertex_chart: res.labels.clone(),
                face_chart: res.layout.face_chart.clone(),
                placements: res.atlas.placements.clone(),
            };
            write_json(&out.join("charts.json"), &sidecar)?;
            write_text(&out.join(format!("{name}_atlas.svg")), &layout_svg(&res.layout, &[]))?;
            let report = evaluate_obj(&obj, Some(&sidecar), None)?.with_run(cfg.iterations, started.elapsed().as_secs_f64(), cfg.seed);
            write_json(&out.join("report.json"), &report)?;
            artifacts.insert("obj".into(), obj_name);
            artifacts.insert("svg".into(), format!("{name}_atlas.svg"));
            artifacts.insert("charts".into(), "charts.json".into());
        }
    }
    artifacts.insert("report".into(), "report.json".into());
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        mode,
        input: InputRef {
            path: std::fs::canonicalize(input).unwrap_or_else(|_| input.to_path_buf()),
            sha256,
        },
        seed: config.seed(),
        config,
        artifacts,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(out)?;
    Ok(manifest)
}

fn seam_points(uv: &Array2<f64>, seams: &SeamSet) -> Vec<[f64; 2]> {
    seams.vertices.iter().map(|&i| [uv[[i, 0]], uv[[i, 1]]]).collect()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let charts: Option<ChartSidecar> = a.charts.as_deref().map(uvcycle::export::read_json).transpose()?;
    let seams: Option<SeamSet> = a.seams.as_deref().map(uvcycle::export::read_json).transpose()?;
    let report = evaluate_obj(&a.input, charts.as_ref(), seams.as_ref().map(|s| s.vertices.as_slice()))?;
    create_dir(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn seams(a: &SeamArgs) -> Result<()> {
    let (mesh, uv) = load_uv_mesh(&a.input)?;
    if a.jcut == 0 || a.jcut >= mesh.num_vertices() {
        return Err(Error::Argument(format!("--jcut must be in 1..{}", mesh.num_vertices())));
    }
    let coefs = ThresholdCoefs {
        tau_coef: a.tau_coef,
        tau_spacing_coef: a.tau_spacing,
        ..Default::default()
    };
    let th = DynamicThresholds::from_uv(uv.view(), &coefs);
    let set = extract_seams(mesh.vertices.view(), uv.view(), th.tau, a.jcut)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("seams.json"), &set)?;
    eprintln!("seams={} tau={:e}", set.len(), set.tau);
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    m.verify_input()?;
    let mut config = m.config.clone();
    let out: PathBuf = a.out.clone();
    match &mut config {
        RunConfig::Global(c) => {
            if c.checkpoint_dir.is_some() {
                c.checkpoint_dir = Some(out.clone());
            }
        }
        RunConfig::Charts(c) => {
            if c.checkpoint_dir.is_some() {
                c.checkpoint_dir = Some(out.clone());
            }
        }
    }
    execute(&m.input.path, &out, config, m.mode == Mode::Pointcloud, a.progress_every)?;
    Ok(())
}

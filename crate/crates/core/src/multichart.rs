//! Multi-chart training: a shared point embedding, soft chart assignment
//! and one 3D->2D->3D cycle per chart, followed by chart extraction and
//! atlas packing.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffkernel::checkpoint::{save_checkpoint, CheckpointManifest, VERSION};
use crate::diffkernel::{Gradients, LrSchedule, OptimizerState, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::geometry::{knn_self, NeighborTable, SurfaceMesh};
use crate::global::DivergenceGuard;
use crate::losses::{chart_eps, chart_losses, evaluate, ChartInputs, ChartLossWeights, DistortionReport, ThresholdCoefs, UvLayout};
use crate::networks::{normalize_normals, split_wrap_output, ChartArch, MultiChartNetworks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartRunConfig {
    pub iterations: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_floor: f64,
    pub ju: usize,
    pub thresholds: ThresholdCoefs,
    pub weights: ChartLossWeights,
    pub neighbor_refresh: usize,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Carries the chart count `K`.
    pub arch: ChartArch,
}

impl ChartRunConfig {
    pub fn new(charts: usize) -> Self {
        ChartRunConfig {
            iterations: 20_000,
            seed: 0,
            lr: 1e-3,
            lr_floor: 1e-5,
            ju: 5,
            thresholds: ThresholdCoefs::default(),
            weights: ChartLossWeights::default(),
            neighbor_refresh: 10,
            checkpoint_every: 0,
            checkpoint_dir: None,
            arch: ChartArch::standard(charts),
        }
    }

    pub fn charts(&self) -> usize {
        self.arch.charts
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Argument("at least one iteration is required".into()));
        }
        if !(self.lr > 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr) {
            return Err(Error::Argument("learning rates must satisfy 0 <= floor <= lr, lr > 0".into()));
        }
        if self.ju == 0 || self.neighbor_refresh == 0 || !(self.thresholds.eps_coef > 0.0) {
            return Err(Error::Argument("neighbor count, refresh period and eps coefficient must be positive".into()));
        }
        self.arch.validate()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::cosine(self.lr, self.lr_floor, self.iterations)
    }
}

/// Row argmax with ties resolved to the lowest column.
pub fn argmax_rows(s: ArrayView2<f64>) -> Vec<usize> {
    s.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &x) in r.iter().enumerate() {
                if x > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Vertices and UV points assigned to one chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoints {
    pub chart: usize,
    pub vertices: Vec<usize>,
    pub uv: Vec<[f64; 2]>,
}

/// Labels by row argmax of `s`, and every chart's members (empty charts included).
pub fn extract_charts(s: ArrayView2<f64>, uvs: &[Array2<f64>]) -> Result<(Vec<usize>, Vec<ChartPoints>)> {
    if uvs.len() != s.ncols() {
        return Err(Error::Shape(format!("{} UV maps for {} charts", uvs.len(), s.ncols())));
    }
    if uvs.iter().any(|q| q.dim() != (s.nrows(), 2)) {
        return Err(Error::Shape("every chart map needs one UV row per vertex".into()));
    }
    let labels = argmax_rows(s);
    let mut charts: Vec<ChartPoints> = (0..s.ncols())
        .map(|k| ChartPoints {
            chart: k,
            vertices: Vec::new(),
            uv: Vec::new(),
        })
        .collect();
    for (i, &k) in labels.iter().enumerate() {
        charts[k].vertices.push(i);
        charts[k].uv.push([uvs[k][[i, 0]], uvs[k][[i, 1]]]);
    }
    Ok((labels, charts))
}

/// Placement of one chart in the atlas: `atlas = scale * uv + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPlacement {
    pub chart: usize,
    pub scale: f64,
    pub offset: [f64; 2],
    /// Cell `[x0, y0, x1, y1]` reserved for the chart.
    pub cell: [f64; 4],
}

impl ChartPlacement {
    pub fn apply(&self, uv: [f64; 2]) -> [f64; 2] {
        [self.scale * uv[0] + self.offset[0], self.scale * uv[1] + self.offset[1]]
    }
}

/// Fraction of each cell side left empty around its chart (half per side).
pub const CELL_PADDING: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub placements: Vec<ChartPlacement>,
}

impl Atlas {
    pub fn placement(&self, chart: usize) -> Option<&ChartPlacement> {
        self.placements.iter().find(|p| p.chart == chart)
    }
}

/// Shelf packing of the non-empty charts into `[0, 1]^2`, keeping their
/// relative sizes. Charts are sorted by descending box height and placed
/// left to right on shelves; among all shelf widths that break at a chart
/// boundary the one with the smallest enclosing square wins.
pub fn pack_atlas(charts: &[ChartPoints]) -> Result<Atlas> {
    struct Item {
        chart: usize,
        min: [f64; 2],
        size: [f64; 2],
    }
    let mut items: Vec<Item> = charts
        .iter()
        .filter(|c| !c.uv.is_empty())
        .map(|c| {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for p in &c.uv {
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
            Item {
                chart: c.chart,
                min: lo,
                size: [hi[0] - lo[0], hi[1] - lo[1]],
            }
        })
        .collect();
    if items.is_empty() {
        return Err(Error::Argument("no non-empty chart to pack".into()));
    }
    if items.iter().any(|it| !(it.size[0].is_finite() && it.size[1].is_finite())) {
        return Err(Error::Argument("non-finite chart coordinates".into()));
    }
    // zero-extent charts still get a (tiny) cell
    let largest = items.iter().map(|it| it.size[0].max(it.size[1])).fold(0.0, f64::max);
    let floor = if largest > 0.0 { largest * 1e-6 } else { 1.0 };
    for it in &mut items {
        it.size = [it.size[0].max(floor), it.size[1].max(floor)];
    }
    items.sort_by(|a, b| b.size[1].total_cmp(&a.size[1]).then(a.chart.cmp(&b.chart)));

    let layout = |width: f64| {
        let mut pos = Vec::with_capacity(items.len());
        let (mut x, mut y, mut shelf_h, mut used_w) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for it in &items {
            if x > 0.0 && x + it.size[0] > width * (1.0 + 1e-12) {
                y += shelf_h;
                x = 0.0;
                shelf_h = 0.0;
            }
            pos.push([x, y]);
            x += it.size[0];
            used_w = used_w.max(x);
            shelf_h = shelf_h.max(it.size[1]);
        }
        (pos, used_w, y + shelf_h)
    };
    let max_w = items.iter().map(|it| it.size[0]).fold(0.0, f64::max);
    let total_w: f64 = items.iter().map(|it| it.size[0]).sum();
    // candidate widths, widest first
    let mut candidates = vec![total_w];
    let mut acc = 0.0;
    for it in &items {
        acc += it.size[0];
        if acc >= max_w && acc < total_w {
            candidates.push(acc);
        }
    }
    candidates.push(max_w);
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let mut best: Option<(Vec<[f64; 2]>, f64)> = None;
    for w in candidates {
        let (pos, uw, uh) = layout(w);
        let side = uw.max(uh);
        if best.as_ref().is_none_or(|(_, s)| side < *s) {
            best = Some((pos, side));
        }
    }
    let (pos, side) = best.expect("at least one candidate");
    let unit = 1.0 / side;
    let inner = 1.0 - CELL_PADDING;

    let placements = items
        .iter()
        .zip(&pos)
        .map(|(it, p)| {
            let cell = [p[0] * unit, p[1] * unit, (p[0] + it.size[0]) * unit, (p[1] + it.size[1]) * unit];
            let scale = unit * inner;
            // centre the shrunk chart in its cell
            let cx = 0.5 * (cell[0] + cell[2]);
            let cy = 0.5 * (cell[1] + cell[3]);
            let offset = [
                cx - scale * (it.min[0] + 0.5 * it.size[0]),
                cy - scale * (it.min[1] + 0.5 * it.size[1]),
            ];
            ChartPlacement {
                chart: it.chart,
                scale,
                offset,
                cell,
            }
        })
        .collect();
    Ok(Atlas { placements })
}

/// Chart of each face: the most frequent vertex label, lowest label on ties.
pub fn face_charts(faces: &[[usize; 3]], labels: &[usize]) -> Vec<usize> {
    faces
        .iter()
        .map(|f| {
            let l = f.map(|v| labels[v]);
            if l[1] == l[2] {
                l[1]
            } else if l[0] == l[1] || l[0] == l[2] {
                l[0]
            } else {
                *l.iter().min().unwrap()
            }
        })
        .collect()
}

/// Atlas texture coordinates per face corner. A corner takes the UV of its
/// vertex in the face's chart, so boundary vertices appear once per chart.
pub fn atlas_layout(faces: &[[usize; 3]], labels: &[usize], uvs: &[Array2<f64>], atlas: &Atlas) -> Result<UvLayout> {
    let fc = face_charts(faces, labels);
    let mut rows: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut uv: Vec<[f64; 2]> = Vec::new();
    let mut row_of = |v: usize, k: usize| -> Result<usize> {
        if let Some(&r) = rows.get(&(v, k)) {
            return Ok(r);
        }
        let place = atlas
            .placement(k)
            .ok_or_else(|| Error::Argument(format!("chart {k} has faces but no atlas cell")))?;
        uv.push(place.apply([uvs[k][[v, 0]], uvs[k][[v, 1]]]));
        rows.insert((v, k), uv.len() - 1);
        Ok(uv.len() - 1)
    };
    // vertices first, in their own chart, so row order is stable
    for (v, &k) in labels.iter().enumerate() {
        row_of(v, k)?;
    }
    let mut corners = Vec::with_capacity(faces.len());
    for (f, &k) in faces.iter().zip(&fc) {
        corners.push([row_of(f[0], k)?, row_of(f[1], k)?, row_of(f[2], k)?]);
    }
    Ok(UvLayout {
        uv: Array2::from_shape_fn((uv.len(), 2), |(i, d)| uv[i][d]),
        corners,
        face_chart: fc,
        vertex_chart: Some(labels.to_vec()),
        seam_vertices: Vec::new(),
    })
}

/// Unweighted loss sums of one multi-chart evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChartTerms {
    pub unwrap: f64,
    pub cycle: f64,
    pub tri: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartIterationLog {
    pub iteration: usize,
    pub lr: f64,
    pub terms: ChartTerms,
    pub total: f64,
    pub nonempty_charts: usize,
}

#[derive(Debug, Clone)]
pub struct ChartEval {
    pub terms: ChartTerms,
    pub total: f64,
    pub scores: Array2<f64>,
    pub uvs: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub neighbors: Vec<NeighborTable>,
}

/// The multi-chart objective for a fixed mesh.
pub struct ChartProblem<'n, 'a> {
    pub nets: &'n MultiChartNetworks,
    pub mesh: &'a SurfaceMesh,
    pub weights: ChartLossWeights,
    pub coefs: ThresholdCoefs,
    pub ju: usize,
}

impl<'n, 'a> ChartProblem<'n, 'a> {
    /// Evaluates the summed chart losses. Neighbor tables are rebuilt from
    /// the live chart maps when `neighbors` is `None`; `eps` overrides the
    /// per-chart thresholds. With `grad`, differentiates the total.
    pub fn run(
        &self,
        store: &ParamStore,
        neighbors: Option<&[NeighborTable]>,
        eps: Option<&[f64]>,
        grad: bool,
    ) -> Result<(ChartEval, Option<Gradients>)> {
        let nets = self.nets;
        let k_count = nets.charts.len();
        let v = self.mesh.num_vertices();
        let mut tape = Tape::new(store);
        let p = tape.constant(self.mesh.vertices.clone());
        let h = nets.embed.forward(&mut tape, p)?.output;
        let logits = nets.assign.forward(&mut tape, h)?.output;
        let s = tape.softmax_rows(logits);
        let mut branches = Vec::with_capacity(k_count);
        for c in &nets.charts {
            let q = c.unwrap.forward(&mut tape, h)?.output;
            let out = c.wrap.forward(&mut tape, q)?.output;
            let pc = tape.cols(out, 0, 3)?;
            let nc = tape.cols(out, 3, 6)?;
            branches.push((q, pc, nc));
        }
        tape.status()?;

        let scores = tape.value(s).clone();
        let labels = argmax_rows(scores.view());
        let uvs: Vec<Array2<f64>> = branches.iter().map(|b| tape.value(b.0).clone()).collect();
        let neighbors: Vec<NeighborTable> = match neighbors {
            Some(n) => n.to_vec(),
            None => uvs.iter().map(|q| knn_self(q.view(), self.ju)).collect::<Result<_>>()?,
        };

        let mut terms = ChartTerms::default();
        let mut total = 0.0;
        let mut nodes = Vec::with_capacity(k_count);
        for (k, &(q, pc, nc)) in branches.iter().enumerate() {
            let col: Vec<f64> = scores.column(k).to_vec();
            let e = match eps {
                Some(e) => e[k],
                None => chart_eps(uvs[k].view(), &labels, k, &self.coefs),
            };
            let out = chart_losses(
                &ChartInputs {
                    scores: Some(&col),
                    q: uvs[k].view(),
                    p: self.mesh.vertices.view(),
                    p_cycle: tape.value(pc).view(),
                    normals: Some(self.mesh.normals.view()),
                    n_cycle: tape.value(nc).view(),
                    faces: &self.mesh.faces,
                    neighbors: &neighbors[k],
                    eps: e,
                },
                &self.weights,
            );
            terms.unwrap += out.unwrap;
            terms.cycle += out.cycle;
            terms.tri += out.tri;
            total += out.value;
            let mut gs = Array2::zeros((v, k_count));
            gs.column_mut(k).assign(&ndarray::Array1::from(out.grad_scores));
            let node = tape.loss(
                &format!("chart{k}"),
                out.value,
                vec![q, pc, nc, s],
                vec![out.grad_q, out.grad_p_cycle, out.grad_n_cycle, gs],
            )?;
            nodes.push((node, 1.0));
        }
        if !total.is_finite() {
            return Err(Error::numeric("chart loss"));
        }
        let grads = if grad {
            let root = tape.combine(nodes)?;
            Some(tape.backward(root)?)
        } else {
            None
        };
        Ok((
            ChartEval {
                terms,
                total,
                scores,
                uvs,
                labels,
                neighbors,
            },
            grads,
        ))
    }
}

/// Output of a multi-chart run.
#[derive(Debug, Clone)]
pub struct ChartResult {
    pub labels: Vec<usize>,
    pub charts: Vec<ChartPoints>,
    /// Every vertex in every chart's map (`K` arrays of `V x 2`).
    pub chart_uvs: Vec<Array2<f64>>,
    pub scores: Array2<f64>,
    pub atlas: Atlas,
    /// Per-vertex atlas coordinates (each vertex in its own chart).
    pub atlas_uv: Array2<f64>,
    pub layout: UvLayout,
    pub report: DistortionReport,
    pub history: Vec<ChartIterationLog>,
    pub rollbacks: usize,
    pub store: ParamStore,
    pub nets: MultiChartNetworks,
}

impl ChartResult {
    pub fn nonempty_charts(&self) -> usize {
        self.charts.iter().filter(|c| !c.vertices.is_empty()).count()
    }
}

pub fn train_multichart(mesh: &SurfaceMesh, cfg: &ChartRunConfig, observer: &mut dyn FnMut(&ChartIterationLog)) -> Result<ChartResult> {
    cfg.validate()?;
    let v = mesh.num_vertices();
    if v < 4 {
        return Err(Error::Argument(format!("need at least 4 vertices, got {v}")));
    }
    if cfg.charts() > v {
        return Err(Error::Argument(format!("{} charts for {v} vertices", cfg.charts())));
    }
    if cfg.ju >= v {
        return Err(Error::Argument(format!("ju must be below the vertex count {v}")));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let nets = MultiChartNetworks::new(&mut store, cfg.arch.clone(), &mut rng)?;
    let problem = ChartProblem {
        nets: &nets,
        mesh,
        weights: cfg.weights,
        coefs: cfg.thresholds,
        ju: cfg.ju,
    };
    let schedule = cfg.schedule();
    let mut opt = OptimizerState::new(&store, cfg.lr);
    let mut neighbors: Option<Vec<NeighborTable>> = None;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut guard = DivergenceGuard::new(&store, &opt);

    for it in 0..cfg.iterations {
        let cached = if it % cfg.neighbor_refresh == 0 { None } else { neighbors.as_deref() };
        let (eval, grads) = problem.run(&store, cached, None, true)?;
        if cached.is_none() {
            neighbors = Some(eval.neighbors.clone());
        }
        let lr = schedule.at(it) * guard.lr_scale;
        let log = ChartIterationLog {
            iteration: it,
            lr,
            terms: eval.terms,
            total: eval.total,
            nonempty_charts: count_nonempty(&eval.labels, cfg.charts()),
        };
        observer(&log);
        history.push(log);
        if guard.check(it, eval.total, &mut store, &mut opt)? {
            continue;
        }
        store.accumulate(&grads.expect("gradients requested"))?;
        opt.lr = lr;
        opt.step(&mut store);
        store.check_finite()?;
        let done = it + 1;
        guard.after_step(done, &store, &opt);
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(dir, "checkpoint", &store, &chart_manifest(&nets, &store, cfg.seed, done))?;
            }
        }
    }

    let (eval, _) = problem.run(&store, None, None, false)?;
    let (labels, charts) = extract_charts(eval.scores.view(), &eval.uvs)?;
    let atlas = pack_atlas(&charts)?;
    let atlas_uv = Array2::from_shape_fn((v, 2), |(i, d)| {
        let k = labels[i];
        atlas.placement(k).expect("labeled chart is packed").apply([eval.uvs[k][[i, 0]], eval.uvs[k][[i, 1]]])[d]
    });
    let layout = atlas_layout(&mesh.faces, &labels, &eval.uvs, &atlas)?;
    let report = evaluate(mesh.vertices.view(), &mesh.faces, &layout)?.with_run(cfg.iterations, started.elapsed().as_secs_f64(), cfg.seed);
    Ok(ChartResult {
        labels,
        charts,
        chart_uvs: eval.uvs,
        scores: eval.scores,
        atlas,
        atlas_uv,
        layout,
        report,
        history,
        rollbacks: guard.rollbacks,
        store,
        nets,
    })
}

fn count_nonempty(labels: &[usize], k: usize) -> usize {
    let mut seen = vec![false; k];
    labels.iter().for_each(|&l| seen[l] = true);
    seen.iter().filter(|&&x| x).count()
}

/// Chart maps after the final step: `(scores, per-chart UV)`.
pub fn chart_outputs(nets: &MultiChartNetworks, store: &ParamStore, p: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let h = nets.embed(store, p)?;
    let s = nets.assign(store, h.view())?;
    let uvs = (0..nets.charts.len()).map(|k| nets.chart_uv(store, k, h.view())).collect::<Result<_>>()?;
    Ok((s, uvs))
}

/// Positions and unit normals chart `k` reconstructs from its UV map.
pub fn chart_wrap(nets: &MultiChartNetworks, store: &ParamStore, k: usize, q: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let out = nets.charts[k].wrap.eval(store, q)?;
    let (p, n) = split_wrap_output(out.view());
    Ok((p, normalize_normals(n.view())))
}

pub fn chart_manifest(nets: &MultiChartNetworks, store: &ParamStore, seed: u64, iteration: usize) -> CheckpointManifest {
    CheckpointManifest {
        format_version: VERSION,
        seed,
        iteration,
        networks: nets.networks().into_iter().map(|(n, m)| (n, m.spec.channels.clone())).collect(),
        tensors: store.iter().map(|t| t.name.clone()).collect(),
    }
}

//! Single-chart training: the 2D->3D->2D and 3D->2D->3D cycles driven
//! jointly, followed by seam extraction and evaluation.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffkernel::checkpoint::{save_checkpoint, CheckpointManifest, VERSION};
use crate::diffkernel::{Gradients, LrSchedule, OptimizerState, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn_self, one_ring, KdTree, NeighborTable, PointSet, SurfaceMesh};
use crate::losses::{
    chamfer_grad, conformal_tdl_grad_with, eigen_gap_grad, evaluate, evaluate_points, face_angles, global_loss,
    unwrapping_loss_grad, weighted_cosine, weighted_l1, DistortionReport, DynamicThresholds, GlobalLossWeights, LossTerms,
    ThresholdCoefs, UvLayout,
};
use crate::networks::{sample_grid, GlobalArch, GlobalNetworks};

/// Where seam extraction looks for a vertex's 3D neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SeamNeighbors {
    /// `J_cut` Euclidean nearest neighbors.
    #[default]
    Euclidean,
    /// Mesh one-ring (falls back to Euclidean without faces).
    OneRing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRunConfig {
    pub iterations: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_floor: f64,
    /// UV neighbors per point in the unwrapping hinge.
    pub ju: usize,
    /// 3D neighbors per point in seam extraction.
    pub jcut: usize,
    pub thresholds: ThresholdCoefs,
    pub weights: GlobalLossWeights,
    /// Drops the normal cycle term and the triangle term.
    pub point_cloud_mode: bool,
    /// Iterations between rebuilds of the UV neighbor table.
    pub neighbor_refresh: usize,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub arch: GlobalArch,
    pub seam_neighbors: SeamNeighbors,
}

impl Default for GlobalRunConfig {
    fn default() -> Self {
        GlobalRunConfig {
            iterations: 20_000,
            seed: 0,
            lr: 1e-3,
            lr_floor: 1e-5,
            ju: 5,
            jcut: 3,
            thresholds: ThresholdCoefs::default(),
            weights: GlobalLossWeights::default(),
            point_cloud_mode: false,
            neighbor_refresh: 10,
            checkpoint_every: 0,
            checkpoint_dir: None,
            arch: GlobalArch::default(),
            seam_neighbors: SeamNeighbors::Euclidean,
        }
    }
}

impl GlobalRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Argument("at least one iteration is required".into()));
        }
        let c = &self.thresholds;
        if !(c.eps_coef > 0.0 && c.tau_coef > 0.0 && c.tau_spacing_coef >= 0.0) {
            return Err(Error::Argument("threshold coefficients must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr) {
            return Err(Error::Argument("learning rates must satisfy 0 <= floor <= lr, lr > 0".into()));
        }
        if self.ju == 0 || self.jcut == 0 || self.neighbor_refresh == 0 {
            return Err(Error::Argument("neighbor counts and refresh period must be positive".into()));
        }
        self.arch.validate()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::cosine(self.lr, self.lr_floor, self.iterations)
    }
}

/// Positions, optional normals and faces of the surface being parameterized.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceInput<'a> {
    pub points: ArrayView2<'a, f64>,
    pub normals: Option<ArrayView2<'a, f64>>,
    pub faces: &'a [[usize; 3]],
}

impl<'a> From<&'a SurfaceMesh> for SurfaceInput<'a> {
    fn from(m: &'a SurfaceMesh) -> Self {
        SurfaceInput {
            points: m.vertices.view(),
            normals: Some(m.normals.view()),
            faces: &m.faces,
        }
    }
}

impl<'a> From<&'a PointSet> for SurfaceInput<'a> {
    fn from(p: &'a PointSet) -> Self {
        SurfaceInput {
            points: p.points.view(),
            normals: p.normals.as_ref().map(|n| n.view()),
            faces: &[],
        }
    }
}

/// Seam vertices with their largest UV gap to a 3D neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamSet {
    pub tau: f64,
    pub vertices: Vec<usize>,
    pub eta: Vec<f64>,
}

impl SeamSet {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }
}

/// Marks vertex `i` when the largest UV distance to one of its neighbors
/// exceeds `tau`.
pub fn seams_from_neighbors<'n>(q: ArrayView2<f64>, neighbors: impl Fn(usize) -> &'n [usize], tau: f64) -> SeamSet {
    let mut out = SeamSet {
        tau,
        vertices: Vec::new(),
        eta: Vec::new(),
    };
    for i in 0..q.nrows() {
        let eta = neighbors(i)
            .iter()
            .map(|&j| ((q[[i, 0]] - q[[j, 0]]).powi(2) + (q[[i, 1]] - q[[j, 1]]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        if eta > tau {
            out.vertices.push(i);
            out.eta.push(eta);
        }
    }
    out
}

/// Seams from each point's `jcut` Euclidean nearest neighbors in `p`.
pub fn extract_seams(p: ArrayView2<f64>, q: ArrayView2<f64>, tau: f64, jcut: usize) -> Result<SeamSet> {
    if p.nrows() != q.nrows() {
        return Err(Error::Shape(format!("{} points but {} UV rows", p.nrows(), q.nrows())));
    }
    let nb = knn_self(p, jcut)?;
    Ok(seams_from_neighbors(q, |i| nb.neighbors(i), tau))
}

/// Progress of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub lr: f64,
    pub terms: LossTerms,
    /// The normal part of the cycle term (already included in `terms.cycle`).
    pub normal: f64,
    pub total: f64,
}

/// Selects one term (unit weight) or the weighted total for differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalTerm {
    Unwrap,
    Wrap,
    Cycle,
    Diff,
    Tri,
}

impl GlobalTerm {
    pub const ALL: [GlobalTerm; 5] = [GlobalTerm::Unwrap, GlobalTerm::Wrap, GlobalTerm::Cycle, GlobalTerm::Diff, GlobalTerm::Tri];
}

#[derive(Debug, Clone)]
pub struct GlobalEval {
    pub terms: LossTerms,
    pub normal: f64,
    pub total: f64,
    /// UV coordinates of the input points.
    pub q: Array2<f64>,
    pub thresholds: DynamicThresholds,
}

/// The objective for fixed input data.
pub struct GlobalProblem<'n, 'a> {
    pub nets: &'n GlobalNetworks,
    pub input: SurfaceInput<'a>,
    pub grid: Array2<f64>,
    pub weights: GlobalLossWeights,
    pub coefs: ThresholdCoefs,
    theta: Vec<[Option<f64>; 3]>,
    tree: KdTree,
}

impl<'n, 'a> GlobalProblem<'n, 'a> {
    pub fn new(nets: &'n GlobalNetworks, input: SurfaceInput<'a>, weights: GlobalLossWeights, coefs: ThresholdCoefs) -> Result<Self> {
        let v = input.points.nrows();
        if input.points.ncols() != 3 {
            return Err(Error::Shape("points must have 3 columns".into()));
        }
        if let Some(n) = input.normals {
            if n.dim() != (v, 3) {
                return Err(Error::Shape("normals must match points".into()));
            }
        }
        Ok(GlobalProblem {
            nets,
            input,
            grid: sample_grid(v),
            weights,
            coefs,
            theta: face_angles(input.points, input.faces),
            tree: KdTree::new(input.points)?,
        })
    }

    /// Evaluates every term; with `target`, also differentiates the selected
    /// term (`Some(term)`, unit weight) or the weighted total (`None`).
    /// `eps` overrides the hinge threshold taken from the live UV box.
    pub fn run(
        &self,
        store: &ParamStore,
        neighbors: &NeighborTable,
        eps: Option<f64>,
        target: Option<Option<GlobalTerm>>,
    ) -> Result<(GlobalEval, Option<Gradients>)> {
        let nets = self.nets;
        let v = self.input.points.nrows();
        let mut tape = Tape::new(store);

        // 2D -> 3D -> 2D
        let g = tape.constant(self.grid.clone());
        let q_hat = nets.deform.forward(&mut tape, g)?.output;
        let wrap_a = nets.wrap.forward(&mut tape, q_hat)?;
        let p_hat = tape.cols(wrap_a.output, 0, 3)?;
        let p_hat_cut = nets.cut.forward(&mut tape, p_hat)?.output;
        let q_hat_cycle = nets.unwrap.forward(&mut tape, p_hat_cut)?.output;

        // 3D -> 2D -> 3D
        let p = tape.constant(self.input.points.to_owned());
        let p_cut = nets.cut.forward(&mut tape, p)?.output;
        let q = nets.unwrap.forward(&mut tape, p_cut)?.output;
        let wrap_b = nets.wrap.forward(&mut tape, q)?;
        let p_cycle = tape.cols(wrap_b.output, 0, 3)?;
        let n_cycle = tape.cols(wrap_b.output, 3, 6)?;

        // wrap-map partial derivatives at both UV sets
        let mut partials = Vec::with_capacity(4);
        for trace in [&wrap_b, &wrap_a] {
            for dir in [[1.0, 0.0], [0.0, 1.0]] {
                let t = tape.constant(Array2::from_shape_fn((v, 2), |(_, d)| dir[d]));
                let jt = nets.wrap.tangent(&mut tape, trace, t)?;
                partials.push(tape.cols(jt, 0, 3)?);
            }
        }
        tape.status()?;

        let q_val = tape.value(q).clone();
        let thresholds = DynamicThresholds::from_uv(q_val.view(), &self.coefs);
        let eps = eps.unwrap_or(thresholds.eps);

        let (u_sum, gq_u, _) = unwrapping_loss_grad(q_val.view(), neighbors, eps, None);
        let unwrap = tape.loss("unwrap", u_sum / v as f64, vec![q], vec![gq_u / v as f64])?;

        let (cd, g_phat, _) = chamfer_grad(tape.value(p_hat).view(), self.input.points, Some(&self.tree))?;
        let wrap = tape.loss("wrap", cd, vec![p_hat], vec![g_phat])?;

        let (pos, g_pc, _) = weighted_l1(tape.value(p_cycle).view(), self.input.points, None);
        let (uvc, g_qc, _) = weighted_l1(tape.value(q_hat_cycle).view(), tape.value(q_hat).view(), None);
        let (normal, g_nc) = match self.input.normals {
            Some(n) => {
                let (c, g, _) = weighted_cosine(n, tape.value(n_cycle).view(), None);
                (c, g)
            }
            None => (0.0, Array2::zeros((v, 3))),
        };
        let g_qh = -&g_qc;
        let cycle = tape.loss(
            "cycle",
            pos + uvc + normal,
            vec![p_cycle, q_hat_cycle, q_hat, n_cycle],
            vec![g_pc, g_qc, g_qh, g_nc],
        )?;

        let (d_b, gu_b, gv_b) = eigen_gap_grad(tape.value(partials[0]).view(), tape.value(partials[1]).view());
        let (d_a, gu_a, gv_a) = eigen_gap_grad(tape.value(partials[2]).view(), tape.value(partials[3]).view());
        let diff = tape.loss(
            "diff",
            0.5 * (d_a + d_b),
            partials.clone(),
            vec![gu_b * 0.5, gv_b * 0.5, gu_a * 0.5, gv_a * 0.5],
        )?;

        let (tri_v, g_tri) = if self.input.faces.is_empty() {
            (0.0, Array2::zeros((v, 2)))
        } else {
            conformal_tdl_grad_with(&self.theta, self.input.faces, q_val.view())
        };
        let tri = tape.loss("tri", tri_v, vec![q], vec![g_tri])?;

        let terms = LossTerms {
            unwrap: tape.scalar(unwrap),
            wrap: tape.scalar(wrap),
            cycle: tape.scalar(cycle),
            diff: tape.scalar(diff),
            tri: tape.scalar(tri),
        };
        let total = global_loss(&terms, &self.weights)?;
        tape.status()?;

        let grads = match target {
            None => None,
            Some(sel) => {
                let w = &self.weights;
                let pick = |t: GlobalTerm| -> Var {
                    match t {
                        GlobalTerm::Unwrap => unwrap,
                        GlobalTerm::Wrap => wrap,
                        GlobalTerm::Cycle => cycle,
                        GlobalTerm::Diff => diff,
                        GlobalTerm::Tri => tri,
                    }
                };
                let root = match sel {
                    Some(t) => tape.combine(vec![(pick(t), 1.0)])?,
                    None => tape.combine(vec![
                        (unwrap, w.unwrap),
                        (wrap, w.wrap),
                        (cycle, w.cycle),
                        (diff, w.diff),
                        (tri, w.tri),
                    ])?,
                };
                Some(tape.backward(root)?)
            }
        };
        Ok((
            GlobalEval {
                terms,
                normal,
                total,
                q: q_val,
                thresholds,
            },
            grads,
        ))
    }
}

/// Output of a global run.
#[derive(Debug, Clone)]
pub struct UVResult {
    pub uv: Array2<f64>,
    pub seams: SeamSet,
    pub report: DistortionReport,
    pub thresholds: DynamicThresholds,
    /// Weighted total per iteration.
    pub history: Vec<f64>,
    pub last: IterationLog,
    pub store: ParamStore,
    pub nets: GlobalNetworks,
    /// Learning-rate halvings triggered by the divergence guard.
    pub rollbacks: usize,
}

/// Iteration whose loss sets the divergence reference.
pub const DIVERGENCE_REFERENCE: usize = 100;
pub const DIVERGENCE_FACTOR: f64 = 10.0;
const MAX_ROLLBACKS: usize = 8;
const SNAPSHOT_EVERY: usize = 100;

/// Rolls training back to the last snapshot, at half the learning rate,
/// when the loss climbs far above its early reference value.
pub(crate) struct DivergenceGuard {
    pub lr_scale: f64,
    pub rollbacks: usize,
    reference: Option<f64>,
    snapshot: (Vec<Array2<f64>>, OptimizerState),
}

impl DivergenceGuard {
    pub fn new(store: &ParamStore, opt: &OptimizerState) -> Self {
        DivergenceGuard {
            lr_scale: 1.0,
            rollbacks: 0,
            reference: None,
            snapshot: (store.snapshot(), opt.clone()),
        }
    }

    /// `Ok(true)` when the step must be skipped because state was rolled back.
    pub fn check(&mut self, it: usize, total: f64, store: &mut ParamStore, opt: &mut OptimizerState) -> Result<bool> {
        if it == DIVERGENCE_REFERENCE {
            self.reference = Some(total);
        }
        match self.reference {
            Some(r) if total > DIVERGENCE_FACTOR * r => {
                self.rollbacks += 1;
                if self.rollbacks > MAX_ROLLBACKS {
                    return Err(Error::numeric("training diverged"));
                }
                self.lr_scale *= 0.5;
                store.restore(&self.snapshot.0)?;
                *opt = self.snapshot.1.clone();
                log::warn!("loss {total} exceeded {DIVERGENCE_FACTOR}x reference at iteration {it}; rolled back, lr scale {}", self.lr_scale);
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Call after a completed step; `done` counts finished steps.
    pub fn after_step(&mut self, done: usize, store: &ParamStore, opt: &OptimizerState) {
        if done % SNAPSHOT_EVERY == 0 {
            self.snapshot = (store.snapshot(), opt.clone());
        }
    }
}

pub fn train_global(input: SurfaceInput, cfg: &GlobalRunConfig, observer: &mut dyn FnMut(&IterationLog)) -> Result<UVResult> {
    cfg.validate()?;
    let v = input.points.nrows();
    if v < 4 {
        return Err(Error::Argument(format!("need at least 4 points, got {v}")));
    }
    if cfg.ju >= v || cfg.jcut >= v {
        return Err(Error::Argument(format!("neighbor counts must be below the point count {v}")));
    }
    let input = if cfg.point_cloud_mode {
        SurfaceInput {
            normals: None,
            faces: &[],
            ..input
        }
    } else {
        input
    };
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let nets = GlobalNetworks::new(&mut store, cfg.arch.clone(), &mut rng)?;
    let problem = GlobalProblem::new(&nets, input, cfg.weights, cfg.thresholds)?;
    let schedule = cfg.schedule();
    let mut opt = OptimizerState::new(&store, cfg.lr);

    let mut neighbors = knn_self(nets.parameterize(&store, input.points)?.view(), cfg.ju)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut last = None;
    let mut guard = DivergenceGuard::new(&store, &opt);

    for it in 0..cfg.iterations {
        if it > 0 && it % cfg.neighbor_refresh == 0 {
            neighbors = knn_self(nets.parameterize(&store, input.points)?.view(), cfg.ju)?;
        }
        let (eval, grads) = problem.run(&store, &neighbors, None, Some(None))?;
        let lr = schedule.at(it) * guard.lr_scale;
        let log = IterationLog {
            iteration: it,
            lr,
            terms: eval.terms,
            normal: eval.normal,
            total: eval.total,
        };
        observer(&log);
        history.push(eval.total);
        last = Some(log);

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
                save_checkpoint(dir, "checkpoint", &store, &global_manifest(&nets, &store, cfg.seed, done))?;
            }
        }
    }

    drop(problem);

    let uv = nets.parameterize(&store, input.points)?;
    if uv.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("final UV coordinates"));
    }
    let thresholds = DynamicThresholds::from_uv(uv.view(), &cfg.thresholds);
    let seams = match cfg.seam_neighbors {
        SeamNeighbors::OneRing if !input.faces.is_empty() => {
            let rings = one_ring(v, input.faces);
            seams_from_neighbors(uv.view(), |i| rings[i].as_slice(), thresholds.tau)
        }
        _ => extract_seams(input.points, uv.view(), thresholds.tau, cfg.jcut)?,
    };
    let report = if input.faces.is_empty() {
        evaluate_points(input.points, uv.view(), &seams.vertices)?
    } else {
        evaluate(
            input.points,
            input.faces,
            &UvLayout::single_chart(uv.clone(), input.faces, seams.vertices.clone()),
        )?
    };
    let report = report.with_run(cfg.iterations, started.elapsed().as_secs_f64(), cfg.seed);
    Ok(UVResult {
        uv,
        seams,
        report,
        thresholds,
        history,
        last: last.expect("at least one iteration"),
        store,
        nets,
        rollbacks: guard.rollbacks,
    })
}

pub fn global_manifest(nets: &GlobalNetworks, store: &ParamStore, seed: u64, iteration: usize) -> CheckpointManifest {
    CheckpointManifest {
        format_version: VERSION,
        seed,
        iteration,
        networks: nets
            .networks()
            .into_iter()
            .map(|(n, m)| (n.to_string(), m.spec.channels.clone()))
            .collect(),
        tensors: store.iter().map(|t| t.name.clone()).collect(),
    }
}

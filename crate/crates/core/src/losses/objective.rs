use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cycle::{weighted_cosine, weighted_l1};
use super::triangle::isometric_tdl_grad;
use super::unwrapping::unwrapping_loss_grad;
use super::weights::{ChartLossWeights, GlobalLossWeights, ThresholdCoefs};
use crate::error::{Error, Result};
use crate::geometry::{square_side, NeighborTable};

/// Per-term values of the global objective, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub unwrap: f64,
    pub wrap: f64,
    pub cycle: f64,
    pub diff: f64,
    pub tri: f64,
}

impl LossTerms {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("unwrap", self.unwrap),
            ("wrap", self.wrap),
            ("cycle", self.cycle),
            ("diff", self.diff),
            ("tri", self.tri),
        ]
    }
}

/// Weighted sum of the global terms. Fails on the first non-finite term.
pub fn global_loss(terms: &LossTerms, w: &GlobalLossWeights) -> Result<f64> {
    if let Some((name, _)) = terms.named().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::numeric(format!("{name} loss")));
    }
    Ok(w.unwrap * terms.unwrap + w.wrap * terms.wrap + w.cycle * terms.cycle + w.diff * terms.diff + w.tri * terms.tri)
}

/// Everything one chart's loss reads. `scores = None` means unit scores.
#[derive(Debug, Clone, Copy)]
pub struct ChartInputs<'a> {
    pub scores: Option<&'a [f64]>,
    /// This chart's UV map of every vertex.
    pub q: ArrayView2<'a, f64>,
    /// Input positions, also the 3D triangle corners.
    pub p: ArrayView2<'a, f64>,
    pub p_cycle: ArrayView2<'a, f64>,
    /// Target normals; `None` drops the normal term.
    pub normals: Option<ArrayView2<'a, f64>>,
    /// Raw (unnormalized) wrap normals.
    pub n_cycle: ArrayView2<'a, f64>,
    pub faces: &'a [[usize; 3]],
    /// UV neighbors within `q`.
    pub neighbors: &'a NeighborTable,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct ChartLossOutput {
    pub value: f64,
    pub unwrap: f64,
    pub cycle: f64,
    pub tri: f64,
    pub grad_q: Array2<f64>,
    pub grad_p_cycle: Array2<f64>,
    pub grad_n_cycle: Array2<f64>,
    /// Empty when no scores were given.
    pub grad_scores: Vec<f64>,
}

/// Score-weighted loss of one chart: unwrapping hinge with pair weight
/// `min(s_i, s_j)` (averaged over vertices), weighted L1 position and
/// `1 - cos` normal cycle terms, and the isometric edge term with edge score
/// `(s_i + s_j) / 2`.
pub fn chart_losses(inp: &ChartInputs, w: &ChartLossWeights) -> ChartLossOutput {
    let v = inp.q.nrows();
    let inv_v = 1.0 / v as f64;

    let (u_sum, gq_u, gs_u) = unwrapping_loss_grad(inp.q, inp.neighbors, inp.eps, inp.scores);
    let (pos, gpc, gs_pos) = weighted_l1(inp.p_cycle, inp.p, inp.scores);
    let (nrm, gnc, gs_nrm) = match inp.normals {
        Some(n) => weighted_cosine(n, inp.n_cycle, inp.scores),
        None => (0.0, Array2::zeros(inp.n_cycle.raw_dim()), vec![0.0; inp.scores.map_or(0, |_| v)]),
    };
    let (tri, gq_t, gs_t) = isometric_tdl_grad(inp.p, inp.faces, inp.q, inp.scores);

    let unwrap = u_sum * inv_v;
    let cycle = pos + nrm;
    let value = w.unwrap * unwrap + w.cycle * cycle + w.tri * tri;

    let grad_q = gq_u * (w.unwrap * inv_v) + gq_t * w.tri;
    let grad_p_cycle = gpc * w.cycle;
    let grad_n_cycle = gnc * w.cycle;
    let grad_scores = if inp.scores.is_some() {
        (0..v)
            .map(|i| w.unwrap * inv_v * gs_u[i] + w.cycle * (gs_pos[i] + gs_nrm[i]) + w.tri * gs_t[i])
            .collect()
    } else {
        Vec::new()
    };
    ChartLossOutput {
        value,
        unwrap,
        cycle,
        tri,
        grad_q,
        grad_p_cycle,
        grad_n_cycle,
        grad_scores,
    }
}

/// Hinge threshold of chart `k`, taken from the UV box of the vertices
/// currently labeled `k` (all vertices when none are).
pub fn chart_eps(q: ArrayView2<f64>, labels: &[usize], k: usize, coefs: &ThresholdCoefs) -> f64 {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
    let (side, count) = if rows.is_empty() {
        (square_side(q), q.nrows())
    } else {
        (square_side(q.select(ndarray::Axis(0), &rows).view()), rows.len())
    };
    let eps = coefs.eps_coef * side / (count as f64).sqrt();
    if eps > 0.0 {
        eps
    } else {
        // a single labeled vertex has no extent; fall back to the whole map
        coefs.eps_coef * square_side(q) / (q.nrows() as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::knn_self;
    use crate::losses::cycle::cycle_consistency_loss;
    use crate::losses::unwrapping::unwrapping_loss;
    use crate::networks::normalize_normals;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_terms_with_default_weights() {
        let t = LossTerms {
            unwrap: 1.0,
            wrap: 1.0,
            cycle: 1.0,
            diff: 1.0,
            tri: 1.0,
        };
        assert!((global_loss(&t, &GlobalLossWeights::default()).unwrap() - 1.031).abs() < 1e-15);
        assert_eq!(global_loss(&LossTerms::default(), &GlobalLossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_term_is_named() {
        let t = LossTerms {
            diff: f64::NAN,
            ..Default::default()
        };
        let err = global_loss(&t, &GlobalLossWeights::default()).unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("diff"));
    }

    struct Fixture {
        q: Array2<f64>,
        p: Array2<f64>,
        pc: Array2<f64>,
        n: Array2<f64>,
        nc: Array2<f64>,
        faces: Vec<[usize; 3]>,
        nb: NeighborTable,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 10;
        let q = Array2::from_shape_fn((v, 2), |_| rng.random_range(0.0..1.0));
        let p = Array2::from_shape_fn((v, 3), |_| rng.random_range(-0.5..0.5));
        let pc = Array2::from_shape_fn((v, 3), |_| rng.random_range(-0.5..0.5));
        let n = normalize_normals(Array2::from_shape_fn((v, 3), |_| rng.random_range(-1.0..1.0)).view());
        let nc = Array2::from_shape_fn((v, 3), |_| rng.random_range(-1.0..1.0));
        let faces = (0..8).map(|i| [i, i + 1, i + 2]).collect();
        let nb = knn_self(q.view(), 3).unwrap();
        Fixture { q, p, pc, n, nc, faces, nb }
    }

    fn inputs<'a>(f: &'a Fixture, s: Option<&'a [f64]>) -> ChartInputs<'a> {
        ChartInputs {
            scores: s,
            q: f.q.view(),
            p: f.p.view(),
            p_cycle: f.pc.view(),
            normals: Some(f.n.view()),
            n_cycle: f.nc.view(),
            faces: &f.faces,
            neighbors: &f.nb,
            eps: 0.3,
        }
    }

    #[test]
    fn zero_scores_annihilate_every_term() {
        let f = fixture(71);
        let zeros = vec![0.0; 10];
        assert_eq!(chart_losses(&inputs(&f, Some(&zeros)), &ChartLossWeights::default()).value, 0.0);
    }

    #[test]
    fn unit_scores_reduce_to_unweighted_terms() {
        let f = fixture(72);
        let ones = vec![1.0; 10];
        let w = ChartLossWeights::default();
        let out = chart_losses(&inputs(&f, Some(&ones)), &w);
        let unit = normalize_normals(f.nc.view());
        let q0 = Array2::zeros((10, 2));
        let cyc = cycle_consistency_loss(f.p.view(), f.pc.view(), q0.view(), q0.view(), f.n.view(), unit.view());
        let oracle = w.unwrap * unwrapping_loss(f.q.view(), &f.nb, 0.3) / 10.0
            + w.cycle * cyc
            + w.tri * isometric_tdl_grad(f.p.view(), &f.faces, f.q.view(), None).0;
        assert!((out.value - oracle).abs() < 1e-12);
        assert!((out.value - chart_losses(&inputs(&f, None), &w).value).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_loop() {
        let f = fixture(73);
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let s: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = ChartLossWeights::default();
        let out = chart_losses(&inputs(&f, Some(&s)), &w);

        let mut hinge = 0.0;
        for i in 0..10 {
            for &j in f.nb.neighbors(i) {
                let d = ((f.q[[i, 0]] - f.q[[j, 0]]).powi(2) + (f.q[[i, 1]] - f.q[[j, 1]]).powi(2)).sqrt();
                hinge += s[i].min(s[j]) * (0.3 - d).max(0.0);
            }
        }
        let mut cyc = 0.0;
        for i in 0..10 {
            let l1: f64 = (0..3).map(|d| (f.p[[i, d]] - f.pc[[i, d]]).abs()).sum();
            let nn: f64 = (0..3).map(|d| f.nc[[i, d]].powi(2)).sum::<f64>().sqrt();
            let cos: f64 = (0..3).map(|d| f.n[[i, d]] * f.nc[[i, d]]).sum::<f64>() / nn;
            cyc += s[i] * (l1 + 1.0 - cos);
        }
        let mut tri = 0.0;
        for t in &f.faces {
            for k in 0..3 {
                let (i, j) = (t[k], t[(k + 1) % 3]);
                let l3: f64 = (0..3).map(|d| (f.p[[i, d]] - f.p[[j, d]]).powi(2)).sum::<f64>().sqrt();
                let l2: f64 = (0..2).map(|d| (f.q[[i, d]] - f.q[[j, d]]).powi(2)).sum::<f64>().sqrt();
                tri += 0.5 * (s[i] + s[j]) * (l3 - l2).powi(2);
            }
        }
        let oracle = w.unwrap * hinge / 10.0 + w.cycle * cyc / 10.0 + w.tri * tri / 24.0;
        assert!((out.value - oracle).abs() < 1e-12);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let f = fixture(75);
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        let s: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = ChartLossWeights::default();
        let out = chart_losses(&inputs(&f, Some(&s)), &w);
        let h = 1e-6;
        for i in 0..10 {
            let mut sp = s.clone();
            sp[i] += h;
            let mut sm = s.clone();
            sm[i] -= h;
            let fd = (chart_losses(&inputs(&f, Some(&sp)), &w).value - chart_losses(&inputs(&f, Some(&sm)), &w).value) / (2.0 * h);
            assert!((fd - out.grad_scores[i]).abs() < 1e-6);
        }
    }
}

use ndarray::{Array2, ArrayView2};

use crate::geometry::NeighborTable;

/// Hinge on neighbor distances below `eps`, summed over every (point,
/// neighbor) pair in the table: `sum_i sum_j max(0, eps - |q_i - q_ij|)`.
pub fn unwrapping_loss(q: ArrayView2<f64>, neighbors: &NeighborTable, eps: f64) -> f64 {
    unwrapping_loss_grad(q, neighbors, eps, None).0
}

/// Hinge sum and its gradient with respect to `q`. With `scores`, each pair
/// is weighted by the smaller of its two endpoint scores; the third element
/// is then the gradient with respect to the scores.
pub fn unwrapping_loss_grad(
    q: ArrayView2<f64>,
    neighbors: &NeighborTable,
    eps: f64,
    scores: Option<&[f64]>,
) -> (f64, Array2<f64>, Vec<f64>) {
    let mut grad = Array2::zeros(q.raw_dim());
    let mut gs = vec![0.0; if scores.is_some() { q.nrows() } else { 0 }];
    let mut total = 0.0;
    for i in 0..neighbors.len() {
        for &j in neighbors.neighbors(i) {
            let dx = q[[i, 0]] - q[[j, 0]];
            let dy = q[[i, 1]] - q[[j, 1]];
            let d = (dx * dx + dy * dy).sqrt();
            if d >= eps {
                continue;
            }
            let hinge = eps - d;
            let weight = match scores {
                Some(s) => {
                    // min(s_i, s_j); the gradient flows to the smaller score
                    let (w, at) = if s[i] <= s[j] { (s[i], i) } else { (s[j], j) };
                    gs[at] += hinge;
                    w
                }
                None => 1.0,
            };
            total += weight * hinge;
            if d > 0.0 {
                let (ux, uy) = (dx / d, dy / d);
                grad[[i, 0]] -= weight * ux;
                grad[[i, 1]] -= weight * uy;
                grad[[j, 0]] += weight * ux;
                grad[[j, 1]] += weight * uy;
            }
        }
    }
    (total, grad, gs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::knn_self;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inactive_when_all_pairs_are_far() {
        let q = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let nb = knn_self(q.view(), 2).unwrap();
        assert_eq!(unwrapping_loss(q.view(), &nb, 0.5), 0.0);
    }

    #[test]
    fn close_pair_counts_both_directions() {
        let eps = 0.3;
        let q = array![[0.0, 0.0], [eps / 2.0, 0.0]];
        let nb = knn_self(q.view(), 1).unwrap();
        assert!((unwrapping_loss(q.view(), &nb, eps) - eps).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = Array2::from_shape_fn((50, 2), |_| rng.random_range(0.0..1.0));
        let nb = knn_self(q.view(), 5).unwrap();
        let eps = 0.12;
        let mut oracle = 0.0;
        for i in 0..50 {
            for &j in nb.neighbors(i) {
                let d = ((q[[i, 0]] - q[[j, 0]]).powi(2) + (q[[i, 1]] - q[[j, 1]]).powi(2)).sqrt();
                oracle += (eps - d).max(0.0);
            }
        }
        assert!((unwrapping_loss(q.view(), &nb, eps) - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let q = Array2::from_shape_fn((30, 2), |_| rng.random_range(0.0..1.0));
        let s: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let nb = knn_self(q.view(), 4).unwrap();
        let eps = 0.2;
        let (_, g, gs) = unwrapping_loss_grad(q.view(), &nb, eps, Some(&s));
        let h = 1e-6;
        for i in 0..30 {
            for d in 0..2 {
                let mut p = q.clone();
                p[[i, d]] += h;
                let mut m = q.clone();
                m[[i, d]] -= h;
                let fd = (unwrapping_loss_grad(p.view(), &nb, eps, Some(&s)).0
                    - unwrapping_loss_grad(m.view(), &nb, eps, Some(&s)).0)
                    / (2.0 * h);
                assert!((fd - g[[i, d]]).abs() < 1e-6);
            }
            let mut sp = s.clone();
            sp[i] += h;
            let mut sm = s.clone();
            sm[i] -= h;
            let fd = (unwrapping_loss_grad(q.view(), &nb, eps, Some(&sp)).0
                - unwrapping_loss_grad(q.view(), &nb, eps, Some(&sm)).0)
                / (2.0 * h);
            assert!((fd - gs[i]).abs() < 1e-6);
        }
    }
}

use ndarray::{Array2, ArrayView2};

/// `mean_i s_i * |a_i - b_i|_1` and its gradient with respect to `a`
/// (the gradient for `b` is the negation). Scores default to 1; the third
/// element holds the score gradient when scores are given.
pub fn weighted_l1(a: ArrayView2<f64>, b: ArrayView2<f64>, scores: Option<&[f64]>) -> (f64, Array2<f64>, Vec<f64>) {
    let n = a.nrows();
    let inv = 1.0 / n as f64;
    let mut grad = Array2::zeros(a.raw_dim());
    let mut gs = vec![0.0; if scores.is_some() { n } else { 0 }];
    let mut total = 0.0;
    for i in 0..n {
        let s = scores.map_or(1.0, |s| s[i]);
        let mut row = 0.0;
        for d in 0..a.ncols() {
            let diff = a[[i, d]] - b[[i, d]];
            row += diff.abs();
            grad[[i, d]] = s * inv * sign(diff);
        }
        if scores.is_some() {
            gs[i] = row * inv;
        }
        total += s * row;
    }
    (total * inv, grad, gs)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean_i s_i * (1 - cos(n_i, r_i))` where `n` are target normals and `r`
/// raw predicted normals (any length). Returns the gradient with respect to
/// `r` and, if scores are given, with respect to the scores. A zero raw row
/// is read as `(0, 0, 1)` and passes no gradient.
pub fn weighted_cosine(n: ArrayView2<f64>, raw: ArrayView2<f64>, scores: Option<&[f64]>) -> (f64, Array2<f64>, Vec<f64>) {
    let count = n.nrows();
    let inv = 1.0 / count as f64;
    let mut grad = Array2::zeros(raw.raw_dim());
    let mut gs = vec![0.0; if scores.is_some() { count } else { 0 }];
    let mut total = 0.0;
    for i in 0..count {
        let s = scores.map_or(1.0, |s| s[i]);
        let t = [n[[i, 0]], n[[i, 1]], n[[i, 2]]];
        let r = [raw[[i, 0]], raw[[i, 1]], raw[[i, 2]]];
        let tn = norm3(t);
        let rn = norm3(r);
        let term = if tn == 0.0 {
            1.0
        } else if rn == 0.0 {
            1.0 - t[2] / tn
        } else {
            let c = dot3(t, r) / (tn * rn);
            for d in 0..3 {
                // d cos / d r = (t/|t| - cos r/|r|) / |r|
                let dc = (t[d] / tn - c * r[d] / rn) / rn;
                grad[[i, d]] = -s * inv * dc;
            }
            1.0 - c
        };
        if scores.is_some() {
            gs[i] = term * inv;
        }
        total += s * term;
    }
    (total * inv, grad, gs)
}

/// Unweighted cycle term on unit normals: mean L1 of `p - p_cycle`, plus
/// mean L1 of `q - q_cycle`, plus mean `1 - cos` between normal rows.
pub fn cycle_consistency_loss(
    p: ArrayView2<f64>,
    p_cycle: ArrayView2<f64>,
    q: ArrayView2<f64>,
    q_cycle: ArrayView2<f64>,
    n: ArrayView2<f64>,
    n_cycle: ArrayView2<f64>,
) -> f64 {
    weighted_l1(p, p_cycle, None).0 + weighted_l1(q, q_cycle, None).0 + weighted_cosine(n, n_cycle, None).0
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_arguments_give_zero() {
        let p = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let q = array![[0.5, 0.5], [0.0, 1.0]];
        let n = array![[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]];
        assert_eq!(cycle_consistency_loss(p.view(), p.view(), q.view(), q.view(), n.view(), n.view()), 0.0);
    }

    #[test]
    fn flipped_normals_cost_two() {
        let p = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let q = array![[0.5, 0.5], [0.0, 1.0]];
        let n = array![[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]];
        let flipped = -&n;
        let c = cycle_consistency_loss(p.view(), p.view(), q.view(), q.view(), n.view(), flipped.view());
        assert!((c - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_terms_differentiate() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let s: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, ga, gsa) = weighted_l1(a.view(), b.view(), Some(&s));
        let (_, gr, gsr) = weighted_cosine(a.view(), b.view(), Some(&s));
        let h = 1e-6;
        for i in 0..12 {
            for d in 0..3 {
                let mut ap = a.clone();
                ap[[i, d]] += h;
                let mut am = a.clone();
                am[[i, d]] -= h;
                let fd = (weighted_l1(ap.view(), b.view(), Some(&s)).0 - weighted_l1(am.view(), b.view(), Some(&s)).0) / (2.0 * h);
                assert!((fd - ga[[i, d]]).abs() < 1e-7);
                let mut bp = b.clone();
                bp[[i, d]] += h;
                let mut bm = b.clone();
                bm[[i, d]] -= h;
                let fd = (weighted_cosine(a.view(), bp.view(), Some(&s)).0 - weighted_cosine(a.view(), bm.view(), Some(&s)).0)
                    / (2.0 * h);
                assert!((fd - gr[[i, d]]).abs() < 1e-7);
            }
            let mut sp = s.clone();
            sp[i] += h;
            let mut sm = s.clone();
            sm[i] -= h;
            let fd = (weighted_l1(a.view(), b.view(), Some(&sp)).0 - weighted_l1(a.view(), b.view(), Some(&sm)).0) / (2.0 * h);
            assert!((fd - gsa[i]).abs() < 1e-7);
            let fd = (weighted_cosine(a.view(), b.view(), Some(&sp)).0 - weighted_cosine(a.view(), b.view(), Some(&sm)).0) / (2.0 * h);
            assert!((fd - gsr[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_raw_normal_reads_as_up() {
        let n = array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let raw = Array2::zeros((2, 3));
        let (v, g, _) = weighted_cosine(n.view(), raw.view(), None);
        assert!((v - 0.5).abs() < 1e-15);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::geometry::KdTree;

/// Symmetric chamfer distance: mean squared distance from each point of `a`
/// to its nearest point in `b`, plus the same from `b` to `a`.
pub fn chamfer(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    Ok(chamfer_grad(a, b, None)?.0)
}

/// Chamfer distance with gradients for both point sets. A prebuilt tree over
/// `b` may be passed when `b` is fixed across calls.
pub fn chamfer_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    b_tree: Option<&KdTree>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Argument("chamfer distance needs two non-empty sets".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape("chamfer sets differ in dimension".into()));
    }
    let dim = a.ncols();
    let owned_b;
    let tree_b = match b_tree {
        Some(t) => t,
        None => {
            owned_b = KdTree::new(b)?;
            &owned_b
        }
    };
    let tree_a = KdTree::new(a)?;
    let (na, nb) = (a.nrows() as f64, b.nrows() as f64);
    let mut ga = Array2::zeros(a.raw_dim());
    let mut gb = Array2::zeros(b.raw_dim());
    let mut q = vec![0.0; dim];

    let mut forward = 0.0;
    for i in 0..a.nrows() {
        q.iter_mut().enumerate().for_each(|(d, x)| *x = a[[i, d]]);
        let (j, d2) = tree_b.nearest_one(&q);
        forward += d2;
        for d in 0..dim {
            let diff = 2.0 * (a[[i, d]] - b[[j, d]]) / na;
            ga[[i, d]] += diff;
            gb[[j, d]] -= diff;
        }
    }
    let mut backward = 0.0;
    for j in 0..b.nrows() {
        q.iter_mut().enumerate().for_each(|(d, x)| *x = b[[j, d]]);
        let (i, d2) = tree_a.nearest_one(&q);
        backward += d2;
        for d in 0..dim {
            let diff = 2.0 * (b[[j, d]] - a[[i, d]]) / nb;
            gb[[j, d]] += diff;
            ga[[i, d]] -= diff;
        }
    }
    Ok((forward / na + backward / nb, ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
        let one_way = |x: ArrayView2<f64>, y: ArrayView2<f64>| {
            x.rows()
                .into_iter()
                .map(|p| {
                    y.rows()
                        .into_iter()
                        .map(|r| (&p - &r).mapv(|t| t * t).sum())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / x.nrows() as f64
        };
        one_way(a, b) + one_way(b, a)
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = array![[0.0, 1.0, 2.0], [3.0, -1.0, 0.5]];
        assert_eq!(chamfer(a.view(), a.view()).unwrap(), 0.0);
    }

    #[test]
    fn single_points() {
        let a = array![[0.0, 0.0, 0.0]];
        let b = array![[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(a.view(), b.view()).unwrap(), 2.0);
    }

    #[test]
    fn empty_set_is_rejected() {
        let a = Array2::<f64>::zeros((0, 3));
        let b = array![[1.0, 0.0, 0.0]];
        assert!(matches!(chamfer(a.view(), b.view()), Err(Error::Argument(_))));
    }

    #[test]
    fn matches_quadratic_scan_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = Array2::from_shape_fn((100, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((120, 3), |_| rng.random_range(-1.0..1.0));
        let c = chamfer(a.view(), b.view()).unwrap();
        assert!((c - brute(a.view(), b.view())).abs() < 1e-12);
        assert!((c - chamfer(b.view(), a.view()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let a = Array2::from_shape_fn((15, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let (_, ga, gb) = chamfer_grad(a.view(), b.view(), None).unwrap();
        let h = 1e-6;
        for i in 0..15 {
            for d in 0..3 {
                let mut p = a.clone();
                p[[i, d]] += h;
                let mut m = a.clone();
                m[[i, d]] -= h;
                let fd = (chamfer(p.view(), b.view()).unwrap() - chamfer(m.view(), b.view()).unwrap()) / (2.0 * h);
                assert!((fd - ga[[i, d]]).abs() < 1e-7);
            }
        }
        for j in 0..12 {
            for d in 0..3 {
                let mut p = b.clone();
                p[[j, d]] += h;
                let mut m = b.clone();
                m[[j, d]] -= h;
                let fd = (chamfer(a.view(), p.view()).unwrap() - chamfer(a.view(), m.view()).unwrap()) / (2.0 * h);
                assert!((fd - gb[[j, d]]).abs() < 1e-7);
            }
        }
    }
}

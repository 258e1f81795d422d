use ndarray::{array, Array2, ArrayView2};

use crate::diffkernel::{eig2x2_sym, ParamStore};
use crate::error::Result;
use crate::networks::ConcatBlock;

/// `|l1 - l2|` for the eigenvalues of `B^T B`, `B = (phi_u phi_v)`.
pub fn eigen_gap(phi_u: [f64; 3], phi_v: [f64; 3]) -> f64 {
    let a = dot(phi_u, phi_u);
    let b = dot(phi_u, phi_v);
    let c = dot(phi_v, phi_v);
    let (l1, l2) = eig2x2_sym([[a, b], [b, c]]);
    (l1 - l2).abs()
}

/// Mean eigenvalue gap over rows, with gradients for both derivative sets.
///
/// The gap equals `sqrt((a - c)^2 + 4 b^2)` with `a = |phi_u|^2`,
/// `b = phi_u . phi_v`, `c = |phi_v|^2`; at a zero gap the zero subgradient
/// is used.
pub fn eigen_gap_grad(phi_u: ArrayView2<f64>, phi_v: ArrayView2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let n = phi_u.nrows();
    let inv = 1.0 / n as f64;
    let mut gu = Array2::zeros((n, 3));
    let mut gv = Array2::zeros((n, 3));
    let mut total = 0.0;
    for i in 0..n {
        let u = [phi_u[[i, 0]], phi_u[[i, 1]], phi_u[[i, 2]]];
        let v = [phi_v[[i, 0]], phi_v[[i, 1]], phi_v[[i, 2]]];
        total += eigen_gap(u, v);
        let a = dot(u, u);
        let b = dot(u, v);
        let c = dot(v, v);
        let g = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
        if g > 0.0 {
            let (da, db, dc) = ((a - c) / g, 4.0 * b / g, -(a - c) / g);
            for d in 0..3 {
                gu[[i, d]] = inv * (2.0 * da * u[d] + db * v[d]);
                gv[[i, d]] = inv * (2.0 * dc * v[d] + db * u[d]);
            }
        }
    }
    (total * inv, gu, gv)
}

/// Positional partial derivatives (first three output channels) of the wrap
/// map at each row of `q`, along `u` and along `v`.
pub fn wrap_partials(wrap: &ConcatBlock, store: &ParamStore, q: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let ju = wrap.eval_jvp(store, q, array![[1.0, 0.0]].view())?;
    let jv = wrap.eval_jvp(store, q, array![[0.0, 1.0]].view())?;
    Ok((
        ju.slice(ndarray::s![.., 0..3]).to_owned(),
        jv.slice(ndarray::s![.., 0..3]).to_owned(),
    ))
}

/// Differential distortion of the wrap map over both UV sets: the two
/// per-set mean eigenvalue gaps, averaged with equal weight.
pub fn differential_distortion_loss(
    wrap: &ConcatBlock,
    store: &ParamStore,
    q: ArrayView2<f64>,
    q_hat: ArrayView2<f64>,
) -> Result<f64> {
    let (u, v) = wrap_partials(wrap, store, q)?;
    let (uh, vh) = wrap_partials(wrap, store, q_hat)?;
    Ok(0.5 * (eigen_gap_grad(u.view(), v.view()).0 + eigen_gap_grad(uh.view(), vh.view()).0))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn isometric_and_stretched_embeddings() {
        assert_eq!(eigen_gap([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), 0.0);
        assert!((eigen_gap([2.0, 0.0, 0.0], [0.0, 1.0, 0.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_of_the_output_leaves_the_gap_unchanged() {
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rot = |x: [f64; 3]| [c * x[0] - s * x[1], s * x[0] + c * x[1], x[2]];
        let u = [0.3, -1.2, 0.5];
        let v = [0.9, 0.1, -0.4];
        assert!((eigen_gap(u, v) - eigen_gap(rot(u), rot(v))).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let u = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
        let v = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
        let (_, gu, gv) = eigen_gap_grad(u.view(), v.view());
        let h = 1e-6;
        for i in 0..10 {
            for d in 0..3 {
                let mut p = u.clone();
                p[[i, d]] += h;
                let mut m = u.clone();
                m[[i, d]] -= h;
                let fd = (eigen_gap_grad(p.view(), v.view()).0 - eigen_gap_grad(m.view(), v.view()).0) / (2.0 * h);
                assert!((fd - gu[[i, d]]).abs() < 1e-7);
                let mut p = v.clone();
                p[[i, d]] += h;
                let mut m = v.clone();
                m[[i, d]] -= h;
                let fd = (eigen_gap_grad(u.view(), p.view()).0 - eigen_gap_grad(u.view(), m.view()).0) / (2.0 * h);
                assert!((fd - gv[[i, d]]).abs() < 1e-7);
            }
        }
    }
}

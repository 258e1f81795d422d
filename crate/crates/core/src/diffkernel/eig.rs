/// Eigenvalues `(l1, l2)`, `l1 >= l2`, of the symmetric 2x2 matrix
/// `[[a, b], [b, c]]`. The discriminant is clamped at zero so round-off on
/// near-isotropic inputs cannot produce a NaN.
pub fn eig2x2_sym(m: [[f64; 2]; 2]) -> (f64, f64) {
    debug_assert!((m[0][1] - m[1][0]).abs() < 1e-9, "matrix must be symmetric");
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    ((tr + disc) / 2.0, (tr - disc) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_cases() {
        assert_eq!(eig2x2_sym([[1.0, 0.0], [0.0, 1.0]]), (1.0, 1.0));
        assert_eq!(eig2x2_sym([[3.0, 0.0], [0.0, 2.0]]), (3.0, 2.0));
        assert_eq!(eig2x2_sym([[2.0, 0.0], [0.0, 3.0]]), (3.0, 2.0));
        // characteristic polynomial (2 - l)^2 - 1 = 0 -> l = 1, 3
        let (l1, l2) = eig2x2_sym([[2.0, 1.0], [1.0, 2.0]]);
        assert!((l1 - 3.0).abs() < 1e-15 && (l2 - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn trace_and_determinant_are_preserved(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64) {
            let (l1, l2) = eig2x2_sym([[a, b], [b, c]]);
            prop_assert!(l1 >= l2);
            prop_assert!((l1 + l2 - (a + c)).abs() < 1e-9);
            let det = a * c - b * b;
            // for symmetric matrices the discriminant is a sum of squares, so
            // clamping never alters the product beyond round-off
            prop_assert!((l1 * l2 - det).abs() < 1e-9 * (1.0 + det.abs()));
        }

        #[test]
        fn gram_matrices_have_nonnegative_spectrum(u in prop::array::uniform3(-3.0..3.0f64), v in prop::array::uniform3(-3.0..3.0f64)) {
            let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
            let (l1, l2) = eig2x2_sym([[dot(u, u), dot(u, v)], [dot(u, v), dot(v, v)]]);
            prop_assert!(l1.is_finite() && l2 > -1e-9);
        }
    }
}

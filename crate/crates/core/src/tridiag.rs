//! Thomas algorithm for tridiagonal systems.

/// Solve `A x = rhs` in place, where row `i` of `A` is
/// `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1]`.
/// `lower[0]` and `upper[n-1]` are ignored.
///
/// No pivoting: the systems assembled by the solver are M-matrices
/// (column diagonally dominant), for which elimination is stable.
pub(crate) fn solve_in_place(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    debug_assert!(lower.len() == n && diag.len() == n && upper.len() == n);
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

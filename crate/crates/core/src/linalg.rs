//! Dense linear-algebra helpers shared by the kernel, solver and diagnostics
//! modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Solve `(a + jitter I) x = b` by Cholesky, then refine against the
/// unjittered `a`: `x <- x + (a + jitter I)^{-1} (b - a x)`.
///
/// Returns the solution and the final max-abs residual `|b - a x|_inf`.
/// `None` when the jittered matrix is not numerically positive definite.
pub fn refined_spd_solve(
    a: &DMatrix<f64>,
    jitter: f64,
    b: &DVector<f64>,
    max_refine: usize,
) -> Option<(DVector<f64>, f64)> {
    let mut shifted = a.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += jitter;
    }
    let chol = shifted.cholesky()?;
    let mut x = chol.solve(b);
    let mut residual = b - a * &x;
    let mut res_norm = residual.amax();
    for _ in 0..max_refine {
        if res_norm == 0.0 {
            break;
        }
        let candidate = &x + chol.solve(&residual);
        let cand_res = b - a * &candidate;
        let cand_norm = cand_res.amax();
        if !(cand_norm < res_norm) {
            break;
        }
        x = candidate;
        residual = cand_res;
        res_norm = cand_norm;
    }
    Some((x, res_norm))
}

/// Matrices with more entries than this take the Gram-matrix path in
/// [`truncated_svd`].
pub const GRAM_SVD_THRESHOLD: usize = 1_000_000;

/// Rank-`r` truncated SVD with singular values in descending order.
///
/// Signs are fixed so that the largest-magnitude entry of each left singular
/// vector is positive. Returns `(U: n x r, s, V: T x r)`. Large matrices are
/// handled through the eigendecomposition of the smaller Gram matrix, which is
/// accurate for the leading singular triplets.
pub fn truncated_svd(m: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (mut u, s, mut v) = if m.nrows() * m.ncols() > GRAM_SVD_THRESHOLD {
        gram_svd(m, r)
    } else {
        dense_svd(m, r)
    };
    for col in 0..r {
        let pivot = u
            .column(col)
            .iter()
            .cloned()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            u.column_mut(col).neg_mut();
            v.column_mut(col).neg_mut();
        }
    }
    (u, s, v)
}

fn dense_svd(m: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut uu = DMatrix::zeros(m.nrows(), r);
    let mut vv = DMatrix::zeros(m.ncols(), r);
    let mut s = vec![0.0; r];
    for (col, &idx) in order.iter().take(r).enumerate() {
        uu.set_column(col, &u.column(idx));
        vv.set_column(col, &vt.row(idx).transpose());
        s[col] = svd.singular_values[idx];
    }
    (uu, s, vv)
}

fn gram_svd(m: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let wide = m.nrows() <= m.ncols();
    let small = if wide { m * m.transpose() } else { m.transpose() * m };
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut uu = DMatrix::zeros(m.nrows(), r);
    let mut vv = DMatrix::zeros(m.ncols(), r);
    let mut s = vec![0.0; r];
    for (col, &idx) in order.iter().take(r).enumerate() {
        let lam = eig.eigenvalues[idx];
        // directions below rounding level of the Gram matrix are left at zero
        if !(lam > top * 1e-12) {
            continue;
        }
        let sv = lam.sqrt();
        let vec = eig.eigenvectors.column(idx);
        if wide {
            uu.set_column(col, &vec);
            vv.set_column(col, &(m.transpose() * vec / sv));
        } else {
            vv.set_column(col, &vec);
            uu.set_column(col, &(m * vec / sv));
        }
        s[col] = sv;
    }
    (uu, s, vv)
}

/// Largest singular value, by power iteration on `m^T m`.
pub fn top_singular_value(m: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_element(m.ncols(), 1.0 / (m.ncols() as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..1000 {
        let w = m.transpose() * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w / norm;
        if (next - sigma).abs() <= 1e-12 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Orthogonal `R = P Q^T` from the SVD `a = P S Q^T`: the maximizer of
/// `tr(R^T a)` over orthogonal matrices.
pub fn polar_orthogonal(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let p = svd.u.expect("requested");
    let qt = svd.v_t.expect("requested");
    p * qt
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Greedy pivoted Cholesky of an implicit PSD matrix given by its diagonal and
/// a column oracle. Stops when the largest remaining diagonal drops below
/// `tol` or `max_rank` columns are built. Returns the `n x p` factor `F` with
/// `A ~ F F^T`.
pub fn pivoted_cholesky(diag: &[f64], column: impl Fn(usize) -> Vec<f64>, tol: f64, max_rank: usize) -> DMatrix<f64> {
    let n = diag.len();
    let mut rem = diag.to_vec();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < max_rank.min(n) {
        let (pivot, &best) = rem
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        if best <= tol {
            break;
        }
        let mut col = column(pivot);
        for prev in &cols {
            let scale = prev[pivot];
            if scale != 0.0 {
                for (c, p) in col.iter_mut().zip(prev) {
                    *c -= scale * p;
                }
            }
        }
        let root = best.sqrt();
        for c in col.iter_mut() {
            *c /= root;
        }
        for (r, c) in rem.iter_mut().zip(&col) {
            *r -= c * c;
        }
        rem[pivot] = 0.0;
        cols.push(col);
    }
    let p = cols.len();
    DMatrix::from_fn(n, p, |i, j| cols[j][i])
}

//! Truncated SVD.
//!
//! Small problems (or `k` close to `min(rows, cols)`) use one-sided Jacobi on
//! the whole matrix. Larger ones use block subspace iteration on `AᵀA` with a
//! Rayleigh–Ritz step (again one-sided Jacobi, on the `rows × q` projection)
//! until every leading triplet satisfies `‖Aᵀuᵢ − σᵢvᵢ‖ ≤ tol·‖A‖_F`.

use crate::error::{DiceError, Result};
use crate::linalg::{dot, norm, DenseMatrix, MatRef};
use crate::rng::RngStream;

const TOL: f64 = 1e-12;
const OVERSAMPLE: usize = 10;
const FULL_JACOBI_LIMIT: usize = 64;

/// Leading `k` singular triplets, singular values descending.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub left: DenseMatrix,
    pub singular_values: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub right: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `left · diag(σ) · rightᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut scaled = self.left.clone();
        for i in 0..scaled.rows() {
            for (v, s) in scaled.row_mut(i).iter_mut().zip(&self.singular_values) {
                *v *= s;
            }
        }
        scaled.matmul_t(&self.right).expect("factor shapes agree")
    }
}

/// Top-`k` singular value decomposition of `m`.
///
/// Each right singular vector is signed so its largest-magnitude entry is
/// positive, and the matching left vector is flipped with it.
pub fn svd_topk(m: &DenseMatrix, k: usize) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if k == 0 || k > p {
        return Err(DiceError::InvalidArgument(format!("svd rank {k} outside 1..={p} for a {rows}x{cols} matrix")));
    }
    if !m.is_finite() {
        return Err(DiceError::NonFinite("svd_topk input"));
    }
    let max_iter = 10 * p.max(1);
    let (mut left, sigma, mut right) = if p <= FULL_JACOBI_LIMIT || k + OVERSAMPLE >= p {
        full_jacobi(m, max_iter)?
    } else {
        subspace_iteration(m, k, max_iter)?
    };
    left.truncate(k);
    right.truncate(k);
    let sigma = sigma[..k].to_vec();
    complete_left(&mut left, &sigma, rows);

    for (u, v) in left.iter_mut().zip(right.iter_mut()) {
        let pivot =
            v.iter().enumerate().fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best }).0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
            u.iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(SvdResult { left: from_columns(&left, rows), singular_values: sigma, right: from_columns(&right, cols) })
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

fn columns_of(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

type Jacobi = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// One-sided Jacobi on the columns of a tall matrix `a` (`r × c`, `r ≥ c`).
/// Returns (σ descending, left columns, right columns as vectors of length c).
fn jacobi_columns(mut a: Vec<Vec<f64>>, max_sweeps: usize) -> Result<Jacobi> {
    let c = a.len();
    let mut w: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            let mut e = vec![0.0; c];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut converged = c < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps >= max_sweeps {
            return Err(DiceError::NoConvergence { method: "one-sided Jacobi SVD", iterations: sweeps });
        }
        sweeps += 1;
        converged = true;
        for i in 0..c - 1 {
            for j in (i + 1)..c {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                let gamma = dot(&a[i], &a[j]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, i, j, cs, sn);
                rotate(&mut w, i, j, cs, sn);
            }
        }
    }
    let mut sigma: Vec<f64> = a.iter().map(|col| norm(col)).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap().then(x.cmp(&y)));
    let scale = sigma.iter().cloned().fold(0.0, f64::max);
    let mut left = Vec::with_capacity(c);
    let mut right = Vec::with_capacity(c);
    let mut sorted = Vec::with_capacity(c);
    for &j in &order {
        let s = sigma[j];
        // Columns at rounding level carry no direction; the caller completes them.
        let negligible = s <= scale * f64::EPSILON * (c as f64);
        let s = if negligible { 0.0 } else { s };
        left.push(if negligible { Vec::new() } else { a[j].iter().map(|x| x / s).collect() });
        right.push(w[j].clone());
        sorted.push(s);
    }
    sigma = sorted;
    Ok((sigma, left, right))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, cs: f64, sn: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = cs * xi - sn * yj;
        *y = sn * xi + cs * yj;
    }
}

type Factors = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

fn full_jacobi(m: &DenseMatrix, max_sweeps: usize) -> Result<Factors> {
    if m.rows() >= m.cols() {
        let (s, u, v) = jacobi_columns(columns_of(m), max_sweeps)?;
        Ok((u, s, v))
    } else {
        // A = (Aᵀ)ᵀ: left/right swap roles.
        let (s, u, v) = jacobi_columns(columns_of(&m.transpose()), max_sweeps)?;
        let right = u;
        let left = v;
        // Left columns from Aᵀ's right vectors are complete; right columns of
        // zero singular values need completion in the column space.
        let mut right = right;
        complete_left(&mut right, &s, m.cols());
        Ok((left, s, right))
    }
}

fn subspace_iteration(m: &DenseMatrix, k: usize, max_iter: usize) -> Result<Factors> {
    let (rows, cols) = m.shape();
    let q = (k + OVERSAMPLE).min(rows.min(cols));
    let fro = m.frobenius_norm();
    if fro == 0.0 {
        let right = (0..q).map(|j| unit(cols, j)).collect();
        return Ok((vec![Vec::new(); q], vec![0.0; q], right));
    }
    let mut stream = RngStream::derive(0x05ee_d5bd, &[rows as u64, cols as u64, k as u64]);
    let mut basis = DenseMatrix::zeros(cols, q);
    stream.fill_standard_normal(basis.data_mut());
    orthonormalize_columns(&mut basis);

    let a = MatRef::new(m.data(), rows, cols, false);
    let at = MatRef::new(m.data(), rows, cols, true);
    let mut best_residual = f64::INFINITY;
    for iter in 0..max_iter {
        let mut projected = DenseMatrix::zeros(rows, q);
        crate::linalg::gemm(1.0, a, MatRef::new(basis.data(), cols, q, false), 0.0, &mut projected);
        let (sigma, left, w) = jacobi_columns(columns_of(&projected), max_iter)?;
        // right = basis · w
        let right: Vec<Vec<f64>> =
            w.iter().map(|wj| (0..cols).map(|r| dot(basis.row(r), wj)).collect::<Vec<f64>>()).collect();

        let mut residual = 0.0f64;
        for j in 0..k {
            if left[j].is_empty() {
                continue;
            }
            let mut back = DenseMatrix::zeros(cols, 1);
            crate::linalg::gemm(1.0, at, MatRef::new(&left[j], rows, 1, false), 0.0, &mut back);
            let r: f64 = back.data().iter().zip(&right[j]).map(|(x, v)| (x - sigma[j] * v).powi(2)).sum::<f64>().sqrt();
            residual = residual.max(r);
        }
        let stalled = iter > 3 && residual >= best_residual && residual <= 1e-10 * fro;
        if residual <= TOL * fro || stalled {
            return Ok((left, sigma, right));
        }
        best_residual = best_residual.min(residual);

        // basis ← orth(Aᵀ A basis)
        let mut next = DenseMatrix::zeros(cols, q);
        crate::linalg::gemm(1.0, at, MatRef::new(projected.data(), rows, q, false), 0.0, &mut next);
        orthonormalize_columns(&mut next);
        basis = next;
    }
    Err(DiceError::NoConvergence { method: "subspace iteration SVD", iterations: max_iter })
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i % n] = 1.0;
    e
}

/// Modified Gram–Schmidt applied twice; dependent columns are replaced by
/// unit vectors orthogonal to the rest.
fn orthonormalize_columns(m: &mut DenseMatrix) {
    let mut cols = columns_of(m);
    let n = m.rows();
    for j in 0..cols.len() {
        for _ in 0..2 {
            for i in 0..j {
                let (lo, hi) = cols.split_at_mut(j);
                let proj = dot(&lo[i], &hi[0]);
                for (x, y) in hi[0].iter_mut().zip(&lo[i]) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm(&cols[j]);
        if nrm > 1e-300 {
            cols[j].iter_mut().for_each(|x| *x /= nrm);
        } else {
            cols[j] = vec![0.0; n];
            fill_orthogonal(&mut cols, j, n);
        }
    }
    *m = from_columns(&cols, n);
}

/// Replaces empty/zero column `j` by a unit vector orthogonal to columns `0..j`
/// (and to any non-empty later columns).
fn fill_orthogonal(cols: &mut [Vec<f64>], j: usize, n: usize) {
    for e in 0..n {
        let mut cand = unit(n, e);
        for _ in 0..2 {
            for (i, other) in cols.iter().enumerate() {
                if i == j || other.len() != n || norm(other) == 0.0 {
                    continue;
                }
                let proj = dot(other, &cand);
                for (x, y) in cand.iter_mut().zip(other) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm(&cand);
        if nrm > 1e-8 {
            cand.iter_mut().for_each(|x| *x /= nrm);
            cols[j] = cand;
            return;
        }
    }
}

/// Fills left vectors that belong to zero singular values.
fn complete_left(left: &mut [Vec<f64>], sigma: &[f64], rows: usize) {
    for j in 0..left.len() {
        if left[j].len() != rows || sigma.get(j).is_some_and(|&s| s == 0.0) {
            left[j] = Vec::new();
        }
    }
    for j in 0..left.len() {
        if left[j].is_empty() {
            fill_orthogonal(left, j, rows);
        }
    }
}

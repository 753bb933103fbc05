//! Loading-matrix estimation and the maps between observation and latent
//! space.

use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;
use crate::svd::svd_topk;

/// Column-orthonormal loading estimate `V̂` (`d × k`), optionally paired with
/// the reference row mean that was removed before the decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorLoading {
    v_hat: DenseMatrix,
    center: Option<Vec<f64>>,
}

impl FactorLoading {
    /// Wraps an existing basis. Columns must be orthonormal to within 1e-8.
    pub fn from_basis(v_hat: DenseMatrix, center: Option<Vec<f64>>) -> Result<Self> {
        let gram = v_hat.t_matmul(&v_hat)?;
        if gram.max_abs_diff(&DenseMatrix::identity(v_hat.cols())) > 1e-8 {
            return Err(DiceError::InvalidArgument("loading columns are not orthonormal".into()));
        }
        if let Some(c) = &center {
            if c.len() != v_hat.rows() {
                return Err(shape_err("loading center", v_hat.rows(), c.len()));
            }
        }
        Ok(Self { v_hat, center })
    }

    pub fn v_hat(&self) -> &DenseMatrix {
        &self.v_hat
    }

    pub fn center(&self) -> Option<&[f64]> {
        self.center.as_deref()
    }

    pub fn obs_dim(&self) -> usize {
        self.v_hat.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.v_hat.cols()
    }
}

/// `V̂` from the top-`k` right singular vectors of `x_ref`, with the row mean
/// removed first when `center` is set.
pub fn fit_loading(x_ref: &DenseMatrix, k: usize, center: bool) -> Result<FactorLoading> {
    let (m, d) = x_ref.shape();
    if k == 0 || k > m.min(d) {
        return Err(DiceError::InvalidArgument(format!(
            "latent dimension {k} outside 1..={} for a {m}x{d} reference",
            m.min(d)
        )));
    }
    let mean = center.then(|| x_ref.column_means());
    let svd = match &mean {
        Some(mu) => svd_topk(&subtract_row(x_ref, mu), k)?,
        None => svd_topk(x_ref, k)?,
    };
    Ok(FactorLoading { v_hat: svd.right, center: mean })
}

fn subtract_row(x: &DenseMatrix, mu: &[f64]) -> DenseMatrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (v, m) in out.row_mut(i).iter_mut().zip(mu) {
            *v -= m;
        }
    }
    out
}

/// `(x − center)·V̂`, one latent row per observation row.
pub fn project(loading: &FactorLoading, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != loading.obs_dim() {
        return Err(shape_err("project input width", loading.obs_dim(), x.cols()));
    }
    match &loading.center {
        Some(mu) => subtract_row(x, mu).matmul(&loading.v_hat),
        None => x.matmul(&loading.v_hat),
    }
}

/// `u·V̂ᵀ + center`.
pub fn reconstruct(loading: &FactorLoading, u: &DenseMatrix) -> Result<DenseMatrix> {
    if u.cols() != loading.latent_dim() {
        return Err(shape_err("reconstruct input width", loading.latent_dim(), u.cols()));
    }
    let mut x = u.matmul_t(&loading.v_hat)?;
    if let Some(mu) = &loading.center {
        for i in 0..x.rows() {
            for (v, m) in x.row_mut(i).iter_mut().zip(mu) {
                *v += m;
            }
        }
    }
    Ok(x)
}

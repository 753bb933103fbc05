//! Affine map between data-space latents and the standardized space the
//! noise predictor is trained in.

use super::sample::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;

/// `w = (u − mean) / scale` with one mean per coordinate and a single scale,
/// so isotropic noise stays isotropic.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentScaler {
    mean: Vec<f64>,
    scale: f64,
}

impl LatentScaler {
    pub fn new(mean: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(DiceError::InvalidArgument(format!("invalid latent scaler (scale {scale})")));
        }
        Ok(Self { mean, scale })
    }

    pub fn identity(k: usize) -> Self {
        Self { mean: vec![0.0; k], scale: 1.0 }
    }

    /// Column means and the root mean square of the centered entries. A
    /// constant dataset keeps scale 1.
    pub fn fit(data: &DenseMatrix) -> Result<Self> {
        if data.rows() == 0 || !data.is_finite() {
            return Err(DiceError::InvalidArgument("scaler needs finite, non-empty data".into()));
        }
        let mean = data.column_means();
        let ss: f64 =
            (0..data.rows()).map(|i| data.row(i).iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>()).sum();
        let rms = (ss / data.data().len() as f64).sqrt();
        Self::new(mean, if rms > 0.0 { rms } else { 1.0 })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.mean.iter().all(|&m| m == 0.0)
    }

    fn check(&self, u: &DenseMatrix) -> Result<()> {
        if u.cols() != self.dim() {
            return Err(shape_err("scaler width", self.dim(), u.cols()));
        }
        Ok(())
    }

    /// Data space to model space, in place.
    pub fn standardize(&self, u: &mut DenseMatrix) -> Result<()> {
        self.check(u)?;
        let inv = 1.0 / self.scale;
        for i in 0..u.rows() {
            for (v, m) in u.row_mut(i).iter_mut().zip(&self.mean) {
                *v = (*v - m) * inv;
            }
        }
        Ok(())
    }

    /// Model space back to data space, in place.
    pub fn restore(&self, w: &mut DenseMatrix) -> Result<()> {
        self.check(w)?;
        for i in 0..w.rows() {
            for (v, m) in w.row_mut(i).iter_mut().zip(&self.mean) {
                *v = m + self.scale * *v;
            }
        }
        Ok(())
    }
}

/// A noise predictor trained on standardized latents, together with the map
/// that produced them.
#[derive(Clone, Debug)]
pub struct ScaledPredictor<P> {
    pub inner: P,
    pub scaler: LatentScaler,
}

impl<P: NoisePredictor> ScaledPredictor<P> {
    pub fn new(inner: P, scaler: LatentScaler) -> Result<Self> {
        if scaler.dim() != inner.latent_dim() {
            return Err(shape_err("scaler vs model latent dimension", inner.latent_dim(), scaler.dim()));
        }
        Ok(Self { inner, scaler })
    }
}

impl<P: NoisePredictor> NoisePredictor for ScaledPredictor<P> {
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn predict_noise(&self, x: &DenseMatrix, t: usize, sched: &NoiseSchedule) -> Result<DenseMatrix> {
        self.inner.predict_noise(x, t, sched)
    }

    fn scaler(&self) -> Option<&LatentScaler> {
        Some(&self.scaler)
    }
}

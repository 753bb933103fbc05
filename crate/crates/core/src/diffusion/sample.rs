use super::scaler::LatentScaler;
use super::schedule::NoiseSchedule;
use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{FrozenDenoiser, Mode, TabularDiffusionMlp};
use crate::rng::{sample_standard_normal, RngStream};

/// Anything that predicts the injected noise `ε̂(x_t, t)` for a batch.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;

    fn predict_noise(&self, x: &DenseMatrix, t: usize, sched: &NoiseSchedule) -> Result<DenseMatrix>;

    /// Map from data-space latents to the space the predictor works in.
    /// `None` means the two coincide.
    fn scaler(&self) -> Option<&LatentScaler> {
        None
    }
}

impl NoisePredictor for TabularDiffusionMlp {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn predict_noise(&self, x: &DenseMatrix, t: usize, sched: &NoiseSchedule) -> Result<DenseMatrix> {
        sched.check_step(t)?;
        if self.mode() != Mode::Eval {
            return Err(DiceError::InvalidArgument("sampling needs an eval-mode model".into()));
        }
        let tau = vec![t as f64 / sched.steps() as f64; x.rows()];
        self.predict(x, &tau)
    }
}

impl NoisePredictor for FrozenDenoiser {
    fn latent_dim(&self) -> usize {
        FrozenDenoiser::latent_dim(self)
    }

    fn predict_noise(&self, x: &DenseMatrix, t: usize, sched: &NoiseSchedule) -> Result<DenseMatrix> {
        if sched.steps() != self.steps() {
            return Err(shape_err("frozen model schedule length", self.steps(), sched.steps()));
        }
        self.predict(x, t)
    }
}

/// One reverse update with explicit coefficients:
/// `(x − (1−α)/√(1−ᾱ)·ε̂)/√α + √(1−α)·z`.
#[inline]
pub fn reverse_update(alpha: f64, alpha_bar: f64, x: f64, eps_hat: f64, z: f64) -> f64 {
    (x - (1.0 - alpha) / (1.0 - alpha_bar).sqrt() * eps_hat) / alpha.sqrt() + (1.0 - alpha).sqrt() * z
}

/// Applies the reverse update elementwise, overwriting `x`.
pub(crate) fn reverse_in_place(
    sched: &NoiseSchedule,
    t: usize,
    x: &mut DenseMatrix,
    eps_hat: &DenseMatrix,
    z: Option<&[f64]>,
) {
    let (a, ab) = (sched.alpha(t), sched.alpha_bar(t));
    let c = (1.0 - a) / (1.0 - ab).sqrt();
    let inv = 1.0 / a.sqrt();
    let sigma = (1.0 - a).sqrt();
    match z {
        Some(z) => {
            for ((v, e), n) in x.data_mut().iter_mut().zip(eps_hat.data()).zip(z) {
                *v = (*v - c * e) * inv + sigma * n;
            }
        }
        None => {
            for (v, e) in x.data_mut().iter_mut().zip(eps_hat.data()) {
                *v = (*v - c * e) * inv;
            }
        }
    }
}

/// `x_{t−1}` from `x_t` with externally supplied noise `z`.
pub fn reverse_step<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    x_t: &DenseMatrix,
    t: usize,
    z: &DenseMatrix,
) -> Result<DenseMatrix> {
    sched.check_step(t)?;
    if z.shape() != x_t.shape() {
        return Err(shape_err("reverse_step noise", format!("{:?}", x_t.shape()), format!("{:?}", z.shape())));
    }
    let eps_hat = model.predict_noise(x_t, t, sched)?;
    let mut x = x_t.clone();
    reverse_in_place(sched, t, &mut x, &eps_hat, Some(z.data()));
    Ok(x)
}

/// Full reverse chain from `x_T ~ N(0, I)` down to `x_0` for `n` samples,
/// returned in data space.
pub fn sample_prior<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    n: usize,
    stream: &mut RngStream,
) -> Result<DenseMatrix> {
    let k = model.latent_dim();
    let mut x = sample_standard_normal(stream, n, k)?;
    let mut z = vec![0.0; n * k];
    for t in (1..=sched.steps()).rev() {
        let eps_hat = model.predict_noise(&x, t, sched)?;
        stream.fill_standard_normal(&mut z);
        reverse_in_place(sched, t, &mut x, &eps_hat, Some(&z));
    }
    if !x.is_finite() {
        return Err(DiceError::NonFinite("sample_prior output"));
    }
    if let Some(sc) = model.scaler() {
        sc.restore(&mut x)?;
    }
    Ok(x)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffusion::build_schedule;

    /// Predicts zero noise everywhere.
    pub(crate) struct ZeroNoise(pub usize);

    impl NoisePredictor for ZeroNoise {
        fn latent_dim(&self) -> usize {
            self.0
        }
        fn predict_noise(&self, x: &DenseMatrix, _t: usize, _s: &NoiseSchedule) -> Result<DenseMatrix> {
            Ok(DenseMatrix::zeros(x.rows(), x.cols()))
        }
    }

    /// Predicts a constant value.
    struct ConstNoise(f64);

    impl NoisePredictor for ConstNoise {
        fn latent_dim(&self) -> usize {
            1
        }
        fn predict_noise(&self, x: &DenseMatrix, _t: usize, _s: &NoiseSchedule) -> Result<DenseMatrix> {
            Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |_, _| self.0))
        }
    }

    #[test]
    fn update_by_hand() {
        let v = reverse_update(0.99, 0.5, 1.0, 0.2, 0.0);
        assert!((v - 1.002_196).abs() < 1e-6, "{v}");
        assert_eq!(reverse_update(0.99, 0.5, 2.0, 0.0, 0.0), 2.0 / 0.99f64.sqrt());
    }

    #[test]
    fn zero_prediction_zero_noise_rescales() {
        let s = build_schedule(10, 0.01, 0.05).unwrap();
        let x = DenseMatrix::row_vector(&[1.5, -2.0]);
        let y = reverse_step(&ZeroNoise(2), &s, &x, 4, &DenseMatrix::zeros(1, 2)).unwrap();
        for j in 0..2 {
            assert!((y.get(0, j) - x.get(0, j) / s.alpha(4).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn noise_enters_linearly() {
        let s = build_schedule(10, 0.01, 0.05).unwrap();
        let x = DenseMatrix::row_vector(&[0.7]);
        let base = reverse_step(&ConstNoise(0.3), &s, &x, 7, &DenseMatrix::zeros(1, 1)).unwrap();
        let z = DenseMatrix::row_vector(&[-1.3]);
        let noisy = reverse_step(&ConstNoise(0.3), &s, &x, 7, &z).unwrap();
        let expect = base.get(0, 0) + (1.0 - s.alpha(7)).sqrt() * -1.3;
        assert!((noisy.get(0, 0) - expect).abs() < 1e-15);
        assert!(reverse_step(&ConstNoise(0.3), &s, &x, 11, &z).is_err());
    }

    /// Exact noise predictor for N(0, I) data.
    struct GaussianOracle;

    impl NoisePredictor for GaussianOracle {
        fn latent_dim(&self) -> usize {
            2
        }
        fn predict_noise(&self, x: &DenseMatrix, t: usize, s: &NoiseSchedule) -> Result<DenseMatrix> {
            Ok(x.scale((1.0 - s.alpha_bar(t)).sqrt()))
        }
    }

    #[test]
    fn exact_predictor_reproduces_standard_normal() {
        let s = build_schedule(512, 1e-4, 2e-2).unwrap();
        let x = sample_prior(&GaussianOracle, &s, 20_000, &mut RngStream::new(8)).unwrap();
        let m = x.column_means();
        for j in 0..2 {
            let var = x.column(j).iter().map(|v| (v - m[j]).powi(2)).sum::<f64>() / 19_999.0;
            assert!(m[j].abs() < 0.03 && (var - 1.0).abs() < 0.04, "{} {var}", m[j]);
        }
    }

    #[test]
    fn prior_samples_are_seed_deterministic() {
        let s = build_schedule(20, 0.01, 0.05).unwrap();
        let a = sample_prior(&ZeroNoise(3), &s, 5, &mut RngStream::new(4)).unwrap();
        let b = sample_prior(&ZeroNoise(3), &s, 5, &mut RngStream::new(4)).unwrap();
        assert_eq!(a, b);
    }
}

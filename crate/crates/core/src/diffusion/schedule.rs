use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;

/// Linear β schedule with derived `α_t = 1 − β_t` and `ᾱ_t = Π_{s≤t} α_s`.
///
/// Steps are 1-based; `alpha_bar(0)` is 1 by convention.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(DiceError::InvalidArgument(format!("diffusion step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// `steps` values of β linearly spaced over `[beta_min, beta_max]`, endpoints
/// included.
pub fn build_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(DiceError::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(DiceError::InvalidArgument(format!(
            "β range must satisfy 0 < β_min ≤ β_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = if steps == 1 {
        vec![beta_min]
    } else {
        let span = (beta_max - beta_min) / (steps - 1) as f64;
        (0..steps).map(|i| if i + 1 == steps { beta_max } else { beta_min + span * i as f64 }).collect()
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { beta_min, beta_max, beta, alpha, alpha_bar })
}

/// `√ᾱ_t·u + √(1 − ᾱ_t)·eps`.
pub fn forward_noise(sched: &NoiseSchedule, u: &DenseMatrix, t: usize, eps: &DenseMatrix) -> Result<DenseMatrix> {
    sched.check_step(t)?;
    if u.shape() != eps.shape() {
        return Err(shape_err("forward_noise", format!("{:?}", u.shape()), format!("{:?}", eps.shape())));
    }
    Ok(noise_with(sched.alpha_bar(t), u, eps))
}

pub(crate) fn noise_with(alpha_bar: f64, u: &DenseMatrix, eps: &DenseMatrix) -> DenseMatrix {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = u.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    DenseMatrix::from_vec(u.rows(), u.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_standard_normal, RngStream};

    #[test]
    fn default_schedule_endpoints() {
        let s = build_schedule(512, 1e-4, 2e-2).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(512), 0.02);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(512) < s.alpha_bar(1));
    }

    #[test]
    fn single_step() {
        let s = build_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 0.7);
    }

    #[test]
    fn invalid_ranges() {
        assert!(build_schedule(0, 1e-4, 0.02).is_err());
        assert!(build_schedule(10, 0.0, 0.02).is_err());
        assert!(build_schedule(10, 0.03, 0.02).is_err());
        assert!(build_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn forward_noise_by_hand() {
        let u = DenseMatrix::row_vector(&[2.0]);
        let e = DenseMatrix::row_vector(&[1.0]);
        let y = noise_with(0.25, &u, &e);
        assert!((y.get(0, 0) - 1.866_025_403_784_438_6).abs() < 1e-12);
        assert_eq!(noise_with(1.0, &u, &e), u);
        assert_eq!(noise_with(0.0, &u, &e), e);
        let s = build_schedule(4, 0.1, 0.2).unwrap();
        assert!(forward_noise(&s, &u, 0, &e).is_err());
        assert!(forward_noise(&s, &u, 5, &e).is_err());
        assert!(forward_noise(&s, &u, 1, &DenseMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn unit_variance_preserved() {
        let s = build_schedule(512, 1e-4, 2e-2).unwrap();
        let mut st = RngStream::new(77);
        for t in [1, 100, 256, 512] {
            let u = sample_standard_normal(&mut st, 20_000, 1).unwrap();
            let e = sample_standard_normal(&mut st, 20_000, 1).unwrap();
            let y = forward_noise(&s, &u, t, &e).unwrap();
            let var = y.data().iter().map(|v| v * v).sum::<f64>() / 20_000.0;
            assert!((var - 1.0).abs() < 0.05, "t={t} var={var}");
        }
    }
}

//! Reproducible random streams and the samplers built on them.
//!
//! Every stream is a ChaCha8 keystream: the key comes from a master seed and
//! the 64-bit stream id from a path of indices (e.g. `[purpose, cell, run]`),
//! so streams derived from different paths never share state and a stream's
//! output does not depend on the order in which streams are created.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{DiceError, Result};
use crate::linalg::DenseMatrix;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(1))))
}

/// A seeded, splittable random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Stream identified by `(seed, path)`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        Self::with_stream(seed, fold_path(0, path))
    }

    fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// Child stream; independent of the parent's position.
    pub fn split(&self, index: u64) -> Self {
        Self::with_stream(self.seed, fold_path(self.stream_id, &[index]))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    fn chi_square(&mut self, nu: f64) -> f64 {
        ChiSquared::new(nu).expect("degrees of freedom validated by caller").sample(&mut self.rng)
    }

    fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0).expect("shape validated by caller").sample(&mut self.rng)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `rows × cols` matrix of i.i.d. N(0, 1) draws.
pub fn sample_standard_normal(stream: &mut RngStream, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(DiceError::InvalidArgument(format!("normal sample shape must be positive, got {rows}x{cols}")));
    }
    let mut data = vec![0.0; rows * cols];
    stream.fill_standard_normal(&mut data);
    Ok(DenseMatrix::from_vec(rows, cols, data))
}

/// `n` rows, each multivariate t with `nu` degrees of freedom, location 0
/// and scale matrix `scale_diag·I`, drawn as `z·√(ν/w)` with
/// `z ~ N(0, scale_diag·I)` and `w ~ χ²_ν`.
pub fn sample_multivariate_t(
    stream: &mut RngStream,
    nu: f64,
    scale_diag: f64,
    dim: usize,
    n: usize,
) -> Result<DenseMatrix> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(DiceError::InvalidArgument(format!("t degrees of freedom must be positive, got {nu}")));
    }
    if !(scale_diag > 0.0) || !scale_diag.is_finite() {
        return Err(DiceError::InvalidArgument(format!("t scale must be positive, got {scale_diag}")));
    }
    if dim == 0 || n == 0 {
        return Err(DiceError::InvalidArgument("t sample shape must be positive".into()));
    }
    let sd = scale_diag.sqrt();
    let mut data = Vec::with_capacity(n * dim);
    let mut row = vec![0.0; dim];
    for _ in 0..n {
        stream.fill_standard_normal(&mut row);
        let w = stream.chi_square(nu);
        let mix = (nu / w).sqrt();
        data.extend(row.iter().map(|z| z * sd * mix));
    }
    Ok(DenseMatrix::from_vec(n, dim, data))
}

/// Symmetric Dirichlet draw on the `dim`-simplex.
pub fn sample_dirichlet(stream: &mut RngStream, concentration: f64, dim: usize) -> Result<Vec<f64>> {
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(DiceError::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {concentration}"
        )));
    }
    if dim < 2 {
        return Err(DiceError::InvalidArgument(format!("Dirichlet dimension must be >= 2, got {dim}")));
    }
    loop {
        let g: Vec<f64> = (0..dim).map(|_| stream.gamma(concentration)).collect();
        let total: f64 = g.iter().sum();
        // All-zero draws are only possible for tiny concentrations.
        if total > 0.0 {
            return Ok(g.into_iter().map(|v| v / total).collect());
        }
    }
}

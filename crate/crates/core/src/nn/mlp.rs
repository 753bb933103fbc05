//! The tabular noise-prediction network.
//!
//! ```text
//! x (B×k) ── Linear k→D ───────────────────────┐
//! τ (B)   ── sinusoid 16 ─ Linear→D ─ SiLU ─ Linear→D ─ SiLU ─┤ concat (B×2D)
//!                                                              │
//!   M × [ h ← h + BN(Linear 4D→2D (SiLU(BN(Linear 2D→4D h)))) ]
//!                                                              │
//!   Linear 2D→D ─ SiLU ─ Linear D→k ─────────────────────────── ε̂ (B×k)
//! ```

use super::layers::{silu, silu_backward, BatchNormLayer, LinearLayer, Mode, Parameters};
use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

/// Width of the sinusoidal time features.
pub const TIME_FEATURES: usize = 16;

/// Sinusoidal features of normalized times `τ ∈ [0, 1]`: `sin(τ·ωᵢ)` then
/// `cos(τ·ωᵢ)` with `ωᵢ = 10000^(−i/8)`, `i = 0..8`.
pub fn sinusoidal_embedding(tau: &[f64]) -> DenseMatrix {
    let half = TIME_FEATURES / 2;
    let freqs: Vec<f64> = (0..half).map(|i| (-(10_000f64).ln() * i as f64 / half as f64).exp()).collect();
    DenseMatrix::from_fn(tau.len(), TIME_FEATURES, |r, c| {
        if c < half {
            (tau[r] * freqs[c]).sin()
        } else {
            (tau[r] * freqs[c - half]).cos()
        }
    })
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Latent (input and output) dimension.
    pub latent_dim: usize,
    /// Hidden width `D`.
    pub hidden: usize,
    /// Number of residual blocks `M`.
    pub blocks: usize,
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub expand: LinearLayer,
    pub norm1: BatchNormLayer,
    pub contract: LinearLayer,
    pub norm2: BatchNormLayer,
    act_pre: Option<DenseMatrix>,
}

impl ResidualBlock {
    fn new(width: usize, stream: &mut RngStream) -> Self {
        Self {
            expand: LinearLayer::new(width, 2 * width, stream),
            norm1: BatchNormLayer::new(2 * width),
            contract: LinearLayer::new(2 * width, width, stream),
            norm2: BatchNormLayer::new(width),
            act_pre: None,
        }
    }

    /// `block(h)` without the skip connection.
    fn forward(&mut self, h: &DenseMatrix) -> Result<DenseMatrix> {
        let z = self.expand.forward(h)?;
        let n = self.norm1.forward(&z)?;
        let a = silu(&n);
        self.act_pre = Some(n);
        let z2 = self.contract.forward(&a)?;
        self.norm2.forward(&z2)
    }

    fn backward(&mut self, grad: &DenseMatrix) -> Result<DenseMatrix> {
        let g = self.norm2.backward(grad)?;
        let g = self.contract.backward(&g)?;
        let pre = self.act_pre.as_ref().ok_or(DiceError::BackwardWithoutForward)?;
        let g = silu_backward(pre, &g);
        let g = self.norm1.backward(&g)?;
        self.expand.backward(&g)
    }
}

#[derive(Clone, Debug, Default)]
struct ForwardCache {
    time_pre1: Option<DenseMatrix>,
    time_pre2: Option<DenseMatrix>,
    head_pre: Option<DenseMatrix>,
}

/// Noise predictor `ε̂(x, τ)`.
#[derive(Clone, Debug)]
pub struct TabularDiffusionMlp {
    pub config: ModelConfig,
    pub input_proj: LinearLayer,
    pub time1: LinearLayer,
    pub time2: LinearLayer,
    pub blocks: Vec<ResidualBlock>,
    pub head1: LinearLayer,
    pub head2: LinearLayer,
    cache: ForwardCache,
}

impl TabularDiffusionMlp {
    /// Freshly initialized network in training mode.
    pub fn new(config: ModelConfig, stream: &mut RngStream) -> Result<Self> {
        let ModelConfig { latent_dim: k, hidden: d, blocks } = config;
        if k == 0 || d == 0 {
            return Err(DiceError::InvalidArgument(format!("model dimensions must be positive (k={k}, D={d})")));
        }
        Ok(Self {
            config,
            input_proj: LinearLayer::new(k, d, stream),
            time1: LinearLayer::new(TIME_FEATURES, d, stream),
            time2: LinearLayer::new(d, d, stream),
            blocks: (0..blocks).map(|_| ResidualBlock::new(2 * d, stream)).collect(),
            head1: LinearLayer::new(2 * d, d, stream),
            head2: LinearLayer::new(d, k, stream),
            cache: ForwardCache::default(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for b in &mut self.blocks {
            b.norm1.mode = mode;
            b.norm2.mode = mode;
        }
    }

    pub fn mode(&self) -> Mode {
        self.blocks.first().map_or(Mode::Eval, |b| b.norm1.mode)
    }

    /// Time branch output (B×D) for normalized times.
    fn time_features(&mut self, tau: &[f64], cache: bool) -> Result<DenseMatrix> {
        let e = sinusoidal_embedding(tau);
        let a1 = if cache { self.time1.forward(&e)? } else { self.time1.apply(&e)? };
        let s1 = silu(&a1);
        let a2 = if cache { self.time2.forward(&s1)? } else { self.time2.apply(&s1)? };
        let s2 = silu(&a2);
        if cache {
            self.cache.time_pre1 = Some(a1);
            self.cache.time_pre2 = Some(a2);
        }
        Ok(s2)
    }

    /// Forward pass caching activations for [`Self::backward`]. Batch norm
    /// follows the current mode.
    pub fn forward(&mut self, x: &DenseMatrix, tau: &[f64]) -> Result<DenseMatrix> {
        self.check_input(x, tau)?;
        let hx = self.input_proj.forward(x)?;
        let ht = self.time_features(tau, true)?;
        let mut h = concat_cols(&hx, &ht);
        for b in &mut self.blocks {
            let out = b.forward(&h)?;
            add_assign(&mut h, &out);
        }
        let o = self.head1.forward(&h)?;
        let so = silu(&o);
        self.cache.head_pre = Some(o);
        self.head2.forward(&so)
    }

    /// Backpropagates `∂loss/∂ε̂`; accumulates parameter gradients and returns
    /// `∂loss/∂x`.
    pub fn backward(&mut self, grad_out: &DenseMatrix) -> Result<DenseMatrix> {
        let d = self.config.hidden;
        let g = self.head2.backward(grad_out)?;
        let pre = self.cache.head_pre.as_ref().ok_or(DiceError::BackwardWithoutForward)?;
        let g = silu_backward(pre, &g);
        let mut gh = self.head1.backward(&g)?;
        for b in self.blocks.iter_mut().rev() {
            let inner = b.backward(&gh)?;
            add_assign(&mut gh, &inner);
        }
        let (g_hx, g_ht) = split_cols(&gh, d);
        let pre2 = self.cache.time_pre2.as_ref().ok_or(DiceError::BackwardWithoutForward)?;
        let g = silu_backward(pre2, &g_ht);
        let g = self.time2.backward(&g)?;
        let pre1 = self.cache.time_pre1.as_ref().ok_or(DiceError::BackwardWithoutForward)?;
        let g = silu_backward(pre1, &g);
        self.time1.backward(&g)?;
        self.input_proj.backward(&g_hx)
    }

    /// Eval-mode prediction without touching caches or running statistics.
    pub fn predict(&self, x: &DenseMatrix, tau: &[f64]) -> Result<DenseMatrix> {
        self.check_input(x, tau)?;
        let hx = self.input_proj.apply(x)?;
        let e = sinusoidal_embedding(tau);
        let ht = silu(&self.time2.apply(&silu(&self.time1.apply(&e)?))?);
        let mut h = concat_cols(&hx, &ht);
        for b in &self.blocks {
            let z = apply_affine(&b.expand.apply(&h)?, &b.norm1.eval_affine());
            let z = b.contract.apply(&silu(&z))?;
            let z = apply_affine(&z, &b.norm2.eval_affine());
            add_assign(&mut h, &z);
        }
        self.head2.apply(&silu(&self.head1.apply(&h)?))
    }

    fn check_input(&self, x: &DenseMatrix, tau: &[f64]) -> Result<()> {
        if x.cols() != self.config.latent_dim {
            return Err(shape_err("model input", self.config.latent_dim, x.cols()));
        }
        if tau.len() != x.rows() {
            return Err(shape_err("time vector", x.rows(), tau.len()));
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        self.cache = ForwardCache::default();
        for l in self.linears_mut() {
            l.clear_cache();
        }
        for b in &mut self.blocks {
            b.act_pre = None;
            b.norm1.clear_cache();
            b.norm2.clear_cache();
        }
    }

    fn linears_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut v = vec![&mut self.input_proj, &mut self.time1, &mut self.time2];
        for b in &mut self.blocks {
            v.push(&mut b.expand);
            v.push(&mut b.contract);
        }
        v.push(&mut self.head1);
        v.push(&mut self.head2);
        v
    }
}

impl Parameters for TabularDiffusionMlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.input_proj.visit_params(f);
        self.time1.visit_params(f);
        self.time2.visit_params(f);
        for b in &mut self.blocks {
            b.expand.visit_params(f);
            b.norm1.visit_params(f);
            b.contract.visit_params(f);
            b.norm2.visit_params(f);
        }
        self.head1.visit_params(f);
        self.head2.visit_params(f);
    }

    fn zero_grad(&mut self) {
        for l in self.linears_mut() {
            l.zero_grad();
        }
        for b in &mut self.blocks {
            b.norm1.zero_grad();
            b.norm2.zero_grad();
        }
    }
}

fn apply_affine(x: &DenseMatrix, (scale, shift): &(Vec<f64>, Vec<f64>)) -> DenseMatrix {
    let mut y = x.clone();
    for i in 0..y.rows() {
        for ((v, s), b) in y.row_mut(i).iter_mut().zip(scale).zip(shift) {
            *v = *v * s + b;
        }
    }
    y
}

fn add_assign(h: &mut DenseMatrix, other: &DenseMatrix) {
    for (a, b) in h.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

fn concat_cols(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows(), a.cols() + b.cols());
    for i in 0..a.rows() {
        let r = out.row_mut(i);
        r[..a.cols()].copy_from_slice(a.row(i));
        r[a.cols()..].copy_from_slice(b.row(i));
    }
    out
}

fn split_cols(m: &DenseMatrix, at: usize) -> (DenseMatrix, DenseMatrix) {
    let a = DenseMatrix::from_fn(m.rows(), at, |i, j| m.get(i, j));
    let b = DenseMatrix::from_fn(m.rows(), m.cols() - at, |i, j| m.get(i, at + j));
    (a, b)
}

use crate::error::{shape_err, DiceError, Result};
use crate::linalg::{gemm, DenseMatrix, MatRef};
use crate::rng::RngStream;

/// Visitor over `(parameter, gradient)` slice pairs, in a fixed order.
pub trait Parameters {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64]));
    fn zero_grad(&mut self);

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }
}

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    /// `out × in`
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub grad_weight: DenseMatrix,
    pub grad_bias: Vec<f64>,
    input: Option<DenseMatrix>,
}

impl LinearLayer {
    /// Uniform(−1/√in, 1/√in) weights and biases.
    pub fn new(input: usize, output: usize, stream: &mut RngStream) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = || (2.0 * stream.uniform() - 1.0) * bound;
        let weight = DenseMatrix::from_fn(output, input, |_, _| draw());
        let bias = (0..output).map(|_| draw()).collect();
        Self::from_parts(weight, bias).expect("consistent shapes")
    }

    pub fn from_parts(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(shape_err("LinearLayer", weight.rows(), bias.len()));
        }
        let (o, i) = weight.shape();
        Ok(Self { grad_weight: DenseMatrix::zeros(o, i), grad_bias: vec![0.0; o], weight, bias, input: None })
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }

    /// Forward without caching.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.in_features() {
            return Err(shape_err("linear input", self.in_features(), x.cols()));
        }
        let mut y = DenseMatrix::zeros(x.rows(), self.out_features());
        for i in 0..y.rows() {
            y.row_mut(i).copy_from_slice(&self.bias);
        }
        gemm(
            1.0,
            MatRef::new(x.data(), x.rows(), x.cols(), false),
            MatRef::new(self.weight.data(), self.weight.rows(), self.weight.cols(), true),
            1.0,
            &mut y,
        );
        Ok(y)
    }

    /// Forward, caching the input for [`LinearLayer::backward`].
    pub fn forward(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &DenseMatrix) -> Result<DenseMatrix> {
        let x = self.input.as_ref().ok_or(DiceError::BackwardWithoutForward)?;
        if grad_out.shape() != (x.rows(), self.out_features()) {
            return Err(shape_err(
                "linear backward",
                format!("{}x{}", x.rows(), self.out_features()),
                format!("{:?}", grad_out.shape()),
            ));
        }
        // dW += gᵀ·x, db += Σ_rows g, dx = g·W
        gemm(
            1.0,
            MatRef::new(grad_out.data(), grad_out.rows(), grad_out.cols(), true),
            MatRef::new(x.data(), x.rows(), x.cols(), false),
            1.0,
            &mut self.grad_weight,
        );
        for i in 0..grad_out.rows() {
            for (b, g) in self.grad_bias.iter_mut().zip(grad_out.row(i)) {
                *b += g;
            }
        }
        let mut dx = DenseMatrix::zeros(x.rows(), x.cols());
        gemm(
            1.0,
            MatRef::new(grad_out.data(), grad_out.rows(), grad_out.cols(), false),
            MatRef::new(self.weight.data(), self.weight.rows(), self.weight.cols(), false),
            0.0,
            &mut dx,
        );
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

impl Parameters for LinearLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        f(self.weight.data_mut(), self.grad_weight.data());
        f(&mut self.bias, &self.grad_bias);
    }

    fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// `linear_forward(layer, x) = x·Wᵀ + b`.
pub fn linear_forward(layer: &LinearLayer, x: &DenseMatrix) -> Result<DenseMatrix> {
    layer.apply(x)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad_scalar(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Elementwise `x·sigmoid(x)`.
pub fn silu(x: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_vec(x.rows(), x.cols(), x.data().iter().map(|&v| silu_scalar(v)).collect())
}

/// Gradient through SiLU given the pre-activation.
pub fn silu_backward(pre: &DenseMatrix, grad_out: &DenseMatrix) -> DenseMatrix {
    debug_assert_eq!(pre.shape(), grad_out.shape());
    DenseMatrix::from_vec(
        pre.rows(),
        pre.cols(),
        pre.data().iter().zip(grad_out.data()).map(|(&z, &g)| g * silu_grad_scalar(z)).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct BnCache {
    normalized: DenseMatrix,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// 1-D batch normalization over the rows of a batch.
///
/// Training normalizes with the biased batch variance and folds the unbiased
/// variance into `running_var`; evaluation uses the running statistics only.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

impl BatchNormLayer {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            mode: Mode::Train,
            grad_gamma: vec![0.0; width],
            grad_beta: vec![0.0; width],
            cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Forward in the layer's current mode; caches what backward needs.
    pub fn forward(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let w = self.width();
        if x.cols() != w {
            return Err(shape_err("batchnorm input", w, x.cols()));
        }
        let n = x.rows();
        let (mean, inv_std) = match self.mode {
            Mode::Train => {
                if n < 2 {
                    return Err(DiceError::BatchTooSmall(n));
                }
                let mean = x.column_means();
                let mut var = vec![0.0; w];
                for i in 0..n {
                    for ((v, xv), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                        let d = xv - m;
                        *v += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let unbias = n as f64 / (n as f64 - 1.0);
                for j in 0..w {
                    self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                    self.running_var[j] = (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
                }
                let inv_std = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect::<Vec<_>>(),
            ),
        };
        let mut normalized = DenseMatrix::zeros(n, w);
        let mut y = DenseMatrix::zeros(n, w);
        for i in 0..n {
            let xr = x.row(i);
            let nr = normalized.row_mut(i);
            for j in 0..w {
                nr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let nr = normalized.row(i).to_vec();
            for (j, out) in y.row_mut(i).iter_mut().enumerate() {
                *out = self.gamma[j] * nr[j] + self.beta[j];
            }
        }
        self.cache = Some(BnCache { normalized, inv_std, mode: self.mode });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> Result<DenseMatrix> {
        let cache = self.cache.as_ref().ok_or(DiceError::BackwardWithoutForward)?;
        let (n, w) = cache.normalized.shape();
        if grad_out.shape() != (n, w) {
            return Err(shape_err("batchnorm backward", format!("{n}x{w}"), format!("{:?}", grad_out.shape())));
        }
        let mut sum_g = vec![0.0; w];
        let mut sum_gx = vec![0.0; w];
        for i in 0..n {
            for ((j, g), xh) in grad_out.row(i).iter().enumerate().zip(cache.normalized.row(i)) {
                sum_g[j] += g;
                sum_gx[j] += g * xh;
            }
        }
        for j in 0..w {
            self.grad_beta[j] += sum_g[j];
            self.grad_gamma[j] += sum_gx[j];
        }
        let mut dx = DenseMatrix::zeros(n, w);
        let nf = n as f64;
        for i in 0..n {
            let g = grad_out.row(i);
            let xh = cache.normalized.row(i);
            for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                let scale = self.gamma[j] * cache.inv_std[j];
                *d = match cache.mode {
                    Mode::Train => scale * (g[j] - sum_g[j] / nf - xh[j] * sum_gx[j] / nf),
                    Mode::Eval => scale * g[j],
                };
            }
        }
        Ok(dx)
    }

    /// Per-feature affine map `(scale, shift)` equivalent to eval mode.
    pub fn eval_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> =
            self.gamma.iter().zip(&self.running_var).map(|(g, v)| g / (v + self.epsilon).sqrt()).collect();
        let shift = self.beta.iter().zip(&self.running_mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
        (scale, shift)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameters for BatchNormLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        f(&mut self.gamma, &self.grad_gamma);
        f(&mut self.beta, &self.grad_beta);
    }

    fn zero_grad(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }
}

/// `batchnorm_forward(layer, x)` in the layer's current mode.
pub fn batchnorm_forward(layer: &mut BatchNormLayer, x: &DenseMatrix) -> Result<DenseMatrix> {
    layer.forward(x)
}

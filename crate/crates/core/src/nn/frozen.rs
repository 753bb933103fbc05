//! Single-precision inference copy of a trained network.
//!
//! Batch norm is folded into the preceding linear layer and the time branch is
//! tabulated for every integer step, so a prediction at step `t` is four or
//! five GEMMs. Used by the reverse chain, where the network is evaluated
//! hundreds of times per Gibbs iteration.

use super::layers::silu_scalar;
use super::mlp::{sinusoidal_embedding, TabularDiffusionMlp};
use crate::error::{shape_err, DiceError, Result};
use crate::linalg::{sgemm_abt, DenseMatrix};

const CHUNK_ROWS: usize = 512;

#[derive(Clone, Debug)]
struct Dense32 {
    out: usize,
    inp: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Dense32 {
    fn from_f64(weight: &DenseMatrix, bias: &[f64], row_scale: Option<(&[f64], &[f64])>) -> Self {
        let (out, inp) = weight.shape();
        let mut w = Vec::with_capacity(out * inp);
        let mut b = Vec::with_capacity(out);
        for o in 0..out {
            let (s, shift) = row_scale.map_or((1.0, 0.0), |(sc, sh)| (sc[o], sh[o]));
            w.extend(weight.row(o).iter().map(|v| (v * s) as f32));
            b.push((bias[o] * s + shift) as f32);
        }
        Self { out, inp, weight: w, bias: b }
    }

    /// `y = x·Wᵀ + b` for `rows` rows.
    fn apply(&self, x: &[f32], rows: usize, y: &mut [f32]) {
        sgemm_abt(rows, self.inp, self.out, x, &self.weight, y);
        for r in y.chunks_exact_mut(self.out) {
            for (v, b) in r.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Block32 {
    expand: Dense32,
    contract: Dense32,
}

/// Eval-mode network in `f32`, tabulated for integer steps `1..=steps`.
#[derive(Clone, Debug)]
pub struct FrozenDenoiser {
    latent_dim: usize,
    hidden: usize,
    steps: usize,
    input: Dense32,
    /// Row `t` holds the time-branch output for step `t`.
    time_table: Vec<f32>,
    blocks: Vec<Block32>,
    head1: Dense32,
    head2: Dense32,
}

#[inline]
fn silu32(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

impl FrozenDenoiser {
    /// Snapshot of `model` in eval mode for a chain of `steps` steps.
    pub fn from_model(model: &TabularDiffusionMlp, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(DiceError::InvalidArgument("frozen network needs at least one step".into()));
        }
        let d = model.config.hidden;
        let tau: Vec<f64> = (0..=steps).map(|t| t as f64 / steps as f64).collect();
        let e = sinusoidal_embedding(&tau);
        let a1 = model.time1.apply(&e)?;
        let s1 = DenseMatrix::from_vec(a1.rows(), a1.cols(), a1.data().iter().map(|&v| silu_scalar(v)).collect());
        let a2 = model.time2.apply(&s1)?;
        let time_table = a2.data().iter().map(|&v| silu_scalar(v) as f32).collect();

        let blocks = model
            .blocks
            .iter()
            .map(|b| {
                let (s1, h1) = b.norm1.eval_affine();
                let (s2, h2) = b.norm2.eval_affine();
                Block32 {
                    expand: Dense32::from_f64(&b.expand.weight, &b.expand.bias, Some((&s1, &h1))),
                    contract: Dense32::from_f64(&b.contract.weight, &b.contract.bias, Some((&s2, &h2))),
                }
            })
            .collect();
        Ok(Self {
            latent_dim: model.config.latent_dim,
            hidden: d,
            steps,
            input: Dense32::from_f64(&model.input_proj.weight, &model.input_proj.bias, None),
            time_table,
            blocks,
            head1: Dense32::from_f64(&model.head1.weight, &model.head1.bias, None),
            head2: Dense32::from_f64(&model.head2.weight, &model.head2.bias, None),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// ε̂ for every row of `x` at integer step `t`.
    pub fn predict(&self, x: &DenseMatrix, t: usize) -> Result<DenseMatrix> {
        let k = self.latent_dim;
        if x.cols() != k {
            return Err(shape_err("frozen model input", k, x.cols()));
        }
        if t == 0 || t > self.steps {
            return Err(DiceError::InvalidArgument(format!("step {t} outside 1..={}", self.steps)));
        }
        let d = self.hidden;
        let w = 2 * d;
        let time = &self.time_table[t * d..(t + 1) * d];
        let mut out = vec![0.0f64; x.rows() * k];

        let cap = CHUNK_ROWS.min(x.rows().max(1));
        let mut xin = vec![0.0f32; cap * k];
        let mut hx = vec![0.0f32; cap * d];
        let mut h = vec![0.0f32; cap * w];
        let mut wide = vec![0.0f32; cap * 2 * w];
        let mut narrow = vec![0.0f32; cap * w];
        let mut head = vec![0.0f32; cap * d];
        let mut eps = vec![0.0f32; cap * k];

        for start in (0..x.rows()).step_by(cap) {
            let rows = cap.min(x.rows() - start);
            let xin = &mut xin[..rows * k];
            for (dst, src) in xin.iter_mut().zip(&x.data()[start * k..(start + rows) * k]) {
                *dst = *src as f32;
            }
            let hx = &mut hx[..rows * d];
            self.input.apply(xin, rows, hx);
            let h = &mut h[..rows * w];
            for r in 0..rows {
                h[r * w..r * w + d].copy_from_slice(&hx[r * d..(r + 1) * d]);
                h[r * w + d..(r + 1) * w].copy_from_slice(time);
            }
            for b in &self.blocks {
                let wide = &mut wide[..rows * 2 * w];
                b.expand.apply(h, rows, wide);
                wide.iter_mut().for_each(|v| *v = silu32(*v));
                let narrow = &mut narrow[..rows * w];
                b.contract.apply(wide, rows, narrow);
                for (a, z) in h.iter_mut().zip(narrow.iter()) {
                    *a += z;
                }
            }
            let head = &mut head[..rows * d];
            self.head1.apply(h, rows, head);
            head.iter_mut().for_each(|v| *v = silu32(*v));
            let eps = &mut eps[..rows * k];
            self.head2.apply(head, rows, eps);
            for (dst, src) in out[start * k..(start + rows) * k].iter_mut().zip(eps.iter()) {
                *dst = *src as f64;
            }
        }
        Ok(DenseMatrix::from_vec(x.rows(), k, out))
    }
}

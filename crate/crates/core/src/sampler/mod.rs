//! Split Gibbs denoising: an exact Gaussian likelihood update alternated
//! with a truncated reverse diffusion chain.
//!
//! Every `(cell, run)` pair owns the stream `RngStream::derive(seed,
//! [RUN_TAG, cell, run])` and draws from it in a fixed order, and the noise
//! predictors treat rows independently, so any batching or thread count gives
//! bit-identical results.

mod confidence;

use rayon::prelude::*;

use crate::diffusion::sample::reverse_in_place;
use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{shape_err, DiceError, Result};
use crate::factor::{project, FactorLoading};
use crate::linalg::{cholesky, solve_lower, solve_upper_t, DenseMatrix};
use crate::rng::RngStream;

pub use confidence::{confidence_set, nearest_center, quantile, AssignMetric, ConfidenceSummary};

const RUN_TAG: u64 = 0xD1CE;
/// Rows per parallel task. Small enough to spread across threads, large
/// enough that the network GEMMs stay efficient.
const TASK_ROWS: usize = 256;

/// Annealing levels across Gibbs iterations.
#[derive(Clone, Debug, PartialEq)]
pub enum RhoSchedule {
    Constant {
        rho: f64,
        iterations: usize,
    },
    /// Equally spaced from `start` to `end`, both included.
    Linear {
        start: f64,
        end: f64,
        iterations: usize,
    },
}

impl RhoSchedule {
    pub fn levels(&self) -> Vec<f64> {
        match *self {
            RhoSchedule::Constant { rho, iterations } => vec![rho; iterations],
            RhoSchedule::Linear { start, end, iterations } => match iterations {
                0 => Vec::new(),
                1 => vec![start],
                n => (0..n).map(|s| start + (end - start) * s as f64 / (n - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsConfig {
    /// One ρ per iteration.
    pub rhos: Vec<f64>,
    pub n_runs: usize,
    pub seed: u64,
    /// Inject noise in the final reverse step (`t = 1`) too.
    pub final_step_noise: bool,
}

impl GibbsConfig {
    pub fn new(schedule: &RhoSchedule, n_runs: usize, seed: u64) -> Self {
        Self { rhos: schedule.levels(), n_runs, seed, final_step_noise: true }
    }

    pub fn iterations(&self) -> usize {
        self.rhos.len()
    }

    /// ρ = 0 is accepted as the tight-coupling limit.
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(DiceError::InvalidArgument("n_runs must be at least 1".into()));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(DiceError::InvalidArgument(format!("annealing level {r} must be finite and ≥ 0")));
        }
        Ok(())
    }
}

/// Stream for run `run` of cell `cell`.
pub fn run_stream(seed: u64, cell: usize, run: usize) -> RngStream {
    RngStream::derive(seed, &[RUN_TAG, cell as u64, run as u64])
}

/// Reverse-chain start `argmin_t |ᾱ_t − 1/(1+ρ²)|` over `t ∈ 0..=T`, with
/// `ᾱ_0 = 1`. Ties go to the smaller `t`.
pub fn t0_for_rho(sched: &NoiseSchedule, rho: f64) -> usize {
    let target = 1.0 / (1.0 + rho * rho);
    let mut best = (0, (1.0 - target).abs());
    for t in 1..=sched.steps() {
        let gap = (sched.alpha_bar(t) - target).abs();
        if gap < best.1 {
            best = (t, gap);
        }
    }
    best.0
}

/// Precision factor for one ρ: `P = V̂ᵀV̂ + ρ⁻²I = R·Rᵀ`.
#[derive(Clone, Debug)]
struct LikelihoodKernel {
    rho_inv2: f64,
    chol: DenseMatrix,
}

impl LikelihoodKernel {
    fn new(gram: &DenseMatrix, rho: f64) -> Result<Option<Self>> {
        if rho == 0.0 {
            return Ok(None);
        }
        let rho_inv2 = 1.0 / (rho * rho);
        let mut p = gram.clone();
        for i in 0..p.rows() {
            p.set(i, i, p.get(i, i) + rho_inv2);
        }
        // Λ exists for every ρ > 0, so a failure here is a numerical bug.
        let chol = cholesky(&p).map_err(|_| DiceError::NotPositiveDefinite)?;
        Ok(Some(Self { rho_inv2, chol }))
    }

    /// `Z = Λ(y + ρ⁻²u) + R⁻ᵀξ`, overwriting `u`.
    fn draw(&self, y: &[f64], u: &mut [f64], stream: &mut RngStream, xi: &mut [f64]) {
        for (ui, yi) in u.iter_mut().zip(y) {
            *ui = yi + self.rho_inv2 * *ui;
        }
        solve_lower(&self.chol, u);
        solve_upper_t(&self.chol, u);
        stream.fill_standard_normal(xi);
        solve_upper_t(&self.chol, xi);
        for (ui, e) in u.iter_mut().zip(xi.iter()) {
            *ui += e;
        }
    }
}

/// One draw from `N(Λ(V̂ᵀ(x_q − c) + ρ⁻²u), Λ)` with `Λ = (V̂ᵀV̂ + ρ⁻²I)⁻¹`.
/// `ρ = 0` returns `u` unchanged.
pub fn likelihood_step(
    loading: &FactorLoading,
    x_q: &[f64],
    u: &[f64],
    rho: f64,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    let k = loading.latent_dim();
    if u.len() != k {
        return Err(shape_err("likelihood_step latent", k, u.len()));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(DiceError::InvalidArgument(format!("annealing level {rho} must be finite and ≥ 0")));
    }
    let y = project(loading, &DenseMatrix::new(1, x_q.len(), x_q.to_vec())?)?;
    let gram = loading.v_hat().t_matmul(loading.v_hat())?;
    let mut z = u.to_vec();
    if let Some(kernel) = LikelihoodKernel::new(&gram, rho)? {
        kernel.draw(y.data(), &mut z, stream, &mut vec![0.0; k]);
    }
    Ok(z)
}

/// Runs the reverse chain from `t0` down to 1 on every row of `x`, each row
/// drawing its noise from its own stream.
fn reverse_chain<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    t0: usize,
    x: &mut DenseMatrix,
    streams: &mut [RngStream],
    final_step_noise: bool,
) -> Result<()> {
    if t0 == 0 {
        return Ok(());
    }
    let a0 = sched.alpha_bar(t0).sqrt();
    x.data_mut().iter_mut().for_each(|v| *v *= a0);
    let k = x.cols();
    let mut z = vec![0.0; x.data().len()];
    for t in (1..=t0).rev() {
        let eps_hat = model.predict_noise(x, t, sched)?;
        if t > 1 || final_step_noise {
            for (chunk, s) in z.chunks_exact_mut(k).zip(streams.iter_mut()) {
                s.fill_standard_normal(chunk);
            }
            reverse_in_place(sched, t, x, &eps_hat, Some(&z));
        } else {
            reverse_in_place(sched, t, x, &eps_hat, None);
        }
    }
    Ok(())
}

/// Reverse-chain start for a predictor: when it works on standardized
/// latents `(u − m)/s`, coupling noise of scale `ρ` becomes `ρ/s` there.
pub fn model_t0<P: NoisePredictor + ?Sized>(model: &P, sched: &NoiseSchedule, rho: f64) -> usize {
    let scale = model.scaler().map_or(1.0, |s| s.scale());
    t0_for_rho(sched, rho / scale)
}

/// Prior step on data-space rows: into the predictor's space, through the
/// reverse chain and back.
fn prior_chain<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    t0: usize,
    u: &mut DenseMatrix,
    streams: &mut [RngStream],
    final_step_noise: bool,
) -> Result<()> {
    if t0 == 0 {
        return Ok(());
    }
    match model.scaler() {
        Some(sc) => {
            sc.standardize(u)?;
            reverse_chain(model, sched, t0, u, streams, final_step_noise)?;
            sc.restore(u)
        }
        None => reverse_chain(model, sched, t0, u, streams, final_step_noise),
    }
}

/// Prior alignment: start at `x_{t0} = √ᾱ_{t0}·z` and run the reverse chain
/// to `t = 0`. With a scaled predictor this happens on the standardized `z`
/// and `t0` comes from [`model_t0`].
pub fn prior_step<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    z: &[f64],
    rho: f64,
    stream: &mut RngStream,
    final_step_noise: bool,
) -> Result<Vec<f64>> {
    if z.len() != model.latent_dim() {
        return Err(shape_err("prior_step latent", model.latent_dim(), z.len()));
    }
    let mut x = DenseMatrix::new(1, z.len(), z.to_vec())?;
    prior_chain(model, sched, model_t0(model, sched, rho), &mut x, std::slice::from_mut(stream), final_step_noise)?;
    Ok(x.into_data())
}

/// Runs the full Gibbs chain for a block of rows. `y` holds the projected
/// observations and is also the initial state.
fn gibbs_block<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    kernels: &[(Option<LikelihoodKernel>, usize)],
    y: &DenseMatrix,
    streams: &mut [RngStream],
    final_step_noise: bool,
) -> Result<DenseMatrix> {
    let k = y.cols();
    let mut u = y.clone();
    let mut xi = vec![0.0; k];
    for (s, (kernel, t0)) in kernels.iter().enumerate() {
        if let Some(kernel) = kernel {
            for (r, stream) in streams.iter_mut().enumerate() {
                kernel.draw(y.row(r), u.row_mut(r), stream, &mut xi);
            }
        }
        prior_chain(model, sched, *t0, &mut u, streams, final_step_noise)?;
        if !u.is_finite() {
            return Err(DiceError::NonFiniteState { iteration: s + 1 });
        }
    }
    Ok(u)
}

fn check_inputs<P: NoisePredictor + ?Sized>(model: &P, loading: &FactorLoading, cfg: &GibbsConfig) -> Result<()> {
    cfg.validate()?;
    if model.latent_dim() != loading.latent_dim() {
        return Err(shape_err("model vs loading latent dimension", loading.latent_dim(), model.latent_dim()));
    }
    Ok(())
}

fn kernels<P: NoisePredictor + ?Sized>(
    model: &P,
    loading: &FactorLoading,
    sched: &NoiseSchedule,
    rhos: &[f64],
) -> Result<Vec<(Option<LikelihoodKernel>, usize)>> {
    let gram = loading.v_hat().t_matmul(loading.v_hat())?;
    rhos.iter().map(|&r| Ok((LikelihoodKernel::new(&gram, r)?, model_t0(model, sched, r)))).collect()
}

/// One Gibbs chain for a single observation, drawing from `stream`.
pub fn dice_denoise<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    loading: &FactorLoading,
    x_q: &[f64],
    cfg: &GibbsConfig,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_inputs(model, loading, cfg)?;
    let y = project(loading, &DenseMatrix::new(1, x_q.len(), x_q.to_vec())?)?;
    let ks = kernels(model, loading, sched, &cfg.rhos)?;
    Ok(gibbs_block(model, sched, &ks, &y, std::slice::from_mut(stream), cfg.final_step_noise)?.into_data())
}

/// `runs` independent chains for every row of `x`. Entry `i` of the result
/// holds the `runs × k` outputs of cell `first_cell + i`.
pub fn denoise_cells<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    loading: &FactorLoading,
    x: &DenseMatrix,
    cfg: &GibbsConfig,
    runs: usize,
    first_cell: usize,
) -> Result<Vec<DenseMatrix>> {
    check_inputs(model, loading, cfg)?;
    let y = project(loading, x)?;
    let ks = kernels(model, loading, sched, &cfg.rhos)?;
    let k = y.cols();
    let tasks: Vec<(usize, usize)> = (0..x.rows()).flat_map(|c| (0..runs).map(move |r| (c, r))).collect();

    let blocks: Vec<DenseMatrix> = tasks
        .par_chunks(TASK_ROWS)
        .map(|chunk| {
            let rows: Vec<usize> = chunk.iter().map(|&(c, _)| c).collect();
            let mut streams: Vec<RngStream> =
                chunk.iter().map(|&(c, r)| run_stream(cfg.seed, first_cell + c, r)).collect();
            gibbs_block(model, sched, &ks, &y.select_rows(&rows), &mut streams, cfg.final_step_noise)
        })
        .collect::<Result<_>>()?;

    let mut out: Vec<DenseMatrix> = (0..x.rows()).map(|_| DenseMatrix::zeros(runs, k)).collect();
    let flat = blocks.iter().flat_map(|b| (0..b.rows()).map(move |i| b.row(i)));
    for (&(c, r), row) in tasks.iter().zip(flat) {
        out[c].row_mut(r).copy_from_slice(row);
    }
    Ok(out)
}

/// Mean of `cfg.n_runs` chains for every row of `x` (cells numbered from
/// `first_cell`).
pub fn dice_average_cells<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    loading: &FactorLoading,
    x: &DenseMatrix,
    cfg: &GibbsConfig,
    first_cell: usize,
) -> Result<DenseMatrix> {
    let runs = denoise_cells(model, sched, loading, x, cfg, cfg.n_runs, first_cell)?;
    let k = loading.latent_dim();
    let mut out = DenseMatrix::zeros(x.rows(), k);
    for (i, r) in runs.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&r.column_means());
    }
    Ok(out)
}

/// Mean of `cfg.n_runs` chains for a single observation, treated as cell 0.
pub fn dice_average<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    loading: &FactorLoading,
    x_q: &[f64],
    cfg: &GibbsConfig,
) -> Result<Vec<f64>> {
    let x = DenseMatrix::new(1, x_q.len(), x_q.to_vec())?;
    Ok(dice_average_cells(model, sched, loading, &x, cfg, 0)?.into_data())
}

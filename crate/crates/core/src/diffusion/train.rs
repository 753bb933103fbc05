use std::collections::BTreeMap;

use super::sample::NoisePredictor;
use super::scaler::{LatentScaler, ScaledPredictor};
use super::schedule::{noise_with, NoiseSchedule};
use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{FrozenDenoiser, LrSchedule, Mode, ModelConfig, OptimizerState, Parameters, TabularDiffusionMlp};
use crate::rng::{sample_dirichlet, RngStream};

// Stream tags so that initialization, batching and mixup draw independently.
const TAG_INIT: u64 = 1;
const TAG_EPOCH: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    /// Per-sample probability of replacing a row by a same-class mixture.
    pub mixup_probability: f64,
    pub mixup_group_size: usize,
    /// Train on `(u − mean)/scale` instead of raw latents.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 4048,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            lr_schedule: LrSchedule::Constant,
            mixup_probability: 0.0,
            mixup_group_size: 5,
            standardize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DiceError::BatchTooSmall(self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DiceError::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(DiceError::InvalidArgument(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.mixup_probability) {
            return Err(DiceError::InvalidArgument(format!(
                "mixup probability {} outside [0, 1]",
                self.mixup_probability
            )));
        }
        if self.mixup_probability > 0.0 && self.mixup_group_size == 0 {
            return Err(DiceError::InvalidArgument("mixup group size must be positive".into()));
        }
        Ok(())
    }
}

/// A trained network, the latent standardization it was trained under and the
/// mean loss of every epoch.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: TabularDiffusionMlp,
    pub scaler: LatentScaler,
    pub loss_trace: Vec<f64>,
}

impl TrainedModel {
    /// The f64 network as a data-space predictor.
    pub fn predictor(&self) -> ScaledPredictor<TabularDiffusionMlp> {
        ScaledPredictor { inner: self.model.clone(), scaler: self.scaler.clone() }
    }

    /// The frozen f32 inference copy as a data-space predictor.
    pub fn frozen(&self, steps: usize) -> Result<ScaledPredictor<FrozenDenoiser>> {
        Ok(ScaledPredictor { inner: FrozenDenoiser::from_model(&self.model, steps)?, scaler: self.scaler.clone() })
    }
}

/// Row indices of the training pool grouped by label.
#[derive(Clone, Debug)]
pub struct ClassPool<'a> {
    data: &'a DenseMatrix,
    members: BTreeMap<usize, Vec<usize>>,
}

impl<'a> ClassPool<'a> {
    pub fn new(data: &'a DenseMatrix, labels: &[usize]) -> Result<Self> {
        if labels.len() != data.rows() {
            return Err(shape_err("class pool labels", data.rows(), labels.len()));
        }
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            members.entry(l).or_default().push(i);
        }
        Ok(Self { data, members })
    }

    pub fn members(&self, label: usize) -> Option<&[usize]> {
        self.members.get(&label).map(Vec::as_slice)
    }
}

/// Same-class mixup. Each row is selected with probability `probability`; a
/// selected row is replaced by a Dirichlet(1) combination of itself and
/// `group_size − 1` pool rows of the same label drawn with replacement.
///
/// Returns the augmented batch and which rows were replaced.
pub fn mixup_augment(
    batch: &DenseMatrix,
    labels: &[usize],
    pool: &ClassPool<'_>,
    stream: &mut RngStream,
    group_size: usize,
    probability: f64,
) -> Result<(DenseMatrix, Vec<bool>)> {
    if labels.len() != batch.rows() {
        return Err(shape_err("mixup labels", batch.rows(), labels.len()));
    }
    if batch.cols() != pool.data.cols() {
        return Err(shape_err("mixup pool width", batch.cols(), pool.data.cols()));
    }
    if group_size == 0 {
        return Err(DiceError::InvalidArgument("mixup group size must be positive".into()));
    }
    let mut out = batch.clone();
    let mut mixed = vec![false; batch.rows()];
    for (i, &label) in labels.iter().enumerate() {
        let members = pool
            .members(label)
            .ok_or_else(|| DiceError::InvalidArgument(format!("label {label} has no training examples")))?;
        if stream.uniform() >= probability {
            continue;
        }
        mixed[i] = true;
        let w = sample_dirichlet(stream, 1.0, group_size)?;
        let row = out.row_mut(i);
        row.iter_mut().for_each(|v| *v *= w[0]);
        for &wj in &w[1..] {
            let src = pool.data.row(members[stream.below(members.len())]);
            for (v, s) in row.iter_mut().zip(src) {
                *v += wj * s;
            }
        }
    }
    Ok((out, mixed))
}

/// Batches of near-equal size covering `0..n`. None is smaller than 2, which
/// can push one past `batch` by a single row when `batch` is 2.
fn batch_bounds(n: usize, batch: usize) -> Vec<(usize, usize)> {
    if n <= batch {
        return vec![(0, n)];
    }
    let count = n.div_ceil(batch).min(n / 2);
    (0..count).map(|b| (b * n / count, (b + 1) * n / count)).collect()
}

/// Fits the noise predictor by minimizing the per-coordinate mean squared
/// error between injected and predicted noise, with `t` uniform on `1..=T`.
pub fn train(
    data: &DenseMatrix,
    labels: Option<&[usize]>,
    sched: &NoiseSchedule,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_observed(data, labels, sched, model_cfg, cfg, &mut |_, _| {})
}

/// [`train`] that reports `(epoch, mean loss)` after every epoch, epochs
/// counted from 1.
pub fn train_observed(
    data: &DenseMatrix,
    labels: Option<&[usize]>,
    sched: &NoiseSchedule,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.cols() != model_cfg.latent_dim {
        return Err(shape_err("training data width", model_cfg.latent_dim, data.cols()));
    }
    if data.rows() < 2 {
        return Err(DiceError::BatchTooSmall(data.rows()));
    }
    if !data.is_finite() {
        return Err(DiceError::NonFinite("training data"));
    }
    let scaler = if cfg.standardize { LatentScaler::fit(data)? } else { LatentScaler::identity(data.cols()) };
    let mut scaled = data.clone();
    scaler.standardize(&mut scaled)?;
    let data = &scaled;
    let pool = match (cfg.mixup_probability > 0.0, labels) {
        (true, Some(l)) => Some(ClassPool::new(data, l)?),
        (true, None) => return Err(DiceError::InvalidArgument("mixup needs labels".into())),
        (false, _) => None,
    };

    let mut model = TabularDiffusionMlp::new(model_cfg, &mut RngStream::derive(cfg.seed, &[TAG_INIT]))?;
    let mut opt =
        OptimizerState::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay).with_schedule(cfg.lr_schedule);
    let (m, k) = data.shape();
    let steps = sched.steps();
    let bounds = batch_bounds(m, cfg.batch_size);
    let mut order: Vec<usize> = (0..m).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut stream = RngStream::derive(cfg.seed, &[TAG_EPOCH, epoch as u64]);
        stream.shuffle(&mut order);
        let mut total = 0.0;
        for &(lo, hi) in &bounds {
            let idx = &order[lo..hi];
            let mut x0 = data.select_rows(idx);
            if let (Some(pool), Some(l)) = (&pool, labels) {
                let bl: Vec<usize> = idx.iter().map(|&i| l[i]).collect();
                x0 = mixup_augment(&x0, &bl, pool, &mut stream, cfg.mixup_group_size, cfg.mixup_probability)?.0;
            }
            let n = idx.len();
            let ts: Vec<usize> = (0..n).map(|_| 1 + stream.below(steps)).collect();
            let mut eps = DenseMatrix::zeros(n, k);
            stream.fill_standard_normal(eps.data_mut());
            let mut xt = DenseMatrix::zeros(n, k);
            for (r, &t) in ts.iter().enumerate() {
                let (a, b) = (sched.alpha_bar(t).sqrt(), (1.0 - sched.alpha_bar(t)).sqrt());
                for ((o, u), e) in xt.row_mut(r).iter_mut().zip(x0.row(r)).zip(eps.row(r)) {
                    *o = a * u + b * e;
                }
            }
            let tau: Vec<f64> = ts.iter().map(|&t| t as f64 / steps as f64).collect();

            model.zero_grad();
            let pred = model.forward(&xt, &tau)?;
            let scale = 1.0 / (n * k) as f64;
            let mut loss = 0.0;
            let grad: Vec<f64> = pred
                .data()
                .iter()
                .zip(eps.data())
                .map(|(p, e)| {
                    let d = p - e;
                    loss += d * d;
                    2.0 * d * scale
                })
                .collect();
            loss *= scale;
            if !loss.is_finite() {
                return Err(DiceError::NonFiniteLoss { epoch: epoch + 1 });
            }
            model.backward(&DenseMatrix::new(n, k, grad)?)?;
            if !opt.step(&mut model) {
                return Err(DiceError::NonFiniteLoss { epoch: epoch + 1 });
            }
            total += loss * n as f64;
        }
        trace.push(total / m as f64);
        on_epoch(epoch + 1, total / m as f64);
    }
    model.set_mode(Mode::Eval);
    model.clear_caches();
    Ok(TrainedModel { model, scaler, loss_trace: trace })
}

/// Per-coordinate mean squared noise-prediction error over data-space
/// latents, with one uniform step and one noise draw per row.
pub fn noise_prediction_loss<P: NoisePredictor + ?Sized>(
    model: &P,
    data: &DenseMatrix,
    sched: &NoiseSchedule,
    stream: &mut RngStream,
) -> Result<f64> {
    if data.cols() != model.latent_dim() {
        return Err(shape_err("loss data width", model.latent_dim(), data.cols()));
    }
    let mut data = data.clone();
    if let Some(sc) = model.scaler() {
        sc.standardize(&mut data)?;
    }
    let k = data.cols();
    let mut total = 0.0;
    let mut eps = DenseMatrix::zeros(1, k);
    for r in 0..data.rows() {
        let t = 1 + stream.below(sched.steps());
        stream.fill_standard_normal(eps.data_mut());
        let u = DenseMatrix::row_vector(data.row(r));
        let xt = noise_with(sched.alpha_bar(t), &u, &eps);
        let pred = model.predict_noise(&xt, t, sched)?;
        total += pred.data().iter().zip(eps.data()).map(|(p, e)| (p - e).powi(2)).sum::<f64>();
    }
    Ok(total / (data.rows() * k) as f64)
}

use super::{denoise_cells, GibbsConfig};
use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{shape_err, DiceError, Result};
use crate::factor::FactorLoading;
use crate::linalg::{dot, norm, DenseMatrix};

/// Distance used to assign samples to reference centers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AssignMetric {
    #[default]
    Euclidean,
    /// `1 − cos`. Undefined for a zero center or sample.
    Cosine,
}

/// Spread of repeated single-chain outputs for one observation.
#[derive(Clone, Debug)]
pub struct ConfidenceSummary {
    /// `S × k`
    pub samples: DenseMatrix,
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub median: Vec<f64>,
    pub q975: Vec<f64>,
    /// Fraction of samples nearest to each center, when centers were given.
    pub assignment: Option<Vec<f64>>,
}

impl ConfidenceSummary {
    /// Mean Euclidean distance over all sample pairs.
    pub fn mean_pairwise_distance(&self) -> f64 {
        let s = &self.samples;
        let n = s.rows();
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += s.row(i).iter().zip(s.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
        }
        total / (n * (n - 1) / 2) as f64
    }
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Index of the center closest to `x`, lowest index on ties.
pub fn nearest_center(x: &[f64], centers: &DenseMatrix, metric: AssignMetric) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let ctr = centers.row(c);
        let d = match metric {
            AssignMetric::Euclidean => x.iter().zip(ctr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            AssignMetric::Cosine => {
                let denom = norm(x) * norm(ctr);
                if denom == 0.0 {
                    return Err(DiceError::InvalidArgument("cosine assignment with a zero vector".into()));
                }
                1.0 - dot(x, ctr) / denom
            }
        };
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best.0)
}

/// `s` independent chains for `x_q` (as cell 0) plus per-dimension summary
/// statistics and, with `centers`, assignment frequencies.
#[allow(clippy::too_many_arguments)]
pub fn confidence_set<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    loading: &FactorLoading,
    x_q: &[f64],
    cfg: &GibbsConfig,
    s: usize,
    centers: Option<&DenseMatrix>,
    metric: AssignMetric,
) -> Result<ConfidenceSummary> {
    if s < 2 {
        return Err(DiceError::InvalidArgument(format!("confidence set needs at least 2 samples, got {s}")));
    }
    let k = loading.latent_dim();
    if let Some(c) = centers {
        if c.cols() != k || c.rows() == 0 {
            return Err(shape_err("reference centers", format!("n x {k}"), format!("{:?}", c.shape())));
        }
    }
    let x = DenseMatrix::new(1, x_q.len(), x_q.to_vec())?;
    let samples = denoise_cells(model, sched, loading, &x, cfg, s, 0)?.pop().expect("one cell");

    let mut q025 = Vec::with_capacity(k);
    let mut median = Vec::with_capacity(k);
    let mut q975 = Vec::with_capacity(k);
    for j in 0..k {
        let mut col = samples.column(j);
        col.sort_by(f64::total_cmp);
        q025.push(quantile(&col, 0.025));
        median.push(quantile(&col, 0.5));
        q975.push(quantile(&col, 0.975));
    }
    let assignment = match centers {
        Some(c) => {
            let mut counts = vec![0usize; c.rows()];
            for i in 0..s {
                counts[nearest_center(samples.row(i), c, metric)?] += 1;
            }
            Some(counts.iter().map(|&n| n as f64 / s as f64).collect())
        }
        None => None,
    };
    Ok(ConfidenceSummary { mean: samples.column_means(), samples, q025, median, q975, assignment })
}

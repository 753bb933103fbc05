//! Synthetic factor-model datasets: `X = U·Vᵀ + ε` with mixture latents.

use crate::error::{shape_err, DiceError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{sample_multivariate_t, sample_standard_normal, RngStream};

const TAG_LOADING: u64 = 1;
const TAG_REFERENCE: u64 = 2;
const TAG_TARGET: u64 = 3;
const TAG_CENTERS: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ComponentKind {
    Gaussian,
    /// Multivariate t with this many degrees of freedom.
    StudentT {
        nu: f64,
    },
}

/// One mixture component: `center + √scale·(standard draw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub kind: ComponentKind,
    pub center: Vec<f64>,
    /// Diagonal of the covariance (Gaussian) or scale matrix (t).
    pub scale: f64,
    pub weight: f64,
}

impl MixtureComponent {
    pub fn gaussian(center: Vec<f64>, scale: f64, weight: f64) -> Self {
        Self { kind: ComponentKind::Gaussian, center, scale, weight }
    }

    pub fn student_t(nu: f64, center: Vec<f64>, scale: f64, weight: f64) -> Self {
        Self { kind: ComponentKind::StudentT { nu }, center, scale, weight }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSpec {
    Gaussian {
        variance: f64,
    },
    /// Multivariate t per row with scale matrix `scale·I`.
    StudentT {
        nu: f64,
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgpConfig {
    pub d: usize,
    pub k: usize,
    /// Reference rows.
    pub m: usize,
    /// Target rows.
    pub n: usize,
    pub prior: Vec<MixtureComponent>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl DgpConfig {
    /// The two-population benchmark: `½N(0, 1.5I) + ½N(1, 1.3I)` in `k = 15`,
    /// `d = 2000`, unit Gaussian noise, 1600 reference and 400 target rows.
    /// Label 0 is the component centered at the origin.
    pub fn two_cluster(seed: u64) -> Self {
        let k = 15;
        Self {
            d: 2000,
            k,
            m: 1600,
            n: 400,
            prior: vec![
                MixtureComponent::gaussian(vec![0.0; k], 1.5, 0.5),
                MixtureComponent::gaussian(vec![1.0; k], 1.3, 0.5),
            ],
            noise: NoiseSpec::Gaussian { variance: 1.0 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d < self.k {
            return Err(DiceError::InvalidArgument(format!("need 0 < k ≤ d, got k={} d={}", self.k, self.d)));
        }
        if self.m == 0 || self.n == 0 {
            return Err(DiceError::InvalidArgument("reference and target sizes must be positive".into()));
        }
        validate_prior(&self.prior, self.k)?;
        match self.noise {
            NoiseSpec::Gaussian { variance } if variance >= 0.0 && variance.is_finite() => {}
            NoiseSpec::StudentT { nu, scale } if nu > 0.0 && scale > 0.0 && nu.is_finite() && scale.is_finite() => {}
            other => return Err(DiceError::InvalidArgument(format!("invalid noise spec {other:?}"))),
        }
        Ok(())
    }

    /// Component centers as rows.
    pub fn centers(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.prior.len(), self.k, |c, j| self.prior[c].center[j])
    }
}

fn validate_prior(prior: &[MixtureComponent], k: usize) -> Result<()> {
    if prior.is_empty() {
        return Err(DiceError::InvalidArgument("mixture needs at least one component".into()));
    }
    for (i, c) in prior.iter().enumerate() {
        if c.center.len() != k {
            return Err(shape_err("mixture center", k, c.center.len()));
        }
        if !(c.scale > 0.0 && c.scale.is_finite() && c.weight >= 0.0) {
            return Err(DiceError::InvalidArgument(format!("component {i} needs positive scale and weight")));
        }
        if let ComponentKind::StudentT { nu } = c.kind {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(DiceError::InvalidArgument(format!("component {i} has invalid ν {nu}")));
            }
        }
    }
    let total: f64 = prior.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DiceError::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// `n × d`
    pub x: DenseMatrix,
    /// `n × k`
    pub u_true: DenseMatrix,
    /// Mixture component of each row.
    pub labels: Vec<usize>,
    /// `d × k`
    pub v_true: DenseMatrix,
}

fn sample_mixture(
    prior: &[MixtureComponent],
    k: usize,
    n: usize,
    stream: &mut RngStream,
) -> Result<(DenseMatrix, Vec<usize>)> {
    let mut u = DenseMatrix::zeros(n, k);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let r = stream.uniform();
        let mut acc = 0.0;
        let mut c = prior.len() - 1;
        for (j, comp) in prior.iter().enumerate() {
            acc += comp.weight;
            if r < acc {
                c = j;
                break;
            }
        }
        let comp = &prior[c];
        let draw = match comp.kind {
            ComponentKind::Gaussian => sample_standard_normal(stream, 1, k)?.scale(comp.scale.sqrt()),
            ComponentKind::StudentT { nu } => sample_multivariate_t(stream, nu, comp.scale, k, 1)?,
        };
        for ((o, z), m) in u.row_mut(i).iter_mut().zip(draw.data()).zip(&comp.center) {
            *o = m + z;
        }
        labels.push(c);
    }
    Ok((u, labels))
}

fn sample_noise(noise: NoiseSpec, n: usize, d: usize, stream: &mut RngStream) -> Result<DenseMatrix> {
    match noise {
        NoiseSpec::Gaussian { variance } => Ok(sample_standard_normal(stream, n, d)?.scale(variance.sqrt())),
        NoiseSpec::StudentT { nu, scale } => sample_multivariate_t(stream, nu, scale, d, n),
    }
}

fn assemble(
    prior: &[MixtureComponent],
    noise: NoiseSpec,
    v: &DenseMatrix,
    n: usize,
    stream: &mut RngStream,
) -> Result<LabeledDataset> {
    let (u, labels) = sample_mixture(prior, v.cols(), n, stream)?;
    let eps = sample_noise(noise, n, v.rows(), stream)?;
    let x = u.matmul_t(v)?.add(&eps)?;
    Ok(LabeledDataset { x, u_true: u, labels, v_true: v.clone() })
}

/// Loading matrix with i.i.d. N(0, 1) entries, shared by reference and
/// target data of one seed.
pub fn gen_loading(cfg: &DgpConfig) -> Result<DenseMatrix> {
    cfg.validate()?;
    sample_standard_normal(&mut RngStream::derive(cfg.seed, &[TAG_LOADING]), cfg.d, cfg.k)
}

/// `m` reference rows under `cfg`.
pub fn gen_reference(cfg: &DgpConfig) -> Result<LabeledDataset> {
    let v = gen_loading(cfg)?;
    assemble(&cfg.prior, cfg.noise, &v, cfg.m, &mut RngStream::derive(cfg.seed, &[TAG_REFERENCE]))
}

/// Target shifts relative to the reference distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setup {
    /// Same distribution as the reference.
    Matched = 1,
    /// Noise variance 10.
    SignalShift = 2,
    /// Multivariate t₄ noise with unit scale.
    NoiseShift = 3,
    /// Latents `½N(1, 1.5I) + ½t₄(0, 1.3I)` and noise variance 10.
    PriorShift = 4,
}

impl Setup {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Setup::Matched),
            2 => Ok(Setup::SignalShift),
            3 => Ok(Setup::NoiseShift),
            4 => Ok(Setup::PriorShift),
            _ => Err(DiceError::InvalidArgument(format!("unknown setup {id}, expected 1-4"))),
        }
    }

    pub fn id(self) -> u32 {
        self as u32
    }

    /// Latent prior and noise of the target data given the reference ones.
    /// Under the prior shift, label 0 is the t component and label 1 the
    /// Gaussian one, matching the reference labels of the two-cluster
    /// benchmark.
    pub fn target_spec(self, cfg: &DgpConfig) -> (Vec<MixtureComponent>, NoiseSpec) {
        let k = cfg.k;
        match self {
            Setup::Matched => (cfg.prior.clone(), cfg.noise),
            Setup::SignalShift => (cfg.prior.clone(), NoiseSpec::Gaussian { variance: 10.0 }),
            Setup::NoiseShift => (cfg.prior.clone(), NoiseSpec::StudentT { nu: 4.0, scale: 1.0 }),
            Setup::PriorShift => (
                vec![
                    MixtureComponent::student_t(4.0, vec![0.0; k], 1.3, 0.5),
                    MixtureComponent::gaussian(vec![1.0; k], 1.5, 0.5),
                ],
                NoiseSpec::Gaussian { variance: 10.0 },
            ),
        }
    }
}

/// `n` target rows for `setup`, sharing the loading `v_shared`.
pub fn gen_target(setup: Setup, cfg: &DgpConfig, v_shared: &DenseMatrix) -> Result<LabeledDataset> {
    cfg.validate()?;
    if v_shared.shape() != (cfg.d, cfg.k) {
        return Err(shape_err("shared loading", format!("{}x{}", cfg.d, cfg.k), format!("{:?}", v_shared.shape())));
    }
    let (prior, noise) = setup.target_spec(cfg);
    let mut stream = RngStream::derive(cfg.seed, &[TAG_TARGET, setup.id() as u64]);
    assemble(&prior, noise, v_shared, cfg.n, &mut stream)
}

/// Which clusters the five-cluster target contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// All training clusters.
    AllClusters,
    /// Only this training cluster.
    SingleCluster(usize),
    /// One extra cluster, drawn like the others but absent from training,
    /// labelled with the next free id.
    Unseen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiveClusterConfig {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub clusters: usize,
    /// Within-cluster covariance diagonal.
    pub spread: f64,
    pub reference_noise: f64,
    pub target_noise: f64,
    pub mode: TargetMode,
    pub seed: u64,
}

impl FiveClusterConfig {
    pub fn new(seed: u64, mode: TargetMode) -> Self {
        Self {
            d: 200,
            k: 15,
            m: 8000,
            n: 2000,
            clusters: 5,
            spread: 0.3,
            reference_noise: 0.5,
            target_noise: 1.0,
            mode,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FiveClusterData {
    pub reference: LabeledDataset,
    pub target: LabeledDataset,
    /// Training centers, plus the unseen one last in [`TargetMode::Unseen`].
    pub centers: DenseMatrix,
}

/// Well-separated clusters with centers `μ_i ~ N(0, I)`.
pub fn gen_five_cluster(cfg: &FiveClusterConfig) -> Result<FiveClusterData> {
    let c = cfg.clusters;
    if c == 0 {
        return Err(DiceError::InvalidArgument("need at least one cluster".into()));
    }
    if let TargetMode::SingleCluster(i) = cfg.mode {
        if i >= c {
            return Err(DiceError::InvalidArgument(format!("cluster {i} outside 0..{c}")));
        }
    }
    let mut cs = RngStream::derive(cfg.seed, &[TAG_CENTERS]);
    let centers = sample_standard_normal(&mut cs, c + 1, cfg.k)?;
    let comp = |i: usize, w: f64| MixtureComponent::gaussian(centers.row(i).to_vec(), cfg.spread, w);
    let train_prior: Vec<MixtureComponent> = (0..c).map(|i| comp(i, 1.0 / c as f64)).collect();
    let dgp = DgpConfig {
        d: cfg.d,
        k: cfg.k,
        m: cfg.m,
        n: cfg.n,
        prior: train_prior.clone(),
        noise: NoiseSpec::Gaussian { variance: cfg.reference_noise },
        seed: cfg.seed,
    };
    let reference = gen_reference(&dgp)?;
    let target_noise = NoiseSpec::Gaussian { variance: cfg.target_noise };
    let mut ts = RngStream::derive(cfg.seed, &[TAG_TARGET, 0]);
    let (target, shown) = match cfg.mode {
        TargetMode::AllClusters => (assemble(&train_prior, target_noise, &reference.v_true, cfg.n, &mut ts)?, c),
        TargetMode::SingleCluster(i) => {
            let mut t = assemble(&[comp(i, 1.0)], target_noise, &reference.v_true, cfg.n, &mut ts)?;
            t.labels.iter_mut().for_each(|l| *l = i);
            (t, c)
        }
        TargetMode::Unseen => {
            let mut t = assemble(&[comp(c, 1.0)], target_noise, &reference.v_true, cfg.n, &mut ts)?;
            t.labels.iter_mut().for_each(|l| *l = c);
            (t, c + 1)
        }
    };
    let centers = centers.select_rows(&(0..shown).collect::<Vec<_>>());
    Ok(FiveClusterData { reference, target, centers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DgpConfig {
        DgpConfig { d: 60, m: 200, n: 100, ..DgpConfig::two_cluster(seed) }
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = small(1);
        let a = gen_reference(&cfg).unwrap();
        assert_eq!(a.x.shape(), (200, 60));
        assert_eq!(a.u_true.shape(), (200, 15));
        assert_eq!(a.v_true.shape(), (60, 15));
        assert_eq!(a, gen_reference(&cfg).unwrap());
        let t = gen_target(Setup::Matched, &cfg, &a.v_true).unwrap();
        assert_eq!(t.x.shape(), (100, 60));
        assert_ne!(t.x.row(0), a.x.row(0));
    }

    #[test]
    fn zero_noise_is_exactly_low_rank() {
        let cfg = DgpConfig { noise: NoiseSpec::Gaussian { variance: 0.0 }, ..small(2) };
        let a = gen_reference(&cfg).unwrap();
        assert_eq!(a.x, a.u_true.matmul_t(&a.v_true).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let mut cfg = small(3);
        cfg.prior[0].weight = 0.7;
        assert!(gen_reference(&cfg).is_err());
        let cfg = DgpConfig { d: 10, k: 15, ..small(3) };
        assert!(gen_reference(&cfg).is_err());
        assert!(Setup::from_id(5).is_err());
        let cfg = small(3);
        assert!(gen_target(Setup::Matched, &cfg, &DenseMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn five_cluster_modes() {
        let base = FiveClusterConfig { m: 500, n: 100, ..FiveClusterConfig::new(4, TargetMode::SingleCluster(2)) };
        let single = gen_five_cluster(&base).unwrap();
        assert!(single.target.labels.iter().all(|&l| l == 2));
        assert_eq!(single.centers.rows(), 5);
        let unseen = gen_five_cluster(&FiveClusterConfig { mode: TargetMode::Unseen, ..base.clone() }).unwrap();
        assert!(unseen.target.labels.iter().all(|&l| l == 5));
        assert_eq!(unseen.centers.rows(), 6);
        assert!(unseen.reference.labels.iter().all(|&l| l < 5));
        assert_eq!(single.reference, unseen.reference);
        assert!(gen_five_cluster(&FiveClusterConfig { mode: TargetMode::SingleCluster(5), ..base }).is_err());
    }
}

//! Run configuration.
//!
//! One `key = value` pair per line. Keys are dotted (`gibbs.n_runs`), lines
//! starting with `#` and blank lines are ignored, and every key may appear at
//! most once. See `docs/config.md` for the full key list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dice_core::diffusion::{build_schedule, NoiseSchedule, TrainConfig};
use dice_core::nn::{LrSchedule, ModelConfig};
use dice_core::sampler::{AssignMetric, GibbsConfig, RhoSchedule};
use dice_core::synth::{DgpConfig, FiveClusterConfig, Setup, TargetMode};
use dice_core::DiceError;

use crate::error::{CliError, CliResult};

/// Every key the parser accepts, with its default. `None` marks a required
/// key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", None),
    ("out_dir", Some("out")),
    ("dgp.kind", Some("two_cluster")),
    ("dgp.setup", None),
    ("dgp.d", Some("2000")),
    ("dgp.k", Some("15")),
    ("dgp.m", Some("1600")),
    ("dgp.n", Some("400")),
    ("dgp.target_mode", Some("all")),
    ("schedule.steps", Some("512")),
    ("schedule.beta_min", Some("1e-4")),
    ("schedule.beta_max", Some("2e-2")),
    ("model.k", Some("15")),
    ("model.hidden", Some("64")),
    ("model.blocks", Some("2")),
    ("train.epochs", Some("2000")),
    ("train.batch_size", Some("4048")),
    ("train.learning_rate", Some("1e-4")),
    ("train.weight_decay", Some("0.01")),
    ("train.lr_schedule", Some("constant")),
    ("train.mixup_probability", Some("0")),
    ("train.mixup_group_size", Some("5")),
    ("train.standardize", Some("true")),
    ("factor.center", Some("true")),
    ("gibbs.iterations", Some("200")),
    ("gibbs.rho_schedule", Some("constant:20")),
    ("gibbs.n_runs", Some("10")),
    ("gibbs.final_step_noise", Some("true")),
    ("paths.reference", Some("reference.csv")),
    ("paths.reference_labels", Some("reference_labels.txt")),
    ("paths.target", Some("target.csv")),
    ("paths.target_labels", Some("target_labels.txt")),
    ("paths.checkpoint", Some("model.ckpt")),
    ("paths.loading", Some("loading.csv")),
    ("evaluate.embeddings", Some("embeddings_pca.csv,embeddings_dice.csv")),
    ("evaluate.clusters", Some("2")),
    ("evaluate.knn", Some("20")),
    ("confidence.query", Some("center:0")),
    ("confidence.samples", Some("500")),
    ("confidence.metric", Some("euclidean")),
    ("ablate.rhos", Some("0.1,0.5,1,5,10,20")),
    ("ablate.mode", Some("query")),
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    /// 0 for defaults and command-line overrides.
    line: usize,
}

/// Parsed key/value text with defaults filled in.
#[derive(Clone, Debug)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| CliError::config(line, format!("expected `key = value`, found `{trimmed}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(CliError::config(line, format!("malformed key `{key}`")));
            }
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(CliError::config(line, format!("unknown key `{key}`")));
            }
            if let Some(prev) = entries.get(key) {
                return Err(CliError::config(line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
            }
            entries.insert(key.to_string(), Entry { value: value.to_string(), line });
        }
        for (k, default) in KEYS {
            if let Some(d) = default {
                entries.entry(k.to_string()).or_insert(Entry { value: d.to_string(), line: 0 });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    /// Replaces a value as if given on the command line.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(KEYS.iter().any(|(k, _)| *k == key));
        self.entries.insert(key.to_string(), Entry { value: value.into(), line: 0 });
    }

    fn entry(&self, key: &str) -> CliResult<&Entry> {
        self.entries.get(key).ok_or_else(|| CliError::Usage(format!("missing required key `{key}`")))
    }

    pub fn str(&self, key: &str) -> CliResult<&str> {
        Ok(&self.entry(key)?.value)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let e = self.entry(key)?;
        e.value.parse().map_err(|_| self.invalid(key, format!("cannot parse `{}`", e.value)))
    }

    pub fn invalid(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        CliError::config(line, format!("`{key}`: {msg}"))
    }

    fn positive(&self, key: &str) -> CliResult<usize> {
        let v: usize = self.get(key)?;
        if v == 0 {
            return Err(self.invalid(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn real(&self, key: &str) -> CliResult<f64> {
        let v: f64 = self.get(key)?;
        if !v.is_finite() {
            return Err(self.invalid(key, "must be finite"));
        }
        Ok(v)
    }

    fn list(&self, key: &str) -> CliResult<Vec<String>> {
        let items: Vec<String> =
            self.str(key)?.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(self.invalid(key, "empty list"));
        }
        Ok(items)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DgpKind {
    TwoCluster,
    FiveCluster(TargetMode),
}

#[derive(Clone, Debug)]
pub struct DgpSection {
    pub kind: DgpKind,
    pub setup: Setup,
    pub two: DgpConfig,
    pub five: FiveClusterConfig,
}

#[derive(Clone, Debug)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Clone, Debug)]
pub struct ModelSection {
    pub k: usize,
    pub hidden: usize,
    pub blocks: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Cosine annealing to 1% of the base rate when set.
    pub cosine: bool,
    pub mixup_probability: f64,
    pub mixup_group_size: usize,
    pub standardize: bool,
}

#[derive(Clone, Debug)]
pub struct GibbsSection {
    pub schedule: RhoSchedule,
    pub n_runs: usize,
    pub final_step_noise: bool,
}

#[derive(Clone, Debug)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub reference: PathBuf,
    pub reference_labels: PathBuf,
    pub target: PathBuf,
    pub target_labels: PathBuf,
    pub checkpoint: PathBuf,
    pub loading: PathBuf,
}

/// Where a confidence-set query comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Query {
    /// Reconstruction of a reference class mean.
    Center(usize),
    /// Reconstruction of the midpoint of two reference class means.
    Midpoint(usize, usize),
    /// A target row.
    Row(usize),
    /// First row of a matrix file.
    File(PathBuf),
    /// Observation given inline.
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AblateMode {
    /// Spread of repeated draws for the confidence query.
    Query,
    /// One draw per target row, counting rows that leave their class.
    Target,
}

/// Fully validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub dgp: DgpSection,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub center: bool,
    pub gibbs: GibbsSection,
    pub paths: Paths,
    pub embeddings: Vec<PathBuf>,
    pub clusters: usize,
    pub knn: usize,
    pub query: Query,
    pub samples: usize,
    pub metric: AssignMetric,
    pub ablate_rhos: Vec<f64>,
    pub ablate_mode: AblateMode,
}

fn parse_bool(raw: &RawConfig, key: &str) -> CliResult<bool> {
    match raw.str(key)? {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(raw.invalid(key, format!("expected true or false, found `{other}`"))),
    }
}

fn parse_rho_schedule(raw: &RawConfig, iterations: usize) -> CliResult<RhoSchedule> {
    let key = "gibbs.rho_schedule";
    let text = raw.str(key)?;
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| -> CliResult<f64> {
        let v: f64 = s.trim().parse().map_err(|_| raw.invalid(key, format!("bad number `{s}`")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(raw.invalid(key, "levels must be finite and non-negative"));
        }
        Ok(v)
    };
    match parts.as_slice() {
        ["constant", r] => Ok(RhoSchedule::Constant { rho: num(r)?, iterations }),
        ["linear", a, b] => Ok(RhoSchedule::Linear { start: num(a)?, end: num(b)?, iterations }),
        _ => Err(raw.invalid(key, format!("expected `constant:<rho>` or `linear:<start>:<end>`, found `{text}`"))),
    }
}

fn parse_query(raw: &RawConfig) -> CliResult<Query> {
    let key = "confidence.query";
    let text = raw.str(key)?;
    let idx = |s: &str| -> CliResult<usize> { s.parse().map_err(|_| raw.invalid(key, format!("bad index `{s}`"))) };
    let parts: Vec<&str> = text.splitn(3, ':').collect();
    match parts.as_slice() {
        ["center", c] => Ok(Query::Center(idx(c)?)),
        ["midpoint", a, b] => Ok(Query::Midpoint(idx(a)?, idx(b)?)),
        ["row", r] => Ok(Query::Row(idx(r)?)),
        ["file", p] => Ok(Query::File(PathBuf::from(p))),
        _ => {
            let vals: Result<Vec<f64>, _> = text.split(',').map(|v| v.trim().parse::<f64>()).collect();
            match vals {
                Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(Query::Values(v)),
                _ => Err(raw.invalid(
                    key,
                    format!(
                        "expected center:<c>, midpoint:<a>:<b>, row:<i>, file:<path> or a comma list, found `{text}`"
                    ),
                )),
            }
        }
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let seed: u64 = raw.get("seed")?;
        let out_dir = PathBuf::from(raw.str("out_dir")?);
        let resolve = |key: &str| -> CliResult<PathBuf> {
            let p = PathBuf::from(raw.str(key)?);
            Ok(if p.is_absolute() { p } else { out_dir.join(p) })
        };

        let kind = match raw.str("dgp.kind")? {
            "two_cluster" => DgpKind::TwoCluster,
            "five_cluster" => {
                let mode = match raw.str("dgp.target_mode")? {
                    "all" => TargetMode::AllClusters,
                    "unseen" => TargetMode::Unseen,
                    m => match m.strip_prefix("single:").map(str::parse::<usize>) {
                        Some(Ok(i)) => TargetMode::SingleCluster(i),
                        _ => {
                            return Err(raw.invalid(
                                "dgp.target_mode",
                                format!("expected all, unseen or single:<c>, found `{m}`"),
                            ))
                        }
                    },
                };
                DgpKind::FiveCluster(mode)
            }
            other => {
                return Err(raw.invalid("dgp.kind", format!("expected two_cluster or five_cluster, found `{other}`")))
            }
        };
        // The setup only matters for the two-cluster benchmark.
        let setup = if raw.entries.contains_key("dgp.setup") || kind == DgpKind::TwoCluster {
            let id: u32 = raw.get("dgp.setup")?;
            Setup::from_id(id).map_err(|_| raw.invalid("dgp.setup", format!("unknown setup {id}, expected 1-4")))?
        } else {
            Setup::Matched
        };
        let mut two = DgpConfig::two_cluster(seed);
        two.d = raw.positive("dgp.d")?;
        two.k = raw.positive("dgp.k")?;
        two.m = raw.positive("dgp.m")?;
        two.n = raw.positive("dgp.n")?;
        if two.k != 15 {
            // The mixture centers are 0 and 1 in every latent coordinate.
            for c in &mut two.prior {
                let v = c.center[0];
                c.center = vec![v; two.k];
            }
        }
        if two.d < two.k {
            return Err(raw.invalid("dgp.d", format!("must be at least dgp.k = {}", two.k)));
        }
        let mut five = FiveClusterConfig::new(seed, TargetMode::AllClusters);
        if let DgpKind::FiveCluster(mode) = kind {
            five.mode = mode;
            if raw.entries["dgp.d"].line > 0 {
                five.d = two.d;
            }
            if raw.entries["dgp.m"].line > 0 {
                five.m = two.m;
            }
            if raw.entries["dgp.n"].line > 0 {
                five.n = two.n;
            }
            five.k = two.k;
            if let TargetMode::SingleCluster(c) = mode {
                if c >= five.clusters {
                    return Err(raw.invalid("dgp.target_mode", format!("cluster {c} outside 0..{}", five.clusters)));
                }
            }
        }

        let schedule = ScheduleSection {
            steps: raw.positive("schedule.steps")?,
            beta_min: raw.real("schedule.beta_min")?,
            beta_max: raw.real("schedule.beta_max")?,
        };
        if !(0.0 < schedule.beta_min && schedule.beta_min <= schedule.beta_max && schedule.beta_max < 1.0) {
            return Err(raw.invalid("schedule.beta_max", "need 0 < beta_min ≤ beta_max < 1"));
        }
        let model = ModelSection {
            k: raw.positive("model.k")?,
            hidden: raw.positive("model.hidden")?,
            blocks: raw.get("model.blocks")?,
        };
        let lr = raw.real("train.learning_rate")?;
        if lr <= 0.0 {
            return Err(raw.invalid("train.learning_rate", "must be positive"));
        }
        let wd = raw.real("train.weight_decay")?;
        if wd < 0.0 {
            return Err(raw.invalid("train.weight_decay", "must be non-negative"));
        }
        let cosine = match raw.str("train.lr_schedule")? {
            "constant" => false,
            "cosine" => true,
            other => {
                return Err(raw.invalid("train.lr_schedule", format!("expected constant or cosine, found `{other}`")))
            }
        };
        let batch_size: usize = raw.get("train.batch_size")?;
        if batch_size < 2 {
            return Err(raw.invalid("train.batch_size", "must be at least 2"));
        }
        let mixup_probability = raw.real("train.mixup_probability")?;
        if !(0.0..=1.0).contains(&mixup_probability) {
            return Err(raw.invalid("train.mixup_probability", "must lie in [0, 1]"));
        }
        let train = TrainSection {
            epochs: raw.get("train.epochs")?,
            batch_size,
            learning_rate: lr,
            weight_decay: wd,
            cosine,
            mixup_probability,
            mixup_group_size: raw.positive("train.mixup_group_size")?,
            standardize: parse_bool(raw, "train.standardize")?,
        };

        let iterations = raw.positive("gibbs.iterations")?;
        let gibbs = GibbsSection {
            schedule: parse_rho_schedule(raw, iterations)?,
            n_runs: raw.positive("gibbs.n_runs")?,
            final_step_noise: parse_bool(raw, "gibbs.final_step_noise")?,
        };

        let embeddings = raw
            .list("evaluate.embeddings")?
            .into_iter()
            .map(|p| {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    out_dir.join(p)
                }
            })
            .collect();
        let samples = raw.get::<usize>("confidence.samples")?;
        if samples < 2 {
            return Err(raw.invalid("confidence.samples", "must be at least 2"));
        }
        let metric = match raw.str("confidence.metric")? {
            "euclidean" => AssignMetric::Euclidean,
            "cosine" => AssignMetric::Cosine,
            other => {
                return Err(raw.invalid("confidence.metric", format!("expected euclidean or cosine, found `{other}`")))
            }
        };
        let ablate_rhos = raw
            .list("ablate.rhos")?
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(raw.invalid("ablate.rhos", format!("bad level `{s}`"))),
            })
            .collect::<CliResult<Vec<f64>>>()?;
        let ablate_mode = match raw.str("ablate.mode")? {
            "query" => AblateMode::Query,
            "target" => AblateMode::Target,
            other => return Err(raw.invalid("ablate.mode", format!("expected query or target, found `{other}`"))),
        };

        let paths = Paths {
            reference: resolve("paths.reference")?,
            reference_labels: resolve("paths.reference_labels")?,
            target: resolve("paths.target")?,
            target_labels: resolve("paths.target_labels")?,
            checkpoint: resolve("paths.checkpoint")?,
            loading: resolve("paths.loading")?,
            out_dir,
        };

        Ok(Self {
            seed,
            dgp: DgpSection { kind, setup, two, five },
            schedule,
            model,
            train,
            center: parse_bool(raw, "factor.center")?,
            gibbs,
            paths,
            embeddings,
            clusters: raw.positive("evaluate.clusters")?,
            knn: raw.positive("evaluate.knn")?,
            query: parse_query(raw)?,
            samples,
            metric,
            ablate_rhos,
            ablate_mode,
        })
    }

    /// Optimizer steps per epoch for `rows` training rows, matching the
    /// trainer's batching.
    fn steps_per_epoch(&self, rows: usize) -> usize {
        let b = self.train.batch_size;
        if rows <= b {
            1
        } else {
            rows.div_ceil(b).min(rows / 2)
        }
    }

    pub fn train_config(&self, rows: usize) -> TrainConfig {
        let lr_schedule = if self.train.cosine {
            LrSchedule::Cosine {
                total_steps: (self.train.epochs * self.steps_per_epoch(rows)).max(1),
                min_lr: self.train.learning_rate / 100.0,
            }
        } else {
            LrSchedule::Constant
        };
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            lr_schedule,
            mixup_probability: self.train.mixup_probability,
            mixup_group_size: self.train.mixup_group_size,
            standardize: self.train.standardize,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { latent_dim: self.model.k, hidden: self.model.hidden, blocks: self.model.blocks }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, DiceError> {
        build_schedule(self.schedule.steps, self.schedule.beta_min, self.schedule.beta_max)
    }

    /// Sampler settings for `schedule` with `n_runs` chains per cell.
    pub fn gibbs_config(&self, schedule: &RhoSchedule, n_runs: usize) -> GibbsConfig {
        GibbsConfig { rhos: schedule.levels(), n_runs, seed: self.seed, final_step_noise: self.gibbs.final_step_noise }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_text(text: &str) -> String {
        RawConfig::parse(text).and_then(|r| RunConfig::from_raw(&r)).unwrap_err().to_string()
    }

    #[test]
    fn defaults_and_overrides() {
        let raw = RawConfig::parse("# comment\nseed = 3\n\ndgp.setup = 2\ngibbs.rho_schedule = linear:20:1\n").unwrap();
        let c = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.dgp.setup, Setup::SignalShift);
        assert_eq!(c.gibbs.schedule, RhoSchedule::Linear { start: 20.0, end: 1.0, iterations: 200 });
        assert_eq!(c.paths.checkpoint, PathBuf::from("out/model.ckpt"));
        assert_eq!(c.query, Query::Center(0));
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        assert!(err_text("seed = 1\ndgp.setup = 1\nfoo.bar = 2\n").contains("line 3"));
        assert!(err_text("seed = 1\nseed = 2\n").contains("duplicate"));
        assert!(err_text("dgp.setup = 1\n").contains("`seed`"));
        assert!(err_text("seed = 1\n").contains("`dgp.setup`"));
        let e = err_text("seed = 1\ndgp.setup = 1\ngibbs.n_runs = 0\n");
        assert!(e.contains("line 3") && e.contains("gibbs.n_runs"), "{e}");
        assert!(err_text("seed = 1\ndgp.setup = 7\n").contains("setup"));
        assert!(err_text("seed = 1\ndgp.setup = 1\nno equals here\n").contains("line 3"));
        assert!(err_text("seed = 1\ndgp.setup = 1\nconfidence.query = row:x\n").contains("confidence.query"));
    }

    #[test]
    fn query_forms() {
        let q = |v: &str| {
            let raw = RawConfig::parse(&format!("seed = 1\ndgp.setup = 1\nconfidence.query = {v}\n")).unwrap();
            RunConfig::from_raw(&raw).unwrap().query
        };
        assert_eq!(q("midpoint:0:1"), Query::Midpoint(0, 1));
        assert_eq!(q("row:5"), Query::Row(5));
        assert_eq!(q("1, 2.5"), Query::Values(vec![1.0, 2.5]));
        assert_eq!(q("file:x.csv"), Query::File(PathBuf::from("x.csv")));
    }

    #[test]
    fn five_cluster_does_not_need_a_setup() {
        let raw = RawConfig::parse("seed = 1\ndgp.kind = five_cluster\ndgp.target_mode = single:2\n").unwrap();
        let c = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(c.dgp.kind, DgpKind::FiveCluster(TargetMode::SingleCluster(2)));
        assert_eq!(c.dgp.five.d, 200);
    }
}

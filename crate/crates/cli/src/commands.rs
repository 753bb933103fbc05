//! The six pipeline commands. Each one reads every input and checks every
//! shape before computing, and writes its artifacts only at the end.

use std::path::{Path, PathBuf};

use dice_core::diffusion::{decode_checkpoint, encode_checkpoint, train_observed, Checkpoint};
use dice_core::metrics::{ari, clisi, cosine_silhouette, kmeans, LabeledEmbedding};
use dice_core::sampler::{confidence_set, dice_average_cells, model_t0, nearest_center, RhoSchedule};
use dice_core::synth::{gen_five_cluster, gen_reference, gen_target, LabeledDataset};
use dice_core::{fit_loading, project, reconstruct, DenseMatrix, FactorLoading, RngStream};

use crate::config::{AblateMode, DgpKind, Query, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{read_labels, read_matrix, write_atomic, write_labels, write_matrix, MatrixFile, Report};

/// Target rows handed to the sampler at a time, between progress messages.
const DENOISE_BLOCK: usize = 64;
const TAG_EVALUATE: u64 = 0xE7A1;

fn progress(msg: impl AsRef<str>) {
    eprintln!("[dice] {}", msg.as_ref());
}

fn out_file(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.out_dir.join(name)
}

// Loading files store V̂ᵀ (one basis vector per row), followed by the
// centering vector when there is one. The header records which layout it is.
const LOADING_PLAIN: &str = "loading basis";
const LOADING_CENTERED: &str = "loading basis+center";

fn write_loading(path: &Path, loading: &FactorLoading) -> CliResult<()> {
    let vt = loading.v_hat().transpose();
    match loading.center() {
        None => write_matrix(path, &vt, Some(LOADING_PLAIN)),
        Some(c) => {
            let mut data = vt.into_data();
            data.extend_from_slice(c);
            let m = DenseMatrix::new(loading.latent_dim() + 1, loading.obs_dim(), data)?;
            write_matrix(path, &m, Some(LOADING_CENTERED))
        }
    }
}

fn read_loading(path: &Path) -> CliResult<FactorLoading> {
    let f = MatrixFile::read(path)?;
    let m = f.matrix;
    let bad = |msg: &str| CliError::Parse { path: path.to_path_buf(), line: 1, message: msg.to_string() };
    match f.header.as_deref() {
        Some(LOADING_PLAIN) => Ok(FactorLoading::from_basis(m.transpose(), None)?),
        Some(LOADING_CENTERED) => {
            if m.rows() < 2 {
                return Err(bad("centered loading needs a basis row and a center row"));
            }
            let k = m.rows() - 1;
            let center = m.row(k).to_vec();
            let basis = m.select_rows(&(0..k).collect::<Vec<_>>());
            Ok(FactorLoading::from_basis(basis.transpose(), Some(center))?)
        }
        _ => Err(bad("not a loading file (missing `# loading basis` header)")),
    }
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(decode_checkpoint(&bytes)?)
}

fn labeled(path: &Path, labels_path: &Path) -> CliResult<(DenseMatrix, Vec<usize>)> {
    let x = read_matrix(path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != x.rows() {
        return Err(CliError::Usage(format!(
            "{} has {} labels but {} has {} rows",
            labels_path.display(),
            labels.len(),
            path.display(),
            x.rows()
        )));
    }
    Ok((x, labels))
}

/// Model, loading and their consistency with observations of width `d`.
fn load_model_and_loading(cfg: &RunConfig, d: usize) -> CliResult<(Checkpoint, FactorLoading)> {
    let ckpt = read_checkpoint(&cfg.paths.checkpoint)?;
    let loading = read_loading(&cfg.paths.loading)?;
    if ckpt.model.latent_dim() != loading.latent_dim() {
        return Err(CliError::Usage(format!(
            "checkpoint latent dimension {} does not match loading dimension {}",
            ckpt.model.latent_dim(),
            loading.latent_dim()
        )));
    }
    if loading.obs_dim() != d {
        return Err(CliError::Usage(format!("loading expects {} features, data has {d}", loading.obs_dim())));
    }
    Ok((ckpt, loading))
}

fn with_rho(cfg: &RunConfig, rho: f64) -> RhoSchedule {
    RhoSchedule::Constant { rho, iterations: cfg.gibbs.schedule.levels().len() }
}

/// Mean latent of every reference class, row `c` for label `c`.
fn class_means(latents: &DenseMatrix, labels: &[usize]) -> CliResult<DenseMatrix> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sums = DenseMatrix::zeros(classes, latents.cols());
    let mut counts = vec![0usize; classes];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(latents.row(i)) {
            *s += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(CliError::Usage(format!("reference labels skip class {c}; labels must be 0..C-1")));
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(sums)
}

pub fn generate(cfg: &RunConfig) -> CliResult<Report> {
    let mut report = Report::default();
    let (reference, target, centers): (LabeledDataset, LabeledDataset, Option<DenseMatrix>) = match cfg.dgp.kind {
        DgpKind::TwoCluster => {
            let two = &cfg.dgp.two;
            two.validate()?;
            progress(format!(
                "generating setup {} (d={}, k={}, m={}, n={})",
                cfg.dgp.setup.id(),
                two.d,
                two.k,
                two.m,
                two.n
            ));
            let reference = gen_reference(two)?;
            let target = gen_target(cfg.dgp.setup, two, &reference.v_true)?;
            report.push("setup", cfg.dgp.setup.id());
            (reference, target, Some(two.centers()))
        }
        DgpKind::FiveCluster(_) => {
            let five = &cfg.dgp.five;
            progress(format!(
                "generating {} clusters (d={}, k={}, m={}, n={})",
                five.clusters, five.d, five.k, five.m, five.n
            ));
            let data = gen_five_cluster(five)?;
            report.push("clusters", five.clusters);
            (data.reference, data.target, Some(data.centers))
        }
    };
    let p = &cfg.paths;
    write_matrix(&p.reference, &reference.x, None)?;
    write_labels(&p.reference_labels, &reference.labels)?;
    write_matrix(&p.target, &target.x, None)?;
    write_labels(&p.target_labels, &target.labels)?;
    write_matrix(&out_file(cfg, "true_loading.csv"), &reference.v_true, None)?;
    write_matrix(&out_file(cfg, "reference_latents.csv"), &reference.u_true, None)?;
    write_matrix(&out_file(cfg, "target_latents.csv"), &target.u_true, None)?;
    if let Some(c) = centers {
        write_matrix(&out_file(cfg, "true_centers.csv"), &c, None)?;
    }
    report.push("reference_rows", reference.x.rows());
    report.push("target_rows", target.x.rows());
    report.push("features", reference.x.cols());
    Ok(report)
}

pub fn train(cfg: &RunConfig) -> CliResult<Report> {
    let x = read_matrix(&cfg.paths.reference)?;
    let labels = if cfg.train.mixup_probability > 0.0 {
        Some(labeled(&cfg.paths.reference, &cfg.paths.reference_labels)?.1)
    } else {
        None
    };
    let k = cfg.model.k;
    if k > x.rows().min(x.cols()) {
        return Err(CliError::Usage(format!(
            "model.k = {k} exceeds the rank bound of the {}x{} reference matrix",
            x.rows(),
            x.cols()
        )));
    }
    if x.rows() < 2 {
        return Err(CliError::Usage("training needs at least 2 reference rows".into()));
    }
    let sched = cfg.noise_schedule()?;
    let n = x.rows();
    let tcfg = cfg.train_config(n);
    tcfg.validate()?;

    progress(format!("fitting rank-{k} loading on {}x{} reference", n, x.cols()));
    let loading = fit_loading(&x, k, cfg.center)?;
    let latents = project(&loading, &x)?;
    if cfg.train.epochs == 0 {
        eprintln!("warning: train.epochs = 0, saving the untrained network");
    }
    let every = (cfg.train.epochs / 20).max(1);
    let epochs = cfg.train.epochs;
    let trained = train_observed(&latents, labels.as_deref(), &sched, cfg.model_config(), &tcfg, &mut |e, loss| {
        if e % every == 0 || e == epochs {
            progress(format!("epoch {e}/{epochs} loss {loss:.5}"));
        }
    })?;

    write_atomic(&cfg.paths.checkpoint, &encode_checkpoint(&trained.model, &sched, &trained.scaler))?;
    write_loading(&cfg.paths.loading, &loading)?;
    let trace = DenseMatrix::new(trained.loss_trace.len(), 1, trained.loss_trace.clone())?;
    if trace.rows() > 0 {
        write_matrix(&out_file(cfg, "loss_trace.csv"), &trace, Some("loss"))?;
    }

    let mut report = Report::default();
    report.push("epochs", epochs);
    if let (Some(first), Some(last)) = (trained.loss_trace.first(), trained.loss_trace.last()) {
        report.push_float("initial_loss", *first);
        report.push_float("final_loss", *last);
    }
    report.push_float("latent_scale", trained.scaler.scale());
    report.push("checkpoint", cfg.paths.checkpoint.display());
    Ok(report)
}

pub fn denoise(cfg: &RunConfig) -> CliResult<Report> {
    let target = read_matrix(&cfg.paths.target)?;
    let (ckpt, loading) = load_model_and_loading(cfg, target.cols())?;
    let gibbs = cfg.gibbs_config(&cfg.gibbs.schedule, cfg.gibbs.n_runs);
    gibbs.validate()?;
    let model = ckpt.frozen()?;
    let sched = &ckpt.schedule;

    let pca = project(&loading, &target)?;
    let n = target.rows();
    let mut dice = DenseMatrix::zeros(n, loading.latent_dim());
    let mut start = 0;
    while start < n {
        let end = (start + DENOISE_BLOCK).min(n);
        let block = target.select_rows(&(start..end).collect::<Vec<_>>());
        let out = dice_average_cells(&model, sched, &loading, &block, &gibbs, start)?;
        for i in 0..out.rows() {
            dice.row_mut(start + i).copy_from_slice(out.row(i));
        }
        progress(format!("denoised {end}/{n} rows"));
        start = end;
    }

    write_matrix(&out_file(cfg, "embeddings_pca.csv"), &pca, None)?;
    write_matrix(&out_file(cfg, "embeddings_dice.csv"), &dice, None)?;
    let mut report = Report::default();
    report.push("rows", n);
    report.push("iterations", gibbs.iterations());
    report.push("n_runs", gibbs.n_runs);
    if let Some(&r) = gibbs.rhos.first() {
        report.push_float("rho_first", r);
        report.push("t0_first", model_t0(&model, sched, r));
    }
    report.push_float("max_abs_shift", dice.max_abs_diff(&pca));
    Ok(report)
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<Report> {
    let labels = read_labels(&cfg.paths.target_labels)?;
    let mut inputs = Vec::with_capacity(cfg.embeddings.len());
    for path in &cfg.embeddings {
        let points = read_matrix(path)?;
        if points.rows() != labels.len() {
            return Err(CliError::Usage(format!(
                "{} has {} rows but there are {} labels",
                path.display(),
                points.rows(),
                labels.len()
            )));
        }
        if cfg.knn >= points.rows() {
            return Err(CliError::Usage(format!("evaluate.knn = {} needs more than {} rows", cfg.knn, points.rows())));
        }
        if cfg.clusters > points.rows() {
            return Err(CliError::Usage(format!(
                "evaluate.clusters = {} exceeds {} rows",
                cfg.clusters,
                points.rows()
            )));
        }
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        inputs.push((name, points));
    }

    let mut report = Report::default();
    for (name, points) in inputs {
        let le = LabeledEmbedding::new(points, labels.clone())?;
        let silhouette = cosine_silhouette(&le)?;
        let mut stream = RngStream::derive(cfg.seed, &[TAG_EVALUATE]);
        let clusters = kmeans(le.points(), cfg.clusters, &mut stream)?;
        let ari_value = ari(&labels, &clusters)?;
        let lisi = clisi(&le, cfg.knn)?;
        progress(format!("{name}: silhouette {silhouette:.4}"));
        report.push_float(format!("{name}.silhouette"), silhouette);
        report.push_float(format!("{name}.ari"), ari_value);
        report.push_float(format!("{name}.clisi"), lisi);
    }
    report.write(&out_file(cfg, "evaluation.txt"))?;
    Ok(report)
}

/// The query observation and, for center queries, its class.
fn resolve_query(
    cfg: &RunConfig,
    loading: &FactorLoading,
    centers: &DenseMatrix,
) -> CliResult<(Vec<f64>, Option<usize>)> {
    let d = loading.obs_dim();
    let class = |c: usize| -> CliResult<()> {
        if c >= centers.rows() {
            return Err(CliError::Usage(format!("confidence.query: class {c} outside 0..{}", centers.rows())));
        }
        Ok(())
    };
    let (x, own) = match &cfg.query {
        Query::Center(c) => {
            class(*c)?;
            (reconstruct(loading, &DenseMatrix::row_vector(centers.row(*c)))?.into_data(), Some(*c))
        }
        Query::Midpoint(a, b) => {
            class(*a)?;
            class(*b)?;
            let mid: Vec<f64> = centers.row(*a).iter().zip(centers.row(*b)).map(|(u, v)| 0.5 * (u + v)).collect();
            (reconstruct(loading, &DenseMatrix::row_vector(&mid))?.into_data(), None)
        }
        Query::Row(i) => {
            let target = read_matrix(&cfg.paths.target)?;
            if *i >= target.rows() {
                return Err(CliError::Usage(format!("confidence.query: row {i} outside 0..{}", target.rows())));
            }
            (target.row(*i).to_vec(), None)
        }
        Query::File(p) => (read_matrix(p)?.row(0).to_vec(), None),
        Query::Values(v) => (v.clone(), None),
    };
    if x.len() != d {
        return Err(CliError::Usage(format!("confidence.query has {} values, the loading expects {d}", x.len())));
    }
    Ok((x, own))
}

struct ConfidenceInputs {
    ckpt: Checkpoint,
    loading: FactorLoading,
    centers: DenseMatrix,
    query: Vec<f64>,
    own_class: Option<usize>,
}

fn confidence_inputs(cfg: &RunConfig) -> CliResult<ConfidenceInputs> {
    let (reference, labels) = labeled(&cfg.paths.reference, &cfg.paths.reference_labels)?;
    let (ckpt, loading) = load_model_and_loading(cfg, reference.cols())?;
    let centers = class_means(&project(&loading, &reference)?, &labels)?;
    let (query, own_class) = resolve_query(cfg, &loading, &centers)?;
    Ok(ConfidenceInputs { ckpt, loading, centers, query, own_class })
}

pub fn confidence(cfg: &RunConfig) -> CliResult<Report> {
    let inp = confidence_inputs(cfg)?;
    let gibbs = cfg.gibbs_config(&cfg.gibbs.schedule, 1);
    gibbs.validate()?;
    let model = inp.ckpt.frozen()?;
    progress(format!("drawing {} samples", cfg.samples));
    let s = confidence_set(
        &model,
        &inp.ckpt.schedule,
        &inp.loading,
        &inp.query,
        &gibbs,
        cfg.samples,
        Some(&inp.centers),
        cfg.metric,
    )?;

    let mut report = Report::default();
    report.push("samples", cfg.samples);
    report.push_float("spread", s.mean_pairwise_distance());
    report.push_floats("mean", &s.mean);
    report.push_floats("q025", &s.q025);
    report.push_floats("median", &s.median);
    report.push_floats("q975", &s.q975);
    if let Some(a) = &s.assignment {
        for (c, f) in a.iter().enumerate() {
            report.push_float(format!("assignment.{c}"), *f);
        }
        let dominant = (0..a.len()).fold(0, |best, c| if a[c] > a[best] { c } else { best });
        report.push("dominant", dominant);
    }
    write_matrix(&out_file(cfg, "confidence_samples.csv"), &s.samples, None)?;
    report.write(&out_file(cfg, "confidence.txt"))?;
    Ok(report)
}

pub fn ablate_rho(cfg: &RunConfig) -> CliResult<Report> {
    if cfg.ablate_rhos.is_empty() {
        return Err(CliError::Usage("ablate.rhos is empty".into()));
    }
    let mut report = Report::default();
    let mut rows: Vec<f64> = Vec::new();
    let header;
    match cfg.ablate_mode {
        AblateMode::Query => {
            let inp = confidence_inputs(cfg)?;
            let model = inp.ckpt.frozen()?;
            header = if inp.own_class.is_some() { "rho,spread,leave_fraction" } else { "rho,spread" };
            for &rho in &cfg.ablate_rhos {
                let gibbs = cfg.gibbs_config(&with_rho(cfg, rho), 1);
                gibbs.validate()?;
                let s = confidence_set(
                    &model,
                    &inp.ckpt.schedule,
                    &inp.loading,
                    &inp.query,
                    &gibbs,
                    cfg.samples,
                    Some(&inp.centers),
                    cfg.metric,
                )?;
                let spread = s.mean_pairwise_distance();
                progress(format!("rho {rho}: spread {spread:.4}"));
                report.push_float(format!("rho_{rho}.spread"), spread);
                rows.extend([rho, spread]);
                if let (Some(c), Some(a)) = (inp.own_class, &s.assignment) {
                    report.push_float(format!("rho_{rho}.leave_fraction"), 1.0 - a[c]);
                    rows.push(1.0 - a[c]);
                }
            }
        }
        AblateMode::Target => {
            let (reference, ref_labels) = labeled(&cfg.paths.reference, &cfg.paths.reference_labels)?;
            let (target, labels) = labeled(&cfg.paths.target, &cfg.paths.target_labels)?;
            let (ckpt, loading) = load_model_and_loading(cfg, reference.cols())?;
            if target.cols() != reference.cols() {
                return Err(CliError::Usage("reference and target widths differ".into()));
            }
            let centers = class_means(&project(&loading, &reference)?, &ref_labels)?;
            let model = ckpt.frozen()?;
            let pca = project(&loading, &target)?;
            header = "rho,displacement,leave_fraction";
            for &rho in &cfg.ablate_rhos {
                let gibbs = cfg.gibbs_config(&with_rho(cfg, rho), 1);
                gibbs.validate()?;
                let out = dice_average_cells(&model, &ckpt.schedule, &loading, &target, &gibbs, 0)?;
                let mut left = 0usize;
                let mut shift = 0.0;
                for i in 0..out.rows() {
                    if nearest_center(out.row(i), &centers, cfg.metric)? != labels[i] {
                        left += 1;
                    }
                    shift += out.row(i).iter().zip(pca.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                }
                let n = out.rows() as f64;
                let leave = left as f64 / n;
                progress(format!("rho {rho}: leave fraction {leave:.4}"));
                report.push_float(format!("rho_{rho}.displacement"), shift / n);
                report.push_float(format!("rho_{rho}.leave_fraction"), leave);
                rows.extend([rho, shift / n, leave]);
            }
        }
    }
    let cols = header.split(',').count();
    let table = DenseMatrix::new(cfg.ablate_rhos.len(), cols, rows)?;
    write_matrix(&out_file(cfg, "ablation.csv"), &table, Some(header))?;
    report.write(&out_file(cfg, "ablation.txt"))?;
    Ok(report)
}

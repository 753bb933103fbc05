//! Monte Carlo checks of trained diffusion priors.

use dice_core::diffusion::{build_schedule, sample_prior, train, NoisePredictor, TrainConfig};
use dice_core::nn::{LrSchedule, ModelConfig};
use dice_core::synth::{gen_reference, DgpConfig};
use dice_core::{fit_loading, project};
use dice_core::{sample_standard_normal, DenseMatrix, RngStream};

#[test]
fn two_point_dataset_gives_two_balanced_modes() {
    let sched = build_schedule(512, 1e-4, 2e-2).unwrap();
    let data = DenseMatrix::from_fn(1024, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let cfg = TrainConfig { epochs: 2000, batch_size: 256, learning_rate: 1e-3, seed: 11, ..Default::default() };
    let trained = train(&data, None, &sched, ModelConfig { latent_dim: 1, hidden: 32, blocks: 2 }, &cfg).unwrap();
    let frozen = trained.frozen(sched.steps()).unwrap();
    let x = sample_prior(&frozen, &sched, 10_000, &mut RngStream::new(12)).unwrap();

    let pos: Vec<f64> = x.data().iter().copied().filter(|v| *v > 0.0).collect();
    let neg: Vec<f64> = x.data().iter().copied().filter(|v| *v <= 0.0).collect();
    let w = pos.len() as f64 / 1e4;
    assert!((w - 0.5).abs() < 0.05, "weight {w}");
    let within = |v: &[f64], c: f64| v.iter().filter(|x| (*x - c).abs() < 0.15).count() as f64 / v.len() as f64;
    let (fp, fn_) = (within(&pos, 1.0), within(&neg, -1.0));
    assert!(fp > 0.9 && fn_ > 0.9, "mass near modes {fp} {fn_}");
}

#[test]
fn standard_normal_prior_is_reproduced() {
    let sched = build_schedule(512, 1e-4, 2e-2).unwrap();
    let k = 3;
    let mut st = RngStream::new(30);
    let data = sample_standard_normal(&mut st, 4000, k).unwrap();
    let cfg = TrainConfig {
        epochs: 400,
        batch_size: 500,
        learning_rate: 1e-3,
        lr_schedule: LrSchedule::Cosine { total_steps: 3200, min_lr: 1e-5 },
        seed: 31,
        ..Default::default()
    };
    let trained = train(&data, None, &sched, ModelConfig { latent_dim: k, hidden: 32, blocks: 2 }, &cfg).unwrap();
    assert!(trained.loss_trace.last().unwrap() < &trained.loss_trace[0]);
    let frozen = trained.frozen(sched.steps()).unwrap();

    let x = sample_prior(&frozen, &sched, 10_000, &mut RngStream::new(32)).unwrap();
    let mean = x.column_means();
    for j in 0..k {
        assert!(mean[j].abs() < 0.05, "mean[{j}] = {}", mean[j]);
        let var = (0..x.rows()).map(|i| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / (x.rows() - 1) as f64;
        assert!((var - 1.0).abs() < 0.1, "var[{j}] = {var}");
    }

    // For N(0, I) data the marginal at every t is N(0, I), whose score at the
    // origin is 0, so the implied score −ε̂/√(1−ᾱ) must be near 0 there. The
    // scaler is close to the identity for this data.
    let near_zero = DenseMatrix::from_fn(200, k, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.01 - 0.05);
    for t in [50, 200, 400, 512] {
        let eps = frozen.predict_noise(&near_zero, t, &sched).unwrap();
        let scale = (1.0 - sched.alpha_bar(t)).sqrt();
        let avg = eps.data().iter().map(|e| -e / scale).sum::<f64>() / eps.data().len() as f64;
        assert!(avg.abs() < 0.1, "t={t} mean score {avg}");
    }
}

#[test]
fn prior_matches_mean_of_raw_pca_latents() {
    // Uncentered PCA latents of the two-population benchmark sit far from the
    // origin with a spread of about 60 per coordinate.
    let cfg = DgpConfig::two_cluster(0);
    let r = gen_reference(&cfg).unwrap();
    let l = fit_loading(&r.x, cfg.k, false).unwrap();
    let u = project(&l, &r.x).unwrap();
    let sched = build_schedule(512, 1e-4, 2e-2).unwrap();
    let trained = train(
        &u,
        Some(&r.labels),
        &sched,
        ModelConfig { latent_dim: 15, hidden: 64, blocks: 2 },
        &TrainConfig::default(),
    )
    .unwrap();
    let trace = &trained.loss_trace;
    assert!(trace.iter().all(|v| v.is_finite()) && trace.last().unwrap() < &trace[0]);

    let n = 4000;
    let x = sample_prior(&trained.frozen(512).unwrap(), &sched, n, &mut RngStream::new(3)).unwrap();
    let (gm, dm) = (x.column_means(), u.column_means());
    let mut z_total = 0.0;
    for j in 0..15 {
        let sd = |m: &DenseMatrix, mean: f64| {
            ((0..m.rows()).map(|i| (m.get(i, j) - mean).powi(2)).sum::<f64>() / (m.rows() - 1) as f64).sqrt()
        };
        let se = (sd(&x, gm[j]).powi(2) / n as f64 + sd(&u, dm[j]).powi(2) / u.rows() as f64).sqrt();
        let z = (gm[j] - dm[j]) / se;
        assert!(z.abs() < 3.0, "coordinate {j}: generated {} vs data {} (z = {z:.2})", gm[j], dm[j]);
        z_total += z.abs();
    }
    assert!(z_total / 15.0 < 1.5);
}

use dice_core::synth::{
    gen_five_cluster, gen_reference, gen_target, DgpConfig, FiveClusterConfig, NoiseSpec, Setup, TargetMode,
};
use dice_core::{fit_loading, project, reconstruct, DenseMatrix};

fn residual(x: &DenseMatrix, u: &DenseMatrix, v: &DenseMatrix) -> Vec<f64> {
    x.sub(&u.matmul_t(v).unwrap()).unwrap().into_data()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn normal_cdf(x: f64) -> f64 {
    // Abramowitz and Stegun 7.1.26 on erf, absolute error below 1.5e-7.
    let z = x.abs() / 2f64.sqrt();
    let t = 1.0 / (1.0 + 0.3275911 * z);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    if x >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

#[test]
fn reference_shapes_balance_and_noise() {
    let cfg = DgpConfig::two_cluster(7);
    let r = gen_reference(&cfg).unwrap();
    assert_eq!(r.x.shape(), (1600, 2000));
    let (m, v) = mean_var(&residual(&r.x, &r.u_true, &r.v_true));
    let se = (1.0 / (1600.0 * 2000.0_f64)).sqrt();
    assert!(m.abs() < 3.0 * se, "{m}");
    assert!((v - 1.0).abs() < 0.05, "{v}");
    assert_eq!(gen_reference(&cfg).unwrap(), r);
}

#[test]
fn labels_are_balanced() {
    // One seed's fraction has standard error 0.0125; pooling 20 seeds brings
    // it to 0.0028.
    let mut pooled = 0.0;
    for seed in 0..20 {
        let mut cfg = DgpConfig::two_cluster(seed);
        cfg.d = 15;
        let r = gen_reference(&cfg).unwrap();
        let ones = r.labels.iter().filter(|&&l| l == 1).count() as f64 / 1600.0;
        assert!((ones - 0.5).abs() < 0.05, "seed {seed}: {ones}");
        pooled += ones / 20.0;
    }
    assert!((pooled - 0.5).abs() < 0.01, "{pooled}");
}

#[test]
fn nearest_center_accuracy_matches_bayes_geometry() {
    // Nearest-center assignment between 0 and 1·(1..1) only depends on the
    // projection onto the center line, so its accuracy is available in
    // closed form for the two Gaussian components.
    let mut cfg = DgpConfig::two_cluster(3);
    cfg.m = 20_000;
    cfg.d = 15;
    let r = gen_reference(&cfg).unwrap();
    let centers = cfg.centers();
    let correct = (0..cfg.m)
        .filter(|&i| {
            let d = |c: usize| r.u_true.row(i).iter().zip(centers.row(c)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (d(1) < d(0)) == (r.labels[i] == 1)
        })
        .count() as f64
        / cfg.m as f64;
    let half = (15.0_f64).sqrt() / 2.0;
    let expected = 0.5 * normal_cdf(half / 1.5_f64.sqrt()) + 0.5 * normal_cdf(half / 1.3_f64.sqrt());
    let se = (expected * (1.0 - expected) / cfg.m as f64).sqrt();
    assert!((correct - expected).abs() < 4.0 * se, "{correct} vs {expected}");
}

#[test]
fn zero_noise_reference_is_exactly_low_rank() {
    let mut cfg = DgpConfig::two_cluster(1);
    cfg.d = 200;
    cfg.m = 300;
    cfg.noise = NoiseSpec::Gaussian { variance: 0.0 };
    let r = gen_reference(&cfg).unwrap();
    let l = fit_loading(&r.x, cfg.k, false).unwrap();
    let back = reconstruct(&l, &project(&l, &r.x).unwrap()).unwrap();
    assert!(back.max_abs_diff(&r.x) < 1e-8 * r.x.frobenius_norm().max(1.0));
}

#[test]
fn setup_noise_models() {
    let cfg = DgpConfig::two_cluster(11);
    let v = dice_core::synth::gen_loading(&cfg).unwrap();

    let s2 = gen_target(Setup::SignalShift, &cfg, &v).unwrap();
    assert_eq!(s2.x.rows(), 400);
    let (_, var) = mean_var(&residual(&s2.x, &s2.u_true, &s2.v_true));
    assert!((var - 10.0).abs() < 0.5, "{var}");

    let s3 = gen_target(Setup::NoiseShift, &cfg, &v).unwrap();
    let res = residual(&s3.x, &s3.u_true, &s3.v_true);
    let tail = res.iter().filter(|e| e.abs() > 3.0).count() as f64 / res.len() as f64;
    assert!(tail > 3.0 * 0.0027, "{tail}");

    let s1 = gen_target(Setup::Matched, &cfg, &v).unwrap();
    let reference = gen_reference(&cfg).unwrap();
    assert_eq!(s1.v_true, reference.v_true);
    assert_ne!(s1.x.row(0), reference.x.row(0));
    let (_, var) = mean_var(&residual(&s1.x, &s1.u_true, &s1.v_true));
    assert!((var - 1.0).abs() < 0.05);
}

#[test]
fn prior_shift_latents() {
    let mut cfg = DgpConfig::two_cluster(4);
    cfg.n = 20_000;
    cfg.d = 15;
    let v = dice_core::synth::gen_loading(&cfg).unwrap();
    let t = gen_target(Setup::PriorShift, &cfg, &v).unwrap();
    let (mut heavy, mut gauss) = (Vec::new(), Vec::new());
    for i in 0..cfg.n {
        let dst = if t.labels[i] == 0 { &mut heavy } else { &mut gauss };
        dst.extend_from_slice(t.u_true.row(i));
    }
    let (m0, v0) = mean_var(&heavy);
    let (m1, v1) = mean_var(&gauss);
    // t₄ with scale 1.3 has variance 1.3·4/2 = 2.6.
    assert!(m0.abs() < 0.05 && (v0 / 2.6 - 1.0).abs() < 0.15, "{m0} {v0}");
    assert!((m1 - 1.0).abs() < 0.05 && (v1 / 1.5 - 1.0).abs() < 0.05, "{m1} {v1}");
    let (_, var) = mean_var(&residual(&t.x, &t.u_true, &t.v_true));
    assert!((var - 10.0).abs() < 0.5);
}

#[test]
fn five_cluster_modes() {
    let all = gen_five_cluster(&FiveClusterConfig::new(2, TargetMode::AllClusters)).unwrap();
    assert_eq!(all.reference.x.shape(), (8000, 200));
    assert_eq!(all.target.x.shape(), (2000, 200));
    for c in 0..5 {
        let f = all.reference.labels.iter().filter(|&&l| l == c).count() as f64 / 8000.0;
        assert!((f - 0.2).abs() < 0.02, "{c}: {f}");
    }
    let (_, var) = mean_var(&residual(&all.reference.x, &all.reference.u_true, &all.reference.v_true));
    assert!((var - 0.5).abs() < 0.025);

    let single = gen_five_cluster(&FiveClusterConfig::new(2, TargetMode::SingleCluster(3))).unwrap();
    assert!(single.target.labels.iter().all(|&l| l == 3));
    assert_eq!(single.reference, all.reference);

    let unseen = gen_five_cluster(&FiveClusterConfig::new(2, TargetMode::Unseen)).unwrap();
    assert!(unseen.target.labels.iter().all(|&l| l == 5));
    assert!(unseen.reference.labels.iter().all(|&l| l < 5));
    assert_eq!(unseen.centers.rows(), 6);
    let mean = unseen.target.u_true.column_means();
    let err: f64 = mean.iter().zip(unseen.centers.row(5)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 15.0;
    assert!(err < 0.05, "{err}");
}

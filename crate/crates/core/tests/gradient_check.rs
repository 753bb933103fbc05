//! Central finite differences against the hand-written backward pass of the
//! whole noise-prediction network.

use dice_core::nn::{ModelConfig, Parameters, TabularDiffusionMlp};
use dice_core::{DenseMatrix, RngStream};

const H: f64 = 1e-5;

fn mse(pred: &DenseMatrix, target: &DenseMatrix) -> f64 {
    let n = pred.data().len() as f64;
    pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n
}

fn mse_grad(pred: &DenseMatrix, target: &DenseMatrix) -> DenseMatrix {
    let n = pred.data().len() as f64;
    DenseMatrix::new(
        pred.rows(),
        pred.cols(),
        pred.data().iter().zip(target.data()).map(|(p, t)| 2.0 * (p - t) / n).collect(),
    )
    .unwrap()
}

fn flat_params(m: &mut TabularDiffusionMlp) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::new();
    let mut g = Vec::new();
    m.visit_params(&mut |v, gr| {
        p.extend_from_slice(v);
        g.extend_from_slice(gr);
    });
    (p, g)
}

fn set_param(m: &mut TabularDiffusionMlp, index: usize, value: f64) {
    let mut offset = 0;
    m.visit_params(&mut |v, _| {
        if index >= offset && index < offset + v.len() {
            v[index - offset] = value;
        }
        offset += v.len();
    });
}

/// Largest relative error `|a − n| / max(|a|, |n|, floor)` over all parameters
/// and inputs.
pub fn max_relative_error(hidden: usize, blocks: usize, floor: f64) -> (f64, usize) {
    let cfg = ModelConfig { latent_dim: 5, hidden, blocks };
    let mut st = RngStream::new(2024);
    let mut model = TabularDiffusionMlp::new(cfg, &mut st).unwrap();
    let batch = 6;
    let mut x = DenseMatrix::zeros(batch, 5);
    st.fill_standard_normal(x.data_mut());
    let mut target = DenseMatrix::zeros(batch, 5);
    st.fill_standard_normal(target.data_mut());
    let tau: Vec<f64> = (0..batch).map(|i| (i as f64 + 1.0) / (batch as f64 + 1.0)).collect();

    model.zero_grad();
    let pred = model.forward(&x, &tau).unwrap();
    let gx = model.backward(&mse_grad(&pred, &target)).unwrap();
    let (params, grads) = flat_params(&mut model);

    let loss_at = |m: &mut TabularDiffusionMlp, x: &DenseMatrix| mse(&m.forward(x, &tau).unwrap(), &target);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);

    let mut worst = 0.0f64;
    for (i, (&p, &g)) in params.iter().zip(&grads).enumerate() {
        set_param(&mut model, i, p + H);
        let up = loss_at(&mut model, &x);
        set_param(&mut model, i, p - H);
        let down = loss_at(&mut model, &x);
        set_param(&mut model, i, p);
        worst = worst.max(rel(g, (up - down) / (2.0 * H)));
    }
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        let mut xp = x.clone();
        xp.data_mut()[i] = orig + H;
        let up = loss_at(&mut model, &xp);
        xp.data_mut()[i] = orig - H;
        let down = loss_at(&mut model, &xp);
        worst = worst.max(rel(gx.data()[i], (up - down) / (2.0 * H)));
    }
    (worst, params.len())
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let (worst, n) = max_relative_error(8, 2, 1e-6);
    assert!(n > 1000);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

//! Shared fixtures for the criterion benchmarks.

use dice_core::diffusion::{build_schedule, NoiseSchedule};
use dice_core::nn::{FrozenDenoiser, ModelConfig, TabularDiffusionMlp};
use dice_core::synth::{gen_reference, DgpConfig, LabeledDataset};
use dice_core::{sample_standard_normal, DenseMatrix, RngStream};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    sample_standard_normal(&mut RngStream::new(seed), rows, cols).expect("valid shape")
}

/// Two-population reference data with `d` features and `m` rows.
pub fn reference(d: usize, m: usize) -> LabeledDataset {
    gen_reference(&DgpConfig { d, m, ..DgpConfig::two_cluster(0) }).expect("valid config")
}

pub fn schedule() -> NoiseSchedule {
    build_schedule(512, 1e-4, 2e-2).expect("valid schedule")
}

/// Untrained network with the default widths, plus its inference copy.
pub fn network(k: usize) -> (TabularDiffusionMlp, FrozenDenoiser) {
    let cfg = ModelConfig { latent_dim: k, hidden: 64, blocks: 2 };
    let model = TabularDiffusionMlp::new(cfg, &mut RngStream::new(1)).expect("valid config");
    let frozen = FrozenDenoiser::from_model(&model, 512).expect("valid model");
    (model, frozen)
}

//! Noise schedule, training of the noise predictor and reverse-chain sampling.

pub mod checkpoint;
pub mod sample;
pub mod scaler;
pub mod schedule;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_model, save_model, Checkpoint};
pub use sample::{reverse_step, reverse_update, sample_prior, NoisePredictor};
pub use scaler::{LatentScaler, ScaledPredictor};
pub use schedule::{build_schedule, forward_noise, NoiseSchedule};
pub use train::{mixup_augment, noise_prediction_loss, train, train_observed, ClassPool, TrainConfig, TrainedModel};

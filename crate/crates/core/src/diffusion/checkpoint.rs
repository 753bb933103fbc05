//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "DICECKPT"
//! version    u32
//! k, D, M, T u64 × 4
//! β_min/max  f64 × 2
//! count      u64      number of trainable parameters
//! params     f64 × count, in `Parameters::visit_params` order
//! bn stats   f64, per block: norm1 mean, norm1 var, norm2 mean, norm2 var
//! scaler     f64 × k latent mean, then f64 scale
//! checksum   u64      FNV-1a over every preceding byte
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::scaler::{LatentScaler, ScaledPredictor};
use super::schedule::{build_schedule, NoiseSchedule};
use crate::error::{DiceError, Result};
use crate::nn::{FrozenDenoiser, Mode, ModelConfig, Parameters, TabularDiffusionMlp};
use crate::rng::RngStream;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DICECKPT";
pub const CHECKPOINT_VERSION: u32 = 2;

/// Everything needed to sample from a trained prior.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TabularDiffusionMlp,
    pub schedule: NoiseSchedule,
    pub scaler: LatentScaler,
}

impl Checkpoint {
    /// The frozen f32 inference copy as a data-space predictor.
    pub fn frozen(&self) -> Result<ScaledPredictor<FrozenDenoiser>> {
        Ok(ScaledPredictor {
            inner: FrozenDenoiser::from_model(&self.model, self.schedule.steps())?,
            scaler: self.scaler.clone(),
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn bn_stats(model: &mut TabularDiffusionMlp, mut f: impl FnMut(&mut Vec<f64>)) {
    for b in &mut model.blocks {
        f(&mut b.norm1.running_mean);
        f(&mut b.norm1.running_var);
        f(&mut b.norm2.running_mean);
        f(&mut b.norm2.running_var);
    }
}

/// Serializes a model with its schedule and latent scaler.
pub fn encode_checkpoint(model: &TabularDiffusionMlp, sched: &NoiseSchedule, scaler: &LatentScaler) -> Vec<u8> {
    let mut model = model.clone();
    let cfg = model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.latent_dim, cfg.hidden, cfg.blocks, sched.steps()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let (bmin, bmax) = sched.beta_range();
    buf.extend_from_slice(&bmin.to_le_bytes());
    buf.extend_from_slice(&bmax.to_le_bytes());
    buf.extend_from_slice(&(model.num_params() as u64).to_le_bytes());
    model.visit_params(&mut |p, _| p.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())));
    bn_stats(&mut model, |s| s.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())));
    scaler.mean().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    buf.extend_from_slice(&scaler.scale().to_le_bytes());
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DiceError::Checkpoint(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses bytes produced by [`encode_checkpoint`]. The model comes back in
/// eval mode.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).map_err(|_| DiceError::Checkpoint("file too short for header".into()))? != CHECKPOINT_MAGIC {
        return Err(DiceError::Checkpoint("bad magic bytes, not a model checkpoint".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(DiceError::Checkpoint(format!(
            "unsupported format version {version} (this build reads version {CHECKPOINT_VERSION})"
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = usize::try_from(c.u64()?).map_err(|_| DiceError::Checkpoint("dimension overflows usize".into()))?;
    }
    let [k, hidden, blocks, steps] = dims;
    if k == 0 || hidden == 0 || k > 1 << 20 || hidden > 1 << 16 || blocks > 1 << 10 {
        return Err(DiceError::Checkpoint(format!("implausible dimensions k={k} D={hidden} M={blocks}")));
    }
    let (bmin, bmax) = (c.f64()?, c.f64()?);
    let sched = build_schedule(steps, bmin, bmax).map_err(|e| DiceError::Checkpoint(format!("schedule: {e}")))?;

    let cfg = ModelConfig { latent_dim: k, hidden, blocks };
    let mut model = TabularDiffusionMlp::new(cfg, &mut RngStream::new(0))?;
    let count = c.u64()? as usize;
    if count != model.num_params() {
        return Err(DiceError::Checkpoint(format!(
            "parameter count {count} does not match architecture ({})",
            model.num_params()
        )));
    }
    let mut failure = None;
    model.visit_params(&mut |p, _| {
        for v in p.iter_mut() {
            match c.f64() {
                Ok(x) => *v = x,
                Err(e) => {
                    failure.get_or_insert(e);
                    return;
                }
            }
        }
    });
    bn_stats(&mut model, |s| {
        for v in s.iter_mut() {
            match c.f64() {
                Ok(x) => *v = x,
                Err(e) => {
                    failure.get_or_insert(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mean = (0..k).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let scale = c.f64()?;
    let body_end = c.pos;
    let stored = c.u64()?;
    if stored != fnv1a(&bytes[..body_end]) {
        return Err(DiceError::Checkpoint("checksum mismatch, file is corrupted".into()));
    }
    if c.pos != bytes.len() {
        return Err(DiceError::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let scaler = LatentScaler::new(mean, scale).map_err(|e| DiceError::Checkpoint(format!("scaler: {e}")))?;
    model.set_mode(Mode::Eval);
    Ok(Checkpoint { model, schedule: sched, scaler })
}

pub fn save_model(
    model: &TabularDiffusionMlp,
    sched: &NoiseSchedule,
    scaler: &LatentScaler,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_checkpoint(model, sched, scaler))?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

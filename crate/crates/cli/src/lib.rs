//! Config-driven driver for the DICE pipeline: generate, train, denoise,
//! evaluate, confidence and ρ-ablation.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;

use std::path::PathBuf;

pub use config::{RawConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use files::{MatrixFile, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Denoise,
    Evaluate,
    Confidence,
    AblateRho,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub setup: Option<u32>,
    pub rho: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, raw: &mut RawConfig) {
        if let Some(s) = self.seed {
            raw.set("seed", s.to_string());
        }
        if let Some(s) = self.setup {
            raw.set("dgp.setup", s.to_string());
        }
        if let Some(r) = self.rho {
            raw.set("gibbs.rho_schedule", format!("constant:{r}"));
        }
        if let Some(d) = &self.out_dir {
            raw.set("out_dir", d.display().to_string());
        }
    }
}

/// Parses and validates the whole config, then runs `command`.
pub fn run(command: Command, raw: &RawConfig) -> CliResult<Report> {
    let cfg = RunConfig::from_raw(raw)?;
    match command {
        Command::Generate => commands::generate(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Denoise => commands::denoise(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Confidence => commands::confidence(&cfg),
        Command::AblateRho => commands::ablate_rho(&cfg),
    }
}

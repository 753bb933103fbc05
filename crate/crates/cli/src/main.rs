use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dice_cli::{run, CliError, Command, Overrides, RawConfig};

#[derive(Parser)]
#[command(name = "dice", version, about = "Diffusion-prior denoising of low-rank noisy data")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write synthetic reference and target datasets.
    Generate(Args),
    /// Fit the loading and train the latent diffusion prior.
    Train(Args),
    /// Write PCA and DICE embeddings of the target rows.
    Denoise(Args),
    /// Score embeddings against the true target labels.
    Evaluate(Args),
    /// Draw repeated samples for one query observation.
    Confidence(Args),
    /// Sample spread across annealing levels.
    AblateRho(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    setup: Option<u32>,
    /// Constant annealing level for every Gibbs iteration.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(command: Command, args: Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let mut raw = RawConfig::load(&args.config)?;
    Overrides { seed: args.seed, setup: args.setup, rho: args.rho, out_dir: args.out_dir }.apply(&mut raw);
    let report = run(command, &raw)?;
    print!("{}", report.render());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, args) = match cli.command {
        Sub::Generate(a) => (Command::Generate, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Denoise(a) => (Command::Denoise, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
        Sub::Confidence(a) => (Command::Confidence, a),
        Sub::AblateRho(a) => (Command::AblateRho, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kandiff::commands::{cmd_enhance, cmd_eval, cmd_train};
use kandiff::config::Overrides;
use kandiff::verify;

#[derive(Parser)]
#[command(
    name = "kandiff",
    about = "Diffusion-based low-light image enhancement with spline-activation layers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training phase; writes checkpoints and a metrics log.
    Train {
        /// TOML run configuration; omitted fields use defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// 1 = heteroscedastic pretraining, 2 = frequency fine-tuning.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: u8,
        /// Checkpoint to continue from (required for phase 2).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override train.steps from the config.
        #[arg(long)]
        steps: Option<u64>,
        /// Override train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override data.root from the config.
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Override io.checkpoint_dir from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Enhance every PNG in a folder through the reverse diffusion loop.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add per-step posterior noise instead of the deterministic mean.
        #[arg(long)]
        stochastic: bool,
    },
    /// PSNR/SSIM of enhanced images against same-named references.
    Eval {
        #[arg(long)]
        enhanced: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical self-check suite against reference
    /// implementations.
    Verify {
        #[arg(long, value_enum, default_value_t = LevelArg::Quick)]
        level: LevelArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, kandiff::Error> = match cli.command {
        Command::Train {
            config,
            phase,
            resume,
            steps,
            seed,
            data_root,
            out_dir,
        } => {
            let flags = Overrides {
                phase: Some(phase),
                steps,
                seed,
                lr: None,
                data_root,
                checkpoint_dir: out_dir,
            };
            cmd_train(config.as_deref(), &flags, resume.as_deref(), false).map(|_| true)
        }
        Command::Enhance {
            ckpt,
            input,
            out,
            seed,
            stochastic,
        } => cmd_enhance(&ckpt, &input, &out, seed, stochastic, false).map(|_| true),
        Command::Eval {
            enhanced,
            reference,
            out,
        } => cmd_eval(&enhanced, &reference, out.as_deref(), false).map(|_| true),
        Command::Verify { level } => {
            let level = match level {
                LevelArg::Quick => verify::Level::Quick,
                LevelArg::Full => verify::Level::Full,
            };
            Ok(verify::report(&verify::run(level)))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

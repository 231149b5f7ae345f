mod commands;
mod config;
mod error;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Context, Protocol};
use error::{CliError, Result};

/// Train, compress and evaluate static/dynamic code grid video models.
#[derive(Parser, Debug)]
#[command(name = "dsnerv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, value_name = "N", env = "DSNERV_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Source {
    /// Checkpoint to decode [default: <out>/model.dsnc].
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,

    /// Directory of numbered frames, instead of the configured dataset.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to the configured dataset and task.
    Train,
    /// Decode every frame and score it.
    Reconstruct(Source),
    /// Decode the odd frames and score them.
    Interpolate(Source),
    /// Decode every frame and score it against the unmasked originals.
    Inpaint(Source),
    /// Prune, quantise and entropy-code a checkpoint, one bitstream per bit depth.
    Compress {
        #[command(flatten)]
        source: Source,
        /// Fraction of decoder weights to zero.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Bit depths, comma separated.
        #[arg(long, value_delimiter = ',')]
        bits: Option<Vec<u8>>,
    },
    /// Rebuild a checkpoint from a bitstream.
    Decompress { bitstream: PathBuf },
    /// Score a checkpoint or bitstream on the configured evaluation frames.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
        bitstream: Option<PathBuf>,
    },
    /// Print the spec and parameter breakdown of a checkpoint or bitstream.
    Info { path: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = cli
        .config
        .as_deref()
        .map(|p| config::load(p).and_then(|c| c.resolve(cli.seed)))
        .transpose()?;
    let ctx = Context {
        config,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Train => commands::train(&ctx),
        Command::Reconstruct(s) => {
            commands::decode(&ctx, Protocol::Reconstruct, s.checkpoint, s.data)
        }
        Command::Interpolate(s) => {
            commands::decode(&ctx, Protocol::Interpolate, s.checkpoint, s.data)
        }
        Command::Inpaint(s) => commands::decode(&ctx, Protocol::Inpaint, s.checkpoint, s.data),
        Command::Compress {
            source,
            sparsity,
            bits,
        } => commands::compress(&ctx, source.checkpoint, source.data, sparsity, bits),
        Command::Decompress { bitstream } => commands::decompress(&ctx, &bitstream),
        Command::Eval { source, bitstream } => {
            commands::eval(&ctx, source.checkpoint, bitstream, source.data)
        }
        Command::Info { path } => commands::info(&path),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ualk_cli::config::Pipeline;
use ualk_cli::{convert, run, thread_count, RunArgs};

#[derive(Parser)]
#[command(name = "ualk", version, about = "Unknown-aware learning toy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults are used for every key it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset.
    Gen(Common),
    /// Virtual outlier synthesis on the 2-D toy.
    Vos(Common),
    /// vMF representation shaping on the 2-D toy.
    Siren(Common),
    /// Wild-data filtering and the binary OOD head.
    Sal(Common),
    /// Subspace membership scoring and the truthfulness classifier.
    Halo(Common),
    /// AUROC and FPR95 of two score files.
    Eval(Common),
    /// Run the pipeline named by the config's `pipeline` key.
    Run(Common),
    /// Convert a matrix between CSV and the binary container.
    Convert { input: PathBuf, output: PathBuf },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build_global()
        .context("starting the thread pool")?;
    let (pipeline, c) = match cli.command {
        Command::Convert { input, output } => return convert(&input, &output),
        Command::Gen(c) => (Some(Pipeline::Gen), c),
        Command::Vos(c) => (Some(Pipeline::Vos), c),
        Command::Siren(c) => (Some(Pipeline::Siren), c),
        Command::Sal(c) => (Some(Pipeline::Sal), c),
        Command::Halo(c) => (Some(Pipeline::Halo), c),
        Command::Eval(c) => (Some(Pipeline::Eval), c),
        Command::Run(c) => (None, c),
    };
    let args = RunArgs {
        config: c.config,
        seed: c.seed,
        out: c.out,
    };
    let out = run(pipeline, &args)?;
    println!("{}", out.join("metrics.json").display());
    Ok(())
}

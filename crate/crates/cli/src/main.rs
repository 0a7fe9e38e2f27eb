mod cmd;
mod data;
mod manifest;
mod params;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmd::UsageError;

#[derive(Parser)]
#[command(name = "andiff", version, about = "Training-free diffusion sampling with time-aware golden subsets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a moons CSV or a synthetic digit IDX set to disk
    Prepare(cmd::prepare::PrepareArgs),
    /// Draw samples with the analytical denoiser
    Sample(cmd::sample::SampleArgs),
    /// Weight-concentration and subset-size sensitivity sweeps
    Analyze(cmd::analyze::AnalyzeArgs),
    /// Time one denoising step per mode
    Bench(cmd::bench::BenchArgs),
    /// Run the bound, asymptotic and streaming property suites
    Verify(cmd::verify::VerifyArgs),
    /// Re-run a command from its manifest
    Replay(cmd::replay::ReplayArgs),
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Prepare(a) => cmd::prepare::run(&a),
        Command::Sample(a) => cmd::sample::run(&a),
        Command::Analyze(a) => cmd::analyze::run(&a),
        Command::Bench(a) => cmd::bench::run(&a),
        Command::Verify(a) => cmd::verify::run(&a),
        Command::Replay(a) => cmd::replay::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("usage error: {u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msflow_cli::{execute, Command, Options, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "msflow", version, about = "Minimal surface flow with prescribed contact angle")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the progress summary on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Evolve the flow and write monitors, snapshots and a summary.
    Run(Common),
    /// Solve for the translating solution and its speed.
    Translator(Common),
    /// Run the configured audits and write audits.jsonl.
    Audit(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG as u8) } else { ExitCode::SUCCESS };
        }
    };
    let (cmd, common) = match cli.command {
        Sub::Run(c) => (Command::Run, c),
        Sub::Translator(c) => (Command::Translator, c),
        Sub::Audit(c) => (Command::Audit, c),
    };
    let opts = Options { out: common.out, quiet: common.quiet };
    match execute(cmd, &common.config, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("msflow: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

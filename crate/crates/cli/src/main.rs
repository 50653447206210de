use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgvm_cli::{info, snapshot, CliError, RunConfig, StudyConfig};

#[derive(Parser)]
#[command(name = "sgvm", version, about = "Sparse-grid and adaptive DG Vlasov-Maxwell / Vlasov-Ampere solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides OUTPUT_DIR and the config file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a convergence study and write study.csv and study.txt.
    Study {
        #[arg(long)]
        config: PathBuf,
    },
    /// Describe a snapshot file.
    Info {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, output } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            let s = sgvm_cli::run(&cfg)?;
            println!(
                "finished t = {} after {} steps; {} active elements, {} dof; output in {}",
                s.state.t,
                s.steps,
                s.active_elements(),
                s.dof(),
                s.output_dir.display()
            );
            if let Some(e) = s.errors {
                println!("reversibility error: f {:.6e}, E {:.6e}", e.f_l2, e.e_l2);
            }
        }
        Command::Study { config } => {
            let cfg = StudyConfig::load(&config)?;
            let (table, dir) = sgvm_cli::study(&cfg)?;
            print!("{}", table.text());
            println!("written to {}", dir.display());
        }
        Command::Info { snapshot: path } => {
            print!("{}", info::info_text(&snapshot::read(&path)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

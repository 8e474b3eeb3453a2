use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fucrt_cli::commands::{render_csv, render_table, REPORT_CSV};
use fucrt_cli::{cmd_pretrain, cmd_report, cmd_unlearn, CliError, ExperimentConfig, Method};
use fucrt_core::Execution;

#[derive(Parser)]
#[command(
    name = "fucrt",
    version,
    about = "Federated class unlearning experiments"
)]
struct Cli {
    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for client training; 1 runs clients sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model with FedAvg.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Forget the configured classes with one method.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Checkpoint of the original model (unused by from_scratch).
        #[arg(long)]
        origin: Option<PathBuf>,
    },
    /// Compare finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let execution = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => Execution::Sequential,
        Some(n) => {
            fucrt_core::parallel::configure_threads(n);
            Execution::default()
        }
        None => Execution::default(),
    };
    match &cli.command {
        Command::Pretrain { config } => {
            let config = load_config(cli, config)?;
            let s = cmd_pretrain(&config, execution)?;
            println!(
                "pretrained: accuracy {:.2}%, written to {}",
                s.overall_accuracy,
                config.out_dir.display()
            );
        }
        Command::Unlearn {
            config,
            method,
            origin,
        } => {
            let config = load_config(cli, config)?;
            let s = cmd_unlearn(&config, *method, origin.as_deref(), execution)?;
            println!(
                "{}: unlearning {:.2}%, remaining {:.2}%, written to {}",
                s.variant,
                s.unlearning.accuracy.unwrap_or(f64::NAN),
                s.remaining.accuracy.unwrap_or(f64::NAN),
                config.out_dir.display()
            );
        }
        Command::Report { dirs } => {
            let rows = cmd_report(dirs)?;
            print!("{}", render_table(&rows));
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| CliError::Io {
                    path: out.clone(),
                    source: e,
                })?;
                let path = out.join(REPORT_CSV);
                std::fs::write(&path, render_csv(&rows))
                    .map_err(|e| CliError::Io { path, source: e })?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

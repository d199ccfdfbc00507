use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cloud_lmpc_cli::{cmd_run, cmd_validate, CliError, ModeSelection, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "cloud-lmpc", version, about = "Cloud-based learning MPC fleet experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the fleet and write tables and plots.
    Run(Flags),
    /// Check every initial trajectory and baseline without simulating.
    Validate(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// cloud_based, isolated or both.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Store to start from instead of the generated initial trajectories.
    #[arg(long)]
    cloud_in: Option<PathBuf>,
    /// Where to write the final store.
    #[arg(long)]
    cloud_out: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    agents: Option<usize>,
}

impl Flags {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            mode: self.mode.as_deref().map(ModeSelection::parse).transpose()?,
            out_dir: self.out_dir.clone(),
            cloud_in: self.cloud_in.clone(),
            cloud_out: self.cloud_out.clone(),
            tasks: self.tasks,
            agents: self.agents,
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(flags) => {
            let prepared = flags.config()?.prepare()?;
            for run in cmd_run(&prepared)? {
                let m = &run.metrics;
                let pedestrian = m.executions.iter().filter(|e| e.pedestrian).count();
                println!(
                    "{}: {} tasks ({} pedestrian-affected), {} solves, {} transfers, {} steps -> {}",
                    m.mode,
                    m.executions.len(),
                    pedestrian,
                    m.solves.len(),
                    m.transfers,
                    m.clock,
                    run.dir.display()
                );
            }
            Ok(())
        }
        Command::Validate(flags) => {
            let prepared = flags.config()?.prepare()?;
            let reports = cmd_validate(&prepared)?;
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |c| format!("{c:.6}"));
            println!("{:<10} {:>12} {:>12}  status", "task", "seed cost", "baseline");
            for r in &reports {
                let status = r.error.as_deref().unwrap_or("ok");
                println!(
                    "{:<10} {:>12} {:>12}  {status}",
                    r.key.to_string(),
                    fmt(r.seed_cost),
                    fmt(r.baseline)
                );
            }
            let valid = reports.iter().filter(|r| r.valid()).count();
            println!("{valid}/{} seeds valid", reports.len());
            if valid == reports.len() {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{} task(s) have no valid initial data",
                    reports.len() - valid
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recadam::checkpoint;
use recadam::error::Result;
use recadam::harness::config::ExperimentConfig;
use recadam::harness::{report, run, sweep};

/// Pretrain, fine-tune and sweep RecAdam experiments on toy transfer tasks.
#[derive(Parser)]
#[command(name = "recadam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train vanilla Adam on the source task and write theta_star.bin.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune one seed on the target task from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        theta_star: PathBuf,
        /// Defaults to the first entry of `seeds`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the Cartesian product of a grid file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Aggregate the runs of an output directory into CSV tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run::pretrain_to_dir(&cfg)?;
            println!(
                "pretrained {} steps, source loss {}, wrote {}",
                cfg.pretrain.steps,
                report::fmt_real(out.final_loss),
                cfg.output_dir.join(run::THETA_STAR_FILE).display()
            );
        }
        Command::Finetune { config, theta_star, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let theta_star = checkpoint::read_params(&theta_star)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (dir, record) = run::finetune_to_dir(&cfg, &theta_star, seed)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
            println!("wrote {}", dir.display());
        }
        Command::Sweep { config, grid } => {
            let cfg = ExperimentConfig::load(&config)?;
            let grid = sweep::Grid::load(&grid, &cfg)?;
            let records = sweep::sweep(&cfg, &grid)?;
            let failed = records.iter().filter(|r| !r.is_ok()).count();
            println!(
                "{} runs ({} failed), wrote {}",
                records.len(),
                failed,
                cfg.output_dir.join(sweep::SUMMARY_FILE).display()
            );
        }
        Command::Report { dir } => {
            let files = report::report(&dir)?;
            println!("{} runs", files.n_runs);
            println!("wrote {}", files.curves.display());
            println!("wrote {}", files.summary_table.display());
            if let Some(p) = files.init_comparison {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use nestattr_cli::{run_experiment, run_scaling, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nestattr", version, about = "Run nested attribution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override `output_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override `grid.seeds`, e.g. `--seeds 0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every method over the configured grid.
    Run { config: PathBuf },
    /// Time the solver across the `grid.n_low` values.
    Scale { config: PathBuf },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seeds) = &cli.seeds {
        cfg.grid.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let summary = run_experiment(&cfg)?;
            if !cli.quiet {
                println!("{:<8} {:>4} {:>5} {:>8} {:>8} {:>12}", "method", "N_H", "N_L", "ndcg", "auroc", "consistency");
                for c in &summary.aggregate {
                    let get = |k: &str| c.metrics.get(k).map_or(f64::NAN, |s| s.mean);
                    println!(
                        "{:<8} {:>4} {:>5} {:>8.4} {:>8.4} {:>12.3e}",
                        c.method.name(),
                        c.n_high,
                        c.n_low,
                        get("ndcg"),
                        get("auroc"),
                        get("consistency")
                    );
                }
                if summary.nonconverged > 0 {
                    println!("{} c2fa samples did not converge", summary.nonconverged);
                }
                println!("wrote {}", summary.output_dir.display());
            }
        }
        Command::Scale { config } => {
            let cfg = load(cli, config)?;
            let report = run_scaling(&cfg)?;
            if !cli.quiet {
                println!("{:>6} {:>6} {:>12} {:>12} {:>8}", "N_L", "calls", "oracle_s", "solve_s", "iters");
                for r in &report.rows {
                    println!(
                        "{:>6} {:>6} {:>12.6} {:>12.6} {:>8}",
                        r.n_low, r.oracle_calls, r.oracle_seconds, r.solve_seconds, r.iterations
                    );
                }
                match report.fit {
                    Some(fit) => println!("linear fit: slope {:.3e} s/query, R² {:.4}", fit.slope, fit.r_squared),
                    None => println!("single N_L value, no fit"),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

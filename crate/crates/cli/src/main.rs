use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use taskrel_cli::commands::{self, HeatmapShape, DEFAULT_EVAL_EPISODES};

#[derive(Parser)]
#[command(
    name = "taskrel",
    version,
    about = "Few-shot GNN experiments with task-level relations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config.txt, loss.csv and params.txt to output.dir.
    Train { config: PathBuf },
    /// Evaluate a trained run; writes eval.csv into the run directory.
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
        episodes: usize,
        /// Fraction of support labels kept visible; repeat for several reports.
        #[arg(long = "labeled-fraction", value_name = "F")]
        labeled_fraction: Vec<f64>,
    },
    /// Train and evaluate the five relation placements of a three-layer model.
    Ablate { config: PathBuf },
    /// Average support x query similarity of a trained run into CSV and PGM.
    Heatmap {
        run_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
        episodes: usize,
        #[arg(long)]
        n_way: Option<usize>,
        #[arg(long)]
        k_shot: Option<usize>,
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Train abs_diff and tlrm models with the same seed and compare them.
    Compare { config: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let out = commands::cmd_train(&config)
                .with_context(|| format!("train {}", config.display()))?;
            let last = out.curve.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "trained {} episodes, final loss {last:.6}, run dir {}",
                out.curve.len(),
                out.run_dir.display()
            );
        }
        Command::Eval {
            run_dir,
            episodes,
            labeled_fraction,
        } => {
            let reports = commands::cmd_eval(&run_dir, episodes, &labeled_fraction)
                .with_context(|| format!("eval {}", run_dir.display()))?;
            for r in reports {
                println!(
                    "labeled_fraction {}: {:.4} ± {:.4} over {} episodes",
                    r.labeled_fraction,
                    r.report.mean_accuracy,
                    r.report.ci95,
                    r.report.episode_count
                );
            }
        }
        Command::Ablate { config } => {
            let rows = commands::cmd_ablate(&config)
                .with_context(|| format!("ablate {}", config.display()))?;
            for r in rows {
                println!(
                    "{:<12} {:.4} ± {:.4}",
                    r.name, r.report.mean_accuracy, r.report.ci95
                );
            }
        }
        Command::Heatmap {
            run_dir,
            episodes,
            n_way,
            k_shot,
            queries,
        } => {
            let shape = HeatmapShape {
                n_way,
                k_shot,
                queries,
            };
            let m = commands::cmd_heatmap(&run_dir, episodes, &shape)
                .with_context(|| format!("heatmap {}", run_dir.display()))?;
            println!(
                "wrote {}x{} heatmap to {}",
                m.rows(),
                m.cols(),
                run_dir.display()
            );
        }
        Command::Compare { config } => {
            let c = commands::cmd_compare(&config)
                .with_context(|| format!("compare {}", config.display()))?;
            println!(
                "abs_diff {:.4} ± {:.4}",
                c.abs_diff.mean_accuracy, c.abs_diff.ci95
            );
            println!("tlrm     {:.4} ± {:.4}", c.tlrm.mean_accuracy, c.tlrm.ci95);
            println!("delta    {:+.4} ± {:.4}", c.delta, c.delta_ci95);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

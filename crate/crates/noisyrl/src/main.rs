//! Experiment CLI. Exit codes: 0 success, 1 config error, 2 runtime abort,
//! 3 check failure (e.g. an injected perturbation the guard rejects).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use noisyrl::env::{
    build_domain, load_fixture, save_fixture, Fixture, TaskEntry, FIXTURE_SCHEMA_VERSION,
};
use noisyrl::exp::{load_config, run_eval, run_inject, run_report, run_train};
use noisyrl::noise::{NoiseCategory, NoiseSpec};
use noisyrl::policy::{load_checkpoint, FeatureLayout};

#[derive(Parser)]
#[command(
    name = "noisyrl",
    version,
    about = "Noise-aware agentic RL experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a domain + task fixture from a config.
    GenDomain {
        #[arg(long)]
        config: PathBuf,
        /// Output fixture path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// How many tasks to synthesize into the fixture.
        #[arg(long, default_value_t = 8)]
        tasks: usize,
    },
    /// Train a policy per the config; writes logs, checkpoints, manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint under the ideal and noisy settings.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to write the metrics report (JSON); defaults next to the
        /// checkpoint as eval_report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluation seed (default: the config seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Preview a perturbation on one fixture task and check solvability.
    Inject {
        #[arg(long)]
        fixture: PathBuf,
        /// Task id; defaults to the first task in the fixture.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        category: String,
        #[arg(long)]
        level: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build comparison tables and dynamics plots from run directories.
    Report {
        /// One or more run directories (each containing manifest.json).
        #[arg(long, required = true, num_args = 1..)]
        run: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // config-shaped problems exit 1, everything else is a runtime abort
            let msg = format!("{e:#}");
            if msg.contains("config") || msg.contains("invariant") || msg.contains("unknown") {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::GenDomain { config, out, tasks } => {
            let config = load_config(&config)?;
            let domain =
                build_domain(config.domain.into(), config.seed).context("domain construction")?;
            let mut entries = Vec::new();
            let span = config.tasks.chain_max - config.tasks.chain_min + 1;
            for i in 0..tasks {
                let chain = config.tasks.chain_min + (i % span);
                let seed = noisyrl::seeding::derive_seed(
                    config.seed,
                    &[noisyrl::seeding::tags::TASK, 9, i as u64],
                );
                let (task, initial_db) = noisyrl::env::synthesize_task(&domain, chain, seed)
                    .context("task synthesis")?;
                entries.push(TaskEntry { task, initial_db });
            }
            let fixture = Fixture {
                schema_version: FIXTURE_SCHEMA_VERSION,
                domain,
                tasks: entries,
            };
            save_fixture(&out, &fixture)?;
            println!("wrote fixture with {tasks} tasks to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config } => {
            let config = load_config(&config)?;
            let manifest = run_train(&config).context("training run")?;
            println!(
                "run complete: {} iterations, artifacts in {}",
                manifest.iterations_completed,
                config.resolved_output_dir().display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            config,
            checkpoint,
            out,
            seed,
        } => {
            let config = load_config(&config)?;
            let domain = build_domain(config.domain.into(), config.seed)?;
            let layout = FeatureLayout::for_domain(&domain);
            let ckpt = load_checkpoint(&checkpoint, Some(&layout))?;
            let eval_seed = seed.unwrap_or(config.seed);
            let outcome = run_eval(&config, &ckpt.params(), eval_seed).context("evaluation")?;
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("eval_report.json")
            });
            std::fs::write(&out, serde_json::to_string_pretty(&outcome.report)?)?;
            println!(
                "ideal Avg@{k} = {:.2}, noisy Avg@{k} = {:.2}, gap = {:.2} points ({})",
                outcome.report.ideal.avg_at_k,
                outcome.report.noisy_pooled.avg_at_k,
                outcome.report.gap.avg_at_k,
                out.display(),
                k = outcome.report.k,
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Inject {
            fixture,
            task,
            category,
            level,
            seed,
        } => {
            let fixture = load_fixture(&fixture)?;
            let entry = match &task {
                Some(id) => fixture
                    .tasks
                    .iter()
                    .find(|t| &t.task.task_id == id)
                    .ok_or_else(|| anyhow!("task {id} not found in fixture"))?,
                None => fixture
                    .tasks
                    .first()
                    .ok_or_else(|| anyhow!("fixture contains no tasks"))?,
            };
            let category = NoiseCategory::parse(&category)
                .ok_or_else(|| anyhow!("unknown noise category {category} (config error)"))?;
            let outcome = run_inject(
                &fixture.domain,
                &entry.task,
                &entry.initial_db,
                NoiseSpec::new(category, level),
                seed,
            )?;
            println!(
                "task {} under {} level {}:",
                outcome.task_id, outcome.category, outcome.level
            );
            if outcome.diff.is_empty() {
                println!("  (no script changes)");
            }
            for line in &outcome.diff {
                println!("  {line}");
            }
            match (outcome.solvable, outcome.witness_length) {
                (true, Some(len)) => {
                    println!(
                        "  verdict: solvable (witness length {len}, {} nodes explored)",
                        outcome.explored_nodes
                    );
                    Ok(ExitCode::SUCCESS)
                }
                _ => {
                    println!(
                        "  verdict: UNSOLVABLE ({} nodes explored)",
                        outcome.explored_nodes
                    );
                    Ok(ExitCode::from(3))
                }
            }
        }
        Command::Report { run, out } => {
            let files = run_report(&run, &out).context("report generation")?;
            println!("wrote {}", files.report_json.display());
            println!("wrote {}", files.report_txt.display());
            println!("wrote {}", files.dynamics_svg.display());
            if let Some(p) = files.curriculum_svg {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! A compact curriculum training run: watch the clean/noisy success rates
//! and the scheduler's levels move window by window.
//!
//!   cargo run --release --example train_curriculum
//!   cargo run --release --example train_curriculum -- --iterations 80 --out runs/demo

use anyhow::Result;
use clap::Parser;

use noisyrl::exp::{
    run_eval, run_train, DomainSection, ExperimentConfig, ObjectiveSection, OptimizerSection,
    RolloutSection, SchedulerSection, TasksSection, Variant,
};
use noisyrl::policy::load_checkpoint;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 60)]
    iterations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "/tmp/noisyrl-train-curriculum")]
    out: std::path::PathBuf,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let config = ExperimentConfig {
        variant: Variant::HybridCurriculum,
        seed: args.seed,
        output_dir: args.out.clone(),
        domain: DomainSection {
            tools: 9,
            entity_kinds: 3,
            links: 2,
        },
        tasks: TasksSection {
            train: 60,
            eval: 24,
            ..Default::default()
        },
        rollout: RolloutSection {
            iterations: args.iterations,
            ..Default::default()
        },
        optimizer: OptimizerSection::default(),
        objective: ObjectiveSection::default(),
        scheduler: SchedulerSection::default(),
        eval: Default::default(),
        init_scale: 0.05,
    };

    println!(
        "training {} iterations into {} ...",
        args.iterations,
        args.out.display()
    );
    let manifest = run_train(&config)?;
    println!("done: {} iterations", manifest.iterations_completed);

    // replay the logs for a quick console summary
    let diag = std::fs::read_to_string(args.out.join("diagnostics.jsonl"))?;
    println!(
        "\n{:>5} {:>8} {:>8} {:>10}",
        "iter", "clean", "noisy", "objective"
    );
    for line in diag.lines().step_by(10) {
        let v: serde_json::Value = serde_json::from_str(line)?;
        println!(
            "{:>5} {:>8.3} {:>8} {:>10.4}",
            v["iteration"],
            v["clean_mean_reward"].as_f64().unwrap(),
            v["noisy_mean_reward"]
                .as_f64()
                .map(|x| format!("{x:.3}"))
                .unwrap_or_else(|| "-".into()),
            v["update"]["objective"].as_f64().unwrap(),
        );
    }
    let sched = std::fs::read_to_string(args.out.join("scheduler.jsonl"))?;
    if let Some(last) = sched.lines().last() {
        let v: serde_json::Value = serde_json::from_str(last)?;
        println!("\nfinal curriculum state (iteration {}):", v["iteration"]);
        println!("  total noisy fraction: {}", v["total_fraction"]);
        println!("  levels: {}", v["levels"]);
    }

    let ckpt = load_checkpoint(&args.out.join("checkpoint_final.json"), None)?;
    let outcome = run_eval(&config, &ckpt.params(), args.seed)?;
    println!(
        "\nfinal eval: ideal Avg@{k} = {:.2}, noisy Avg@{k} = {:.2} (gap {:.2} points)",
        outcome.report.ideal.avg_at_k,
        outcome.report.noisy_pooled.avg_at_k,
        outcome.report.gap.avg_at_k,
        k = outcome.report.k
    );
    Ok(())
}

//! The headline experiment at demo scale: trains the clean-only baseline and
//! the noise curriculum on the same tasks and seed, evaluates both under
//! ideal and noisy settings, and renders the comparison report with dynamics
//! plots.
//!
//!   cargo run --release --example compare_runs
//!   cargo run --release --example compare_runs -- --iterations 100

use anyhow::Result;
use clap::Parser;

use noisyrl::exp::{
    run_eval, run_report, run_train, DomainSection, ExperimentConfig, TasksSection, Variant,
};
use noisyrl::policy::load_checkpoint;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 60)]
    iterations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "/tmp/noisyrl-compare")]
    out: std::path::PathBuf,
}

fn config_for(args: &Args, variant: Variant, dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        variant,
        seed: args.seed,
        output_dir: args.out.join(dir),
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
        rollout: noisyrl::exp::RolloutSection {
            iterations: args.iterations,
            ..Default::default()
        },
        optimizer: Default::default(),
        objective: Default::default(),
        scheduler: Default::default(),
        eval: Default::default(),
        init_scale: 0.05,
    }
}

fn main() -> Result<()> {
    let args = Args::parse();
    let runs = [
        (Variant::Gspo, "baseline"),
        (Variant::HybridCurriculum, "curriculum"),
    ];
    for (variant, dir) in runs {
        let config = config_for(&args, variant, dir);
        println!("training {dir} ({}) ...", variant.name());
        run_train(&config)?;
        let ckpt = load_checkpoint(
            &config.resolved_output_dir().join("checkpoint_final.json"),
            None,
        )?;
        let outcome = run_eval(&config, &ckpt.params(), args.seed)?;
        std::fs::write(
            config.resolved_output_dir().join("eval_report.json"),
            serde_json::to_string_pretty(&outcome.report)?,
        )?;
        println!(
            "  ideal Avg@4 = {:.2}, noisy Avg@4 = {:.2}",
            outcome.report.ideal.avg_at_k, outcome.report.noisy_pooled.avg_at_k
        );
    }

    let files = run_report(
        &[args.out.join("baseline"), args.out.join("curriculum")],
        &args.out.join("report"),
    )?;
    println!("\n{}", std::fs::read_to_string(&files.report_txt)?);
    println!("report files:");
    println!("  {}", files.report_json.display());
    println!("  {}", files.dynamics_svg.display());
    if let Some(p) = files.curriculum_svg {
        println!("  {}", p.display());
    }
    Ok(())
}

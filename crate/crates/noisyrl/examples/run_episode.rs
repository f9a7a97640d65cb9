//! Episode walkthrough: builds a domain, synthesizes a task, runs one
//! episode step by step, and prints every observation, candidate count, and
//! chosen action.
//!
//!   cargo run --release --example run_episode
//!   cargo run --release --example run_episode -- --noise ambiguous --level 2
//!   cargo run --release --example run_episode -- --checkpoint runs/demo/checkpoint_final.json

use anyhow::Result;
use clap::Parser;

use noisyrl::env::{build_domain, synthesize_task, DomainSize};
use noisyrl::noise::{NoiseCategory, NoiseSpec};
use noisyrl::policy::{expert_params, load_checkpoint, FeatureLayout};
use noisyrl::rollout::run_episode;

#[derive(Parser)]
struct Args {
    /// Noise category (ambiguous, inconsistent, redundant, out_of_scope,
    /// failure, incomplete, misleading, redundant_tool); omit for clean.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long, default_value_t = 1)]
    level: u32,
    /// Policy checkpoint; the built-in reference policy when omitted.
    #[arg(long)]
    checkpoint: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 1)]
    task_seed: u64,
    #[arg(long, default_value_t = 7)]
    episode_seed: u64,
    #[arg(long, default_value_t = 3)]
    chain: usize,
    /// Sampling temperature (0 = greedy).
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let domain = build_domain(
        DomainSize {
            tools: 9,
            entity_kinds: 3,
            links: 2,
        },
        7,
    )?;
    let layout = FeatureLayout::for_domain(&domain);
    let (task, db) = synthesize_task(&domain, args.chain, args.task_seed)?;

    let policy = match &args.checkpoint {
        Some(path) => load_checkpoint(path, Some(&layout))?.params(),
        None => expert_params(&layout),
    };
    let noise = match &args.noise {
        Some(name) => Some(NoiseSpec::new(
            NoiseCategory::parse(name).ok_or_else(|| anyhow::anyhow!("unknown category {name}"))?,
            args.level,
        )),
        None => None,
    };

    println!(
        "task {} (chain length {}):",
        task.task_id,
        task.chain_length()
    );
    for (slot, value) in &task.goal_slots {
        println!("  goal slot {slot} = {value}");
    }
    println!("  requested tools: {:?}", task.requested_tools());
    if let Some(spec) = noise {
        println!("  noise: {} level {}", spec.category.name(), spec.level);
    }

    let trajectory = run_episode(
        &policy,
        &layout,
        &domain,
        &task,
        &db,
        noise,
        task.default_turn_budget(),
        args.temperature,
        args.episode_seed,
    )?;

    println!(
        "\n{:>4}  {:<46} {:>10}  observation",
        "step", "action", "candidates"
    );
    for (i, step) in trajectory.steps.iter().enumerate() {
        let action = &step.candidates[step.chosen].0;
        let obs = match &step.observation {
            noisyrl::env::Observation::UserMessage { claims, text } => {
                format!("user: {} claims, {} asides", claims.len(), text.len())
            }
            noisyrl::env::Observation::ToolResult(r) => match &r.status {
                noisyrl::env::ToolStatus::Ok => format!("{} ok", r.tool),
                noisyrl::env::ToolStatus::Error(code) => format!("{} error: {code}", r.tool),
            },
            noisyrl::env::Observation::Silence => "·".to_string(),
        };
        println!(
            "{i:>4}  {:<46} {:>10}  {obs}",
            action.to_string(),
            step.candidates.len()
        );
    }
    println!(
        "\nreward = {}  (length {}, {} tool calls, {} clarifications)",
        trajectory.reward,
        trajectory.len(),
        trajectory.tool_calls,
        trajectory.ask_turns
    );
    Ok(())
}

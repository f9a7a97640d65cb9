//! Metrics walkthrough: evaluates the reference policy and a random-init
//! policy on the same task set, under the ideal setting and every noise
//! category, and prints the comparison table.
//!
//!   cargo run --release --example evaluate_policy

use anyhow::Result;

use noisyrl::exp::{run_eval, DomainSection, ExperimentConfig, TasksSection, Variant};
use noisyrl::metrics::render_report_table;
use noisyrl::policy::{expert_params, FeatureLayout, PolicyParams};
use noisyrl::seeding;

fn main() -> Result<()> {
    let config = ExperimentConfig {
        variant: Variant::HybridCurriculum,
        seed: 7,
        output_dir: "/tmp/noisyrl-eval-demo".into(),
        domain: DomainSection {
            tools: 9,
            entity_kinds: 3,
            links: 2,
        },
        tasks: TasksSection {
            eval: 24,
            ..Default::default()
        },
        rollout: Default::default(),
        optimizer: Default::default(),
        objective: Default::default(),
        scheduler: Default::default(),
        eval: Default::default(),
        init_scale: 0.05,
    };

    let domain = noisyrl::env::build_domain(config.domain.into(), config.seed)?;
    let layout = FeatureLayout::for_domain(&domain);

    let expert = expert_params(&layout);
    let random = PolicyParams::random_init(
        layout.dim(),
        config.init_scale,
        &mut seeding::rng_for(config.seed, &[seeding::tags::INIT]),
    );

    let expert_eval = run_eval(&config, &expert, 99)?;
    let random_eval = run_eval(&config, &random, 99)?;

    println!(
        "{}",
        render_report_table(&[
            ("reference".to_string(), &expert_eval.report),
            ("random-init".to_string(), &random_eval.report),
        ])
    );
    for (name, report) in [
        ("reference", &expert_eval.report),
        ("random-init", &random_eval.report),
    ] {
        println!("{name} per-category noisy Avg@{}:", report.k);
        for (cat, pair) in &report.noisy_by_category {
            println!("  {cat:<16} {:6.2}", pair.avg_at_k);
        }
        if let Some(interaction) = &report.interaction {
            for (setting, stats) in interaction {
                println!(
                    "  [{setting}] {:.1} tool calls, {:.1} clarifications, length {:.1}",
                    stats.mean_tool_calls, stats.mean_ask_turns, stats.mean_episode_length
                );
            }
        }
        println!();
    }
    Ok(())
}

//! Domain and task synthesis: builds a domain graph, samples verifiable
//! tasks, checks them against the solvability oracle, and writes a fixture.
//!
//!   cargo run --release --example generate_domain
//!   cargo run --release --example generate_domain -- --tools 12 --kinds 4 --links 3 --out fixture.json

use anyhow::Result;
use clap::Parser;

use noisyrl::env::{
    build_domain, save_fixture, synthesize_task, DomainSize, Fixture, TaskEntry,
    FIXTURE_SCHEMA_VERSION,
};
use noisyrl::oracle::oracle_solve;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 9)]
    tools: usize,
    #[arg(long, default_value_t = 3)]
    kinds: usize,
    #[arg(long, default_value_t = 2)]
    links: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    tasks: usize,
    /// Optional fixture output path.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let domain = build_domain(
        DomainSize {
            tools: args.tools,
            entity_kinds: args.kinds,
            links: args.links,
        },
        args.seed,
    )?;

    println!(
        "domain: {} tools over {} entity kinds",
        domain.tools.len(),
        domain.entity_schemas.len()
    );
    for tool in &domain.tools {
        let args_desc: Vec<String> = tool
            .arg_slots
            .iter()
            .map(|(name, key)| format!("{name}: {key}"))
            .collect();
        println!(
            "  {:<16} ({})  -> {:?}{}",
            tool.name,
            args_desc.join(", "),
            tool.result_schema,
            if tool.effect.is_write() {
                "  [write]"
            } else {
                ""
            }
        );
    }
    println!("dependency edges: {}", domain.dependency_edges.len());

    let mut entries = Vec::new();
    for i in 0..args.tasks {
        let chain = 2 + i % 4;
        let (task, db) = synthesize_task(&domain, chain, args.seed + i as u64)?;
        let oracle = oracle_solve(&domain, &task, &db, None, chain + 1, 100_000);
        println!(
            "task {} chain {:?} -> oracle witness {} steps ({} nodes)",
            task.task_id,
            task.requested_tools(),
            oracle.witness.as_ref().map(|w| w.len()).unwrap_or(0),
            oracle.explored,
        );
        assert!(oracle.solved, "every synthesized task must be solvable");
        entries.push(TaskEntry {
            task,
            initial_db: db,
        });
    }

    if let Some(out) = args.out {
        let fixture = Fixture {
            schema_version: FIXTURE_SCHEMA_VERSION,
            domain,
            tasks: entries,
        };
        save_fixture(&out, &fixture)?;
        println!("fixture written to {}", out.display());
    }
    Ok(())
}

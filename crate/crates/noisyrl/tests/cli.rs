//! CLI surface tests: subcommands, file formats, exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisyrl"))
}

fn write_config(dir: &Path, variant: &str, out: &Path) -> std::path::PathBuf {
    let path = dir.join(format!("{variant}.toml"));
    std::fs::write(
        &path,
        format!(
            r#"
variant = "{variant}"
seed = 5
output_dir = "{}"

[domain]
tools = 9
entity_kinds = 3
links = 2

[tasks]
train = 16
eval = 8
probe = 4
chain_min = 2
chain_max = 3

[rollout]
n_per_task = 8
batch_size = 2
iterations = 10

[eval]
k = 2
noise_level = 1
"#,
            out.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let config = write_config(dir.path(), "hybrid-curriculum", &run_dir);

    // gen-domain
    let fixture = dir.path().join("fixture.json");
    let out = bin()
        .args(["gen-domain", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&fixture)
        .args(["--tasks", "3"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fixture).unwrap()).unwrap();
    assert_eq!(parsed["schema_version"], 1);
    assert!(parsed["domain"].is_object());
    assert_eq!(parsed["tasks"].as_array().unwrap().len(), 3);

    // inject: solvable perturbation exits 0 and prints a verdict
    let out = bin()
        .args(["inject", "--fixture"])
        .arg(&fixture)
        .args(["--category", "ambiguous", "--level", "1", "--seed", "3"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("verdict: solvable"), "{stdout}");

    // train
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run_dir.join("manifest.json").exists());
    assert!(run_dir.join("trajectories.jsonl").exists());
    assert!(run_dir.join("checkpoint_final.json").exists());

    // every manifest artifact exists and matches its recorded hash
    let manifest = noisyrl::exp::RunManifest::load(&run_dir).unwrap();
    assert!(manifest.verify_artifacts().unwrap().is_empty());
    assert!(manifest.final_checkpoint.is_some());

    // curriculum checkpoints carry the scheduler state
    let ckpt =
        noisyrl::policy::load_checkpoint(&run_dir.join("checkpoint_final.json"), None).unwrap();
    assert!(
        ckpt.scheduler.is_some(),
        "curriculum checkpoint lacks scheduler state"
    );

    // eval
    let out = bin()
        .args(["eval", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoint_final.json"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run_dir.join("eval_report.json").exists());

    // report
    let report_dir = dir.path().join("report");
    let out = bin()
        .args(["report", "--run"])
        .arg(&run_dir)
        .arg("--out")
        .arg(&report_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(report_dir.join("report.json").exists());
    assert!(report_dir.join("report.txt").exists());
    assert!(report_dir.join("dynamics.svg").exists());
    assert!(report_dir.join("curriculum.svg").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // invariant violation: rho_max above the cap
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        r#"
variant = "grpo"
seed = 1
output_dir = "x"

[domain]
tools = 3
entity_kinds = 1
links = 0

[scheduler]
rho_max = 0.9
"#,
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.5"));

    // unknown key named in the error
    let typo = dir.path().join("typo.toml");
    std::fs::write(
        &typo,
        r#"
variant = "grpo"
seed = 1
output_dir = "x"
learning_rae = 0.3

[domain]
tools = 3
entity_kinds = 1
links = 0
"#,
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&typo)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rae"));
}

#[test]
fn unsolvable_injection_exits_three() {
    // hand-built hostile fixture: a goal slot is neither revealed nor
    // answerable, so even the identity perturbation leaves it unsolvable
    let dir = tempfile::tempdir().unwrap();
    let domain = noisyrl::env::build_domain(
        noisyrl::env::DomainSize {
            tools: 9,
            entity_kinds: 3,
            links: 2,
        },
        7,
    )
    .unwrap();
    let (mut task, db) = noisyrl::env::synthesize_task(&domain, 3, 1).unwrap();
    let (slot, _) = task.goal_slots.iter().next().unwrap();
    let slot = slot.clone();
    for turn in &mut task.interaction_script.turns {
        turn.segments.retain(
            |seg| !matches!(seg, noisyrl::env::ScriptSegment::Reveal { slot: s, .. } if *s == slot),
        );
    }
    task.interaction_script.clarification_table.remove(&slot);
    let fixture = noisyrl::env::Fixture {
        schema_version: noisyrl::env::FIXTURE_SCHEMA_VERSION,
        domain,
        tasks: vec![noisyrl::env::TaskEntry {
            task,
            initial_db: db,
        }],
    };
    let path = dir.path().join("hostile.json");
    noisyrl::env::save_fixture(&path, &fixture).unwrap();

    let out = bin()
        .args(["inject", "--fixture"])
        .arg(&path)
        .args(["--category", "redundant", "--level", "0", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("UNSOLVABLE"));
}

#[test]
fn aborted_runs_leave_an_inspectable_manifest() {
    // chain_min 4 is unreachable in a single-kind domain: setup aborts, but
    // the manifest still lands with the failure recorded
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let config = dir.path().join("cfg.toml");
    std::fs::write(
        &config,
        format!(
            r#"
variant = "grpo"
seed = 1
output_dir = "{}"

[domain]
tools = 3
entity_kinds = 1
links = 0

[tasks]
train = 4
eval = 4
probe = 4
chain_min = 4
chain_max = 5
"#,
            run_dir.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "runtime abort exits 2");
    let manifest = noisyrl::exp::RunManifest::load(&run_dir).unwrap();
    let raw = serde_json::to_string(&manifest).unwrap();
    assert!(raw.contains("aborted"), "{raw}");
    assert_eq!(manifest.iterations_completed, 0);
}

#[test]
fn baseline_variants_never_emit_noisy_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let config = write_config(dir.path(), "gspo", &run_dir);
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // audit the trajectory log: every record must be clean
    let log = std::fs::read_to_string(run_dir.join("trajectories.jsonl")).unwrap();
    let mut lines = 0;
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(
            v["noise_tag"].is_null(),
            "baseline produced a noisy trajectory"
        );
        lines += 1;
    }
    assert!(lines > 0);
}

#[test]
fn output_root_env_var_prefixes_relative_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("cfg.toml");
    std::fs::write(
        &config_path,
        r#"
variant = "grpo"
seed = 2
output_dir = "nested/run"

[domain]
tools = 6
entity_kinds = 2
links = 1

[tasks]
train = 8
eval = 4
probe = 4
chain_min = 2
chain_max = 3

[rollout]
n_per_task = 4
batch_size = 2
iterations = 4
"#,
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&config_path)
        .env("NOISYRL_OUT", dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("nested/run/manifest.json").exists());
}

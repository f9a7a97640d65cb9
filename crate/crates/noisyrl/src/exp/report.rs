//! Report generation: comparison tables across runs, training-dynamics
//! series, and SVG line plots, all regenerated deterministically from the
//! run logs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exp::manifest::RunManifest;
use crate::exp::train::{IterationLog, SchedulerLog};
use crate::metrics::{render_report_table, MetricsReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse failure in {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub variant: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_eval: Option<MetricsReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportFiles {
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub dynamics_svg: PathBuf,
    pub curriculum_svg: Option<PathBuf>,
}

/// Builds the comparison report for one or more runs into `out_dir`.
pub fn run_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ReportFiles, ReportError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut missing = Vec::new();
    let mut summaries = Vec::new();
    let mut dynamics: Vec<(String, Vec<IterationLog>)> = Vec::new();
    let mut schedules: Vec<(String, Vec<SchedulerLog>)> = Vec::new();

    for dir in run_dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        let manifest = match RunManifest::load(dir) {
            Ok(m) => m,
            Err(_) => {
                missing.push(dir.join("manifest.json").display().to_string());
                continue;
            }
        };
        let diag_path = dir.join("diagnostics.jsonl");
        let iteration_logs: Vec<IterationLog> = match read_jsonl(&diag_path) {
            Ok(lines) => lines,
            Err(_) => {
                missing.push(diag_path.display().to_string());
                continue;
            }
        };
        let scheduler_logs: Vec<SchedulerLog> =
            read_jsonl(&dir.join("scheduler.jsonl")).unwrap_or_default();
        let final_eval: Option<MetricsReport> =
            std::fs::read_to_string(dir.join("eval_report.json"))
                .ok()
                .and_then(|raw| serde_json::from_str(&raw).ok());

        summaries.push(RunSummary {
            name: name.clone(),
            variant: manifest.variant.clone(),
            seed: manifest.seed,
            iterations: manifest.iterations_completed,
            final_eval,
        });
        dynamics.push((name.clone(), iteration_logs));
        if !scheduler_logs.is_empty() {
            schedules.push((name, scheduler_logs));
        }
    }
    if !missing.is_empty() {
        return Err(ReportError::MissingArtifacts(missing));
    }

    // report.json
    let report_json = out_dir.join("report.json");
    let payload = serde_json::json!({
        "runs": summaries,
        "dynamics": dynamics
            .iter()
            .map(|(name, logs)| {
                serde_json::json!({
                    "name": name,
                    "iterations": logs.iter().map(|l| l.iteration).collect::<Vec<_>>(),
                    "clean_success": logs.iter().map(|l| l.clean_mean_reward).collect::<Vec<_>>(),
                    "noisy_success": logs.iter().map(|l| l.noisy_mean_reward).collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    });
    std::fs::write(
        &report_json,
        serde_json::to_string_pretty(&payload).unwrap(),
    )
    .map_err(|source| ReportError::Io {
        path: report_json.display().to_string(),
        source,
    })?;

    // report.txt
    let report_txt = out_dir.join("report.txt");
    let with_eval: Vec<(String, &MetricsReport)> = summaries
        .iter()
        .filter_map(|s| s.final_eval.as_ref().map(|r| (s.name.clone(), r)))
        .collect();
    let table = if with_eval.is_empty() {
        "no evaluation reports found in the given runs\n".to_string()
    } else {
        render_report_table(&with_eval)
    };
    std::fs::write(&report_txt, table).map_err(|source| ReportError::Io {
        path: report_txt.display().to_string(),
        source,
    })?;

    // dynamics plot: clean (solid) and noisy (dashed) success per iteration
    let dynamics_svg = out_dir.join("dynamics.svg");
    let mut series = Vec::new();
    for (i, (name, logs)) in dynamics.iter().enumerate() {
        let clean: Vec<(f64, f64)> = logs
            .iter()
            .map(|l| (l.iteration as f64, l.clean_mean_reward))
            .collect();
        series.push(SvgSeries {
            label: format!("{name} clean"),
            points: clean,
            color: PALETTE[i % PALETTE.len()].to_string(),
            dashed: false,
        });
        let noisy: Vec<(f64, f64)> = logs
            .iter()
            .filter_map(|l| l.noisy_mean_reward.map(|m| (l.iteration as f64, m)))
            .collect();
        if !noisy.is_empty() {
            series.push(SvgSeries {
                label: format!("{name} noisy"),
                points: noisy,
                color: PALETTE[i % PALETTE.len()].to_string(),
                dashed: true,
            });
        }
    }
    write_svg(
        &dynamics_svg,
        "training dynamics: success rate per iteration",
        "iteration",
        "success rate",
        &series,
        Some((0.0, 1.0)),
    )
    .map_err(|source| ReportError::Io {
        path: dynamics_svg.display().to_string(),
        source,
    })?;

    // curriculum plot: total noisy fraction and mean level per window
    let curriculum_svg = if schedules.is_empty() {
        None
    } else {
        let path = out_dir.join("curriculum.svg");
        let mut series = Vec::new();
        for (i, (name, logs)) in schedules.iter().enumerate() {
            series.push(SvgSeries {
                label: format!("{name} total fraction"),
                points: logs
                    .iter()
                    .map(|l| (l.iteration as f64, l.total_fraction))
                    .collect(),
                color: PALETTE[i % PALETTE.len()].to_string(),
                dashed: false,
            });
            series.push(SvgSeries {
                label: format!("{name} mean level / 10"),
                points: logs
                    .iter()
                    .map(|l| {
                        let mean = l.levels.values().map(|&v| v as f64).sum::<f64>()
                            / l.levels.len().max(1) as f64;
                        (l.iteration as f64, mean / 10.0)
                    })
                    .collect(),
                color: PALETTE[(i + 3) % PALETTE.len()].to_string(),
                dashed: true,
            });
        }
        write_svg(
            &path,
            "noise curriculum: fraction and difficulty",
            "iteration",
            "fraction / scaled level",
            &series,
            None,
        )
        .map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Some(path)
    };

    Ok(ReportFiles {
        report_json,
        report_txt,
        dynamics_svg,
        curriculum_svg,
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| ReportError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

const PALETTE: [&str; 6] = [
    "#1f6feb", "#d73a49", "#1a7f37", "#8250df", "#bf8700", "#57606a",
];

struct SvgSeries {
    label: String,
    points: Vec<(f64, f64)>,
    color: String,
    dashed: bool,
}

/// Minimal deterministic SVG line plot.
fn write_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[SvgSeries],
    y_range: Option<(f64, f64)>,
) -> std::io::Result<()> {
    const W: f64 = 800.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;

    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    let (x_min, x_max) = bounds(all.iter().map(|p| p.0), 0.0, 1.0);
    let (y_min, y_max) = match y_range {
        Some(r) => r,
        None => bounds(all.iter().map(|p| p.1), 0.0, 1.0),
    };
    let sx = |x: f64| M + (x - x_min) / (x_max - x_min).max(1e-9) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y_min) / (y_max - y_min).max(1e-9) * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{:.1}\" stroke=\"#333\"/>\n",
        H - M
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n",
        W / 2.0,
        H - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{y_label}</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for tick in 0..=4 {
        let v = y_min + (y_max - y_min) * tick as f64 / 4.0;
        let y = sy(v);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>\n",
            M - 6.0,
            y + 4.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{M}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            W - M
        ));
    }
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let dash = if s.dashed {
            " stroke-dasharray=\"6,4\""
        } else {
            ""
        };
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        let ly = M + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\"{dash}/>\n",
            W - M - 170.0,
            W - M - 150.0,
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            W - M - 144.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}

fn bounds(values: impl Iterator<Item = f64>, default_min: f64, default_max: f64) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() || !max.is_finite() {
        (default_min, default_max)
    } else if (max - min).abs() < 1e-12 {
        (min - 0.5, max + 0.5)
    } else {
        (min, max)
    }
}

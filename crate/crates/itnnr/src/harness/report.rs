//! Report rendering: result JSON, summary CSV, markdown tables, and the
//! per-anchor-rank CSV behind the rank-decay plots.
//!
//! All writers stage into a temporary sibling and rename, so a failed write
//! leaves no partial files. Numbers in CSV carry 13 significant digits and
//! re-parse to the same values well past the 12-digit contract.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{ExperimentResult, Mode};

/// Output format selector for the report subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" => Ok(ReportFormat::Md),
            other => Err(Error::Argument(format!(
                "unknown format '{other}', expected json, csv, or md"
            ))),
        }
    }
}

fn require_nonempty(results: &[ExperimentResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Argument("no results to report".into()));
    }
    Ok(())
}

/// Full-fidelity JSON: a single object for one result, an array otherwise.
pub fn render_json(results: &[ExperimentResult]) -> Result<String> {
    require_nonempty(results)?;
    let mut text = if results.len() == 1 {
        serde_json::to_string_pretty(&results[0])?
    } else {
        serde_json::to_string_pretty(results)?
    };
    text.push('\n');
    Ok(text)
}

/// One row per experiment and method.
pub fn render_summary_csv(results: &[ExperimentResult]) -> Result<String> {
    require_nonempty(results)?;
    let mut out = String::from(
        "experiment_id,problem,mode,method,rmse_mean,rmse_std,reduction_vs_knn\n",
    );
    for result in results {
        for (name, summary) in &result.methods {
            out.push_str(&format!(
                "{},{},{},{},{:.12e},{:.12e},{:.12e}\n",
                result.config.problem_id,
                result.problem_name,
                result.config.mode,
                name,
                summary.rmse_mean,
                summary.rmse_std,
                result.reduction_vs_knn,
            ));
        }
    }
    Ok(out)
}

/// Per-anchor-rank rows for the methods that have a rank breakdown.
pub fn render_plot_csv(results: &[ExperimentResult]) -> Result<String> {
    require_nonempty(results)?;
    let mut out = String::from("experiment_id,method,anchor_rank,rmse_mean,rmse_std\n");
    for result in results {
        for (name, summary) in &result.methods {
            let Some(ranks) = &summary.per_rank else {
                continue;
            };
            for stat in ranks {
                out.push_str(&format!(
                    "{},{},{},{:.12e},{:.12e}\n",
                    result.config.problem_id,
                    name,
                    stat.anchor_rank,
                    stat.rmse_mean,
                    stat.rmse_std,
                ));
            }
        }
    }
    Ok(out)
}

fn cell(result: &ExperimentResult, method: &str) -> String {
    match result.methods.get(method) {
        Some(m) => format!("{:.4} ± {:.4}", m.rmse_mean, m.rmse_std),
        None => "-".to_string(),
    }
}

fn markdown_table(results: &[&ExperimentResult], mode: Mode) -> String {
    let mut out = String::new();
    out.push_str(&format!("## {} mode\n\n", capitalize(mode.as_str())));
    match mode {
        Mode::Exact => {
            out.push_str("| Experiment | kNN | NN | ITNNR 1st anchor | Best ITNNR | Reduction vs kNN |\n");
            out.push_str("|---|---|---|---|---|---|\n");
        }
        Mode::Noisy => {
            out.push_str("| Experiment | kNN | NN | ITNNR 1st anchor | Best ITNNR | Best ITNNR (exact check) | Reduction vs kNN |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
        }
    }
    for result in results {
        let mut row = format!(
            "| {} {} | {} | {} | {} | {} |",
            result.config.problem_id,
            result.problem_name,
            cell(result, "knn"),
            cell(result, "direct_nn"),
            cell(result, "itnnr"),
            cell(result, "itnnr_best"),
        );
        if mode == Mode::Noisy {
            row.push_str(&format!(" {} |", cell(result, "itnnr_best_exact_check")));
        }
        row.push_str(&format!(" {:.1}% |\n", result.reduction_vs_knn));
        out.push_str(&row);
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Markdown summary: one table per mode present in the results.
pub fn render_markdown(results: &[ExperimentResult]) -> Result<String> {
    require_nonempty(results)?;
    let mut out = String::from("# Inversion results\n\n");
    for mode in [Mode::Exact, Mode::Noisy] {
        let of_mode: Vec<&ExperimentResult> = results
            .iter()
            .filter(|r| r.config.mode == mode)
            .collect();
        if of_mode.is_empty() {
            continue;
        }
        out.push_str(&markdown_table(&of_mode, mode));
        out.push('\n');
    }
    Ok(out)
}

pub fn render(results: &[ExperimentResult], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => render_json(results),
        ReportFormat::Csv => render_summary_csv(results),
        ReportFormat::Md => render_markdown(results),
    }
}

/// Writes the full report set next to `json_path`: the JSON itself, a
/// summary CSV, a markdown table, and the rank-curve CSV. Returns the paths
/// written.
pub fn write_report_files(
    results: &[ExperimentResult],
    json_path: &Path,
) -> Result<Vec<PathBuf>> {
    require_nonempty(results)?;
    let stem = json_path
        .file_stem()
        .ok_or_else(|| Error::Argument(format!("bad output path {}", json_path.display())))?
        .to_string_lossy()
        .to_string();
    let csv_path = json_path.with_file_name(format!("{stem}.csv"));
    let md_path = json_path.with_file_name(format!("{stem}.md"));
    let ranks_path = json_path.with_file_name(format!("{stem}_ranks.csv"));
    super::dataset_io::write_atomic(json_path, &render_json(results)?)?;
    super::dataset_io::write_atomic(&csv_path, &render_summary_csv(results)?)?;
    super::dataset_io::write_atomic(&md_path, &render_markdown(results)?)?;
    super::dataset_io::write_atomic(&ranks_path, &render_plot_csv(results)?)?;
    Ok(vec![
        json_path.to_path_buf(),
        csv_path,
        md_path,
        ranks_path,
    ])
}

/// Reads a result file holding either one record or an array of them.
pub fn load_results(path: &Path) -> Result<Vec<ExperimentResult>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

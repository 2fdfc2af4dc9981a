//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad arguments or configuration, 2 runtime
//! failure (I/O, divergence).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::report::{load_results, render, write_report_files, ReportFormat};
use crate::harness::{dataset_io, run_experiment, ExperimentConfig, Mode};
use crate::inversion::{invert, AnchorSet};
use crate::nn::load_model;
use crate::problems::{add_noise, sample_dataset, ProblemSpec};

#[derive(Parser)]
#[command(
    name = "itnnr",
    version,
    about = "Invert non-injective functions with anchored twin-network regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark experiments
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Invert one output vector with a trained twin network
    Invert {
        /// Twin network file
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV whose training split provides the anchors
        #[arg(long)]
        anchors: PathBuf,
        /// Query output, comma-separated: "v1,v2,.."
        #[arg(long)]
        y: String,
        /// Anchors per query
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Generate benchmark datasets
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Re-render stored results
    Report {
        /// Result JSON file (one record or an array)
        #[arg(long = "in")]
        input: PathBuf,
        /// Output format: md, csv, or json
        #[arg(long, default_value = "md")]
        format: String,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run one experiment
    Run {
        /// Problem id, 1..9
        #[arg(long)]
        id: u8,
        /// exact or noisy
        #[arg(long)]
        mode: String,
        /// Training seeds to aggregate over
        #[arg(long)]
        seeds: Option<usize>,
        /// Anchors per query
        #[arg(long)]
        k: Option<usize>,
        /// Result JSON path; CSV/markdown siblings are written alongside
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON file with ExperimentConfig fields; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run all nine experiments in one mode
    All {
        /// exact or noisy
        #[arg(long)]
        mode: String,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Sample one problem's dataset and write it to CSV
    Gen {
        /// Problem id, 1..9
        #[arg(long)]
        id: u8,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output CSV path; a .meta sidecar is written alongside
        #[arg(long)]
        out: PathBuf,
        /// Multiplicative output noise level (0 = clean)
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn resolve_config(
    id: u8,
    mode: Mode,
    seeds: Option<usize>,
    k: Option<usize>,
    config_file: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut config = match config_file {
        Some(path) => {
            let mut from_file = load_config_file(path)?;
            from_file.problem_id = id;
            from_file.mode = mode;
            from_file
        }
        None => ExperimentConfig::new(id, mode),
    };
    if let Some(n) = seeds {
        config.n_seeds = n;
    }
    if let Some(k) = k {
        config.k_anchors = k;
    }
    Ok(config)
}

fn default_out(name: &str) -> Result<PathBuf> {
    let dir = PathBuf::from("results");
    std::fs::create_dir_all(&dir)?;
    Ok(dir.join(name))
}

fn run_one(
    id: u8,
    mode_text: &str,
    seeds: Option<usize>,
    k: Option<usize>,
    out: Option<PathBuf>,
    config_file: Option<&Path>,
) -> Result<()> {
    let mode: Mode = mode_text.parse()?;
    let config = resolve_config(id, mode, seeds, k, config_file)?;
    let result = run_experiment(&config)?;
    let results = vec![result];
    let out = match out {
        Some(path) => path,
        None => default_out(&format!("exp{id}_{mode}.json"))?,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let written = write_report_files(&results, &out)?;
    print!("{}", render(&results, ReportFormat::Md)?);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_all(
    mode_text: &str,
    seeds: Option<usize>,
    k: Option<usize>,
    out: Option<PathBuf>,
    config_file: Option<&Path>,
) -> Result<()> {
    let mode: Mode = mode_text.parse()?;
    let mut results = Vec::with_capacity(9);
    for id in 1..=9 {
        let config = resolve_config(id, mode, seeds, k, config_file)?;
        eprintln!("running experiment {id} ({mode} mode)");
        results.push(run_experiment(&config)?);
    }
    let out = match out {
        Some(path) => path,
        None => default_out(&format!("all_{mode}.json"))?,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let written = write_report_files(&results, &out)?;
    print!("{}", render(&results, ReportFormat::Md)?);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_y(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad y component '{part}'")))
        })
        .collect()
}

fn run_invert(model_path: &Path, anchors_path: &Path, y_text: &str, k: usize) -> Result<()> {
    let model = load_model(model_path)?;
    let stored = dataset_io::load_dataset(anchors_path)?;
    let spec = ProblemSpec::by_id(stored.problem_id)?;
    let y_new = parse_y(y_text)?;
    if y_new.len() != spec.output_dim {
        return Err(Error::Argument(format!(
            "y has {} components but problem {} outputs have dimension {}",
            y_new.len(),
            spec.id,
            spec.output_dim
        )));
    }
    let anchors = AnchorSet::from_dataset(&stored.train)?;
    let result = invert(&model, &anchors, |x| spec.forward_total(x), k, &y_new)?;
    println!("{}", serde_json::to_string_pretty(&result.candidates)?);
    Ok(())
}

fn run_dataset_gen(id: u8, seed: u64, out: &Path, noise: f64) -> Result<()> {
    let spec = ProblemSpec::by_id(id)?;
    let (mut train, mut val, mut test) = sample_dataset(&spec, seed)?;
    if noise > 0.0 {
        train.y = add_noise(&train.y, noise, seed + 1001)?;
        val.y = add_noise(&val.y, noise, seed + 1002)?;
        test.y = add_noise(&test.y, noise, seed + 1003)?;
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let stored = dataset_io::StoredDataset {
        problem_id: id,
        seed,
        noise_level: noise,
        train,
        val,
        test,
    };
    dataset_io::save_dataset(out, &stored)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_report(input: &Path, format_text: &str) -> Result<()> {
    let format: ReportFormat = format_text.parse()?;
    let results = load_results(input)?;
    print!("{}", render(&results, format)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Experiment { action } => match action {
            ExperimentAction::Run {
                id,
                mode,
                seeds,
                k,
                out,
                config,
            } => run_one(id, &mode, seeds, k, out, config.as_deref()),
            ExperimentAction::All {
                mode,
                seeds,
                k,
                out,
                config,
            } => run_all(&mode, seeds, k, out, config.as_deref()),
        },
        Command::Invert {
            model,
            anchors,
            y,
            k,
        } => run_invert(&model, &anchors, &y, k),
        Command::Dataset { action } => match action {
            DatasetAction::Gen {
                id,
                seed,
                out,
                noise,
            } => run_dataset_gen(id, seed, &out, noise),
        },
        Command::Report { input, format } => run_report(&input, &format),
    }
}

/// Parses and runs one invocation, returning the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help goes to stdout, problems to stderr, per clap convention.
            err.print().expect("stderr is writable");
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_init, save_model};

    fn run(args: &[&str]) -> i32 {
        cli_main(args.iter().copied())
    }

    #[test]
    fn unknown_flags_exit_one() {
        assert_eq!(run(&["itnnr", "--frobnicate"]), 1);
        assert_eq!(run(&["itnnr", "experiment", "run", "--id", "1"]), 1);
        assert_eq!(run(&["itnnr", "nonsense"]), 1);
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(&["itnnr", "--help"]), 0);
        assert_eq!(run(&["itnnr", "--version"]), 0);
        assert_eq!(run(&["itnnr", "experiment", "--help"]), 0);
    }

    #[test]
    fn bad_mode_and_bad_id_exit_one() {
        assert_eq!(
            run(&["itnnr", "experiment", "run", "--id", "1", "--mode", "fuzzy"]),
            1
        );
        assert_eq!(
            run(&["itnnr", "experiment", "run", "--id", "12", "--mode", "exact"]),
            1
        );
    }

    #[test]
    fn dataset_gen_writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("exp1.csv");
        let code = run(&[
            "itnnr",
            "dataset",
            "gen",
            "--id",
            "1",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let stored = dataset_io::load_dataset(&out).unwrap();
        assert_eq!(stored.problem_id, 1);
        assert_eq!(stored.train.x.nrows(), 300);
        assert_eq!(stored.val.x.nrows(), 100);
        assert_eq!(stored.test.x.nrows(), 100);
    }

    #[test]
    fn invert_rejects_mismatched_y_width() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("exp1.csv");
        assert_eq!(
            run(&[
                "itnnr",
                "dataset",
                "gen",
                "--id",
                "1",
                "--out",
                data_path.to_str().unwrap(),
            ]),
            0
        );
        let model_path = dir.path().join("twin.txt");
        let model = mlp_init(&[3, 4, 1], 0).unwrap();
        save_model(&model, &model_path).unwrap();
        let code = run(&[
            "itnnr",
            "invert",
            "--model",
            model_path.to_str().unwrap(),
            "--anchors",
            data_path.to_str().unwrap(),
            "--y",
            "0.1,0.2",
        ]);
        assert_eq!(code, 1);
        let ok = run(&[
            "itnnr",
            "invert",
            "--model",
            model_path.to_str().unwrap(),
            "--anchors",
            data_path.to_str().unwrap(),
            "--y",
            "0.1",
        ]);
        assert_eq!(ok, 0);
    }

    #[test]
    fn report_on_missing_file_exits_two() {
        assert_eq!(
            run(&["itnnr", "report", "--in", "/nonexistent/r.json", "--format", "md"]),
            2
        );
    }

    #[test]
    fn tiny_experiment_run_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("tiny.json");
        std::fs::write(
            &config_path,
            r#"{"n_seeds": 1, "hidden": [6], "generator_batches": 3,
                "train": {"max_epochs": 3, "lr_patience": 1, "stop_patience": 2}}"#,
        )
        .unwrap();
        let out = dir.path().join("exp1.json");
        let code = run(&[
            "itnnr",
            "experiment",
            "run",
            "--id",
            "1",
            "--mode",
            "exact",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(out.exists());
        assert!(dir.path().join("exp1.md").exists());
        assert!(dir.path().join("exp1.csv").exists());
        assert!(dir.path().join("exp1_ranks.csv").exists());
        let loaded = load_results(&out).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].config.n_seeds, 1);
        assert_eq!(loaded[0].config.hidden, vec![6]);
    }
}

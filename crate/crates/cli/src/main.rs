use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use mazerl_cli::{aggregate, evaluate_checkpoint, render_svg, run_experiment, DEFAULT_BIN_WIDTH};
use mazerl_core::env::{parse_maze, shortest_path_length};
use mazerl_core::trainer::TrainConfig;

#[derive(Parser)]
#[command(name = "mazerl", version, about = "Curiosity-driven maze agents: train, plot, inspect, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one or more seeded runs from a JSON config.
    Train {
        /// Flat JSON config file mirroring TrainConfig.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; run i goes to <out>/run<i>.
        #[arg(long)]
        out: PathBuf,
        /// Number of runs; run i trains with seed config.seed + i.
        #[arg(long, default_value_t = 1)]
        runs: u32,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Execute the runs on parallel threads instead of back to back.
        #[arg(long)]
        parallel_runs: bool,
    },
    /// Aggregate a metric across runs and write an SVG learning curve.
    Plot {
        /// Metrics column to plot (for example episode_extrinsic_return).
        #[arg(long)]
        metric: String,
        /// Run directories (metrics.csv inside), metrics.csv files, or
        /// experiment roots (run*/ subdirectories; one series per root).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Bin width in global environment steps.
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin: u64,
    },
    /// Print dimensions, start/goal, shortest path and optimal return.
    MazeInfo {
        /// Maze text file.
        file: PathBuf,
    },
    /// Play greedy episodes from a checkpoint and summarize them.
    Evaluate {
        /// Checkpoint manifest (.json) written during training.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Maze text file to play on.
        #[arg(long)]
        maze: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Train { config, out, runs, force, parallel_runs } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let cfg: TrainConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", config.display()))?;
            let artifacts = run_experiment(&cfg, runs, &out, force, parallel_runs)?;
            for a in &artifacts {
                println!("{}: {} env steps, metrics at {}", a.run_dir.display(), a.env_steps, a.metrics_path.display());
            }
            println!("{} run(s) finished under {}", artifacts.len(), out.display());
        }
        Cmd::Plot { metric, runs, out, bin } => {
            let series = collect_series(&runs, &metric, bin)?;
            let svg = render_svg(&series, "environment steps", &metric)?;
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
        Cmd::MazeInfo { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading maze {}", file.display()))?;
            let maze = parse_maze(&text)?;
            let length = shortest_path_length(&maze)?;
            println!("name: {}", maze.name);
            println!("dimensions: {} rows x {} cols", maze.rows(), maze.cols());
            println!("start: ({}, {})", maze.start.0, maze.start.1);
            println!("goal: ({}, {})", maze.goal.0, maze.goal.1);
            println!("max_steps: {}", maze.max_steps);
            println!("optimal_length: {length}");
            println!("optimal_return: {}", (1000.0 - length as f64) / 1000.0);
        }
        Cmd::Evaluate { checkpoint, maze, episodes } => {
            let summary = evaluate_checkpoint(&checkpoint, &maze, episodes)?;
            println!("episodes: {}", summary.episodes);
            println!("mean_return: {}", summary.mean_return);
            println!("mean_length: {}", summary.mean_length);
            println!("success_rate: {}", summary.success_rate);
        }
    }
    Ok(())
}

/// Turn the --runs paths into labeled series. An experiment root (a directory
/// holding run*/metrics.csv) becomes its own series named after the root;
/// loose run directories and bare .csv files are pooled into one series.
fn collect_series(
    paths: &[PathBuf],
    metric: &str,
    bin: u64,
) -> anyhow::Result<Vec<(String, mazerl_cli::AggregateSeries)>> {
    let mut series: Vec<(String, Vec<PathBuf>)> = Vec::new();
    let mut loose: Vec<PathBuf> = Vec::new();
    for path in paths {
        if path.is_file() {
            loose.push(path.clone());
            continue;
        }
        let direct = path.join("metrics.csv");
        if direct.is_file() {
            loose.push(direct);
            continue;
        }
        let nested = run_metrics_under(path)?;
        if nested.is_empty() {
            bail!(
                "{} has neither metrics.csv nor run*/metrics.csv",
                path.display()
            );
        }
        let label = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        series.push((label, nested));
    }
    if !loose.is_empty() {
        series.push((metric.to_string(), loose));
    }
    series
        .into_iter()
        .map(|(label, files)| Ok((label, aggregate(&files, metric, bin)?)))
        .collect()
}

fn run_metrics_under(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))?;
    for entry in entries {
        let path = entry?.path();
        let metrics = path.join("metrics.csv");
        if path.is_dir() && metrics.is_file() {
            out.push(metrics);
        }
    }
    out.sort();
    Ok(out)
}

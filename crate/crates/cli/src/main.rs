//! Command-line entry point: run experiments from config files, turn the
//! resulting logs into forgetting/transfer tables and summaries, and export
//! plot-ready curve data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use corabench_core::config::{parse_config, ExperimentConfig};
use corabench_core::env;
use corabench_core::harness::{self, RunLog};
use corabench_core::metrics::{
    self, align_curves, boundary_returns_for_log, curve_points, smooth_curve, MetricKind, SemMode,
};
use corabench_core::report::{self, TableFormat};

#[derive(Parser)]
#[command(name = "corabench", version, about = "Continual-RL benchmarking on a procedural gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Forgetting,
    Transfer,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Ansi,
}

impl FormatArg {
    fn to_table_format(self) -> TableFormat {
        match self {
            FormatArg::Markdown => TableFormat::Markdown,
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Ansi => TableFormat::Ansi,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate runs defined by a config file.
    Run {
        config: PathBuf,
        /// Run a single seed value.
        #[arg(long, conflicts_with = "all_seeds")]
        seed: Option<u64>,
        /// Run every seed listed in the config.
        #[arg(long)]
        all_seeds: bool,
        /// Execute seeds as parallel independent runs.
        #[arg(long)]
        parallel: bool,
    },
    /// Parse and validate a config file.
    Validate {
        config: PathBuf,
        /// Render each task's layout as ASCII for a sample context.
        #[arg(long)]
        render: bool,
        /// Context seed index into the train set used with --render.
        #[arg(long, default_value_t = 0)]
        context: u32,
    },
    /// Print summary forgetting/transfer statistics per policy.
    Metrics {
        logdir: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        kind: KindArg,
        /// Divide aggregate SEMs by sqrt(task count) instead of the
        /// aggregated set size.
        #[arg(long)]
        sem_over_tasks: bool,
    },
    /// Render diagnostic tables per policy.
    Tables {
        logdir: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        #[arg(long, value_enum, default_value = "both")]
        kind: KindArg,
        #[arg(long)]
        sem_over_tasks: bool,
    },
    /// Final per-task performance (mean ± SEM across seeds).
    Final { logdir: PathBuf },
    /// Export aligned continual-evaluation curves as CSV.
    Plotdata { logdir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), String> {
    match command {
        Command::Run { config, seed, all_seeds, parallel } => {
            let cfg = load_config(&config)?;
            let seeds: Vec<u64> = if all_seeds {
                cfg.seeds.clone()
            } else {
                vec![seed.unwrap_or(cfg.seeds[0])]
            };
            run_seeds(&cfg, &seeds, parallel)
        }
        Command::Validate { config, render, context } => {
            let cfg = load_config(&config)?;
            println!(
                "ok: {} task(s), {} cycle(s), policy {}, {} seed(s), eval every {} steps",
                cfg.tasks.len(),
                cfg.cycles,
                cfg.policy_name,
                cfg.seeds.len(),
                cfg.eval_interval
            );
            if render {
                render_layouts(&cfg, context)?;
            }
            Ok(())
        }
        Command::Metrics { logdir, kind, sem_over_tasks } => {
            let logs = load_logs(&logdir)?;
            let sem_mode = sem_mode(sem_over_tasks);
            for (policy, group) in metrics::group_by_policy(&logs) {
                metrics::check_consistent(&group).map_err(|e| format!("metric error: {e}"))?;
                let (brs, names) = boundary_sets(&group)?;
                let mut parts = Vec::new();
                for k in kinds(kind) {
                    let s = metrics::summary_stat(k, &brs, &names, sem_mode)
                        .map_err(|e| format!("metric error: {e}"))?;
                    parts.push(format!("{} {:.2} ± {:.2}", k.as_str(), s.mean, s.sem));
                }
                println!("{policy}: {}", parts.join(", "));
            }
            Ok(())
        }
        Command::Tables { logdir, format, kind, sem_over_tasks } => {
            let logs = load_logs(&logdir)?;
            let sem_mode = sem_mode(sem_over_tasks);
            for (policy, group) in metrics::group_by_policy(&logs) {
                metrics::check_consistent(&group).map_err(|e| format!("metric error: {e}"))?;
                let (brs, names) = boundary_sets(&group)?;
                for k in kinds(kind) {
                    let table = metrics::diagnostic_table(k, &brs, &names, sem_mode)
                        .map_err(|e| format!("metric error: {e}"))?;
                    println!("# policy={policy} kind={}", k.as_str());
                    print!("{}", report::render_table(&table, format.to_table_format()));
                    println!();
                }
            }
            Ok(())
        }
        Command::Final { logdir } => {
            let logs = load_logs(&logdir)?;
            for (policy, group) in metrics::group_by_policy(&logs) {
                metrics::check_consistent(&group).map_err(|e| format!("metric error: {e}"))?;
                let w = group[0].header.smoothing_window;
                let rows = metrics::final_performance(&group, w)
                    .map_err(|e| format!("metric error: {e}"))?;
                println!("# policy={policy}");
                println!("| task | split | final return |");
                println!("|---|---|---|");
                for row in rows {
                    println!(
                        "| {} | {} | {} |",
                        row.name,
                        row.split.as_str(),
                        report::format_final_perf(row.mean, row.sem)
                    );
                }
                println!();
            }
            Ok(())
        }
        Command::Plotdata { logdir } => {
            let logs = load_logs(&logdir)?;
            for (policy, group) in metrics::group_by_policy(&logs) {
                metrics::check_consistent(&group).map_err(|e| format!("metric error: {e}"))?;
                let header = &group[0].header;
                let schedule =
                    header.schedule().map_err(|e| format!("metric error: bad header: {e}"))?;
                let mut series = Vec::new();
                for (task, echo) in header.tasks.iter().enumerate() {
                    for split in [env::Split::Train, env::Split::Test] {
                        let smoothed: Vec<Vec<(u64, f64)>> = group
                            .iter()
                            .map(|log| {
                                smooth_curve(
                                    &curve_points(&log.records, task, split),
                                    header.smoothing_window,
                                )
                            })
                            .collect();
                        let refs: Vec<&[(u64, f64)]> =
                            smoothed.iter().map(|c| c.as_slice()).collect();
                        let aligned = align_curves(&refs, header.eval_interval)
                            .map_err(|e| format!("metric error: {e}"))?;
                        series.push((format!("{}_{}", echo.name, split.as_str()), aligned));
                    }
                }
                println!("# policy={policy}");
                print!("{}", report::export_plotdata(&series, Some(&schedule)));
            }
            Ok(())
        }
    }
}

fn sem_mode(strict: bool) -> SemMode {
    if strict {
        SemMode::TaskCount
    } else {
        SemMode::SetSize
    }
}

fn kinds(arg: KindArg) -> Vec<MetricKind> {
    match arg {
        KindArg::Forgetting => vec![MetricKind::Forgetting],
        KindArg::Transfer => vec![MetricKind::Transfer],
        KindArg::Both => vec![MetricKind::Forgetting, MetricKind::Transfer],
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("io error: {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("config error: {e}"))
}

fn boundary_sets(
    group: &[&RunLog],
) -> Result<(Vec<metrics::BoundaryReturns>, Vec<String>), String> {
    let names: Vec<String> = group[0].header.tasks.iter().map(|t| t.name.clone()).collect();
    let mut brs = Vec::with_capacity(group.len());
    for log in group {
        let br = boundary_returns_for_log(log)
            .map_err(|e| format!("metric error: {}: {e}", log.header.run_id))?;
        brs.push(br);
    }
    Ok((brs, names))
}

fn load_logs(dir: &Path) -> Result<Vec<RunLog>, String> {
    let logs =
        harness::load_log_dir(dir).map_err(|e| format!("log error: {e}"))?;
    if logs.is_empty() {
        return Err(format!("metric error: no logs found in {}", dir.display()));
    }
    Ok(logs.into_iter().map(|(_, log)| log).collect())
}

fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], parallel: bool) -> Result<(), String> {
    let run_one = |seed: u64| -> Result<String, String> {
        let log = harness::run_experiment(cfg, seed).map_err(|e| categorize_harness(&e))?;
        let dir = harness::resolve_output_dir(cfg);
        Ok(format!(
            "wrote {} ({} records)",
            dir.join(format!("{}.log", log.header.run_id)).display(),
            log.records.len()
        ))
    };
    if parallel && seeds.len() > 1 {
        let results: Vec<Result<String, String>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                seeds.iter().map(|&seed| scope.spawn(move || run_one(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
        });
        for r in results {
            println!("{}", r?);
        }
    } else {
        for &seed in seeds {
            println!("{}", run_one(seed)?);
        }
    }
    Ok(())
}

fn categorize_harness(e: &harness::HarnessError) -> String {
    match e {
        harness::HarnessError::Env(err) => format!("environment error: {err}"),
        harness::HarnessError::Train(err) => format!("training error: {err}"),
        harness::HarnessError::Schedule(err) => format!("config error: {err}"),
        harness::HarnessError::Io(err) => format!("io error: {err}"),
    }
}

fn render_layouts(cfg: &ExperimentConfig, context_index: u32) -> Result<(), String> {
    for task in &cfg.tasks {
        let seeds = env::train_context_seeds(task.task_id, task.train_context_count);
        let idx = (context_index as usize).min(seeds.len() - 1);
        let ctx = env::Context { seed: seeds[idx], split: env::Split::Train };
        let (state, _) = env::reset(&task.factors, ctx)
            .map_err(|e| format!("environment error: task {}: {e}", task.name))?;
        println!("[task.{} {}] train context {} (seed {})", task.task_id, task.name, idx, ctx.seed);
        print!("{}", env::render_ascii(&state));
        if let Some(variant) = &task.eval_test_variant {
            let (state, _) = env::reset(variant, ctx)
                .map_err(|e| format!("environment error: task {} variant: {e}", task.name))?;
            println!("[task.{} {}] test variant, same context", task.task_id, task.name);
            print!("{}", env::render_ascii(&state));
        }
    }
    Ok(())
}

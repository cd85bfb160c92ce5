use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hwms_core::commands::{cmd_cost_table, cmd_policy_comparison, cmd_run, cmd_validate, CommandError, DocumentPaths};
use hwms_core::resource::AllocationCostParams;
use serde_json::json;

/// Hybrid workflow manager: SLA-driven policies over a simulated grid.
#[derive(Parser)]
#[command(name = "hwms", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the workflow once and write its run record.
    Run {
        #[command(flatten)]
        docs: Docs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    #[command(subcommand)]
    Experiment(Experiment),
    /// Parse and cross-check documents without running.
    Validate {
        #[command(flatten)]
        docs: Docs,
        /// Experiment spec to check as well.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Experiment {
    /// Hourly mean allocation cost of the six best resources.
    CostTable {
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Hours.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        samples_per_hour: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Completion time of each policy-set config over seeded replicates.
    PolicyComparison {
        #[command(flatten)]
        docs: Docs,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<u32>,
        /// Base seed; replicate r runs with seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

/// Document files; omitted ones fall back to the shipped examples.
#[derive(Args)]
struct Docs {
    #[arg(long)]
    workflow: Option<PathBuf>,
    #[arg(long)]
    sla: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    repo: Option<PathBuf>,
    #[arg(long)]
    run_config: Option<PathBuf>,
}

impl From<Docs> for DocumentPaths {
    fn from(d: Docs) -> Self {
        DocumentPaths {
            workflow: d.workflow,
            sla: d.sla,
            pool: d.pool,
            repo: d.repo,
            run_config: d.run_config,
        }
    }
}

fn execute(command: Command) -> Result<serde_json::Value, CommandError> {
    Ok(match command {
        Command::Run { docs, seed, out_dir } => {
            let record = cmd_run(&docs.into(), seed, &out_dir)?;
            json!({
                "run_id": record.run_id,
                "policy_set": record.policy_set,
                "app.workflow": record.config.app_workflow(),
                "completion_time": record.completion_time,
                "out_dir": out_dir,
            })
        }
        Command::Experiment(Experiment::CostTable {
            pool,
            alpha,
            beta,
            horizon,
            samples_per_hour,
            out_dir,
        }) => {
            let params = AllocationCostParams::new(alpha, beta).map_err(|e| CommandError::Document {
                file: "<arguments>".into(),
                path: "--alpha/--beta".into(),
                message: e.to_string(),
            })?;
            let report = cmd_cost_table(pool.as_deref(), params, horizon, samples_per_hour, &out_dir)?;
            json!({
                "columns": report.table.columns,
                "hours": report.table.rows.len(),
                "quorums": report.quorums,
                "out_dir": out_dir,
            })
        }
        Command::Experiment(Experiment::PolicyComparison {
            docs,
            spec,
            replicates,
            seed,
            out_dir,
        }) => {
            let c = cmd_policy_comparison(&docs.into(), spec.as_deref(), replicates, seed, &out_dir)?;
            json!({ "summary": c.summary, "out_dir": out_dir })
        }
        Command::Validate { docs, spec } => {
            json!({ "valid": cmd_validate(&docs.into(), spec.as_deref())? })
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_json() }));
            ExitCode::FAILURE
        }
    }
}

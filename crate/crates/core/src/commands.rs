//! File-level entry points behind the command-line tool: document loading
//! with per-file error reporting, and the commands that write run records
//! and experiment CSVs to an output directory. Any document path left as
//! `None` falls back to the shipped example.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::bundle;
use crate::experiments::{
    experiment_cost_table, experiment_policy_comparison, parse_experiment_spec, Comparison, CostTableReport,
    ExperimentError, ExperimentSpec, DEFAULT_HORIZON_HOURS, DEFAULT_SAMPLES_PER_HOUR,
};
use crate::hybrid::{
    load_patient, parse_run_config, run_workflow, EngineError, RunError, RunRecord, Scenario, PATIENT_SIGNAL_KEY,
};
use crate::policy::{parse_repository, parse_sla, InfoBase, PolicyError};
use crate::resource::{parse_pool, AllocationCostParams, ResourceError};
use crate::workflow::{parse_subworkflow, parse_workflow, GridPayload, LoopPayload, Payload, WorkflowError};

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const NODE_TIMINGS_FILE: &str = "node_timings.csv";
pub const COST_TABLE_FILE: &str = "cost_table.csv";
pub const COST_SUMMARY_FILE: &str = "cost_summary.csv";
pub const COMPLETION_FILE: &str = "completion.csv";
pub const COMPLETION_SUMMARY_FILE: &str = "completion_summary.csv";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error("{file}: error at `{path}`: {message}")]
    Document {
        file: String,
        path: String,
        message: String,
    },
    #[error("{file}: {message}")]
    Io { file: String, message: String },
    #[error(transparent)]
    Run(Box<RunError>),
    #[error(transparent)]
    Experiment(Box<ExperimentError>),
}

impl CommandError {
    /// Machine-readable form printed by the command-line tool.
    pub fn to_json(&self) -> Value {
        match self {
            CommandError::Document { file, path, message } => json!({
                "kind": "document",
                "file": file,
                "path": path,
                "message": message,
            }),
            CommandError::Io { file, message } => json!({
                "kind": "io",
                "file": file,
                "message": message,
            }),
            CommandError::Run(e) => json!({
                "kind": "run",
                "run_id": e.run_id,
                "node": e.node,
                "message": e.source.to_string(),
            }),
            CommandError::Experiment(e) => match e.as_ref() {
                ExperimentError::Run {
                    config,
                    replicate,
                    seed,
                    source,
                } => json!({
                    "kind": "experiment",
                    "config": config,
                    "replicate": replicate,
                    "seed": seed,
                    "run_id": source.run_id,
                    "node": source.node,
                    "message": source.source.to_string(),
                }),
                other => json!({
                    "kind": "experiment",
                    "message": other.to_string(),
                }),
            },
        }
    }
}

impl From<RunError> for CommandError {
    fn from(e: RunError) -> Self {
        CommandError::Run(Box::new(e))
    }
}

impl From<ExperimentError> for CommandError {
    fn from(e: ExperimentError) -> Self {
        CommandError::Experiment(Box::new(e))
    }
}

/// Document files for one run. `None` selects the shipped example.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentPaths {
    pub workflow: Option<PathBuf>,
    pub sla: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub repo: Option<PathBuf>,
    pub run_config: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, CommandError> {
    fs::read_to_string(path).map_err(|e| CommandError::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CommandError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CommandError::Io {
            file: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    fs::write(path, contents).map_err(|e| CommandError::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads a file, or the embedded default, and parses it with errors
/// attributed to that file.
fn load<T>(
    path: Option<&Path>,
    default: (&str, &str),
    parse: impl FnOnce(&str) -> Result<T, (String, String)>,
) -> Result<T, CommandError> {
    let (file, text) = match path {
        Some(p) => (p.display().to_string(), read(p)?),
        None => (format!("<builtin {}>", default.0), default.1.to_string()),
    };
    parse(&text).map_err(|(path, message)| CommandError::Document { file, path, message })
}

fn workflow_err(e: WorkflowError) -> (String, String) {
    match e {
        WorkflowError::Schema { path, message } => (path, message),
        other => (String::new(), other.to_string()),
    }
}

fn policy_err(e: PolicyError) -> (String, String) {
    match e {
        PolicyError::Schema { path, message } => (path, message),
        other => (String::new(), other.to_string()),
    }
}

fn resource_err(e: ResourceError) -> (String, String) {
    match e {
        ResourceError::Schema { path, message } => (path, message),
        other => (String::new(), other.to_string()),
    }
}

fn engine_err(e: EngineError) -> (String, String) {
    match e {
        EngineError::Document { path, message } => (path, message),
        other => (String::new(), other.to_string()),
    }
}

fn experiment_err(e: ExperimentError) -> (String, String) {
    match e {
        ExperimentError::Document { path, message } => (path, message),
        other => (String::new(), other.to_string()),
    }
}

/// Parses every document of a run. Sub-workflows referenced by the graph
/// are read from `<id>.json` beside the workflow file; with the shipped
/// workflow they come from the shipped set.
pub fn load_scenario(paths: &DocumentPaths) -> Result<Scenario, CommandError> {
    let graph = load(
        paths.workflow.as_deref(),
        ("heart-disease.json", bundle::WORKFLOW),
        |t| parse_workflow(t).map_err(workflow_err),
    )?;
    let mut subworkflows = BTreeMap::new();
    for node in graph.nodes() {
        let id = match &node.payload {
            Payload::GridSubWorkflow(GridPayload { subworkflow, .. })
            | Payload::Loop(LoopPayload { subworkflow, .. }) => subworkflow,
            _ => continue,
        };
        if subworkflows.contains_key(id) {
            continue;
        }
        let file = paths
            .workflow
            .as_deref()
            .map(|w| w.parent().unwrap_or_else(|| Path::new(".")).join(format!("{id}.json")));
        let builtin = match &file {
            Some(_) => "",
            None => bundle::subworkflow_document(id).ok_or_else(|| CommandError::Document {
                file: "<builtin heart-disease.json>".into(),
                path: format!("nodes[{}]", node.id),
                message: format!("no shipped sub-workflow `{id}`"),
            })?,
        };
        let subwf = load(file.as_deref(), (&format!("{id}.json"), builtin), |t| {
            parse_subworkflow(t).map_err(workflow_err)
        })?;
        subworkflows.insert(id.clone(), subwf);
    }

    let sla = load(
        paths.sla.as_deref(),
        ("sla-high-performance.json", bundle::SLAS[0].1),
        |t| parse_sla(t).map_err(policy_err),
    )?;
    let info = InfoBase::default();
    let repository = load(paths.repo.as_deref(), ("policies.json", bundle::POLICIES), |t| {
        parse_repository(t, &info).map_err(policy_err)
    })?;
    let pool = load(paths.pool.as_deref(), ("pool.json", bundle::POOL), |t| {
        parse_pool(t).map_err(resource_err)
    })?;
    let config = load(
        paths.run_config.as_deref(),
        ("run-config.json", bundle::RUN_CONFIG),
        |t| parse_run_config(t).map_err(engine_err),
    )?;
    let base_dir = paths.run_config.as_deref().and_then(Path::parent);
    let patient = load_patient(&config, base_dir).map_err(|e| {
        let (path, message) = engine_err(e);
        CommandError::Document {
            file: paths
                .run_config
                .as_deref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<builtin run-config.json>".into()),
            path: if path.is_empty() { "patient".into() } else { path },
            message,
        }
    })?;
    Ok(Scenario {
        graph,
        subworkflows,
        sla,
        repository,
        info,
        pool,
        config,
        data: BTreeMap::from([(PATIENT_SIGNAL_KEY.to_string(), patient)]),
    })
}

fn artifact_name(label: &str) -> String {
    label.replace('#', "-")
}

/// Runs the workflow and writes the record, node timings, and per
/// dispatch the concrete plan (`plans/`) and execution log (`logs/`).
pub fn cmd_run(paths: &DocumentPaths, seed: Option<u64>, out_dir: &Path) -> Result<RunRecord, CommandError> {
    let mut scenario = load_scenario(paths)?;
    if let Some(seed) = seed {
        scenario.config.seed = seed;
    }
    let record = run_workflow(&scenario)?;
    write(&out_dir.join(RUN_RECORD_FILE), &record.to_json())?;
    write(&out_dir.join(NODE_TIMINGS_FILE), &record.node_timings_csv())?;
    for d in &record.dispatches {
        let name = artifact_name(&d.label);
        write(&out_dir.join("plans").join(format!("{name}.json")), &d.plan.to_json())?;
        write(
            &out_dir.join("logs").join(format!("{name}.csv")),
            &d.result.log.to_csv(),
        )?;
    }
    Ok(record)
}

pub fn cmd_cost_table(
    pool: Option<&Path>,
    params: AllocationCostParams,
    horizon: Option<usize>,
    samples_per_hour: Option<usize>,
    out_dir: &Path,
) -> Result<CostTableReport, CommandError> {
    let pool = load(pool, ("pool.json", bundle::POOL), |t| {
        parse_pool(t).map_err(resource_err)
    })?;
    let report = experiment_cost_table(
        &pool,
        params,
        horizon.unwrap_or(DEFAULT_HORIZON_HOURS),
        samples_per_hour.unwrap_or(DEFAULT_SAMPLES_PER_HOUR),
    )?;
    write(&out_dir.join(COST_TABLE_FILE), &report.table.to_csv())?;
    write(&out_dir.join(COST_SUMMARY_FILE), &report.summary_csv())?;
    Ok(report)
}

pub fn load_experiment_spec(path: Option<&Path>) -> Result<ExperimentSpec, CommandError> {
    load(path, ("experiment.json", bundle::EXPERIMENT), |t| {
        parse_experiment_spec(t).map_err(experiment_err)
    })
}

/// Writes the long-form CSV even when a replicate fails; the summary is
/// written only for a complete study.
pub fn cmd_policy_comparison(
    paths: &DocumentPaths,
    spec: Option<&Path>,
    replicates: Option<u32>,
    base_seed: Option<u64>,
    out_dir: &Path,
) -> Result<Comparison, CommandError> {
    let mut spec = load_experiment_spec(spec)?;
    if let Some(r) = replicates {
        spec.replicates = r;
    }
    if let Some(s) = base_seed {
        spec.base_seed = s;
    }
    let template = load_scenario(paths)?;
    let comparison = experiment_policy_comparison(&spec, &template)?;
    write(&out_dir.join(COMPLETION_FILE), &comparison.rows_csv())?;
    if let Some(e) = &comparison.error {
        return Err(e.clone().into());
    }
    write(&out_dir.join(COMPLETION_SUMMARY_FILE), &comparison.summary_csv())?;
    Ok(comparison)
}

/// Parses and cross-checks documents without running anything. Returns
/// one line per checked document.
pub fn cmd_validate(paths: &DocumentPaths, spec: Option<&Path>) -> Result<Vec<String>, CommandError> {
    let scenario = load_scenario(paths)?;
    let mut checked = vec![
        format!(
            "workflow {} ({} nodes)",
            scenario.graph.id(),
            scenario.graph.nodes().len()
        ),
        format!(
            "sub-workflows {}",
            scenario.subworkflows.keys().cloned().collect::<Vec<_>>().join(",")
        ),
        format!("sla {}", scenario.sla.user_id),
        format!("repository {} policies", scenario.repository.len()),
        format!("pool {} resources", scenario.pool.len()),
        format!("run config seed {}", scenario.config.seed),
    ];
    if let Some(path) = spec {
        let s = load_experiment_spec(Some(path))?;
        checked.push(format!("experiment {} configs", s.policy_set_configs.len()));
    }
    Ok(checked)
}

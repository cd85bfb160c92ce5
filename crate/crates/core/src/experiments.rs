//! Experiment harness: the hourly allocation-cost table with its quorum
//! summary, and the replicated policy-set comparison.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hybrid::{run_workflow, RunError, Scenario};
use crate::policy::Sla;
use crate::resource::{
    average_cost_table, horizon_quorums, sample_grid, AllocationCostParams, CostTable, QuorumSummary,
    ResourceDescriptor, ResourceError, SECONDS_PER_HOUR,
};

pub const DEFAULT_HORIZON_HOURS: usize = 24;
pub const DEFAULT_SAMPLES_PER_HOUR: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("document error at `{path}`: {message}")]
    Document { path: String, message: String },
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error("config `{config}`, replicate {replicate} (seed {seed}): {source}")]
    Run {
        config: String,
        replicate: u32,
        seed: u64,
        source: Box<RunError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    CostTable,
    PolicyComparison,
}

/// A named SLA plus the repository subset it runs against. An empty
/// `policies` list keeps the whole repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySetConfig {
    pub name: String,
    pub sla: Sla,
    #[serde(default)]
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default = "one")]
    pub replicates: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub policy_set_configs: Vec<PolicySetConfig>,
    /// Hours. Replicate start times are spread over this window.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_samples")]
    pub samples_per_hour: usize,
}

fn one() -> u32 {
    1
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON_HOURS
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_HOUR
}

impl ExperimentSpec {
    pub fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be >= 1");
        }
        if self.horizon == 0 || self.samples_per_hour == 0 {
            return bad("horizon and samples_per_hour must be >= 1");
        }
        if self.kind == ExperimentKind::PolicyComparison {
            if self.policy_set_configs.is_empty() {
                return bad("policy_comparison needs at least one config");
            }
            let mut names: Vec<&str> = self.policy_set_configs.iter().map(|c| c.name.as_str()).collect();
            names.sort_unstable();
            if names.windows(2).any(|w| w[0] == w[1]) {
                return bad("config names must be unique");
            }
        }
        Ok(())
    }

    pub fn seed(&self, replicate: u32) -> u64 {
        self.base_seed.wrapping_add(replicate as u64)
    }
}

pub fn parse_experiment_spec(document: &str) -> Result<ExperimentSpec, ExperimentError> {
    let mut de = serde_json::Deserializer::from_str(document);
    let spec: ExperimentSpec = serde_path_to_error::deserialize(&mut de).map_err(|e| ExperimentError::Document {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    spec.check()?;
    Ok(spec)
}

/// Cost table plus, per quorum level, the quorum ranked over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTableReport {
    pub table: CostTable,
    pub quorums: Vec<QuorumSummary>,
}

impl CostTableReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("level,members,mean_cost\n");
        for q in &self.quorums {
            let _ = writeln!(out, "{},{},{:.6}", q.level, q.members.join(";"), q.mean_cost);
        }
        out
    }
}

pub fn experiment_cost_table(
    pool: &[ResourceDescriptor],
    params: AllocationCostParams,
    horizon: usize,
    samples_per_hour: usize,
) -> Result<CostTableReport, ExperimentError> {
    if horizon == 0 || samples_per_hour == 0 {
        return Err(ExperimentError::InvalidSpec(
            "horizon and samples_per_hour must be >= 1".into(),
        ));
    }
    let table = average_cost_table(pool, horizon, samples_per_hour, params)?;
    let quorums = horizon_quorums(pool, &sample_grid(horizon, samples_per_hour), params)?;
    Ok(CostTableReport { table, quorums })
}

/// Start instant of a replicate: uniform over the horizon, a pure
/// function of the seed. Every config of one replicate starts together.
pub fn replicate_start_time(seed: u64, horizon_hours: usize) -> f64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let u = (z >> 11) as f64 / (1u64 << 53) as f64;
    (u * horizon_hours as f64 * SECONDS_PER_HOUR).floor()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub config: String,
    pub replicate: u32,
    pub seed: u64,
    pub completion_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single replicate.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

/// Rows in spec config order, then replicate order. After a failure only
/// the rows sorted before it are kept and `error` names it.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<SummaryRow>,
    pub error: Option<ExperimentError>,
}

impl Comparison {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("config,replicate,seed,completion_s\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.config, r.replicate, r.seed, r.completion_s);
        }
        if let Some(ExperimentError::Run {
            config,
            replicate,
            seed,
            ..
        }) = &self.error
        {
            let _ = writeln!(out, "{config},{replicate},{seed},error");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("config,mean,stddev,min,max\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                s.config, s.mean, s.stddev, s.min, s.max
            );
        }
        out
    }

    pub fn summary_of(&self, config: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.config == config)
    }
}

pub fn summarize(config: &str, values: &[f64]) -> SummaryRow {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    SummaryRow {
        config: config.to_string(),
        mean,
        stddev,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// The scenario one (config, replicate) pair runs: the config's SLA, the
/// repository filtered to its policy ids, and the replicate's seed and
/// start time.
pub fn replicate_scenario(
    template: &Scenario,
    spec: &ExperimentSpec,
    config: &PolicySetConfig,
    replicate: u32,
) -> Scenario {
    let mut s = template.clone();
    s.sla = config.sla.clone();
    if !config.policies.is_empty() {
        s.repository.retain(|p| config.policies.contains(&p.id));
    }
    let seed = spec.seed(replicate);
    s.config.seed = seed;
    s.config.start_time = replicate_start_time(seed, spec.horizon);
    s
}

/// Runs every (config, replicate) pair in parallel, each on its own
/// scenario copy.
pub fn experiment_policy_comparison(spec: &ExperimentSpec, template: &Scenario) -> Result<Comparison, ExperimentError> {
    spec.check()?;
    let jobs: Vec<(usize, u32)> = (0..spec.policy_set_configs.len())
        .flat_map(|c| (0..spec.replicates).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<(usize, u32, Result<f64, RunError>)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let scenario = replicate_scenario(template, spec, &spec.policy_set_configs[c], r);
            (c, r, run_workflow(&scenario).map(|rec| rec.completion_time))
        })
        .collect();

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut error = None;
    for (c, r, outcome) in outcomes {
        let config = &spec.policy_set_configs[c].name;
        match outcome {
            Ok(completion_s) => rows.push(ComparisonRow {
                config: config.clone(),
                replicate: r,
                seed: spec.seed(r),
                completion_s,
            }),
            Err(source) => {
                error = Some(ExperimentError::Run {
                    config: config.clone(),
                    replicate: r,
                    seed: spec.seed(r),
                    source: Box::new(source),
                });
                break;
            }
        }
    }
    let summary = if error.is_none() {
        spec.policy_set_configs
            .iter()
            .map(|c| {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.config == c.name)
                    .map(|r| r.completion_s)
                    .collect();
                summarize(&c.name, &values)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Comparison { rows, summary, error })
}

//! High-level workflow interpreter. Decides and enforces the user's policy
//! set, then walks the application graph, running local nodes in-process
//! and dispatching grid nodes through quorum selection, mapping and the
//! simulated grid.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ecg::{
    extract_features, preset, run_vhs_loop, synthesize_ecg, Diagnosis, EcgError, EcgFeatures, Signal, SignalSpec,
    SynthParams, Thresholds, VhsOutcome, VhsSettings,
};
use crate::grid::{execute_plan, generate_catalogs, map_workflow, ConcretePlan, GridError, SubWorkflowResult};
use crate::policy::{
    decide_policy, enforce, expand_soft_label, ConfigRegistry, EnforcementReport, InfoBase, Policy, PolicyError,
    PolicySetIds, PropertyRecord, Sla,
};
use crate::resource::{check_pool, select_quorum, ResourceDescriptor, ResourceError};
use crate::workflow::{validate_graph, AbstractSubWorkflow, Node, NodeKind, Payload, WorkflowError, WorkflowGraph};

/// Data key under which the patient recording is published.
pub const PATIENT_SIGNAL_KEY: &str = "patient.ecg";
/// Hard cap on loop iterations whatever the configuration says.
pub const MAX_LOOP_ITERATIONS: u32 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Ecg(#[from] EcgError),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("unknown sub-workflow `{0}`")]
    UnknownSubWorkflow(String),
    #[error("unknown local function `{0}`")]
    UnknownFunction(String),
    #[error("unknown rule table `{0}`")]
    UnknownRuleTable(String),
    #[error("unknown patient preset `{0}`")]
    UnknownPreset(String),
    #[error("input `{key}` does not hold {expected}")]
    InputType { key: String, expected: &'static str },
    #[error("document error at `{path}`: {message}")]
    Document { path: String, message: String },
}

/// An engine error tagged with the run and, when known, the node that
/// raised it.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("run `{run_id}`{}: {source}", node_suffix(.node))]
pub struct RunError {
    pub run_id: String,
    pub node: Option<String>,
    pub source: EngineError,
}

fn node_suffix(node: &Option<String>) -> String {
    node.as_ref().map(|n| format!(", node `{n}`")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub preset: String,
}

/// Sample file with one value per line (or comma/whitespace separated).
/// Relative paths resolve against the run config's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatientSource {
    Preset(PresetRef),
    File(FileRef),
    Synth(SynthParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Simulated wall-clock instant at which the run starts, seconds.
    #[serde(default)]
    pub start_time: f64,
    pub patient: PatientSource,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub user_inputs: BTreeMap<String, Value>,
    #[serde(default)]
    pub vhs_grid: Vec<SynthParams>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

pub fn parse_run_config(document: &str) -> Result<RunConfig, EngineError> {
    let mut de = serde_json::Deserializer::from_str(document);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| EngineError::Document {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    if !(config.start_time.is_finite() && config.start_time >= 0.0) {
        return Err(EngineError::Document {
            path: "start_time".into(),
            message: format!("must be a non-negative number, got {}", config.start_time),
        });
    }
    Ok(config)
}

fn parse_samples(text: &str, source: &str) -> Result<Vec<f64>, EngineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .flat_map(|(n, l)| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(move |s| (n, s))
        })
        .map(|(n, s)| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| EngineError::Document {
                    path: format!("{source}:{}", n + 1),
                    message: format!("`{s}` is not a finite number"),
                })
        })
        .collect()
}

/// Materializes the patient recording described by the run config.
pub fn load_patient(config: &RunConfig, base_dir: Option<&Path>) -> Result<Signal, EngineError> {
    let spec = config.signal;
    match &config.patient {
        PatientSource::Preset(p) => {
            let params = preset(&p.preset).ok_or_else(|| EngineError::UnknownPreset(p.preset.clone()))?;
            Ok(synthesize_ecg(&params, spec.duration, spec.rate)?)
        }
        PatientSource::Synth(params) => Ok(synthesize_ecg(params, spec.duration, spec.rate)?),
        PatientSource::File(f) => {
            let path = match base_dir {
                Some(dir) => dir.join(&f.file),
                None => f.file.clone().into(),
            };
            let text = std::fs::read_to_string(&path).map_err(|e| EngineError::Document {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            if !(f.rate.is_finite() && f.rate > 0.0) {
                return Err(EngineError::Document {
                    path: "patient.rate".into(),
                    message: format!("sample rate must be positive, got {}", f.rate),
                });
            }
            Ok(Signal {
                rate: f.rate,
                samples: parse_samples(&text, &f.file)?,
            })
        }
    }
}

/// Everything one run reads: documents plus the published data items.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: WorkflowGraph,
    pub subworkflows: BTreeMap<String, AbstractSubWorkflow>,
    pub sla: Sla,
    pub repository: Vec<Policy>,
    pub info: InfoBase,
    pub pool: Vec<ResourceDescriptor>,
    pub config: RunConfig,
    pub data: BTreeMap<String, Signal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Local,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeOutcome {
    pub node: String,
    pub kind: NodeKind,
    pub provenance: Provenance,
    pub start: f64,
    pub end: f64,
    pub summary: Value,
}

/// One grid dispatch: the concrete plan and its execution log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dispatch {
    pub node: String,
    /// Node id, suffixed with `#k` for the k-th loop iteration.
    pub label: String,
    pub plan: ConcretePlan,
    pub result: SubWorkflowResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub workflow: String,
    pub seed: u64,
    pub start_time: f64,
    pub sla: Sla,
    pub policy_set: PolicySetIds,
    pub enforcement: EnforcementReport,
    pub config: ConfigRegistry,
    pub properties: Vec<PropertyRecord>,
    pub nodes: Vec<NodeOutcome>,
    /// Reached nodes skipped because they need a higher service level.
    pub pruned: Vec<String>,
    pub completion_time: f64,
    pub dispatches: Vec<Dispatch>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes infallibly")
    }

    pub fn node_timings_csv(&self) -> String {
        let mut out = String::from("node,kind,start,end\n");
        for n in &self.nodes {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", n.node, n.kind, n.start, n.end));
        }
        out
    }

    pub fn outcome(&self, node: &str) -> Option<&NodeOutcome> {
        self.nodes.iter().find(|n| n.node == node)
    }
}

pub fn run_id(scenario: &Scenario) -> String {
    format!(
        "{}-{}-s{}",
        scenario.graph.id(),
        scenario.sla.user_id,
        scenario.config.seed
    )
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-dispatch seed, stable across platforms.
fn derive_seed(run_seed: u64, scheduler_seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix64(run_seed ^ splitmix64(scheduler_seed)), |h, b| {
            splitmix64(h ^ b as u64)
        })
}

#[derive(Debug, Clone)]
enum Item {
    Signal(Signal),
    Features(EcgFeatures),
    Diagnosis(Diagnosis),
    Json(Value),
}

struct ExecutionContext<'a> {
    scenario: &'a Scenario,
    registry: ConfigRegistry,
    board: HashMap<String, Item>,
    dispatches: Vec<Dispatch>,
}

struct Step {
    outcome: NodeOutcome,
    /// `None` activates every forward successor.
    next: Option<Vec<String>>,
}

impl ExecutionContext<'_> {
    fn input(&self, key: &str) -> Result<&Item, EngineError> {
        self.board
            .get(key)
            .ok_or_else(|| EngineError::MissingInput(key.to_string()))
    }

    fn features(&self, key: &str) -> Result<EcgFeatures, EngineError> {
        match self.input(key)? {
            Item::Features(f) => Ok(*f),
            _ => Err(EngineError::InputType {
                key: key.to_string(),
                expected: "ECG features",
            }),
        }
    }

    fn signal(&self, key: &str) -> Result<&Signal, EngineError> {
        match self.input(key)? {
            Item::Signal(s) => Ok(s),
            _ => Err(EngineError::InputType {
                key: key.to_string(),
                expected: "a signal",
            }),
        }
    }

    /// Quorum, catalogs, mapping and simulated execution of one
    /// sub-workflow starting at `t`.
    fn dispatch(&mut self, node: &str, subworkflow: &str, label: String, t: f64) -> Result<f64, EngineError> {
        let scenario = self.scenario;
        let subwf = scenario
            .subworkflows
            .get(subworkflow)
            .ok_or_else(|| EngineError::UnknownSubWorkflow(subworkflow.to_string()))?;
        let seed = derive_seed(scenario.config.seed, self.registry.scheduler_seed(), &label);
        let params = self.registry.cost_params()?;
        let quorum = select_quorum(&scenario.pool, self.registry.resource_selection(), t, params, seed)?;
        let catalogs = generate_catalogs(subwf, &quorum, &scenario.pool)?;
        let plan = map_workflow(
            subwf,
            &catalogs,
            &quorum,
            &scenario.pool,
            self.registry.scheduler(),
            seed,
            t,
        )?;
        let result = execute_plan(&plan, subwf, &scenario.pool, t)?;
        let makespan = result.makespan;
        self.dispatches.push(Dispatch {
            node: node.to_string(),
            label,
            plan,
            result,
        });
        Ok(makespan)
    }

    fn execute_node(&mut self, node: &Node, start: f64) -> Result<Step, EngineError> {
        let id = node.id.as_str();
        let (provenance, end, summary, next) = match &node.payload {
            Payload::DataRetrieval(p) => {
                let signal = self
                    .scenario
                    .data
                    .get(&p.key)
                    .ok_or_else(|| EngineError::MissingInput(p.key.clone()))?;
                let summary = json!({
                    "key": p.key,
                    "samples": signal.samples.len(),
                    "rate": signal.rate,
                });
                self.board.insert(id.to_string(), Item::Signal(signal.clone()));
                (Provenance::Local, start, summary, None)
            }
            Payload::UserInput(p) => {
                let value = self
                    .scenario
                    .config
                    .user_inputs
                    .get(&p.key)
                    .ok_or_else(|| EngineError::MissingInput(p.key.clone()))?;
                let summary = json!({ "key": p.key, "value": value });
                self.board.insert(id.to_string(), Item::Json(value.clone()));
                (Provenance::Local, start, summary, None)
            }
            Payload::LocalTask(p) => {
                let output = match p.function.as_str() {
                    "long-term-analysis" => {
                        let key = p
                            .input
                            .as_deref()
                            .ok_or_else(|| EngineError::MissingInput(format!("{id}.input")))?;
                        let f = self.features(key)?;
                        json!({
                            "heart_rate_bpm": 60.0 / f.rr_mean,
                            "rr_cv": f.rr_std / f.rr_mean,
                        })
                    }
                    "echo" => match p.input.as_deref() {
                        Some(key) => item_summary(self.input(key)?),
                        None => Value::Null,
                    },
                    other => return Err(EngineError::UnknownFunction(other.to_string())),
                };
                self.board.insert(id.to_string(), Item::Json(output.clone()));
                let duration = p.duration.max(0.0);
                (
                    Provenance::Local,
                    start + duration,
                    json!({ "function": p.function, "output": output }),
                    None,
                )
            }
            Payload::GridSubWorkflow(p) => {
                // Check the analysis input before spending grid time.
                let signal = match p.function.as_deref() {
                    None => None,
                    Some("ecg-features") => {
                        let key = p
                            .input
                            .as_deref()
                            .ok_or_else(|| EngineError::MissingInput(format!("{id}.input")))?;
                        Some(self.signal(key)?.clone())
                    }
                    Some(other) => return Err(EngineError::UnknownFunction(other.to_string())),
                };
                let makespan = self.dispatch(id, &p.subworkflow, id.to_string(), start)?;
                let (item, features) = match signal {
                    Some(s) => {
                        let f = extract_features(&s)?;
                        (Item::Features(f), json!(f))
                    }
                    None => (Item::Json(Value::Null), Value::Null),
                };
                self.board.insert(id.to_string(), item);
                let last = self.dispatches.last().expect("just dispatched");
                let summary = json!({
                    "subworkflow": p.subworkflow,
                    "makespan": makespan,
                    "quorum": last.plan.quorum.members,
                    "scheduler": last.plan.scheduler,
                    "features": features,
                });
                (Provenance::Grid, start + makespan, summary, None)
            }
            Payload::Decision(p) => {
                if p.rules != "disease" {
                    return Err(EngineError::UnknownRuleTable(p.rules.clone()));
                }
                let f = self.features(&p.input)?;
                let diagnosis = crate::ecg::estimate_disease(&f, &self.scenario.config.thresholds);
                let mut target = p.branches.get(diagnosis.as_str()).cloned();
                let mut forced = false;
                if self.registry.vhs_always() {
                    let graph = &self.scenario.graph;
                    let looped = graph
                        .successors(id)
                        .find(|s| graph.node(s).is_some_and(|n| n.kind() == NodeKind::Loop));
                    if let Some(l) = looped {
                        forced = target.as_deref() != Some(l);
                        target = Some(l.to_string());
                    }
                }
                self.board.insert(id.to_string(), Item::Diagnosis(diagnosis));
                let summary = json!({
                    "diagnosis": diagnosis,
                    "branch": target,
                    "forced": forced,
                });
                (Provenance::Local, start, summary, Some(target.into_iter().collect()))
            }
            Payload::Loop(p) => {
                let max_iter = if self.registry.is_default("vhs.max_iter") {
                    p.max_iterations
                } else {
                    self.registry.vhs_max_iter()
                };
                let tolerance = if self.registry.is_default("vhs.tolerance") {
                    p.tolerance
                } else {
                    self.registry.vhs_tolerance()
                };
                let settings = VhsSettings {
                    max_iter: max_iter.min(MAX_LOOP_ITERATIONS),
                    tolerance,
                    signal: self.scenario.config.signal,
                };
                let patient = self.features(&p.input)?;
                let grid = &self.scenario.config.vhs_grid;
                let mut cursor = start;
                let outcome: VhsOutcome = run_vhs_loop(&patient, grid, &settings, |k| {
                    cursor += self.dispatch(id, &p.subworkflow, format!("{id}#{k}"), cursor)?;
                    Ok::<(), EngineError>(())
                })?;
                let summary = json!({
                    "max_iter": settings.max_iter,
                    "tolerance": settings.tolerance,
                    "outcome": outcome,
                });
                self.board.insert(id.to_string(), Item::Json(json!(outcome)));
                (Provenance::Grid, cursor, summary, None)
            }
            Payload::Terminal(_) => (Provenance::Local, start, json!({ "terminal": true }), None),
        };
        Ok(Step {
            outcome: NodeOutcome {
                node: id.to_string(),
                kind: node.kind(),
                provenance,
                start,
                end,
                summary,
            },
            next,
        })
    }
}

fn item_summary(item: &Item) -> Value {
    match item {
        Item::Signal(s) => json!({ "samples": s.samples.len(), "rate": s.rate }),
        Item::Features(f) => json!(f),
        Item::Diagnosis(d) => json!(d),
        Item::Json(v) => v.clone(),
    }
}

/// Expands the SLA, decides and enforces the policy set, then interprets
/// the graph in forward topological order. A node runs once it has been
/// activated by the entry or by a finished predecessor, and starts when
/// its last activating predecessor ends. Decisions activate only their
/// chosen branch. Nodes above the enforced service level are pruned along
/// with everything only they would activate.
pub fn run_workflow(scenario: &Scenario) -> Result<RunRecord, RunError> {
    let id = run_id(scenario);
    let fail = |node: Option<&str>, source: EngineError| RunError {
        run_id: id.clone(),
        node: node.map(String::from),
        source,
    };

    check_pool(&scenario.pool).map_err(|e| fail(None, e.into()))?;
    let report = validate_graph(&scenario.graph);
    if !report.is_clean() {
        return Err(fail(
            None,
            WorkflowError::Invalid {
                graph: scenario.graph.id().to_string(),
                report,
            }
            .into(),
        ));
    }
    let sla = expand_soft_label(&scenario.sla).map_err(|e| fail(None, e.into()))?;
    let set = decide_policy(&sla, &scenario.repository, &scenario.info).map_err(|e| fail(None, e.into()))?;
    let mut registry = ConfigRegistry::with_defaults();
    let enforcement = enforce(&set, &mut registry).map_err(|e| fail(None, e.into()))?;
    registry.cost_params().map_err(|e| fail(None, e.into()))?;

    let app_level = registry.app_workflow();
    let mut ctx = ExecutionContext {
        scenario,
        registry,
        board: HashMap::new(),
        dispatches: Vec::new(),
    };
    let graph = &scenario.graph;
    let t0 = scenario.config.start_time;
    let mut activation: HashMap<&str, f64> = HashMap::from([(graph.entry(), t0)]);
    let mut nodes = Vec::new();
    let mut pruned = Vec::new();

    for nid in graph.forward_order() {
        let Some(&start) = activation.get(nid) else { continue };
        let node = graph.node(nid).expect("ordered ids exist");
        if node.payload.service_level().is_some_and(|l| l > app_level) {
            pruned.push(nid.to_string());
            continue;
        }
        let step = ctx.execute_node(node, start).map_err(|e| fail(Some(nid), e))?;
        let end = step.outcome.end;
        for succ in graph.successors(nid) {
            if graph.is_back_edge(nid, succ) {
                continue;
            }
            if step
                .next
                .as_ref()
                .is_some_and(|chosen| !chosen.iter().any(|c| c == succ))
            {
                continue;
            }
            let slot = activation.entry(succ).or_insert(end);
            *slot = slot.max(end);
        }
        nodes.push(step.outcome);
    }

    let last_end = nodes.iter().map(|n| n.end).fold(t0, f64::max);
    Ok(RunRecord {
        run_id: id.clone(),
        workflow: graph.id().to_string(),
        seed: scenario.config.seed,
        start_time: t0,
        sla,
        policy_set: set.ids(),
        enforcement,
        config: ctx.registry,
        properties: scenario.info.records(),
        nodes,
        pruned,
        completion_time: last_end - t0,
        dispatches: ctx.dispatches,
    })
}

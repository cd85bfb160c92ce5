//! Workflow documents at both levels.
//!
//! The high-level [`WorkflowGraph`] is interpreted locally node by node; the
//! abstract [`AbstractSubWorkflow`] is a resource-independent task DAG handed
//! to the grid engine. Both are parsed from JSON documents with unknown keys
//! rejected, and every parse error carries the path of the offending field.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("workflow `{graph}` is invalid: {report}")]
    Invalid { graph: String, report: ValidationReport },
    #[error("cycle among tasks {0:?}")]
    Cycle(Vec<String>),
}

impl WorkflowError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        WorkflowError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Application service level (the `As` component of an SLA). Ordered:
/// each level includes every node of the levels below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceLevel {
    EcgOnly,
    EcgDetect,
    EcgVhs,
}

impl ServiceLevel {
    pub const ALL: [ServiceLevel; 3] = [ServiceLevel::EcgOnly, ServiceLevel::EcgDetect, ServiceLevel::EcgVhs];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceLevel::EcgOnly => "EcgOnly",
            ServiceLevel::EcgDetect => "EcgDetect",
            ServiceLevel::EcgVhs => "EcgVhs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for ServiceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    LocalTask,
    GridSubWorkflow,
    Decision,
    Loop,
    DataRetrieval,
    UserInput,
    Terminal,
}

impl NodeKind {
    pub fn is_grid(self) -> bool {
        matches!(self, NodeKind::GridSubWorkflow | NodeKind::Loop)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Runs a named local function, optionally reading one blackboard key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTaskPayload {
    pub function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    /// Local execution time charged to the run, seconds.
    #[serde(default)]
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPayload {
    pub subworkflow: String,
    /// Analysis applied to the sub-workflow output once it returns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
}

/// `branches` maps each rule-table outcome to a successor node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionPayload {
    pub rules: String,
    pub input: String,
    pub branches: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopPayload {
    pub subworkflow: String,
    pub input: String,
    pub max_iterations: u32,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPayload {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
}

/// Kind-specific node parameters. The variant *is* the node kind, so a
/// node whose payload does not fit its kind cannot be constructed.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    LocalTask(LocalTaskPayload),
    GridSubWorkflow(GridPayload),
    Decision(DecisionPayload),
    Loop(LoopPayload),
    DataRetrieval(KeyPayload),
    UserInput(KeyPayload),
    Terminal(TerminalPayload),
}

impl Payload {
    pub fn kind(&self) -> NodeKind {
        match self {
            Payload::LocalTask(_) => NodeKind::LocalTask,
            Payload::GridSubWorkflow(_) => NodeKind::GridSubWorkflow,
            Payload::Decision(_) => NodeKind::Decision,
            Payload::Loop(_) => NodeKind::Loop,
            Payload::DataRetrieval(_) => NodeKind::DataRetrieval,
            Payload::UserInput(_) => NodeKind::UserInput,
            Payload::Terminal(_) => NodeKind::Terminal,
        }
    }

    /// Minimum application service level at which the node is active.
    pub fn service_level(&self) -> Option<ServiceLevel> {
        match self {
            Payload::LocalTask(p) => p.service_level,
            Payload::GridSubWorkflow(p) => p.service_level,
            Payload::Decision(p) => p.service_level,
            Payload::Loop(p) => p.service_level,
            Payload::DataRetrieval(p) | Payload::UserInput(p) => p.service_level,
            Payload::Terminal(p) => p.service_level,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Payload::LocalTask(p) => serde_json::to_value(p),
            Payload::GridSubWorkflow(p) => serde_json::to_value(p),
            Payload::Decision(p) => serde_json::to_value(p),
            Payload::Loop(p) => serde_json::to_value(p),
            Payload::DataRetrieval(p) | Payload::UserInput(p) => serde_json::to_value(p),
            Payload::Terminal(p) => serde_json::to_value(p),
        };
        v.expect("payload structs serialize infallibly")
    }

    fn from_value(kind: NodeKind, value: Value, path: &str) -> Result<Self, WorkflowError> {
        Ok(match kind {
            NodeKind::LocalTask => Payload::LocalTask(from_value_at(value, path)?),
            NodeKind::GridSubWorkflow => Payload::GridSubWorkflow(from_value_at(value, path)?),
            NodeKind::Decision => Payload::Decision(from_value_at(value, path)?),
            NodeKind::Loop => Payload::Loop(from_value_at(value, path)?),
            NodeKind::DataRetrieval => Payload::DataRetrieval(from_value_at(value, path)?),
            NodeKind::UserInput => Payload::UserInput(from_value_at(value, path)?),
            NodeKind::Terminal => Payload::Terminal(from_value_at(value, path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub payload: Payload,
}

impl Node {
    pub fn new(id: impl Into<String>, payload: Payload) -> Self {
        Node { id: id.into(), payload }
    }

    pub fn kind(&self) -> NodeKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: NodeKind,
    #[serde(default)]
    payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    id: String,
    entry: String,
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

/// The high-level node graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowGraph {
    id: String,
    entry: String,
    nodes: Vec<Node>,
    edges: Vec<(String, String)>,
}

impl WorkflowGraph {
    /// Assembles a graph without checking it; see [`validate_graph`].
    pub fn from_parts(
        id: impl Into<String>,
        entry: impl Into<String>,
        nodes: Vec<Node>,
        edges: Vec<(String, String)>,
    ) -> Self {
        WorkflowGraph {
            id: id.into(),
            entry: entry.into(),
            nodes,
            edges,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Successors in edge-declaration order.
    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(from, _)| from == id)
            .map(|(_, to)| to.as_str())
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(_, to)| to == id)
            .map(|(from, _)| from.as_str())
    }

    /// An edge into a Loop node that closes a cycle through it. These are
    /// the only edges allowed to form cycles.
    pub fn is_back_edge(&self, from: &str, to: &str) -> bool {
        match self.node(to) {
            Some(n) if n.kind() == NodeKind::Loop => self.reaches(to, from),
            _ => false,
        }
    }

    fn reaches(&self, start: &str, target: &str) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            if v == target {
                return true;
            }
            if seen.insert(v) {
                stack.extend(self.successors(v));
            }
        }
        false
    }

    /// Topological order of the nodes with Loop back-edges removed, ties
    /// broken by ascending id. Requires a graph that passed validation.
    pub fn forward_order(&self) -> Vec<&str> {
        let ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        let deps: Vec<(&str, &str)> = self
            .edges
            .iter()
            .filter(|(f, t)| !self.is_back_edge(f, t))
            .map(|(f, t)| (f.as_str(), t.as_str()))
            .collect();
        kahn_ascending(&ids, &deps).unwrap_or_else(|_| ids.clone())
    }

    pub fn to_document(&self) -> Value {
        let raw = RawGraph {
            id: self.id.clone(),
            entry: self.entry.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id.clone(),
                    kind: n.kind(),
                    payload: n.payload.to_value(),
                })
                .collect(),
            edges: self.edges.clone(),
        };
        serde_json::to_value(raw).expect("graph serializes infallibly")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding")]
pub enum Finding {
    MissingEntry {
        entry: String,
    },
    DuplicateNode {
        node: String,
    },
    DanglingEdge {
        from: String,
        to: String,
        missing: String,
    },
    BadBranch {
        node: String,
        branch: String,
        target: String,
    },
    Cycle {
        nodes: Vec<String>,
    },
    Unreachable {
        node: String,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingEntry { entry } => write!(f, "entry node `{entry}` does not exist"),
            Finding::DuplicateNode { node } => write!(f, "node `{node}` declared more than once"),
            Finding::DanglingEdge { from, to, missing } => {
                write!(f, "edge {from} -> {to} references unknown node `{missing}`")
            }
            Finding::BadBranch { node, branch, target } => write!(
                f,
                "decision `{node}` routes branch `{branch}` to `{target}`, which is not a successor"
            ),
            Finding::Cycle { nodes } => write!(f, "cycle through {nodes:?} without a loop node"),
            Finding::Unreachable { node } => write!(f, "node `{node}` unreachable from entry"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return f.write_str("no findings");
        }
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{finding}")?;
        }
        Ok(())
    }
}

pub fn validate_graph(graph: &WorkflowGraph) -> ValidationReport {
    let mut findings = Vec::new();

    let mut seen = HashSet::new();
    for n in &graph.nodes {
        if !seen.insert(n.id.as_str()) {
            findings.push(Finding::DuplicateNode { node: n.id.clone() });
        }
    }

    let entry_ok = seen.contains(graph.entry.as_str());
    if !entry_ok {
        findings.push(Finding::MissingEntry {
            entry: graph.entry.clone(),
        });
    }

    let mut live_edges: Vec<(&str, &str)> = Vec::new();
    for (from, to) in &graph.edges {
        let missing = [from, to].into_iter().find(|e| !seen.contains(e.as_str()));
        match missing {
            Some(m) => findings.push(Finding::DanglingEdge {
                from: from.clone(),
                to: to.clone(),
                missing: m.clone(),
            }),
            None => live_edges.push((from.as_str(), to.as_str())),
        }
    }

    for n in &graph.nodes {
        if let Payload::Decision(d) = &n.payload {
            for (branch, target) in &d.branches {
                if !live_edges.iter().any(|&(f, t)| f == n.id && t == target) {
                    findings.push(Finding::BadBranch {
                        node: n.id.clone(),
                        branch: branch.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
    }

    // Cycles: strongly connected components once Loop back-edges are removed.
    let ids: Vec<&str> = {
        let mut uniq = BTreeSet::new();
        graph
            .nodes
            .iter()
            .map(|n| n.id.as_str())
            .filter(|id| uniq.insert(*id))
            .collect()
    };
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut adj = vec![Vec::new(); ids.len()];
    for &(f, t) in &live_edges {
        if !graph.is_back_edge(f, t) {
            adj[index[f]].push(index[t]);
        }
    }
    for comp in strongly_connected(&adj) {
        let cyclic = comp.len() > 1 || adj[comp[0]].contains(&comp[0]);
        if cyclic {
            let mut nodes: Vec<String> = comp.iter().map(|&i| ids[i].to_string()).collect();
            nodes.sort();
            findings.push(Finding::Cycle { nodes });
        }
    }

    if entry_ok {
        let mut reached = HashSet::new();
        let mut stack = vec![graph.entry.as_str()];
        while let Some(v) = stack.pop() {
            if reached.insert(v) {
                stack.extend(live_edges.iter().filter(|(f, _)| *f == v).map(|(_, t)| *t));
            }
        }
        for id in &ids {
            if !reached.contains(id) {
                findings.push(Finding::Unreachable { node: id.to_string() });
            }
        }
    }

    ValidationReport { findings }
}

/// Tarjan's algorithm; returns components in reverse topological order.
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }

    fn visit(s: &mut State<'_>, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for &w in &s.adj[v] {
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = s.stack.pop().expect("tarjan stack underflow");
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.out.push(comp);
        }
    }

    let n = adj.len();
    let mut s = State {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.out
}

/// Kahn's algorithm picking the smallest ready id first. On failure returns
/// one cycle, rotated to start at its smallest id.
fn kahn_ascending<'a>(ids: &[&'a str], deps: &[(&'a str, &'a str)]) -> Result<Vec<&'a str>, Vec<String>> {
    let mut indeg: BTreeMap<&str, usize> = ids.iter().map(|id| (*id, 0)).collect();
    let mut succ: HashMap<&str, Vec<&str>> = HashMap::new();
    for &(p, c) in deps {
        *indeg.entry(c).or_default() += 1;
        succ.entry(p).or_default().push(c);
    }
    let mut ready: BTreeSet<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &c in succ.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indeg.get_mut(c).expect("consumer registered");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == indeg.len() {
        return Ok(order);
    }

    // Every leftover node keeps a leftover predecessor; walk backwards until
    // a node repeats.
    let leftover: BTreeSet<&str> = indeg.iter().filter(|(_, d)| **d > 0).map(|(id, _)| *id).collect();
    let pred_of = |v: &str| -> &str {
        deps.iter()
            .filter(|(p, c)| *c == v && leftover.contains(p))
            .map(|(p, _)| *p)
            .min()
            .expect("leftover node has a leftover predecessor")
    };
    let start = *leftover.first().expect("non-empty leftover");
    let mut walk = vec![start];
    let mut v = start;
    loop {
        v = pred_of(v);
        if let Some(pos) = walk.iter().position(|w| *w == v) {
            let mut cycle: Vec<&str> = walk[pos..].to_vec();
            cycle.reverse();
            let min_pos = cycle
                .iter()
                .enumerate()
                .min_by_key(|(_, id)| **id)
                .map(|(i, _)| i)
                .unwrap_or(0);
            cycle.rotate_left(min_pos);
            return Err(cycle.into_iter().map(String::from).collect());
        }
        walk.push(v);
    }
}

fn from_value_at<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, WorkflowError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." {
            prefix.to_string()
        } else {
            format!("{prefix}.{inner}")
        };
        WorkflowError::schema(path, e.into_inner().to_string())
    })
}

fn from_str_at<T: DeserializeOwned>(document: &str) -> Result<T, WorkflowError> {
    let mut de = serde_json::Deserializer::from_str(document);
    let value = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| WorkflowError::schema(e.path().to_string(), e.into_inner().to_string()))?;
    de.end().map_err(|e| WorkflowError::schema(".", e.to_string()))?;
    Ok(value)
}

/// Parses and validates a high-level workflow document.
pub fn parse_workflow(document: &str) -> Result<WorkflowGraph, WorkflowError> {
    let raw: RawGraph = from_str_at(document)?;
    graph_from_raw(raw)
}

fn graph_from_raw(raw: RawGraph) -> Result<WorkflowGraph, WorkflowError> {
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for (i, rn) in raw.nodes.into_iter().enumerate() {
        let payload_value = if rn.payload.is_null() {
            Value::Object(Default::default())
        } else {
            rn.payload
        };
        let payload = Payload::from_value(rn.kind, payload_value, &format!("nodes[{i}].payload"))?;
        nodes.push(Node { id: rn.id, payload });
    }
    let graph = WorkflowGraph {
        id: raw.id,
        entry: raw.entry,
        nodes,
        edges: raw.edges,
    };
    let report = validate_graph(&graph);
    if let Some((i, missing)) = report.findings.iter().find_map(|f| match f {
        Finding::DanglingEdge { from, to, missing } => graph
            .edges
            .iter()
            .position(|(a, b)| a == from && b == to)
            .map(|i| (i, missing.clone())),
        _ => None,
    }) {
        return Err(WorkflowError::schema(
            format!("edges[{i}]"),
            format!("unknown node \"{missing}\""),
        ));
    }
    if !report.is_clean() {
        return Err(WorkflowError::Invalid {
            graph: graph.id,
            report,
        });
    }
    Ok(graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    /// Abstract work units, strictly positive.
    pub work: f64,
    pub transformation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub file: String,
    pub bytes: u64,
    pub consumer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractSubWorkflow {
    pub id: String,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub data_deps: Vec<(String, String, u64)>,
    #[serde(default)]
    pub inputs: Vec<InputFile>,
}

impl AbstractSubWorkflow {
    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Checks task ids, work values, dependency endpoints and acyclicity.
    pub fn check(&self) -> Result<(), WorkflowError> {
        let mut ids = HashSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !ids.insert(t.id.as_str()) {
                return Err(WorkflowError::schema(
                    format!("tasks[{i}].id"),
                    format!("duplicate task \"{}\"", t.id),
                ));
            }
            if !(t.work.is_finite() && t.work > 0.0) {
                return Err(WorkflowError::schema(
                    format!("tasks[{i}].work"),
                    format!("work must be a positive finite number, got {}", t.work),
                ));
            }
        }
        for (i, (p, c, _)) in self.data_deps.iter().enumerate() {
            for (slot, end) in [(0, p), (1, c)] {
                if !ids.contains(end.as_str()) {
                    return Err(WorkflowError::schema(
                        format!("data_deps[{i}][{slot}]"),
                        format!("unknown task \"{end}\""),
                    ));
                }
            }
        }
        for (i, input) in self.inputs.iter().enumerate() {
            if !ids.contains(input.consumer.as_str()) {
                return Err(WorkflowError::schema(
                    format!("inputs[{i}].consumer"),
                    format!("unknown task \"{}\"", input.consumer),
                ));
            }
        }
        topological_order(self).map(|_| ())
    }

    pub fn to_document(&self) -> Value {
        serde_json::to_value(self).expect("sub-workflow serializes infallibly")
    }
}

pub fn parse_subworkflow(document: &str) -> Result<AbstractSubWorkflow, WorkflowError> {
    let subwf: AbstractSubWorkflow = from_str_at(document)?;
    subwf.check()?;
    Ok(subwf)
}

/// Producers before consumers; among simultaneously ready tasks the smallest
/// id goes first.
pub fn topological_order(subwf: &AbstractSubWorkflow) -> Result<Vec<String>, WorkflowError> {
    let ids: Vec<&str> = subwf.tasks.iter().map(|t| t.id.as_str()).collect();
    let deps: Vec<(&str, &str)> = subwf
        .data_deps
        .iter()
        .map(|(p, c, _)| (p.as_str(), c.as_str()))
        .collect();
    kahn_ascending(&ids, &deps)
        .map(|order| order.into_iter().map(String::from).collect())
        .map_err(WorkflowError::Cycle)
}

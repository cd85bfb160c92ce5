//! Low-level grid engine.
//!
//! Turns an abstract sub-workflow plus a frozen quorum into catalogs, maps
//! it to a concrete plan with the policy-selected scheduler, and runs the
//! plan on the simulation kernel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resource::{Quorum, ResourceDescriptor};
use crate::sim::{
    exec_time, simulate, transfer_time, EventLog, SimEdge, SimError, SimInput, SimJob, SimTask, TaskRecord,
};
use crate::workflow::{topological_order, AbstractSubWorkflow, WorkflowError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("quorum is empty")]
    EmptyQuorum,
    #[error("resource `{0}` is not in the pool")]
    UnknownResource(String),
    #[error("transformation `{transformation}` of task `{task}` is available on no quorum resource")]
    InfeasibleMapping { task: String, transformation: String },
    #[error("input file `{0}` has no replica")]
    MissingReplica(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown scheduler `{0}`")]
    UnknownScheduler(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchedulerKind {
    /// Each task goes to the resource with the earliest estimated finish.
    MinEft,
    RoundRobin,
    Random,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::MinEft => "MinEFT",
            SchedulerKind::RoundRobin => "RoundRobin",
            SchedulerKind::Random => "Random",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SchedulerKind::MinEft, SchedulerKind::RoundRobin, SchedulerKind::Random]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GridError::UnknownScheduler(s.to_string()))
    }
}

impl TryFrom<String> for SchedulerKind {
    type Error = GridError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SchedulerKind> for String {
    fn from(k: SchedulerKind) -> String {
        k.as_str().to_string()
    }
}

/// Site, transformation and replica catalogs for one sub-workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalogs {
    /// Site name to quorum members at that site, in quorum order.
    pub site: BTreeMap<String, Vec<String>>,
    /// `(transformation, resource)`: the executable is installed there.
    pub transformation: Vec<(String, String)>,
    /// `(file, resource holding it)`
    pub replica: Vec<(String, String)>,
}

impl Catalogs {
    pub fn has_transformation(&self, transformation: &str, resource: &str) -> bool {
        self.transformation
            .iter()
            .any(|(t, r)| t == transformation && r == resource)
    }

    pub fn replica_of(&self, file: &str) -> Option<&str> {
        self.replica.iter().find(|(f, _)| f == file).map(|(_, r)| r.as_str())
    }
}

fn lookup<'a>(pool: &'a [ResourceDescriptor], id: &str) -> Result<&'a ResourceDescriptor, GridError> {
    pool.iter()
        .find(|r| r.id == id)
        .ok_or_else(|| GridError::UnknownResource(id.to_string()))
}

/// Every distinct transformation is installed on every quorum member; all
/// input files sit on the first member, which plays the submit host.
pub fn generate_catalogs(
    subwf: &AbstractSubWorkflow,
    quorum: &Quorum,
    pool: &[ResourceDescriptor],
) -> Result<Catalogs, GridError> {
    let submit = quorum.members.first().ok_or(GridError::EmptyQuorum)?;
    let mut site: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for m in &quorum.members {
        site.entry(lookup(pool, m)?.site.clone()).or_default().push(m.clone());
    }
    let transformations: BTreeSet<&str> = subwf.tasks.iter().map(|t| t.transformation.as_str()).collect();
    let transformation = transformations
        .into_iter()
        .flat_map(|t| quorum.members.iter().map(move |m| (t.to_string(), m.clone())))
        .collect();
    let replica = subwf.inputs.iter().map(|i| (i.file.clone(), submit.clone())).collect();
    Ok(Catalogs {
        site,
        transformation,
        replica,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferKind {
    Input,
    Dependency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    /// File id for inputs, `producer->consumer` for dependencies.
    pub id: String,
    pub kind: TransferKind,
    pub src: String,
    pub dst: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcretePlan {
    pub subworkflow: String,
    pub assignments: BTreeMap<String, String>,
    pub transfers: Vec<Transfer>,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub quorum: Quorum,
}

impl ConcretePlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes infallibly")
    }
}

/// Assigns every task to a quorum resource. Tasks are visited in
/// topological order.
pub fn map_workflow(
    subwf: &AbstractSubWorkflow,
    catalogs: &Catalogs,
    quorum: &Quorum,
    pool: &[ResourceDescriptor],
    scheduler: SchedulerKind,
    seed: u64,
    t0: f64,
) -> Result<ConcretePlan, GridError> {
    if quorum.members.is_empty() {
        return Err(GridError::EmptyQuorum);
    }
    let members: Vec<&ResourceDescriptor> = quorum
        .members
        .iter()
        .map(|m| lookup(pool, m))
        .collect::<Result<_, _>>()?;
    let order = topological_order(subwf)?;

    let mut holder: HashMap<&str, &ResourceDescriptor> = HashMap::new();
    for input in &subwf.inputs {
        let at = catalogs
            .replica_of(&input.file)
            .ok_or_else(|| GridError::MissingReplica(input.file.clone()))?;
        holder.insert(input.file.as_str(), lookup(pool, at)?);
    }

    let mut assignments: BTreeMap<String, String> = BTreeMap::new();
    let mut est_end: HashMap<&str, f64> = HashMap::new();
    let mut free_at: HashMap<&str, f64> = members.iter().map(|m| (m.id.as_str(), t0)).collect();
    let mut rr_cursor = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for task_id in &order {
        let task = subwf.task(task_id).expect("ordered id exists");
        let candidates: Vec<(usize, &ResourceDescriptor)> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| catalogs.has_transformation(&task.transformation, &m.id))
            .map(|(i, m)| (i, *m))
            .collect();
        if candidates.is_empty() {
            return Err(GridError::InfeasibleMapping {
                task: task.id.clone(),
                transformation: task.transformation.clone(),
            });
        }

        let chosen: &ResourceDescriptor = match scheduler {
            SchedulerKind::MinEft => {
                let mut best: Option<(f64, &ResourceDescriptor)> = None;
                for &(_, r) in &candidates {
                    let mut ready = t0;
                    for (p, c, bytes) in &subwf.data_deps {
                        if c == task_id {
                            let src = lookup(pool, &assignments[p])?;
                            ready = ready.max(est_end[p.as_str()] + transfer_time(*bytes, src, r));
                        }
                    }
                    for input in subwf.inputs.iter().filter(|i| &i.consumer == task_id) {
                        ready = ready.max(t0 + transfer_time(input.bytes, holder[input.file.as_str()], r));
                    }
                    let start = ready.max(free_at[r.id.as_str()]);
                    let finish = start + exec_time(task.work, r, start);
                    let better = match best {
                        None => true,
                        Some((f, b)) => finish < f || (finish == f && r.id < b.id),
                    };
                    if better {
                        best = Some((finish, r));
                    }
                }
                let (finish, r) = best.expect("non-empty candidates");
                free_at.insert(r.id.as_str(), finish);
                est_end.insert(task_id.as_str(), finish);
                r
            }
            SchedulerKind::RoundRobin => {
                let n = members.len();
                let (pos, r) = (0..n)
                    .map(|k| (rr_cursor + k) % n)
                    .find_map(|i| candidates.iter().find(|(ci, _)| *ci == i).copied())
                    .expect("some candidate is a member");
                rr_cursor = pos + 1;
                r
            }
            SchedulerKind::Random => candidates.choose(&mut rng).expect("non-empty candidates").1,
        };
        assignments.insert(task_id.clone(), chosen.id.clone());
    }

    let mut transfers = Vec::new();
    for input in &subwf.inputs {
        let src = &holder[input.file.as_str()].id;
        let dst = &assignments[&input.consumer];
        if src != dst {
            transfers.push(Transfer {
                id: input.file.clone(),
                kind: TransferKind::Input,
                src: src.clone(),
                dst: dst.clone(),
                bytes: input.bytes,
            });
        }
    }
    for (p, c, bytes) in &subwf.data_deps {
        let (src, dst) = (&assignments[p], &assignments[c]);
        if src != dst {
            transfers.push(Transfer {
                id: format!("{p}->{c}"),
                kind: TransferKind::Dependency,
                src: src.clone(),
                dst: dst.clone(),
                bytes: *bytes,
            });
        }
    }

    Ok(ConcretePlan {
        subworkflow: subwf.id.clone(),
        assignments,
        transfers,
        scheduler,
        seed,
        quorum: quorum.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubWorkflowResult {
    pub subworkflow: String,
    pub t0: f64,
    /// Seconds from `t0` to the last task end.
    pub makespan: f64,
    pub log: EventLog,
}

impl SubWorkflowResult {
    pub fn records(&self) -> &[TaskRecord] {
        &self.log.records
    }
}

/// Checks the plan against the sub-workflow and its own quorum.
pub fn check_plan(plan: &ConcretePlan, subwf: &AbstractSubWorkflow) -> Result<(), GridError> {
    if plan.subworkflow != subwf.id {
        return Err(GridError::InvalidPlan(format!(
            "plan for `{}` applied to `{}`",
            plan.subworkflow, subwf.id
        )));
    }
    for t in &subwf.tasks {
        match plan.assignments.get(&t.id) {
            None => return Err(GridError::InvalidPlan(format!("task `{}` unassigned", t.id))),
            Some(r) if !plan.quorum.contains(r) => {
                return Err(GridError::InvalidPlan(format!(
                    "task `{}` assigned outside the quorum to `{r}`",
                    t.id
                )))
            }
            Some(_) => {}
        }
    }
    if plan.assignments.len() != subwf.tasks.len() {
        return Err(GridError::InvalidPlan("assignment for an unknown task".into()));
    }
    for (p, c, _) in &subwf.data_deps {
        if plan.assignments[p] != plan.assignments[c] {
            let id = format!("{p}->{c}");
            let n = plan
                .transfers
                .iter()
                .filter(|t| t.kind == TransferKind::Dependency && t.id == id)
                .count();
            if n != 1 {
                return Err(GridError::InvalidPlan(format!(
                    "dependency {id} has {n} transfer entries"
                )));
            }
        }
    }
    Ok(())
}

/// Runs the plan on a private simulation starting at `t0`.
pub fn execute_plan(
    plan: &ConcretePlan,
    subwf: &AbstractSubWorkflow,
    pool: &[ResourceDescriptor],
    t0: f64,
) -> Result<SubWorkflowResult, GridError> {
    check_plan(plan, subwf)?;
    let index: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let res_index = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| GridError::UnknownResource(id.to_string()))
    };
    let task_index: HashMap<&str, usize> = subwf
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();

    let tasks = subwf
        .tasks
        .iter()
        .map(|t| {
            Ok(SimTask {
                id: t.id.clone(),
                work: t.work,
                resource: res_index(&plan.assignments[&t.id])?,
            })
        })
        .collect::<Result<Vec<_>, GridError>>()?;
    let edges = subwf
        .data_deps
        .iter()
        .map(|(p, c, bytes)| SimEdge {
            from: task_index[p.as_str()],
            to: task_index[c.as_str()],
            bytes: *bytes,
        })
        .collect();
    let inputs = subwf
        .inputs
        .iter()
        .map(|i| {
            let consumer = task_index[i.consumer.as_str()];
            let source = match plan
                .transfers
                .iter()
                .find(|t| t.kind == TransferKind::Input && t.id == i.file)
            {
                Some(t) => res_index(&t.src)?,
                None => tasks[consumer].resource,
            };
            Ok(SimInput {
                source,
                to: consumer,
                bytes: i.bytes,
            })
        })
        .collect::<Result<Vec<_>, GridError>>()?;

    let job = SimJob { tasks, edges, inputs };
    let log = simulate(pool, &job, t0)?;
    let makespan = log.max_end().map_or(0.0, |end| end - t0);
    Ok(SubWorkflowResult {
        subworkflow: subwf.id.clone(),
        t0,
        makespan,
        log,
    })
}

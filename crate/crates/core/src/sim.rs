//! Deterministic discrete-event simulation of task execution and data
//! transfer on the resource pool.
//!
//! Each resource runs one task at a time. A task becomes ready once every
//! incoming transfer has arrived; at each instant an idle resource starts
//! its waiting task with the earliest ready time, ties by task id. Events
//! with equal time pop in insertion order, so identical inputs always yield
//! identical logs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resource::{metric_at, ResourceDescriptor};

/// Share of cpu capacity a fully loaded resource loses.
pub const LOAD_SLOWDOWN_CAP: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation stuck: queue drained with unfinished tasks {unfinished:?}")]
    StuckSimulation { unfinished: Vec<String> },
    #[error("invalid simulation job: {0}")]
    InvalidJob(String),
}

/// Seconds to run `work` units on `res`, with the system load frozen at the
/// start instant `t`.
pub fn exec_time(work: f64, res: &ResourceDescriptor, t: f64) -> f64 {
    work / (res.cpu_rate * (1.0 - metric_at(&res.sys_trace, t) * LOAD_SLOWDOWN_CAP))
}

/// Seconds to move `bytes` from `src` to `dst`; free within a site.
pub fn transfer_time(bytes: u64, src: &ResourceDescriptor, dst: &ResourceDescriptor) -> f64 {
    if src.site == dst.site {
        0.0
    } else {
        bytes as f64 / src.bandwidth.min(dst.bandwidth) + src.latency.max(dst.latency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn starting_at(t: f64) -> Self {
        SimClock { now: t }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.now, "clock moved backwards: {} -> {t}", self.now);
        self.now = self.now.max(t);
    }
}

struct Entry<E> {
    time: f64,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then_with(|| self.seq.cmp(&other.seq))
    }
}

/// Min-queue on `(time, sequence number)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the sequence number assigned to the event.
    pub fn push(&mut self, time: f64, payload: E) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, seq, payload }));
        seq
    }

    pub fn pop(&mut self) -> Option<(f64, u64, E)> {
        self.heap.pop().map(|Reverse(e)| (e.time, e.seq, e.payload))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTask {
    pub id: String,
    pub work: f64,
    /// Index into the pool.
    pub resource: usize,
}

/// Data dependency between two tasks (indices into the task list).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEdge {
    pub from: usize,
    pub to: usize,
    pub bytes: u64,
}

/// A file staged from `source` (pool index) to task `to` at simulation start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimInput {
    pub source: usize,
    pub to: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimJob {
    pub tasks: Vec<SimTask>,
    pub edges: Vec<SimEdge>,
    pub inputs: Vec<SimInput>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Ready(usize),
    Arrive(usize),
    Finish(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceState {
    pub id: String,
    pub busy_until: f64,
    /// Task indices in execution order.
    pub executed: Vec<usize>,
    running: Option<usize>,
    /// `(ready time, task index)`
    waiting: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: String,
    pub resource: String,
    pub start: f64,
    pub end: f64,
}

/// Per-task execution records, ordered by start time then task id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<TaskRecord>,
}

impl EventLog {
    pub fn max_end(&self) -> Option<f64> {
        self.records.iter().map(|r| r.end).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,resource,start,end\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.task, r.resource, r.start, r.end));
        }
        out
    }
}

pub struct Simulation<'a> {
    pool: &'a [ResourceDescriptor],
    job: &'a SimJob,
    clock: SimClock,
    queue: EventQueue<Event>,
    states: Vec<ResourceState>,
    pending: Vec<usize>,
    start: Vec<Option<f64>>,
    end: Vec<Option<f64>>,
    out_edges: Vec<Vec<usize>>,
    dispatch_order: Vec<usize>,
}

impl<'a> Simulation<'a> {
    pub fn new(pool: &'a [ResourceDescriptor], job: &'a SimJob) -> Result<Self, SimError> {
        let n = job.tasks.len();
        for t in &job.tasks {
            if t.resource >= pool.len() {
                return Err(SimError::InvalidJob(format!(
                    "task {} on unknown resource #{}",
                    t.id, t.resource
                )));
            }
            if !(t.work.is_finite() && t.work > 0.0) {
                return Err(SimError::InvalidJob(format!("task {} has non-positive work", t.id)));
            }
        }
        let mut pending = vec![0; n];
        let mut out_edges = vec![Vec::new(); n];
        for (i, e) in job.edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(SimError::InvalidJob(format!("edge #{i} references a missing task")));
            }
            pending[e.to] += 1;
            out_edges[e.from].push(i);
        }
        for (i, inp) in job.inputs.iter().enumerate() {
            if inp.to >= n || inp.source >= pool.len() {
                return Err(SimError::InvalidJob(format!(
                    "input #{i} references a missing task or resource"
                )));
            }
            pending[inp.to] += 1;
        }
        let mut dispatch_order: Vec<usize> = (0..pool.len()).collect();
        dispatch_order.sort_by(|&a, &b| pool[a].id.cmp(&pool[b].id));
        Ok(Simulation {
            pool,
            job,
            clock: SimClock::default(),
            queue: EventQueue::new(),
            states: pool
                .iter()
                .map(|r| ResourceState {
                    id: r.id.clone(),
                    busy_until: 0.0,
                    executed: Vec::new(),
                    running: None,
                    waiting: Vec::new(),
                })
                .collect(),
            pending,
            start: vec![None; n],
            end: vec![None; n],
            out_edges,
            dispatch_order,
        })
    }

    /// Sets the clock to `t0` and queues ready events for tasks without
    /// predecessors plus arrival events for staged inputs.
    pub fn seed(&mut self, t0: f64) {
        self.clock = SimClock::starting_at(t0);
        for (i, &p) in self.pending.iter().enumerate() {
            if p == 0 {
                self.queue.push(t0, Event::Ready(i));
            }
        }
        for inp in &self.job.inputs {
            let src = &self.pool[inp.source];
            let dst = &self.pool[self.job.tasks[inp.to].resource];
            self.queue
                .push(t0 + transfer_time(inp.bytes, src, dst), Event::Arrive(inp.to));
        }
    }

    pub fn states(&self) -> &[ResourceState] {
        &self.states
    }

    pub fn run_to_completion(&mut self) -> Result<EventLog, SimError> {
        while let Some(now) = self.queue.peek_time() {
            self.clock.advance_to(now);
            while self.queue.peek_time() == Some(now) {
                let (_, _, event) = self.queue.pop().expect("peeked event");
                self.handle(event);
            }
            self.dispatch();
        }

        let unfinished: Vec<String> = self
            .end
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_none())
            .map(|(i, _)| self.job.tasks[i].id.clone())
            .collect();
        if !unfinished.is_empty() {
            return Err(SimError::StuckSimulation { unfinished });
        }

        let mut records: Vec<TaskRecord> = self
            .job
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| TaskRecord {
                task: t.id.clone(),
                resource: self.pool[t.resource].id.clone(),
                start: self.start[i].expect("finished task started"),
                end: self.end[i].expect("finished task ended"),
            })
            .collect();
        records.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.task.cmp(&b.task)));
        Ok(EventLog { records })
    }

    fn handle(&mut self, event: Event) {
        let now = self.clock.now();
        match event {
            Event::Ready(task) => self.make_ready(task, now),
            Event::Arrive(task) => {
                self.pending[task] -= 1;
                if self.pending[task] == 0 {
                    self.make_ready(task, now);
                }
            }
            Event::Finish(task) => {
                self.end[task] = Some(now);
                let r = self.job.tasks[task].resource;
                self.states[r].running = None;
                for &ei in &self.out_edges[task] {
                    let e = self.job.edges[ei];
                    let src = &self.pool[r];
                    let dst = &self.pool[self.job.tasks[e.to].resource];
                    self.queue
                        .push(now + transfer_time(e.bytes, src, dst), Event::Arrive(e.to));
                }
            }
        }
    }

    fn make_ready(&mut self, task: usize, now: f64) {
        let r = self.job.tasks[task].resource;
        self.states[r].waiting.push((now, task));
    }

    fn dispatch(&mut self) {
        let now = self.clock.now();
        for &r in &self.dispatch_order {
            let state = &mut self.states[r];
            if state.running.is_some() || state.waiting.is_empty() {
                continue;
            }
            let tasks = &self.job.tasks;
            let (pos, &(_, task)) = state
                .waiting
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.0.total_cmp(&b.0).then_with(|| tasks[a.1].id.cmp(&tasks[b.1].id)))
                .expect("non-empty waiting list");
            state.waiting.swap_remove(pos);
            let finish = now + exec_time(tasks[task].work, &self.pool[r], now);
            state.running = Some(task);
            state.busy_until = finish;
            state.executed.push(task);
            self.start[task] = Some(now);
            self.queue.push(finish, Event::Finish(task));
        }
    }
}

/// Builds, seeds and runs a simulation in one call.
pub fn simulate(pool: &[ResourceDescriptor], job: &SimJob, t0: f64) -> Result<EventLog, SimError> {
    let mut sim = Simulation::new(pool, job)?;
    sim.seed(t0);
    sim.run_to_completion()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::MetricTrace;
    use proptest::prelude::*;

    fn res(id: &str, site: &str, rate: f64, sys: f64, bw: f64, lat: f64) -> ResourceDescriptor {
        ResourceDescriptor {
            id: id.into(),
            site: site.into(),
            cpu_rate: rate,
            bandwidth: bw,
            latency: lat,
            net_trace: MetricTrace::constant(0.0),
            sys_trace: MetricTrace::constant(sys),
        }
    }

    fn task(id: &str, work: f64, resource: usize) -> SimTask {
        SimTask {
            id: id.into(),
            work,
            resource,
        }
    }

    #[test]
    fn exec_time_examples() {
        assert_eq!(exec_time(100.0, &res("a", "s", 100.0, 0.0, 1.0, 0.0), 0.0), 1.0);
        let t = exec_time(100.0, &res("a", "s", 100.0, 1.0, 1.0, 0.0), 0.0);
        assert!((t - 10.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_time_examples() {
        let a = res("a", "x", 1.0, 0.0, 1e6, 0.1);
        let b = res("b", "y", 1.0, 0.0, 1e6, 0.05);
        assert!((transfer_time(1_000_000, &a, &b) - 1.1).abs() < 1e-12);
        assert!((transfer_time(0, &a, &b) - 0.1).abs() < 1e-12);
        let c = res("c", "x", 1.0, 0.0, 10.0, 5.0);
        assert_eq!(transfer_time(1_000_000, &a, &c), 0.0);
    }

    #[test]
    fn queue_pops_time_then_sequence() {
        let mut q = EventQueue::new();
        q.push(2.0, "late");
        q.push(1.0, "first");
        q.push(1.0, "second");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|e| e.2)).collect();
        assert_eq!(order, ["first", "second", "late"]);
    }

    #[test]
    fn single_slot_serializes() {
        let pool = [res("r1", "s", 1.0, 0.0, 1.0, 0.0)];
        let job = SimJob {
            tasks: vec![task("a", 1.0, 0), task("b", 1.0, 0)],
            ..Default::default()
        };
        let log = simulate(&pool, &job, 0.0).unwrap();
        let ends: Vec<f64> = log.records.iter().map(|r| r.end).collect();
        assert_eq!(ends, [1.0, 2.0]);
        assert_eq!(log.records[0].task, "a");
    }

    #[test]
    fn two_resources_run_in_parallel() {
        let pool = [res("r1", "s", 1.0, 0.0, 1.0, 0.0), res("r2", "s", 1.0, 0.0, 1.0, 0.0)];
        let job = SimJob {
            tasks: vec![task("a", 1.0, 0), task("b", 1.0, 1)],
            ..Default::default()
        };
        let log = simulate(&pool, &job, 0.0).unwrap();
        assert!(log.records.iter().all(|r| r.end == 1.0));
    }

    #[test]
    fn chain_with_transfer() {
        // 0.5 s transfer: zero bytes across sites with 0.5 s latency.
        let pool = [res("r1", "x", 1.0, 0.0, 1.0, 0.5), res("r2", "y", 1.0, 0.0, 1.0, 0.0)];
        let job = SimJob {
            tasks: vec![task("A", 1.0, 0), task("B", 1.0, 1)],
            edges: vec![SimEdge {
                from: 0,
                to: 1,
                bytes: 0,
            }],
            inputs: vec![],
        };
        let log = simulate(&pool, &job, 0.0).unwrap();
        let b = log.records.iter().find(|r| r.task == "B").unwrap();
        assert_eq!(b.end, 2.5);
    }

    #[test]
    fn staged_input_delays_start() {
        let pool = [
            res("r1", "x", 1.0, 0.0, 100.0, 0.0),
            res("r2", "y", 1.0, 0.0, 100.0, 0.0),
        ];
        let job = SimJob {
            tasks: vec![task("A", 1.0, 1)],
            edges: vec![],
            inputs: vec![SimInput {
                source: 0,
                to: 0,
                bytes: 200,
            }],
        };
        let log = simulate(&pool, &job, 10.0).unwrap();
        assert_eq!(log.records[0].start, 12.0);
        assert_eq!(log.records[0].end, 13.0);
    }

    #[test]
    fn cycle_gets_stuck() {
        let pool = [res("r1", "s", 1.0, 0.0, 1.0, 0.0)];
        let job = SimJob {
            tasks: vec![task("a", 1.0, 0), task("b", 1.0, 0), task("c", 1.0, 0)],
            edges: vec![
                SimEdge {
                    from: 0,
                    to: 1,
                    bytes: 0,
                },
                SimEdge {
                    from: 1,
                    to: 0,
                    bytes: 0,
                },
            ],
            inputs: vec![],
        };
        assert_eq!(
            simulate(&pool, &job, 0.0),
            Err(SimError::StuckSimulation {
                unfinished: vec!["a".into(), "b".into()]
            })
        );
    }

    #[test]
    fn invalid_job_rejected() {
        let pool = [res("r1", "s", 1.0, 0.0, 1.0, 0.0)];
        let job = SimJob {
            tasks: vec![task("a", 1.0, 3)],
            ..Default::default()
        };
        assert!(matches!(simulate(&pool, &job, 0.0), Err(SimError::InvalidJob(_))));
    }

    #[test]
    fn csv_format() {
        let log = EventLog {
            records: vec![TaskRecord {
                task: "a".into(),
                resource: "r".into(),
                start: 0.5,
                end: 1.0 / 3.0 + 1.0,
            }],
        };
        assert_eq!(log.to_csv(), "task,resource,start,end\na,r,0.500000,1.333333\n");
    }

    fn random_job() -> impl Strategy<Value = (Vec<ResourceDescriptor>, SimJob)> {
        let resources =
            proptest::collection::vec((1.0f64..50.0, 0.0f64..1.0, 0usize..2, 1.0f64..100.0, 0.0f64..1.0), 1..4);
        (resources, 1usize..9)
            .prop_flat_map(|(rs, n)| {
                let nres = rs.len();
                let tasks = proptest::collection::vec((0.5f64..20.0, 0..nres), n);
                let edges = proptest::collection::vec((0..n, 0..n, 0u64..200), 0..12);
                (Just(rs), tasks, edges)
            })
            .prop_map(|(rs, tasks, edges)| {
                let pool = rs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (rate, sys, site, bw, lat))| {
                        res(&format!("r{i}"), &format!("s{site}"), rate, sys, bw, lat)
                    })
                    .collect();
                let job = SimJob {
                    tasks: tasks
                        .into_iter()
                        .enumerate()
                        .map(|(i, (w, r))| task(&format!("t{i}"), w, r))
                        .collect(),
                    edges: edges
                        .into_iter()
                        .filter(|(a, b, _)| a < b)
                        .map(|(from, to, bytes)| SimEdge { from, to, bytes })
                        .collect(),
                    inputs: vec![],
                };
                (pool, job)
            })
    }

    proptest! {
        #[test]
        fn kernel_invariants((pool, job) in random_job(), t0 in 0.0f64..1000.0) {
            let log = simulate(&pool, &job, t0).unwrap();
            prop_assert_eq!(&log, &simulate(&pool, &job, t0).unwrap());
            let rec = |id: &str| log.records.iter().find(|r| r.task == id).unwrap();
            // causality
            for e in &job.edges {
                let p = rec(&job.tasks[e.from].id);
                let c = rec(&job.tasks[e.to].id);
                let arrive = p.end + transfer_time(e.bytes, &pool[job.tasks[e.from].resource], &pool[job.tasks[e.to].resource]);
                prop_assert!(c.start >= arrive);
            }
            // single slot
            for r in &pool {
                let mut spans: Vec<(f64, f64)> = log.records.iter().filter(|x| x.resource == r.id).map(|x| (x.start, x.end)).collect();
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                for w in spans.windows(2) {
                    prop_assert!(w[0].1 <= w[1].0);
                }
            }
            prop_assert!(log.records.iter().all(|r| r.start >= t0 && r.end > r.start));
        }
    }
}

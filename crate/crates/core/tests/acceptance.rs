//! Acceptance suite. Runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits nonzero if any fails.
//!
//! Set `HWMS_BLESS=1` to (re)write the pinned policy-comparison summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hwms_core::bundle;
use hwms_core::commands::{cmd_run, DocumentPaths};
use hwms_core::ecg::{extract_features, run_vhs_loop, synthesize_ecg, EcgError, SignalSpec, SynthParams, VhsSettings};
use hwms_core::experiments::{experiment_policy_comparison, parse_experiment_spec};
use hwms_core::grid::{execute_plan, generate_catalogs, map_workflow, ConcretePlan, SchedulerKind, TransferKind};
use hwms_core::hybrid::run_workflow;
use hwms_core::policy::{
    decide_policy, enforce, Action, ConfigRegistry, InfoBase, Op, Performance, Policy, PolicyError, PolicyKind,
    Predicate, Scalar, Sla,
};
use hwms_core::resource::{
    allocation_cost, generate_arq, horizon_quorums, metric_at, parse_pool, rank_resources, sample_grid,
    AllocationCostParams, MetricTrace, QuorumLevel, ResourceDescriptor,
};
use hwms_core::workflow::{AbstractSubWorkflow, InputFile, ServiceLevel, TaskSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn random_trace(rng: &mut ChaCha8Rng) -> MetricTrace {
    MetricTrace {
        base: rng.random_range(0.0..1.0),
        amplitude: rng.random_range(0.0..0.4),
        period: rng.random_range(600.0..90_000.0),
        phase: rng.random_range(0.0..6.3),
        noise_sigma: rng.random_range(0.0..0.1),
        seed: rng.random(),
    }
}

fn random_pool(rng: &mut ChaCha8Rng, n: usize) -> Vec<ResourceDescriptor> {
    (0..n)
        .map(|i| ResourceDescriptor {
            id: format!("r{i:02}"),
            site: format!("s{}", rng.random_range(0..3)),
            cpu_rate: rng.random_range(1.0..50.0),
            bandwidth: rng.random_range(1e6..1e8),
            latency: rng.random_range(0.0..0.1),
            net_trace: random_trace(rng),
            sys_trace: random_trace(rng),
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err = 0.0f64;
    for _ in 0..1000 {
        let res = &random_pool(&mut rng, 1)[0];
        let t = rng.random_range(0.0..200_000.0);
        let (a, b) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let params = AllocationCostParams::new(a, b).map_err(|e| e.to_string())?;
        let expected = a * metric_at(&res.net_trace, t) + b * metric_at(&res.sys_trace, t);
        max_err = max_err.max((allocation_cost(res, t, params) - expected).abs());
    }
    ensure(max_err <= 1e-12, format!("max |AC - (a*net + b*sys)| = {max_err:e}"))?;

    let ids = |r: Vec<(String, f64)>| r.into_iter().map(|(id, _)| id).collect::<Vec<_>>();
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let pool = random_pool(&mut rng, n);
        let t = rng.random_range(0.0..200_000.0);
        let (a, b) = (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0));
        let base = ids(rank_resources(&pool, t, AllocationCostParams::new(a, b).unwrap()).unwrap());
        for c in [0.5, 2.0, 10.0] {
            let scaled = ids(rank_resources(&pool, t, AllocationCostParams::new(c * a, c * b).unwrap()).unwrap());
            ensure(scaled == base, format!("ranking changed under scale {c}"))?;
        }
    }
    within(started.elapsed(), 1.0)?;
    Ok(format!(
        "1000 samples, max error {max_err:e}; ranking scale-invariant on 100 pools"
    ))
}

/// Mean AC of `members` over `times`, evaluated sample by sample.
fn subset_mean(pool: &[ResourceDescriptor], members: &[usize], times: &[f64], params: AllocationCostParams) -> f64 {
    let mut sum = 0.0;
    for &t in times {
        for &m in members {
            sum += params.alpha * metric_at(&pool[m].net_trace, t) + params.beta * metric_at(&pool[m].sys_trace, t);
        }
    }
    sum / (times.len() * members.len()) as f64
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let pool = parse_pool(bundle::POOL).map_err(|e| e.to_string())?;
    let times = sample_grid(24, 60);
    let mut notes = Vec::new();
    for params in [
        AllocationCostParams::default(),
        AllocationCostParams::new(0.7, 0.3).unwrap(),
    ] {
        let quorums = horizon_quorums(&pool, &times, params).map_err(|e| e.to_string())?;
        let l1 = &quorums[0];
        ensure(l1.members.len() == 2, "L1 of an 8-resource pool has 2 members")?;
        // Exhaustive: all 28 two-element subsets; ties go to the
        // lexicographically smallest id pair.
        let costs: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| {
                pool.iter()
                    .map(|r| params.alpha * metric_at(&r.net_trace, t) + params.beta * metric_at(&r.sys_trace, t))
                    .collect()
            })
            .collect();
        let mut best: Option<(f64, Vec<&str>)> = None;
        let mut count = 0;
        for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                count += 1;
                let sum: f64 = costs.iter().map(|row| row[i] + row[j]).sum();
                let mean = sum / (2 * times.len()) as f64;
                if best.as_ref().is_none_or(|(m, _)| mean < *m) {
                    best = Some((mean, vec![pool[i].id.as_str(), pool[j].id.as_str()]));
                }
            }
        }
        ensure(count == 28, "28 subsets")?;
        let (best_mean, best_ids) = best.unwrap();
        let mut l1_ids: Vec<&str> = l1.members.iter().map(String::as_str).collect();
        l1_ids.sort_unstable();
        ensure(
            (l1.mean_cost - best_mean).abs() <= 1e-12 * best_mean.max(1.0),
            format!("L1 mean {} vs subset minimum {best_mean}", l1.mean_cost),
        )?;
        ensure(l1_ids == best_ids, format!("L1 {l1_ids:?} vs argmin {best_ids:?}"))?;
        ensure(
            quorums.windows(2).all(|w| w[0].mean_cost <= w[1].mean_cost),
            "quorum means not ascending",
        )?;
        notes.push(format!(
            "a={}: L1 {:?} mean {:.6}",
            params.alpha, l1.members, l1.mean_cost
        ));
    }
    within(started.elapsed(), 5.0)?;
    Ok(notes.join("; "))
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = AllocationCostParams::default();
    let times = sample_grid(24, 4);
    for k in 0..100 {
        let n = rng.random_range(4..=16);
        let pool = random_pool(&mut rng, n);
        let t = rng.random_range(0.0..86_400.0);
        let q: Vec<_> = QuorumLevel::ALL
            .iter()
            .map(|&l| generate_arq(&pool, l, t, params).unwrap())
            .collect();
        for w in q.windows(2) {
            ensure(
                w[0].members.iter().all(|m| w[1].contains(m)),
                format!("pool {k}: {:?} not nested", w[0].selection),
            )?;
        }
        let mean = |members: &[String]| {
            let idx: Vec<usize> = members
                .iter()
                .map(|m| pool.iter().position(|r| &r.id == m).unwrap())
                .collect();
            subset_mean(&pool, &idx, &[t], params)
        };
        let means: Vec<f64> = q.iter().map(|x| mean(&x.members)).collect();
        ensure(
            means[0] <= means[1] && means[1] <= means[2],
            format!("pool {k}: means {means:?}"),
        )?;

        let h = horizon_quorums(&pool, &times, params).unwrap();
        ensure(
            h.windows(2)
                .all(|w| w[0].members.iter().all(|m| w[1].members.contains(m)) && w[0].mean_cost <= w[1].mean_cost),
            format!("pool {k}: horizon quorums not nested"),
        )?;
    }
    within(started.elapsed(), 10.0)?;
    Ok("100 pools, N in [4, 16]: L1 <= L2 <= L3 by inclusion and mean AC".into())
}

/// Independent list-scheduling simulation of a fixed assignment: the
/// unscheduled task with the earliest feasible start goes next, ties by
/// ready time then id.
fn oracle_makespan(
    subwf: &AbstractSubWorkflow,
    assignment: &BTreeMap<String, String>,
    input_source: &BTreeMap<String, String>,
    pool: &[ResourceDescriptor],
    t0: f64,
) -> f64 {
    let res = |id: &str| pool.iter().find(|r| r.id == id).unwrap();
    let xfer = |bytes: u64, a: &ResourceDescriptor, b: &ResourceDescriptor| {
        if a.site == b.site {
            0.0
        } else {
            bytes as f64 / a.bandwidth.min(b.bandwidth) + a.latency.max(b.latency)
        }
    };
    let mut end: BTreeMap<&str, f64> = BTreeMap::new();
    let mut free: BTreeMap<&str, f64> = pool.iter().map(|r| (r.id.as_str(), t0)).collect();
    while end.len() < subwf.tasks.len() {
        let mut best: Option<(f64, f64, &str)> = None;
        for t in &subwf.tasks {
            if end.contains_key(t.id.as_str()) {
                continue;
            }
            let preds: Vec<_> = subwf.data_deps.iter().filter(|(_, c, _)| *c == t.id).collect();
            if preds.iter().any(|(p, _, _)| !end.contains_key(p.as_str())) {
                continue;
            }
            let here = res(&assignment[&t.id]);
            let mut ready = t0;
            for (p, _, bytes) in preds {
                ready = ready.max(end[p.as_str()] + xfer(*bytes, res(&assignment[p]), here));
            }
            for i in subwf.inputs.iter().filter(|i| i.consumer == t.id) {
                ready = ready.max(t0 + xfer(i.bytes, res(&input_source[&i.file]), here));
            }
            let start = ready.max(free[here.id.as_str()]);
            let key = (start, ready, t.id.as_str());
            if best.is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                best = Some(key);
            }
        }
        let (start, _, id) = best.expect("some task schedulable");
        let task = subwf.task(id).unwrap();
        let r = res(&assignment[id]);
        let speed = r.cpu_rate * (1.0 - metric_at(&r.sys_trace, start) * 0.9);
        let finish = start + task.work / speed;
        end.insert(id, finish);
        free.insert(r.id.as_str(), finish);
    }
    end.values().copied().fold(t0, f64::max) - t0
}

fn input_sources(plan: &ConcretePlan, subwf: &AbstractSubWorkflow) -> BTreeMap<String, String> {
    subwf
        .inputs
        .iter()
        .map(|i| {
            let src = plan
                .transfers
                .iter()
                .find(|t| t.kind == TransferKind::Input && t.id == i.file)
                .map(|t| t.src.clone())
                .unwrap_or_else(|| plan.assignments[&i.consumer].clone());
            (i.file.clone(), src)
        })
        .collect()
}

fn shapes() -> Vec<(usize, Vec<(usize, usize)>)> {
    vec![
        (1, vec![]),
        (2, vec![]),
        (2, vec![(0, 1)]),
        (3, vec![]),
        (3, vec![(0, 1), (1, 2)]),
        (3, vec![(0, 1), (0, 2)]),
        (3, vec![(0, 2), (1, 2)]),
        (4, vec![]),
        (4, vec![(0, 1), (1, 2), (2, 3)]),
        (4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]),
        (4, vec![(0, 1), (0, 2), (0, 3)]),
        (4, vec![(0, 3), (1, 3), (2, 3)]),
        (4, vec![(0, 1), (2, 3)]),
        (4, vec![(0, 2), (1, 2), (1, 3)]),
    ]
}

fn instance(n: usize, deps: &[(usize, usize)], variant: u64) -> AbstractSubWorkflow {
    let mut rng = ChaCha8Rng::seed_from_u64(variant * 31 + n as u64 * 7 + deps.len() as u64);
    let name = |i: usize| format!("t{i}");
    AbstractSubWorkflow {
        id: format!("inst-{n}-{variant}"),
        tasks: (0..n)
            .map(|i| TaskSpec {
                id: name(i),
                work: rng.random_range(10.0..200.0),
                transformation: format!("x{}", i % 2),
            })
            .collect(),
        data_deps: deps
            .iter()
            .map(|&(a, b)| (name(a), name(b), rng.random_range(0..50_000_000)))
            .collect(),
        inputs: vec![InputFile {
            file: "in.dat".into(),
            bytes: rng.random_range(0..20_000_000),
            consumer: name(0),
        }],
    }
}

fn small_pools() -> Vec<Vec<ResourceDescriptor>> {
    let r = |id: &str, site: &str, cpu: f64, sys: f64| ResourceDescriptor {
        id: id.into(),
        site: site.into(),
        cpu_rate: cpu,
        bandwidth: 1e7,
        latency: 0.05,
        net_trace: MetricTrace::constant(0.2),
        sys_trace: MetricTrace {
            amplitude: 0.2,
            period: 3600.0,
            noise_sigma: 0.05,
            seed: 9,
            ..MetricTrace::constant(sys)
        },
    };
    vec![
        vec![r("a", "s1", 10.0, 0.3)],
        vec![r("a", "s1", 10.0, 0.3), r("b", "s2", 6.0, 0.1)],
        vec![r("a", "s1", 10.0, 0.5), r("b", "s1", 8.0, 0.2), r("c", "s2", 4.0, 0.0)],
    ]
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let params = AllocationCostParams::default();
    let t0 = 1800.0;
    let (mut instances, mut checks) = (0, 0);
    let mut ratios = Vec::new();
    for pool in small_pools() {
        let quorum = generate_arq(&pool, QuorumLevel::L3, t0, params).map_err(|e| e.to_string())?;
        for (n, deps) in shapes() {
            for variant in 0..2 {
                instances += 1;
                let subwf = instance(n, &deps, variant);
                let catalogs = generate_catalogs(&subwf, &quorum, &pool).map_err(|e| e.to_string())?;
                let mut mineft = None;
                for sched in [SchedulerKind::MinEft, SchedulerKind::RoundRobin, SchedulerKind::Random] {
                    let plan = map_workflow(&subwf, &catalogs, &quorum, &pool, sched, variant, t0)
                        .map_err(|e| e.to_string())?;
                    let got = execute_plan(&plan, &subwf, &pool, t0)
                        .map_err(|e| e.to_string())?
                        .makespan;
                    let want = oracle_makespan(&subwf, &plan.assignments, &input_sources(&plan, &subwf), &pool, t0);
                    checks += 1;
                    ensure(
                        (got - want).abs() <= 1e-9,
                        format!("{} {sched}: kernel {got} vs oracle {want}", subwf.id),
                    )?;
                    if sched == SchedulerKind::MinEft {
                        mineft = Some((got, input_sources(&plan, &subwf)));
                    }
                }
                // Enumerated optimum over every assignment to quorum members.
                let (mineft, sources) = mineft.unwrap();
                let m = quorum.members.len();
                let mut optimum = f64::INFINITY;
                for code in 0..m.pow(n as u32) {
                    let assignment: BTreeMap<String, String> = (0..n)
                        .map(|i| (format!("t{i}"), quorum.members[(code / m.pow(i as u32)) % m].clone()))
                        .collect();
                    optimum = optimum.min(oracle_makespan(&subwf, &assignment, &sources, &pool, t0));
                }
                let ratio = mineft / optimum;
                ensure(
                    ratio >= 1.0 - 1e-12,
                    format!("{}: MinEFT/optimum ratio {ratio} < 1", subwf.id),
                )?;
                ratios.push(ratio);
            }
        }
    }
    ensure(instances >= 50, format!("only {instances} instances"))?;
    within(started.elapsed(), 30.0)?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().copied().fold(1.0, f64::max);
    Ok(format!(
        "{instances} instances, {checks} plans match oracle; MinEFT/optimum mean {mean:.4}, max {max:.4}"
    ))
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/policy_comparison_summary.csv")
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let spec = parse_experiment_spec(bundle::EXPERIMENT).map_err(|e| e.to_string())?;
    ensure(spec.replicates == 20, "shipped spec runs 20 replicates")?;
    let template = bundle::scenario("High Performance").map_err(|e| e.to_string())?;
    let c = experiment_policy_comparison(&spec, &template).map_err(|e| e.to_string())?;
    ensure(c.error.is_none(), format!("{:?}", c.error))?;
    let a = c.summary_of("SET-A").ok_or("no SET-A")?;
    let b = c.summary_of("SET-B").ok_or("no SET-B")?;
    ensure(a.mean < b.mean, format!("mean A {} >= mean B {}", a.mean, b.mean))?;
    ensure(
        b.stddev > a.stddev,
        format!("stddev B {} <= stddev A {}", b.stddev, a.stddev),
    )?;

    let csv = c.summary_csv();
    let golden = golden_path();
    if std::env::var_os("HWMS_BLESS").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).map_err(|e| e.to_string())?;
        fs::write(&golden, &csv).map_err(|e| e.to_string())?;
    }
    let pinned = fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure(pinned == csv, format!("summary differs from golden file:\n{csv}"))?;
    within(started.elapsed(), 60.0)?;
    Ok(format!(
        "mean A {:.3} < B {:.3}; stddev B {:.3} > A {:.3}; summary matches golden",
        a.mean, b.mean, b.stddev, a.stddev
    ))
}

fn random_sla(rng: &mut ChaCha8Rng) -> Sla {
    Sla::explicit(
        *["u1", "u2", "u3"].choose(rng).unwrap(),
        *QuorumLevel::ALL.choose(rng).unwrap(),
        *[Performance::Fast, Performance::Standard, Performance::Economy]
            .choose(rng)
            .unwrap(),
        *ServiceLevel::ALL.choose(rng).unwrap(),
    )
}

fn random_predicate(rng: &mut ChaCha8Rng) -> Predicate {
    let eq_or_ne = |rng: &mut ChaCha8Rng| if rng.random_bool(0.7) { Op::Eq } else { Op::Ne };
    match rng.random_range(0..6) {
        0 => Predicate::new("user_id", eq_or_ne(rng), *["u1", "u2", "u3"].choose(rng).unwrap()),
        1 => Predicate::new(
            "resource_level",
            eq_or_ne(rng),
            *["L1", "L2", "L3"].choose(rng).unwrap(),
        ),
        2 => Predicate::new(
            "performance",
            eq_or_ne(rng),
            *["Fast", "Standard", "Economy"].choose(rng).unwrap(),
        ),
        3 => Predicate::new(
            "service_level",
            eq_or_ne(rng),
            *["EcgOnly", "EcgDetect", "EcgVhs"].choose(rng).unwrap(),
        ),
        4 => Predicate::new("grid.alert", eq_or_ne(rng), rng.random_bool(0.5)),
        _ => Predicate::new(
            "grid.load",
            *[Op::Le, Op::Ge, Op::Eq].choose(rng).unwrap(),
            (rng.random_range(0..5) as f64) * 0.25,
        ),
    }
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    match rng.random_range(0..5) {
        0 => Action::new("resource.level", *["L1", "L2", "L3", "Random"].choose(rng).unwrap()),
        1 => Action::new("resource.alpha", rng.random_range(0.0..1.0)),
        2 => Action::new(
            "scheduler.kind",
            *["MinEFT", "RoundRobin", "Random"].choose(rng).unwrap(),
        ),
        3 => Action::new("vhs.max_iter", rng.random_range(1..10i64)),
        _ => Action::new("app.workflow", *["EcgOnly", "EcgDetect", "EcgVhs"].choose(rng).unwrap()),
    }
}

/// Condition semantics restated from scratch: SLA fields as strings,
/// grid.alert as a bool, grid.load as a number.
fn oracle_holds(p: &Predicate, sla: &Sla, alert: bool, load: f64) -> bool {
    let text = |v: &Scalar| match v {
        Scalar::Str(s) => s.clone(),
        other => format!("{other}"),
    };
    let sla_value = match p.key.as_str() {
        "user_id" => Some(sla.user_id.clone()),
        "resource_level" => sla.resource_level.map(|l| l.as_str().to_string()),
        "performance" => sla.performance.map(|x| x.as_str().to_string()),
        "service_level" => sla.service_level.map(|x| x.as_str().to_string()),
        _ => None,
    };
    match (p.key.as_str(), &p.value) {
        (_, v) if sla_value.is_some() => {
            let eq = sla_value.unwrap() == text(v);
            match p.op {
                Op::Eq => eq,
                Op::Ne => !eq,
                _ => unreachable!("string predicates use == and !="),
            }
        }
        ("grid.alert", Scalar::Bool(b)) => match p.op {
            Op::Eq => alert == *b,
            Op::Ne => alert != *b,
            _ => unreachable!(),
        },
        ("grid.load", v) => {
            let x = match v {
                Scalar::Real(x) => *x,
                Scalar::Int(i) => *i as f64,
                _ => unreachable!(),
            };
            match p.op {
                Op::Eq => load == x,
                Op::Ne => load != x,
                Op::Le => load <= x,
                Op::Ge => load >= x,
            }
        }
        _ => unreachable!("generated keys only"),
    }
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kinds = [
        PolicyKind::AppService,
        PolicyKind::Resource,
        PolicyKind::LowLevelWorkflow,
    ];
    let (mut decided, mut unmatched) = (0, 0);
    for trial in 0..200 {
        let sla = random_sla(&mut rng);
        let mut info = InfoBase::default();
        let alert = rng.random_bool(0.3);
        let load = rng.random_range(0..5) as f64 * 0.25;
        info.property_set("grid.alert", alert).unwrap();
        info.property_set("grid.load", load).unwrap();
        let repo: Vec<Policy> = (0..rng.random_range(1..14))
            .map(|i| Policy {
                id: format!("P{:02}", rng.random_range(0..100) * 100 + i),
                kind: *kinds.choose(&mut rng).unwrap(),
                priority: rng.random_range(0..4),
                condition: (0..rng.random_range(0..3))
                    .map(|_| random_predicate(&mut rng))
                    .collect(),
                actions: (0..rng.random_range(1..3)).map(|_| random_action(&mut rng)).collect(),
            })
            .collect();

        // Brute force: scan every policy of the kind.
        let mut expected: BTreeMap<PolicyKind, Option<&Policy>> = BTreeMap::new();
        for kind in kinds {
            let mut best: Option<&Policy> = None;
            for p in repo.iter().filter(|p| p.kind == kind) {
                if !p.condition.iter().all(|c| oracle_holds(c, &sla, alert, load)) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => p.priority > b.priority || (p.priority == b.priority && p.id < b.id),
                };
                if better {
                    best = Some(p);
                }
            }
            expected.insert(kind, best);
        }

        match decide_policy(&sla, &repo, &info) {
            Ok(set) => {
                decided += 1;
                for (kind, got) in [
                    (PolicyKind::AppService, &set.app),
                    (PolicyKind::Resource, &set.resource),
                    (PolicyKind::LowLevelWorkflow, &set.workflow),
                ] {
                    let want = expected[&kind].ok_or(format!("trial {trial}: decided {kind} where none matches"))?;
                    ensure(
                        want.id == got.id,
                        format!("trial {trial} {kind}: got {} want {}", got.id, want.id),
                    )?;
                }
                let mut once = ConfigRegistry::with_defaults();
                enforce(&set, &mut once).map_err(|e| e.to_string())?;
                let mut twice = once.clone();
                enforce(&set, &mut twice).map_err(|e| e.to_string())?;
                ensure(once == twice, format!("trial {trial}: enforcement not idempotent"))?;
            }
            Err(PolicyError::NoMatchingPolicy(kind)) => {
                unmatched += 1;
                let first_missing = kinds.iter().find(|k| expected[k].is_none());
                ensure(
                    first_missing == Some(&kind),
                    format!("trial {trial}: NoMatchingPolicy({kind}) but oracle missing {first_missing:?}"),
                )?;
            }
            Err(e) => return Err(format!("trial {trial}: {e}")),
        }
    }
    ensure(decided >= 20, format!("only {decided} trials fully decided"))?;
    within(started.elapsed(), 5.0)?;
    Ok(format!(
        "200 triples ({decided} decided, {unmatched} unmatched) agree with brute force; enforcement idempotent"
    ))
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let grid: Vec<SynthParams> = [55.0, 63.0, 71.0, 84.0, 97.0, 112.0]
        .iter()
        .enumerate()
        .map(|(i, &bpm)| SynthParams {
            bpm,
            irregularity: if i % 2 == 0 { 0.0 } else { 0.3 },
            st_offset: 0.05 * i as f64,
            noise: 0.0,
            seed: i as u64,
        })
        .collect();
    let settings = VhsSettings {
        max_iter: grid.len() as u32,
        tolerance: 1e-6,
        signal: SignalSpec::default(),
    };
    for (k, planted) in grid.iter().enumerate() {
        let signal =
            synthesize_ecg(planted, settings.signal.duration, settings.signal.rate).map_err(|e| e.to_string())?;
        let patient = extract_features(&signal).map_err(|e| e.to_string())?;
        let out = run_vhs_loop::<EcgError>(&patient, &grid, &settings, |_| Ok(())).map_err(|e| e.to_string())?;
        ensure(
            out.best_index == k,
            format!("planted {k}, recovered {}", out.best_index),
        )?;
        ensure(
            out.best_distance < 1e-6,
            format!("planted {k}: distance {}", out.best_distance),
        )?;
        ensure(
            out.iterations as usize <= k + 1,
            format!("planted {k}: {} iterations", out.iterations),
        )?;
    }
    within(started.elapsed(), 5.0)?;
    Ok(format!(
        "each of {} planted candidates recovered at its grid position",
        grid.len()
    ))
}

fn dir_contents(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = DocumentPaths::default();
    cmd_run(&paths, Some(42), a.path()).map_err(|e| e.to_string())?;
    cmd_run(&paths, Some(42), b.path()).map_err(|e| e.to_string())?;
    let (fa, fb) = (dir_contents(a.path()), dir_contents(b.path()));
    ensure(fa.len() >= 4, format!("only {} files written", fa.len()))?;
    ensure(fa == fb, "outputs differ between identical runs")?;
    Ok(format!("{} files byte-identical across two runs", fa.len()))
}

fn criterion_9() -> Outcome {
    let mut sets = Vec::new();
    for label in ["Low Cost", "Balanced", "High Performance"] {
        let scenario = bundle::scenario(label).map_err(|e| e.to_string())?;
        let record = run_workflow(&scenario).map_err(|e| e.to_string())?;
        let nodes: Vec<String> = record.nodes.iter().map(|n| n.node.clone()).collect();
        sets.push((label, record.config.app_workflow(), nodes));
    }
    for w in sets.windows(2) {
        let (lo, hi) = (&w[0].2, &w[1].2);
        ensure(
            lo.iter().all(|n| hi.contains(n)) && hi.len() > lo.len(),
            format!("{} {:?} not a strict subset of {} {:?}", w[0].0, lo, w[1].0, hi),
        )?;
    }
    let levels: Vec<ServiceLevel> = sets.iter().map(|s| s.1).collect();
    ensure(
        levels == [ServiceLevel::EcgOnly, ServiceLevel::EcgDetect, ServiceLevel::EcgVhs],
        format!("levels {levels:?}"),
    )?;
    Ok(sets
        .iter()
        .map(|(_, l, n)| format!("{l}: {}", n.len()))
        .collect::<Vec<_>>()
        .join(" < "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("allocation cost exactness and scale invariance", criterion_1),
        ("L1 quorum is the minimum-mean 2-subset", criterion_2),
        ("quorum nesting on random pools", criterion_3),
        ("execute_plan matches brute-force simulation", criterion_4),
        ("policy-set comparison ordering and variance", criterion_5),
        ("decision and enforcement contract", criterion_6),
        ("VHS loop recovers a planted candidate", criterion_7),
        ("end-to-end determinism", criterion_8),
        ("service-level pruning is nested", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail} ({secs:.2} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

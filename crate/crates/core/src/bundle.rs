//! Example documents compiled into the library: the heart-disease
//! application, its sub-workflows, an eight-resource pool, a policy
//! repository, SLA samples, a run config and an experiment spec.

use std::collections::BTreeMap;

use crate::hybrid::{load_patient, parse_run_config, EngineError, Scenario, PATIENT_SIGNAL_KEY};
use crate::policy::{parse_repository, InfoBase, Sla};
use crate::resource::parse_pool;
use crate::workflow::{parse_subworkflow, parse_workflow};

pub const WORKFLOW: &str = include_str!("../data/heart-disease.json");
pub const POOL: &str = include_str!("../data/pool.json");
pub const POLICIES: &str = include_str!("../data/policies.json");
pub const RUN_CONFIG: &str = include_str!("../data/run-config.json");
pub const EXPERIMENT: &str = include_str!("../data/experiment.json");

pub const SUBWORKFLOWS: [(&str, &str); 2] = [
    ("ecg-analysis", include_str!("../data/ecg-analysis.json")),
    ("vhs", include_str!("../data/vhs.json")),
];

pub const SLAS: [(&str, &str); 3] = [
    ("High Performance", include_str!("../data/sla-high-performance.json")),
    ("Balanced", include_str!("../data/sla-balanced.json")),
    ("Low Cost", include_str!("../data/sla-low-cost.json")),
];

pub fn subworkflow_document(id: &str) -> Option<&'static str> {
    SUBWORKFLOWS.iter().find(|(k, _)| *k == id).map(|(_, d)| *d)
}

/// The shipped scenario for one soft SLA label.
pub fn scenario(label: &str) -> Result<Scenario, EngineError> {
    let info = InfoBase::default();
    let config = parse_run_config(RUN_CONFIG)?;
    let patient = load_patient(&config, None)?;
    let subworkflows = SUBWORKFLOWS
        .iter()
        .map(|(id, doc)| Ok((id.to_string(), parse_subworkflow(doc)?)))
        .collect::<Result<BTreeMap<_, _>, EngineError>>()?;
    Ok(Scenario {
        graph: parse_workflow(WORKFLOW)?,
        subworkflows,
        sla: Sla::soft("cardiologist", label),
        repository: parse_repository(POLICIES, &info)?,
        info,
        pool: parse_pool(POOL)?,
        config,
        data: BTreeMap::from([(PATIENT_SIGNAL_KEY.to_string(), patient)]),
    })
}

//! Simulated grid resource pool, allocation cost and quorum generation.
//!
//! Every resource carries two load indicators in `[0, 1]` (network and
//! system status) that vary with simulated time. The allocation cost of a
//! resource is the weighted sum `alpha * net(t) + beta * sys(t)`; lower cost
//! marks a better performing resource. Quorums are prefixes of the cost
//! ranking, so a stricter level always holds cheaper resources.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the time buckets the seeded noise is constant over, seconds.
pub const NOISE_QUANTUM_S: f64 = 60.0;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Column limit of the per-hour cost table.
pub const COST_TABLE_COLUMNS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResourceError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("resource `{id}`: {reason}")]
    InvalidResource { id: String, reason: String },
    #[error("duplicate resource id `{0}`")]
    DuplicateResource(String),
    #[error("resource pool is empty")]
    EmptyPool,
    #[error("invalid allocation cost weights alpha={alpha}, beta={beta}")]
    InvalidParams { alpha: f64, beta: f64 },
    #[error("unknown resource level `{0}`")]
    UnknownLevel(String),
}

/// Time-varying load indicator: a sinusoid plus counter-based seeded noise,
/// clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricTrace {
    pub base: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_period() -> f64 {
    SECONDS_PER_HOUR * 24.0
}

impl MetricTrace {
    pub fn constant(value: f64) -> Self {
        MetricTrace {
            base: value,
            amplitude: 0.0,
            period: default_period(),
            phase: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    fn check(&self) -> Result<(), String> {
        let finite = [self.base, self.amplitude, self.period, self.phase, self.noise_sigma]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("trace fields must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.base) {
            return Err(format!("base {} outside [0, 1]", self.base));
        }
        if self.amplitude < 0.0 {
            return Err(format!("amplitude {} is negative", self.amplitude));
        }
        if self.period <= 0.0 {
            return Err(format!("period {} must be positive", self.period));
        }
        if self.noise_sigma < 0.0 {
            return Err(format!("noise_sigma {} is negative", self.noise_sigma));
        }
        Ok(())
    }
}

/// Standard normal draw that depends only on `(seed, bucket)`.
fn counter_gaussian(seed: u64, bucket: i64) -> f64 {
    let mut z = seed ^ (bucket as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    StandardNormal.sample(&mut rng)
}

pub fn metric_at(trace: &MetricTrace, t: f64) -> f64 {
    let wave = trace.amplitude * (TAU * t / trace.period + trace.phase).sin();
    let noise = if trace.noise_sigma > 0.0 {
        counter_gaussian(trace.seed, (t / NOISE_QUANTUM_S).floor() as i64) * trace.noise_sigma
    } else {
        0.0
    };
    (trace.base + wave + noise).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDescriptor {
    pub id: String,
    pub site: String,
    /// Work units per second.
    pub cpu_rate: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    pub latency: f64,
    pub net_trace: MetricTrace,
    pub sys_trace: MetricTrace,
}

impl ResourceDescriptor {
    pub fn check(&self) -> Result<(), ResourceError> {
        let invalid = |reason: String| ResourceError::InvalidResource {
            id: self.id.clone(),
            reason,
        };
        if !(self.cpu_rate.is_finite() && self.cpu_rate > 0.0) {
            return Err(invalid(format!("cpu_rate {} must be positive", self.cpu_rate)));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(invalid(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(invalid(format!("latency {} must be non-negative", self.latency)));
        }
        self.net_trace.check().map_err(|r| invalid(format!("net_trace: {r}")))?;
        self.sys_trace.check().map_err(|r| invalid(format!("sys_trace: {r}")))?;
        Ok(())
    }
}

pub fn parse_pool(document: &str) -> Result<Vec<ResourceDescriptor>, ResourceError> {
    let mut de = serde_json::Deserializer::from_str(document);
    let pool: Vec<ResourceDescriptor> =
        serde_path_to_error::deserialize(&mut de).map_err(|e| ResourceError::Schema {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
    de.end().map_err(|e| ResourceError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    check_pool(&pool)?;
    Ok(pool)
}

pub fn check_pool(pool: &[ResourceDescriptor]) -> Result<(), ResourceError> {
    if pool.is_empty() {
        return Err(ResourceError::EmptyPool);
    }
    let mut ids = HashSet::new();
    for r in pool {
        if !ids.insert(r.id.as_str()) {
            return Err(ResourceError::DuplicateResource(r.id.clone()));
        }
        r.check()?;
    }
    Ok(())
}

/// The weights of the network and system terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationCostParams {
    pub alpha: f64,
    pub beta: f64,
}

impl AllocationCostParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ResourceError> {
        let ok = alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0;
        if ok {
            Ok(AllocationCostParams { alpha, beta })
        } else {
            Err(ResourceError::InvalidParams { alpha, beta })
        }
    }
}

impl Default for AllocationCostParams {
    fn default() -> Self {
        AllocationCostParams { alpha: 0.5, beta: 0.5 }
    }
}

pub fn allocation_cost(res: &ResourceDescriptor, t: f64, params: AllocationCostParams) -> f64 {
    params.alpha * metric_at(&res.net_trace, t) + params.beta * metric_at(&res.sys_trace, t)
}

fn by_cost_then_id(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}

/// Resources ascending by allocation cost at `t`, ties by ascending id.
pub fn rank_resources(
    pool: &[ResourceDescriptor],
    t: f64,
    params: AllocationCostParams,
) -> Result<Vec<(String, f64)>, ResourceError> {
    if pool.is_empty() {
        return Err(ResourceError::EmptyPool);
    }
    let mut ranked: Vec<(String, f64)> = pool
        .iter()
        .map(|r| (r.id.clone(), allocation_cost(r, t, params)))
        .collect();
    ranked.sort_by(by_cost_then_id);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuorumLevel {
    L1,
    L2,
    L3,
}

impl QuorumLevel {
    pub const ALL: [QuorumLevel; 3] = [QuorumLevel::L1, QuorumLevel::L2, QuorumLevel::L3];

    /// Quorum size for a pool of `n`: top 25% / 50% / all, never fewer
    /// than two members when the pool has two.
    pub fn size(self, n: usize) -> usize {
        let share = match self {
            QuorumLevel::L1 => n.div_ceil(4),
            QuorumLevel::L2 => n.div_ceil(2),
            QuorumLevel::L3 => n,
        };
        share.max(n.min(2))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuorumLevel::L1 => "L1",
            QuorumLevel::L2 => "L2",
            QuorumLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for QuorumLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuorumLevel {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuorumLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ResourceError::UnknownLevel(s.to_string()))
    }
}

/// How a quorum is drawn from the pool: a ranked level, or a uniformly
/// random subset the size of an L1 quorum (no resource policy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ResourceSelection {
    Level(QuorumLevel),
    Random,
}

impl fmt::Display for ResourceSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceSelection::Level(l) => f.write_str(l.as_str()),
            ResourceSelection::Random => f.write_str("Random"),
        }
    }
}

impl FromStr for ResourceSelection {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Random" {
            Ok(ResourceSelection::Random)
        } else {
            s.parse().map(ResourceSelection::Level)
        }
    }
}

impl TryFrom<String> for ResourceSelection {
    type Error = ResourceError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ResourceSelection> for String {
    fn from(s: ResourceSelection) -> String {
        s.to_string()
    }
}

/// Available resource quorum handed to the grid engine. Members are
/// ordered ascending by allocation cost at `decided_at`, ties by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quorum {
    pub selection: ResourceSelection,
    pub members: Vec<String>,
    pub decided_at: f64,
}

impl Quorum {
    pub fn contains(&self, id: &str) -> bool {
        self.members.iter().any(|m| m == id)
    }
}

pub fn generate_arq(
    pool: &[ResourceDescriptor],
    level: QuorumLevel,
    t: f64,
    params: AllocationCostParams,
) -> Result<Quorum, ResourceError> {
    let ranked = rank_resources(pool, t, params)?;
    let size = level.size(ranked.len());
    Ok(Quorum {
        selection: ResourceSelection::Level(level),
        members: ranked.into_iter().take(size).map(|(id, _)| id).collect(),
        decided_at: t,
    })
}

/// Uniformly random subset of L1 size, drawn with `seed`, then ordered by
/// cost like any other quorum.
pub fn random_arq(
    pool: &[ResourceDescriptor],
    t: f64,
    params: AllocationCostParams,
    seed: u64,
) -> Result<Quorum, ResourceError> {
    let mut ids: Vec<&str> = pool.iter().map(|r| r.id.as_str()).collect();
    if ids.is_empty() {
        return Err(ResourceError::EmptyPool);
    }
    ids.sort_unstable();
    let size = QuorumLevel::L1.size(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<&str> = ids.choose_multiple(&mut rng, size).copied().collect();
    let members = rank_resources(pool, t, params)?
        .into_iter()
        .map(|(id, _)| id)
        .filter(|id| chosen.contains(id.as_str()))
        .collect();
    Ok(Quorum {
        selection: ResourceSelection::Random,
        members,
        decided_at: t,
    })
}

pub fn select_quorum(
    pool: &[ResourceDescriptor],
    selection: ResourceSelection,
    t: f64,
    params: AllocationCostParams,
    seed: u64,
) -> Result<Quorum, ResourceError> {
    match selection {
        ResourceSelection::Level(level) => generate_arq(pool, level, t, params),
        ResourceSelection::Random => random_arq(pool, t, params, seed),
    }
}

/// Sample instants of an hourly grid: `samples_per_hour` evenly spaced
/// points starting at the top of each hour.
pub fn sample_grid(horizon_hours: usize, samples_per_hour: usize) -> Vec<f64> {
    let step = SECONDS_PER_HOUR / samples_per_hour as f64;
    (0..horizon_hours)
        .flat_map(|h| (0..samples_per_hour).map(move |k| h as f64 * SECONDS_PER_HOUR + k as f64 * step))
        .collect()
}

/// Resources ascending by their mean allocation cost over `times`.
pub fn rank_by_mean_cost(
    pool: &[ResourceDescriptor],
    times: &[f64],
    params: AllocationCostParams,
) -> Result<Vec<(String, f64)>, ResourceError> {
    if pool.is_empty() {
        return Err(ResourceError::EmptyPool);
    }
    let mut ranked: Vec<(String, f64)> = pool
        .iter()
        .map(|r| {
            let sum: f64 = times.iter().map(|&t| allocation_cost(r, t, params)).sum();
            (r.id.clone(), sum / times.len().max(1) as f64)
        })
        .collect();
    ranked.sort_by(by_cost_then_id);
    Ok(ranked)
}

/// One row per quorum level when quorums are ranked over a whole horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuorumSummary {
    pub level: QuorumLevel,
    pub members: Vec<String>,
    pub mean_cost: f64,
}

pub fn horizon_quorums(
    pool: &[ResourceDescriptor],
    times: &[f64],
    params: AllocationCostParams,
) -> Result<Vec<QuorumSummary>, ResourceError> {
    let ranked = rank_by_mean_cost(pool, times, params)?;
    Ok(QuorumLevel::ALL
        .into_iter()
        .map(|level| {
            let top = &ranked[..level.size(ranked.len())];
            QuorumSummary {
                level,
                members: top.iter().map(|(id, _)| id.clone()).collect(),
                mean_cost: top.iter().map(|(_, c)| c).sum::<f64>() / top.len() as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub columns: Vec<String>,
    /// `rows[hour][column]`
    pub rows: Vec<Vec<f64>>,
}

impl CostTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hour");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (h, row) in self.rows.iter().enumerate() {
            out.push_str(&h.to_string());
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean allocation cost per hour for the (at most six) best ranked
/// resources at `t = 0`, in ranking order.
pub fn average_cost_table(
    pool: &[ResourceDescriptor],
    horizon_hours: usize,
    samples_per_hour: usize,
    params: AllocationCostParams,
) -> Result<CostTable, ResourceError> {
    let ranked = rank_resources(pool, 0.0, params)?;
    let columns: Vec<String> = ranked.into_iter().take(COST_TABLE_COLUMNS).map(|(id, _)| id).collect();
    let resources: Vec<&ResourceDescriptor> = columns
        .iter()
        .map(|id| pool.iter().find(|r| &r.id == id).expect("ranked id in pool"))
        .collect();
    let samples = samples_per_hour.max(1);
    let step = SECONDS_PER_HOUR / samples as f64;
    let rows = (0..horizon_hours.max(1))
        .map(|h| {
            resources
                .iter()
                .map(|r| {
                    let sum: f64 = (0..samples)
                        .map(|k| allocation_cost(r, h as f64 * SECONDS_PER_HOUR + k as f64 * step, params))
                        .sum();
                    sum / samples as f64
                })
                .collect()
        })
        .collect();
    Ok(CostTable { columns, rows })
}

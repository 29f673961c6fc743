//! Experiment configuration: a JSON document describing the deployment,
//! network, workload and DAGs, plus the bundled presets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{DagSpec, TaskSpec};
use crate::engine::{Scenario, SimError, WorkloadConfig};
use crate::master::MasterConfig;
use crate::model::{price_per_increment, BillingPolicy, LinkParams, NetworkModel, ResourceId, Tier, Topology};
use crate::query::FilterQuery;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error(transparent)]
    Scenario(#[from] SimError),
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub billing: BillingConfig,
    pub tiers: TierTable,
    pub topology: TopologyConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub master: MasterConfig,
    pub workload: WorkloadSpec,
    pub dags: DagsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BillingConfig {
    /// Billing increment ε in seconds.
    pub increment_s: f64,
}

impl Default for BillingConfig {
    fn default() -> Self {
        Self { increment_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierParams {
    pub speed: f64,
    pub cents_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierTable {
    pub edge: TierParams,
    pub fog: TierParams,
    pub cloud: TierParams,
}

/// Either a fixed ratio or `"auto"`, which sizes backup lanes to cover the
/// partition's edge capacity: `1 + ceil(edges * edge_speed / fog_speed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Oversubscription {
    Ratio(f64),
    Mode(String),
}

impl Default for Oversubscription {
    fn default() -> Self {
        Oversubscription::Ratio(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FogConfig {
    pub name: String,
    /// Number of edges generated under this fog, named `<fog>-e01`, ...
    #[serde(default)]
    pub edges: usize,
    #[serde(default)]
    pub oversubscription: Option<Oversubscription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub name: String,
    pub fog: String,
    #[serde(default)]
    pub lat: f64,
    #[serde(default)]
    pub long: f64,
    /// Fixed failure probability used in bids instead of the MTBF estimate.
    #[serde(default)]
    pub failure_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub fogs: Vec<FogConfig>,
    #[serde(default)]
    pub edges: Vec<EdgeConfig>,
    pub cloud_workers: usize,
    /// Default for fogs that do not set their own.
    #[serde(default)]
    pub oversubscription: Oversubscription,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub mbps: f64,
    pub latency_ms: f64,
    #[serde(default)]
    pub cents_per_byte: f64,
}

impl LinkConfig {
    fn params(&self) -> LinkParams {
        LinkParams {
            price_per_byte: self.cents_per_byte,
            ..LinkParams::mbps_ms(self.mbps, self.latency_ms)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub fog_edge: LinkConfig,
    pub fog_fog: LinkConfig,
    pub fog_cloud: LinkConfig,
    pub cloud_cloud: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub rate_per_min: f64,
    /// Inclusive micro-batch size range in KB (1 KB = 1000 bytes).
    pub mb_size_kb: [u64; 2],
    pub duration_s: f64,
    /// Edge MTBF in minutes; absent means edges never fail.
    #[serde(default)]
    pub mtbf_min: Option<f64>,
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagsConfig {
    /// Deadline as a multiple of the edge-only critical path.
    pub deadline_factor: f64,
    #[serde(default)]
    pub generate: Option<GeneratorConfig>,
    #[serde(default)]
    pub explicit: Vec<DagConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    pub theta: f64,
    pub output_kb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagConfig {
    pub id: String,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
    /// Absolute deadline in seconds; overrides the deadline factor.
    #[serde(default)]
    pub deadline_s: Option<f64>,
    /// Defaults to matching micro-batches tagged `topic=<id>`.
    #[serde(default)]
    pub filter: Option<FilterQuery>,
}

/// Id, tasks and edges of one generated DAG.
pub type GeneratedDag = (String, Vec<TaskSpec>, Vec<(usize, usize)>);

/// Random tree-shaped DAGs: a spine from the root plus side branches, one
/// pipeline per leaf. Task durations come from a fixed set of task types
/// picked with a Gaussian around the middle type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub count: usize,
    pub seed: u64,
    /// Inclusive range of pipelines (leaves) per DAG.
    pub pipelines: [usize; 2],
    /// Inclusive range of spine lengths in tasks.
    pub spine: [usize; 2],
    /// Inclusive range of tasks per side branch.
    pub branch: [usize; 2],
    pub task_types: usize,
    /// θ of the lightest and heaviest task type, edge seconds.
    pub theta_range: [f64; 2],
    /// Standard deviation of the type draw, in types.
    pub type_sigma: f64,
    /// Multiplies every θ after the draw.
    #[serde(default = "one")]
    pub theta_scale: f64,
    pub output_kb: [u64; 2],
}

fn one() -> f64 {
    1.0
}

impl GeneratorConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let p = "dags.generate";
        let range = |name: &str, r: [usize; 2], min: usize| {
            if r[0] < min || r[0] > r[1] {
                Err(invalid(format!("{p}.{name}"), format!("need {min} <= min <= max")))
            } else {
                Ok(())
            }
        };
        range("pipelines", self.pipelines, 1)?;
        range("spine", self.spine, 1)?;
        range("branch", self.branch, 1)?;
        if self.task_types == 0 {
            return Err(invalid(format!("{p}.task_types"), "must be positive"));
        }
        if !(self.theta_range[0] > 0.0 && self.theta_range[0] <= self.theta_range[1]) {
            return Err(invalid(format!("{p}.theta_range"), "need 0 < min <= max"));
        }
        if !(self.type_sigma > 0.0) || !(self.theta_scale > 0.0) {
            return Err(invalid(p, "type_sigma and theta_scale must be positive"));
        }
        if self.output_kb[0] == 0 || self.output_kb[0] > self.output_kb[1] {
            return Err(invalid(format!("{p}.output_kb"), "need 0 < min <= max"));
        }
        Ok(())
    }

    /// θ of each task type, evenly spread over `theta_range`.
    pub fn type_thetas(&self) -> Vec<f64> {
        let [lo, hi] = self.theta_range;
        let n = self.task_types;
        (0..n)
            .map(|k| if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect()
    }

    /// DAG structures without deadlines or filters; deterministic in `seed`.
    pub fn generate(&self) -> Vec<GeneratedDag> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let thetas = self.type_thetas();
        let mid = (self.task_types as f64 - 1.0) / 2.0;
        let types = Normal::new(mid, self.type_sigma).expect("validated sigma");
        let width = (self.count.max(1) as f64).log10().floor() as usize + 1;
        let mut out = Vec::with_capacity(self.count);
        for d in 0..self.count {
            let mut tasks = Vec::new();
            let mut edges = Vec::new();
            let new_task = |rng: &mut ChaCha8Rng, tasks: &mut Vec<TaskSpec>| {
                let t = types.sample(rng).round().clamp(0.0, (self.task_types - 1) as f64) as usize;
                tasks.push(TaskSpec {
                    id: format!("t{}", tasks.len() + 1),
                    theta: thetas[t] * self.theta_scale,
                    output_size: rng.random_range(self.output_kb[0]..=self.output_kb[1]) * 1000,
                });
                tasks.len() - 1
            };
            let leaves = rng.random_range(self.pipelines[0]..=self.pipelines[1]);
            let spine_len = rng.random_range(self.spine[0]..=self.spine[1]);
            let mut spine = Vec::with_capacity(spine_len);
            for i in 0..spine_len {
                let t = new_task(&mut rng, &mut tasks);
                if i > 0 {
                    edges.push((spine[i - 1], t));
                }
                spine.push(t);
            }
            // side branches hang off the first half of the spine
            for _ in 1..leaves {
                let at = rng.random_range(0..spine_len.div_ceil(2));
                let len = rng.random_range(self.branch[0]..=self.branch[1]);
                let mut prev = spine[at];
                for _ in 0..len {
                    let t = new_task(&mut rng, &mut tasks);
                    edges.push((prev, t));
                    prev = t;
                }
            }
            out.push((format!("dag-{:0width$}", d + 1), tasks, edges));
        }
        out
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// A bundled preset by name, or else a JSON file path.
    pub fn load(name_or_path: &str) -> Result<Self, ConfigError> {
        if let Some(text) = preset(name_or_path) {
            return Self::from_json(text);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path)).map_err(|source| ConfigError::Io {
            path: name_or_path.to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn oversubscription(&self, fog: &FogConfig, edges: usize, path: &str) -> Result<f64, ConfigError> {
        let o = fog.oversubscription.as_ref().unwrap_or(&self.topology.oversubscription);
        match o {
            Oversubscription::Ratio(r) if *r >= 1.0 => Ok(*r),
            Oversubscription::Ratio(r) => Err(invalid(path, format!("over-subscription {r} is below 1"))),
            Oversubscription::Mode(m) if m == "auto" => {
                Ok(1.0 + (edges as f64 * self.tiers.edge.speed / self.tiers.fog.speed).ceil())
            }
            Oversubscription::Mode(m) => Err(invalid(path, format!("unknown over-subscription mode {m:?}"))),
        }
    }

    /// The DAGs with deadlines applied.
    pub fn dag_specs(&self) -> Result<Vec<DagSpec>, ConfigError> {
        let f = self.dags.deadline_factor;
        if !(f > 0.0) {
            return Err(invalid("dags.deadline_factor", "must be positive"));
        }
        let edge_speed = self.tiers.edge.speed;
        let mut out = Vec::new();
        if let Some(g) = &self.dags.generate {
            g.validate()?;
            for (id, tasks, edges) in g.generate() {
                let mut d = DagSpec {
                    filter: FilterQuery::new(&id).with_kv("topic", &id),
                    id,
                    tasks,
                    edges,
                    deadline: 0.0,
                };
                d.deadline = f * d.critical_path(edge_speed).map_err(|e| invalid("dags.generate", e.to_string()))?;
                out.push(d);
            }
        }
        for (i, dc) in self.dags.explicit.iter().enumerate() {
            let path = format!("dags.explicit[{i}]");
            let index: BTreeMap<&str, usize> = dc.tasks.iter().enumerate().map(|(j, t)| (t.id.as_str(), j)).collect();
            if index.len() != dc.tasks.len() {
                return Err(invalid(format!("{path}.tasks"), "duplicate task id"));
            }
            let mut edges = Vec::new();
            for (j, [a, b]) in dc.edges.iter().enumerate() {
                match (index.get(a.as_str()), index.get(b.as_str())) {
                    (Some(&x), Some(&y)) => edges.push((x, y)),
                    _ => return Err(invalid(format!("{path}.edges[{j}]"), format!("unknown task in {a}->{b}"))),
                }
            }
            let mut d = DagSpec {
                id: dc.id.clone(),
                tasks: dc
                    .tasks
                    .iter()
                    .map(|t| TaskSpec {
                        id: t.id.clone(),
                        theta: t.theta,
                        output_size: t.output_kb * 1000,
                    })
                    .collect(),
                edges,
                deadline: 1.0,
                filter: dc
                    .filter
                    .clone()
                    .unwrap_or_else(|| FilterQuery::new(&dc.id).with_kv("topic", &dc.id)),
            };
            if d.filter.dag_id != d.id {
                return Err(invalid(format!("{path}.filter.dag_id"), "must equal the dag id"));
            }
            d.validate().map_err(|e| invalid(&path, e.to_string()))?;
            d.deadline = match dc.deadline_s {
                Some(s) => s,
                None => f * d.critical_path(edge_speed).map_err(|e| invalid(&path, e.to_string()))?,
            };
            d.validate().map_err(|e| invalid(&path, e.to_string()))?;
            out.push(d);
        }
        if out.is_empty() {
            return Err(invalid("dags", "no DAGs generated or declared"));
        }
        Ok(out)
    }

    /// Resolves names and builds a validated scenario.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        if !(self.billing.increment_s > 0.0) {
            return Err(invalid("billing.increment_s", "must be positive"));
        }
        let billing = BillingPolicy {
            epsilon: self.billing.increment_s,
        };
        for (name, t) in [("edge", self.tiers.edge), ("fog", self.tiers.fog), ("cloud", self.tiers.cloud)] {
            if !(t.speed >= 1.0) || !(t.cents_per_hour >= 0.0) {
                return Err(invalid(format!("tiers.{name}"), "speed must be >= 1 and price >= 0"));
            }
        }
        let price = |t: TierParams| price_per_increment(t.cents_per_hour, &billing);
        let mut topo = Topology::new();
        let mut names = BTreeSet::new();
        let mut claim = |n: &str, path: String| {
            if names.insert(n.to_string()) {
                Ok(())
            } else {
                Err(invalid(path, format!("duplicate resource name {n:?}")))
            }
        };
        let mut oversubscription = BTreeMap::new();
        let mut failure_prob = BTreeMap::new();
        let mut fog_ids: BTreeMap<&str, ResourceId> = BTreeMap::new();
        for (i, fc) in self.topology.fogs.iter().enumerate() {
            claim(&fc.name, format!("topology.fogs[{i}].name"))?;
            let id = topo.add_fog(&fc.name, self.tiers.fog.speed, price(self.tiers.fog));
            fog_ids.insert(&fc.name, id);
        }
        for (i, fc) in self.topology.fogs.iter().enumerate() {
            let fog = fog_ids[fc.name.as_str()];
            for k in 1..=fc.edges {
                let name = format!("{}-e{k:02}", fc.name);
                claim(&name, format!("topology.fogs[{i}].edges"))?;
                topo.add_edge(&name, fog, self.tiers.edge.speed, price(self.tiers.edge), 0.0)
                    .map_err(|e| invalid(format!("topology.fogs[{i}]"), e.to_string()))?;
            }
        }
        for (i, ec) in self.topology.edges.iter().enumerate() {
            let path = format!("topology.edges[{i}]");
            claim(&ec.name, format!("{path}.name"))?;
            let Some(&fog) = fog_ids.get(ec.fog.as_str()) else {
                return Err(invalid(format!("{path}.fog"), format!("unknown fog {:?}", ec.fog)));
            };
            let p = ec.failure_prob.unwrap_or(0.0);
            let id = topo
                .add_edge(&ec.name, fog, self.tiers.edge.speed, price(self.tiers.edge), p)
                .map_err(|e| invalid(&path, e.to_string()))?;
            topo.set_location(id, ec.lat, ec.long);
            if let Some(p) = ec.failure_prob {
                failure_prob.insert(id, p);
            }
        }
        for (i, fc) in self.topology.fogs.iter().enumerate() {
            let fog = fog_ids[fc.name.as_str()];
            let chi = self.oversubscription(fc, topo.children(fog).len(), &format!("topology.fogs[{i}]"))?;
            oversubscription.insert(fog, chi);
        }
        if self.topology.cloud_workers == 0 {
            return Err(invalid("topology.cloud_workers", "at least one cloud worker is required"));
        }
        for k in 1..=self.topology.cloud_workers {
            let name = format!("cloud-{k}");
            claim(&name, "topology.cloud_workers".into())?;
            topo.add_cloud(&name, self.tiers.cloud.speed, price(self.tiers.cloud));
        }
        claim("master", "topology".into())?;
        topo.add_master("master");

        let n = &self.network;
        let net = NetworkModel::new(
            n.fog_edge.params(),
            n.fog_fog.params(),
            n.fog_cloud.params(),
            n.cloud_cloud.params(),
        );
        let w = &self.workload;
        if let Some(m) = w.mtbf_min {
            if !(m > 0.0) {
                return Err(invalid("workload.mtbf_min", "must be positive"));
            }
        }
        let workload = WorkloadConfig {
            rate_per_min: w.rate_per_min,
            mb_size_min: w.mb_size_kb[0] * 1000,
            mb_size_max: w.mb_size_kb[1] * 1000,
            duration: w.duration_s,
            mtbf: w.mtbf_min.map(|m| m * 60.0),
            jitter: w.jitter,
        };
        workload.validate().map_err(|m| invalid("workload", m))?;
        self.master.validate().map_err(|m| invalid("master", m))?;
        let sc = Scenario {
            topo,
            net,
            billing,
            dags: self.dag_specs()?,
            workload,
            master: self.master,
            oversubscription,
            failure_prob,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Number of edges per fog and overall, for summaries.
    pub fn edge_count(&self) -> usize {
        self.topology.fogs.iter().map(|f| f.edges).sum::<usize>() + self.topology.edges.len()
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("desk", include_str!("../presets/desk.json")),
    ("reliable-edge", include_str!("../presets/reliable-edge.json")),
    ("mtbf100", include_str!("../presets/mtbf100.json")),
    ("mtbf40", include_str!("../presets/mtbf40.json")),
    ("scale-2x", include_str!("../presets/scale-2x.json")),
];

/// Names of the bundled presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Counts of the resources of a built scenario by tier.
pub fn tier_counts(topo: &Topology) -> BTreeMap<Tier, usize> {
    let mut m = BTreeMap::new();
    for r in topo.resources().iter().filter(|r| r.worker) {
        *m.entry(r.tier).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_build() {
        for name in preset_names() {
            let cfg = ExperimentConfig::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::load("reliable-edge").unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_reports_its_path() {
        let mut v: serde_json::Value = serde_json::from_str(preset("desk").unwrap()).unwrap();
        v["workload"]["rate"] = 3.into();
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.starts_with("workload"), "{err}");
    }

    #[test]
    fn auto_oversubscription_covers_edges() {
        let cfg = ExperimentConfig::load("reliable-edge").unwrap();
        let sc = cfg.build().unwrap();
        for f in sc.topo.fogs() {
            let edges = sc.topo.children(f).len() as f64;
            assert_eq!(sc.chi(f), 1.0 + (edges / 8.0).ceil());
        }
    }

    #[test]
    fn generator_is_deterministic_and_in_range() {
        let cfg = ExperimentConfig::load("reliable-edge").unwrap();
        let g = cfg.dags.generate.clone().unwrap();
        assert_eq!(g.generate(), g.generate());
        let dags = cfg.dag_specs().unwrap();
        assert_eq!(dags.len(), g.count);
        for d in &dags {
            let n = d.unroll().unwrap().len();
            assert!((g.pipelines[0]..=g.pipelines[1]).contains(&n), "{}: {n} pipelines", d.id);
            for t in &d.tasks {
                assert!(t.theta >= g.theta_range[0] && t.theta <= g.theta_range[1]);
            }
        }
    }

    #[test]
    fn explicit_dag_with_bad_edge_is_rejected() {
        let mut cfg = ExperimentConfig::load("desk").unwrap();
        cfg.dags.explicit.push(DagConfig {
            id: "x".into(),
            tasks: vec![TaskConfig {
                id: "a".into(),
                theta: 10.0,
                output_kb: 100,
            }],
            edges: vec![["a".into(), "b".into()]],
            deadline_s: None,
            filter: None,
        });
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("dags.explicit[0].edges[0]"), "{err}");
    }
}

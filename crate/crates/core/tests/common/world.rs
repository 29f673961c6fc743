//! Small hand-built worlds for end-to-end scenario tests.

use cofee_core::config::ExperimentConfig;
use cofee_core::engine::{Arrival, Scenario, SimOutcome};
use cofee_core::harness::PolicyKind;
use cofee_core::model::{ResourceId, Time};
use cofee_core::engine::Sim;

/// One fog with `edges` edges, one cloud, and a single-task DAG "solo" with
/// the given θ and deadline.
pub fn one_fog(edges: usize, chi: f64, theta: f64, deadline: f64) -> ExperimentConfig {
    let json = format!(
        r#"{{
  "name": "world",
  "billing": {{ "increment_s": 1.0 }},
  "tiers": {{
    "edge": {{ "speed": 1.0, "cents_per_hour": 0.167 }},
    "fog": {{ "speed": 8.0, "cents_per_hour": 1.467 }},
    "cloud": {{ "speed": 50.0, "cents_per_hour": 10.0 }}
  }},
  "topology": {{
    "fogs": [{{ "name": "f", "edges": {edges} }}],
    "cloud_workers": 1,
    "oversubscription": {chi}
  }},
  "network": {{
    "fog_edge": {{ "mbps": 60.0, "latency_ms": 1.0 }},
    "fog_fog": {{ "mbps": 100.0, "latency_ms": 5.0 }},
    "fog_cloud": {{ "mbps": 100.0, "latency_ms": 5.0 }},
    "cloud_cloud": {{ "mbps": 100.0, "latency_ms": 5.0 }}
  }},
  "master": {{ "fanout": 2, "bid_timeout": 1.0, "report_top_k": 3, "report_period": 5.0, "piggyback_reports": true }},
  "workload": {{ "rate_per_min": 1.0, "mb_size_kb": [1000, 1000], "duration_s": 300.0 }},
  "dags": {{
    "deadline_factor": 1.1,
    "explicit": [{{ "id": "solo", "tasks": [{{ "id": "a", "theta": {theta}, "output_kb": 100 }}], "deadline_s": {deadline} }}]
  }}
}}"#
    );
    ExperimentConfig::from_json(&json).expect("world config")
}

pub fn id(sc: &Scenario, name: &str) -> ResourceId {
    sc.topo.by_name(name).unwrap_or_else(|| panic!("no resource {name}")).id
}

pub fn arrival(sc: &Scenario, at: Time, edge: &str) -> Arrival {
    Arrival { at, edge: id(sc, edge), dag: 0, size: 1_000_000 }
}

pub fn run(sc: &Scenario, policy: PolicyKind, arrivals: Vec<Arrival>, failures: Vec<(Time, ResourceId)>) -> SimOutcome {
    Sim::new(sc.clone(), policy.make(), 1)
        .unwrap()
        .with_trace(true)
        .with_arrivals(arrivals)
        .with_failures(failures)
        .run()
        .unwrap()
}

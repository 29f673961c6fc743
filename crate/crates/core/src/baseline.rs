//! Reference schedulers: everything on the cloud, or everything inside the
//! fog partition where the data was produced.

use crate::dag::{PipelineId, PipelineStatus};
use crate::engine::{AttemptId, AttemptStatus, Role, Sim, Source};
use crate::model::{ResourceId, TIME_EPS};
use crate::policy::SchedulerPolicy;

fn fail_on_lost_attempt(sim: &mut Sim, a: AttemptId) {
    let at = sim.attempt(a);
    let p = at.pipeline;
    if at.status == AttemptStatus::Failed && sim.pipeline(p).status == PipelineStatus::Running {
        sim.fail_pipeline(p);
    }
}

/// Sends every task to the least-loaded cloud worker.
#[derive(Debug, Default)]
pub struct CloudOnlyPolicy;

impl SchedulerPolicy for CloudOnlyPolicy {
    fn name(&self) -> &str {
        "cloud-only"
    }

    fn on_task_ready(&mut self, sim: &mut Sim, p: PipelineId) {
        let c = sim.least_loaded_cloud();
        sim.begin_attempt(p, c, Role::Cloud, Source::Input, false);
    }

    fn on_attempt_end(&mut self, sim: &mut Sim, a: AttemptId) {
        fail_on_lost_attempt(sim, a);
    }
}

/// Keeps a pipeline inside the partition of the fog whose edge produced the
/// triggering micro-batch: the cheapest idle edge that can meet the
/// sub-deadline, else the fog when it is idle, else the pipeline fails.
#[derive(Debug, Default)]
pub struct LocalFogPolicy;

impl LocalFogPolicy {
    /// Whether `w` can receive the input and finish before σ, counting the
    /// master's decision latency.
    fn viable(sim: &Sim, p: PipelineId, w: ResourceId) -> bool {
        let pl = sim.pipeline(p);
        let stage = pl.current();
        let input = sim.mb(pl.input);
        let (topo, net) = (sim.topo(), sim.net());
        let Ok(d) = net.transfer_time(topo, input.size, input.location, w) else {
            return false;
        };
        let start = sim.now() + net.control_latency(topo, sim.master(), w) + d;
        start + stage.theta / topo.res(w).speed <= stage.sigma + TIME_EPS
    }
}

impl SchedulerPolicy for LocalFogPolicy {
    fn name(&self) -> &str {
        "lfp"
    }

    fn on_task_ready(&mut self, sim: &mut Sim, p: PipelineId) {
        let source = sim.mb(sim.pipeline(p).trigger_mb).location;
        let Some(fog) = sim.topo().parent_fog(source) else {
            sim.fail_pipeline(p);
            return;
        };
        let edge = sim
            .topo()
            .children(fog)
            .iter()
            .copied()
            .filter(|&e| sim.is_idle(e) && Self::viable(sim, p, e))
            .min_by(|&a, &b| sim.topo().res(a).price.total_cmp(&sim.topo().res(b).price).then(a.cmp(&b)));
        if let Some(e) = edge {
            sim.begin_attempt(p, e, Role::Edge, Source::Input, false);
        } else if sim.is_idle(fog) && Self::viable(sim, p, fog) {
            sim.begin_attempt(p, fog, Role::FogDirect, Source::Input, false);
        } else {
            sim.trace_event("partition_full", vec![p.0]);
            sim.fail_pipeline(p);
        }
    }

    fn on_attempt_end(&mut self, sim: &mut Sim, a: AttemptId) {
        fail_on_lost_attempt(sim, a);
    }
}

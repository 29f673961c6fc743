//! Deterministic discrete-event simulator.
//!
//! The engine owns the clock, the event queue, micro-batches, pipeline
//! instances and task attempts (data transfer, execution, billing). Placement
//! decisions belong to a [`SchedulerPolicy`], which is called back through a
//! small set of hooks and talks to the engine through the public methods on
//! [`Sim`].

pub mod trace;
pub mod workload;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calendar::ReservationId;
use crate::dag::{Advance, Chain, DagError, DagSpec, PipelineId, PipelineInstance, PipelineStatus};
use crate::fog::{failure_probability, InquiryId};
use crate::master::{FogReport, MasterConfig};
use crate::metrics::{MetricsReport, RunTally};
use crate::model::{
    BillingPolicy, Cents, MicroBatchId, MicroBatchMeta, ModelError, NetworkModel, ResourceId, Tier, Time, Topology,
    TIME_EPS,
};
use crate::policy::SchedulerPolicy;
use crate::query::{QueryEngine, QueryError};

pub use trace::TraceRecord;
pub use workload::{Arrival, WorkloadConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("end-of-run audit failed: {0}")]
    Audit(String),
}

/// Everything needed to run one simulation apart from the policy and seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topo: Topology,
    pub net: NetworkModel,
    pub billing: BillingPolicy,
    pub dags: Vec<DagSpec>,
    pub workload: WorkloadConfig,
    pub master: MasterConfig,
    /// Over-subscription ratio χ per fog; fogs not listed use 1.
    pub oversubscription: BTreeMap<ResourceId, f64>,
    /// Fixed bidding failure probability per edge, instead of the MTBF estimate.
    pub failure_prob: BTreeMap<ResourceId, f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        self.topo.validate()?;
        if self.topo.master().is_none() {
            return bad("topology has no master".into());
        }
        if self.topo.clouds().is_empty() {
            return bad("at least one cloud worker is required".into());
        }
        if self.topo.fogs().is_empty() {
            return bad("at least one fog is required".into());
        }
        if !(self.billing.epsilon > 0.0) {
            return bad("billing increment must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for d in &self.dags {
            if !ids.insert(d.id.as_str()) {
                return bad(format!("duplicate dag id {}", d.id));
            }
            d.validate()?;
            d.filter.validate()?;
        }
        self.workload.validate().map_err(SimError::Invalid)?;
        self.master.validate().map_err(SimError::Invalid)?;
        for (&f, &chi) in &self.oversubscription {
            if self.topo.get(f).map(|r| r.tier) != Some(Tier::Fog) {
                return bad(format!("over-subscription given for non-fog {f}"));
            }
            if !(chi >= 1.0) {
                return bad(format!("over-subscription of {f} must be at least 1"));
            }
        }
        for (&e, &p) in &self.failure_prob {
            if self.topo.get(e).map(|r| r.tier) != Some(Tier::Edge) {
                return bad(format!("failure probability given for non-edge {e}"));
            }
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("failure probability of {e} must be within [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn chi(&self, fog: ResourceId) -> f64 {
        self.oversubscription.get(&fog).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttemptId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Edge,
    FogPrimary,
    FogBackup,
    /// Fog execution without a calendar slot (baselines).
    FogDirect,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Move the pipeline's current input to the worker.
    Input,
    /// The worker already holds a copy (the fog cache).
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptStatus {
    Transferring,
    /// Data is in place but the slot has not opened yet.
    Waiting,
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    WorkerFailed,
    DataLost,
    Unreachable,
    MissedDeadline,
    Cancelled,
    PipelineFailed,
}

#[derive(Debug, Clone)]
pub struct Attempt {
    pub id: AttemptId,
    pub pipeline: PipelineId,
    pub stage: usize,
    pub worker: ResourceId,
    pub tier: Tier,
    pub role: Role,
    pub status: AttemptStatus,
    pub gated: bool,
    pub gate_open: bool,
    pub started: Option<Time>,
    pub ended: Option<Time>,
    pub cost: Cents,
    pub output: Option<MicroBatchId>,
    pub fail_reason: Option<FailReason>,
}

impl Attempt {
    pub fn is_terminal(&self) -> bool {
        matches!(self.status, AttemptStatus::Done | AttemptStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    MicroBatchGenerated { edge: ResourceId, dag: usize, size: u64 },
    QueryMatched { mb: MicroBatchId },
    TriggerDag { mb: MicroBatchId, dags: Vec<usize> },
    InquiryDelivered { inquiry: InquiryId, fog: ResourceId },
    BidDelivered { inquiry: InquiryId, fog: ResourceId },
    SelectionTimeout { inquiry: InquiryId },
    AcceptDelivered { inquiry: InquiryId, fog: ResourceId },
    RejectDelivered { inquiry: InquiryId, fog: ResourceId },
    TransferComplete { attempt: AttemptId },
    TaskCompleted { attempt: AttemptId },
    EdgeFailed { edge: ResourceId },
    SlotTimerFired { fog: ResourceId, reservation: ReservationId, version: u32 },
    ReportTick,
    FreeSlotReport { report: FogReport },
    CompletionNotice { attempt: AttemptId },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MicroBatchGenerated { .. } => "micro_batch_generated",
            EventKind::QueryMatched { .. } => "query_matched",
            EventKind::TriggerDag { .. } => "trigger_dag",
            EventKind::InquiryDelivered { .. } => "inquiry_delivered",
            EventKind::BidDelivered { .. } => "bid_delivered",
            EventKind::SelectionTimeout { .. } => "selection_timeout",
            EventKind::AcceptDelivered { .. } => "accept_delivered",
            EventKind::RejectDelivered { .. } => "reject_delivered",
            EventKind::TransferComplete { .. } => "transfer_complete",
            EventKind::TaskCompleted { .. } => "task_completed",
            EventKind::EdgeFailed { .. } => "edge_failed",
            EventKind::SlotTimerFired { .. } => "slot_timer_fired",
            EventKind::ReportTick => "report_tick",
            EventKind::FreeSlotReport { .. } => "free_slot_report",
            EventKind::CompletionNotice { .. } => "completion_notice",
        }
    }

    fn subjects(&self) -> Vec<u64> {
        match self {
            EventKind::MicroBatchGenerated { edge, dag, .. } => vec![edge.0 as u64, *dag as u64],
            EventKind::QueryMatched { mb } => vec![mb.0],
            EventKind::TriggerDag { mb, dags } => std::iter::once(mb.0).chain(dags.iter().map(|d| *d as u64)).collect(),
            EventKind::InquiryDelivered { inquiry, fog }
            | EventKind::BidDelivered { inquiry, fog }
            | EventKind::AcceptDelivered { inquiry, fog }
            | EventKind::RejectDelivered { inquiry, fog } => vec![inquiry.0, fog.0 as u64],
            EventKind::SelectionTimeout { inquiry } => vec![inquiry.0],
            EventKind::TransferComplete { attempt }
            | EventKind::TaskCompleted { attempt }
            | EventKind::CompletionNotice { attempt } => vec![attempt.0],
            EventKind::EdgeFailed { edge } => vec![edge.0 as u64],
            EventKind::SlotTimerFired { fog, reservation, version } => {
                vec![fog.0 as u64, reservation.0, *version as u64]
            }
            EventKind::ReportTick => Vec::new(),
            EventKind::FreeSlotReport { report } => vec![report.fog.0 as u64],
        }
    }
}

#[derive(Debug, Clone)]
struct Event {
    at: Time,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest (time, seq) first
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
enum Hook {
    Trigger(PipelineId),
    TaskReady(PipelineId),
    AttemptEnded(AttemptId),
    EdgeFailed(ResourceId),
}

#[derive(Debug, Default, Clone)]
struct Executor {
    running: Option<AttemptId>,
    queue: VecDeque<AttemptId>,
}

/// One DAG trigger: the pipelines spawned by a single matching micro-batch.
#[derive(Debug, Clone)]
pub struct TriggerRecord {
    pub dag: usize,
    pub mb: MicroBatchId,
    pub at: Time,
    pub pipelines: Vec<PipelineId>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: MetricsReport,
    pub trace: Vec<TraceRecord>,
    pub attempts: Vec<Attempt>,
    pub pipelines: Vec<PipelineInstance>,
    pub micro_batches: Vec<MicroBatchMeta>,
}

pub struct Sim {
    sc: Scenario,
    chains: Vec<Vec<Chain>>,
    queries: QueryEngine,
    dag_index: BTreeMap<String, usize>,
    seed: u64,
    now: Time,
    seq: u64,
    queue: BinaryHeap<Event>,
    mbs: Vec<MicroBatchMeta>,
    pipelines: Vec<PipelineInstance>,
    triggers: Vec<TriggerRecord>,
    attempts: Vec<Attempt>,
    active: BTreeMap<ResourceId, BTreeSet<AttemptId>>,
    executors: BTreeMap<ResourceId, Executor>,
    hooks: VecDeque<Hook>,
    policy: Option<Box<dyn SchedulerPolicy>>,
    jitter: ChaCha8Rng,
    trace_on: bool,
    trace: Vec<TraceRecord>,
    tally: RunTally,
    arrivals: Option<Vec<workload::Arrival>>,
    failures: Option<Vec<(Time, ResourceId)>>,
}

impl Sim {
    pub fn new(sc: Scenario, policy: Box<dyn SchedulerPolicy>, seed: u64) -> Result<Self, SimError> {
        sc.validate()?;
        let mut chains = Vec::with_capacity(sc.dags.len());
        let mut queries = QueryEngine::new();
        let mut dag_index = BTreeMap::new();
        for (i, d) in sc.dags.iter().enumerate() {
            chains.push(d.unroll()?);
            queries.register(d.filter.clone())?;
            dag_index.insert(d.id.clone(), i);
        }
        let executors = sc.topo.fogs().into_iter().map(|f| (f, Executor::default())).collect();
        let minutes = (sc.workload.duration / 60.0).ceil().max(1.0) as usize;
        Ok(Self {
            chains,
            queries,
            dag_index,
            seed,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            mbs: Vec::new(),
            pipelines: Vec::new(),
            triggers: Vec::new(),
            attempts: Vec::new(),
            active: BTreeMap::new(),
            executors,
            hooks: VecDeque::new(),
            policy: Some(policy),
            jitter: workload::substream(seed, "jitter"),
            trace_on: false,
            trace: Vec::new(),
            tally: RunTally::new(minutes),
            arrivals: None,
            failures: None,
            sc,
        })
    }

    /// Keeps every event and charge in the returned trace.
    pub fn with_trace(mut self, on: bool) -> Self {
        self.trace_on = on;
        self
    }

    /// Replaces the seeded arrival stream with a fixed list.
    pub fn with_arrivals(mut self, arrivals: Vec<workload::Arrival>) -> Self {
        self.arrivals = Some(arrivals);
        self
    }

    /// Replaces the MTBF-driven failure schedule with a fixed one.
    pub fn with_failures(mut self, failures: Vec<(Time, ResourceId)>) -> Self {
        self.failures = Some(failures);
        self
    }

    // ---- read access for policies ----

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn topo(&self) -> &Topology {
        &self.sc.topo
    }

    pub fn net(&self) -> &NetworkModel {
        &self.sc.net
    }

    pub fn billing(&self) -> &BillingPolicy {
        &self.sc.billing
    }

    pub fn master_config(&self) -> &MasterConfig {
        &self.sc.master
    }

    pub fn master(&self) -> ResourceId {
        self.sc.topo.master().expect("validated scenario has a master")
    }

    pub fn run_end(&self) -> Time {
        self.sc.workload.duration
    }

    pub fn pipeline(&self, p: PipelineId) -> &PipelineInstance {
        &self.pipelines[p.0 as usize]
    }

    pub fn pipelines(&self) -> &[PipelineInstance] {
        &self.pipelines
    }

    pub fn attempt(&self, a: AttemptId) -> &Attempt {
        &self.attempts[a.0 as usize]
    }

    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }

    pub fn mb(&self, id: MicroBatchId) -> &MicroBatchMeta {
        &self.mbs[id.0 as usize]
    }

    pub fn dag(&self, i: usize) -> &DagSpec {
        &self.sc.dags[i]
    }

    pub fn running_pipelines(&self) -> usize {
        self.pipelines.iter().filter(|p| p.status == PipelineStatus::Running).count()
    }

    /// Alive and not assigned any unfinished attempt.
    pub fn is_idle(&self, r: ResourceId) -> bool {
        self.sc.topo.res(r).alive && self.active_count(r) == 0
    }

    pub fn active_count(&self, r: ResourceId) -> usize {
        self.active.get(&r).map_or(0, BTreeSet::len)
    }

    /// Cloud worker with the fewest unfinished attempts, lowest id on ties.
    pub fn least_loaded_cloud(&self) -> ResourceId {
        self.sc
            .topo
            .clouds()
            .into_iter()
            .min_by_key(|&c| (self.active_count(c), c))
            .expect("validated scenario has a cloud worker")
    }

    /// Probability used in κ for this edge at the current time.
    pub fn failure_prob(&self, edge: ResourceId) -> f64 {
        match self.sc.failure_prob.get(&edge) {
            Some(&p) => p,
            None => failure_probability(self.now, self.run_end(), self.sc.workload.mtbf),
        }
    }

    /// Base duration θ of the pipeline's current stage.
    pub fn stage_theta(&self, p: PipelineId) -> f64 {
        self.pipeline(p).current().theta
    }

    // ---- actions for policies ----

    pub fn schedule(&mut self, at: Time, kind: EventKind) {
        debug_assert!(at + TIME_EPS >= self.now, "event scheduled in the past");
        let at = at.max(self.now);
        self.seq += 1;
        self.queue.push(Event { at, seq: self.seq, kind });
    }

    pub fn trace_event(&mut self, event: &str, subjects: Vec<u64>) {
        if self.trace_on {
            self.trace.push(TraceRecord::Event {
                t: self.now,
                event: event.to_string(),
                subjects,
            });
        }
    }

    /// Starts an attempt of the pipeline's current stage on `worker`. Gated
    /// fog attempts wait for [`Sim::open_gate`] before they may run.
    pub fn begin_attempt(
        &mut self,
        pipeline: PipelineId,
        worker: ResourceId,
        role: Role,
        source: Source,
        gated: bool,
    ) -> AttemptId {
        let id = AttemptId(self.attempts.len() as u64);
        let stage = self.pipeline(pipeline).cursor;
        let tier = self.sc.topo.res(worker).tier;
        self.attempts.push(Attempt {
            id,
            pipeline,
            stage,
            worker,
            tier,
            role,
            status: AttemptStatus::Transferring,
            gated,
            gate_open: false,
            started: None,
            ended: None,
            cost: 0.0,
            output: None,
            fail_reason: None,
        });
        self.active.entry(worker).or_default().insert(id);
        if role == Role::FogBackup {
            self.tally.backup_runs += 1;
        } else {
            self.tally.note_scheduled(self.now);
        }
        self.trace_event("attempt_begin", vec![id.0, pipeline.0, worker.0 as u64]);
        if !self.sc.topo.res(worker).alive {
            self.fail_attempt(id, FailReason::WorkerFailed);
            return id;
        }
        match source {
            Source::Local => self.data_ready(id),
            Source::Input => {
                let input = self.pipeline(pipeline).input;
                let (size, from) = (self.mb(input).size, self.mb(input).location);
                match self.transfer(id, size, from, worker) {
                    Ok(d) => self.schedule(self.now + d, EventKind::TransferComplete { attempt: id }),
                    Err(reason) => self.fail_attempt(id, reason),
                }
            }
        }
        id
    }

    /// Copies the current input of `attempt`'s pipeline to `fog` and returns
    /// when the copy lands, or `None` if the data is unreachable.
    pub fn cache_copy(&mut self, attempt: AttemptId, fog: ResourceId) -> Option<Time> {
        let input = self.pipeline(self.attempt(attempt).pipeline).input;
        let (size, from) = (self.mb(input).size, self.mb(input).location);
        self.transfer(attempt, size, from, fog).ok().map(|d| self.now + d)
    }

    fn transfer(&mut self, attempt: AttemptId, size: u64, from: ResourceId, to: ResourceId) -> Result<Time, FailReason> {
        if !self.sc.topo.res(from).alive {
            return Err(FailReason::DataLost);
        }
        if from == to {
            return Ok(0.0);
        }
        let d = self
            .sc
            .net
            .transfer_time(&self.sc.topo, size, from, to)
            .map_err(|_| FailReason::Unreachable)?;
        let cost = self
            .sc
            .net
            .transfer_cost(&self.sc.topo, size, from, to)
            .map_err(|_| FailReason::Unreachable)?;
        let pipeline = self.attempt(attempt).pipeline;
        self.charge(attempt, cost);
        if self.trace_on {
            self.trace.push(TraceRecord::Transfer {
                t: self.now,
                attempt: attempt.0,
                pipeline: pipeline.0,
                from: from.0,
                to: to.0,
                bytes: size,
                cost,
            });
        }
        Ok(d)
    }

    fn charge(&mut self, attempt: AttemptId, cost: Cents) {
        let a = &mut self.attempts[attempt.0 as usize];
        a.cost += cost;
        self.pipelines[a.pipeline.0 as usize].cost += cost;
    }

    pub fn open_gate(&mut self, attempt: AttemptId) {
        let a = &mut self.attempts[attempt.0 as usize];
        a.gate_open = true;
        if a.status == AttemptStatus::Waiting {
            let fog = a.worker;
            self.enqueue(fog, attempt);
        }
    }

    fn data_ready(&mut self, id: AttemptId) {
        let a = &self.attempts[id.0 as usize];
        match a.tier {
            Tier::Edge | Tier::Cloud => self.start_run(id),
            Tier::Fog => {
                if a.gated && !a.gate_open {
                    self.attempts[id.0 as usize].status = AttemptStatus::Waiting;
                } else {
                    let fog = a.worker;
                    self.enqueue(fog, id);
                }
            }
        }
    }

    fn enqueue(&mut self, fog: ResourceId, id: AttemptId) {
        self.attempts[id.0 as usize].status = AttemptStatus::Queued;
        self.executors.entry(fog).or_default().queue.push_back(id);
        self.pump(fog);
    }

    /// Runs queued fog work one task at a time. A queued task that can no
    /// longer finish by its sub-deadline fails instead of running.
    fn pump(&mut self, fog: ResourceId) {
        loop {
            let ex = self.executors.entry(fog).or_default();
            if ex.running.is_some() {
                return;
            }
            let Some(id) = ex.queue.pop_front() else {
                return;
            };
            if self.attempts[id.0 as usize].status != AttemptStatus::Queued {
                continue;
            }
            let a = &self.attempts[id.0 as usize];
            let sigma = self.pipelines[a.pipeline.0 as usize].stages[a.stage].sigma;
            let dur = self.pipelines[a.pipeline.0 as usize].stages[a.stage].theta / self.sc.topo.res(fog).speed;
            if self.now + dur > sigma + TIME_EPS {
                self.fail_attempt(id, FailReason::MissedDeadline);
                continue;
            }
            self.start_run(id);
        }
    }

    fn start_run(&mut self, id: AttemptId) {
        let j = self.sc.workload.jitter;
        let factor = if j > 0.0 { 1.0 + self.jitter.random_range(-j..=j) } else { 1.0 };
        let a = &mut self.attempts[id.0 as usize];
        let stage = &self.pipelines[a.pipeline.0 as usize].stages[a.stage];
        let dur = stage.theta / self.sc.topo.res(a.worker).speed * factor;
        a.status = AttemptStatus::Running;
        a.started = Some(self.now);
        if a.tier == Tier::Fog {
            self.executors.entry(a.worker).or_default().running = Some(id);
        }
        self.trace_event("task_started", vec![id.0]);
        self.schedule(self.now + dur, EventKind::TaskCompleted { attempt: id });
    }

    fn bill_run(&mut self, id: AttemptId) {
        let a = &self.attempts[id.0 as usize];
        let Some(started) = a.started else { return };
        let busy = self.now - started;
        let res = self.sc.topo.res(a.worker);
        let cost = self.sc.billing.busy_cost(busy, res);
        let (pipeline, worker) = (a.pipeline, a.worker);
        self.charge(id, cost);
        if self.trace_on {
            self.trace.push(TraceRecord::Exec {
                t: self.now,
                attempt: id.0,
                pipeline: pipeline.0,
                resource: worker.0,
                busy,
                cost,
            });
        }
    }

    fn release_worker(&mut self, id: AttemptId) {
        let a = &self.attempts[id.0 as usize];
        let worker = a.worker;
        if let Some(s) = self.active.get_mut(&worker) {
            s.remove(&id);
        }
        if let Some(ex) = self.executors.get_mut(&worker) {
            if ex.running == Some(id) {
                ex.running = None;
            }
            self.pump(worker);
        }
    }

    /// Stops an unfinished attempt, billing any time it already ran.
    pub fn fail_attempt(&mut self, id: AttemptId, reason: FailReason) {
        if self.attempts[id.0 as usize].is_terminal() {
            return;
        }
        if self.attempts[id.0 as usize].status == AttemptStatus::Running {
            self.bill_run(id);
        }
        let a = &mut self.attempts[id.0 as usize];
        a.status = AttemptStatus::Failed;
        a.ended = Some(self.now);
        a.fail_reason = Some(reason);
        self.trace_event("attempt_failed", vec![id.0]);
        self.hooks.push_back(Hook::AttemptEnded(id));
        self.release_worker(id);
    }

    /// Marks the pipeline failed at its current stage and stops its attempts.
    pub fn fail_pipeline(&mut self, p: PipelineId) {
        let pl = &mut self.pipelines[p.0 as usize];
        if pl.status != PipelineStatus::Running {
            return;
        }
        pl.fail(self.now);
        self.pipeline_failed(p);
    }

    fn pipeline_failed(&mut self, p: PipelineId) {
        self.tally.tasks_failed += 1;
        self.trace_event("pipeline_failed", vec![p.0]);
        let open: Vec<AttemptId> = self
            .attempts
            .iter()
            .filter(|a| a.pipeline == p && !a.is_terminal())
            .map(|a| a.id)
            .collect();
        for a in open {
            self.fail_attempt(a, FailReason::PipelineFailed);
        }
    }

    // ---- event loop ----

    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        self.with_policy(|p, sim| p.init(sim));
        let edges = self.sc.topo.edges();
        let arrivals = match self.arrivals.take() {
            Some(a) => a,
            None => workload::arrivals(&self.sc.workload, &edges, self.sc.dags.len(), self.seed),
        };
        for a in arrivals {
            if a.dag >= self.sc.dags.len() || self.sc.topo.get(a.edge).map(|r| r.tier) != Some(Tier::Edge) {
                return Err(SimError::Invalid(format!("arrival at {} names an unknown edge or dag", a.at)));
            }
            self.schedule(
                a.at,
                EventKind::MicroBatchGenerated {
                    edge: a.edge,
                    dag: a.dag,
                    size: a.size,
                },
            );
        }
        let failures = match self.failures.take() {
            Some(f) => f,
            None => workload::failure_schedule(&edges, self.sc.workload.mtbf, self.sc.workload.duration, self.seed),
        };
        for (at, edge) in failures {
            if self.sc.topo.get(edge).map(|r| r.tier) != Some(Tier::Edge) {
                return Err(SimError::Invalid(format!("failure at {at} names non-edge {edge}")));
            }
            self.schedule(at, EventKind::EdgeFailed { edge });
        }
        while let Some(ev) = self.queue.pop() {
            debug_assert!(ev.at + TIME_EPS >= self.now);
            self.now = ev.at;
            if self.trace_on {
                let subjects = ev.kind.subjects();
                self.trace_event(ev.kind.name(), subjects);
            }
            self.dispatch(ev.kind);
            self.drain_hooks();
        }
        let audit = {
            let p = self.policy.take().expect("policy present");
            let r = p.finish(&self);
            self.policy = Some(p);
            r
        };
        audit.map_err(SimError::Audit)?;
        if let Some(p) = self.pipelines.iter().find(|p| p.status == PipelineStatus::Running) {
            return Err(SimError::Audit(format!("pipeline {} never finished", p.id.0)));
        }
        let name = self.policy.as_ref().map(|p| p.name().to_string()).unwrap_or_default();
        let report = crate::metrics::build_report(&self, &name);
        Ok(SimOutcome {
            report,
            trace: std::mem::take(&mut self.trace),
            attempts: std::mem::take(&mut self.attempts),
            pipelines: std::mem::take(&mut self.pipelines),
            micro_batches: std::mem::take(&mut self.mbs),
        })
    }

    fn with_policy<R>(&mut self, f: impl FnOnce(&mut dyn SchedulerPolicy, &mut Sim) -> R) -> R {
        let mut p = self.policy.take().expect("policy re-entered");
        let r = f(p.as_mut(), self);
        self.policy = Some(p);
        r
    }

    fn drain_hooks(&mut self) {
        while let Some(h) = self.hooks.pop_front() {
            match h {
                Hook::Trigger(p) => self.with_policy(|pol, sim| pol.on_trigger(sim, p)),
                Hook::TaskReady(p) => {
                    if self.pipeline(p).status == PipelineStatus::Running {
                        self.tally.tasks_ready += 1;
                        self.with_policy(|pol, sim| pol.on_task_ready(sim, p));
                    }
                }
                Hook::AttemptEnded(a) => self.with_policy(|pol, sim| pol.on_attempt_end(sim, a)),
                Hook::EdgeFailed(e) => self.with_policy(|pol, sim| pol.on_edge_failure(sim, e)),
            }
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::MicroBatchGenerated { edge, dag, size } => self.on_generated(edge, dag, size),
            EventKind::QueryMatched { mb } => self.on_matched(mb),
            EventKind::TriggerDag { mb, dags } => self.on_trigger(mb, dags),
            EventKind::TransferComplete { attempt } => {
                let a = self.attempt(attempt);
                if a.status != AttemptStatus::Transferring {
                    return;
                }
                if !self.sc.topo.res(a.worker).alive {
                    self.fail_attempt(attempt, FailReason::WorkerFailed);
                } else {
                    self.data_ready(attempt);
                }
            }
            EventKind::TaskCompleted { attempt } => self.on_completed(attempt),
            EventKind::EdgeFailed { edge } => self.on_edge_failed(edge),
            EventKind::CompletionNotice { attempt } => self.on_notice(attempt),
            other => self.with_policy(|p, sim| p.on_event(sim, &other)),
        }
    }

    fn on_generated(&mut self, edge: ResourceId, dag: usize, size: u64) {
        let e = self.sc.topo.res(edge);
        if !e.alive {
            self.tally.suppressed += 1;
            return;
        }
        let id = MicroBatchId(self.mbs.len() as u64);
        let meta = MicroBatchMeta {
            id,
            sid: e.name.clone(),
            t_begin: (self.now - 60.0).max(0.0),
            t_end: self.now,
            lat: e.lat,
            long: e.long,
            kv: vec![("topic".to_string(), self.sc.dags[dag].id.clone())],
            size,
            location: edge,
        };
        self.mbs.push(meta);
        self.tally.generated += 1;
        let fog = self.sc.topo.parent_fog(edge).unwrap_or(edge);
        let at = self.now + self.sc.net.control_latency(&self.sc.topo, edge, fog);
        self.schedule(at, EventKind::QueryMatched { mb: id });
    }

    fn on_matched(&mut self, mb: MicroBatchId) {
        let meta = self.mb(mb);
        let dags: Vec<usize> = self
            .queries
            .matches(meta)
            .into_iter()
            .filter_map(|d| self.dag_index.get(&d).copied())
            .collect();
        if dags.is_empty() {
            return;
        }
        let fog = self.sc.topo.parent_fog(meta.location).unwrap_or(meta.location);
        let at = self.now + self.sc.net.control_latency(&self.sc.topo, fog, self.master());
        self.schedule(at, EventKind::TriggerDag { mb, dags });
    }

    fn on_trigger(&mut self, mb: MicroBatchId, dags: Vec<usize>) {
        if !self.sc.topo.res(self.mb(mb).location).alive {
            self.tally.dropped += 1;
            return;
        }
        for dag in dags {
            let mut ids = Vec::new();
            for (ci, chain) in self.chains[dag].iter().enumerate() {
                let id = PipelineId(self.pipelines.len() as u64);
                let p = PipelineInstance::new(id, dag, &self.sc.dags[dag], ci, chain, mb, self.now);
                self.pipelines.push(p);
                ids.push(id);
            }
            for &id in &ids {
                self.hooks.push_back(Hook::Trigger(id));
                self.hooks.push_back(Hook::TaskReady(id));
            }
            self.triggers.push(TriggerRecord {
                dag,
                mb,
                at: self.now,
                pipelines: ids,
            });
        }
    }

    fn on_completed(&mut self, id: AttemptId) {
        if self.attempt(id).status != AttemptStatus::Running {
            return;
        }
        self.bill_run(id);
        let out = MicroBatchId(self.mbs.len() as u64);
        let a = &self.attempts[id.0 as usize];
        let (pipeline, stage, worker) = (a.pipeline, a.stage, a.worker);
        let src = self.mb(self.pipeline(pipeline).input).clone();
        let res = self.sc.topo.res(worker);
        self.mbs.push(MicroBatchMeta {
            id: out,
            size: self.pipeline(pipeline).stages[stage].output_size,
            location: worker,
            t_begin: src.t_begin,
            t_end: src.t_end,
            lat: res.lat,
            long: res.long,
            sid: src.sid,
            kv: src.kv,
        });
        let a = &mut self.attempts[id.0 as usize];
        a.status = AttemptStatus::Done;
        a.ended = Some(self.now);
        a.output = Some(out);
        self.hooks.push_back(Hook::AttemptEnded(id));
        self.release_worker(id);
        let at = self.now + self.sc.net.control_latency(&self.sc.topo, worker, self.master());
        self.schedule(at, EventKind::CompletionNotice { attempt: id });
    }

    fn on_edge_failed(&mut self, edge: ResourceId) {
        if !self.sc.topo.res(edge).alive {
            return;
        }
        self.sc.topo.set_alive(edge, false);
        self.tally.edge_failures += 1;
        let open: Vec<AttemptId> = self.active.get(&edge).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for a in open {
            self.fail_attempt(a, FailReason::WorkerFailed);
        }
        self.hooks.push_back(Hook::EdgeFailed(edge));
    }

    fn on_notice(&mut self, id: AttemptId) {
        let a = self.attempt(id).clone();
        let p = a.pipeline;
        if self.pipeline(p).status != PipelineStatus::Running || self.pipeline(p).cursor != a.stage {
            return;
        }
        let (Some(at), Some(out)) = (a.ended, a.output) else { return };
        match self.pipelines[p.0 as usize].advance(at, out) {
            Ok(adv) => {
                self.tally.note_done(a.tier);
                match adv {
                    Advance::Next { .. } => self.hooks.push_back(Hook::TaskReady(p)),
                    Advance::Completed => self.trace_event("pipeline_completed", vec![p.0]),
                }
            }
            Err(_) => self.pipeline_failed(p),
        }
    }

    pub(crate) fn tally(&self) -> &RunTally {
        &self.tally
    }

    pub fn triggers(&self) -> &[TriggerRecord] {
        &self.triggers
    }
}

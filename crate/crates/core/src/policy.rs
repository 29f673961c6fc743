//! Scheduling policies plug into the simulator through [`SchedulerPolicy`].
//! [`CofeePolicy`] implements inquiry–bid–select with slot reservations on
//! the fogs and the cloud as fallback.

use std::collections::BTreeMap;

use crate::calendar::{ReservationId, SlotCalendar, SlotKind, SlotState};
use crate::dag::{PipelineId, PipelineStatus};
use crate::engine::{AttemptId, AttemptStatus, EventKind, FailReason, Role, Sim, Source};
use crate::fog::{Bid, FogContext, Inquiry, InquiryId, Offer};
use crate::master::{cloud_bid, select_bid, select_candidate_fogs, FogReport};
use crate::model::{ResourceId, Tier, Time, TIME_EPS};

/// Callbacks the engine makes into a scheduler. Everything a policy does to
/// the world goes through the `&mut Sim` it is handed.
pub trait SchedulerPolicy {
    fn name(&self) -> &str;

    fn init(&mut self, _sim: &mut Sim) {}

    /// A new pipeline instance exists; its first task follows via `on_task_ready`.
    fn on_trigger(&mut self, _sim: &mut Sim, _p: PipelineId) {}

    /// The pipeline's cursor stage needs a worker.
    fn on_task_ready(&mut self, sim: &mut Sim, p: PipelineId);

    /// Policy-owned events (messages, timers, reports).
    fn on_event(&mut self, _sim: &mut Sim, _ev: &EventKind) {}

    /// An attempt reached Done or Failed.
    fn on_attempt_end(&mut self, _sim: &mut Sim, _a: AttemptId) {}

    fn on_edge_failure(&mut self, _sim: &mut Sim, _edge: ResourceId) {}

    /// End-of-run consistency check.
    fn finish(&self, _sim: &Sim) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug)]
struct Pending {
    inq: Inquiry,
    expected: usize,
    bids: Vec<Bid>,
    decided: bool,
}

/// What a permanent reservation is holding a place for.
#[derive(Debug, Clone, Copy)]
struct SlotUse {
    fog: ResourceId,
    reservation: ReservationId,
    kind: SlotKind,
    pipeline: PipelineId,
}

#[derive(Default)]
pub struct CofeePolicy {
    calendars: BTreeMap<ResourceId, SlotCalendar>,
    /// Edges promised in an outstanding bid, and to which inquiry.
    held: BTreeMap<ResourceId, InquiryId>,
    reports: BTreeMap<ResourceId, FogReport>,
    next_inquiry: u64,
    pending: BTreeMap<InquiryId, Pending>,
    /// Bids a fog has sent and not yet heard back about.
    outstanding: BTreeMap<(InquiryId, ResourceId), Bid>,
    /// Report attached to a bid, applied when the bid lands.
    piggyback: BTreeMap<(InquiryId, ResourceId), FogReport>,
    slot_of: BTreeMap<AttemptId, SlotUse>,
    owner: BTreeMap<(ResourceId, ReservationId), AttemptId>,
    /// When the fog's cached copy of an edge attempt's input lands.
    cache_ready: BTreeMap<AttemptId, Time>,
}

impl CofeePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    fn cal(&mut self, fog: ResourceId) -> &mut SlotCalendar {
        self.calendars.get_mut(&fog).expect("calendar per fog")
    }

    fn send(sim: &mut Sim, from: ResourceId, to: ResourceId, kind: EventKind) {
        let at = sim.now() + sim.net().control_latency(sim.topo(), from, to);
        sim.schedule(at, kind);
    }

    fn report(&self, sim: &Sim, fog: ResourceId) -> FogReport {
        FogReport {
            fog,
            at: sim.now(),
            slots: self.calendars[&fog].top_k(sim.now(), sim.master_config().report_top_k),
        }
    }

    fn store_report(&mut self, r: FogReport) {
        match self.reports.get(&r.fog) {
            Some(old) if old.at > r.at => {}
            _ => {
                self.reports.insert(r.fog, r);
            }
        }
    }

    /// Timer for a permanent reservation at its current start.
    fn arm_timer(&self, sim: &mut Sim, fog: ResourceId, id: ReservationId) {
        if let Some(r) = self.calendars[&fog].get(id) {
            sim.schedule(
                r.start,
                EventKind::SlotTimerFired {
                    fog,
                    reservation: id,
                    version: r.version,
                },
            );
        }
    }

    fn release_slot(&mut self, a: AttemptId) {
        if let Some(u) = self.slot_of.remove(&a) {
            self.owner.remove(&(u.fog, u.reservation));
            let _ = self.cal(u.fog).release(u.reservation);
        }
    }

    fn on_inquiry(&mut self, sim: &mut Sim, inquiry: InquiryId, fog: ResourceId) {
        let Some(inq) = self.pending.get(&inquiry).map(|p| p.inq.clone()) else {
            return;
        };
        let idle: Vec<ResourceId> = sim
            .topo()
            .children(fog)
            .iter()
            .copied()
            .filter(|&e| sim.is_idle(e) && !self.held.contains_key(&e))
            .collect();
        let ctx = FogContext {
            topo: sim.topo(),
            net: sim.net(),
            billing: sim.billing(),
            t_inq: sim.master_config().bid_timeout,
        };
        let p_fail = |e: ResourceId| sim.failure_prob(e);
        let cal = self.calendars.get_mut(&fog).expect("calendar per fog");
        let (bid, moved) = ctx.compute_bid(&inq, fog, sim.now(), &idle, &p_fail, cal);
        for id in moved {
            if self.owner.contains_key(&(fog, id)) {
                self.arm_timer(sim, fog, id);
            }
        }
        if let Offer::Edge { edge, .. } = bid.offer {
            self.held.insert(edge, inquiry);
        }
        if sim.master_config().piggyback_reports {
            let r = self.report(sim, fog);
            self.piggyback.insert((inquiry, fog), r);
        }
        self.outstanding.insert((inquiry, fog), bid);
        let master = sim.master();
        Self::send(sim, fog, master, EventKind::BidDelivered { inquiry, fog });
    }

    fn on_bid(&mut self, sim: &mut Sim, inquiry: InquiryId, fog: ResourceId) {
        if let Some(r) = self.piggyback.remove(&(inquiry, fog)) {
            self.store_report(r);
        }
        let bid = self.outstanding.get(&(inquiry, fog)).cloned();
        let master = sim.master();
        let p = match self.pending.get_mut(&inquiry) {
            Some(p) if !p.decided => p,
            _ => {
                // too late: free whatever the fog set aside
                Self::send(sim, master, fog, EventKind::RejectDelivered { inquiry, fog });
                return;
            }
        };
        if let Some(b) = bid {
            p.bids.push(b);
        }
        if p.bids.len() >= p.expected {
            self.decide(sim, inquiry);
        }
    }

    fn decide(&mut self, sim: &mut Sim, inquiry: InquiryId) {
        let Some(p) = self.pending.get_mut(&inquiry) else {
            return;
        };
        if p.decided {
            return;
        }
        p.decided = true;
        let inq = p.inq.clone();
        let mut bids = std::mem::take(&mut p.bids);
        let master = sim.master();
        let running = sim.pipeline(inq.pipeline).status == PipelineStatus::Running
            && sim.pipeline(inq.pipeline).cursor == inq.stage;
        let cloud = sim.least_loaded_cloud();
        bids.push(cloud_bid(sim.topo(), sim.net(), sim.billing(), &inq, sim.now(), cloud));
        let winner = if running { select_bid(&bids) } else { None };
        for (i, b) in bids.iter().enumerate() {
            if Some(i) == winner || b.tier == Tier::Cloud && b.bidder == cloud {
                continue;
            }
            let fog = b.bidder;
            let kind = EventKind::RejectDelivered { inquiry, fog };
            Self::send(sim, master, fog, kind);
        }
        match winner.map(|i| &bids[i]) {
            Some(b) if b.offer == Offer::Cloud => {
                sim.begin_attempt(inq.pipeline, b.worker, Role::Cloud, Source::Input, false);
                self.pending.remove(&inquiry);
            }
            Some(b) => {
                let fog = b.bidder;
                Self::send(sim, master, fog, EventKind::AcceptDelivered { inquiry, fog });
            }
            None => {
                self.pending.remove(&inquiry);
                if running {
                    sim.trace_event("no_viable_bid", vec![inquiry.0, inq.pipeline.0]);
                    sim.fail_pipeline(inq.pipeline);
                }
            }
        }
    }

    fn on_accept(&mut self, sim: &mut Sim, inquiry: InquiryId, fog: ResourceId) {
        let Some(bid) = self.outstanding.remove(&(inquiry, fog)) else {
            return;
        };
        let inq = self.pending.remove(&inquiry).map(|p| p.inq);
        if let Offer::Edge { edge, .. } = bid.offer {
            self.held.remove(&edge);
        }
        let Some(res) = bid.reservation else { return };
        let live = inq.as_ref().is_some_and(|q| {
            let p = sim.pipeline(q.pipeline);
            p.status == PipelineStatus::Running && p.cursor == q.stage
        });
        if !live {
            let _ = self.cal(fog).release(res);
            return;
        }
        let inq = inq.expect("checked above");
        self.cal(fog).make_permanent(res).expect("reservation held for bid");
        let (a, kind) = match bid.offer {
            Offer::Edge { edge, .. } => {
                let a = sim.begin_attempt(inq.pipeline, edge, Role::Edge, Source::Input, false);
                if let Some(t) = sim.cache_copy(a, fog) {
                    self.cache_ready.insert(a, t);
                }
                (a, SlotKind::Backup)
            }
            _ => (
                sim.begin_attempt(inq.pipeline, fog, Role::FogPrimary, Source::Input, true),
                SlotKind::Primary,
            ),
        };
        self.slot_of.insert(
            a,
            SlotUse {
                fog,
                reservation: res,
                kind,
                pipeline: inq.pipeline,
            },
        );
        self.owner.insert((fog, res), a);
        self.arm_timer(sim, fog, res);
    }

    fn on_reject(&mut self, inquiry: InquiryId, fog: ResourceId) {
        if let Some(bid) = self.outstanding.remove(&(inquiry, fog)) {
            if let Offer::Edge { edge, .. } = bid.offer {
                if self.held.get(&edge) == Some(&inquiry) {
                    self.held.remove(&edge);
                }
            }
            if let Some(r) = bid.reservation {
                let _ = self.cal(fog).release(r);
            }
        }
    }

    fn on_timer(&mut self, sim: &mut Sim, fog: ResourceId, reservation: ReservationId, version: u32) {
        match self.calendars[&fog].get(reservation) {
            Some(r) if r.version == version && r.state == SlotState::Permanent => {}
            _ => return,
        }
        let Some(&a) = self.owner.get(&(fog, reservation)) else {
            return;
        };
        let u = self.slot_of[&a];
        match u.kind {
            SlotKind::Primary => sim.open_gate(a),
            SlotKind::Backup => {
                let status = sim.attempt(a).status;
                if status == AttemptStatus::Done {
                    return;
                }
                if sim.pipeline(u.pipeline).status != PipelineStatus::Running {
                    return;
                }
                // the edge is past its ω or already gone; the fog takes over
                self.slot_of.remove(&a);
                self.owner.remove(&(fog, reservation));
                let ready = self.cache_ready.remove(&a);
                if !sim.attempt(a).is_terminal() {
                    sim.fail_attempt(a, FailReason::Cancelled);
                }
                match ready {
                    Some(t) if t <= sim.now() + TIME_EPS => {
                        let b = sim.begin_attempt(u.pipeline, fog, Role::FogBackup, Source::Local, false);
                        self.slot_of.insert(b, u);
                        self.owner.insert((fog, reservation), b);
                    }
                    _ => {
                        let _ = self.cal(fog).release(reservation);
                        sim.fail_pipeline(u.pipeline);
                    }
                }
            }
        }
    }

    fn on_tick(&mut self, sim: &mut Sim) {
        let master = sim.master();
        for fog in sim.topo().fogs() {
            let report = self.report(sim, fog);
            Self::send(sim, fog, master, EventKind::FreeSlotReport { report });
        }
        if sim.now() < sim.run_end() || sim.running_pipelines() > 0 {
            let at = sim.now() + sim.master_config().report_period;
            sim.schedule(at, EventKind::ReportTick);
        }
    }
}

impl SchedulerPolicy for CofeePolicy {
    fn name(&self) -> &str {
        "cofee"
    }

    fn init(&mut self, sim: &mut Sim) {
        for fog in sim.topo().fogs() {
            let chi = sim.scenario().chi(fog);
            self.calendars
                .insert(fog, SlotCalendar::new(chi).expect("validated over-subscription"));
        }
        sim.schedule(0.0, EventKind::ReportTick);
    }

    fn on_task_ready(&mut self, sim: &mut Sim, p: PipelineId) {
        let pl = sim.pipeline(p);
        let stage = pl.current();
        let input = sim.mb(pl.input);
        let inq = Inquiry {
            id: InquiryId(self.next_inquiry),
            pipeline: p,
            stage: pl.cursor,
            theta: stage.theta,
            sigma: stage.sigma,
            input: input.id,
            input_size: input.size,
            input_location: input.location,
            issued_at: sim.now(),
        };
        self.next_inquiry += 1;
        let reports: Vec<FogReport> = self.reports.values().cloned().collect();
        let fogs = select_candidate_fogs(sim.topo(), &inq, sim.now(), &reports, sim.master_config().fanout);
        let id = inq.id;
        self.pending.insert(
            id,
            Pending {
                inq,
                expected: fogs.len(),
                bids: Vec::new(),
                decided: false,
            },
        );
        if fogs.is_empty() {
            self.decide(sim, id);
            return;
        }
        let master = sim.master();
        for fog in fogs {
            Self::send(sim, master, fog, EventKind::InquiryDelivered { inquiry: id, fog });
        }
        let at = sim.now() + sim.master_config().bid_timeout;
        sim.schedule(at, EventKind::SelectionTimeout { inquiry: id });
    }

    fn on_event(&mut self, sim: &mut Sim, ev: &EventKind) {
        match *ev {
            EventKind::InquiryDelivered { inquiry, fog } => self.on_inquiry(sim, inquiry, fog),
            EventKind::BidDelivered { inquiry, fog } => self.on_bid(sim, inquiry, fog),
            EventKind::SelectionTimeout { inquiry } => self.decide(sim, inquiry),
            EventKind::AcceptDelivered { inquiry, fog } => self.on_accept(sim, inquiry, fog),
            EventKind::RejectDelivered { inquiry, fog } => self.on_reject(inquiry, fog),
            EventKind::SlotTimerFired {
                fog,
                reservation,
                version,
            } => self.on_timer(sim, fog, reservation, version),
            EventKind::ReportTick => self.on_tick(sim),
            EventKind::FreeSlotReport { ref report } => self.store_report(report.clone()),
            _ => {}
        }
    }

    fn on_attempt_end(&mut self, sim: &mut Sim, a: AttemptId) {
        let at = sim.attempt(a).clone();
        let pipeline_alive = sim.pipeline(at.pipeline).status == PipelineStatus::Running;
        match at.role {
            Role::Edge => {
                if at.status == AttemptStatus::Done || !pipeline_alive {
                    self.cache_ready.remove(&a);
                    self.release_slot(a);
                } else if !self.cache_ready.contains_key(&a) && self.slot_of.contains_key(&a) {
                    // nothing for the backup to run on
                    self.release_slot(a);
                    sim.fail_pipeline(at.pipeline);
                }
            }
            Role::FogPrimary | Role::FogBackup | Role::FogDirect | Role::Cloud => {
                self.release_slot(a);
                if at.status == AttemptStatus::Failed && pipeline_alive {
                    sim.fail_pipeline(at.pipeline);
                }
            }
        }
    }

    fn finish(&self, _sim: &Sim) -> Result<(), String> {
        for (fog, cal) in &self.calendars {
            cal.audit().map_err(|e| format!("{fog}: {e}"))?;
            if !cal.is_empty() {
                return Err(format!("{fog} still holds {} reservations", cal.len()));
            }
        }
        if !self.held.is_empty() || !self.outstanding.is_empty() {
            return Err("bids left outstanding".into());
        }
        Ok(())
    }
}

//! Fog-side bidding: which edge (or the fog itself) would run a task, what it
//! would cost in the worst case, and the calendar slot that backs the offer.

use serde::{Deserialize, Serialize};

use crate::calendar::{ReservationId, SlotCalendar, SlotKind};
use crate::dag::PipelineId;
use crate::model::{BillingPolicy, Cents, MicroBatchId, NetworkModel, ResourceId, Tier, Time, Topology, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InquiryId(pub u64);

/// ⟨τ, θ, σ, μ, α, r⟩ plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Inquiry {
    pub id: InquiryId,
    pub pipeline: PipelineId,
    pub stage: usize,
    pub theta: f64,
    pub sigma: Time,
    pub input: MicroBatchId,
    pub input_size: u64,
    pub input_location: ResourceId,
    pub issued_at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Offer {
    /// Run on an edge that must finish by `omega`, backed by a fog backup slot.
    Edge { edge: ResourceId, omega: Time },
    /// Run on the fog itself in a primary slot.
    Fog,
    Cloud,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub inquiry: InquiryId,
    pub bidder: ResourceId,
    pub worker: ResourceId,
    pub tier: Tier,
    /// Expected maximum cost κ.
    pub kappa: Cents,
    pub offer: Offer,
    pub reservation: Option<ReservationId>,
}

impl Bid {
    pub fn empty(inquiry: InquiryId, bidder: ResourceId) -> Self {
        Self {
            inquiry,
            bidder,
            worker: bidder,
            tier: Tier::Fog,
            kappa: f64::INFINITY,
            offer: Offer::None,
            reservation: None,
        }
    }

    pub fn viable(&self) -> bool {
        !matches!(self.offer, Offer::None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCandidate {
    pub edge: ResourceId,
    /// Latest completion time on the edge.
    pub omega: Time,
    pub kappa: Cents,
    pub transfer_time: Time,
}

/// Failure probability of an edge over the rest of a run, from its MTBF.
pub fn failure_probability(now: Time, run_end: Time, mtbf: Option<f64>) -> f64 {
    match mtbf {
        Some(m) if m.is_finite() && m > 0.0 => ((run_end - now).max(0.0) / m).clamp(0.0, 1.0),
        _ => 0.0,
    }
}

/// Shared coefficients a fog needs to price a task.
#[derive(Debug, Clone, Copy)]
pub struct FogContext<'a> {
    pub topo: &'a Topology,
    pub net: &'a NetworkModel,
    pub billing: &'a BillingPolicy,
    /// Bid timeout t_inq, budgeted before any transfer can start.
    pub t_inq: f64,
}

impl FogContext<'_> {
    /// ω and κ for one edge, or `None` if it cannot finish in time for the
    /// fog to still run the backup before σ.
    pub fn edge_candidate(
        &self,
        inq: &Inquiry,
        fog: ResourceId,
        edge: ResourceId,
        now: Time,
        p_fail: f64,
    ) -> Option<EdgeCandidate> {
        let e = self.topo.res(edge);
        let f = self.topo.res(fog);
        let d = self.net.transfer_time(self.topo, inq.input_size, inq.input_location, edge).ok()?;
        let omega = now + self.t_inq + d + inq.theta / e.speed;
        if omega + inq.theta / f.speed > inq.sigma + TIME_EPS {
            return None;
        }
        let k_e = self.net.transfer_cost(self.topo, inq.input_size, inq.input_location, edge).ok()?;
        let k_f = inq.input_size as f64 * self.net.link(self.topo, edge, fog).price_per_byte;
        let kappa = (k_e + self.billing.exec_cost(inq.theta, e))
            + (k_f + p_fail * self.billing.exec_cost(inq.theta, f));
        Some(EdgeCandidate {
            edge,
            omega,
            kappa,
            transfer_time: d,
        })
    }

    /// Viable candidates among `idle` edges, cheapest first.
    pub fn edge_candidates(
        &self,
        inq: &Inquiry,
        fog: ResourceId,
        now: Time,
        idle: &[ResourceId],
        p_fail: &dyn Fn(ResourceId) -> f64,
    ) -> Vec<EdgeCandidate> {
        let mut c: Vec<EdgeCandidate> = idle
            .iter()
            .filter_map(|&e| self.edge_candidate(inq, fog, e, now, p_fail(e)))
            .collect();
        c.sort_by(|a, b| {
            a.kappa
                .total_cmp(&b.kappa)
                .then(a.omega.total_cmp(&b.omega))
                .then(a.edge.cmp(&b.edge))
        });
        c
    }

    /// Builds the fog's bid: the cheapest edge whose backup slot can be
    /// reserved, else a primary slot on the fog, else an empty bid. Returns the
    /// reservations defragmentation moved alongside the bid.
    pub fn compute_bid(
        &self,
        inq: &Inquiry,
        fog: ResourceId,
        now: Time,
        idle: &[ResourceId],
        p_fail: &dyn Fn(ResourceId) -> f64,
        cal: &mut SlotCalendar,
    ) -> (Bid, Vec<ReservationId>) {
        let f = self.topo.res(fog);
        let dur = inq.theta / f.speed;
        for c in self.edge_candidates(inq, fog, now, idle, p_fail) {
            if let Some(r) = cal.reserve(now, SlotKind::Backup, dur, c.omega, inq.sigma) {
                let bid = Bid {
                    inquiry: inq.id,
                    bidder: fog,
                    worker: c.edge,
                    tier: Tier::Edge,
                    kappa: c.kappa,
                    offer: Offer::Edge { edge: c.edge, omega: c.omega },
                    reservation: Some(r.id),
                };
                return (bid, r.moved);
            }
        }
        let direct = self
            .net
            .transfer_time(self.topo, inq.input_size, inq.input_location, fog)
            .and_then(|d| {
                let k = self.net.transfer_cost(self.topo, inq.input_size, inq.input_location, fog)?;
                Ok((d, k))
            });
        if let Ok((d, k)) = direct {
            let earliest = now + self.t_inq + d;
            if let Some(r) = cal.reserve(now, SlotKind::Primary, dur, earliest, inq.sigma) {
                let bid = Bid {
                    inquiry: inq.id,
                    bidder: fog,
                    worker: fog,
                    tier: Tier::Fog,
                    kappa: k + self.billing.exec_cost(inq.theta, f),
                    offer: Offer::Fog,
                    reservation: Some(r.id),
                };
                return (bid, r.moved);
            }
        }
        (Bid::empty(inq.id, fog), Vec::new())
    }
}

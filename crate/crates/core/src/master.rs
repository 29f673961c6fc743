//! Master-side pieces of the inquiry–bid–select cycle: choosing which fogs to
//! ask, pricing the always-available cloud fallback, and picking the winner.

use serde::{Deserialize, Serialize};

use crate::calendar::FreeSlot;
use crate::fog::{Bid, Inquiry, Offer};
use crate::model::{BillingPolicy, NetworkModel, ResourceId, Tier, Time, Topology, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterConfig {
    /// Inquiry fan-out n.
    pub fanout: usize,
    /// Bid timeout t_inq in seconds.
    pub bid_timeout: f64,
    /// Free slots per fog report (k).
    pub report_top_k: usize,
    pub report_period: f64,
    /// Fogs attach a fresh free-slot report to every bid.
    pub piggyback_reports: bool,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            fanout: 2,
            bid_timeout: 1.0,
            report_top_k: 3,
            report_period: 5.0,
            piggyback_reports: true,
        }
    }
}

impl MasterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.fanout < 1 {
            return Err("fanout must be at least 1".into());
        }
        if !(self.bid_timeout > 0.0) {
            return Err("bid timeout must be positive".into());
        }
        if self.report_top_k < 1 {
            return Err("report_top_k must be at least 1".into());
        }
        if !(self.report_period > 0.0) {
            return Err("report period must be positive".into());
        }
        Ok(())
    }
}

/// The latest top-k free slots a fog reported.
#[derive(Debug, Clone, PartialEq)]
pub struct FogReport {
    pub fog: ResourceId,
    pub at: Time,
    pub slots: Vec<FreeSlot>,
}

impl FogReport {
    /// Whether some reported slot fits `dur` after `now` and before `sigma`.
    pub fn fits(&self, now: Time, dur: f64, sigma: Time) -> bool {
        self.slots.iter().any(|s| s.fits(now, dur, sigma))
    }

    /// Reported free time inside `[now, sigma]`, a load proxy.
    pub fn free_within(&self, now: Time, sigma: Time) -> f64 {
        self.slots
            .iter()
            .map(|s| (s.end.min(sigma) - s.start.max(now)).max(0.0))
            .sum()
    }
}

/// Fogs whose reports show room for the task before its sub-deadline,
/// cheapest first, then least loaded, then by name; at most `n`.
pub fn select_candidate_fogs(
    topo: &Topology,
    inq: &Inquiry,
    now: Time,
    reports: &[FogReport],
    n: usize,
) -> Vec<ResourceId> {
    let mut c: Vec<(&FogReport, f64)> = reports
        .iter()
        .filter(|r| topo.res(r.fog).alive)
        .filter(|r| r.fits(now, inq.theta / topo.res(r.fog).speed, inq.sigma))
        .map(|r| (r, r.free_within(now, inq.sigma)))
        .collect();
    c.sort_by(|(a, fa), (b, fb)| {
        let (ra, rb) = (topo.res(a.fog), topo.res(b.fog));
        ra.price
            .total_cmp(&rb.price)
            .then(fb.total_cmp(fa))
            .then(ra.name.cmp(&rb.name))
    });
    c.into_iter().take(n).map(|(r, _)| r.fog).collect()
}

/// The cloud's bid for an inquiry evaluated at `now` on `worker`.
pub fn cloud_bid(
    topo: &Topology,
    net: &NetworkModel,
    billing: &BillingPolicy,
    inq: &Inquiry,
    now: Time,
    worker: ResourceId,
) -> Bid {
    let c = topo.res(worker);
    let priced = net
        .transfer_time(topo, inq.input_size, inq.input_location, worker)
        .and_then(|d| Ok((d, net.transfer_cost(topo, inq.input_size, inq.input_location, worker)?)));
    match priced {
        Ok((d, k)) if now + d + inq.theta / c.speed <= inq.sigma + TIME_EPS => Bid {
            inquiry: inq.id,
            bidder: worker,
            worker,
            tier: Tier::Cloud,
            kappa: k + billing.exec_cost(inq.theta, c),
            offer: Offer::Cloud,
            reservation: None,
        },
        _ => {
            let mut b = Bid::empty(inq.id, worker);
            b.tier = Tier::Cloud;
            b
        }
    }
}

/// Index of the cheapest viable bid; ties prefer edge over fog over cloud,
/// then the lower worker id.
pub fn select_bid(bids: &[Bid]) -> Option<usize> {
    bids.iter()
        .enumerate()
        .filter(|(_, b)| b.viable())
        .min_by(|(_, a), (_, b)| {
            a.kappa
                .total_cmp(&b.kappa)
                .then(a.tier.preference().cmp(&b.tier.preference()))
                .then(a.worker.cmp(&b.worker))
        })
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::PipelineId;
    use crate::fog::InquiryId;
    use crate::model::{price_per_increment, LinkParams, MicroBatchId};
    use approx::assert_relative_eq;

    fn setup() -> (Topology, NetworkModel, BillingPolicy, Vec<ResourceId>, ResourceId) {
        let billing = BillingPolicy::default();
        let mut topo = Topology::new();
        let fogs = ["fog-c", "fog-a", "fog-b"]
            .iter()
            .map(|n| topo.add_fog(n, 8.0, price_per_increment(1.467, &billing)))
            .collect();
        let cloud = topo.add_cloud("cloud", 50.0, price_per_increment(10.0, &billing));
        let net = NetworkModel::new(
            LinkParams::mbps_ms(60.0, 1.0),
            LinkParams::mbps_ms(100.0, 5.0),
            LinkParams::mbps_ms(100.0, 5.0),
            LinkParams::mbps_ms(100.0, 5.0),
        );
        (topo, net, billing, fogs, cloud)
    }

    fn inq(theta: f64, sigma: Time, at: ResourceId) -> Inquiry {
        Inquiry {
            id: InquiryId(0),
            pipeline: PipelineId(0),
            stage: 0,
            theta,
            sigma,
            input: MicroBatchId(0),
            input_size: 1_000_000,
            input_location: at,
            issued_at: 0.0,
        }
    }

    fn report(fog: ResourceId, span: f64) -> FogReport {
        FogReport {
            fog,
            at: 0.0,
            slots: vec![FreeSlot { lane: 0, start: 0.0, end: span }],
        }
    }

    #[test]
    fn candidates_need_room_and_break_ties_by_name() {
        let (topo, _, _, fogs, cloud) = setup();
        let reports = vec![report(fogs[0], 50.0), report(fogs[1], 5.0), report(fogs[2], 50.0)];
        let q = inq(60.0, 40.0, cloud);
        let got = select_candidate_fogs(&topo, &q, 0.0, &reports, 2);
        // fog-a is too full; fog-b sorts before fog-c
        assert_eq!(got, vec![fogs[2], fogs[0]]);
        assert_eq!(select_candidate_fogs(&topo, &q, 0.0, &reports, 1), vec![fogs[2]]);
        let tight = vec![report(fogs[0], 5.0), report(fogs[1], 5.0)];
        assert!(select_candidate_fogs(&topo, &q, 0.0, &tight, 2).is_empty());
    }

    #[test]
    fn cheaper_fog_wins_over_emptier_one() {
        let (mut topo, _, billing, _, cloud) = setup();
        let cheap = topo.add_fog("fog-z", 8.0, price_per_increment(1.0, &billing));
        let mut reports: Vec<FogReport> = topo.fogs().into_iter().map(|f| report(f, 100.0)).collect();
        reports.last_mut().unwrap().slots[0].end = 20.0;
        let got = select_candidate_fogs(&topo, &inq(60.0, 40.0, cloud), 0.0, &reports, 1);
        assert_eq!(got, vec![cheap]);
    }

    #[test]
    fn cloud_bid_prices_transfer_and_execution() {
        let (topo, net, billing, fogs, cloud) = setup();
        let q = inq(60.0, 10.0, fogs[0]);
        let b = cloud_bid(&topo, &net, &billing, &q, 0.0, cloud);
        assert!(b.viable());
        // 1.2 s on the cloud bills two increments
        assert_relative_eq!(b.kappa, 2.0 * 10.0 / 3600.0, max_relative = 1e-12);
        assert!(!cloud_bid(&topo, &net, &billing, &q, 9.5, cloud).viable());
        let local = inq(60.0, 1.2, cloud);
        assert!(cloud_bid(&topo, &net, &billing, &local, 0.0, cloud).viable());
    }

    fn bid(kappa: f64, tier: Tier, worker: u32) -> Bid {
        Bid {
            inquiry: InquiryId(0),
            bidder: ResourceId(worker),
            worker: ResourceId(worker),
            tier,
            kappa,
            offer: match tier {
                Tier::Edge => Offer::Edge {
                    edge: ResourceId(worker),
                    omega: 0.0,
                },
                Tier::Fog => Offer::Fog,
                Tier::Cloud => Offer::Cloud,
            },
            reservation: None,
        }
    }

    #[test]
    fn cheapest_viable_bid_wins() {
        let bids = vec![bid(4.0e-3, Tier::Edge, 1), bid(3.1e-3, Tier::Edge, 2), bid(6.1e-3, Tier::Cloud, 9)];
        assert_eq!(select_bid(&bids), Some(1));
        let scaled: Vec<Bid> = bids
            .iter()
            .map(|b| Bid {
                kappa: b.kappa * 7.5,
                ..b.clone()
            })
            .collect();
        assert_eq!(select_bid(&scaled), Some(1));
        let mut none = bids.clone();
        for b in &mut none {
            b.offer = Offer::None;
        }
        assert_eq!(select_bid(&none), None);
        assert_eq!(select_bid(&[Bid::empty(InquiryId(0), ResourceId(1)), bid(1.0, Tier::Cloud, 3)]), Some(1));
    }

    #[test]
    fn ties_prefer_captive_resources() {
        let bids = vec![bid(1.0, Tier::Cloud, 1), bid(1.0, Tier::Fog, 5), bid(1.0, Tier::Edge, 7)];
        assert_eq!(select_bid(&bids), Some(2));
        let same_tier = vec![bid(1.0, Tier::Fog, 5), bid(1.0, Tier::Fog, 3)];
        assert_eq!(select_bid(&same_tier), Some(1));
    }
}

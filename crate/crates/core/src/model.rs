//! Resources, network coefficients, micro-batch metadata and the billing model
//! shared by every scheduler and by the simulation engine.
//!
//! Times are simulated seconds (`f64`), sizes are bytes, bandwidths are
//! bits/second and money is cents as a real number.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in seconds.
pub type Time = f64;
/// Monetary amount in cents.
pub type Cents = f64;

/// Tolerance used when comparing simulated timestamps.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceId(pub u32);

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Edge,
    Fog,
    Cloud,
}

impl Tier {
    /// Preference rank used to break cost ties: captive resources first.
    pub fn preference(self) -> u8 {
        match self {
            Tier::Edge => 0,
            Tier::Fog => 1,
            Tier::Cloud => 2,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Edge => "edge",
            Tier::Fog => "fog",
            Tier::Cloud => "cloud",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("no route from {from} to {to}: link {a}->{b} has zero bandwidth")]
    Unreachable {
        from: ResourceId,
        to: ResourceId,
        a: ResourceId,
        b: ResourceId,
    },
    #[error("unknown resource {0}")]
    UnknownResource(ResourceId),
    #[error("invalid resource {name}: {reason}")]
    InvalidResource { name: String, reason: String },
    #[error("invalid micro-batch {id}: {reason}")]
    InvalidMicroBatch { id: u64, reason: String },
}

/// An edge, fog or cloud worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    pub id: ResourceId,
    pub name: String,
    pub tier: Tier,
    /// Parent fog for an edge, the fog itself for a fog, `None` for cloud.
    pub partition: Option<ResourceId>,
    /// Speed relative to the base resource (ρ).
    pub speed: f64,
    /// Price per billing increment (π), in cents.
    pub price: Cents,
    /// Per-task failure probability used when bidding. Always 0 for fog and cloud.
    pub failure_prob: f64,
    pub lat: f64,
    pub long: f64,
    pub alive: bool,
    /// The master service runs on a cloud VM but never executes tasks.
    pub worker: bool,
}

/// All resources of a deployment, indexed by `ResourceId`.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    resources: Vec<Resource>,
    children: BTreeMap<ResourceId, Vec<ResourceId>>,
    master: Option<ResourceId>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, mut r: Resource) -> ResourceId {
        let id = ResourceId(self.resources.len() as u32);
        r.id = id;
        self.resources.push(r);
        id
    }

    pub fn add_fog(&mut self, name: &str, speed: f64, price: Cents) -> ResourceId {
        let id = self.push(Resource {
            id: ResourceId(0),
            name: name.to_string(),
            tier: Tier::Fog,
            partition: None,
            speed,
            price,
            failure_prob: 0.0,
            lat: 0.0,
            long: 0.0,
            alive: true,
            worker: true,
        });
        self.resources[id.0 as usize].partition = Some(id);
        self.children.insert(id, Vec::new());
        id
    }

    pub fn add_edge(
        &mut self,
        name: &str,
        parent: ResourceId,
        speed: f64,
        price: Cents,
        failure_prob: f64,
    ) -> Result<ResourceId, ModelError> {
        match self.get(parent) {
            Some(r) if r.tier == Tier::Fog => {}
            Some(_) => {
                return Err(ModelError::InvalidResource {
                    name: name.to_string(),
                    reason: format!("parent {parent} is not a fog"),
                })
            }
            None => return Err(ModelError::UnknownResource(parent)),
        }
        let id = self.push(Resource {
            id: ResourceId(0),
            name: name.to_string(),
            tier: Tier::Edge,
            partition: Some(parent),
            speed,
            price,
            failure_prob,
            lat: 0.0,
            long: 0.0,
            alive: true,
            worker: true,
        });
        self.children.entry(parent).or_default().push(id);
        Ok(id)
    }

    pub fn add_cloud(&mut self, name: &str, speed: f64, price: Cents) -> ResourceId {
        self.push(Resource {
            id: ResourceId(0),
            name: name.to_string(),
            tier: Tier::Cloud,
            partition: None,
            speed,
            price,
            failure_prob: 0.0,
            lat: 0.0,
            long: 0.0,
            alive: true,
            worker: true,
        })
    }

    /// Adds the cloud VM hosting the master service.
    pub fn add_master(&mut self, name: &str) -> ResourceId {
        let id = self.push(Resource {
            id: ResourceId(0),
            name: name.to_string(),
            tier: Tier::Cloud,
            partition: None,
            speed: 1.0,
            price: 0.0,
            failure_prob: 0.0,
            lat: 0.0,
            long: 0.0,
            alive: true,
            worker: false,
        });
        self.master = Some(id);
        id
    }

    pub fn set_location(&mut self, id: ResourceId, lat: f64, long: f64) {
        let r = &mut self.resources[id.0 as usize];
        r.lat = lat;
        r.long = long;
    }

    pub fn set_alive(&mut self, id: ResourceId, alive: bool) {
        self.resources[id.0 as usize].alive = alive;
    }

    pub fn get(&self, id: ResourceId) -> Option<&Resource> {
        self.resources.get(id.0 as usize)
    }

    /// Panics on an id that was not produced by this topology.
    pub fn res(&self, id: ResourceId) -> &Resource {
        &self.resources[id.0 as usize]
    }

    pub fn by_name(&self, name: &str) -> Option<&Resource> {
        self.resources.iter().find(|r| r.name == name)
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn master(&self) -> Option<ResourceId> {
        self.master
    }

    pub fn ids_of(&self, tier: Tier) -> impl Iterator<Item = ResourceId> + '_ {
        self.resources
            .iter()
            .filter(move |r| r.tier == tier && r.worker)
            .map(|r| r.id)
    }

    pub fn fogs(&self) -> Vec<ResourceId> {
        self.ids_of(Tier::Fog).collect()
    }

    pub fn edges(&self) -> Vec<ResourceId> {
        self.ids_of(Tier::Edge).collect()
    }

    pub fn clouds(&self) -> Vec<ResourceId> {
        self.ids_of(Tier::Cloud).collect()
    }

    /// Edge children of a fog, C(r^F).
    pub fn children(&self, fog: ResourceId) -> &[ResourceId] {
        self.children.get(&fog).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parent_fog(&self, edge: ResourceId) -> Option<ResourceId> {
        let r = self.get(edge)?;
        match r.tier {
            Tier::Edge => r.partition,
            _ => None,
        }
    }

    /// Checks the structural invariants of the resource set.
    pub fn validate(&self) -> Result<(), ModelError> {
        for r in &self.resources {
            let bad = |reason: &str| ModelError::InvalidResource {
                name: r.name.clone(),
                reason: reason.to_string(),
            };
            if !(r.speed >= 1.0) {
                return Err(bad("speed must be >= 1 relative to the base resource"));
            }
            if !(r.price >= 0.0) {
                return Err(bad("price must be non-negative"));
            }
            if !(0.0..=1.0).contains(&r.failure_prob) {
                return Err(bad("failure probability must be within [0, 1]"));
            }
            if r.tier != Tier::Edge && r.failure_prob != 0.0 {
                return Err(bad("only edges may have a failure probability"));
            }
            if r.tier == Tier::Edge {
                match r.partition.and_then(|p| self.get(p)) {
                    Some(p) if p.tier == Tier::Fog => {}
                    _ => return Err(bad("edge must have exactly one parent fog")),
                }
            }
        }
        Ok(())
    }
}

/// Bandwidth, latency and price of one network hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// β in bits per second; 0 means unreachable.
    pub bandwidth: f64,
    /// λ in seconds.
    pub latency: f64,
    /// φ in cents per byte.
    pub price_per_byte: f64,
}

impl LinkParams {
    pub fn new(bandwidth: f64, latency: f64) -> Self {
        Self {
            bandwidth,
            latency,
            price_per_byte: 0.0,
        }
    }

    pub fn mbps_ms(mbps: f64, ms: f64) -> Self {
        Self::new(mbps * 1e6, ms * 1e-3)
    }
}

/// Per tier-pair link defaults plus explicit per-pair overrides. Edge traffic
/// always transits the parent fog.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub fog_edge: LinkParams,
    pub fog_fog: LinkParams,
    pub fog_cloud: LinkParams,
    pub cloud_cloud: LinkParams,
    overrides: BTreeMap<(ResourceId, ResourceId), LinkParams>,
}

impl NetworkModel {
    pub fn new(
        fog_edge: LinkParams,
        fog_fog: LinkParams,
        fog_cloud: LinkParams,
        cloud_cloud: LinkParams,
    ) -> Self {
        Self {
            fog_edge,
            fog_fog,
            fog_cloud,
            cloud_cloud,
            overrides: BTreeMap::new(),
        }
    }

    /// Overrides the parameters of one direction of a hop.
    pub fn set_link(&mut self, from: ResourceId, to: ResourceId, params: LinkParams) {
        self.overrides.insert((from, to), params);
    }

    pub fn link(&self, topo: &Topology, from: ResourceId, to: ResourceId) -> LinkParams {
        if let Some(p) = self.overrides.get(&(from, to)) {
            return *p;
        }
        let (a, b) = (topo.res(from).tier, topo.res(to).tier);
        match (a.min(b), a.max(b)) {
            (Tier::Edge, Tier::Fog) => self.fog_edge,
            (Tier::Fog, Tier::Fog) => self.fog_fog,
            (Tier::Fog, Tier::Cloud) => self.fog_cloud,
            (Tier::Cloud, Tier::Cloud) => self.cloud_cloud,
            // Edges only talk to their parent fog; direct links do not exist.
            _ => LinkParams::new(0.0, 0.0),
        }
    }

    /// Hops from `from` to `to`: up to the parent fog, across, and down to the
    /// destination edge. Empty when `from == to`.
    pub fn route(&self, topo: &Topology, from: ResourceId, to: ResourceId) -> Vec<(ResourceId, ResourceId)> {
        if from == to {
            return Vec::new();
        }
        let mut hops = Vec::with_capacity(3);
        let start = match topo.parent_fog(from) {
            Some(p) => {
                hops.push((from, p));
                p
            }
            None => from,
        };
        let (end, down) = match topo.parent_fog(to) {
            Some(p) => (p, Some((p, to))),
            None => (to, None),
        };
        if start != end {
            hops.push((start, end));
        }
        hops.extend(down);
        hops
    }

    fn checked_hops(
        &self,
        topo: &Topology,
        from: ResourceId,
        to: ResourceId,
    ) -> Result<Vec<LinkParams>, ModelError> {
        self.route(topo, from, to)
            .into_iter()
            .map(|(a, b)| {
                let l = self.link(topo, a, b);
                if l.bandwidth > 0.0 {
                    Ok(l)
                } else {
                    Err(ModelError::Unreachable { from, to, a, b })
                }
            })
            .collect()
    }

    /// Σ over hops of (λ + α/β), with α in bytes.
    pub fn transfer_time(
        &self,
        topo: &Topology,
        size: u64,
        from: ResourceId,
        to: ResourceId,
    ) -> Result<Time, ModelError> {
        let bits = size as f64 * 8.0;
        Ok(self
            .checked_hops(topo, from, to)?
            .iter()
            .map(|l| l.latency + bits / l.bandwidth)
            .sum())
    }

    /// α · Σ φ over hops.
    pub fn transfer_cost(
        &self,
        topo: &Topology,
        size: u64,
        from: ResourceId,
        to: ResourceId,
    ) -> Result<Cents, ModelError> {
        let phi: f64 = self
            .checked_hops(topo, from, to)?
            .iter()
            .map(|l| l.price_per_byte)
            .sum();
        Ok(size as f64 * phi)
    }

    /// Latency-only delay for a small control message.
    pub fn control_latency(&self, topo: &Topology, from: ResourceId, to: ResourceId) -> Time {
        self.route(topo, from, to)
            .into_iter()
            .map(|(a, b)| self.link(topo, a, b).latency)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BillingPolicy {
    /// Billing increment ε in seconds.
    pub epsilon: f64,
}

impl Default for BillingPolicy {
    fn default() -> Self {
        Self { epsilon: 1.0 }
    }
}

impl BillingPolicy {
    /// Number of ε increments billed for `busy` seconds on a resource.
    pub fn units(&self, busy: Time) -> f64 {
        if busy <= 0.0 {
            return 0.0;
        }
        // Snap values within float noise of an integer so k·ε bills exactly k.
        let x = busy / self.epsilon;
        let r = x.round();
        if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r
        } else {
            x.ceil()
        }
    }

    /// Cost of keeping `r` busy for `busy` wall seconds.
    pub fn busy_cost(&self, busy: Time, r: &Resource) -> Cents {
        self.units(busy) * r.price
    }

    /// ⌈θ / (ρ(r)·ε)⌉ · π(r) for a task with base duration θ.
    pub fn exec_cost(&self, theta: Time, r: &Resource) -> Cents {
        self.busy_cost(theta / r.speed, r)
    }
}

/// Converts an hourly price into a price per billing increment.
pub fn price_per_increment(cents_per_hour: f64, billing: &BillingPolicy) -> Cents {
    cents_per_hour * billing.epsilon / 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MicroBatchId(pub u64);

/// Metadata of a micro-batch; the content itself is not modelled.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroBatchMeta {
    pub id: MicroBatchId,
    pub sid: String,
    pub t_begin: f64,
    pub t_end: f64,
    pub lat: f64,
    pub long: f64,
    pub kv: Vec<(String, String)>,
    /// Size α in bytes.
    pub size: u64,
    /// Resource currently holding the micro-batch.
    pub location: ResourceId,
}

impl MicroBatchMeta {
    pub fn validate(&self, topo: &Topology) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidMicroBatch {
            id: self.id.0,
            reason: reason.to_string(),
        };
        if !(self.t_begin <= self.t_end) {
            return Err(bad("t_begin must not exceed t_end"));
        }
        if self.size == 0 {
            return Err(bad("size must be positive"));
        }
        if topo.get(self.location).is_none() {
            return Err(bad("location is not a known resource"));
        }
        Ok(())
    }

    pub fn has_kv(&self, key: &str, value: &str) -> bool {
        self.kv.iter().any(|(k, v)| k == key && v == value)
    }
}

//! Micro-batch arrivals, edge failure schedules and the seeded random streams
//! that drive them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::model::{ResourceId, Time};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    /// Micro-batches per minute across all edges.
    pub rate_per_min: f64,
    /// Micro-batch size range in bytes, inclusive.
    pub mb_size_min: u64,
    pub mb_size_max: u64,
    /// Length of the generation window in seconds.
    pub duration: f64,
    /// Edge MTBF in seconds; `None` means edges never fail.
    pub mtbf: Option<f64>,
    /// Execution-time jitter: each run is scaled by a factor in `[1-j, 1+j]`.
    pub jitter: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            rate_per_min: 15.0,
            mb_size_min: 500_000,
            mb_size_max: 1_500_000,
            duration: 1200.0,
            mtbf: None,
            jitter: 0.0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_per_min >= 0.0) || !self.rate_per_min.is_finite() {
            return Err("rate must be a non-negative number".into());
        }
        if self.mb_size_min == 0 || self.mb_size_min > self.mb_size_max {
            return Err("micro-batch size range must satisfy 0 < min <= max".into());
        }
        if !(self.duration > 0.0) {
            return Err("duration must be positive".into());
        }
        if let Some(m) = self.mtbf {
            if !(m > 0.0) {
                return Err("mtbf must be positive".into());
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err("jitter must be within [0, 1)".into());
        }
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// An independent generator for one named purpose, so that e.g. toggling
/// failures leaves the arrival sequence untouched.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub at: Time,
    pub edge: ResourceId,
    pub dag: usize,
    pub size: u64,
}

/// Poisson arrivals over `[0, duration)`, each on a uniformly chosen edge and
/// aimed at a uniformly chosen DAG.
pub fn arrivals(cfg: &WorkloadConfig, edges: &[ResourceId], dags: usize, seed: u64) -> Vec<Arrival> {
    let mut out = Vec::new();
    if cfg.rate_per_min <= 0.0 || edges.is_empty() || dags == 0 {
        return out;
    }
    let mut rng = substream(seed, "workload");
    let gap = Exp::new(cfg.rate_per_min / 60.0).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= cfg.duration {
            break;
        }
        out.push(Arrival {
            at: t,
            edge: edges[rng.random_range(0..edges.len())],
            dag: rng.random_range(0..dags),
            size: rng.random_range(cfg.mb_size_min..=cfg.mb_size_max),
        });
    }
    out
}

/// At most one permanent failure per edge, with probability
/// `min(1, duration / mtbf)` at a uniform time in the run.
pub fn failure_schedule(edges: &[ResourceId], mtbf: Option<f64>, duration: f64, seed: u64) -> Vec<(Time, ResourceId)> {
    let Some(mtbf) = mtbf.filter(|m| m.is_finite()) else {
        return Vec::new();
    };
    let p = (duration / mtbf).min(1.0);
    let mut rng = substream(seed, "failures");
    let mut out: Vec<(Time, ResourceId)> = edges
        .iter()
        .filter_map(|&e| {
            let hit = rng.random::<f64>() < p;
            let at = rng.random::<f64>() * duration;
            hit.then_some((at, e))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

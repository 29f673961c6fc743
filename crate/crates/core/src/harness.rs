//! Runs a scenario under several policies and seeds, optionally in parallel,
//! with results always in (policy, seed) order.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baseline::{CloudOnlyPolicy, LocalFogPolicy};
use crate::engine::{Scenario, Sim, SimError, SimOutcome};
use crate::metrics::MetricsReport;
use crate::policy::{CofeePolicy, SchedulerPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Cofee,
    CloudOnly,
    Lfp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Cofee, PolicyKind::CloudOnly, PolicyKind::Lfp];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Cofee => "cofee",
            PolicyKind::CloudOnly => "cloud-only",
            PolicyKind::Lfp => "lfp",
        }
    }

    pub fn make(self) -> Box<dyn SchedulerPolicy> {
        match self {
            PolicyKind::Cofee => Box::new(CofeePolicy::new()),
            PolicyKind::CloudOnly => Box::new(CloudOnlyPolicy),
            PolicyKind::Lfp => Box::new(LocalFogPolicy),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "cofee" => Ok(PolicyKind::Cofee),
            "cloud-only" | "co" => Ok(PolicyKind::CloudOnly),
            "lfp" => Ok(PolicyKind::Lfp),
            other => Err(format!("unknown policy {other:?} (expected cofee, cloud-only or lfp)")),
        }
    }
}

/// Comma-separated policy names.
pub fn parse_policies(s: &str) -> Result<Vec<PolicyKind>, String> {
    let mut out: Vec<PolicyKind> = s.split(',').map(str::parse).collect::<Result<_, _>>()?;
    out.dedup();
    if out.is_empty() {
        return Err("no policy given".into());
    }
    Ok(out)
}

/// `n` or an inclusive range `n..m`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.trim_start_matches('=').trim())?);
            if a > b {
                return Err(format!("empty seed range {s}"));
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![num(s)?]),
    }
}

pub fn run_one(sc: &Scenario, policy: PolicyKind, seed: u64, trace: bool) -> Result<SimOutcome, SimError> {
    Sim::new(sc.clone(), policy.make(), seed)?.with_trace(trace).run()
}

/// One outcome per (policy, seed), policies outermost. `threads` of `None`
/// uses rayon's default pool; `Some(1)` runs sequentially.
pub fn run_matrix(
    sc: &Scenario,
    policies: &[PolicyKind],
    seeds: &[u64],
    threads: Option<usize>,
    trace: bool,
) -> Result<Vec<(PolicyKind, u64, SimOutcome)>, SimError> {
    let jobs: Vec<(PolicyKind, u64)> = policies.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    let work = || -> Result<Vec<_>, SimError> {
        jobs.par_iter()
            .map(|&(p, s)| run_one(sc, p, s, trace).map(|o| (p, s, o)))
            .collect()
    };
    match threads {
        Some(1) => jobs
            .iter()
            .map(|&(p, s)| run_one(sc, p, s, trace).map(|o| (p, s, o)))
            .collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::Invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Reports only, in (policy, seed) order.
pub fn run_experiment(
    sc: &Scenario,
    policies: &[PolicyKind],
    seeds: &[u64],
    threads: Option<usize>,
) -> Result<Vec<MetricsReport>, SimError> {
    Ok(run_matrix(sc, policies, seeds, threads, false)?
        .into_iter()
        .map(|(_, _, o)| o.report)
        .collect())
}

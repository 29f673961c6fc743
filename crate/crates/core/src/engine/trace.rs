//! Newline-delimited JSON event trace. Charge records carry enough detail to
//! recompute the bill without trusting the simulator's own totals.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::model::{BillingPolicy, Cents, NetworkModel, ResourceId, Time, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum TraceRecord {
    Event {
        t: Time,
        event: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        subjects: Vec<u64>,
    },
    /// A resource was busy for `busy` seconds on behalf of an attempt.
    Exec {
        t: Time,
        attempt: u64,
        pipeline: u64,
        resource: u32,
        busy: f64,
        cost: Cents,
    },
    Transfer {
        t: Time,
        attempt: u64,
        pipeline: u64,
        from: u32,
        to: u32,
        bytes: u64,
        cost: Cents,
    },
}

pub fn write_jsonl<W: Write>(out: &mut W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, String> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| e.to_string())?;
            serde_json::from_str(&l).map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}

/// Re-prices every charge in a trace from first principles.
pub fn recompute_cost(
    records: &[TraceRecord],
    topo: &Topology,
    net: &NetworkModel,
    billing: &BillingPolicy,
) -> Result<Cents, String> {
    let mut total = 0.0;
    for r in records {
        match *r {
            TraceRecord::Exec { resource, busy, .. } => {
                let res = topo
                    .get(ResourceId(resource))
                    .ok_or_else(|| format!("unknown resource {resource}"))?;
                total += billing.busy_cost(busy, res);
            }
            TraceRecord::Transfer { from, to, bytes, .. } => {
                total += net
                    .transfer_cost(topo, bytes, ResourceId(from), ResourceId(to))
                    .map_err(|e| e.to_string())?;
            }
            TraceRecord::Event { .. } => {}
        }
    }
    Ok(total)
}

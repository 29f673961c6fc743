//! Per-run metrics, CSV rows and the human-readable summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dag::PipelineStatus;
use crate::engine::{AttemptStatus, Sim};
use crate::model::{Tier, Time};

/// Counters the engine bumps while it runs.
#[derive(Debug, Clone, Default)]
pub struct RunTally {
    pub generated: u64,
    /// Arrivals that fell on an already failed edge.
    pub suppressed: u64,
    /// Micro-batches lost with their edge before the trigger reached the master.
    pub dropped: u64,
    pub tasks_ready: u64,
    pub tasks_edge: u64,
    pub tasks_fog: u64,
    pub tasks_cloud: u64,
    pub tasks_failed: u64,
    pub backup_runs: u64,
    pub edge_failures: u64,
    pub per_minute: Vec<u32>,
}

impl RunTally {
    pub fn new(minutes: usize) -> Self {
        Self {
            per_minute: vec![0; minutes],
            ..Self::default()
        }
    }

    pub fn note_scheduled(&mut self, now: Time) {
        let m = (now / 60.0).floor() as usize;
        if let Some(c) = self.per_minute.get_mut(m) {
            *c += 1;
        }
    }

    pub fn note_done(&mut self, tier: Tier) {
        match tier {
            Tier::Edge => self.tasks_edge += 1,
            Tier::Fog => self.tasks_fog += 1,
            Tier::Cloud => self.tasks_cloud += 1,
        }
    }
}

/// Everything reported for one (policy, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub policy: String,
    pub seed: u64,
    pub micro_batches: u64,
    pub dropped_micro_batches: u64,
    pub dag_triggers: u64,
    pub pipelines: u64,
    pub pipelines_completed: u64,
    pub pipelines_failed: u64,
    pub tasks: u64,
    pub tasks_edge: u64,
    pub tasks_fog: u64,
    pub tasks_cloud: u64,
    pub tasks_failed: u64,
    pub backup_runs: u64,
    pub total_cost: f64,
    pub successful_cost: f64,
    pub wasted_cost: f64,
    pub tasks_per_min: Vec<u32>,
    /// Mean trigger-to-last-pipeline latency of fully completed triggers, per DAG.
    pub dag_latency: BTreeMap<String, f64>,
    pub edge_failures: u64,
}

impl MetricsReport {
    pub fn success_rate(&self) -> f64 {
        ratio(self.pipelines_completed, self.pipelines)
    }

    pub fn failure_rate(&self) -> f64 {
        ratio(self.pipelines_failed, self.pipelines)
    }

    fn completed_tasks(&self) -> u64 {
        self.tasks_edge + self.tasks_fog + self.tasks_cloud
    }

    pub fn edge_fraction(&self) -> f64 {
        ratio(self.tasks_edge, self.completed_tasks())
    }

    pub fn fog_fraction(&self) -> f64 {
        ratio(self.tasks_fog, self.completed_tasks())
    }

    pub fn cloud_fraction(&self) -> f64 {
        ratio(self.tasks_cloud, self.completed_tasks())
    }

    /// Successful cost divided by completed pipelines.
    pub fn cost_per_success(&self) -> f64 {
        if self.pipelines_completed == 0 {
            0.0
        } else {
            self.successful_cost / self.pipelines_completed as f64
        }
    }

    pub fn median_tasks_per_min(&self) -> f64 {
        median(&self.tasks_per_min.iter().map(|&c| c as f64).collect::<Vec<_>>())
    }

    /// Internal consistency of the counters and the cost split.
    pub fn check_conservation(&self) -> Result<(), String> {
        if self.pipelines_completed + self.pipelines_failed != self.pipelines {
            return Err(format!(
                "{} completed + {} failed != {} pipelines",
                self.pipelines_completed, self.pipelines_failed, self.pipelines
            ));
        }
        if self.completed_tasks() + self.tasks_failed != self.tasks {
            return Err(format!(
                "task outcomes {} + {} do not add up to {}",
                self.completed_tasks(),
                self.tasks_failed,
                self.tasks
            ));
        }
        let diff = (self.successful_cost + self.wasted_cost - self.total_cost).abs();
        if diff > 1e-9 {
            return Err(format!("cost split off by {diff}"));
        }
        Ok(())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub(crate) fn build_report(sim: &Sim, policy: &str) -> MetricsReport {
    let t = sim.tally();
    let mut total = 0.0;
    let mut wasted = 0.0;
    for a in sim.attempts() {
        total += a.cost;
        let pipeline_failed = sim.pipeline(a.pipeline).status == PipelineStatus::Failed;
        if a.status == AttemptStatus::Failed || pipeline_failed {
            wasted += a.cost;
        }
    }
    let completed = sim.pipelines().iter().filter(|p| p.status == PipelineStatus::Completed).count() as u64;
    let failed = sim.pipelines().iter().filter(|p| p.status == PipelineStatus::Failed).count() as u64;

    let mut lat: BTreeMap<String, (f64, u32)> = BTreeMap::new();
    for tr in sim.triggers() {
        let done: Option<Vec<Time>> = tr
            .pipelines
            .iter()
            .map(|&p| {
                let p = sim.pipeline(p);
                (p.status == PipelineStatus::Completed).then_some(p.finished_at.unwrap_or(p.trigger_time))
            })
            .collect();
        if let Some(ends) = done {
            let last = ends.into_iter().fold(tr.at, f64::max);
            let e = lat.entry(sim.dag(tr.dag).id.clone()).or_insert((0.0, 0));
            e.0 += last - tr.at;
            e.1 += 1;
        }
    }

    MetricsReport {
        policy: policy.to_string(),
        seed: sim.seed(),
        micro_batches: t.generated,
        dropped_micro_batches: t.dropped,
        dag_triggers: sim.triggers().len() as u64,
        pipelines: sim.pipelines().len() as u64,
        pipelines_completed: completed,
        pipelines_failed: failed,
        tasks: t.tasks_ready,
        tasks_edge: t.tasks_edge,
        tasks_fog: t.tasks_fog,
        tasks_cloud: t.tasks_cloud,
        tasks_failed: t.tasks_failed,
        backup_runs: t.backup_runs,
        total_cost: total,
        successful_cost: total - wasted,
        wasted_cost: wasted,
        tasks_per_min: t.per_minute.clone(),
        dag_latency: lat.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        edge_failures: t.edge_failures,
    }
}

/// Flat CSV row; list-valued fields are `;`-joined strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub policy: String,
    pub seed: u64,
    pub micro_batches: u64,
    pub dropped_micro_batches: u64,
    pub dag_triggers: u64,
    pub pipelines: u64,
    pub pipelines_completed: u64,
    pub pipelines_failed: u64,
    pub success_rate: f64,
    pub failure_rate: f64,
    pub tasks: u64,
    pub tasks_edge: u64,
    pub tasks_fog: u64,
    pub tasks_cloud: u64,
    pub tasks_failed: u64,
    pub edge_fraction: f64,
    pub fog_fraction: f64,
    pub cloud_fraction: f64,
    pub backup_runs: u64,
    pub total_cost: f64,
    pub successful_cost: f64,
    pub wasted_cost: f64,
    pub cost_per_success: f64,
    pub median_tasks_per_min: f64,
    pub tasks_per_min: String,
    pub dag_latency: String,
    pub edge_failures: u64,
}

/// Column order of `metrics.csv`.
pub const CSV_COLUMNS: &[&str] = &[
    "policy",
    "seed",
    "micro_batches",
    "dropped_micro_batches",
    "dag_triggers",
    "pipelines",
    "pipelines_completed",
    "pipelines_failed",
    "success_rate",
    "failure_rate",
    "tasks",
    "tasks_edge",
    "tasks_fog",
    "tasks_cloud",
    "tasks_failed",
    "edge_fraction",
    "fog_fraction",
    "cloud_fraction",
    "backup_runs",
    "total_cost",
    "successful_cost",
    "wasted_cost",
    "cost_per_success",
    "median_tasks_per_min",
    "tasks_per_min",
    "dag_latency",
    "edge_failures",
];

impl From<&MetricsReport> for CsvRow {
    fn from(r: &MetricsReport) -> Self {
        CsvRow {
            policy: r.policy.clone(),
            seed: r.seed,
            micro_batches: r.micro_batches,
            dropped_micro_batches: r.dropped_micro_batches,
            dag_triggers: r.dag_triggers,
            pipelines: r.pipelines,
            pipelines_completed: r.pipelines_completed,
            pipelines_failed: r.pipelines_failed,
            success_rate: r.success_rate(),
            failure_rate: r.failure_rate(),
            tasks: r.tasks,
            tasks_edge: r.tasks_edge,
            tasks_fog: r.tasks_fog,
            tasks_cloud: r.tasks_cloud,
            tasks_failed: r.tasks_failed,
            edge_fraction: r.edge_fraction(),
            fog_fraction: r.fog_fraction(),
            cloud_fraction: r.cloud_fraction(),
            backup_runs: r.backup_runs,
            total_cost: r.total_cost,
            successful_cost: r.successful_cost,
            wasted_cost: r.wasted_cost,
            cost_per_success: r.cost_per_success(),
            median_tasks_per_min: r.median_tasks_per_min(),
            tasks_per_min: r.tasks_per_min.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
            dag_latency: r
                .dag_latency
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";"),
            edge_failures: r.edge_failures,
        }
    }
}

impl TryFrom<CsvRow> for MetricsReport {
    type Error = String;

    fn try_from(r: CsvRow) -> Result<Self, String> {
        let tasks_per_min = if r.tasks_per_min.is_empty() {
            Vec::new()
        } else {
            r.tasks_per_min
                .split(';')
                .map(|s| s.parse::<u32>().map_err(|e| format!("tasks_per_min: {e}")))
                .collect::<Result<_, _>>()?
        };
        let mut dag_latency = BTreeMap::new();
        for part in r.dag_latency.split(';').filter(|s| !s.is_empty()) {
            let (k, v) = part.rsplit_once('=').ok_or_else(|| format!("dag_latency entry {part:?}"))?;
            dag_latency.insert(k.to_string(), v.parse::<f64>().map_err(|e| format!("dag_latency: {e}"))?);
        }
        Ok(MetricsReport {
            policy: r.policy,
            seed: r.seed,
            micro_batches: r.micro_batches,
            dropped_micro_batches: r.dropped_micro_batches,
            dag_triggers: r.dag_triggers,
            pipelines: r.pipelines,
            pipelines_completed: r.pipelines_completed,
            pipelines_failed: r.pipelines_failed,
            tasks: r.tasks,
            tasks_edge: r.tasks_edge,
            tasks_fog: r.tasks_fog,
            tasks_cloud: r.tasks_cloud,
            tasks_failed: r.tasks_failed,
            backup_runs: r.backup_runs,
            total_cost: r.total_cost,
            successful_cost: r.successful_cost,
            wasted_cost: r.wasted_cost,
            tasks_per_min,
            dag_latency,
            edge_failures: r.edge_failures,
        })
    }
}

pub fn to_csv(reports: &[MetricsReport]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow::from(r))?;
    }
    if reports.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn from_csv(data: &[u8]) -> Result<Vec<MetricsReport>, String> {
    let mut rd = csv::Reader::from_reader(data);
    rd.deserialize::<CsvRow>()
        .map(|row| row.map_err(|e| e.to_string()).and_then(MetricsReport::try_from))
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean of a metric over the runs of one policy.
pub fn mean_of(reports: &[MetricsReport], f: impl Fn(&MetricsReport) -> f64) -> f64 {
    mean_std(&reports.iter().map(f).collect::<Vec<_>>()).0
}

/// Four significant digits, the precision used in summaries.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = (3 - x.abs().log10().floor() as i32).max(0) as usize;
    if x.abs() >= 1e-3 {
        format!("{x:.digits$}")
    } else {
        format!("{x:.3e}")
    }
}

/// Side-by-side comparison of policies, averaged over seeds.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut by: BTreeMap<&str, Vec<MetricsReport>> = BTreeMap::new();
    for r in reports {
        by.entry(r.policy.as_str()).or_default().push(r.clone());
    }
    type Col = (&'static str, fn(&MetricsReport) -> f64);
    let cols: [Col; 10] = [
        ("pipelines", |r| r.pipelines as f64),
        ("success", MetricsReport::success_rate),
        ("total_cost", |r| r.total_cost),
        ("wasted_cost", |r| r.wasted_cost),
        ("cost/success", MetricsReport::cost_per_success),
        ("edge", MetricsReport::edge_fraction),
        ("fog", MetricsReport::fog_fraction),
        ("cloud", MetricsReport::cloud_fraction),
        ("tasks/min", MetricsReport::median_tasks_per_min),
        ("edge_failures", |r| r.edge_failures as f64),
    ];
    let mut s = String::new();
    let _ = write!(s, "{:<12} {:>5}", "policy", "runs");
    for (name, _) in &cols {
        let _ = write!(s, " {name:>22}");
    }
    s.push('\n');
    for (policy, rs) in &by {
        let _ = write!(s, "{policy:<12} {:>5}", rs.len());
        for (_, f) in &cols {
            let (m, sd) = mean_std(&rs.iter().map(f).collect::<Vec<_>>());
            let _ = write!(s, " {:>22}", format!("{} ± {}", sig4(m), sig4(sd)));
        }
        s.push('\n');
    }
    s.push_str("\ncosts in cents; fractions are of completed tasks; values are mean ± sd over seeds\n");
    s
}

/// Writes `metrics.csv` and `summary.txt` into `dir`, replacing old files
/// atomically.
pub fn emit_report(reports: &[MetricsReport], dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = to_csv(reports).map_err(io::Error::other)?;
    write_atomic(&dir.join("metrics.csv"), &csv)?;
    write_atomic(&dir.join("summary.txt"), summary_table(reports).as_bytes())
}

pub fn write_atomic(path: &Path, data: &[u8]) -> io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

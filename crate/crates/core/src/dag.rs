//! DAG definitions, unrolling into linear pipelines, deadline apportionment
//! and the per-trigger pipeline instances that walk a chain task by task.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MicroBatchId, Time, TIME_EPS};
use crate::query::FilterQuery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    /// Baseline execution time θ on the base resource, in seconds.
    pub theta: f64,
    /// Expected output micro-batch size α in bytes.
    pub output_size: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagSpec {
    pub id: String,
    pub tasks: Vec<TaskSpec>,
    /// Dataflow edges as (upstream, downstream) task indices.
    pub edges: Vec<(usize, usize)>,
    /// Deadline δ in seconds from trigger.
    pub deadline: f64,
    pub filter: FilterQuery,
}

#[derive(Debug, Error, PartialEq)]
pub enum DagError {
    #[error("dag {dag}: cycle through task {task}")]
    Cycle { dag: String, task: String },
    #[error("dag {dag}: {reason}")]
    Invalid { dag: String, reason: String },
    #[error("pipeline {pipeline}: task {task} completed at {at} after its sub-deadline {sigma}")]
    LateCompletion {
        pipeline: u64,
        task: usize,
        at: Time,
        sigma: Time,
    },
    #[error("pipeline {0} is not running")]
    NotRunning(u64),
}

/// One root-to-leaf path, as task indices into [`DagSpec::tasks`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain(pub Vec<usize>);

impl DagSpec {
    fn invalid(&self, reason: impl Into<String>) -> DagError {
        DagError::Invalid {
            dag: self.id.clone(),
            reason: reason.into(),
        }
    }

    fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.tasks.len()];
        for &(a, b) in &self.edges {
            succ[a].push(b);
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        succ
    }

    pub fn roots(&self) -> Vec<usize> {
        let targets: BTreeSet<usize> = self.edges.iter().map(|&(_, b)| b).collect();
        (0..self.tasks.len()).filter(|i| !targets.contains(i)).collect()
    }

    /// Structural checks: positive θ and α, acyclic, one root, positive deadline.
    pub fn validate(&self) -> Result<(), DagError> {
        if self.tasks.is_empty() {
            return Err(self.invalid("no tasks"));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.id.as_str()) {
                return Err(self.invalid(format!("duplicate task id {}", t.id)));
            }
            if !(t.theta > 0.0) {
                return Err(self.invalid(format!("task {} needs a positive baseline time", t.id)));
            }
            if t.output_size == 0 {
                return Err(self.invalid(format!("task {} needs a positive output size", t.id)));
            }
        }
        for &(a, b) in &self.edges {
            if a >= self.tasks.len() || b >= self.tasks.len() {
                return Err(self.invalid(format!("edge ({a}, {b}) references a missing task")));
            }
        }
        if !(self.deadline > 0.0) {
            return Err(self.invalid("deadline must be positive"));
        }
        self.topo_order()?;
        let roots = self.roots();
        if roots.len() != 1 {
            return Err(self.invalid(format!("expected exactly one root task, found {}", roots.len())));
        }
        Ok(())
    }

    /// Kahn's algorithm; reports a task on a cycle when one exists.
    pub fn topo_order(&self) -> Result<Vec<usize>, DagError> {
        let n = self.tasks.len();
        let succ = self.successors();
        let mut indeg = vec![0usize; n];
        for s in &succ {
            for &b in s {
                indeg[b] += 1;
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for &w in succ[v].iter().rev() {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(w);
                }
            }
        }
        if order.len() < n {
            let task = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(DagError::Cycle {
                dag: self.id.clone(),
                task: self.tasks[task].id.clone(),
            });
        }
        Ok(order)
    }

    /// Every root-to-leaf path as its own chain. Tasks reachable along several
    /// paths appear in each of them.
    pub fn unroll(&self) -> Result<Vec<Chain>, DagError> {
        self.validate()?;
        let succ = self.successors();
        let mut chains = Vec::new();
        let mut path = Vec::new();
        fn walk(v: usize, succ: &[Vec<usize>], path: &mut Vec<usize>, out: &mut Vec<Chain>) {
            path.push(v);
            if succ[v].is_empty() {
                out.push(Chain(path.clone()));
            } else {
                for &w in &succ[v] {
                    walk(w, succ, path, out);
                }
            }
            path.pop();
        }
        for r in self.roots() {
            walk(r, &succ, &mut path, &mut chains);
        }
        Ok(chains)
    }

    /// Longest root-to-leaf sum of θ scaled by `speed`.
    pub fn critical_path(&self, speed: f64) -> Result<f64, DagError> {
        let order = self.topo_order()?;
        let succ = self.successors();
        let mut longest = vec![0.0f64; self.tasks.len()];
        for &v in order.iter().rev() {
            let tail = succ[v].iter().map(|&w| longest[w]).fold(0.0, f64::max);
            longest[v] = self.tasks[v].theta / speed + tail;
        }
        Ok(longest.into_iter().fold(0.0, f64::max))
    }

    pub fn chain_thetas(&self, chain: &Chain) -> Vec<f64> {
        chain.0.iter().map(|&i| self.tasks[i].theta).collect()
    }
}

/// Splits δ across tasks in proportion to their θ. The spans sum to δ.
pub fn apportion(thetas: &[f64], delta: f64) -> Vec<f64> {
    let total: f64 = thetas.iter().sum();
    thetas.iter().map(|t| t / total * delta).collect()
}

/// Absolute sub-deadlines for a chain triggered at `trigger`. The last one is
/// exactly `trigger + delta`.
pub fn sub_deadlines(thetas: &[f64], delta: f64, trigger: Time) -> Vec<Time> {
    let spans = apportion(thetas, delta);
    let mut acc = 0.0;
    let mut out: Vec<Time> = spans
        .iter()
        .map(|s| {
            acc += s;
            trigger + acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = trigger + delta;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PipelineId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub task: usize,
    pub theta: f64,
    pub output_size: u64,
    /// Absolute sub-deadline σ.
    pub sigma: Time,
}

/// A chain bound to one triggering micro-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInstance {
    pub id: PipelineId,
    pub dag: usize,
    pub chain: usize,
    pub stages: Vec<Stage>,
    pub trigger_mb: MicroBatchId,
    pub trigger_time: Time,
    /// Index of the stage currently being scheduled or executed.
    pub cursor: usize,
    pub status: PipelineStatus,
    /// Input of the cursor stage.
    pub input: MicroBatchId,
    pub cost: f64,
    pub finished_at: Option<Time>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    /// The next stage is ready with this input.
    Next { stage: usize, sigma: Time, input: MicroBatchId },
    Completed,
}

impl PipelineInstance {
    pub fn new(
        id: PipelineId,
        dag_idx: usize,
        dag: &DagSpec,
        chain_idx: usize,
        chain: &Chain,
        trigger_mb: MicroBatchId,
        trigger_time: Time,
    ) -> Self {
        let thetas = dag.chain_thetas(chain);
        let sigmas = sub_deadlines(&thetas, dag.deadline, trigger_time);
        let stages = chain
            .0
            .iter()
            .zip(sigmas)
            .map(|(&t, sigma)| Stage {
                task: t,
                theta: dag.tasks[t].theta,
                output_size: dag.tasks[t].output_size,
                sigma,
            })
            .collect();
        Self {
            id,
            dag: dag_idx,
            chain: chain_idx,
            stages,
            trigger_mb,
            trigger_time,
            cursor: 0,
            status: PipelineStatus::Running,
            input: trigger_mb,
            cost: 0.0,
            finished_at: None,
        }
    }

    pub fn current(&self) -> &Stage {
        &self.stages[self.cursor]
    }

    pub fn deadline(&self) -> Time {
        self.stages.last().map(|s| s.sigma).unwrap_or(self.trigger_time)
    }

    /// Records completion of the cursor stage at `at` with output `output`.
    /// A completion after σ fails the pipeline.
    pub fn advance(&mut self, at: Time, output: MicroBatchId) -> Result<Advance, DagError> {
        if self.status != PipelineStatus::Running {
            return Err(DagError::NotRunning(self.id.0));
        }
        let sigma = self.current().sigma;
        if at > sigma + TIME_EPS {
            self.status = PipelineStatus::Failed;
            self.finished_at = Some(at);
            return Err(DagError::LateCompletion {
                pipeline: self.id.0,
                task: self.cursor,
                at,
                sigma,
            });
        }
        if self.cursor + 1 == self.stages.len() {
            self.status = PipelineStatus::Completed;
            self.finished_at = Some(at);
            return Ok(Advance::Completed);
        }
        self.cursor += 1;
        self.input = output;
        Ok(Advance::Next {
            stage: self.cursor,
            sigma: self.current().sigma,
            input: output,
        })
    }

    pub fn fail(&mut self, at: Time) {
        if self.status == PipelineStatus::Running {
            self.status = PipelineStatus::Failed;
            self.finished_at = Some(at);
        }
    }
}

/// Builds a DAG from task ids and string edges; handy for tests and configs.
pub fn build_dag(
    id: &str,
    tasks: &[(&str, f64, u64)],
    edges: &[(&str, &str)],
    deadline: f64,
    filter: FilterQuery,
) -> Result<DagSpec, DagError> {
    let index: BTreeMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.0, i)).collect();
    let mut e = Vec::with_capacity(edges.len());
    for (a, b) in edges {
        let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) else {
            return Err(DagError::Invalid {
                dag: id.to_string(),
                reason: format!("edge {a}->{b} references an unknown task"),
            });
        };
        e.push((ia, ib));
    }
    Ok(DagSpec {
        id: id.to_string(),
        tasks: tasks
            .iter()
            .map(|&(t, theta, out)| TaskSpec {
                id: t.to_string(),
                theta,
                output_size: out,
            })
            .collect(),
        edges: e,
        deadline,
        filter,
    })
}

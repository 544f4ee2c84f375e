//! Execution fabric: where jobs actually run.
//!
//! Two backends share the broker loop. The discrete-event simulator runs in
//! virtual time with per-resource service-time models and availability
//! windows, and is fully deterministic under a fixed seed. The local
//! backend runs the task scripts as real processes on this machine, up to
//! `cpus` concurrent jobs per configured node.
//!
//! Testbed file: one resource per line,
//!
//! ```text
//! name cpus price model(args) [avail=from-to,...] [seed=<n>]
//! ```
//!
//! where `model` is `fixed(t)`, `uniform(lo,hi)` or `lognormal(mu,sigma)`
//! in CPU-seconds, and `avail` lists the virtual-time windows in which the
//! resource's CPUs are usable (absent means always).

mod local;
mod sim;

pub use local::{expected_outputs, run_local_experiment, LocalParams};
pub use sim::{run_sim_experiment, AdvanceResult, BudgetGuard, PartialRun, SimEngine, SimParams};

use crate::broker::{trim_float, Report, ResourceDesc, ScheduleState};
use crate::plan::{substitute, Command, PlanFile, SubstError, TaskKind};
use std::collections::{BTreeMap, BTreeSet};

/// Service-time model for simulated jobs, in CPU-seconds.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceModel {
    Fixed(f64),
    Uniform(f64, f64),
    LogNormal { mu: f64, sigma: f64 },
}

/// One simulated grid resource.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResource {
    pub descriptor: ResourceDesc,
    pub service: ServiceModel,
    /// Windows of virtual time when the CPUs are usable; empty = always.
    pub availability: Vec<(f64, f64)>,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("testbed line {line}: {reason}")]
pub struct TestbedError {
    pub line: usize,
    pub reason: String,
}

fn testbed_err(line: usize, reason: impl Into<String>) -> TestbedError {
    TestbedError { line, reason: reason.into() }
}

/// Parse a testbed config file.
pub fn parse_testbed(text: &str) -> Result<Vec<SimResource>, TestbedError> {
    let mut resources = Vec::new();
    let mut names = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(testbed_err(line_no, "expected: name cpus price model(args) [avail=..] [seed=..]"));
        }
        let name = fields[0].to_string();
        if !names.insert(name.clone()) {
            return Err(testbed_err(line_no, format!("duplicate resource name `{}`", name)));
        }
        let cpus: u32 = fields[1]
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| testbed_err(line_no, format!("bad cpu count `{}`", fields[1])))?;
        let price: f64 = fields[2]
            .parse()
            .ok()
            .filter(|p: &f64| *p >= 0.0 && p.is_finite())
            .ok_or_else(|| testbed_err(line_no, format!("bad price `{}`", fields[2])))?;
        let service = parse_service_model(fields[3], line_no)?;

        let mut availability = Vec::new();
        let mut seed = 0u64;
        for extra in &fields[4..] {
            if let Some(spec) = extra.strip_prefix("avail=") {
                for window in spec.split(',') {
                    let (a, b) = window
                        .split_once('-')
                        .ok_or_else(|| testbed_err(line_no, format!("bad window `{}`", window)))?;
                    let from: f64 = a
                        .parse()
                        .map_err(|_| testbed_err(line_no, format!("bad window `{}`", window)))?;
                    let to: f64 = b
                        .parse()
                        .map_err(|_| testbed_err(line_no, format!("bad window `{}`", window)))?;
                    if !(from >= 0.0 && to > from) {
                        return Err(testbed_err(line_no, format!("bad window `{}`", window)));
                    }
                    availability.push((from, to));
                }
            } else if let Some(s) = extra.strip_prefix("seed=") {
                seed = s
                    .parse()
                    .map_err(|_| testbed_err(line_no, format!("bad seed `{}`", s)))?;
            } else {
                return Err(testbed_err(line_no, format!("unrecognized field `{}`", extra)));
            }
        }
        availability.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in availability.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(testbed_err(line_no, "availability windows overlap"));
            }
        }
        resources.push(SimResource {
            descriptor: ResourceDesc { name, cpus, price },
            service,
            availability,
            seed,
        });
    }
    if resources.is_empty() {
        return Err(testbed_err(0, "testbed defines no resources"));
    }
    Ok(resources)
}

fn parse_service_model(text: &str, line: usize) -> Result<ServiceModel, TestbedError> {
    let (name, args) = text
        .strip_suffix(')')
        .and_then(|t| t.split_once('('))
        .ok_or_else(|| testbed_err(line, format!("bad service model `{}`", text)))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| testbed_err(line, format!("bad service model `{}`", text)))?;
    match (name, nums.as_slice()) {
        ("fixed", [t]) if *t > 0.0 => Ok(ServiceModel::Fixed(*t)),
        ("uniform", [lo, hi]) if *lo > 0.0 && hi >= lo => Ok(ServiceModel::Uniform(*lo, *hi)),
        ("lognormal", [mu, sigma]) if *sigma >= 0.0 => {
            Ok(ServiceModel::LogNormal { mu: *mu, sigma: *sigma })
        }
        _ => Err(testbed_err(line, format!("bad service model `{}`", text))),
    }
}

/// Per-node agent bookkeeping: nodestart runs once, then its staged files
/// are visible to every job on that node.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub resource: String,
    pub nodestart_done: bool,
    pub staged_files: BTreeSet<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FabricError {
    #[error("agent deployment on `{resource}` failed: {reason}")]
    Deploy { resource: String, reason: String },
    #[error("job `{job}` command failed: {reason}")]
    JobCommand { job: String, reason: String },
    #[error(transparent)]
    BadTemplate(#[from] SubstError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// The file name a `copy` destination resolves to on the node.
fn staged_name(src: &str, dst: &str) -> String {
    if dst == "." || dst.is_empty() || dst.ends_with('/') {
        src.rsplit('/').next().unwrap_or(src).to_string()
    } else {
        dst.to_string()
    }
}

/// Work out which files a plan's nodestart task stages, without touching
/// any real file. This is the simulated agent deployment; it is idempotent
/// per node by construction (the caller keeps one `AgentState` per node).
pub fn deploy_agent_virtual(
    plan: &PlanFile,
    resource: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<AgentState, FabricError> {
    let mut staged = BTreeSet::new();
    if let Some(task) = plan.task(TaskKind::Nodestart) {
        for cmd in &task.commands {
            if let Command::CopyToNode { src, dst } = cmd {
                let src = substitute(src, bindings)?;
                let dst = substitute(dst, bindings)?;
                staged.insert(staged_name(&src, &dst));
            }
        }
    }
    Ok(AgentState { resource: resource.to_string(), nodestart_done: true, staged_files: staged })
}

/// One job's execution, as recorded by either backend.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRecord {
    pub job: String,
    pub resource: String,
    pub start: f64,
    pub end: f64,
    pub cpu_seconds: f64,
    pub ok: bool,
    pub outputs: Vec<String>,
}

/// Everything a finished experiment hands back.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: Report,
    pub trace_csv: String,
    pub event_log: String,
    pub records: Vec<ExecutionRecord>,
    pub state: ScheduleState,
}

/// Per-tick, per-resource trace of progress and spending.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
struct TraceRow {
    t: f64,
    resource: String,
    jobs_done: u32,
    jobs_running: u32,
    spent_gd: f64,
}

impl Trace {
    pub fn snapshot(
        &mut self,
        t: f64,
        state: &ScheduleState,
        resources: &[ResourceDesc],
        active: &[u32],
    ) {
        for (i, desc) in resources.iter().enumerate() {
            self.rows.push(TraceRow {
                t,
                resource: desc.name.clone(),
                jobs_done: state.per_resource[i].done_ok,
                jobs_running: active[i],
                spent_gd: state.per_resource[i].spent,
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_sec,resource,jobs_done,jobs_running,spent_gd\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.2}\n",
                trim_float(row.t),
                row.resource,
                row.jobs_done,
                row.jobs_running,
                row.spent_gd
            ));
        }
        out
    }
}

/// The four output names a job's main task copies home, with this job's
/// bindings substituted in. Used by the simulator to fabricate outputs and
/// by tests to predict local-mode results.
pub fn main_task_outputs(
    plan: &PlanFile,
    bindings: &BTreeMap<String, String>,
) -> Result<Vec<String>, SubstError> {
    let mut outputs = Vec::new();
    if let Some(task) = plan.task(TaskKind::Main) {
        for cmd in &task.commands {
            if let Command::CopyFromNode { dst, .. } = cmd {
                outputs.push(substitute(dst, bindings)?);
            }
        }
    }
    Ok(outputs)
}

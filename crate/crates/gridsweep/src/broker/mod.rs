//! Deadline/budget-constrained job brokering.
//!
//! The broker is a task-farming loop: each tick it folds in completions,
//! re-checks the deadline and budget constraints, and fills free CPU slots
//! according to the chosen strategy.
//!
//! - **Optimize for time** fills every free slot on every resource, fastest
//!   per-slot first, skipping any assignment whose projected cost would push
//!   committed spend above the budget.
//! - **Optimize for cost** fills resources cheapest-first and engages a more
//!   expensive tier only while the projected completion time misses the
//!   deadline (less a safety margin). During a short warmup window every
//!   tier may run, so a too-slow cheap tier is discovered before it can
//!   sink the deadline.
//!
//! Money is tracked in grid dollars: a completed job charges its consumed
//! CPU-seconds times the resource price. Committed spend (charged plus the
//! projected cost of everything running) never exceeds the budget.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceDesc {
    pub name: String,
    pub cpus: u32,
    /// Access price in G$ per CPU-second.
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    TimeOpt,
    CostOpt,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "time" => Some(Strategy::TimeOpt),
            "cost" => Some(Strategy::CostOpt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Seconds from experiment start.
    pub deadline: f64,
    /// Budget in G$.
    pub budget: f64,
    pub strategy: Strategy,
    /// Scheduling tick in virtual seconds.
    pub tick_interval: f64,
    /// Optimistic per-job time used before any completion is observed.
    pub default_job_time: f64,
    /// Cost-opt: window during which every price tier may be engaged.
    pub warmup_window: f64,
    /// Cost-opt: fraction of the remaining time kept as a deadline margin.
    pub safety_margin_frac: f64,
    /// Trailing window for rate estimation; `None` uses the full history.
    pub rate_window: Option<f64>,
    /// Re-queue a failed job at most this many times.
    pub max_retries: u32,
}

impl ExperimentConfig {
    pub fn new(deadline: f64, budget: f64, strategy: Strategy) -> Self {
        ExperimentConfig {
            deadline,
            budget,
            strategy,
            tick_interval: 10.0,
            default_job_time: 60.0,
            warmup_window: 120.0,
            safety_margin_frac: 0.10,
            rate_window: None,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    /// Computed from completions in the window.
    Measured,
    /// No history at all: optimistic prior `cpus / default_job_time`.
    Prior,
    /// History exists but nothing completed in the window.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub resource: String,
    pub jobs_per_second: f64,
    pub window: f64,
    pub completed_in_window: u32,
    pub kind: RateKind,
}

impl RateEstimate {
    /// Expected seconds for one job on this resource (`cpus` slots share
    /// the resource rate). Infinite when stalled.
    pub fn expected_job_time(&self, cpus: u32) -> f64 {
        if self.jobs_per_second > 0.0 {
            cpus as f64 / self.jobs_per_second
        } else {
            f64::INFINITY
        }
    }
}

/// Completion history of one resource, as the estimator sees it.
#[derive(Debug, Clone, Copy)]
pub struct ResourceHistory<'a> {
    pub resource: &'a str,
    pub cpus: u32,
    /// Virtual times of successful completions, ascending.
    pub completions: &'a [f64],
    pub default_job_time: f64,
}

/// Throughput over the trailing `window` seconds ending at `clock`.
pub fn estimate_rate(history: ResourceHistory<'_>, window: f64, clock: f64) -> RateEstimate {
    assert!(window > 0.0, "rate window must be positive");
    let from = clock - window;
    let completed =
        history.completions.iter().filter(|&&t| t > from && t <= clock).count() as u32;
    let (rate, kind) = if completed > 0 {
        (completed as f64 / window, RateKind::Measured)
    } else if !history.completions.is_empty() {
        (0.0, RateKind::Stalled)
    } else {
        (history.cpus as f64 / history.default_job_time, RateKind::Prior)
    };
    RateEstimate {
        resource: history.resource.to_string(),
        jobs_per_second: rate,
        window,
        completed_in_window: completed,
        kind,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentStatus {
    Running,
    Completed,
    DeadlineMissed,
    BudgetExhausted,
}

impl ExperimentStatus {
    pub fn is_terminal(self) -> bool {
        self != ExperimentStatus::Running
    }

    pub fn label(self) -> &'static str {
        match self {
            ExperimentStatus::Running => "running",
            ExperimentStatus::Completed => "completed",
            ExperimentStatus::DeadlineMissed => "deadline-missed",
            ExperimentStatus::BudgetExhausted => "budget-exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobOutcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub job: usize,
    pub resource: usize,
    pub cpu_seconds: f64,
    /// Virtual time the job finished.
    pub end: f64,
    pub outcome: JobOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningJob {
    pub resource: usize,
    pub dispatched_at: f64,
}

/// Per-resource slice of the ledger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResourceLedger {
    pub running: u32,
    pub done_ok: u32,
    pub done_failed: u32,
    pub spent: f64,
    /// Successful completion times, for rate estimation.
    pub completion_times: Vec<f64>,
    /// Set when agent deployment fails; unusable resources get nothing.
    pub unusable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub clock: f64,
    pub pending: VecDeque<usize>,
    pub running: BTreeMap<usize, RunningJob>,
    /// Jobs that reached a terminal outcome (ok or permanently failed).
    pub done: BTreeMap<usize, JobOutcome>,
    pub spent: f64,
    pub per_resource: Vec<ResourceLedger>,
    pub status: ExperimentStatus,
    pub retries: BTreeMap<usize, u32>,
    pub total_jobs: usize,
    /// Largest completion time seen; the finish time once completed.
    pub last_completion: f64,
}

impl ScheduleState {
    pub fn new(total_jobs: usize, resource_count: usize) -> Self {
        ScheduleState {
            clock: 0.0,
            pending: (0..total_jobs).collect(),
            running: BTreeMap::new(),
            done: BTreeMap::new(),
            spent: 0.0,
            per_resource: vec![ResourceLedger::default(); resource_count],
            status: ExperimentStatus::Running,
            retries: BTreeMap::new(),
            total_jobs,
            last_completion: 0.0,
        }
    }

    pub fn free_slots(&self, resource: usize, desc: &ResourceDesc) -> u32 {
        desc.cpus.saturating_sub(self.per_resource[resource].running)
    }

    /// Move a pending job onto a resource.
    pub fn dispatch(&mut self, job: usize, resource: usize) {
        let pos = self
            .pending
            .iter()
            .position(|&j| j == job)
            .expect("dispatched job must be pending");
        self.pending.remove(pos);
        self.running.insert(job, RunningJob { resource, dispatched_at: self.clock });
        self.per_resource[resource].running += 1;
    }

    pub fn mark_unusable(&mut self, resource: usize) {
        self.per_resource[resource].unusable = true;
    }

    /// Charge a job that was stopped before completing (deadline or budget
    /// cut) and put it back in the pending set.
    pub fn charge_partial(&mut self, job: usize, resource: usize, cpu_seconds: f64, price: f64) {
        if self.running.remove(&job).is_some() {
            let cost = cpu_seconds * price;
            self.spent += cost;
            let ledger = &mut self.per_resource[resource];
            ledger.running = ledger.running.saturating_sub(1);
            ledger.spent += cost;
            self.pending.push_back(job);
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AccountError {
    #[error("job {0} is not running (double completion?)")]
    NotRunning(usize),
    #[error("job {job} completed on resource {got} but was dispatched to {expected}")]
    WrongResource { job: usize, got: usize, expected: usize },
}

/// Fold one completion into the ledger: charge its CPU-seconds, move the
/// job out of `running`, and either finish it or re-queue a failure.
pub fn account(
    state: &mut ScheduleState,
    resources: &[ResourceDesc],
    config: &ExperimentConfig,
    completion: &Completion,
) -> Result<(), AccountError> {
    let running =
        *state.running.get(&completion.job).ok_or(AccountError::NotRunning(completion.job))?;
    if running.resource != completion.resource {
        return Err(AccountError::WrongResource {
            job: completion.job,
            got: completion.resource,
            expected: running.resource,
        });
    }
    state.running.remove(&completion.job);

    let price = resources[completion.resource].price;
    let cost = completion.cpu_seconds * price;
    state.spent += cost;
    state.last_completion = state.last_completion.max(completion.end);

    let ledger = &mut state.per_resource[completion.resource];
    ledger.running = ledger.running.saturating_sub(1);
    ledger.spent += cost;

    match completion.outcome {
        JobOutcome::Ok => {
            ledger.done_ok += 1;
            ledger.completion_times.push(completion.end);
            state.done.insert(completion.job, JobOutcome::Ok);
        }
        JobOutcome::Failed => {
            let tries = state.retries.entry(completion.job).or_insert(0);
            *tries += 1;
            if *tries <= config.max_retries {
                state.pending.push_back(completion.job);
            } else {
                ledger.done_failed += 1;
                state.done.insert(completion.job, JobOutcome::Failed);
            }
        }
    }
    Ok(())
}

/// Current rate estimates, one per resource.
pub fn current_estimates(
    state: &ScheduleState,
    resources: &[ResourceDesc],
    config: &ExperimentConfig,
) -> Vec<RateEstimate> {
    let window = match config.rate_window {
        Some(w) => w,
        None => state.clock.max(config.tick_interval),
    }
    .max(f64::MIN_POSITIVE);
    resources
        .iter()
        .enumerate()
        .map(|(i, desc)| {
            estimate_rate(
                ResourceHistory {
                    resource: &desc.name,
                    cpus: desc.cpus,
                    completions: &state.per_resource[i].completion_times,
                    default_job_time: config.default_job_time,
                },
                window,
                state.clock,
            )
        })
        .collect()
}

/// Charged spend plus the projected cost of everything currently running.
fn committed_spend(
    state: &ScheduleState,
    resources: &[ResourceDesc],
    estimates: &[RateEstimate],
) -> f64 {
    let mut committed = state.spent;
    for running in state.running.values() {
        let r = running.resource;
        let proj = resources[r].price * estimates[r].expected_job_time(resources[r].cpus);
        if proj.is_finite() {
            committed += proj;
        }
    }
    committed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub job: usize,
    pub resource: usize,
}

/// Fill free slots everywhere, fastest per-slot resources first, within the
/// committed-spend budget cap. Ties go to the cheapest projected cost, then
/// to resource name.
pub fn allocate_time_opt(
    state: &ScheduleState,
    resources: &[ResourceDesc],
    config: &ExperimentConfig,
) -> Vec<Assignment> {
    let estimates = current_estimates(state, resources, config);
    let mut order: Vec<usize> = usable_resources(state, resources);
    order.sort_by(|&a, &b| {
        let slot_rate = |r: usize| estimates[r].jobs_per_second / resources[r].cpus.max(1) as f64;
        let proj = |r: usize| resources[r].price * estimates[r].expected_job_time(resources[r].cpus);
        slot_rate(b)
            .total_cmp(&slot_rate(a))
            .then(proj(a).total_cmp(&proj(b)))
            .then(resources[a].name.cmp(&resources[b].name))
    });

    let mut committed = committed_spend(state, resources, &estimates);
    let mut pending = state.pending.iter().copied();
    let mut assignments = Vec::new();
    'outer: for r in order {
        let proj = resources[r].price * estimates[r].expected_job_time(resources[r].cpus);
        for _ in 0..state.free_slots(r, &resources[r]) {
            if !proj.is_finite() || committed + proj > config.budget {
                break; // unaffordable or stalled; cheaper resources may still fit
            }
            match pending.next() {
                Some(job) => {
                    assignments.push(Assignment { job, resource: r });
                    committed += proj;
                }
                None => break 'outer,
            }
        }
    }
    assignments
}

/// Cheapest-first allocation. Each pricier tier is engaged only while the
/// projected completion time misses `deadline - margin`, except during the
/// warmup window when every tier may run.
pub fn allocate_cost_opt(
    state: &ScheduleState,
    resources: &[ResourceDesc],
    config: &ExperimentConfig,
) -> Vec<Assignment> {
    let estimates = current_estimates(state, resources, config);
    let mut tiers: Vec<usize> = usable_resources(state, resources);
    tiers.sort_by(|&a, &b| {
        resources[a]
            .price
            .total_cmp(&resources[b].price)
            .then(resources[a].name.cmp(&resources[b].name))
    });

    let margin = config.safety_margin_frac * (config.deadline - state.clock).max(0.0);
    let threshold = config.deadline - margin;
    let in_warmup = state.clock < config.warmup_window;

    // Resources already producing keep counting toward throughput.
    let mut engaged: BTreeSet<usize> =
        (0..resources.len()).filter(|&r| state.per_resource[r].running > 0).collect();
    let mut sum_rates: f64 = engaged.iter().map(|&r| estimates[r].jobs_per_second).sum();

    let mut committed = committed_spend(state, resources, &estimates);
    let mut pending_remaining = state.pending.len();
    let mut pending = state.pending.iter().copied();
    let mut assignments = Vec::new();

    for (i, &r) in tiers.iter().enumerate() {
        if pending_remaining == 0 {
            break;
        }
        if !in_warmup && i > 0 {
            let projected_finish = if sum_rates > 0.0 {
                state.clock + pending_remaining as f64 / sum_rates
            } else {
                f64::INFINITY
            };
            if projected_finish <= threshold {
                break; // engaged tiers already meet the deadline
            }
        }
        let proj = resources[r].price * estimates[r].expected_job_time(resources[r].cpus);
        for _ in 0..state.free_slots(r, &resources[r]) {
            if pending_remaining == 0 || !proj.is_finite() || committed + proj > config.budget {
                break;
            }
            if let Some(job) = pending.next() {
                assignments.push(Assignment { job, resource: r });
                committed += proj;
                pending_remaining -= 1;
            }
        }
        if engaged.insert(r) {
            sum_rates += estimates[r].jobs_per_second;
        }
    }
    assignments
}

fn usable_resources(state: &ScheduleState, resources: &[ResourceDesc]) -> Vec<usize> {
    (0..resources.len()).filter(|&r| !state.per_resource[r].unusable).collect()
}

/// Allocate according to the configured strategy.
pub fn allocate(
    state: &ScheduleState,
    resources: &[ResourceDesc],
    config: &ExperimentConfig,
) -> Vec<Assignment> {
    match config.strategy {
        Strategy::TimeOpt => allocate_time_opt(state, resources, config),
        Strategy::CostOpt => allocate_cost_opt(state, resources, config),
    }
}

/// Re-evaluate the experiment status. Terminal states are sticky.
pub fn check_constraints(
    state: &ScheduleState,
    resources: &[ResourceDesc],
    config: &ExperimentConfig,
) -> ExperimentStatus {
    if state.status.is_terminal() {
        return state.status;
    }
    if state.done.len() == state.total_jobs {
        return ExperimentStatus::Completed;
    }
    if !state.pending.is_empty() && state.running.is_empty() {
        // Nothing in flight: is any assignment still affordable?
        let estimates = current_estimates(state, resources, config);
        let cheapest = usable_resources(state, resources)
            .into_iter()
            .map(|r| resources[r].price * estimates[r].expected_job_time(resources[r].cpus))
            .fold(f64::INFINITY, f64::min);
        if !cheapest.is_finite() || state.spent + cheapest > config.budget {
            return ExperimentStatus::BudgetExhausted;
        }
    }
    if state.clock > config.deadline && (!state.pending.is_empty() || !state.running.is_empty()) {
        return ExperimentStatus::DeadlineMissed;
    }
    ExperimentStatus::Running
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub resource: String,
    pub price: f64,
    pub jobs_executed: u32,
    pub spent_gd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub total_cost_gd: f64,
    pub time_to_finish_min: f64,
    pub status: ExperimentStatus,
    pub jobs_failed: u32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("report requested before the experiment reached a terminal state")]
pub struct ReportBeforeTerminal;

pub fn report(
    state: &ScheduleState,
    resources: &[ResourceDesc],
) -> Result<Report, ReportBeforeTerminal> {
    if !state.status.is_terminal() {
        return Err(ReportBeforeTerminal);
    }
    let rows = resources
        .iter()
        .enumerate()
        .map(|(i, desc)| ReportRow {
            resource: desc.name.clone(),
            price: desc.price,
            jobs_executed: state.per_resource[i].done_ok,
            spent_gd: state.per_resource[i].spent,
        })
        .collect();
    let finish = if state.status == ExperimentStatus::Completed {
        state.last_completion
    } else {
        state.clock
    };
    Ok(Report {
        rows,
        total_cost_gd: state.spent,
        time_to_finish_min: finish / 60.0,
        status: state.status,
        jobs_failed: state.per_resource.iter().map(|l| l.done_failed).sum(),
    })
}

impl Report {
    /// Text table: resource, price, jobs executed, G$ spent, plus totals.
    /// G$ print with no decimals, minutes with two.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let name_w = self.rows.iter().map(|r| r.resource.len()).max().unwrap_or(8).max(8);
        out.push_str(&format!(
            "{:<name_w$}  {:>5}  {:>13}  {:>10}\n",
            "resource",
            "price",
            "jobs_executed",
            "spent_gd",
            name_w = name_w
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<name_w$}  {:>5}  {:>13}  {:>10.0}\n",
                row.resource,
                trim_float(row.price),
                row.jobs_executed,
                row.spent_gd,
                name_w = name_w
            ));
        }
        out.push_str(&format!("total_cost_gd      {:.0}\n", self.total_cost_gd));
        out.push_str(&format!("time_to_finish_min {:.2}\n", self.time_to_finish_min));
        out.push_str(&format!("status             {}\n", self.status.label()));
        if self.jobs_failed > 0 {
            out.push_str(&format!("jobs_failed        {}\n", self.jobs_failed));
        }
        out
    }

    /// CSV form: per-resource rows then a `total` row.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("resource,price_gd_per_cpu_sec,jobs_executed,spent_gd\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.0}\n",
                row.resource,
                trim_float(row.price),
                row.jobs_executed,
                row.spent_gd
            ));
        }
        let total_jobs: u32 = self.rows.iter().map(|r| r.jobs_executed).sum();
        out.push_str(&format!("total,,{},{:.0}\n", total_jobs, self.total_cost_gd));
        out
    }
}

/// Render a float without trailing zeros (`1` rather than `1.0`).
pub fn trim_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{}", v)
    }
}

#[cfg(test)]
mod tests;

//! Deterministic discrete-event simulation of the grid fabric.
//!
//! The engine keeps a priority queue of events (completions, availability
//! boundaries) ordered by virtual time with an insertion sequence number as
//! the tie-break, so identical seeds replay event-for-event. Jobs dispatched
//! to a resource queue for a free CPU slot; a resource entering an
//! availability gap suspends its running jobs (they stop consuming CPU and
//! stop costing money) and resumes them when the window opens.
//!
//! Spending is watched continuously: between events the charge rate is
//! constant, so the exact instant committed spending would cross the budget
//! is solvable in closed form, and the engine halts right there instead of
//! overshooting.

use super::{
    deploy_agent_virtual, main_task_outputs, ExecutionRecord, ExperimentOutcome, FabricError,
    ServiceModel, SimResource, Trace,
};
use crate::broker::{
    account, allocate, check_constraints, report, trim_float, Completion, ExperimentConfig,
    ExperimentStatus, JobOutcome, ResourceDesc, ScheduleState,
};
use crate::plan::PlanFile;
use crate::rungen::RunFile;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Complete { resource: usize, job: usize, epoch: u64 },
    AvailUp { resource: usize },
    AvailDown { resource: usize },
}

#[derive(Debug, Clone, Copy)]
struct HeapEvent {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for HeapEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for HeapEvent {}
impl PartialOrd for HeapEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest first.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct EngineJob {
    service: f64,
    remaining: f64,
    consumed: f64,
    started: f64,
    active_since: Option<f64>,
    epoch: u64,
}

struct EngineResource {
    name: String,
    cpus: u32,
    price: f64,
    service: ServiceModel,
    rng: ChaCha8Rng,
    queue: VecDeque<usize>,
    running: BTreeMap<usize, EngineJob>,
    available: bool,
}

/// A job stopped before completion; `consumed` CPU-seconds were used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialRun {
    pub job: usize,
    pub resource: usize,
    pub consumed: f64,
    pub started: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BudgetGuard {
    pub budget: f64,
    /// G$ already charged by the broker when the advance began.
    pub spent_base: f64,
}

#[derive(Debug, Default)]
pub struct AdvanceResult {
    pub completions: Vec<Completion>,
    /// Set when the budget guard stopped the clock early.
    pub halted: bool,
}

pub struct SimEngine {
    clock: f64,
    resources: Vec<EngineResource>,
    events: BinaryHeap<HeapEvent>,
    seq: u64,
    log: Vec<String>,
    fetch_latency: f64,
    starts: BTreeMap<usize, f64>,
}

impl SimEngine {
    pub fn new(resources: &[SimResource], global_seed: u64, fetch_latency: f64) -> Self {
        let mut engine = SimEngine {
            clock: 0.0,
            resources: Vec::with_capacity(resources.len()),
            events: BinaryHeap::new(),
            seq: 0,
            log: Vec::new(),
            fetch_latency,
            starts: BTreeMap::new(),
        };
        for (i, r) in resources.iter().enumerate() {
            let seed = global_seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(r.seed)
                .wrapping_add((i as u64) << 32);
            let available = r.availability.is_empty()
                || r.availability.iter().any(|&(a, b)| a <= 0.0 && 0.0 < b);
            engine.resources.push(EngineResource {
                name: r.descriptor.name.clone(),
                cpus: r.descriptor.cpus,
                price: r.descriptor.price,
                service: r.service.clone(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                queue: VecDeque::new(),
                running: BTreeMap::new(),
                available,
            });
            for &(from, to) in &r.availability {
                if from > 0.0 {
                    engine.push_event(from, EventKind::AvailUp { resource: i });
                }
                engine.push_event(to, EventKind::AvailDown { resource: i });
            }
        }
        engine
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn has_work(&self) -> bool {
        self.resources.iter().any(|r| !r.queue.is_empty() || !r.running.is_empty())
    }

    /// Actively executing jobs per resource (suspended jobs excluded).
    pub fn active_counts(&self) -> Vec<u32> {
        self.resources
            .iter()
            .map(|r| if r.available { r.running.len() as u32 } else { 0 })
            .collect()
    }

    fn push_event(&mut self, time: f64, kind: EventKind) {
        self.events.push(HeapEvent { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn log_event(&mut self, time: f64, text: String) {
        self.log.push(format!("t={} {}", trim_float(time), text));
    }

    /// Hand a job to a resource; it starts as soon as a usable slot frees.
    pub fn dispatch(&mut self, job: usize, resource: usize) {
        let time = self.clock;
        let name = self.resources[resource].name.clone();
        self.log_event(time, format!("dispatch job={} res={}", job, name));
        self.resources[resource].queue.push_back(job);
        self.try_start(resource);
    }

    fn sample_service(&mut self, resource: usize) -> f64 {
        let r = &mut self.resources[resource];
        let sample = match &r.service {
            ServiceModel::Fixed(t) => *t,
            ServiceModel::Uniform(lo, hi) => {
                if hi > lo {
                    r.rng.random_range(*lo..*hi)
                } else {
                    *lo
                }
            }
            ServiceModel::LogNormal { mu, sigma } => {
                LogNormal::new(*mu, *sigma).expect("valid lognormal").sample(&mut r.rng)
            }
        };
        (sample + self.fetch_latency).max(1e-9)
    }

    fn try_start(&mut self, resource: usize) {
        loop {
            let r = &self.resources[resource];
            if !r.available || r.running.len() >= r.cpus as usize || r.queue.is_empty() {
                return;
            }
            let job = self.resources[resource].queue.pop_front().unwrap();
            let service = self.sample_service(resource);
            let time = self.clock;
            let epoch = self.seq;
            self.resources[resource].running.insert(
                job,
                EngineJob {
                    service,
                    remaining: service,
                    consumed: 0.0,
                    started: time,
                    active_since: Some(time),
                    epoch,
                },
            );
            self.starts.insert(job, time);
            self.push_event(time + service, EventKind::Complete { resource, job, epoch });
            let name = self.resources[resource].name.clone();
            self.log_event(time, format!("start job={} res={} service={}", job, name, trim_float(service)));
        }
    }

    /// Charged-but-unfinished cost of everything currently running.
    fn accrued_at(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for r in &self.resources {
            for job in r.running.values() {
                let active = match job.active_since {
                    Some(since) => t - since,
                    None => 0.0,
                };
                total += (job.consumed + active) * r.price;
            }
        }
        total
    }

    /// G$ per second being consumed right now.
    fn charge_rate(&self) -> f64 {
        self.resources
            .iter()
            .filter(|r| r.available)
            .map(|r| r.running.len() as f64 * r.price)
            .sum()
    }

    /// Fold active time into `consumed` for every running job, as of `t`.
    fn freeze_consumption(&mut self, t: f64) {
        for r in &mut self.resources {
            for job in r.running.values_mut() {
                if let Some(since) = job.active_since {
                    job.consumed += t - since;
                    job.remaining = (job.service - job.consumed).max(0.0);
                    job.active_since = Some(t);
                }
            }
        }
    }

    fn process_event(&mut self, ev: HeapEvent, out: &mut AdvanceResult) {
        match ev.kind {
            EventKind::Complete { resource, job, epoch } => {
                let stale = match self.resources[resource].running.get(&job) {
                    Some(j) => j.epoch != epoch,
                    None => true,
                };
                if stale {
                    return;
                }
                let j = self.resources[resource].running.remove(&job).unwrap();
                let name = self.resources[resource].name.clone();
                self.log_event(ev.time, format!("complete job={} res={}", job, name));
                out.completions.push(Completion {
                    job,
                    resource,
                    cpu_seconds: j.service,
                    end: ev.time,
                    outcome: JobOutcome::Ok,
                });
                self.try_start(resource);
            }
            EventKind::AvailUp { resource } => {
                let time = ev.time;
                let name = self.resources[resource].name.clone();
                self.log_event(time, format!("avail-up res={}", name));
                self.resources[resource].available = true;
                let jobs: Vec<usize> = self.resources[resource].running.keys().copied().collect();
                for job in jobs {
                    let epoch = self.seq;
                    let remaining = {
                        let j = self.resources[resource].running.get_mut(&job).unwrap();
                        j.active_since = Some(time);
                        j.epoch = epoch;
                        j.remaining
                    };
                    self.push_event(time + remaining, EventKind::Complete { resource, job, epoch });
                }
                self.try_start(resource);
            }
            EventKind::AvailDown { resource } => {
                let time = ev.time;
                let name = self.resources[resource].name.clone();
                self.log_event(time, format!("avail-down res={}", name));
                let r = &mut self.resources[resource];
                r.available = false;
                for j in r.running.values_mut() {
                    if let Some(since) = j.active_since {
                        j.consumed += time - since;
                        j.remaining = (j.service - j.consumed).max(0.0);
                        j.active_since = None;
                    }
                    j.epoch = j.epoch.wrapping_add(1); // cancel the pending completion
                }
            }
        }
    }

    /// Advance virtual time to `until`, delivering completions on the way.
    /// With a budget guard, the clock instead stops at the exact instant
    /// total spending (charged + running accrual) would cross the budget.
    pub fn advance(&mut self, until: f64, guard: Option<BudgetGuard>) -> AdvanceResult {
        let mut out = AdvanceResult::default();
        let mut emitted_cost = 0.0;
        loop {
            let next_event_time = self.events.peek().map(|e| e.time);
            let segment_end = match next_event_time {
                Some(t) if t <= until => t,
                _ => until,
            };

            if let Some(g) = guard {
                let s0 = g.spent_base + emitted_cost + self.accrued_at(self.clock);
                let rate = self.charge_rate();
                let projected = s0 + rate * (segment_end - self.clock);
                if projected > g.budget + 1e-9 {
                    let dt = if rate > 0.0 { ((g.budget - s0) / rate).max(0.0) } else { 0.0 };
                    let halt_at = self.clock + dt;
                    self.freeze_consumption(halt_at);
                    self.clock = halt_at;
                    self.log_event(halt_at, "halt budget-exhausted".to_string());
                    out.halted = true;
                    return out;
                }
            }

            self.clock = segment_end;
            match next_event_time {
                Some(t) if t <= until => {
                    let ev = self.events.pop().unwrap();
                    let before = out.completions.len();
                    self.process_event(ev, &mut out);
                    for c in &out.completions[before..] {
                        emitted_cost += c.cpu_seconds * self.resources[c.resource].price;
                    }
                }
                _ => return out,
            }
        }
    }

    /// Stop everything: running jobs are frozen and reported with their
    /// consumed CPU-seconds; queued jobs return unconsumed.
    pub fn cancel_all(&mut self) -> Vec<PartialRun> {
        let t = self.clock;
        self.freeze_consumption(t);
        let mut partials = Vec::new();
        for (i, r) in self.resources.iter_mut().enumerate() {
            let jobs: Vec<usize> = r.running.keys().copied().collect();
            for job in jobs {
                let j = r.running.remove(&job).unwrap();
                partials.push(PartialRun { job, resource: i, consumed: j.consumed, started: j.started });
            }
            while let Some(job) = r.queue.pop_front() {
                partials.push(PartialRun { job, resource: i, consumed: 0.0, started: t });
            }
        }
        for p in &partials {
            let name = self.resources[p.resource].name.clone();
            self.log_event(t, format!("kill job={} res={} consumed={}", p.job, name, trim_float(p.consumed)));
        }
        self.events.clear();
        partials
    }

    pub fn start_time(&self, job: usize) -> Option<f64> {
        self.starts.get(&job).copied()
    }

    pub fn render_log(&self, truncated: bool) -> String {
        let mut out = self.log.join("\n");
        out.push('\n');
        if truncated {
            out.push_str("log-truncated: horizon exceeded with events pending\n");
        }
        out
    }
}

/// Knobs for a simulated experiment. The experiment loop always runs to a
/// terminal status (the finite deadline bounds it); callers needing a raw
/// horizon drive [`SimEngine::advance`] directly.
#[derive(Debug, Clone, Default)]
pub struct SimParams {
    pub global_seed: u64,
    /// Extra seconds charged to every job for its molecule fetch.
    pub fetch_latency: f64,
}

/// Run a whole experiment in virtual time: deploy agents, then loop
/// allocate -> advance one tick -> account -> snapshot until a terminal
/// status is reached.
pub fn run_sim_experiment(
    plan: &PlanFile,
    run: &RunFile,
    testbed: &[SimResource],
    config: &ExperimentConfig,
    params: &SimParams,
) -> Result<ExperimentOutcome, FabricError> {
    let descs: Vec<ResourceDesc> = testbed.iter().map(|r| r.descriptor.clone()).collect();
    let mut state = ScheduleState::new(run.jobs.len(), descs.len());
    let mut engine = SimEngine::new(testbed, params.global_seed, params.fetch_latency);
    let mut trace = Trace::default();
    let mut records: Vec<ExecutionRecord> = Vec::new();

    // Agent deployment: once per node, before any job runs on it.
    let pseudo: BTreeMap<String, String> =
        [("HOME".to_string(), ".".to_string()), ("OS".to_string(), "sim".to_string())]
            .into_iter()
            .collect();
    for (i, desc) in descs.iter().enumerate() {
        match deploy_agent_virtual(plan, &desc.name, &pseudo) {
            Ok(agent) => {
                engine.log_event(
                    0.0,
                    format!("deploy res={} staged={}", desc.name, agent.staged_files.len()),
                );
            }
            Err(e) => {
                engine.log_event(0.0, format!("deploy-failed res={} ({})", desc.name, e));
                state.mark_unusable(i);
            }
        }
    }

    trace.snapshot(0.0, &state, &descs, &engine.active_counts());

    state.status = check_constraints(&state, &descs, config);
    while !state.status.is_terminal() {
        for a in allocate(&state, &descs, config) {
            state.dispatch(a.job, a.resource);
            engine.dispatch(a.job, a.resource);
        }

        let target = state.clock + config.tick_interval;
        let guard = BudgetGuard { budget: config.budget, spent_base: state.spent };
        let advance = engine.advance(target, Some(guard));
        for completion in &advance.completions {
            push_record(&mut records, plan, run, &descs, &engine, completion);
            account(&mut state, &descs, config, completion)
                .map_err(|e| FabricError::Other(e.to_string()))?;
        }
        state.clock = engine.clock();

        if advance.halted {
            state.status = ExperimentStatus::BudgetExhausted;
        } else {
            state.status = check_constraints(&state, &descs, config);
        }
        // A terminal tick stops in-flight work; its consumed CPU-seconds
        // are charged before this tick's snapshot so the trace ends on the
        // same figures the report shows.
        if state.status.is_terminal() && engine.has_work() {
            charge_partials(&mut state, &descs, engine.cancel_all());
        }
        trace.snapshot(state.clock, &state, &descs, &engine.active_counts());
    }

    let report = report(&state, &descs).map_err(|e| FabricError::Other(e.to_string()))?;
    Ok(ExperimentOutcome {
        report,
        trace_csv: trace.to_csv(),
        event_log: engine.render_log(false),
        records,
        state,
    })
}

fn charge_partials(
    state: &mut ScheduleState,
    descs: &[ResourceDesc],
    partials: Vec<PartialRun>,
) {
    for p in partials {
        state.charge_partial(p.job, p.resource, p.consumed, descs[p.resource].price);
    }
}

fn push_record(
    records: &mut Vec<ExecutionRecord>,
    plan: &PlanFile,
    run: &RunFile,
    descs: &[ResourceDesc],
    engine: &SimEngine,
    completion: &Completion,
) {
    let job = &run.jobs[completion.job];
    let mut bindings = job.binding_map();
    bindings.insert("jobname".into(), job.jobname.clone());
    bindings.insert("HOME".into(), ".".into());
    bindings.insert("OS".into(), "sim".into());
    let outputs = main_task_outputs(plan, &bindings).unwrap_or_default();
    records.push(ExecutionRecord {
        job: job.jobname.clone(),
        resource: descs[completion.resource].name.clone(),
        start: engine.start_time(completion.job).unwrap_or(0.0),
        end: completion.end,
        cpu_seconds: completion.cpu_seconds,
        ok: completion.outcome == JobOutcome::Ok,
        outputs,
    });
}

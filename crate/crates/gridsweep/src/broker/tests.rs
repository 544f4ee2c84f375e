use super::*;
use proptest::prelude::{any, prop_assert_eq, proptest};

fn res(name: &str, cpus: u32, price: f64) -> ResourceDesc {
    ResourceDesc { name: name.into(), cpus, price }
}

fn cfg(deadline: f64, budget: f64, strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig::new(deadline, budget, strategy)
}

#[test]
fn rate_from_trailing_window() {
    let completions: Vec<f64> = (1..=12).map(|i| 480.0 + i as f64 * 10.0).collect();
    let est = estimate_rate(
        ResourceHistory { resource: "r", cpus: 4, completions: &completions, default_job_time: 60.0 },
        120.0,
        600.0,
    );
    assert_eq!(est.kind, RateKind::Measured);
    assert_eq!(est.completed_in_window, 12);
    assert!((est.jobs_per_second - 0.1).abs() < 1e-12);
}

#[test]
fn rate_prior_without_history() {
    let est = estimate_rate(
        ResourceHistory { resource: "r", cpus: 4, completions: &[], default_job_time: 60.0 },
        120.0,
        0.0,
    );
    assert_eq!(est.kind, RateKind::Prior);
    assert!((est.jobs_per_second - 4.0 / 60.0).abs() < 1e-12);
    assert!((est.expected_job_time(4) - 60.0).abs() < 1e-12);
}

#[test]
fn rate_stalled_when_history_is_old() {
    let completions = [10.0, 20.0, 30.0];
    let est = estimate_rate(
        ResourceHistory { resource: "r", cpus: 4, completions: &completions, default_job_time: 60.0 },
        120.0,
        600.0,
    );
    assert_eq!(est.kind, RateKind::Stalled);
    assert_eq!(est.jobs_per_second, 0.0);
    assert!(est.expected_job_time(4).is_infinite());
}

#[test]
fn time_opt_fills_identical_resources_evenly() {
    let resources = vec![res("alpha", 4, 1.0), res("beta", 4, 1.0)];
    let state = ScheduleState::new(10, 2);
    let config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    let assignments = allocate_time_opt(&state, &resources, &config);
    assert_eq!(assignments.len(), 8);
    let alpha = assignments.iter().filter(|a| a.resource == 0).count();
    let beta = assignments.iter().filter(|a| a.resource == 1).count();
    assert_eq!((alpha, beta), (4, 4));
}

#[test]
fn time_opt_never_exceeds_pending() {
    let resources = vec![res("alpha", 8, 1.0)];
    let state = ScheduleState::new(3, 1);
    let config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    let assignments = allocate_time_opt(&state, &resources, &config);
    assert_eq!(assignments.len(), 3);
}

#[test]
fn time_opt_skips_unusable_resources() {
    let resources = vec![res("alpha", 4, 1.0), res("beta", 4, 1.0)];
    let mut state = ScheduleState::new(10, 2);
    state.mark_unusable(0);
    let config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    let assignments = allocate_time_opt(&state, &resources, &config);
    assert!(assignments.iter().all(|a| a.resource == 1));
}

/// Brute-force maximality oracle on a tight-budget instance: after the
/// allocator runs, no further assignment can fit the residual budget, and
/// the assignments that were made favor cheaper projected cost.
#[test]
fn time_opt_budget_skip_is_maximal() {
    let resources = vec![res("cheap", 2, 1.0), res("mid", 2, 2.0), res("dear", 2, 5.0)];
    let mut state = ScheduleState::new(6, 3);
    state.spent = 0.0;
    let mut config = cfg(10_000.0, 250.0, Strategy::TimeOpt);
    config.default_job_time = 60.0; // prior: every job projects 60 s

    let assignments = allocate_time_opt(&state, &resources, &config);
    let estimates = current_estimates(&state, &resources, &config);
    let proj =
        |r: usize| resources[r].price * estimates[r].expected_job_time(resources[r].cpus);

    let committed: f64 = state.spent + assignments.iter().map(|a| proj(a.resource)).sum::<f64>();
    assert!(committed <= config.budget + 1e-9);

    // Oracle: every leftover (resource slot, pending job) pair must be
    // unaffordable, otherwise the allocator skipped a feasible assignment.
    let assigned_jobs = assignments.len();
    let leftover_pending = state.pending.len() - assigned_jobs;
    if leftover_pending > 0 {
        for (r, desc) in resources.iter().enumerate() {
            let used = assignments.iter().filter(|a| a.resource == r).count() as u32;
            if used < desc.cpus {
                assert!(
                    committed + proj(r) > config.budget,
                    "assignment to {} was feasible but skipped",
                    desc.name
                );
            }
        }
    }
    // Projections: cheap 60, mid 120, dear 300. Budget 250 fits cheap+cheap+mid.
    assert_eq!(assignments.len(), 3);
    assert!(assignments.iter().all(|a| a.resource != 2));
}

#[test]
fn cost_opt_leaves_expensive_idle_when_cheap_meets_deadline() {
    let resources = vec![res("cheap", 2, 1.0), res("dear", 2, 3.0)];
    let mut state = ScheduleState::new(5, 2);
    state.clock = 200.0; // past warmup
    state.per_resource[0].completion_times = (1..=10).map(|i| i as f64 * 20.0).collect();
    state.per_resource[0].done_ok = 10;
    let config = cfg(1000.0, 1e9, Strategy::CostOpt);

    let assignments = allocate_cost_opt(&state, &resources, &config);
    assert!(!assignments.is_empty());
    assert!(assignments.iter().all(|a| a.resource == 0), "{:?}", assignments);
}

#[test]
fn cost_opt_engages_every_tier_during_warmup() {
    let resources = vec![res("cheap", 2, 1.0), res("dear", 2, 3.0)];
    let state = ScheduleState::new(10, 2);
    let config = cfg(100_000.0, 1e9, Strategy::CostOpt);
    let assignments = allocate_cost_opt(&state, &resources, &config);
    assert_eq!(assignments.len(), 4);
    assert!(assignments.iter().any(|a| a.resource == 1));
}

#[test]
fn cost_opt_reengages_expensive_tier_when_cheap_stalls() {
    let resources = vec![res("cheap", 2, 1.0), res("dear", 2, 3.0)];
    let mut state = ScheduleState::new(10, 2);
    state.clock = 800.0;
    // Cheap produced early, then went quiet; its full-history rate has
    // decayed enough that alone it projects past the deadline.
    state.per_resource[0].completion_times = vec![20.0, 40.0, 60.0, 80.0, 100.0];
    state.per_resource[0].done_ok = 5;
    let config = cfg(1000.0, 1e9, Strategy::CostOpt);
    let assignments = allocate_cost_opt(&state, &resources, &config);
    assert!(assignments.iter().any(|a| a.resource == 1), "{:?}", assignments);
}

#[test]
fn account_charges_cpu_seconds_times_price() {
    let resources = vec![res("r", 4, 2.0), res("zero", 4, 0.0)];
    let config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    let mut state = ScheduleState::new(2, 2);
    state.dispatch(0, 0);
    state.dispatch(1, 1);
    account(
        &mut state,
        &resources,
        &config,
        &Completion { job: 0, resource: 0, cpu_seconds: 10.0, end: 10.0, outcome: JobOutcome::Ok },
    )
    .unwrap();
    assert!((state.spent - 20.0).abs() < 1e-12);
    account(
        &mut state,
        &resources,
        &config,
        &Completion { job: 1, resource: 1, cpu_seconds: 10.0, end: 10.0, outcome: JobOutcome::Ok },
    )
    .unwrap();
    assert!((state.spent - 20.0).abs() < 1e-12, "price-0 resource must charge nothing");
    assert_eq!(state.per_resource[0].done_ok, 1);
}

#[test]
fn double_completion_is_rejected() {
    let resources = vec![res("r", 1, 1.0)];
    let config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    let mut state = ScheduleState::new(1, 1);
    state.dispatch(0, 0);
    let done =
        Completion { job: 0, resource: 0, cpu_seconds: 5.0, end: 5.0, outcome: JobOutcome::Ok };
    account(&mut state, &resources, &config, &done).unwrap();
    assert_eq!(
        account(&mut state, &resources, &config, &done),
        Err(AccountError::NotRunning(0))
    );
}

#[test]
fn failed_jobs_requeue_until_retries_run_out() {
    let resources = vec![res("r", 1, 1.0)];
    let mut config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    config.max_retries = 2;
    let mut state = ScheduleState::new(1, 1);
    for attempt in 0..3 {
        state.dispatch(0, 0);
        account(
            &mut state,
            &resources,
            &config,
            &Completion {
                job: 0,
                resource: 0,
                cpu_seconds: 1.0,
                end: attempt as f64,
                outcome: JobOutcome::Failed,
            },
        )
        .unwrap();
    }
    assert!(state.pending.is_empty());
    assert_eq!(state.done.get(&0), Some(&JobOutcome::Failed));
    assert_eq!(state.per_resource[0].done_failed, 1);
}

#[test]
fn constraints_completed_before_deadline() {
    let resources = vec![res("r", 1, 1.0)];
    let config = cfg(3600.0, 50_000.0, Strategy::TimeOpt);
    let mut state = ScheduleState::new(1, 1);
    state.dispatch(0, 0);
    account(
        &mut state,
        &resources,
        &config,
        &Completion { job: 0, resource: 0, cpu_seconds: 9.0, end: 2040.0, outcome: JobOutcome::Ok },
    )
    .unwrap();
    state.clock = 2040.0;
    assert_eq!(check_constraints(&state, &resources, &config), ExperimentStatus::Completed);
}

#[test]
fn constraints_deadline_missed() {
    let resources = vec![res("r", 1, 1.0)];
    let config = cfg(3600.0, 50_000.0, Strategy::TimeOpt);
    let mut state = ScheduleState::new(5, 1);
    state.clock = 3601.0;
    assert_eq!(check_constraints(&state, &resources, &config), ExperimentStatus::DeadlineMissed);
}

#[test]
fn constraints_budget_exhausted_when_nothing_affordable() {
    let resources = vec![res("r", 1, 1.0)];
    let config = cfg(100_000.0, 50_000.0, Strategy::TimeOpt);
    let mut state = ScheduleState::new(10, 1);
    state.clock = 500.0;
    state.spent = 49_990.0;
    // Ten completions over 500 s: expected job time 50 s, projected cost 50.
    state.per_resource[0].completion_times = (1..=10).map(|i| i as f64 * 50.0).collect();
    for j in 0..5 {
        state.done.insert(j, JobOutcome::Ok);
    }
    assert_eq!(
        check_constraints(&state, &resources, &config),
        ExperimentStatus::BudgetExhausted
    );
}

#[test]
fn terminal_status_is_sticky() {
    let resources = vec![res("r", 1, 1.0)];
    let config = cfg(3600.0, 50_000.0, Strategy::TimeOpt);
    let mut state = ScheduleState::new(1, 1);
    state.status = ExperimentStatus::BudgetExhausted;
    state.done.insert(0, JobOutcome::Ok);
    assert_eq!(
        check_constraints(&state, &resources, &config),
        ExperimentStatus::BudgetExhausted
    );
}

#[test]
fn report_requires_terminal_state() {
    let resources = vec![res("r", 1, 1.0)];
    let state = ScheduleState::new(1, 1);
    assert_eq!(report(&state, &resources), Err(ReportBeforeTerminal));
}

#[test]
fn zero_job_experiment_reports_cleanly() {
    let resources = vec![res("r", 1, 1.0)];
    let mut state = ScheduleState::new(0, 1);
    state.status = ExperimentStatus::Completed;
    let rep = report(&state, &resources).unwrap();
    assert_eq!(rep.total_cost_gd, 0.0);
    assert_eq!(rep.status, ExperimentStatus::Completed);
    assert_eq!(rep.rows.iter().map(|r| r.jobs_executed).sum::<u32>(), 0);
    assert!(rep.render_text().contains("status             completed"));
}

#[test]
fn conservation_per_resource() {
    let resources = vec![res("a", 2, 1.0), res("b", 2, 2.0)];
    let config = cfg(3600.0, 1e9, Strategy::TimeOpt);
    let mut state = ScheduleState::new(4, 2);
    state.dispatch(0, 0);
    state.dispatch(1, 0);
    state.dispatch(2, 1);
    account(
        &mut state,
        &resources,
        &config,
        &Completion { job: 0, resource: 0, cpu_seconds: 5.0, end: 5.0, outcome: JobOutcome::Ok },
    )
    .unwrap();
    for (i, ledger) in state.per_resource.iter().enumerate() {
        let running = state.running.values().filter(|r| r.resource == i).count() as u32;
        assert_eq!(ledger.running, running);
    }
    let done_total: u32 = state.per_resource.iter().map(|l| l.done_ok + l.done_failed).sum();
    assert_eq!(done_total as usize, state.done.len());
    assert_eq!(
        state.pending.len() + state.running.len() + state.done.len(),
        state.total_jobs
    );
}

proptest! {
    /// Allocation decisions depend only on price ordering and budget
    /// ratios: scaling every price and the budget by the same factor must
    /// not change the assignment sequence.
    #[test]
    fn allocation_invariant_under_price_scaling(
        prices in proptest::collection::vec(0.5f64..8.0, 2..5),
        cpus in proptest::collection::vec(1u32..5, 2..5),
        jobs in 1usize..30,
        budget in 100.0f64..5000.0,
        scale in 0.1f64..40.0,
        time_opt in any::<bool>(),
    ) {
        let n = prices.len().min(cpus.len());
        let strategy = if time_opt { Strategy::TimeOpt } else { Strategy::CostOpt };
        let base: Vec<ResourceDesc> = (0..n)
            .map(|i| res(&format!("r{}", i), cpus[i], prices[i]))
            .collect();
        let scaled: Vec<ResourceDesc> = base
            .iter()
            .map(|d| res(&d.name, d.cpus, d.price * scale))
            .collect();
        let state = ScheduleState::new(jobs, n);
        let a = allocate(&state, &base, &cfg(3600.0, budget, strategy));
        let b = allocate(&state, &scaled, &cfg(3600.0, budget * scale, strategy));
        prop_assert_eq!(a, b);
    }
}

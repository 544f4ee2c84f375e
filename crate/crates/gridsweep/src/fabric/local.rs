//! Local process backend: runs the task scripts for real on this machine.
//!
//! Each configured resource becomes a "node" directory under the work dir.
//! Agent deployment executes the plan's nodestart script once per node into
//! a staging area; every job then gets a private directory seeded with the
//! staged files, so concurrent jobs on one node cannot trample each other.
//! Up to `cpus` worker threads per node run jobs; completions funnel back
//! to the broker loop over a channel and are charged by wall-clock seconds.

use super::{
    main_task_outputs, staged_name, ExecutionRecord, ExperimentOutcome, FabricError, SimResource,
    Trace,
};
use crate::broker::{
    account, allocate, check_constraints, report, Completion, ExperimentConfig, JobOutcome,
    ResourceDesc, ScheduleState,
};
use crate::plan::{substitute, Command, PlanFile, TaskKind};
use crate::rungen::RunFile;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct LocalParams {
    /// Experiment home: plan-relative paths (and `$HOME`) resolve here.
    pub home_dir: PathBuf,
    /// Node directories are created under here.
    pub work_dir: PathBuf,
    pub poll_interval: Duration,
}

impl LocalParams {
    pub fn new(home_dir: PathBuf, work_dir: PathBuf) -> Self {
        LocalParams { home_dir, work_dir, poll_interval: Duration::from_millis(50) }
    }
}

struct WorkItem {
    job: usize,
    jobname: String,
    bindings: BTreeMap<String, String>,
    resource: usize,
}

struct DoneMsg {
    completion: Completion,
    record: Option<ExecutionRecord>,
    /// The worker refused the item because the experiment already ended.
    cancelled: bool,
}

struct NodeRuntime {
    sender: Option<mpsc::Sender<WorkItem>>,
    workers: Vec<std::thread::JoinHandle<()>>,
}

fn now_secs(start: &Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Resolve a plan path against a base directory; absolute paths (typically
/// from `$HOME` substitution) pass through.
fn resolve(base: &Path, p: &str) -> PathBuf {
    if p.starts_with('/') {
        PathBuf::from(p)
    } else {
        base.join(p.strip_prefix("./").unwrap_or(p))
    }
}

fn copy_into(src: &Path, dst: &Path) -> Result<(), String> {
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("mkdir {:?}: {}", parent, e))?;
    }
    std::fs::copy(src, dst).map_err(|e| format!("copy {:?} -> {:?}: {}", src, dst, e))?;
    Ok(())
}

/// Run the nodestart script into this node's staging directory.
fn deploy_agent_local(
    plan: &PlanFile,
    home: &Path,
    stage: &Path,
    bindings: &BTreeMap<String, String>,
) -> Result<usize, String> {
    std::fs::create_dir_all(stage).map_err(|e| format!("mkdir {:?}: {}", stage, e))?;
    let mut staged = 0usize;
    if let Some(task) = plan.task(TaskKind::Nodestart) {
        for cmd in &task.commands {
            run_command(cmd, home, stage, bindings)?;
            if matches!(cmd, Command::CopyToNode { .. }) {
                staged += 1;
            }
        }
    }
    Ok(staged)
}

/// Execute one task command with `node_dir` standing in for the node.
fn run_command(
    cmd: &Command,
    home: &Path,
    node_dir: &Path,
    bindings: &BTreeMap<String, String>,
) -> Result<(), String> {
    match cmd {
        Command::CopyToNode { src, dst } => {
            let src_t = substitute(src, bindings).map_err(|e| e.to_string())?;
            let dst_t = substitute(dst, bindings).map_err(|e| e.to_string())?;
            copy_into(&resolve(home, &src_t), &node_dir.join(staged_name(&src_t, &dst_t)))
        }
        Command::CopyFromNode { src, dst } => {
            let src_t = substitute(src, bindings).map_err(|e| e.to_string())?;
            let dst_t = substitute(dst, bindings).map_err(|e| e.to_string())?;
            copy_into(&node_dir.join(&src_t), &resolve(home, &dst_t))
        }
        Command::Substitute { input, output } => {
            let input_t = substitute(input, bindings).map_err(|e| e.to_string())?;
            let output_t = substitute(output, bindings).map_err(|e| e.to_string())?;
            let text = std::fs::read_to_string(node_dir.join(&input_t))
                .map_err(|e| format!("read {}: {}", input_t, e))?;
            let substituted = substitute(&text, bindings)
                .map_err(|e| format!("substitute {}: {}", input_t, e))?;
            std::fs::write(node_dir.join(&output_t), substituted)
                .map_err(|e| format!("write {}: {}", output_t, e))
        }
        Command::Execute { argv } => {
            let line = substitute(argv, bindings).map_err(|e| e.to_string())?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (program, args) =
                parts.split_first().ok_or_else(|| "empty command line".to_string())?;
            let output = std::process::Command::new(program)
                .args(args)
                .current_dir(node_dir)
                .output()
                .map_err(|e| format!("spawn `{}`: {}", line, e))?;
            if output.status.success() {
                Ok(())
            } else {
                Err(format!(
                    "`{}` exited with {}: {}",
                    line,
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                ))
            }
        }
    }
}

fn run_local_job(
    home: &Path,
    stage: &Path,
    job_dir: &Path,
    commands: &[Command],
    bindings: &BTreeMap<String, String>,
) -> Result<Vec<String>, String> {
    std::fs::create_dir_all(job_dir).map_err(|e| format!("mkdir {:?}: {}", job_dir, e))?;
    for entry in std::fs::read_dir(stage).map_err(|e| format!("read stage: {}", e))? {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.file_type().map_err(|e| e.to_string())?.is_file() {
            let dst = job_dir.join(entry.file_name());
            if std::fs::hard_link(entry.path(), &dst).is_err() {
                copy_into(&entry.path(), &dst)?;
            }
        }
    }
    let mut outputs = Vec::new();
    for cmd in commands {
        run_command(cmd, home, job_dir, bindings)?;
        if let Command::CopyFromNode { dst, .. } = cmd {
            outputs.push(substitute(dst, bindings).map_err(|e| e.to_string())?);
        }
    }
    Ok(outputs)
}

/// Run a whole experiment on this machine, in wall-clock time.
pub fn run_local_experiment(
    plan: &PlanFile,
    run: &RunFile,
    testbed: &[SimResource],
    config: &ExperimentConfig,
    params: &LocalParams,
) -> Result<ExperimentOutcome, FabricError> {
    let descs: Vec<ResourceDesc> = testbed.iter().map(|r| r.descriptor.clone()).collect();
    let mut state = ScheduleState::new(run.jobs.len(), descs.len());
    let mut trace = Trace::default();
    let mut records = Vec::new();
    let log = Arc::new(Mutex::new(Vec::<String>::new()));
    let cancel = Arc::new(AtomicBool::new(false));
    let start = Arc::new(Instant::now());
    let (done_tx, done_rx) = mpsc::channel::<DoneMsg>();

    let home = params.home_dir.clone();
    let os_name = std::env::consts::OS.to_string();
    let main_commands: Arc<Vec<Command>> = Arc::new(
        plan.task(TaskKind::Main).map(|t| t.commands.clone()).unwrap_or_default(),
    );

    let pseudo: BTreeMap<String, String> = [
        ("HOME".to_string(), home.to_string_lossy().into_owned()),
        ("OS".to_string(), os_name.clone()),
    ]
    .into_iter()
    .collect();

    // Deploy agents: nodestart once per node, before anything runs there.
    let mut nodes: Vec<NodeRuntime> = Vec::new();
    for (i, desc) in descs.iter().enumerate() {
        let node_dir = params.work_dir.join(format!("node_{}", desc.name));
        let stage = node_dir.join("stage");
        match deploy_agent_local(plan, &home, &stage, &pseudo) {
            Ok(staged) => {
                log.lock().unwrap().push(format!(
                    "t=0 deploy res={} staged={}",
                    desc.name, staged
                ));
            }
            Err(reason) => {
                log.lock().unwrap().push(format!(
                    "t=0 deploy-failed res={} ({})",
                    desc.name, reason
                ));
                state.mark_unusable(i);
                nodes.push(NodeRuntime { sender: None, workers: Vec::new() });
                continue;
            }
        }

        let (tx, rx) = mpsc::channel::<WorkItem>();
        let rx = Arc::new(Mutex::new(rx));
        let mut workers = Vec::new();
        for _ in 0..desc.cpus {
            let rx = Arc::clone(&rx);
            let done_tx = done_tx.clone();
            let cancel = Arc::clone(&cancel);
            let start = Arc::clone(&start);
            let log = Arc::clone(&log);
            let home = home.clone();
            let stage = stage.clone();
            let jobs_root = node_dir.join("jobs");
            let commands = Arc::clone(&main_commands);
            let resource_name = desc.name.clone();
            workers.push(std::thread::spawn(move || loop {
                let item = match rx.lock().unwrap().recv() {
                    Ok(item) => item,
                    Err(_) => return,
                };
                if cancel.load(Ordering::SeqCst) {
                    let t = now_secs(&start);
                    let _ = done_tx.send(DoneMsg {
                        completion: Completion {
                            job: item.job,
                            resource: item.resource,
                            cpu_seconds: 0.0,
                            end: t,
                            outcome: JobOutcome::Failed,
                        },
                        record: None,
                        cancelled: true,
                    });
                    continue;
                }
                let began = now_secs(&start);
                log.lock().unwrap().push(format!(
                    "t={:.2} start job={} res={}",
                    began, item.jobname, resource_name
                ));
                let job_dir = jobs_root.join(&item.jobname);
                let result =
                    run_local_job(&home, &stage, &job_dir, &commands, &item.bindings);
                let ended = now_secs(&start);
                let (outcome, outputs) = match result {
                    Ok(outputs) => (JobOutcome::Ok, outputs),
                    Err(reason) => {
                        log.lock().unwrap().push(format!(
                            "t={:.2} fail job={} res={} ({})",
                            ended, item.jobname, resource_name, reason
                        ));
                        (JobOutcome::Failed, Vec::new())
                    }
                };
                if outcome == JobOutcome::Ok {
                    log.lock().unwrap().push(format!(
                        "t={:.2} complete job={} res={}",
                        ended, item.jobname, resource_name
                    ));
                }
                let _ = done_tx.send(DoneMsg {
                    completion: Completion {
                        job: item.job,
                        resource: item.resource,
                        cpu_seconds: ended - began,
                        end: ended,
                        outcome,
                    },
                    record: Some(ExecutionRecord {
                        job: item.jobname.clone(),
                        resource: resource_name.clone(),
                        start: began,
                        end: ended,
                        cpu_seconds: ended - began,
                        ok: outcome == JobOutcome::Ok,
                        outputs,
                    }),
                    cancelled: false,
                });
            }));
        }
        nodes.push(NodeRuntime { sender: Some(tx), workers });
    }
    drop(done_tx);

    let active_counts = |state: &ScheduleState| -> Vec<u32> {
        state.per_resource.iter().map(|l| l.running).collect()
    };
    trace.snapshot(0.0, &state, &descs, &active_counts(&state));

    loop {
        while let Ok(msg) = done_rx.try_recv() {
            fold_done(&mut state, &descs, config, msg, &mut records)?;
        }
        state.clock = now_secs(&start);
        state.status = check_constraints(&state, &descs, config);
        if state.status.is_terminal() {
            break;
        }
        for a in allocate(&state, &descs, config) {
            let job = &run.jobs[a.job];
            let mut bindings = job.binding_map();
            bindings.insert("jobname".into(), job.jobname.clone());
            bindings.extend(pseudo.clone());
            if let Some(sender) = nodes[a.resource].sender.as_ref() {
                state.dispatch(a.job, a.resource);
                let _ = sender.send(WorkItem {
                    job: a.job,
                    jobname: job.jobname.clone(),
                    bindings,
                    resource: a.resource,
                });
            }
        }
        trace.snapshot(state.clock, &state, &descs, &active_counts(&state));
        std::thread::sleep(params.poll_interval);
    }

    // Wind down: no new work starts; whatever is mid-flight finishes and is
    // charged for the wall time it consumed.
    cancel.store(true, Ordering::SeqCst);
    for node in &mut nodes {
        node.sender.take();
    }
    let drain_deadline = Instant::now() + Duration::from_secs(120);
    while !state.running.is_empty() && Instant::now() < drain_deadline {
        match done_rx.recv_timeout(Duration::from_millis(200)) {
            Ok(msg) => fold_done(&mut state, &descs, config, msg, &mut records)?,
            Err(mpsc::RecvTimeoutError::Timeout) => continue,
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    state.clock = now_secs(&start);
    trace.snapshot(state.clock, &state, &descs, &active_counts(&state));
    for node in &mut nodes {
        for w in node.workers.drain(..) {
            let _ = w.join();
        }
    }

    let report = report(&state, &descs).map_err(|e| FabricError::Other(e.to_string()))?;
    let event_log = {
        let mut lines = log.lock().unwrap().clone();
        lines.push(String::new());
        lines.join("\n")
    };
    Ok(ExperimentOutcome {
        report,
        trace_csv: trace.to_csv(),
        event_log,
        records,
        state,
    })
}

fn fold_done(
    state: &mut ScheduleState,
    descs: &[ResourceDesc],
    config: &ExperimentConfig,
    msg: DoneMsg,
    records: &mut Vec<ExecutionRecord>,
) -> Result<(), FabricError> {
    if msg.cancelled {
        state.charge_partial(
            msg.completion.job,
            msg.completion.resource,
            0.0,
            descs[msg.completion.resource].price,
        );
        return Ok(());
    }
    if let Some(record) = msg.record {
        records.push(record);
    }
    account(state, descs, config, &msg.completion)
        .map_err(|e| FabricError::Other(e.to_string()))?;
    Ok(())
}

/// Expected result files for a run, useful when checking a finished local
/// experiment from the outside.
pub fn expected_outputs(plan: &PlanFile, run: &RunFile, home: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for job in &run.jobs {
        let mut bindings = job.binding_map();
        bindings.insert("jobname".into(), job.jobname.clone());
        bindings.insert("HOME".into(), home.to_string_lossy().into_owned());
        bindings.insert("OS".into(), std::env::consts::OS.to_string());
        if let Ok(outputs) = main_task_outputs(plan, &bindings) {
            for o in outputs {
                out.push(resolve(home, &o));
            }
        }
    }
    out
}

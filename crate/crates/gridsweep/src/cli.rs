//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 experiment
//! ended deadline-missed or budget-exhausted. Machine output goes to
//! stdout, diagnostics to stderr.

use crate::broker::{ExperimentConfig, ExperimentStatus, Strategy};
use crate::cdb::{
    build_index, fetch, stat, write_index, CdbServer, ClientConfig, ServeConfig,
};
use crate::fabric::{
    parse_testbed, run_local_experiment, run_sim_experiment, ExperimentOutcome, LocalParams,
    SimParams,
};
use crate::plan::{parse_plan, validate_plan, PlanFile, Value};
use crate::rungen::{generate_jobs, write_run_file, DEFAULT_JOB_CAP};
use anyhow::Context;
use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Parser)]
#[command(name = "gridsweep", version, about = "Parameter-sweep experiments over priced resources, with an indexed molecule-record service")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the byte-offset index table for a molecule database
    Index {
        /// Database file (multi-record MOL2)
        db: PathBuf,
        /// Index file to write
        index: PathBuf,
    },
    /// Serve databases; the catalog lists `name db-path index-path` per line
    Serve {
        catalog: PathBuf,
        /// host:port to listen on
        #[arg(long)]
        bind: String,
        /// Artificial per-response delay in milliseconds
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
    /// Fetch molecule record n and save it as <n>.mol2
    Fetch {
        /// Server endpoint host:port
        endpoint: String,
        database: String,
        n: u64,
        /// Connect timeout in seconds
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
    },
    /// Ask a server how many records a database has
    Stat {
        endpoint: String,
        database: String,
    },
    /// Parse and validate a plan file
    Check { plan: PathBuf },
    /// Expand a plan into a run file of concrete jobs
    Generate {
        plan: PathBuf,
        /// Restrict a parameter: name=lo..hi or name=v1,v2,...
        #[arg(long = "select", value_name = "NAME=SPEC")]
        select: Vec<String>,
        /// Run file to write
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate jobs and run them under a deadline and budget
    Run {
        plan: PathBuf,
        testbed: PathBuf,
        /// Deadline in seconds
        #[arg(long)]
        deadline: f64,
        /// Budget in G$
        #[arg(long)]
        budget: f64,
        /// `time` or `cost`
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `sim` (virtual time) or `local` (real processes)
        #[arg(long, default_value = "sim")]
        mode: String,
        /// Write the per-tick trace CSV here
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report here (CSV twin lands at <path>.csv)
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long = "select", value_name = "NAME=SPEC")]
        select: Vec<String>,
        /// Local mode: experiment home directory (default: current dir)
        #[arg(long)]
        home: Option<PathBuf>,
        /// Local mode: scratch directory for node state
        #[arg(long)]
        work: Option<PathBuf>,
    },
}

pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            2
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<i32> {
    match cmd {
        Cmd::Index { db, index } => cmd_index(&db, &index),
        Cmd::Serve { catalog, bind, delay_ms } => cmd_serve(&catalog, &bind, delay_ms),
        Cmd::Fetch { endpoint, database, n, timeout } => cmd_fetch(&endpoint, &database, n, timeout),
        Cmd::Stat { endpoint, database } => cmd_stat(&endpoint, &database),
        Cmd::Check { plan } => cmd_check(&plan),
        Cmd::Generate { plan, select, output } => cmd_generate(&plan, &select, &output),
        Cmd::Run {
            plan,
            testbed,
            deadline,
            budget,
            strategy,
            seed,
            mode,
            trace,
            report,
            select,
            home,
            work,
        } => cmd_run(RunArgs {
            plan,
            testbed,
            deadline,
            budget,
            strategy,
            seed,
            mode,
            trace,
            report,
            select,
            home,
            work,
        }),
    }
}

fn cmd_index(db: &Path, index_path: &Path) -> anyhow::Result<i32> {
    let bytes = std::fs::read(db).with_context(|| format!("reading {}", db.display()))?;
    let index = build_index(&bytes)?;
    let text = write_index(&index)?;
    std::fs::write(index_path, text).with_context(|| format!("writing {}", index_path.display()))?;
    println!("records {}", index.record_count());
    Ok(0)
}

fn cmd_serve(catalog: &Path, bind: &str, delay_ms: u64) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(catalog)
        .with_context(|| format!("reading {}", catalog.display()))?;
    let mut databases = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        anyhow::ensure!(
            fields.len() == 3,
            "{}:{}: expected `name db-path index-path`",
            catalog.display(),
            idx + 1
        );
        databases
            .insert(fields[0].to_string(), (PathBuf::from(fields[1]), PathBuf::from(fields[2])));
    }
    let config = ServeConfig { databases, response_delay: Duration::from_millis(delay_ms) };
    let server = CdbServer::start(bind, config)?;
    println!("serving on {}", server.addr());
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn cmd_fetch(endpoint: &str, database: &str, n: u64, timeout: f64) -> anyhow::Result<i32> {
    let config = ClientConfig {
        connect_timeout: Duration::from_secs_f64(timeout),
        ..ClientConfig::default()
    };
    let bytes = fetch(endpoint, database, n, &config)?;
    let file = format!("{}.mol2", n);
    std::fs::write(&file, bytes).with_context(|| format!("writing {}", file))?;
    println!("{}", file);
    Ok(0)
}

fn cmd_stat(endpoint: &str, database: &str) -> anyhow::Result<i32> {
    let count = stat(endpoint, database, &ClientConfig::default())?;
    println!("{}", count);
    Ok(0)
}

fn cmd_check(plan_path: &Path) -> anyhow::Result<i32> {
    match load_valid_plan(plan_path)? {
        Ok((plan, _)) => {
            println!("plan ok: {} parameters, {} tasks", plan.parameters.len(), plan.tasks.len());
            Ok(0)
        }
        Err(code) => Ok(code),
    }
}

/// `name=lo..hi` or `name=v1,v2,...`
fn parse_selects(specs: &[String]) -> Result<BTreeMap<String, Vec<Value>>, String> {
    let mut selections = BTreeMap::new();
    for spec in specs {
        let (name, rest) = spec
            .split_once('=')
            .ok_or_else(|| format!("--select `{}` is not name=spec", spec))?;
        let values = if let Some((a, b)) = rest.split_once("..") {
            let lo: i64 =
                a.trim().parse().map_err(|_| format!("bad range start in `{}`", spec))?;
            let hi: i64 = b.trim().parse().map_err(|_| format!("bad range end in `{}`", spec))?;
            if lo > hi {
                return Err(format!("empty range in `{}`", spec));
            }
            (lo..=hi).map(Value::Int).collect()
        } else {
            rest.split(',')
                .map(|v| {
                    let v = v.trim();
                    v.parse::<i64>().map(Value::Int).unwrap_or_else(|_| Value::Text(v.to_string()))
                })
                .collect()
        };
        selections.insert(name.trim().to_string(), values);
    }
    Ok(selections)
}

/// Parse and validate, printing diagnostics to stderr; `Err(2)` means the
/// plan was rejected.
fn load_valid_plan(plan_path: &Path) -> anyhow::Result<Result<(PlanFile, String), i32>> {
    let source = std::fs::read_to_string(plan_path)
        .with_context(|| format!("reading {}", plan_path.display()))?;
    let file = plan_path.display().to_string();
    match parse_plan(&source) {
        Ok(plan) => {
            let diags = validate_plan(&plan);
            if diags.is_empty() {
                Ok(Ok((plan, source)))
            } else {
                for d in diags {
                    eprintln!("{}", d.render(&file));
                }
                Ok(Err(2))
            }
        }
        Err(diags) => {
            for d in diags {
                eprintln!("{}", d.render(&file));
            }
            Ok(Err(2))
        }
    }
}

fn cmd_generate(plan_path: &Path, select: &[String], output: &Path) -> anyhow::Result<i32> {
    let selections = match parse_selects(select) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {}", msg);
            return Ok(1);
        }
    };
    let (plan, source) = match load_valid_plan(plan_path)? {
        Ok(ok) => ok,
        Err(code) => return Ok(code),
    };
    let run = generate_jobs(&plan, &source, &selections, DEFAULT_JOB_CAP)?;
    std::fs::write(output, write_run_file(&run))
        .with_context(|| format!("writing {}", output.display()))?;
    println!("jobs {}", run.jobs.len());
    Ok(0)
}

struct RunArgs {
    plan: PathBuf,
    testbed: PathBuf,
    deadline: f64,
    budget: f64,
    strategy: String,
    seed: u64,
    mode: String,
    trace: Option<PathBuf>,
    report: Option<PathBuf>,
    select: Vec<String>,
    home: Option<PathBuf>,
    work: Option<PathBuf>,
}

fn cmd_run(args: RunArgs) -> anyhow::Result<i32> {
    let strategy = match Strategy::parse(&args.strategy) {
        Some(s) => s,
        None => {
            eprintln!("error: --strategy must be `time` or `cost`");
            return Ok(1);
        }
    };
    if args.mode != "sim" && args.mode != "local" {
        eprintln!("error: --mode must be `sim` or `local`");
        return Ok(1);
    }
    if !(args.deadline > 0.0) || !(args.budget > 0.0) {
        eprintln!("error: deadline and budget must be positive");
        return Ok(1);
    }
    let selections = match parse_selects(&args.select) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {}", msg);
            return Ok(1);
        }
    };

    let (plan, source) = match load_valid_plan(&args.plan)? {
        Ok(ok) => ok,
        Err(code) => return Ok(code),
    };
    let testbed_text = std::fs::read_to_string(&args.testbed)
        .with_context(|| format!("reading {}", args.testbed.display()))?;
    let testbed = parse_testbed(&testbed_text)?;
    let run = generate_jobs(&plan, &source, &selections, DEFAULT_JOB_CAP)?;
    let config = ExperimentConfig::new(args.deadline, args.budget, strategy);

    let outcome: ExperimentOutcome = if args.mode == "sim" {
        let params = SimParams { global_seed: args.seed, fetch_latency: 0.0 };
        run_sim_experiment(&plan, &run, &testbed, &config, &params)?
    } else {
        let home = match args.home {
            Some(h) => h,
            None => std::env::current_dir()?,
        };
        let work = match args.work {
            Some(w) => w,
            None => home.join("gridsweep_work"),
        };
        let params = LocalParams::new(home, work);
        run_local_experiment(&plan, &run, &testbed, &config, &params)?
    };

    if let Some(path) = &args.trace {
        std::fs::write(path, &outcome.trace_csv)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.report {
        std::fs::write(path, outcome.report.render_text())
            .with_context(|| format!("writing {}", path.display()))?;
        let mut csv_path = path.as_os_str().to_owned();
        csv_path.push(".csv");
        std::fs::write(PathBuf::from(csv_path), outcome.report.render_csv())?;
    }
    print!("{}", outcome.report.render_text());
    Ok(if outcome.report.status == ExperimentStatus::Completed { 0 } else { 3 })
}

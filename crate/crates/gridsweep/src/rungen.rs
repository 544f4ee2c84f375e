//! Run-file generation: expand a plan plus value selections into the
//! concrete job list, one job per point of the parameter cross product.
//!
//! The run file is line-oriented UTF-8: a header
//! `RUNFILE 1 <job-count> <plan-digest-hex>` followed by one line per job,
//! `<jobname> TAB <name>=<value> TAB ...`, with TAB, newline, CR and `%`
//! percent-encoded inside values. The digest is the SHA-256 of the plan
//! source the run file was generated from, so a stale run file is
//! detectable when paired with its plan.

use crate::plan::{enumerate_values, EnumerateError, PlanFile, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Default ceiling on the size of a generated job list.
pub const DEFAULT_JOB_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub jobname: String,
    /// One rendered value per declared parameter, in declaration order.
    pub bindings: Vec<(String, String)>,
}

impl JobSpec {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.bindings.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    /// Bindings as a map, ready for placemaker substitution.
    pub fn binding_map(&self) -> BTreeMap<String, String> {
        self.bindings.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunFile {
    pub plan_digest: String,
    pub jobs: Vec<JobSpec>,
}

impl RunFile {
    pub fn digest_matches(&self, plan_source: &str) -> bool {
        self.plan_digest == plan_digest(plan_source)
    }
}

/// SHA-256 of the plan source text, lowercase hex.
pub fn plan_digest(plan_source: &str) -> String {
    hex::encode(Sha256::digest(plan_source.as_bytes()))
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GenerateError {
    #[error(transparent)]
    Enumerate(#[from] EnumerateError),
    #[error("selection names unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` has no values to sweep")]
    NoValues(String),
    #[error("job count {count} exceeds the cap of {cap}")]
    TooManyJobs { count: u64, cap: u64 },
}

/// Expand the cross product of the selected parameter values into jobs.
///
/// Enumeration is row-major with the last-declared parameter varying
/// fastest; job names are `j` plus the 1-based index zero-padded to the
/// width of the job count, so a fixed input always yields a byte-identical
/// run file.
pub fn generate_jobs(
    plan: &PlanFile,
    plan_source: &str,
    selections: &BTreeMap<String, Vec<Value>>,
    cap: u64,
) -> Result<RunFile, GenerateError> {
    for name in selections.keys() {
        if plan.parameter(name).is_none() {
            return Err(GenerateError::UnknownParameter(name.clone()));
        }
    }

    let mut axes: Vec<(String, Vec<String>)> = Vec::with_capacity(plan.parameters.len());
    for decl in &plan.parameters {
        let values = enumerate_values(decl, selections.get(&decl.name).map(|v| v.as_slice()))?;
        if values.is_empty() {
            return Err(GenerateError::NoValues(decl.name.clone()));
        }
        axes.push((decl.name.clone(), values.iter().map(Value::render).collect()));
    }

    let mut total: u64 = 1;
    for (_, vals) in &axes {
        total = total
            .checked_mul(vals.len() as u64)
            .ok_or(GenerateError::TooManyJobs { count: u64::MAX, cap })?;
    }
    if total > cap {
        return Err(GenerateError::TooManyJobs { count: total, cap });
    }

    let width = total.to_string().len();
    let mut jobs = Vec::with_capacity(total as usize);
    for i in 0..total {
        // Row-major: walk axes from the last, peeling off indices.
        let mut rem = i;
        let mut rev = Vec::with_capacity(axes.len());
        for (name, vals) in axes.iter().rev() {
            let k = (rem % vals.len() as u64) as usize;
            rem /= vals.len() as u64;
            rev.push((name.clone(), vals[k].clone()));
        }
        rev.reverse();
        jobs.push(JobSpec { jobname: format!("j{:0width$}", i + 1, width = width), bindings: rev });
    }

    Ok(RunFile { plan_digest: plan_digest(plan_source), jobs })
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RunFileError {
    #[error("line 1: bad run file header")]
    BadHeader,
    #[error("header says {header} jobs but file has {actual}")]
    CountMismatch { header: u64, actual: u64 },
    #[error("line {line}: malformed job line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate jobname `{name}`")]
    DuplicateJobname { line: usize, name: String },
}

fn encode_value(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '%' => out.push_str("%25"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn decode_value(v: &str, line: usize) -> Result<String, RunFileError> {
    let mut out = String::with_capacity(v.len());
    let bytes = v.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = v
                .get(i + 1..i + 3)
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| RunFileError::MalformedLine {
                    line,
                    reason: "bad percent escape".into(),
                })?;
            out.push(hex as char);
            i += 3;
        } else {
            let c = v[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    Ok(out)
}

pub fn write_run_file(run: &RunFile) -> String {
    let mut out = format!("RUNFILE 1 {} {}\n", run.jobs.len(), run.plan_digest);
    for job in &run.jobs {
        out.push_str(&job.jobname);
        for (name, value) in &job.bindings {
            out.push('\t');
            out.push_str(name);
            out.push('=');
            out.push_str(&encode_value(value));
        }
        out.push('\n');
    }
    out
}

/// Parse a run file. Hard format problems are errors; a digest field that
/// does not look like a SHA-256 hex string is reported as a warning and the
/// jobs are still returned.
pub fn read_run_file(text: &str) -> Result<(RunFile, Vec<String>), RunFileError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(RunFileError::BadHeader)?;
    let header = header.strip_suffix('\r').unwrap_or(header);
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "RUNFILE" || parts[1] != "1" {
        return Err(RunFileError::BadHeader);
    }
    let count: u64 = parts[2].parse().map_err(|_| RunFileError::BadHeader)?;
    let digest = parts[3].to_string();

    let mut warnings = Vec::new();
    if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
        warnings.push(format!("plan digest `{}` does not look like a SHA-256 hex digest", digest));
    }

    let mut jobs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let jobname = fields.next().unwrap_or("").to_string();
        if jobname.is_empty() {
            return Err(RunFileError::MalformedLine { line: line_no, reason: "empty jobname".into() });
        }
        if !seen.insert(jobname.clone()) {
            return Err(RunFileError::DuplicateJobname { line: line_no, name: jobname });
        }
        let mut bindings = Vec::new();
        for field in fields {
            let (name, value) = field.split_once('=').ok_or_else(|| {
                RunFileError::MalformedLine { line: line_no, reason: "binding without `=`".into() }
            })?;
            bindings.push((name.to_string(), decode_value(value, line_no)?));
        }
        jobs.push(JobSpec { jobname, bindings });
    }

    if jobs.len() as u64 != count {
        return Err(RunFileError::CountMismatch { header: count, actual: jobs.len() as u64 });
    }
    Ok((RunFile { plan_digest: digest, jobs }, warnings))
}

//! The declarative plan language.
//!
//! A plan file declares the experiment's parameters and its task scripts:
//!
//! ```text
//! parameter ligand_number integer range from 1 to 2000 step 1;
//! parameter receptor_site_file text default "ece.sph";
//!
//! task main
//!   node:substitute dock_base dock_run
//!   node:execute $HOME/bin/dock.$OS -i dock_run -o dock_out
//!   copy node:dock_out ./results/dock_out.$jobname
//! endtask
//! ```
//!
//! Parameter statements are whitespace-insensitive and `;`-terminated; task
//! bodies are line-oriented with one command per line. `#` starts a comment
//! running to end of line (outside double-quoted strings). Strings are
//! double-quoted with no escape sequences.

mod lexer;
mod parser;
mod subst;

pub use parser::parse_plan;
pub use subst::{scan_placemakers, substitute, SubstError};

use std::collections::BTreeSet;
use std::fmt;

/// Names injected by the execution layer rather than declared in plans.
pub const PSEUDO_PARAMETERS: [&str; 3] = ["HOME", "OS", "jobname"];

/// A parse or validation problem, anchored to a 1-based source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Diagnostic { line, message: message.into() }
    }

    /// Render as `<file>:<line>: <message>`.
    pub fn render(&self, file: &str) -> String {
        format!("{}:{}: {}", file, self.line, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// A concrete parameter value. Floats keep their source text so that
/// rendering never drifts from what the plan said.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float { text: String },
    Text(String),
}

impl Value {
    pub fn float(text: impl Into<String>) -> Self {
        Value::Float { text: text.into() }
    }

    /// The textual form used in substitution and run files.
    pub fn render(&self) -> String {
        match self {
            Value::Int(n) => n.to_string(),
            Value::Float { text } => text.clone(),
            Value::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// The value domain of one declared parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterDomain {
    TextSelectOneOf { values: Vec<String>, default: Option<String> },
    TextDefault(String),
    IntegerDefault(i64),
    IntegerRange { from: i64, to: i64, step: i64 },
    FloatDefault { text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDecl {
    pub name: String,
    pub label: Option<String>,
    pub domain: ParameterDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Nodestart,
    Main,
}

impl TaskKind {
    pub fn keyword(self) -> &'static str {
        match self {
            TaskKind::Nodestart => "nodestart",
            TaskKind::Main => "main",
        }
    }
}

/// One task-script command. Copy direction is encoded in the variant; the
/// `node:` side is implicit (destination for `CopyToNode`, source for
/// `CopyFromNode`).
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    CopyToNode { src: String, dst: String },
    CopyFromNode { src: String, dst: String },
    Substitute { input: String, output: String },
    Execute { argv: String },
}

impl Command {
    /// All placemaker-bearing template strings in this command.
    pub fn templates(&self) -> Vec<&str> {
        match self {
            Command::CopyToNode { src, dst } | Command::CopyFromNode { src, dst } => {
                vec![src, dst]
            }
            Command::Substitute { input, output } => vec![input, output],
            Command::Execute { argv } => vec![argv],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskScript {
    pub kind: TaskKind,
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanFile {
    pub parameters: Vec<ParameterDecl>,
    pub tasks: Vec<TaskScript>,
}

impl PlanFile {
    pub fn parameter(&self, name: &str) -> Option<&ParameterDecl> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn task(&self, kind: TaskKind) -> Option<&TaskScript> {
        self.tasks.iter().find(|t| t.kind == kind)
    }

    /// Canonical textual form; parsing it back yields a structurally equal
    /// plan.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for p in &self.parameters {
            out.push_str("parameter ");
            out.push_str(&p.name);
            if let Some(label) = &p.label {
                out.push_str(" label \"");
                out.push_str(label);
                out.push('"');
            }
            match &p.domain {
                ParameterDomain::TextSelectOneOf { values, default } => {
                    out.push_str(" text select oneof");
                    for v in values {
                        out.push_str(" \"");
                        out.push_str(v);
                        out.push('"');
                    }
                    if let Some(d) = default {
                        out.push_str(" default \"");
                        out.push_str(d);
                        out.push('"');
                    }
                }
                ParameterDomain::TextDefault(v) => {
                    out.push_str(" text default \"");
                    out.push_str(v);
                    out.push('"');
                }
                ParameterDomain::IntegerDefault(n) => {
                    out.push_str(&format!(" integer default {}", n));
                }
                ParameterDomain::IntegerRange { from, to, step } => {
                    out.push_str(&format!(" integer range from {} to {} step {}", from, to, step));
                }
                ParameterDomain::FloatDefault { text } => {
                    out.push_str(" float default ");
                    out.push_str(text);
                }
            }
            out.push_str(";\n");
        }
        for t in &self.tasks {
            out.push_str("task ");
            out.push_str(t.kind.keyword());
            out.push('\n');
            for c in &t.commands {
                out.push_str("  ");
                match c {
                    Command::CopyToNode { src, dst } => {
                        out.push_str(&format!("copy {} node:{}", src, dst));
                    }
                    Command::CopyFromNode { src, dst } => {
                        out.push_str(&format!("copy node:{} {}", src, dst));
                    }
                    Command::Substitute { input, output } => {
                        out.push_str(&format!("node:substitute {} {}", input, output));
                    }
                    Command::Execute { argv } => {
                        out.push_str(&format!("node:execute {}", argv));
                    }
                }
                out.push('\n');
            }
            out.push_str("endtask\n");
        }
        out
    }
}

/// Errors from [`enumerate_values`].
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EnumerateError {
    #[error("selection value `{value}` is outside the domain of parameter `{name}`")]
    OutsideDomain { name: String, value: String },
    #[error("empty selection for parameter `{name}`")]
    EmptySelection { name: String },
}

/// Enumerate the values a parameter contributes to the sweep.
///
/// Without a selection, a range yields every point and a default-style
/// domain yields its single default (a `oneof` without a default yields the
/// whole list). A selection restricts ranges and `oneof` lists to member
/// values, and overrides default-style domains outright.
pub fn enumerate_values(
    decl: &ParameterDecl,
    selection: Option<&[Value]>,
) -> Result<Vec<Value>, EnumerateError> {
    let name = &decl.name;
    if let Some(sel) = selection {
        if sel.is_empty() {
            return Err(EnumerateError::EmptySelection { name: name.clone() });
        }
    }
    match &decl.domain {
        ParameterDomain::IntegerRange { from, to, step } => {
            let in_domain = |v: i64| v >= *from && v <= *to && (v - *from) % *step == 0;
            match selection {
                None => Ok(range_values(*from, *to, *step).map(Value::Int).collect()),
                Some(sel) => {
                    let mut wanted = BTreeSet::new();
                    for v in sel {
                        match v {
                            Value::Int(n) if in_domain(*n) => {
                                wanted.insert(*n);
                            }
                            other => {
                                return Err(EnumerateError::OutsideDomain {
                                    name: name.clone(),
                                    value: other.render(),
                                })
                            }
                        }
                    }
                    Ok(range_values(*from, *to, *step)
                        .filter(|v| wanted.contains(v))
                        .map(Value::Int)
                        .collect())
                }
            }
        }
        ParameterDomain::TextSelectOneOf { values, default } => match selection {
            None => match default {
                Some(d) => Ok(vec![Value::Text(d.clone())]),
                None => Ok(values.iter().cloned().map(Value::Text).collect()),
            },
            Some(sel) => {
                let mut wanted = BTreeSet::new();
                for v in sel {
                    let text = v.render();
                    if values.contains(&text) {
                        wanted.insert(text);
                    } else {
                        return Err(EnumerateError::OutsideDomain {
                            name: name.clone(),
                            value: text,
                        });
                    }
                }
                Ok(values
                    .iter()
                    .filter(|v| wanted.contains(*v))
                    .cloned()
                    .map(Value::Text)
                    .collect())
            }
        },
        ParameterDomain::TextDefault(d) => match selection {
            None => Ok(vec![Value::Text(d.clone())]),
            Some(sel) => Ok(dedup_in_order(sel.iter().map(|v| Value::Text(v.render())))),
        },
        ParameterDomain::IntegerDefault(d) => match selection {
            None => Ok(vec![Value::Int(*d)]),
            Some(sel) => {
                let mut out = Vec::new();
                for v in sel {
                    match v {
                        Value::Int(n) => out.push(Value::Int(*n)),
                        other => {
                            let text = other.render();
                            match text.parse::<i64>() {
                                Ok(n) => out.push(Value::Int(n)),
                                Err(_) => {
                                    return Err(EnumerateError::OutsideDomain {
                                        name: name.clone(),
                                        value: text,
                                    })
                                }
                            }
                        }
                    }
                }
                Ok(dedup_in_order(out.into_iter()))
            }
        },
        ParameterDomain::FloatDefault { text } => match selection {
            None => Ok(vec![Value::float(text.clone())]),
            Some(sel) => {
                let mut out = Vec::new();
                for v in sel {
                    let text = v.render();
                    if text.parse::<f64>().is_err() {
                        return Err(EnumerateError::OutsideDomain {
                            name: name.clone(),
                            value: text,
                        });
                    }
                    out.push(Value::float(text));
                }
                Ok(dedup_in_order(out.into_iter()))
            }
        },
    }
}

fn range_values(from: i64, to: i64, step: i64) -> impl Iterator<Item = i64> {
    (from..=to).step_by(step as usize)
}

fn dedup_in_order(values: impl Iterator<Item = Value>) -> Vec<Value> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for v in values {
        if seen.insert(v.render()) {
            out.push(v);
        }
    }
    out
}

/// Semantic checks over a parsed plan: every placemaker referenced by a
/// command must resolve to a declared parameter or a pseudo-parameter, no
/// pseudo-parameter may be declared, and the plan needs exactly one `main`
/// task and at most one `nodestart`.
pub fn validate_plan(plan: &PlanFile) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let declared: BTreeSet<&str> = plan.parameters.iter().map(|p| p.name.as_str()).collect();

    for p in &plan.parameters {
        if PSEUDO_PARAMETERS.contains(&p.name.as_str()) {
            diags.push(Diagnostic::new(
                0,
                format!("parameter `{}` shadows a reserved pseudo-parameter", p.name),
            ));
        }
    }

    let mut mains = 0usize;
    let mut nodestarts = 0usize;
    for task in &plan.tasks {
        match task.kind {
            TaskKind::Main => mains += 1,
            TaskKind::Nodestart => nodestarts += 1,
        }
        for cmd in &task.commands {
            for template in cmd.templates() {
                match scan_placemakers(template) {
                    Ok(names) => {
                        for n in names {
                            if !declared.contains(n.as_str())
                                && !PSEUDO_PARAMETERS.contains(&n.as_str())
                            {
                                diags.push(Diagnostic::new(
                                    0,
                                    format!("unresolved placemaker `${}` in {} task", n, task.kind.keyword()),
                                ));
                            }
                        }
                    }
                    Err(e) => diags.push(Diagnostic::new(
                        0,
                        format!("bad template `{}` in {} task: {}", template, task.kind.keyword(), e),
                    )),
                }
            }
        }
    }
    if mains == 0 {
        diags.push(Diagnostic::new(0, "missing main task"));
    } else if mains > 1 {
        diags.push(Diagnostic::new(0, "duplicate task main"));
    }
    if nodestarts > 1 {
        diags.push(Diagnostic::new(0, "duplicate task nodestart"));
    }
    diags
}

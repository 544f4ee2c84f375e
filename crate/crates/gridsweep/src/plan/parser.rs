//! Plan file parser. Total: returns either a plan or line-numbered
//! diagnostics, never panics on malformed input. On an error inside a
//! parameter statement it resynchronizes at the next `;`, so several
//! problems can be reported in one pass.

use super::lexer::{lex_line, strip_comment, Tok, Token};
use super::{Command, Diagnostic, ParameterDecl, ParameterDomain, PlanFile, TaskKind, TaskScript};
use std::collections::BTreeSet;

pub fn parse_plan(source: &str) -> Result<PlanFile, Vec<Diagnostic>> {
    let mut plan = PlanFile::default();
    let mut diags: Vec<Diagnostic> = Vec::new();
    let mut seen_names: BTreeSet<String> = BTreeSet::new();

    // Statement tokens accumulate across lines until a `;`.
    let mut pending: Vec<Token> = Vec::new();
    // Some(task) while inside a task .. endtask block.
    let mut open_task: Option<(usize, TaskScript)> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let text = strip_comment(raw.strip_suffix('\r').unwrap_or(raw));

        if let Some((_, task)) = open_task.as_mut() {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed == "endtask" {
                let (_, done) = open_task.take().unwrap();
                plan.tasks.push(done);
                continue;
            }
            match parse_command(trimmed, line_no) {
                Ok(cmd) => task.commands.push(cmd),
                Err(d) => diags.push(d),
            }
            continue;
        }

        let tokens = lex_line(text, line_no, &mut diags);
        // A `task` header is only recognized at a statement boundary.
        if pending.is_empty() {
            if let Some(Token { tok: Tok::Word(w), .. }) = tokens.first() {
                if w == "task" {
                    match parse_task_header(&tokens, line_no) {
                        Ok(kind) => {
                            open_task = Some((line_no, TaskScript { kind, commands: Vec::new() }))
                        }
                        Err(d) => diags.push(d),
                    }
                    continue;
                }
            }
        }
        pending.extend(tokens);
        while let Some(pos) = pending.iter().position(|t| t.tok == Tok::Semi) {
            let stmt: Vec<Token> = pending.drain(..=pos).collect();
            let stmt = &stmt[..stmt.len() - 1]; // drop the `;`
            if stmt.is_empty() {
                continue;
            }
            match parse_parameter_stmt(stmt) {
                Ok(decl) => {
                    if !seen_names.insert(decl.name.clone()) {
                        diags.push(Diagnostic::new(
                            stmt[0].line,
                            format!("duplicate parameter name `{}`", decl.name),
                        ));
                    } else {
                        plan.parameters.push(decl);
                    }
                }
                Err(d) => diags.push(d),
            }
        }
    }

    if let Some((line, task)) = open_task {
        diags.push(Diagnostic::new(
            line,
            format!("task {} without endtask", task.kind.keyword()),
        ));
    }
    if let Some(tok) = pending.first() {
        diags.push(Diagnostic::new(tok.line, "statement not terminated by `;`"));
    }

    if diags.is_empty() {
        Ok(plan)
    } else {
        Err(diags)
    }
}

fn parse_task_header(tokens: &[Token], line: usize) -> Result<TaskKind, Diagnostic> {
    let kind = match tokens.get(1) {
        Some(Token { tok: Tok::Word(w), .. }) if w == "nodestart" => TaskKind::Nodestart,
        Some(Token { tok: Tok::Word(w), .. }) if w == "main" => TaskKind::Main,
        Some(Token { tok, .. }) => {
            return Err(Diagnostic::new(line, format!("unknown task kind `{}`", tok_text(tok))))
        }
        None => return Err(Diagnostic::new(line, "task without a kind (nodestart or main)")),
    };
    if tokens.len() > 2 {
        return Err(Diagnostic::new(line, "trailing tokens after task header"));
    }
    Ok(kind)
}

fn parse_command(line_text: &str, line: usize) -> Result<Command, Diagnostic> {
    let mut parts = line_text.splitn(2, char::is_whitespace);
    let head = parts.next().unwrap_or("");
    let rest = parts.next().unwrap_or("").trim();
    match head {
        "copy" => {
            let args: Vec<&str> = rest.split_whitespace().collect();
            if args.len() != 2 {
                return Err(Diagnostic::new(line, "copy takes exactly two arguments"));
            }
            let (src, dst) = (args[0], args[1]);
            match (src.strip_prefix("node:"), dst.strip_prefix("node:")) {
                (None, Some(d)) => Ok(Command::CopyToNode { src: src.into(), dst: d.into() }),
                (Some(s), None) => Ok(Command::CopyFromNode { src: s.into(), dst: dst.into() }),
                (None, None) => {
                    Err(Diagnostic::new(line, "copy needs a node: prefix on exactly one side"))
                }
                (Some(_), Some(_)) => {
                    Err(Diagnostic::new(line, "copy cannot have node: on both sides"))
                }
            }
        }
        "node:substitute" | "substitute" => {
            let args: Vec<&str> = rest.split_whitespace().collect();
            if args.len() != 2 {
                return Err(Diagnostic::new(line, "substitute takes exactly two arguments"));
            }
            Ok(Command::Substitute { input: args[0].into(), output: args[1].into() })
        }
        "node:execute" | "execute" => {
            if rest.is_empty() {
                return Err(Diagnostic::new(line, "execute needs a command line"));
            }
            Ok(Command::Execute { argv: rest.into() })
        }
        other => Err(Diagnostic::new(line, format!("unknown command `{}`", other))),
    }
}

fn tok_text(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) => w.clone(),
        Tok::Str(s) => format!("\"{}\"", s),
        Tok::Semi => ";".to_string(),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Cursor over one statement's tokens.
struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(tokens: &'a [Token]) -> Self {
        let line = tokens.first().map(|t| t.line).unwrap_or(0);
        Cursor { tokens, pos: 0, line }
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.tokens.get(self.pos)?;
        self.pos += 1;
        self.line = t.line;
        Some(&t.tok)
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn err(&self, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::new(self.line, msg)
    }

    fn expect_word(&mut self, what: &str) -> Result<&'a str, Diagnostic> {
        match self.next() {
            Some(Tok::Word(w)) => Ok(w),
            Some(other) => Err(self.err(format!("expected {}, found `{}`", what, tok_text(other)))),
            None => Err(self.err(format!("expected {}", what))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), Diagnostic> {
        let w = self.expect_word(&format!("`{}`", kw))?;
        if w == kw {
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`, found `{}`", kw, w)))
        }
    }

    fn expect_string(&mut self, what: &str) -> Result<&'a str, Diagnostic> {
        match self.next() {
            Some(Tok::Str(s)) => Ok(s),
            Some(other) => Err(self.err(format!("expected {}, found `{}`", what, tok_text(other)))),
            None => Err(self.err(format!("expected {}", what))),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<i64, Diagnostic> {
        let w = self.expect_word(what)?;
        w.parse::<i64>().map_err(|_| self.err(format!("expected {}, found `{}`", what, w)))
    }

    fn expect_end(&self) -> Result<(), Diagnostic> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(Diagnostic::new(
                self.tokens[self.pos].line,
                format!("trailing tokens after declaration, starting at `{}`", tok_text(&self.tokens[self.pos].tok)),
            ))
        }
    }
}

fn parse_parameter_stmt(tokens: &[Token]) -> Result<ParameterDecl, Diagnostic> {
    let mut cur = Cursor::new(tokens);
    match cur.next() {
        Some(Tok::Word(w)) if w == "parameter" => {}
        Some(other) => return Err(cur.err(format!("unknown keyword `{}`", tok_text(other)))),
        None => return Err(cur.err("empty statement")),
    }
    let name = cur.expect_word("parameter name")?;
    if !is_identifier(name) {
        return Err(cur.err(format!("invalid parameter name `{}`", name)));
    }
    let label = match cur.peek() {
        Some(Tok::Word(w)) if w == "label" => {
            cur.next();
            Some(cur.expect_string("label string")?.to_string())
        }
        _ => None,
    };

    let domain = match cur.expect_word("parameter type (text, integer, or float)")? {
        "text" => match cur.expect_word("`select` or `default`")? {
            "select" => {
                cur.expect_keyword("oneof")?;
                let mut values = Vec::new();
                while let Some(Tok::Str(s)) = cur.peek() {
                    values.push(s.to_string());
                    cur.next();
                }
                if values.is_empty() {
                    return Err(cur.err("oneof needs at least one value"));
                }
                let default = match cur.peek() {
                    Some(Tok::Word(w)) if w == "default" => {
                        cur.next();
                        let d = cur.expect_string("default string")?.to_string();
                        if !values.contains(&d) {
                            return Err(
                                cur.err(format!("default \"{}\" is not among the oneof values", d))
                            );
                        }
                        Some(d)
                    }
                    _ => None,
                };
                ParameterDomain::TextSelectOneOf { values, default }
            }
            "default" => ParameterDomain::TextDefault(cur.expect_string("default string")?.into()),
            other => return Err(cur.err(format!("unknown keyword `{}` after `text`", other))),
        },
        "integer" => match cur.expect_word("`default` or `range`")? {
            "default" => ParameterDomain::IntegerDefault(cur.expect_int("integer default")?),
            "range" => {
                cur.expect_keyword("from")?;
                let from = cur.expect_int("range start")?;
                cur.expect_keyword("to")?;
                let to = cur.expect_int("range end")?;
                cur.expect_keyword("step")?;
                let step = cur.expect_int("range step")?;
                if from > to {
                    return Err(cur.err("range from exceeds to"));
                }
                if step < 1 {
                    return Err(cur.err("range step must be at least 1"));
                }
                ParameterDomain::IntegerRange { from, to, step }
            }
            other => return Err(cur.err(format!("unknown keyword `{}` after `integer`", other))),
        },
        "float" => {
            cur.expect_keyword("default")?;
            let text = cur.expect_word("float default")?;
            if !is_plain_decimal(text) {
                return Err(cur.err(format!("malformed float `{}`", text)));
            }
            ParameterDomain::FloatDefault { text: text.to_string() }
        }
        other => return Err(cur.err(format!("unknown parameter type `{}`", other))),
    };
    cur.expect_end()?;
    Ok(ParameterDecl { name: name.to_string(), label, domain })
}

/// Decimal with optional sign and fraction; no exponent form.
fn is_plain_decimal(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    let mut parts = s.splitn(2, '.');
    let int_part = parts.next().unwrap_or("");
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    match parts.next() {
        None => true,
        Some(frac) => !frac.is_empty() && frac.bytes().all(|b| b.is_ascii_digit()),
    }
}

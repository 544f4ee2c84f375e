//! Placemaker substitution: `$name` and `${name}` expand to bound values,
//! `$$` is a literal dollar, and everything else passes through untouched.
//! The unbraced form takes the longest identifier run (`$ab` reads `ab`).

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubstError {
    #[error("reference to unbound name `{0}`")]
    Unbound(String),
    #[error("dangling `$` at end of input")]
    DanglingDollar,
    #[error("unterminated `${{` placemaker")]
    UnterminatedBrace,
    #[error("invalid placemaker name `{0}` in braces")]
    BadBraceName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment<'a> {
    Literal(&'a str),
    Dollar,
    Ref(&'a str),
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn tokenize(template: &str) -> Result<Vec<Segment<'_>>, SubstError> {
    let mut segs = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find('$') {
        if pos > 0 {
            segs.push(Segment::Literal(&rest[..pos]));
        }
        let after = &rest[pos + 1..];
        let mut chars = after.chars();
        match chars.next() {
            None => return Err(SubstError::DanglingDollar),
            Some('$') => {
                segs.push(Segment::Dollar);
                rest = &after[1..];
            }
            Some('{') => {
                let body = &after[1..];
                let end = body.find('}').ok_or(SubstError::UnterminatedBrace)?;
                let name = &body[..end];
                if name.is_empty()
                    || !name.starts_with(is_ident_start)
                    || !name.chars().all(is_ident_char)
                {
                    return Err(SubstError::BadBraceName(name.to_string()));
                }
                segs.push(Segment::Ref(name));
                rest = &body[end + 1..];
            }
            Some(c) if is_ident_start(c) => {
                let len = after.chars().take_while(|&c| is_ident_char(c)).map(char::len_utf8).sum();
                segs.push(Segment::Ref(&after[..len]));
                rest = &after[len..];
            }
            Some(_) => {
                // `$` followed by a non-placemaker char is ordinary text.
                segs.push(Segment::Literal(&rest[pos..pos + 1]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        segs.push(Segment::Literal(rest));
    }
    Ok(segs)
}

/// Expand every placemaker in `template` using `bindings`.
pub fn substitute(template: &str, bindings: &BTreeMap<String, String>) -> Result<String, SubstError> {
    let mut out = String::with_capacity(template.len());
    for seg in tokenize(template)? {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Dollar => out.push('$'),
            Segment::Ref(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(SubstError::Unbound(name.to_string())),
            },
        }
    }
    Ok(out)
}

/// The placemaker names referenced by a template, in order of appearance.
pub fn scan_placemakers(template: &str) -> Result<Vec<String>, SubstError> {
    Ok(tokenize(template)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Ref(name) => Some(name.to_string()),
            _ => None,
        })
        .collect())
}

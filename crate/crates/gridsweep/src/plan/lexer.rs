//! Per-line tokenizer for plan files.
//!
//! Parameter statements are free-form token streams terminated by `;`, so
//! the parser accumulates tokens across lines; task bodies are line-oriented
//! and consume raw lines instead. Both views come from here.

use super::Diagnostic;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Bare word: keyword, identifier, number, or path-ish token.
    Word(String),
    /// Double-quoted string, quotes stripped. No escapes.
    Str(String),
    Semi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

/// Strip a `#` comment, honoring double-quoted strings.
pub fn strip_comment(text: &str) -> &str {
    let bytes = text.as_bytes();
    let mut in_str = false;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'"' => in_str = !in_str,
            b'#' if !in_str => return &text[..i],
            _ => {}
        }
    }
    text
}

/// Tokenize one comment-stripped line. Strings may not span lines.
pub fn lex_line(text: &str, line_no: usize, diagnostics: &mut Vec<Diagnostic>) -> Vec<Token> {
    let mut tokens = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if b == b';' {
            tokens.push(Token { tok: Tok::Semi, line: line_no });
            i += 1;
        } else if b == b'"' {
            match text[i + 1..].find('"') {
                Some(end) => {
                    tokens.push(Token {
                        tok: Tok::Str(text[i + 1..i + 1 + end].to_string()),
                        line: line_no,
                    });
                    i += end + 2;
                }
                None => {
                    diagnostics.push(Diagnostic::new(line_no, "unterminated string"));
                    i = bytes.len();
                }
            }
        } else {
            let start = i;
            while i < bytes.len()
                && !bytes[i].is_ascii_whitespace()
                && bytes[i] != b';'
                && bytes[i] != b'"'
            {
                i += 1;
            }
            tokens.push(Token { tok: Tok::Word(text[start..i].to_string()), line: line_no });
        }
    }
    tokens
}

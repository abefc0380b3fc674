use crate::ast::Span;
use crate::diag::Diagnostic;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// Capitalised identifier: a constructor.
    Upper(String),
    /// `'a`
    TyVar(String),
    Int(i64),
    Kw(&'static str),
    Sym(&'static str),
    /// `[@name args]`
    Attr(String, Vec<String>),
    Eof,
}

const KEYWORDS: &[&str] = &[
    "type",
    "function",
    "predicate",
    "let",
    "rec",
    "with",
    "in",
    "match",
    "end",
    "fun",
    "if",
    "then",
    "else",
    "requires",
    "ensures",
    "variant",
    "absurd",
    "ref",
    "true",
    "false",
    "not",
    "forall",
    "lemma",
    "int",
    "bool",
    "unit",
    "set",
];

// Longest first.
const SYMBOLS: &[&str] = &[
    ":=", "->", "<=", ">=", "<>", "==", "&&", "||", "(", ")", "{", "}", "|", ",", ":", ";", "=",
    "<", ">", "+", "-", "*", "!", ".", "_",
];

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn here(&self) -> (usize, u32, u32) {
        (self.pos, self.line, self.col)
    }

    fn span_from(&self, start: (usize, u32, u32)) -> Span {
        Span {
            start: start.0,
            end: self.pos,
            start_line: start.1,
            start_col: start.2,
            end_line: self.line,
            end_col: self.col,
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut cur = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        skip_trivia(&mut cur)?;
        let start = cur.here();
        let Some(c) = cur.peek() else {
            out.push(Token {
                tok: Tok::Eof,
                span: cur.span_from(start),
            });
            return Ok(out);
        };
        let tok = if c.is_ascii_digit() {
            let mut text = String::new();
            while let Some(d) = cur.peek().filter(char::is_ascii_digit) {
                text.push(d);
                cur.bump();
            }
            let n = text.parse::<i64>().map_err(|_| {
                Diagnostic::error(
                    format!("integer literal {text} out of range"),
                    cur.span_from(start),
                )
            })?;
            Tok::Int(n)
        } else if c == '\'' {
            cur.bump();
            let mut name = String::new();
            while let Some(d) = cur.peek().filter(|&d| is_ident_char(d) && d != '\'') {
                name.push(d);
                cur.bump();
            }
            if name.is_empty() {
                return Err(Diagnostic::error(
                    "expected type variable name",
                    cur.span_from(start),
                ));
            }
            Tok::TyVar(name)
        } else if c.is_ascii_alphabetic() || (c == '_' && cur.peek2().is_some_and(is_ident_char)) {
            let mut name = String::new();
            while let Some(d) = cur.peek().filter(|&d| is_ident_char(d)) {
                name.push(d);
                cur.bump();
            }
            if let Some(kw) = KEYWORDS.iter().find(|k| **k == name) {
                Tok::Kw(kw)
            } else if c.is_ascii_uppercase() {
                Tok::Upper(name)
            } else {
                Tok::Ident(name)
            }
        } else if c == '[' && cur.peek2() == Some('@') {
            cur.bump();
            cur.bump();
            let mut body = String::new();
            loop {
                match cur.bump() {
                    Some(']') => break,
                    Some(ch) => body.push(ch),
                    None => {
                        return Err(Diagnostic::error(
                            "unterminated attribute",
                            cur.span_from(start),
                        ))
                    }
                }
            }
            let mut words = body.split_whitespace().map(str::to_string);
            let name = words
                .next()
                .ok_or_else(|| Diagnostic::error("empty attribute", cur.span_from(start)))?;
            Tok::Attr(name, words.collect())
        } else {
            let rest = &src[cur.pos..];
            let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
                cur.bump();
                return Err(Diagnostic::error(
                    format!("unexpected character {c:?}"),
                    cur.span_from(start),
                ));
            };
            for _ in 0..sym.len() {
                cur.bump();
            }
            Tok::Sym(sym)
        };
        out.push(Token {
            tok,
            span: cur.span_from(start),
        });
    }
}

fn skip_trivia(cur: &mut Cursor<'_>) -> Result<(), Diagnostic> {
    loop {
        match cur.peek() {
            Some(c) if c.is_whitespace() => {
                cur.bump();
            }
            Some('(') if cur.peek2() == Some('*') => {
                let start = cur.here();
                cur.bump();
                cur.bump();
                let mut depth = 1;
                while depth > 0 {
                    match cur.bump() {
                        Some('(') if cur.peek() == Some('*') => {
                            cur.bump();
                            depth += 1;
                        }
                        Some('*') if cur.peek() == Some(')') => {
                            cur.bump();
                            depth -= 1;
                        }
                        Some(_) => {}
                        None => {
                            return Err(Diagnostic::error(
                                "unterminated comment",
                                cur.span_from(start),
                            ))
                        }
                    }
                }
            }
            _ => return Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn primes_and_comments() {
        assert_eq!(
            toks("(* c (* nested *) *) c' := 'a"),
            vec![
                Tok::Ident("c'".into()),
                Tok::Sym(":="),
                Tok::TyVar("a".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn attributes_and_constructors() {
        assert_eq!(
            toks("[@kont Kid] fun"),
            vec![
                Tok::Attr("kont".into(), vec!["Kid".into()]),
                Tok::Kw("fun"),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn unit_parens_are_two_symbols() {
        assert_eq!(toks("()"), vec![Tok::Sym("("), Tok::Sym(")"), Tok::Eof]);
    }
}

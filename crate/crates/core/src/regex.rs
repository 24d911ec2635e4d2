//! Regular expressions over edge labels.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! alt     := concat ('|' concat)*
//! concat  := postfix ('.' postfix)*
//! postfix := atom ('*' | '+' | '?')*
//! atom    := label | '(' alt ')'
//! ```

use std::fmt;

use thiserror::Error;

use crate::model::Label;

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Regex {
    Label(Label),
    Concat(Vec<Regex>),
    Alt(Vec<Regex>),
    Star(Box<Regex>),
    Plus(Box<Regex>),
    Optional(Box<Regex>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegexError {
    #[error("regex syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unexpected character {ch:?} at {pos}")]
    UnknownChar { pos: usize, ch: char },
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

impl Regex {
    pub fn label(name: &str) -> Regex {
        Regex::Label(Label::new(name))
    }

    /// Concatenation, collapsing a single factor to itself.
    pub fn concat(mut parts: Vec<Regex>) -> Regex {
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Regex::Concat(parts)
        }
    }

    pub fn alt(mut parts: Vec<Regex>) -> Regex {
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Regex::Alt(parts)
        }
    }

    pub fn star(r: Regex) -> Regex {
        Regex::Star(Box::new(r))
    }

    pub fn plus(r: Regex) -> Regex {
        Regex::Plus(Box::new(r))
    }

    pub fn optional(r: Regex) -> Regex {
        Regex::Optional(Box::new(r))
    }

    /// Labels in order of first occurrence.
    pub fn labels(&self) -> Vec<Label> {
        let mut out = Vec::new();
        self.collect_labels(&mut out);
        out
    }

    fn collect_labels(&self, out: &mut Vec<Label>) {
        match self {
            Regex::Label(l) => {
                if !out.contains(l) {
                    out.push(*l);
                }
            }
            Regex::Concat(xs) | Regex::Alt(xs) => xs.iter().for_each(|x| x.collect_labels(out)),
            Regex::Star(x) | Regex::Plus(x) | Regex::Optional(x) => x.collect_labels(out),
        }
    }

    /// Whether the empty word is in the language.
    pub fn nullable(&self) -> bool {
        match self {
            Regex::Label(_) => false,
            Regex::Concat(xs) => xs.iter().all(Regex::nullable),
            Regex::Alt(xs) => xs.iter().any(Regex::nullable),
            Regex::Star(_) | Regex::Optional(_) => true,
            Regex::Plus(x) => x.nullable(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Regex::Label(_) => 1,
            Regex::Concat(xs) | Regex::Alt(xs) => 1 + xs.iter().map(Regex::depth).max().unwrap_or(0),
            Regex::Star(x) | Regex::Plus(x) | Regex::Optional(x) => 1 + x.depth(),
        }
    }

    /// Replace every label atom by the result of `f`.
    pub fn substitute(&self, f: &mut impl FnMut(Label) -> Regex) -> Regex {
        match self {
            Regex::Label(l) => f(*l),
            Regex::Concat(xs) => Regex::Concat(xs.iter().map(|x| x.substitute(f)).collect()),
            Regex::Alt(xs) => Regex::Alt(xs.iter().map(|x| x.substitute(f)).collect()),
            Regex::Star(x) => Regex::star(x.substitute(f)),
            Regex::Plus(x) => Regex::plus(x.substitute(f)),
            Regex::Optional(x) => Regex::optional(x.substitute(f)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Regex::Alt(_) => 0,
            Regex::Concat(_) => 1,
            Regex::Star(_) | Regex::Plus(_) | Regex::Optional(_) => 2,
            Regex::Label(_) => 3,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, ctx: u8) -> fmt::Result {
        let wrap = self.precedence() < ctx;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Regex::Label(l) => write!(f, "{l}")?,
            Regex::Concat(xs) | Regex::Alt(xs) => {
                let (sep, child_ctx) = if let Regex::Alt(_) = self { ("|", 1) } else { (".", 2) };
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    x.write(f, child_ctx)?;
                }
            }
            Regex::Star(x) | Regex::Plus(x) | Regex::Optional(x) => {
                x.write(f, 3)?;
                f.write_str(match self {
                    Regex::Star(_) => "*",
                    Regex::Plus(_) => "+",
                    _ => "?",
                })?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Regex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0)
    }
}

pub fn parse_regex(text: &str) -> Result<Regex, RegexError> {
    let mut p = Parser { chars: text.char_indices().collect(), pos: 0, len: text.len() };
    let r = p.alt()?;
    p.skip_ws();
    match p.peek() {
        None => Ok(r),
        Some((at, ')')) => Err(RegexError::Syntax { pos: at, message: "unbalanced ')'".into() }),
        Some((at, c)) => Err(p.unexpected(at, c)),
    }
}

struct Parser {
    chars: Vec<(usize, char)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|(_, c)| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<(usize, char)> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.len, |(i, _)| *i)
    }

    fn unexpected(&self, pos: usize, ch: char) -> RegexError {
        if is_ident_char(ch) || "|.*+?()".contains(ch) {
            RegexError::Syntax { pos, message: format!("unexpected {ch:?}") }
        } else {
            RegexError::UnknownChar { pos, ch }
        }
    }

    fn alt(&mut self) -> Result<Regex, RegexError> {
        let mut parts = vec![self.concat()?];
        while let Some((_, '|')) = self.peek() {
            self.pos += 1;
            parts.push(self.concat()?);
        }
        Ok(Regex::alt(parts))
    }

    fn concat(&mut self) -> Result<Regex, RegexError> {
        let mut parts = vec![self.postfix()?];
        while let Some((_, '.')) = self.peek() {
            self.pos += 1;
            parts.push(self.postfix()?);
        }
        Ok(Regex::concat(parts))
    }

    fn postfix(&mut self) -> Result<Regex, RegexError> {
        let mut r = self.atom()?;
        loop {
            r = match self.peek() {
                Some((_, '*')) => Regex::star(r),
                Some((_, '+')) => Regex::plus(r),
                Some((_, '?')) => Regex::optional(r),
                _ => return Ok(r),
            };
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> Result<Regex, RegexError> {
        match self.peek() {
            None => Err(RegexError::Syntax { pos: self.offset(), message: "unexpected end of input".into() }),
            Some((_, '(')) => {
                self.pos += 1;
                let r = self.alt()?;
                match self.peek() {
                    Some((_, ')')) => {
                        self.pos += 1;
                        Ok(r)
                    }
                    Some((at, c)) => Err(self.unexpected(at, c)),
                    None => Err(RegexError::Syntax { pos: self.offset(), message: "missing ')'".into() }),
                }
            }
            Some((_, c)) if is_ident_start(c) => {
                let mut name = String::new();
                while let Some(&(_, c)) = self.chars.get(self.pos) {
                    if !is_ident_char(c) {
                        break;
                    }
                    name.push(c);
                    self.pos += 1;
                }
                Ok(Regex::Label(Label::new(&name)))
            }
            Some((at, c)) => Err(self.unexpected(at, c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Regex {
        Regex::label(s)
    }

    #[test]
    fn parses_table_shapes() {
        assert_eq!(
            parse_regex("(a.b.c)+").unwrap(),
            Regex::plus(Regex::Concat(vec![l("a"), l("b"), l("c")]))
        );
        assert_eq!(parse_regex("a").unwrap(), l("a"));
        assert_eq!(
            parse_regex("a.b*.c*").unwrap(),
            Regex::Concat(vec![l("a"), Regex::star(l("b")), Regex::star(l("c"))])
        );
        assert_eq!(
            parse_regex("a.b|c+").unwrap(),
            Regex::Alt(vec![Regex::Concat(vec![l("a"), l("b")]), Regex::plus(l("c"))])
        );
    }

    #[test]
    fn errors_carry_positions() {
        assert!(matches!(parse_regex("a.").unwrap_err(), RegexError::Syntax { pos: 2, .. }));
        assert!(matches!(parse_regex("(a").unwrap_err(), RegexError::Syntax { .. }));
        assert!(matches!(parse_regex("a)").unwrap_err(), RegexError::Syntax { pos: 1, .. }));
        assert_eq!(parse_regex("a.#").unwrap_err(), RegexError::UnknownChar { pos: 2, ch: '#' });
        assert!(parse_regex("").is_err());
    }

    #[test]
    fn render_round_trips() {
        for text in ["(a.b.c)+", "a.b*.c*", "a|b", "(a|b).c", "(a+)*", "a.(b.c)", "(a|b)|c", "a??", "$tmp0+"] {
            let r = parse_regex(text).unwrap();
            assert_eq!(parse_regex(&r.to_string()).unwrap(), r, "{text}");
        }
        assert_eq!(parse_regex(" ( a . b ) + ").unwrap().to_string(), "(a.b)+");
    }

    #[test]
    fn nullability() {
        assert!(!parse_regex("a+").unwrap().nullable());
        assert!(parse_regex("a*").unwrap().nullable());
        assert!(parse_regex("a?.b*").unwrap().nullable());
        assert!(!parse_regex("a?.b").unwrap().nullable());
    }
}

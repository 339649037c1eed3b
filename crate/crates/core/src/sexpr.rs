//! A small s-expression reader with source positions.
//!
//! `;` comments run to end of line. String literals and `|quoted|` symbols are
//! read as single atoms.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExpr {
    Atom(String, Pos),
    List(Vec<SExpr>, Pos),
}

impl SExpr {
    pub fn pos(&self) -> Pos {
        match self {
            SExpr::Atom(_, p) | SExpr::List(_, p) => *p,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom(a, _) => Some(a),
            SExpr::List(..) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(items, _) => Some(items),
            SExpr::Atom(..) => None,
        }
    }

    /// Head symbol of a non-empty list whose first item is an atom.
    pub fn head(&self) -> Option<&str> {
        self.as_list()?.first()?.as_atom()
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a, _) => f.write_str(a),
            SExpr::List(items, _) => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadError {
    pub pos: Pos,
    pub expected: String,
}

/// Cursor over source text that tracks line/column.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    src: &'a str,
    offset: usize,
    pos: Pos,
    line_comments: bool,
}

impl<'a> Reader<'a> {
    pub fn new(src: &'a str) -> Self {
        Reader {
            src,
            offset: 0,
            pos: Pos { line: 1, col: 1 },
            line_comments: true,
        }
    }

    /// A reader for languages where `;` is a terminator rather than a
    /// comment start.
    pub fn without_comments(src: &'a str) -> Self {
        Reader {
            line_comments: false,
            ..Reader::new(src)
        }
    }

    pub fn pos(&self) -> Pos {
        self.pos
    }

    pub fn rest(&self) -> &'a str {
        &self.src[self.offset..]
    }

    pub fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.offset += c.len_utf8();
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    pub fn advance(&mut self, n_bytes: usize) {
        let target = self.offset + n_bytes;
        while self.offset < target {
            self.bump();
        }
    }

    /// Skips whitespace and comments.
    pub fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' && self.line_comments {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    pub fn at_end(&mut self) -> bool {
        self.skip_trivia();
        self.peek().is_none()
    }

    pub fn err<T>(&self, expected: impl Into<String>) -> Result<T, ReadError> {
        Err(ReadError {
            pos: self.pos,
            expected: expected.into(),
        })
    }

    fn is_delim(c: char) -> bool {
        c.is_whitespace() || c == '(' || c == ')' || c == ';' || c == '{' || c == '}'
    }

    /// Reads one s-expression.
    pub fn read(&mut self) -> Result<SExpr, ReadError> {
        self.skip_trivia();
        let start = self.pos;
        match self.peek() {
            None => self.err("s-expression"),
            Some(')') => self.err("atom or `(`"),
            Some('(') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.peek() {
                        None => return self.err("`)`"),
                        Some(')') => {
                            self.bump();
                            return Ok(SExpr::List(items, start));
                        }
                        Some(_) => items.push(self.read()?),
                    }
                }
            }
            Some('"') => {
                let mut s = String::from('"');
                self.bump();
                loop {
                    match self.bump() {
                        None => return self.err("closing `\"`"),
                        Some('"') => {
                            s.push('"');
                            // "" is an escaped quote inside SMT-LIB strings
                            if self.peek() == Some('"') {
                                self.bump();
                                continue;
                            }
                            return Ok(SExpr::Atom(s, start));
                        }
                        Some(c) => s.push(c),
                    }
                }
            }
            Some('|') => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return self.err("closing `|`"),
                        Some('|') => return Ok(SExpr::Atom(s, start)),
                        Some(c) => s.push(c),
                    }
                }
            }
            Some(_) => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if Self::is_delim(c) {
                        break;
                    }
                    s.push(c);
                    self.bump();
                }
                Ok(SExpr::Atom(s, start))
            }
        }
    }
}

/// Reads every top-level expression in `src`.
pub fn read_all(src: &str) -> Result<Vec<SExpr>, ReadError> {
    let mut r = Reader::new(src);
    let mut out = Vec::new();
    while !r.at_end() {
        out.push(r.read()?);
    }
    Ok(out)
}

/// Reads exactly one expression, rejecting trailing input.
pub fn read_one(src: &str) -> Result<SExpr, ReadError> {
    let mut r = Reader::new(src);
    let e = r.read()?;
    if !r.at_end() {
        return r.err("end of input");
    }
    Ok(e)
}

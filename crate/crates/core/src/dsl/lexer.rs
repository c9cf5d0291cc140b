use super::ast::Span;
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    Number(f64),
    Eq,
    LParen,
    RParen,
    Comma,
    Plus,
    Star,
    Slash,
    Dot,
    /// Newline or `;` outside parentheses.
    Sep,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::Number(n) => format!("number {n}"),
            Tok::Eq => "`=`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Sep => "end of statement".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl Cursor<'_> {
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

    fn here(&self) -> Span {
        Span {
            start: self.pos,
            end: self.pos,
            line: self.line,
            col: self.col,
        }
    }
}

fn syntax(span: Span, message: impl Into<String>) -> DslError {
    DslError::Syntax {
        line: span.line,
        col: span.col,
        message: message.into(),
    }
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, DslError> {
    let mut c = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out: Vec<Token> = Vec::new();
    let mut depth = 0usize;
    while let Some(ch) = c.peek() {
        let start = c.here();
        let tok = match ch {
            ' ' | '\t' | '\r' => {
                c.bump();
                continue;
            }
            '#' => {
                while c.peek().is_some_and(|x| x != '\n') {
                    c.bump();
                }
                continue;
            }
            '\n' | ';' => {
                c.bump();
                if depth > 0 {
                    if ch == ';' {
                        return Err(syntax(start, "`;` inside parentheses"));
                    }
                    continue;
                }
                Tok::Sep
            }
            '(' => {
                c.bump();
                depth += 1;
                Tok::LParen
            }
            ')' => {
                c.bump();
                depth = depth.saturating_sub(1);
                Tok::RParen
            }
            '=' => {
                c.bump();
                if c.peek() == Some('=') {
                    return Err(syntax(start, "comparison is not supported"));
                }
                Tok::Eq
            }
            ',' => {
                c.bump();
                Tok::Comma
            }
            '+' => {
                c.bump();
                Tok::Plus
            }
            '*' => {
                c.bump();
                Tok::Star
            }
            '/' => {
                c.bump();
                Tok::Slash
            }
            '.' => {
                c.bump();
                Tok::Dot
            }
            '"' | '\'' => Tok::Str(lex_string(&mut c, ch, start)?),
            d if d.is_ascii_digit() => lex_number(&mut c, start)?,
            a if a.is_alphabetic() || a == '_' => {
                let mut s = String::new();
                while let Some(x) = c.peek().filter(|x| x.is_alphanumeric() || *x == '_') {
                    s.push(x);
                    c.bump();
                }
                Tok::Ident(s)
            }
            other => return Err(syntax(start, format!("unexpected character {other:?}"))),
        };
        out.push(Token {
            tok,
            span: Span { end: c.pos, ..start },
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        span: c.here(),
    });
    Ok(out)
}

fn lex_string(c: &mut Cursor<'_>, quote: char, start: Span) -> Result<String, DslError> {
    c.bump();
    let mut s = String::new();
    loop {
        match c.bump() {
            None | Some('\n') => return Err(syntax(start, "unterminated string")),
            Some(x) if x == quote => return Ok(s),
            Some('\\') => {
                let esc = c.here();
                match c.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('\\') => s.push('\\'),
                    Some('"') => s.push('"'),
                    Some('\'') => s.push('\''),
                    other => return Err(syntax(esc, format!("unknown escape {other:?}"))),
                }
            }
            Some(x) => s.push(x),
        }
    }
}

fn lex_number(c: &mut Cursor<'_>, start: Span) -> Result<Tok, DslError> {
    let digits = |c: &mut Cursor<'_>| {
        while c.peek().is_some_and(|x| x.is_ascii_digit()) {
            c.bump();
        }
    };
    digits(c);
    if c.peek() == Some('.') && c.peek2().is_some_and(|x| x.is_ascii_digit()) {
        c.bump();
        digits(c);
    }
    if matches!(c.peek(), Some('e' | 'E')) {
        c.bump();
        if matches!(c.peek(), Some('+' | '-')) {
            c.bump();
        }
        if !c.peek().is_some_and(|x| x.is_ascii_digit()) {
            return Err(syntax(start, "malformed exponent"));
        }
        digits(c);
    }
    let text = &c.src[start.start..c.pos];
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Tok::Number(v)),
        _ => Err(syntax(start, format!("number {text} is out of range"))),
    }
}

use std::collections::HashMap;

use super::ast::{Arg, BinOp, Builtin, Expr, ExprKind, Keyword, Program, Span, Stmt};
use super::lexer::{tokenize, Tok, Token};
use super::{DslError, Type};

/// Prefix accepted (and dropped) before builtin calls, as in `robot.move_to(p)`.
pub const RECEIVER: &str = "robot";

pub fn parse(src: &str) -> Result<Program, DslError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        env: HashMap::new(),
    };
    p.program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    env: HashMap<String, Type>,
}

fn syntax(span: Span, message: impl Into<String>) -> DslError {
    DslError::Syntax {
        line: span.line,
        col: span.col,
        message: message.into(),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Span, DslError> {
        if *self.peek() == want {
            Ok(self.bump().span)
        } else {
            Err(syntax(
                self.span(),
                format!("expected {}, found {}", want.describe(), self.peek().describe()),
            ))
        }
    }

    fn program(&mut self) -> Result<Program, DslError> {
        let mut statements = Vec::new();
        loop {
            while *self.peek() == Tok::Sep {
                self.bump();
            }
            if *self.peek() == Tok::Eof {
                break;
            }
            statements.push(self.statement()?);
            match self.peek() {
                Tok::Sep | Tok::Eof => {}
                other => {
                    return Err(syntax(self.span(), format!("expected end of statement, found {}", other.describe())))
                }
            }
        }
        Ok(Program { statements })
    }

    fn statement(&mut self) -> Result<Stmt, DslError> {
        if let (Tok::Ident(name), Tok::Eq) = (self.peek().clone(), self.peek_at(1)) {
            let start = self.bump().span;
            self.bump();
            if name == RECEIVER || Builtin::from_name(&name).is_some() {
                return Err(syntax(start, format!("`{name}` is reserved")));
            }
            if self.env.contains_key(&name) {
                return Err(DslError::Rebind {
                    name,
                    line: start.line,
                    col: start.col,
                });
            }
            let (value, ty) = self.expr()?;
            if ty == Type::Unit {
                return Err(type_error(value.span, "this call produces no value to bind"));
            }
            self.env.insert(name.clone(), ty);
            let span = start.to(value.span);
            return Ok(Stmt::Let { name, value, span });
        }
        let (e, _) = self.expr()?;
        Ok(Stmt::Expr(e))
    }

    fn expr(&mut self) -> Result<(Expr, Type), DslError> {
        let mut lhs = self.term()?;
        while *self.peek() == Tok::Plus {
            self.bump();
            let rhs = self.term()?;
            lhs = binary(BinOp::Add, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<(Expr, Type), DslError> {
        let mut lhs = self.primary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.primary()?;
            lhs = binary(op, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<(Expr, Type), DslError> {
        let tok = self.bump();
        let span = tok.span;
        match tok.tok {
            Tok::Number(n) => Ok((Expr { kind: ExprKind::Number(n), span }, Type::Number)),
            Tok::Str(s) => Ok((Expr { kind: ExprKind::Str(s), span }, Type::Str)),
            Tok::LParen => {
                let (mut inner, ty) = self.expr()?;
                let close = self.expect(Tok::RParen)?;
                inner.span = Span { end: close.end, ..span };
                Ok((inner, ty))
            }
            Tok::Ident(name) if name == RECEIVER && *self.peek() == Tok::Dot => {
                self.bump();
                let fspan = self.span();
                match self.bump().tok {
                    Tok::Ident(f) => {
                        if *self.peek() != Tok::LParen {
                            return Err(syntax(self.span(), format!("expected `(` after `{RECEIVER}.{f}`")));
                        }
                        self.call(&f, span, fspan)
                    }
                    other => Err(syntax(fspan, format!("expected a function name, found {}", other.describe()))),
                }
            }
            Tok::Ident(name) if *self.peek() == Tok::LParen => self.call(&name, span, span),
            Tok::Ident(name) => match self.env.get(&name) {
                Some(ty) => Ok((Expr { kind: ExprKind::Var(name), span }, *ty)),
                None => Err(DslError::Unbound {
                    name,
                    line: span.line,
                    col: span.col,
                }),
            },
            other => Err(syntax(span, format!("expected an expression, found {}", other.describe()))),
        }
    }

    fn call(&mut self, name: &str, start: Span, name_span: Span) -> Result<(Expr, Type), DslError> {
        let function = Builtin::from_name(name).ok_or_else(|| DslError::UnknownFunction {
            name: name.to_string(),
            line: name_span.line,
            col: name_span.col,
        })?;
        self.expect(Tok::LParen)?;
        let mut args: Vec<(Arg, Type)> = Vec::new();
        while *self.peek() != Tok::RParen {
            let keyword = match (self.peek().clone(), self.peek_at(1)) {
                (Tok::Ident(k), Tok::Eq) => {
                    let kspan = self.span();
                    self.bump();
                    self.bump();
                    Some(Keyword::from_name(&k).ok_or_else(|| DslError::Arity {
                        function: function.name(),
                        message: format!("unknown keyword `{k}`"),
                        line: kspan.line,
                        col: kspan.col,
                    })?)
                }
                _ => None,
            };
            let (value, ty) = self.expr()?;
            args.push((Arg { keyword, value }, ty));
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        let close = self.expect(Tok::RParen)?;
        let span = Span { end: close.end, ..start };
        let ty = check_call(function, &args, span)?;
        let args = args.into_iter().map(|(a, _)| a).collect();
        Ok((
            Expr {
                kind: ExprKind::Call { function, args },
                span,
            },
            ty,
        ))
    }
}

fn type_error(span: Span, message: impl Into<String>) -> DslError {
    DslError::Type {
        message: message.into(),
        line: span.line,
        col: span.col,
    }
}

fn binary(op: BinOp, (lhs, lt): (Expr, Type), (rhs, rt): (Expr, Type)) -> Result<(Expr, Type), DslError> {
    let span = lhs.span.to(rhs.span);
    let ty = match (op, lt, rt) {
        (BinOp::Mul, Type::Heatmap, Type::Heatmap) => Type::Heatmap,
        (BinOp::Add, Type::Position, Type::Position) => Type::Position,
        (BinOp::Div, Type::Position, Type::Number) => Type::Position,
        _ => {
            return Err(type_error(
                span,
                format!("cannot apply `{}` to {} and {}", op.symbol(), lt.name(), rt.name()),
            ))
        }
    };
    Ok((
        Expr {
            kind: ExprKind::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
            span,
        },
        ty,
    ))
}

fn check_call(function: Builtin, args: &[(Arg, Type)], span: Span) -> Result<Type, DslError> {
    let arity = |message: String| DslError::Arity {
        function: function.name(),
        message,
        line: span.line,
        col: span.col,
    };
    let single_positional = |want: Type| -> Result<(), DslError> {
        match args {
            [(Arg { keyword: None, value }, ty)] => {
                if *ty == want {
                    Ok(())
                } else {
                    Err(type_error(
                        value.span,
                        format!("{} expects a {}, got {}", function.name(), want.name(), ty.name()),
                    ))
                }
            }
            [(Arg { keyword: Some(k), .. }, _)] => Err(arity(format!("unexpected keyword `{}`", k.name()))),
            _ => Err(arity(format!("expects exactly 1 argument, got {}", args.len()))),
        }
    };
    match function {
        Builtin::LoadImage => single_positional(Type::Str).map(|_| Type::Image),
        Builtin::MaxPos | Builtin::GetMaxPos3d => single_positional(Type::Heatmap).map(|_| Type::Position),
        Builtin::MoveTo => single_positional(Type::Position).map(|_| Type::Unit),
        Builtin::GetMap | Builtin::GetMajorMap => {
            let [(arg, ty)] = args else {
                return Err(arity(format!(
                    "expects exactly one of obj=, sound=, img=, area=; got {} arguments",
                    args.len()
                )));
            };
            let Some(k) = arg.keyword else {
                return Err(arity("the argument must be passed as obj=, sound=, img= or area=".into()));
            };
            let want = if k == Keyword::Img { Type::Image } else { Type::Str };
            if *ty != want {
                return Err(type_error(
                    arg.value.span,
                    format!("`{}=` expects a {}, got {}", k.name(), want.name(), ty.name()),
                ));
            }
            Ok(Type::Heatmap)
        }
    }
}

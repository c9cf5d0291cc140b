use std::fmt::Write;

use super::ast::{Expr, ExprKind, Program, Stmt};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical source for one expression, with the fewest parentheses that
/// preserve its tree.
pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, 0);
    s
}

fn write_expr(out: &mut String, e: &Expr, min_prec: u8) {
    match &e.kind {
        ExprKind::Number(n) => {
            let _ = write!(out, "{n}");
        }
        ExprKind::Str(s) => out.push_str(&quote(s)),
        ExprKind::Var(v) => out.push_str(v),
        ExprKind::Call { function, args } => {
            out.push_str(function.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                if let Some(k) = a.keyword {
                    out.push_str(k.name());
                    out.push('=');
                }
                write_expr(out, &a.value, 0);
            }
            out.push(')');
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            let paren = p < min_prec;
            if paren {
                out.push('(');
            }
            write_expr(out, lhs, p);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, rhs, p + 1);
            if paren {
                out.push(')');
            }
        }
    }
}

/// One statement per line.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    for s in &p.statements {
        match s {
            Stmt::Let { name, value, .. } => {
                let _ = writeln!(out, "{name} = {}", expr_to_string(value));
            }
            Stmt::Expr(e) => {
                let _ = writeln!(out, "{}", expr_to_string(e));
            }
        }
    }
    out
}

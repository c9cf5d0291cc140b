//! Random well-typed programs, used to fuzz the parser and printer.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::ast::{Arg, BinOp, Builtin, Expr, ExprKind, Keyword, Program, Stmt};
use super::Type;

const WORDS: [&str; 10] = [
    "chair",
    "glass breaking",
    "cat \"meowing\"",
    "back\\slash",
    "tab\there",
    "línea\nnueva",
    "window",
    "kitchen",
    "",
    "./images/006899.png",
];

struct Gen<'a, R: Rng> {
    rng: &'a mut R,
    vars: Vec<(String, Type)>,
}

impl<R: Rng> Gen<'_, R> {
    fn var_of(&mut self, ty: Type) -> Option<Expr> {
        let pool: Vec<&String> = self.vars.iter().filter(|(_, t)| *t == ty).map(|(n, _)| n).collect();
        pool.choose(self.rng).map(|n| Expr::new(ExprKind::Var((*n).clone())))
    }

    fn string(&mut self) -> Expr {
        Expr::new(ExprKind::Str(WORDS.choose(self.rng).unwrap().to_string()))
    }

    fn number(&mut self) -> Expr {
        let n = match self.rng.random_range(0..4) {
            0 => self.rng.random_range(1..10) as f64,
            1 => self.rng.random_range(0.0..100.0),
            2 => self.rng.random_range(1e-9..1e-6),
            _ => self.rng.random_range(1e6..1e12),
        };
        Expr::new(ExprKind::Number(n))
    }

    fn call(function: Builtin, keyword: Option<Keyword>, value: Expr) -> Expr {
        Expr::new(ExprKind::Call {
            function,
            args: vec![Arg { keyword, value }],
        })
    }

    fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::new(ExprKind::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn image(&mut self) -> Expr {
        if self.rng.random_bool(0.5) {
            if let Some(v) = self.var_of(Type::Image) {
                return v;
            }
        }
        let s = self.string();
        Self::call(Builtin::LoadImage, None, s)
    }

    fn heatmap(&mut self, depth: u32) -> Expr {
        let roll = self.rng.random_range(0..3);
        if roll == 0 {
            if let Some(v) = self.var_of(Type::Heatmap) {
                return v;
            }
        }
        if roll == 1 && depth > 0 {
            let (a, b) = (self.heatmap(depth - 1), self.heatmap(depth - 1));
            return Self::binary(BinOp::Mul, a, b);
        }
        let function = *[Builtin::GetMap, Builtin::GetMajorMap].choose(self.rng).unwrap();
        let keyword = *Keyword::ALL.choose(self.rng).unwrap();
        let value = if keyword == Keyword::Img { self.image() } else { self.string() };
        Self::call(function, Some(keyword), value)
    }

    fn position(&mut self, depth: u32) -> Expr {
        let roll = self.rng.random_range(0..4);
        if roll == 0 {
            if let Some(v) = self.var_of(Type::Position) {
                return v;
            }
        }
        if depth > 0 && roll == 1 {
            let (a, b) = (self.position(depth - 1), self.position(depth - 1));
            return Self::binary(BinOp::Add, a, b);
        }
        if depth > 0 && roll == 2 {
            let (a, n) = (self.position(depth - 1), self.number());
            return Self::binary(BinOp::Div, a, n);
        }
        let function = *[Builtin::MaxPos, Builtin::GetMaxPos3d].choose(self.rng).unwrap();
        let h = self.heatmap(depth.saturating_sub(1));
        Self::call(function, None, h)
    }
}

/// A random program with `len` statements that parses and type-checks.
pub fn random_program<R: Rng>(rng: &mut R, len: usize) -> Program {
    let mut g = Gen { rng, vars: Vec::new() };
    let mut statements = Vec::with_capacity(len);
    for i in 0..len {
        let depth = g.rng.random_range(0..4);
        let (value, ty) = match g.rng.random_range(0..5) {
            0 => (g.image(), Type::Image),
            1 | 2 => (g.heatmap(depth), Type::Heatmap),
            3 => (g.position(depth), Type::Position),
            _ => {
                let p = g.position(depth);
                statements.push(Stmt::Expr(Gen::<R>::call(Builtin::MoveTo, None, p)));
                continue;
            }
        };
        let name = format!("{}{i}", ["v", "map_", "pos", "_t"].choose(g.rng).unwrap());
        g.vars.push((name.clone(), ty));
        statements.push(Stmt::Let {
            name,
            value,
            span: Default::default(),
        });
    }
    Program { statements }
}

use std::fmt;

/// Source location of a node: byte range plus the 1-based line and column of
/// its first character.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub col: usize,
}

impl Span {
    pub fn to(self, other: Span) -> Span {
        Span {
            end: other.end,
            ..self
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    LoadImage,
    GetMap,
    GetMajorMap,
    MaxPos,
    GetMaxPos3d,
    MoveTo,
}

impl Builtin {
    pub const ALL: [Builtin; 6] = [
        Builtin::LoadImage,
        Builtin::GetMap,
        Builtin::GetMajorMap,
        Builtin::MaxPos,
        Builtin::GetMaxPos3d,
        Builtin::MoveTo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::LoadImage => "load_image",
            Builtin::GetMap => "get_map",
            Builtin::GetMajorMap => "get_major_map",
            Builtin::MaxPos => "max_pos",
            Builtin::GetMaxPos3d => "get_max_pos_3d",
            Builtin::MoveTo => "move_to",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

/// Evidence selector of `get_map` and `get_major_map`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Obj,
    Sound,
    Img,
    Area,
}

impl Keyword {
    pub const ALL: [Keyword; 4] = [Keyword::Obj, Keyword::Sound, Keyword::Img, Keyword::Area];

    pub fn name(&self) -> &'static str {
        match self {
            Keyword::Obj => "obj",
            Keyword::Sound => "sound",
            Keyword::Img => "img",
            Keyword::Area => "area",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(&self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    pub fn precedence(&self) -> u8 {
        match self {
            BinOp::Add => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub keyword: Option<Keyword>,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Str(String),
    Var(String),
    Call { function: Builtin, args: Vec<Arg> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Self {
            kind,
            span: Span::default(),
        }
    }

    fn strip_spans(&mut self) {
        self.span = Span::default();
        match &mut self.kind {
            ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| a.value.strip_spans()),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.strip_spans();
                rhs.strip_spans();
            }
            ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::Var(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Let { name: String, value: Expr, span: Span },
    Expr(Expr),
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Let { span, .. } => *span,
            Stmt::Expr(e) => e.span,
        }
    }
}

/// A parsed and type-checked goal program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub statements: Vec<Stmt>,
}

impl Program {
    /// The same program with every span reset, for structural comparison.
    pub fn without_spans(&self) -> Program {
        let mut p = self.clone();
        for s in &mut p.statements {
            match s {
                Stmt::Let { value, span, .. } => {
                    *span = Span::default();
                    value.strip_spans();
                }
                Stmt::Expr(e) => e.strip_spans(),
            }
        }
        p
    }
}

//! Abstract syntax shared by higher-order source programs and their
//! first-order targets.
//!
//! Logical formulas are expressions of type `bool`: the same tree carries
//! program code, logic terms and contract clauses. Formula-only forms
//! (`forall`, `->`, `old`, `result`, `post f ...`) are rejected by the
//! parser and the typechecker outside of logical positions.
//!
//! Spans never participate in equality, so two programs compare equal when
//! they are structurally equal regardless of where they were parsed from.

use std::fmt;

/// A region of the input text. Lines and columns are 1-based.
#[derive(Clone, Copy, Debug, Default, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

// Consistent with equality: all spans hash alike.
impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _: &mut H) {}
}

impl Span {
    pub fn is_synthetic(&self) -> bool {
        self.start_line == 0
    }

    pub fn join(self, other: Span) -> Span {
        if self.is_synthetic() {
            return other;
        }
        if other.is_synthetic() {
            return self;
        }
        Span {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
            start_line: self.start_line,
            start_col: self.start_col,
            end_line: other.end_line,
            end_col: other.end_col,
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}",
            self.start_line, self.start_col, self.end_line, self.end_col
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    /// `'a`. Names starting with `?` are unification variables and never
    /// appear in a typechecked program.
    Var(String),
    Int,
    Bool,
    Unit,
    Adt(String, Vec<Type>),
    Arrow(Box<Type>, Box<Type>),
    Tuple(Vec<Type>),
    Ref(Box<Type>),
    Set(Box<Type>),
}

impl Type {
    pub fn arrow(dom: Type, cod: Type) -> Type {
        Type::Arrow(Box::new(dom), Box::new(cod))
    }

    pub fn adt(name: &str, args: Vec<Type>) -> Type {
        Type::Adt(name.to_string(), args)
    }

    pub fn contains_arrow(&self) -> bool {
        match self {
            Type::Arrow(..) => true,
            Type::Adt(_, args) | Type::Tuple(args) => args.iter().any(Type::contains_arrow),
            Type::Ref(t) | Type::Set(t) => t.contains_arrow(),
            Type::Var(_) | Type::Int | Type::Bool | Type::Unit => false,
        }
    }

    /// Type variables in first-occurrence order.
    pub fn type_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Type::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Type::Adt(_, args) | Type::Tuple(args) => {
                args.iter().for_each(|a| a.collect_vars(out));
            }
            Type::Arrow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Type::Ref(t) | Type::Set(t) => t.collect_vars(out),
            Type::Int | Type::Bool | Type::Unit => {}
        }
    }

    pub fn subst(&self, f: &dyn Fn(&str) -> Option<Type>) -> Type {
        match self {
            Type::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Type::Adt(n, args) => Type::Adt(n.clone(), args.iter().map(|a| a.subst(f)).collect()),
            Type::Tuple(args) => Type::Tuple(args.iter().map(|a| a.subst(f)).collect()),
            Type::Arrow(a, b) => Type::arrow(a.subst(f), b.subst(f)),
            Type::Ref(t) => Type::Ref(Box::new(t.subst(f))),
            Type::Set(t) => Type::Set(Box::new(t.subst(f))),
            Type::Int | Type::Bool | Type::Unit => self.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Literal {
    Int(i64),
    Bool(bool),
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Implies,
    /// Extensional equality on sets, written `==`.
    ExtEq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "=",
            BinOp::Ne => "<>",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Implies => "->",
            BinOp::ExtEq => "==",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub kind: PatternKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PatternKind {
    Wild,
    Var(String),
    Unit,
    Tuple(Vec<Pattern>),
    Construct(String, Vec<Pattern>),
}

impl Pattern {
    pub fn new(kind: PatternKind) -> Self {
        Pattern {
            kind,
            span: Span::default(),
        }
    }

    pub fn var(name: &str) -> Self {
        Pattern::new(PatternKind::Var(name.to_string()))
    }

    /// Variables bound by the pattern, left to right.
    pub fn binders(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_binders(&mut out);
        out
    }

    fn collect_binders(&self, out: &mut Vec<String>) {
        match &self.kind {
            PatternKind::Var(v) => out.push(v.clone()),
            PatternKind::Tuple(ps) | PatternKind::Construct(_, ps) => {
                ps.iter().for_each(|p| p.collect_binders(out));
            }
            PatternKind::Wild | PatternKind::Unit => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchArm {
    pub pattern: Pattern,
    pub body: Expr,
}

/// A typed parameter `(x: τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

impl Param {
    pub fn new(name: &str, ty: Type) -> Self {
        Param {
            name: name.to_string(),
            ty,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lambda {
    pub param: Pattern,
    /// Optional annotation on the parameter.
    pub param_ty: Option<Type>,
    pub contract: Contract,
    pub body: Box<Expr>,
    pub site: SiteId,
    /// Constructor name requested with `[@kont Name]`.
    pub kont_name: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteId(pub usize);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Var(String),
    Const(Literal),
    Lambda(Lambda),
    /// Application of a function, predicate or continuation to arguments.
    App(Box<Expr>, Vec<Expr>),
    Let(Pattern, Box<Expr>, Box<Expr>),
    LetRec(Vec<FunDecl>, Box<Expr>),
    Match(Box<Expr>, Vec<MatchArm>),
    Construct(String, Vec<Expr>),
    Tuple(Vec<Expr>),
    RefNew(Box<Expr>),
    RefGet(Box<Expr>),
    RefSet(Box<Expr>, Box<Expr>),
    Seq(Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    BinOp(BinOp, Box<Expr>, Box<Expr>),
    UnOp(UnOp, Box<Expr>),
    Absurd,
    // Logical forms.
    Forall(Vec<(String, Option<Type>)>, Box<Expr>),
    /// `post f a1 .. an`: 2 extra arguments (arg, result) for pure
    /// functions, 4 (arg, old, cur, result) for effectful ones.
    PostProj(Box<Expr>, Vec<Expr>),
    /// `pre f a1 .. an`: (arg) or (arg, state).
    PreProj(Box<Expr>, Vec<Expr>),
    Old(Box<Expr>),
    Result,
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: Span::default(),
        }
    }

    pub fn with_span(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }

    pub fn var(name: &str) -> Self {
        Expr::new(ExprKind::Var(name.to_string()))
    }

    pub fn int(n: i64) -> Self {
        Expr::new(ExprKind::Const(Literal::Int(n)))
    }

    pub fn bool(b: bool) -> Self {
        Expr::new(ExprKind::Const(Literal::Bool(b)))
    }

    pub fn unit() -> Self {
        Expr::new(ExprKind::Const(Literal::Unit))
    }

    pub fn call(name: &str, args: Vec<Expr>) -> Self {
        Expr::new(ExprKind::App(Box::new(Expr::var(name)), args))
    }

    pub fn construct(name: &str, args: Vec<Expr>) -> Self {
        Expr::new(ExprKind::Construct(name.to_string(), args))
    }

    pub fn binop(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::new(ExprKind::BinOp(op, Box::new(a), Box::new(b)))
    }

    pub fn let_(pat: Pattern, bound: Expr, body: Expr) -> Self {
        Expr::new(ExprKind::Let(pat, Box::new(bound), Box::new(body)))
    }

    pub fn and(a: Expr, b: Expr) -> Self {
        Expr::binop(BinOp::And, a, b)
    }

    pub fn is_true(&self) -> bool {
        matches!(self.kind, ExprKind::Const(Literal::Bool(true)))
    }

    /// Name of the head when this is an application of a plain name.
    pub fn call_head(&self) -> Option<(&str, &[Expr])> {
        match &self.kind {
            ExprKind::App(head, args) => match &head.kind {
                ExprKind::Var(n) => Some((n.as_str(), args.as_slice())),
                _ => None,
            },
            _ => None,
        }
    }

    /// Pre-order walk over this expression and every sub-expression,
    /// including those inside contracts of lambdas and local functions.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        self.for_each_child(&mut |c| c.walk(f));
    }

    pub fn for_each_child<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        match &self.kind {
            ExprKind::Var(_) | ExprKind::Const(_) | ExprKind::Absurd | ExprKind::Result => {}
            ExprKind::Lambda(l) => {
                l.contract.for_each_clause(f);
                f(&l.body);
            }
            ExprKind::App(h, args) => {
                f(h);
                for a in args.iter() {
                    f(a);
                }
            }
            ExprKind::Let(_, a, b) | ExprKind::Seq(a, b) | ExprKind::RefSet(a, b) => {
                f(a);
                f(b);
            }
            ExprKind::BinOp(_, a, b) => {
                f(a);
                f(b);
            }
            ExprKind::LetRec(decls, body) => {
                for d in decls {
                    d.contract.for_each_clause(f);
                    f(&d.body);
                }
                f(body);
            }
            ExprKind::Match(s, arms) => {
                f(s);
                arms.iter().for_each(|a| f(&a.body));
            }
            ExprKind::Construct(_, args) | ExprKind::Tuple(args) => {
                for a in args.iter() {
                    f(a);
                }
            }
            ExprKind::RefNew(e) | ExprKind::RefGet(e) | ExprKind::UnOp(_, e) | ExprKind::Old(e) => {
                f(e)
            }
            ExprKind::If(c, t, e) => {
                f(c);
                f(t);
                f(e);
            }
            ExprKind::Forall(_, b) => f(b),
            ExprKind::PostProj(g, args) | ExprKind::PreProj(g, args) => {
                f(g);
                for a in args.iter() {
                    f(a);
                }
            }
        }
    }

    /// Bottom-up rewrite: children first, then `f` on the rebuilt node.
    pub fn map_bottom_up(self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        let Expr { kind, span } = self;
        let mut go = |e: Expr| e.map_bottom_up(f);
        let kind = match kind {
            k @ (ExprKind::Var(_) | ExprKind::Const(_) | ExprKind::Absurd | ExprKind::Result) => k,
            ExprKind::Lambda(mut l) => {
                l.contract = l.contract.map_clauses(&mut go);
                l.body = Box::new(go(*l.body));
                ExprKind::Lambda(l)
            }
            ExprKind::App(h, args) => {
                ExprKind::App(Box::new(go(*h)), args.into_iter().map(&mut go).collect())
            }
            ExprKind::Let(p, a, b) => ExprKind::Let(p, Box::new(go(*a)), Box::new(go(*b))),
            ExprKind::LetRec(decls, body) => ExprKind::LetRec(
                decls
                    .into_iter()
                    .map(|mut d| {
                        d.contract = d.contract.map_clauses(&mut go);
                        d.body = go(d.body);
                        d
                    })
                    .collect(),
                Box::new(go(*body)),
            ),
            ExprKind::Match(s, arms) => ExprKind::Match(
                Box::new(go(*s)),
                arms.into_iter()
                    .map(|a| MatchArm {
                        pattern: a.pattern,
                        body: go(a.body),
                    })
                    .collect(),
            ),
            ExprKind::Construct(c, args) => {
                ExprKind::Construct(c, args.into_iter().map(&mut go).collect())
            }
            ExprKind::Tuple(args) => ExprKind::Tuple(args.into_iter().map(&mut go).collect()),
            ExprKind::RefNew(e) => ExprKind::RefNew(Box::new(go(*e))),
            ExprKind::RefGet(e) => ExprKind::RefGet(Box::new(go(*e))),
            ExprKind::RefSet(a, b) => ExprKind::RefSet(Box::new(go(*a)), Box::new(go(*b))),
            ExprKind::Seq(a, b) => ExprKind::Seq(Box::new(go(*a)), Box::new(go(*b))),
            ExprKind::If(c, t, e) => {
                ExprKind::If(Box::new(go(*c)), Box::new(go(*t)), Box::new(go(*e)))
            }
            ExprKind::BinOp(op, a, b) => ExprKind::BinOp(op, Box::new(go(*a)), Box::new(go(*b))),
            ExprKind::UnOp(op, e) => ExprKind::UnOp(op, Box::new(go(*e))),
            ExprKind::Forall(vs, b) => ExprKind::Forall(vs, Box::new(go(*b))),
            ExprKind::PostProj(g, args) => {
                ExprKind::PostProj(Box::new(go(*g)), args.into_iter().map(&mut go).collect())
            }
            ExprKind::PreProj(g, args) => {
                ExprKind::PreProj(Box::new(go(*g)), args.into_iter().map(&mut go).collect())
            }
            ExprKind::Old(e) => ExprKind::Old(Box::new(go(*e))),
        };
        f(Expr { kind, span })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Contract {
    pub requires: Vec<Expr>,
    pub ensures: Vec<Expr>,
    /// Lexicographic measure.
    pub variant: Vec<Expr>,
}

impl Contract {
    pub fn is_empty(&self) -> bool {
        self.requires.is_empty() && self.ensures.is_empty() && self.variant.is_empty()
    }

    pub fn for_each_clause<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        for e in self
            .requires
            .iter()
            .chain(&self.ensures)
            .chain(&self.variant)
        {
            f(e);
        }
    }

    pub fn map_clauses(self, f: &mut dyn FnMut(Expr) -> Expr) -> Contract {
        Contract {
            requires: self.requires.into_iter().map(&mut *f).collect(),
            ensures: self.ensures.into_iter().map(&mut *f).collect(),
            variant: self.variant.into_iter().map(&mut *f).collect(),
        }
    }

    /// Conjunction of the requires clauses (`true` when absent).
    pub fn requires_formula(&self) -> Expr {
        conjoin(self.requires.clone())
    }

    pub fn ensures_formula(&self) -> Expr {
        conjoin(self.ensures.clone())
    }
}

pub fn conjoin(mut fs: Vec<Expr>) -> Expr {
    match fs.len() {
        0 => Expr::bool(true),
        1 => fs.pop().unwrap(),
        _ => {
            let last = fs.pop().unwrap();
            fs.into_iter().rev().fold(last, |acc, f| Expr::and(f, acc))
        }
    }
}

/// A program function, at top level or local to a `let rec ... in`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Type,
    pub contract: Contract,
    pub body: Expr,
    /// Ghost lemma function (`let rec lemma f ...`).
    pub lemma: bool,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constructor {
    pub name: String,
    pub fields: Vec<Type>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: TypeDefBody,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TypeDefBody {
    Adt(Vec<Constructor>),
    Alias(Type),
}

/// `function` (term-valued) or `predicate` (bool-valued) declaration.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicDecl {
    pub name: String,
    pub params: Vec<Param>,
    /// `None` for predicates.
    pub ret: Option<Type>,
    pub body: Expr,
    /// Measure over a synthesized continuation type, checked after the
    /// transform (`[@measure] function ...`).
    pub measure: bool,
    pub span: Span,
}

impl LogicDecl {
    pub fn is_predicate(&self) -> bool {
        self.ret.is_none()
    }

    pub fn result_type(&self) -> Type {
        self.ret.clone().unwrap_or(Type::Bool)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decl {
    /// One or more mutually recursive type definitions (`type .. with ..`).
    Types(Vec<TypeDef>),
    Logic(LogicDecl),
    /// `let [rec] f .. [with g ..]`.
    Let {
        rec: bool,
        funs: Vec<FunDecl>,
    },
    /// `lemma name: formula`, checked by sampling.
    Lemma {
        name: String,
        body: Expr,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    HigherOrder,
    FirstOrder,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Program {
    pub decls: Vec<Decl>,
}

impl Program {
    pub fn type_defs(&self) -> impl Iterator<Item = &TypeDef> {
        self.decls.iter().flat_map(|d| match d {
            Decl::Types(ts) => ts.as_slice(),
            _ => &[],
        })
    }

    pub fn logic_decls(&self) -> impl Iterator<Item = &LogicDecl> {
        self.decls.iter().filter_map(|d| match d {
            Decl::Logic(l) => Some(l),
            _ => None,
        })
    }

    /// Top-level program functions, in declaration order.
    pub fn top_funs(&self) -> impl Iterator<Item = &FunDecl> {
        self.decls.iter().flat_map(|d| match d {
            Decl::Let { funs, .. } => funs.as_slice(),
            _ => &[],
        })
    }

    /// All program functions, including local ones, in source order.
    pub fn all_funs(&self) -> Vec<&FunDecl> {
        let mut out = Vec::new();
        for f in self.top_funs() {
            out.push(f);
            collect_local_funs(&f.body, &mut out);
            f.contract
                .for_each_clause(&mut |c| collect_local_funs(c, &mut out));
        }
        out
    }

    pub fn find_fun(&self, name: &str) -> Option<&FunDecl> {
        self.all_funs().into_iter().find(|f| f.name == name)
    }

    pub fn find_logic(&self, name: &str) -> Option<&LogicDecl> {
        self.logic_decls().find(|l| l.name == name)
    }

    pub fn find_type(&self, name: &str) -> Option<&TypeDef> {
        self.type_defs().find(|t| t.name == name)
    }

    /// Every lambda in source order.
    pub fn lambdas(&self) -> Vec<&Lambda> {
        let mut out = Vec::new();
        self.for_each_expr(&mut |e| {
            if let ExprKind::Lambda(l) = &e.kind {
                out.push(l);
            }
        });
        out
    }

    /// Visits every expression in declaration order (pre-order).
    pub fn for_each_expr<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        for d in &self.decls {
            match d {
                Decl::Types(_) => {}
                Decl::Logic(l) => l.body.walk(f),
                Decl::Let { funs, .. } => {
                    for fun in funs {
                        fun.contract.for_each_clause(&mut |c| c.walk(f));
                        fun.body.walk(f);
                    }
                }
                Decl::Lemma { body, .. } => body.walk(f),
            }
        }
    }

    /// `FirstOrder` iff no arrow type occurs in a signature, an ADT field or
    /// an expression (no lambdas).
    pub fn order(&self) -> Order {
        let sig_arrow = self
            .all_funs()
            .iter()
            .any(|f| f.ret.contains_arrow() || f.params.iter().any(|p| p.ty.contains_arrow()));
        let adt_arrow = self.type_defs().any(|t| match &t.body {
            TypeDefBody::Adt(cs) => cs.iter().any(|c| c.fields.iter().any(Type::contains_arrow)),
            TypeDefBody::Alias(ty) => ty.contains_arrow(),
        });
        let logic_arrow = self
            .logic_decls()
            .any(|l| l.params.iter().any(|p| p.ty.contains_arrow()));
        let mut lambda = false;
        self.for_each_expr(&mut |e| {
            if matches!(
                e.kind,
                ExprKind::Lambda(_) | ExprKind::PostProj(..) | ExprKind::PreProj(..)
            ) {
                lambda = true;
            }
        });
        if sig_arrow || adt_arrow || logic_arrow || lambda {
            Order::HigherOrder
        } else {
            Order::FirstOrder
        }
    }
}

fn collect_local_funs<'a>(e: &'a Expr, out: &mut Vec<&'a FunDecl>) {
    e.walk(&mut |e| {
        if let ExprKind::LetRec(decls, _) = &e.kind {
            out.extend(decls.iter());
        }
    });
}

/// Free variables of a formula (or any expression) in first-occurrence
/// order, excluding `result` and names bound inside it.
pub fn free_vars(e: &Expr) -> Vec<String> {
    let mut out = Vec::new();
    let mut bound = Vec::new();
    fv(e, &mut bound, &mut out);
    out
}

/// Alias used for formulas.
pub fn formula_free_vars(f: &Expr) -> Vec<String> {
    free_vars(f)
}

fn push_unique(out: &mut Vec<String>, name: &str) {
    if !out.iter().any(|n| n == name) {
        out.push(name.to_string());
    }
}

fn fv(e: &Expr, bound: &mut Vec<String>, out: &mut Vec<String>) {
    match &e.kind {
        ExprKind::Var(v) => {
            if !bound.contains(v) {
                push_unique(out, v);
            }
        }
        ExprKind::App(head, args) => {
            fv(head, bound, out);
            args.iter().for_each(|a| fv(a, bound, out));
        }
        ExprKind::Lambda(l) => {
            let n = bound.len();
            bound.extend(l.param.binders());
            for c in l.contract.requires.iter().chain(&l.contract.ensures) {
                fv(c, bound, out);
            }
            fv(&l.body, bound, out);
            bound.truncate(n);
        }
        ExprKind::Let(p, a, b) => {
            fv(a, bound, out);
            let n = bound.len();
            bound.extend(p.binders());
            fv(b, bound, out);
            bound.truncate(n);
        }
        ExprKind::LetRec(decls, body) => {
            let n = bound.len();
            bound.extend(decls.iter().map(|d| d.name.clone()));
            for d in decls {
                let m = bound.len();
                bound.extend(d.params.iter().map(|p| p.name.clone()));
                d.contract.for_each_clause(&mut |c| fv(c, bound, out));
                fv(&d.body, bound, out);
                bound.truncate(m);
            }
            fv(body, bound, out);
            bound.truncate(n);
        }
        ExprKind::Match(s, arms) => {
            fv(s, bound, out);
            for arm in arms {
                let n = bound.len();
                bound.extend(arm.pattern.binders());
                fv(&arm.body, bound, out);
                bound.truncate(n);
            }
        }
        ExprKind::Forall(vs, body) => {
            let n = bound.len();
            bound.extend(vs.iter().map(|(v, _)| v.clone()));
            fv(body, bound, out);
            bound.truncate(n);
        }
        _ => e.for_each_child(&mut |c| fv(c, bound, out)),
    }
}

/// Replaces free occurrences of variables according to `map`. Binders that
/// shadow a mapped name stop the substitution below them.
pub fn substitute(e: &Expr, map: &dyn Fn(&str) -> Option<Expr>) -> Expr {
    subst_rec(e, map, &mut Vec::new())
}

fn subst_rec(e: &Expr, map: &dyn Fn(&str) -> Option<Expr>, bound: &mut Vec<String>) -> Expr {
    let span = e.span;
    let go = |x: &Expr, bound: &mut Vec<String>| subst_rec(x, map, bound);
    let kind = match &e.kind {
        ExprKind::Var(v) => {
            if !bound.contains(v) {
                if let Some(r) = map(v) {
                    return r;
                }
            }
            e.kind.clone()
        }
        ExprKind::Let(p, a, b) => {
            let a = go(a, bound);
            let n = bound.len();
            bound.extend(p.binders());
            let b = go(b, bound);
            bound.truncate(n);
            ExprKind::Let(p.clone(), Box::new(a), Box::new(b))
        }
        ExprKind::Match(s, arms) => {
            let s = go(s, bound);
            let arms = arms
                .iter()
                .map(|arm| {
                    let n = bound.len();
                    bound.extend(arm.pattern.binders());
                    let body = go(&arm.body, bound);
                    bound.truncate(n);
                    MatchArm {
                        pattern: arm.pattern.clone(),
                        body,
                    }
                })
                .collect();
            ExprKind::Match(Box::new(s), arms)
        }
        ExprKind::Forall(vs, b) => {
            let n = bound.len();
            bound.extend(vs.iter().map(|(v, _)| v.clone()));
            let b = go(b, bound);
            bound.truncate(n);
            ExprKind::Forall(vs.clone(), Box::new(b))
        }
        ExprKind::Lambda(l) => {
            let n = bound.len();
            bound.extend(l.param.binders());
            let mut l = l.clone();
            l.contract = l.contract.map_clauses(&mut |c| go(&c, bound));
            l.body = Box::new(go(&l.body, bound));
            bound.truncate(n);
            ExprKind::Lambda(l)
        }
        ExprKind::LetRec(decls, body) => {
            let n = bound.len();
            bound.extend(decls.iter().map(|d| d.name.clone()));
            let decls = decls
                .iter()
                .map(|d| {
                    let m = bound.len();
                    bound.extend(d.params.iter().map(|p| p.name.clone()));
                    let mut d = d.clone();
                    d.contract = d.contract.map_clauses(&mut |c| go(&c, bound));
                    d.body = go(&d.body, bound);
                    bound.truncate(m);
                    d
                })
                .collect();
            let body = go(body, bound);
            bound.truncate(n);
            ExprKind::LetRec(decls, Box::new(body))
        }
        _ => {
            // Non-binding node: rebuild with substituted children.
            let mut children = Vec::new();
            e.for_each_child(&mut |c| children.push(c));
            let mut new_children: Vec<Expr> = children.into_iter().map(|c| go(c, bound)).collect();
            return Expr::with_span(rebuild(&e.kind, &mut new_children), span);
        }
    };
    Expr::with_span(kind, span)
}

/// Rebuilds a non-binding node from its children (in `for_each_child`
/// order).
fn rebuild(kind: &ExprKind, children: &mut Vec<Expr>) -> ExprKind {
    let mut it = std::mem::take(children).into_iter();
    let mut next = || Box::new(it.next().expect("child count"));
    match kind {
        ExprKind::App(_, args) => {
            let h = next();
            ExprKind::App(h, (0..args.len()).map(|_| *next()).collect())
        }
        ExprKind::Construct(c, args) => {
            ExprKind::Construct(c.clone(), (0..args.len()).map(|_| *next()).collect())
        }
        ExprKind::Tuple(args) => ExprKind::Tuple((0..args.len()).map(|_| *next()).collect()),
        ExprKind::RefNew(_) => ExprKind::RefNew(next()),
        ExprKind::RefGet(_) => ExprKind::RefGet(next()),
        ExprKind::RefSet(..) => {
            let a = next();
            ExprKind::RefSet(a, next())
        }
        ExprKind::Seq(..) => {
            let a = next();
            ExprKind::Seq(a, next())
        }
        ExprKind::If(..) => {
            let c = next();
            let t = next();
            ExprKind::If(c, t, next())
        }
        ExprKind::BinOp(op, ..) => {
            let a = next();
            ExprKind::BinOp(*op, a, next())
        }
        ExprKind::UnOp(op, _) => ExprKind::UnOp(*op, next()),
        ExprKind::Old(_) => ExprKind::Old(next()),
        ExprKind::PostProj(_, args) => {
            let g = next();
            ExprKind::PostProj(g, (0..args.len()).map(|_| *next()).collect())
        }
        ExprKind::PreProj(_, args) => {
            let g = next();
            ExprKind::PreProj(g, (0..args.len()).map(|_| *next()).collect())
        }
        k => k.clone(),
    }
}

/// Renumbers lambda sites 0..n in source order.
pub fn fresh_site_ids(mut program: Program) -> Program {
    let mut next = 0usize;
    fn number(e: &mut Expr, next: &mut usize) {
        if let ExprKind::Lambda(l) = &mut e.kind {
            l.site = SiteId(*next);
            *next += 1;
        }
        for_each_child_mut(e, &mut |c| number(c, next));
    }
    for d in &mut program.decls {
        match d {
            Decl::Types(_) => {}
            Decl::Logic(l) => number(&mut l.body, &mut next),
            Decl::Lemma { body, .. } => number(body, &mut next),
            Decl::Let { funs, .. } => {
                for f in funs {
                    for c in f
                        .contract
                        .requires
                        .iter_mut()
                        .chain(f.contract.ensures.iter_mut())
                        .chain(f.contract.variant.iter_mut())
                    {
                        number(c, &mut next);
                    }
                    number(&mut f.body, &mut next);
                }
            }
        }
    }
    program
}

/// Mutable counterpart of [`Expr::for_each_child`], same visiting order.
pub fn for_each_child_mut(e: &mut Expr, f: &mut dyn FnMut(&mut Expr)) {
    match &mut e.kind {
        ExprKind::Var(_) | ExprKind::Const(_) | ExprKind::Absurd | ExprKind::Result => {}
        ExprKind::Lambda(l) => {
            for c in l
                .contract
                .requires
                .iter_mut()
                .chain(l.contract.ensures.iter_mut())
                .chain(l.contract.variant.iter_mut())
            {
                f(c);
            }
            f(&mut l.body);
        }
        ExprKind::App(h, args) => {
            f(h);
            for a in args.iter_mut() {
                f(a);
            }
        }
        ExprKind::Let(_, a, b)
        | ExprKind::Seq(a, b)
        | ExprKind::RefSet(a, b)
        | ExprKind::BinOp(_, a, b) => {
            f(a);
            f(b);
        }
        ExprKind::LetRec(decls, body) => {
            for d in decls.iter_mut() {
                for c in d
                    .contract
                    .requires
                    .iter_mut()
                    .chain(d.contract.ensures.iter_mut())
                    .chain(d.contract.variant.iter_mut())
                {
                    f(c);
                }
                f(&mut d.body);
            }
            f(body);
        }
        ExprKind::Match(s, arms) => {
            f(s);
            arms.iter_mut().for_each(|a| f(&mut a.body));
        }
        ExprKind::Construct(_, args) | ExprKind::Tuple(args) => {
            for a in args.iter_mut() {
                f(a);
            }
        }
        ExprKind::RefNew(x) | ExprKind::RefGet(x) | ExprKind::UnOp(_, x) | ExprKind::Old(x) => f(x),
        ExprKind::If(c, t, e) => {
            f(c);
            f(t);
            f(e);
        }
        ExprKind::Forall(_, b) => f(b),
        ExprKind::PostProj(g, args) | ExprKind::PreProj(g, args) => {
            f(g);
            for a in args.iter_mut() {
                f(a);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lam(body: Expr) -> Expr {
        Expr::new(ExprKind::Lambda(Lambda {
            param: Pattern::var("x"),
            param_ty: None,
            contract: Contract::default(),
            body: Box::new(body),
            site: SiteId(99),
            kont_name: None,
        }))
    }

    fn program_of(body: Expr) -> Program {
        Program {
            decls: vec![Decl::Let {
                rec: false,
                funs: vec![FunDecl {
                    name: "f".into(),
                    params: vec![],
                    ret: Type::Int,
                    contract: Contract::default(),
                    body,
                    lemma: false,
                    span: Span::default(),
                }],
            }],
        }
    }

    #[test]
    fn sites_numbered_in_textual_order() {
        let body = Expr::new(ExprKind::Tuple(vec![
            lam(lam(Expr::var("x"))),
            lam(Expr::var("x")),
        ]));
        let p = fresh_site_ids(program_of(body));
        let ids: Vec<usize> = p.lambdas().iter().map(|l| l.site.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn no_lambdas_is_identity() {
        let p = program_of(Expr::int(3));
        assert_eq!(fresh_site_ids(p.clone()), p);
    }

    #[test]
    fn free_vars_exclude_binders_and_result() {
        let f = Expr::new(ExprKind::Forall(
            vec![("x".into(), None)],
            Box::new(Expr::binop(BinOp::Eq, Expr::var("x"), Expr::var("y"))),
        ));
        assert_eq!(formula_free_vars(&f), vec!["y".to_string()]);
        assert!(formula_free_vars(&Expr::bool(true)).is_empty());
        let r = Expr::binop(BinOp::Eq, Expr::new(ExprKind::Result), Expr::var("z"));
        assert_eq!(formula_free_vars(&r), vec!["z".to_string()]);
    }

    #[test]
    fn substitution_respects_shadowing() {
        let e = Expr::let_(Pattern::var("a"), Expr::var("a"), Expr::var("a"));
        let out = substitute(&e, &|n| (n == "a").then(|| Expr::int(1)));
        assert_eq!(
            out,
            Expr::let_(Pattern::var("a"), Expr::int(1), Expr::var("a"))
        );
    }
}

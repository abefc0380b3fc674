//! Random syntax trees for round-trip testing of the printer and parser.
//!
//! Programs are syntactically valid but not necessarily well typed. They
//! stay within what the parser can produce: `result` and `old` only inside
//! ensures clauses, tuples of at least two elements, applications headed by
//! a variable, no variable named `post` or `pre`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::*;

const VARS: &[&str] = &[
    "x", "y", "k", "t", "acc", "l", "r", "n", "h", "f", "go", "s'", "x_1",
];
const CTORS: &[&str] = &[
    "Leaf", "Node", "Kid", "Kleft", "Kright", "Const", "Sub", "C",
];
const TYPES: &[&str] = &["tree", "kont", "exp", "list", "state"];
const TVARS: &[&str] = &["a", "b"];

pub struct ProgramGen {
    rng: ChaCha8Rng,
    fresh: usize,
}

#[derive(Clone, Copy)]
struct Cx {
    depth: u32,
    ensures: bool,
}

impl Cx {
    fn deeper(self) -> Cx {
        Cx {
            depth: self.depth.saturating_sub(1),
            ..self
        }
    }
}

impl ProgramGen {
    pub fn new(seed: u64) -> Self {
        ProgramGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            fresh: 0,
        }
    }

    /// A program of 1 to 6 declarations with lambda sites numbered as the
    /// parser numbers them.
    pub fn program(&mut self) -> Program {
        let n = self.rng.gen_range(1..=6);
        let decls = (0..n).map(|_| self.decl()).collect();
        fresh_site_ids(Program { decls })
    }

    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs.choose(&mut self.rng).unwrap()
    }

    /// A name unique within the program, for declarations.
    fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }

    fn var(&mut self) -> String {
        self.pick(VARS).to_string()
    }

    fn decl(&mut self) -> Decl {
        match self.rng.gen_range(0..10) {
            0..=1 => {
                let n = self.rng.gen_range(1..=2);
                Decl::Types((0..n).map(|_| self.type_def()).collect())
            }
            2..=3 => {
                let predicate = self.rng.gen_bool(0.4);
                Decl::Logic(LogicDecl {
                    name: self.fresh("g"),
                    params: self.params(),
                    ret: if predicate { None } else { Some(self.ty(2)) },
                    body: self.expr(Cx {
                        depth: 3,
                        ensures: false,
                    }),
                    measure: !predicate && self.rng.gen_bool(0.2),
                    span: Span::default(),
                })
            }
            4 => Decl::Lemma {
                name: self.fresh("lem"),
                body: self.expr(Cx {
                    depth: 3,
                    ensures: false,
                }),
            },
            _ => {
                let rec = self.rng.gen_bool(0.5);
                let n = if rec { self.rng.gen_range(1..=2) } else { 1 };
                Decl::Let {
                    rec,
                    funs: (0..n).map(|_| self.fun_decl(rec, 3)).collect(),
                }
            }
        }
    }

    fn type_def(&mut self) -> TypeDef {
        let params: Vec<String> = TVARS[..self.rng.gen_range(0..=2)]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let body = if self.rng.gen_bool(0.25) {
            TypeDefBody::Alias(self.ty(2))
        } else {
            let n = self.rng.gen_range(1..=3);
            TypeDefBody::Adt(
                (0..n)
                    .map(|_| Constructor {
                        name: {
                            let c = self.pick(CTORS);
                            self.fresh(c)
                        },
                        fields: (0..self.rng.gen_range(0..=3)).map(|_| self.ty(1)).collect(),
                    })
                    .collect(),
            )
        };
        TypeDef {
            name: {
                let t = self.pick(TYPES);
                self.fresh(t)
            },
            params,
            body,
        }
    }

    fn ty(&mut self, depth: u32) -> Type {
        let leaf = depth == 0 || self.rng.gen_bool(0.4);
        if leaf {
            return match self.rng.gen_range(0..5) {
                0 => Type::Int,
                1 => Type::Bool,
                2 => Type::Unit,
                3 => Type::Var(self.pick(TVARS).to_string()),
                _ => Type::adt(self.pick(TYPES), vec![]),
            };
        }
        let d = depth - 1;
        match self.rng.gen_range(0..5) {
            0 => Type::arrow(self.ty(d), self.ty(d)),
            1 => Type::Tuple((0..self.rng.gen_range(2..=3)).map(|_| self.ty(d)).collect()),
            2 => Type::Ref(Box::new(self.ty(d))),
            3 => Type::Set(Box::new(self.ty(d))),
            _ => Type::adt(
                self.pick(TYPES),
                (0..self.rng.gen_range(1..=2)).map(|_| self.ty(d)).collect(),
            ),
        }
    }

    fn params(&mut self) -> Vec<Param> {
        (0..self.rng.gen_range(0..=3))
            .map(|_| {
                let name = self.var();
                Param {
                    name,
                    ty: self.ty(2),
                }
            })
            .collect()
    }

    fn fun_decl(&mut self, lemma_ok: bool, depth: u32) -> FunDecl {
        let mut params = self.params();
        if params.is_empty() {
            // A declaration needs at least one parameter to be a function.
            params.push(Param::new("x", Type::Int));
        }
        FunDecl {
            name: self.fresh("f"),
            params,
            ret: self.ty(2),
            contract: self.contract(false),
            body: self.expr(Cx {
                depth,
                ensures: false,
            }),
            lemma: lemma_ok && self.rng.gen_bool(0.1),
            span: Span::default(),
        }
    }

    fn contract(&mut self, lambda: bool) -> Contract {
        let mut c = Contract::default();
        for _ in 0..self.rng.gen_range(0..=2) {
            c.requires.push(self.expr(Cx {
                depth: 2,
                ensures: false,
            }));
        }
        for _ in 0..self.rng.gen_range(0..=2) {
            c.ensures.push(self.expr(Cx {
                depth: 2,
                ensures: true,
            }));
        }
        if !lambda {
            for _ in 0..self.rng.gen_range(0..=1) {
                c.variant.push(self.expr(Cx {
                    depth: 1,
                    ensures: false,
                }));
            }
        }
        c
    }

    fn pattern(&mut self, depth: u32) -> Pattern {
        let kind = match self.rng.gen_range(0..if depth == 0 { 3 } else { 5 }) {
            0 => PatternKind::Wild,
            1 => PatternKind::Var(self.var()),
            2 => PatternKind::Unit,
            3 => PatternKind::Tuple(
                (0..self.rng.gen_range(2..=3))
                    .map(|_| self.pattern(depth - 1))
                    .collect(),
            ),
            _ => PatternKind::Construct(
                self.pick(CTORS).to_string(),
                (0..self.rng.gen_range(0..=3))
                    .map(|_| self.pattern(depth - 1))
                    .collect(),
            ),
        };
        Pattern::new(kind)
    }

    fn leaf(&mut self, cx: Cx) -> Expr {
        match self.rng.gen_range(0..if cx.ensures { 8 } else { 6 }) {
            0 | 1 => Expr::var(&self.var()),
            2 => Expr::int(self.rng.gen_range(-20..=100)),
            3 => Expr::bool(self.rng.gen()),
            4 => Expr::unit(),
            5 => Expr::construct(self.pick(CTORS), vec![]),
            6 => Expr::new(ExprKind::Result),
            _ => Expr::new(ExprKind::Old(Box::new(Expr::var(&self.var())))),
        }
    }

    fn exprs(&mut self, cx: Cx, lo: usize, hi: usize) -> Vec<Expr> {
        (0..self.rng.gen_range(lo..=hi))
            .map(|_| self.expr(cx))
            .collect()
    }

    fn expr(&mut self, cx: Cx) -> Expr {
        if cx.depth == 0 || self.rng.gen_bool(0.2) {
            return self.leaf(cx);
        }
        let d = cx.deeper();
        const OPS: [BinOp; 13] = [
            BinOp::Add,
            BinOp::Sub,
            BinOp::Mul,
            BinOp::Lt,
            BinOp::Le,
            BinOp::Gt,
            BinOp::Ge,
            BinOp::Eq,
            BinOp::Ne,
            BinOp::And,
            BinOp::Or,
            BinOp::Implies,
            BinOp::ExtEq,
        ];
        let kind = match self.rng.gen_range(0..21) {
            0 => {
                let param_ty = self.rng.gen_bool(0.5).then(|| self.ty(1));
                let param = if param_ty.is_some() {
                    Pattern::var(&self.var())
                } else {
                    self.pattern(1)
                };
                ExprKind::Lambda(Lambda {
                    param,
                    param_ty,
                    contract: self.contract(true),
                    body: Box::new(self.expr(d)),
                    site: SiteId(0),
                    kont_name: self.rng.gen_bool(0.3).then(|| self.pick(CTORS).to_string()),
                })
            }
            1 | 2 => ExprKind::App(Box::new(Expr::var(&self.var())), self.exprs(d, 1, 3)),
            3 => ExprKind::Let(
                self.pattern(2),
                Box::new(self.expr(d)),
                Box::new(self.expr(d)),
            ),
            4 => {
                let n = self.rng.gen_range(1..=2);
                let funs = (0..n).map(|_| self.fun_decl(false, d.depth)).collect();
                ExprKind::LetRec(funs, Box::new(self.expr(d)))
            }
            5 => {
                let arms = (0..self.rng.gen_range(1..=3))
                    .map(|_| MatchArm {
                        pattern: self.pattern(2),
                        body: self.expr(d),
                    })
                    .collect();
                ExprKind::Match(Box::new(self.expr(d)), arms)
            }
            6 => ExprKind::Construct(self.pick(CTORS).to_string(), self.exprs(d, 1, 3)),
            7 => ExprKind::Tuple(self.exprs(d, 2, 3)),
            8 => ExprKind::RefNew(Box::new(self.expr(d))),
            9 => ExprKind::RefGet(Box::new(self.expr(d))),
            10 => ExprKind::RefSet(Box::new(self.expr(d)), Box::new(self.expr(d))),
            11 => ExprKind::Seq(Box::new(self.expr(d)), Box::new(self.expr(d))),
            12 => ExprKind::If(
                Box::new(self.expr(d)),
                Box::new(self.expr(d)),
                Box::new(self.expr(d)),
            ),
            13..=15 => {
                let op = *OPS.choose(&mut self.rng).unwrap();
                ExprKind::BinOp(op, Box::new(self.expr(d)), Box::new(self.expr(d)))
            }
            16 => {
                let op = if self.rng.gen() { UnOp::Not } else { UnOp::Neg };
                ExprKind::UnOp(op, Box::new(self.expr(d)))
            }
            17 => ExprKind::Absurd,
            18 => {
                let vs = (0..self.rng.gen_range(1..=2))
                    .map(|_| {
                        let v = self.var();
                        (v, self.rng.gen_bool(0.7).then(|| self.ty(1)))
                    })
                    .collect();
                ExprKind::Forall(vs, Box::new(self.expr(d)))
            }
            19 => ExprKind::PostProj(Box::new(Expr::var(&self.var())), self.exprs(d, 1, 3)),
            _ => ExprKind::PreProj(Box::new(Expr::var(&self.var())), self.exprs(d, 1, 2)),
        };
        Expr::new(kind)
    }
}

/// `n` random programs from `seed`.
pub fn programs(seed: u64, n: usize) -> Vec<Program> {
    let mut g = ProgramGen::new(seed);
    (0..n).map(|_| g.program()).collect()
}

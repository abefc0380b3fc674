//! Specification side of the transform.
//!
//! Each group gets a `post` predicate that dispatches on the continuation
//! and restates the postcondition of the corresponding lambda, with
//! `post f ..` projections inside it turned into recursive predicate
//! calls. Effectful groups take the state before and after the call as two
//! extra arguments. `apply` is then specified by a single clause:
//!
//! ```text
//! ensures { post k arg result }                    (pure)
//! ensures { post k arg (old !h) !h () }            (effectful, unit result)
//! ```
//!
//! A lambda without an ensures clause gets `result = body` when its body is
//! a logic term. Sites of an effectful group that do not touch the state
//! additionally promise to leave it unchanged.

use crate::ast::*;
use crate::defunc::{ctor_pattern, Cx, LambdaGroup, PredMode, SiteInfo};
use crate::diag::Diagnostic;
use crate::typecheck::BUILTINS;

type Res<T> = std::result::Result<T, Diagnostic>;

/// Postcondition of a site in source vocabulary.
pub(crate) fn site_post(cx: &Cx, g: &LambdaGroup, s: &SiteInfo) -> Res<Expr> {
    Ok(conjoin(
        post_parts(cx, g, s)?
            .into_iter()
            .map(|p| p.into_owned())
            .collect(),
    ))
}

pub(crate) fn site_pre(cx: &Cx, site: SiteId) -> Expr {
    cx.lambdas[&site].contract.requires_formula()
}

/// Clauses of a site postcondition. Explicit clauses are borrowed from the
/// program so that their types stay available.
fn post_parts<'a>(
    cx: &Cx<'a>,
    g: &LambdaGroup,
    s: &SiteInfo,
) -> Res<Vec<std::borrow::Cow<'a, Expr>>> {
    use std::borrow::Cow;
    let l = cx.lambdas[&s.site];
    let mut parts: Vec<Cow<Expr>> = l.contract.ensures.iter().map(Cow::Borrowed).collect();
    if parts.is_empty() {
        if !is_logic_term(cx, &l.body) {
            return Err(Diagnostic::error(
                "anonymous function needs an explicit ensures: its body is not a logic term",
                l.body.span,
            ));
        }
        if cx.an.resolve(&g.codomain) != Type::Unit {
            parts.push(Cow::Owned(Expr::binop(
                BinOp::Eq,
                Expr::new(ExprKind::Result),
                (*l.body).clone(),
            )));
        }
    }
    if g.effectful && !s.effectful {
        for r in &g.state {
            let op = if matches!(r.ty, Type::Set(_)) {
                BinOp::ExtEq
            } else {
                BinOp::Eq
            };
            let read = Expr::new(ExprKind::RefGet(Box::new(Expr::var(&r.name))));
            parts.push(Cow::Owned(Expr::binop(
                op,
                Expr::new(ExprKind::Old(Box::new(read.clone()))),
                read,
            )));
        }
    }
    Ok(parts)
}

/// Effect-free and built from variables, constructors, logic functions and
/// operators.
fn is_logic_term(cx: &Cx, e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Var(n) => {
            cx.tp.fun_sig(n).is_none() && !matches!(cx.tp.type_of(e), Some(Type::Ref(_)))
        }
        ExprKind::Const(_) => true,
        ExprKind::App(head, args) => {
            let known = match &head.kind {
                ExprKind::Var(f) => {
                    cx.tp.fun_sig(f).is_none()
                        && (cx.tp.program().find_logic(f).is_some()
                            || BUILTINS.contains(&f.as_str()))
                }
                _ => false,
            };
            known && args.iter().all(|a| is_logic_term(cx, a))
        }
        ExprKind::Construct(_, xs) | ExprKind::Tuple(xs) => xs.iter().all(|x| is_logic_term(cx, x)),
        ExprKind::Let(_, a, b) | ExprKind::BinOp(_, a, b) => {
            is_logic_term(cx, a) && is_logic_term(cx, b)
        }
        ExprKind::UnOp(_, x) => is_logic_term(cx, x),
        ExprKind::If(c, a, b) => {
            is_logic_term(cx, c) && is_logic_term(cx, a) && is_logic_term(cx, b)
        }
        ExprKind::Match(x, arms) => {
            is_logic_term(cx, x) && arms.iter().all(|a| is_logic_term(cx, &a.body))
        }
        _ => false,
    }
}

fn pred_mode(g: &LambdaGroup, result: bool) -> (PredMode, Vec<Pattern>, Vec<Pattern>) {
    let n = &g.names;
    let state: Vec<String> = g.state.iter().map(|r| r.name.clone()).collect();
    let (old, cur, old_pats, cur_pats) = if state.len() == 1 {
        (
            vec![Expr::var(&n.old)],
            vec![Expr::var(&n.cur)],
            vec![],
            vec![],
        )
    } else {
        let o: Vec<String> = state.iter().map(|h| format!("{}_{h}", n.old)).collect();
        let c: Vec<String> = state.iter().map(|h| format!("{}_{h}", n.cur)).collect();
        (
            o.iter().map(|x| Expr::var(x)).collect(),
            c.iter().map(|x| Expr::var(x)).collect(),
            o.iter().map(|x| Pattern::var(x)).collect(),
            c.iter().map(|x| Pattern::var(x)).collect(),
        )
    };
    let mode = PredMode {
        state,
        old,
        cur,
        result: result.then(|| n.result.clone()),
    };
    (mode, old_pats, cur_pats)
}

/// Destructures tuple states at the top of a predicate arm.
fn unpack(body: Expr, name: &str, pats: &[Pattern]) -> Expr {
    if pats.is_empty() {
        return body;
    }
    Expr::let_(
        Pattern::new(PatternKind::Tuple(pats.to_vec())),
        Expr::var(name),
        body,
    )
}

pub(crate) fn post_predicate(cx: &Cx, g: &LambdaGroup) -> Res<LogicDecl> {
    let n = &g.names;
    let mut namer = cx.canonical_namer(g);
    let mut params = vec![
        Param::new(&n.k, cx.kont_type(g, &mut namer)),
        Param::new(&n.arg, cx.render(&g.domain, &mut namer)),
    ];
    if g.effectful {
        let st = cx.state_type(g, &mut namer);
        params.push(Param::new(&n.old, st.clone()));
        params.push(Param::new(&n.cur, st));
    }
    params.push(Param::new(&n.result, cx.render(&g.codomain, &mut namer)));
    let (mode, old_pats, cur_pats) = pred_mode(g, true);
    let mut arms = Vec::new();
    for s in &g.sites {
        let mut clauses = Vec::new();
        for p in post_parts(cx, g, s)? {
            clauses.push(cx.rw(&p, &s.scope, &mut namer, Some(&mode))?);
        }
        let body = unpack(
            unpack(conjoin(clauses), &n.cur, &cur_pats),
            &n.old,
            &old_pats,
        );
        arms.push(MatchArm {
            pattern: ctor_pattern(s),
            body: Expr::let_(s.param.clone(), Expr::var(&n.arg), body),
        });
    }
    Ok(LogicDecl {
        name: n.post.clone(),
        params,
        ret: None,
        body: Expr::new(ExprKind::Match(Box::new(Expr::var(&n.k)), arms)),
        measure: false,
        span: Span::default(),
    })
}

pub(crate) fn pre_predicate(cx: &Cx, g: &LambdaGroup) -> Res<LogicDecl> {
    let n = &g.names;
    let mut namer = cx.canonical_namer(g);
    let mut params = vec![
        Param::new(&n.k, cx.kont_type(g, &mut namer)),
        Param::new(&n.arg, cx.render(&g.domain, &mut namer)),
    ];
    if g.effectful {
        params.push(Param::new(&n.cur, cx.state_type(g, &mut namer)));
    }
    let (mode, _, cur_pats) = pred_mode(g, false);
    let mut arms = Vec::new();
    for s in &g.sites {
        let l = cx.lambdas[&s.site];
        let mut clauses = Vec::new();
        for r in &l.contract.requires {
            clauses.push(cx.rw(r, &s.scope, &mut namer, Some(&mode))?);
        }
        let body = unpack(conjoin(clauses), &n.cur, &cur_pats);
        arms.push(MatchArm {
            pattern: ctor_pattern(s),
            body: Expr::let_(s.param.clone(), Expr::var(&n.arg), body),
        });
    }
    Ok(LogicDecl {
        name: n.pre.clone(),
        params,
        ret: None,
        body: Expr::new(ExprKind::Match(Box::new(Expr::var(&n.k)), arms)),
        measure: false,
        span: Span::default(),
    })
}

/// `!h`, or a tuple of reads for several references.
fn state_read(g: &LambdaGroup) -> Expr {
    let mut reads: Vec<Expr> = g
        .state
        .iter()
        .map(|r| Expr::new(ExprKind::RefGet(Box::new(Expr::var(&r.name)))))
        .collect();
    if reads.len() == 1 {
        reads.pop().unwrap()
    } else {
        Expr::new(ExprKind::Tuple(reads))
    }
}

fn old_state_read(g: &LambdaGroup) -> Expr {
    match state_read(g).kind {
        ExprKind::Tuple(xs) => Expr::new(ExprKind::Tuple(
            xs.into_iter()
                .map(|x| Expr::new(ExprKind::Old(Box::new(x))))
                .collect(),
        )),
        k => Expr::new(ExprKind::Old(Box::new(Expr::new(k)))),
    }
}

pub(crate) fn apply_contract(cx: &Cx, g: &LambdaGroup) -> Contract {
    let n = &g.names;
    let k = Expr::var(&n.k);
    let arg = Expr::var(&n.arg);
    let result = if cx.an.resolve(&g.codomain) == Type::Unit {
        Expr::unit()
    } else {
        Expr::new(ExprKind::Result)
    };
    let mut post_args = vec![k.clone(), arg.clone()];
    let mut pre_args = vec![k.clone(), arg];
    if g.effectful {
        post_args.push(old_state_read(g));
        post_args.push(state_read(g));
        pre_args.push(state_read(g));
    }
    post_args.push(result);
    Contract {
        requires: if g.has_pre {
            vec![Expr::call(&n.pre, pre_args)]
        } else {
            vec![]
        },
        ensures: vec![Expr::call(&n.post, post_args)],
        variant: g
            .measures
            .iter()
            .map(|m| Expr::call(m, vec![k.clone()]))
            .collect(),
    }
}

//! Effect analysis and grouping of lambda sites by arrow type.
//!
//! Sites whose arrow types unify end up in one group: they become the
//! constructors of one continuation type and share one `apply`. Unifying
//! (rather than comparing up to renaming) is what lets the identity
//! continuation `int -> int` join the `int -> 'b` continuations of a
//! polymorphic CPS function, as in the height example.
//!
//! A site is effectful when its body or contract reaches a mutable
//! reference bound outside of it, directly, through a called function, or
//! by applying a continuation of an effectful group. One effectful site
//! makes the whole group effectful.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::ast::*;
use crate::diag::{Diagnostic, Error, Result};
use crate::typecheck::{show, TypedProgram};

/// Arrow type with variables renamed `a0, a1, ..` in first-occurrence
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormalizedArrow {
    pub domain: Type,
    pub codomain: Type,
}

impl NormalizedArrow {
    pub fn new(domain: &Type, codomain: &Type) -> Self {
        let arrow = Type::arrow(domain.clone(), codomain.clone());
        let vars = arrow.type_vars();
        let renamed = arrow.subst(&|v| {
            vars.iter()
                .position(|x| x == v)
                .map(|i| Type::Var(format!("a{i}")))
        });
        match renamed {
            Type::Arrow(d, c) => NormalizedArrow {
                domain: *d,
                codomain: *c,
            },
            _ => unreachable!(),
        }
    }
}

/// A mutable reference read or written by continuations.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRef {
    pub name: String,
    /// Type of the referenced value (qualified variables).
    pub ty: Type,
}

#[derive(Clone, Debug)]
pub struct Group {
    pub id: usize,
    /// Domain and codomain after unification of all members.
    pub domain: Type,
    pub codomain: Type,
    /// Lambda sites in id order.
    pub sites: Vec<SiteId>,
    pub effectful: bool,
    /// References in declaration order; empty for pure groups.
    pub state: Vec<StateRef>,
    /// Type alias whose body is this arrow type, if any.
    pub alias: Option<String>,
}

impl Group {
    pub fn normalized(&self) -> NormalizedArrow {
        NormalizedArrow::new(&self.domain, &self.codomain)
    }
}

/// Unifier over types in which every variable is flexible.
#[derive(Clone, Debug, Default)]
pub struct Unifier {
    map: HashMap<String, Type>,
}

impl Unifier {
    fn shallow(&self, t: &Type) -> Type {
        let mut t = t.clone();
        while let Type::Var(v) = &t {
            match self.map.get(v) {
                Some(n) => t = n.clone(),
                None => break,
            }
        }
        t
    }

    pub fn apply(&self, t: &Type) -> Type {
        match self.shallow(t) {
            Type::Adt(n, a) => Type::Adt(n, a.iter().map(|x| self.apply(x)).collect()),
            Type::Tuple(a) => Type::Tuple(a.iter().map(|x| self.apply(x)).collect()),
            Type::Arrow(a, b) => Type::arrow(self.apply(&a), self.apply(&b)),
            Type::Ref(a) => Type::Ref(Box::new(self.apply(&a))),
            Type::Set(a) => Type::Set(Box::new(self.apply(&a))),
            t => t,
        }
    }

    fn occurs(&self, v: &str, t: &Type) -> bool {
        self.apply(t).type_vars().iter().any(|x| x == v)
    }

    pub fn unify(&mut self, a: &Type, b: &Type) -> bool {
        let (a, b) = (self.shallow(a), self.shallow(b));
        match (&a, &b) {
            (Type::Var(x), Type::Var(y)) if x == y => true,
            (Type::Var(x), t) | (t, Type::Var(x)) => {
                if self.occurs(x, t) {
                    return false;
                }
                self.map.insert(x.clone(), t.clone());
                true
            }
            (Type::Int, Type::Int) | (Type::Bool, Type::Bool) | (Type::Unit, Type::Unit) => true,
            (Type::Adt(n, xs), Type::Adt(m, ys)) => {
                n == m && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify(x, y))
            }
            (Type::Tuple(xs), Type::Tuple(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify(x, y))
            }
            (Type::Arrow(a1, b1), Type::Arrow(a2, b2)) => self.unify(a1, a2) && self.unify(b1, b2),
            (Type::Ref(x), Type::Ref(y)) | (Type::Set(x), Type::Set(y)) => self.unify(x, y),
            _ => false,
        }
    }

    /// Unifies only if it succeeds, leaving `self` untouched otherwise.
    pub fn try_unify(&mut self, a: &Type, b: &Type) -> bool {
        let mut trial = self.clone();
        if trial.unify(a, b) {
            *self = trial;
            true
        } else {
            false
        }
    }

    pub fn unifiable(&self, a: &Type, b: &Type) -> bool {
        self.clone().unify(a, b)
    }
}

/// Result of [`analyze`].
#[derive(Clone, Debug)]
pub struct Analysis {
    pub groups: Vec<Group>,
    pub site_group: BTreeMap<SiteId, usize>,
    /// References accessed by each site, in declaration order.
    pub site_effects: BTreeMap<SiteId, Vec<String>>,
    /// References accessed by each program function.
    pub fun_effects: BTreeMap<String, Vec<String>>,
    unifier: Unifier,
}

impl Analysis {
    /// Applies the substitution computed while grouping.
    pub fn resolve(&self, t: &Type) -> Type {
        self.unifier.apply(t)
    }

    /// Group of an arrow type occurring in the program.
    pub fn group_of(&self, arrow: &Type) -> Option<usize> {
        let a = self.resolve(arrow);
        self.groups.iter().position(|g| {
            let rep = Type::arrow(g.domain.clone(), g.codomain.clone());
            self.unifier.unifiable(&rep, &a)
        })
    }

    pub fn group_of_site(&self, site: SiteId) -> &Group {
        &self.groups[self.site_group[&site]]
    }
}

/// Effect analysis followed by grouping; checks projection arities and the
/// closed-world requirement.
pub fn analyze(tp: &TypedProgram) -> Result<Analysis> {
    let (mut groups, unifier, origins) = group_arrows(tp);
    let mut diags = Vec::new();
    for (g, span) in groups.iter().zip(&origins) {
        if g.sites.is_empty() {
            diags.push(Diagnostic::error(
                format!(
                    "values of type {} are not created by any anonymous function of the \
                     program; defunctionalization is a global transformation and needs \
                     every function value to be known",
                    show(&Type::arrow(g.domain.clone(), g.codomain.clone()))
                ),
                *span,
            ));
        }
    }
    if !diags.is_empty() {
        return Err(Error::Diagnostics(diags));
    }
    let mut site_group = BTreeMap::new();
    for g in &groups {
        for s in &g.sites {
            site_group.insert(*s, g.id);
        }
    }
    let mut analysis = Analysis {
        groups: Vec::new(),
        site_group,
        site_effects: BTreeMap::new(),
        fun_effects: BTreeMap::new(),
        unifier,
    };
    analysis.groups = std::mem::take(&mut groups);
    effects(tp, &mut analysis);
    for p in tp.projections() {
        let Some(g) = analysis.group_of(&p.fn_type) else {
            continue;
        };
        let g = &analysis.groups[g];
        if p.is_stateful() && !g.effectful {
            diags.push(Diagnostic::error(
                format!(
                    "`{}` used with state arguments, but functions of type {} do not access state",
                    if p.post { "post" } else { "pre" },
                    show(&p.fn_type)
                ),
                p.span,
            ));
        } else if !p.is_stateful() && g.effectful {
            diags.push(Diagnostic::error(
                format!(
                    "`{}` used without state arguments, but functions of type {} access {}",
                    if p.post { "post" } else { "pre" },
                    show(&p.fn_type),
                    g.state
                        .iter()
                        .map(|r| r.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
                p.span,
            ));
        }
    }
    if !diags.is_empty() {
        return Err(Error::Diagnostics(diags));
    }
    Ok(analysis)
}

/// Every arrow type and its nested arrows.
fn arrows_in(t: &Type, out: &mut Vec<Type>) {
    match t {
        Type::Arrow(a, b) => {
            out.push(t.clone());
            arrows_in(a, out);
            arrows_in(b, out);
        }
        Type::Adt(_, ts) | Type::Tuple(ts) => ts.iter().for_each(|x| arrows_in(x, out)),
        Type::Ref(x) | Type::Set(x) => arrows_in(x, out),
        _ => {}
    }
}

fn group_arrows(tp: &TypedProgram) -> (Vec<Group>, Unifier, Vec<Span>) {
    let mut u = Unifier::default();
    let mut groups: Vec<Group> = Vec::new();
    let mut origins = Vec::new();
    let mut place =
        |u: &mut Unifier, groups: &mut Vec<Group>, t: &Type, site: Option<SiteId>, span: Span| {
            for g in groups.iter_mut() {
                let rep = Type::arrow(g.domain.clone(), g.codomain.clone());
                if u.try_unify(&rep, t) {
                    if let Some(s) = site {
                        g.sites.push(s);
                    }
                    return;
                }
            }
            let (d, c) = match t {
                Type::Arrow(d, c) => ((**d).clone(), (**c).clone()),
                _ => unreachable!(),
            };
            groups.push(Group {
                id: groups.len(),
                domain: d,
                codomain: c,
                sites: site.into_iter().collect(),
                effectful: false,
                state: Vec::new(),
                alias: None,
            });
            origins.push(span);
        };
    for (id, s) in tp.sites() {
        let span = tp
            .program()
            .lambdas()
            .into_iter()
            .find(|l| l.site == *id)
            .map(|l| l.body.span)
            .unwrap_or_default();
        place(&mut u, &mut groups, &s.arrow(), Some(*id), span);
    }
    let mut others: Vec<(Type, Span)> = Vec::new();
    let mut names: Vec<&String> = tp.funs().keys().collect();
    names.sort();
    for n in names {
        let sig = &tp.funs()[n];
        let span = tp.program().find_fun(n).map(|f| f.span).unwrap_or_default();
        let mut arrows = Vec::new();
        sig.params
            .iter()
            .chain([&sig.ret])
            .for_each(|t| arrows_in(t, &mut arrows));
        others.extend(arrows.into_iter().map(|a| (a, span)));
    }
    for t in tp.program().type_defs() {
        let mut arrows = Vec::new();
        match &t.body {
            TypeDefBody::Adt(cs) => cs.iter().flat_map(|c| &c.fields).for_each(|f| {
                arrows_in(&tp.resolve(f, &t.name).unwrap_or(Type::Unit), &mut arrows)
            }),
            TypeDefBody::Alias(body) => arrows_in(
                &tp.resolve(body, &t.name).unwrap_or(Type::Unit),
                &mut arrows,
            ),
        }
        others.extend(arrows.into_iter().map(|a| (a, Span::default())));
    }
    let mut node_arrows: Vec<Type> = Vec::new();
    tp.program().for_each_expr(&mut |e| {
        if let Some(t) = tp.type_of(e) {
            arrows_in(t, &mut node_arrows);
        }
    });
    others.extend(node_arrows.into_iter().map(|a| (a, Span::default())));
    for (t, span) in others {
        place(&mut u, &mut groups, &t, None, span);
    }
    for g in &mut groups {
        g.domain = u.apply(&g.domain);
        g.codomain = u.apply(&g.codomain);
    }
    for t in tp.program().type_defs() {
        if let TypeDefBody::Alias(body) = &t.body {
            let Ok(resolved) = tp.resolve(body, &t.name) else {
                continue;
            };
            if !matches!(resolved, Type::Arrow(..)) {
                continue;
            }
            let r = u.apply(&resolved);
            for g in &mut groups {
                let rep = Type::arrow(g.domain.clone(), g.codomain.clone());
                if g.alias.is_none() && u.unifiable(&rep, &r) {
                    g.alias = Some(t.name.clone());
                    break;
                }
            }
        }
    }
    (groups, u, origins)
}

/// Free variables of `e` whose recorded type is a reference, minus those
/// bound by a `let` inside `e`.
fn free_refs(tp: &TypedProgram, e: &Expr, params: &[String], out: &mut BTreeSet<String>) {
    let mut inner = BTreeSet::new();
    e.walk(&mut |x| match &x.kind {
        ExprKind::Let(p, ..) => inner.extend(p.binders()),
        ExprKind::Var(n) if matches!(tp.type_of(x), Some(Type::Ref(_))) && !params.contains(n) => {
            out.insert(n.clone());
        }
        _ => {}
    });
    out.retain(|n| !inner.contains(n));
}

enum Callee {
    Fun(String),
    Group(usize),
}

fn callees(tp: &TypedProgram, a: &Analysis, e: &Expr, out: &mut Vec<Callee>) {
    e.walk(&mut |x| {
        if let ExprKind::App(head, _) = &x.kind {
            match (tp.type_of(head), &head.kind) {
                (Some(t @ Type::Arrow(..)), _) => {
                    if let Some(g) = a.group_of(t) {
                        out.push(Callee::Group(g));
                    }
                }
                (None, ExprKind::Var(n)) if tp.fun_sig(n).is_some() => {
                    out.push(Callee::Fun(n.clone()))
                }
                _ => {}
            }
        }
    });
}

fn effects(tp: &TypedProgram, a: &mut Analysis) {
    let p = tp.program();
    // Direct accesses and call edges.
    let mut fun_direct: BTreeMap<String, (BTreeSet<String>, Vec<Callee>)> = BTreeMap::new();
    for f in p.all_funs() {
        let params: Vec<String> = f.params.iter().map(|x| x.name.clone()).collect();
        let mut refs = BTreeSet::new();
        let mut calls = Vec::new();
        free_refs(tp, &f.body, &params, &mut refs);
        f.contract
            .for_each_clause(&mut |c| free_refs(tp, c, &params, &mut refs));
        callees(tp, a, &f.body, &mut calls);
        fun_direct.insert(f.name.clone(), (refs, calls));
    }
    let mut site_direct: BTreeMap<SiteId, (BTreeSet<String>, Vec<Callee>, bool)> = BTreeMap::new();
    for l in p.lambdas() {
        let params = l.param.binders();
        let mut refs = BTreeSet::new();
        let mut calls = Vec::new();
        free_refs(tp, &l.body, &params, &mut refs);
        let mut old = false;
        l.contract.for_each_clause(&mut |c| {
            free_refs(tp, c, &params, &mut refs);
            c.walk(&mut |x| old |= matches!(x.kind, ExprKind::Old(_)));
        });
        callees(tp, a, &l.body, &mut calls);
        site_direct.insert(l.site, (refs, calls, old));
    }

    let mut fun_acc: BTreeMap<String, BTreeSet<String>> = fun_direct
        .iter()
        .map(|(k, v)| (k.clone(), v.0.clone()))
        .collect();
    let mut site_acc: BTreeMap<SiteId, BTreeSet<String>> =
        site_direct.iter().map(|(k, v)| (*k, v.0.clone())).collect();
    let mut group_acc: Vec<BTreeSet<String>> = vec![BTreeSet::new(); a.groups.len()];
    let mut group_eff: Vec<bool> = vec![false; a.groups.len()];
    let close = |calls: &[Callee],
                 acc: &mut BTreeSet<String>,
                 fun_acc: &BTreeMap<String, BTreeSet<String>>,
                 group_acc: &[BTreeSet<String>],
                 group_eff: &[bool]| {
        let mut eff = false;
        for c in calls {
            match c {
                Callee::Fun(n) => acc.extend(fun_acc.get(n).into_iter().flatten().cloned()),
                Callee::Group(g) => {
                    acc.extend(group_acc[*g].iter().cloned());
                    eff |= group_eff[*g];
                }
            }
        }
        eff
    };
    loop {
        let before = (fun_acc.clone(), site_acc.clone(), group_eff.clone());
        for (name, (_, calls)) in &fun_direct {
            let mut acc = fun_acc[name].clone();
            close(calls, &mut acc, &fun_acc, &group_acc, &group_eff);
            fun_acc.insert(name.clone(), acc);
        }
        for g in &a.groups {
            let mut eff = false;
            let mut acc = BTreeSet::new();
            for s in &g.sites {
                let (_, calls, old) = &site_direct[s];
                let mut sa = site_acc[s].clone();
                let via = close(calls, &mut sa, &fun_acc, &group_acc, &group_eff);
                eff |= via || *old || !sa.is_empty();
                acc.extend(sa.iter().cloned());
                site_acc.insert(*s, sa);
            }
            group_acc[g.id] = acc;
            group_eff[g.id] = eff;
        }
        if before == (fun_acc.clone(), site_acc.clone(), group_eff.clone()) {
            break;
        }
    }

    let order = ref_order(tp);
    let sorted = |set: &BTreeSet<String>| -> Vec<String> {
        let mut v: Vec<String> = set.iter().cloned().collect();
        v.sort_by_key(|n| order.iter().position(|(m, _)| m == n).unwrap_or(usize::MAX));
        v
    };
    for g in &mut a.groups {
        g.effectful = group_eff[g.id];
        g.state = sorted(&group_acc[g.id])
            .into_iter()
            .map(|name| {
                let ty = order
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t.clone())
                    .unwrap_or(Type::Unit);
                StateRef { name, ty }
            })
            .collect();
    }
    a.site_effects = site_acc.iter().map(|(k, v)| (*k, sorted(v))).collect();
    a.fun_effects = fun_acc
        .iter()
        .map(|(k, v)| (k.clone(), sorted(v)))
        .collect();
}

/// Reference variables with their value types, in binding order.
fn ref_order(tp: &TypedProgram) -> Vec<(String, Type)> {
    let mut out: Vec<(String, Type)> = Vec::new();
    let p = tp.program();
    for f in p.all_funs() {
        if let Some(sig) = tp.fun_sig(&f.name) {
            for (param, t) in f.params.iter().zip(&sig.params) {
                if let Type::Ref(inner) = t {
                    out.push((param.name.clone(), (**inner).clone()));
                }
            }
        }
    }
    p.for_each_expr(&mut |e| {
        if let ExprKind::Let(pat, bound, _) = &e.kind {
            if let (PatternKind::Var(n), Some(Type::Ref(inner))) = (&pat.kind, tp.type_of(bound)) {
                if !out.iter().any(|(m, _)| m == n) {
                    out.push((n.clone(), (**inner).clone()));
                }
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::typecheck::typecheck;

    fn analysis(src: &str) -> Result<Analysis> {
        let tp = typecheck(parse(src).unwrap())?;
        analyze(&tp)
    }

    #[test]
    fn normalization_is_idempotent() {
        let n = NormalizedArrow::new(&Type::Var("x@f".into()), &Type::Var("y@f".into()));
        assert_eq!(n.domain, Type::Var("a0".into()));
        assert_eq!(NormalizedArrow::new(&n.domain, &n.codomain), n);
    }

    #[test]
    fn distinct_arrows_make_distinct_groups() {
        let a = analysis(
            "let f (k: int -> int) (j: bool -> bool) : int = k 0\n\
             let g (u: unit) : int = f (fun x -> x) (fun b -> b)",
        )
        .unwrap();
        assert_eq!(a.groups.len(), 2);
        assert!(a.groups.iter().all(|g| !g.effectful));
    }

    #[test]
    fn unknown_function_values_are_rejected() {
        let m = analysis("let f (k: int -> int) : int = k 0")
            .unwrap_err()
            .to_string();
        assert!(m.contains("global transformation"), "{m}");
    }

    #[test]
    fn old_in_ensures_makes_a_site_effectful() {
        let a = analysis(
            "let f (u: unit) : int = let h = ref 0 in \
             let g = (fun x -> ensures { old !h = !h } x) in g 1",
        )
        .unwrap();
        assert!(a.groups[0].effectful);
        assert_eq!(a.groups[0].state[0].name, "h");
    }
}

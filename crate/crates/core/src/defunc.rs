//! The defunctionalization transform.
//!
//! For every group of lambda sites ([`crate::analysis`]) this synthesizes a
//! continuation type with one constructor per site (fields are the captured
//! variables), an `apply` function dispatching on it, and the `post` (and
//! when needed `pre`) predicate of [`crate::specgen`]. Lambdas become
//! constructor applications and applications of function values become
//! calls to `apply`.
//!
//! Placement of generated declarations: the continuation type goes right
//! before the first declaration that needs it (or replaces a type alias for
//! the arrow type), predicates go before the first program function of the
//! group, and `apply` joins the recursive block of the functions it calls
//! back, becoming local when it uses local functions or variables.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::analysis::{analyze, Analysis, NormalizedArrow, StateRef};
use crate::ast::*;
use crate::diag::{Diagnostic, Error, Result};
use crate::specgen;
use crate::typecheck::{scope_of, typecheck, unqualify, TypedProgram, BUILTINS};

/// One lambda site of a group.
#[derive(Clone, Debug)]
pub struct SiteInfo {
    pub site: SiteId,
    pub constructor: String,
    /// Captured variables in first-occurrence order (body, then contract),
    /// with their types (qualified variables).
    pub captures: Vec<(String, Type)>,
    pub param: Pattern,
    /// Top-level declaration containing the site.
    pub scope: String,
    /// Whether the site itself touches state (as opposed to being in an
    /// effectful group).
    pub effectful: bool,
}

/// Names of the declarations generated for a group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNames {
    pub kont: String,
    pub apply: String,
    pub post: String,
    pub pre: String,
    pub state: String,
    /// Parameter names of `apply` and the predicates.
    pub k: String,
    pub arg: String,
    pub old: String,
    pub cur: String,
    pub result: String,
}

#[derive(Clone, Debug)]
pub struct LambdaGroup {
    pub id: usize,
    pub arrow: NormalizedArrow,
    pub domain: Type,
    pub codomain: Type,
    pub effectful: bool,
    pub state: Vec<StateRef>,
    pub sites: Vec<SiteInfo>,
    pub names: GroupNames,
    /// Type variables (qualified) that parameterize the continuation type.
    pub type_params: Vec<String>,
    /// `[@measure]` functions over the continuation type.
    pub measures: Vec<String>,
    /// The continuation type replaces a type alias of the same name.
    pub from_alias: bool,
    /// A `pre` predicate is generated.
    pub has_pre: bool,
}

impl LambdaGroup {
    pub fn site(&self, id: SiteId) -> Option<&SiteInfo> {
        self.sites.iter().find(|s| s.site == id)
    }
}

/// Output of [`defunctionalize`].
#[derive(Clone, Debug)]
pub struct Defunctionalized {
    pub program: Program,
    pub groups: Vec<LambdaGroup>,
    /// Postcondition of every site in source vocabulary, explicit or
    /// inferred, including frame conditions.
    pub site_posts: BTreeMap<SiteId, Expr>,
    /// Precondition of every site (`true` when absent).
    pub site_pres: BTreeMap<SiteId, Expr>,
    /// Generated declaration name to the sites it comes from.
    pub provenance: BTreeMap<String, Vec<SiteId>>,
    pub warnings: Vec<Diagnostic>,
}

impl Defunctionalized {
    pub fn group_of_site(&self, site: SiteId) -> Option<&LambdaGroup> {
        self.groups.iter().find(|g| g.site(site).is_some())
    }
}

/// Typechecks, analyzes and transforms a parsed program.
pub fn defunctionalize_program(p: Program) -> Result<(TypedProgram, Defunctionalized)> {
    let tp = typecheck(p)?;
    let d = defunctionalize(&tp)?;
    Ok((tp, d))
}

/// Transforms a typechecked program into an equivalent first-order one.
pub fn defunctionalize(tp: &TypedProgram) -> Result<Defunctionalized> {
    let an = analyze(tp)?;
    let mut cx = Cx::new(tp, &an)?;
    if cx.groups.is_empty() {
        return Ok(Defunctionalized {
            program: tp.program().clone(),
            groups: Vec::new(),
            site_posts: BTreeMap::new(),
            site_pres: BTreeMap::new(),
            provenance: BTreeMap::new(),
            warnings: vec![Diagnostic::warning(
                "nothing to defunctionalize: the program has no anonymous functions",
                Span::default(),
            )],
        });
    }
    let mut site_posts = BTreeMap::new();
    let mut site_pres = BTreeMap::new();
    let mut diags = Vec::new();
    for g in &cx.groups {
        for s in &g.sites {
            match specgen::site_post(&cx, g, s) {
                Ok(f) => {
                    site_posts.insert(s.site, f);
                }
                Err(d) => diags.push(d),
            }
            site_pres.insert(s.site, specgen::site_pre(&cx, s.site));
        }
    }
    if !diags.is_empty() {
        return Err(Error::Diagnostics(diags));
    }
    cx.site_posts = site_posts.clone();
    let program = cx.assemble()?;
    let mut provenance = BTreeMap::new();
    for g in &cx.groups {
        let sites: Vec<SiteId> = g.sites.iter().map(|s| s.site).collect();
        let mut names = vec![&g.names.kont, &g.names.apply, &g.names.post];
        if g.has_pre {
            names.push(&g.names.pre);
        }
        if g.effectful {
            names.push(&g.names.state);
        }
        for n in names {
            provenance.insert(n.clone(), sites.clone());
        }
    }
    if program.order() != Order::FirstOrder {
        return Err(Error::Internal(
            "a function value or arrow type survived defunctionalization".into(),
        ));
    }
    if let Err(e) = typecheck(program.clone()) {
        return Err(Error::Internal(format!(
            "the generated program does not typecheck:\n{e}"
        )));
    }
    Ok(Defunctionalized {
        program,
        groups: cx.groups.clone(),
        site_posts,
        site_pres,
        provenance,
        warnings: std::mem::take(&mut cx.warnings),
    })
}

/// Transformation context shared with [`crate::specgen`].
pub(crate) struct Cx<'a> {
    pub tp: &'a TypedProgram,
    pub an: &'a Analysis,
    pub groups: Vec<LambdaGroup>,
    pub lambdas: BTreeMap<SiteId, &'a Lambda>,
    pub site_posts: BTreeMap<SiteId, Expr>,
    pub warnings: Vec<Diagnostic>,
}

/// Assigns written names to qualified type variables for one scope.
#[derive(Clone, Debug)]
pub(crate) struct Namer {
    scope: Option<String>,
    map: HashMap<String, String>,
    used: HashSet<String>,
}

impl Namer {
    /// Variables of `scope` keep their written names.
    fn scoped(scope: &str, tys: &[Type]) -> Self {
        let mut used = HashSet::new();
        for t in tys {
            for v in t.type_vars() {
                if scope_of(&v) == Some(scope) {
                    used.insert(unqualify(&v).to_string());
                }
            }
        }
        Namer {
            scope: Some(scope.to_string()),
            map: HashMap::new(),
            used,
        }
    }

    /// Names for a generated declaration: written names when distinct.
    fn canonical(vars: &[String]) -> Self {
        let mut n = Namer {
            scope: None,
            map: HashMap::new(),
            used: HashSet::new(),
        };
        for v in vars {
            n.name(v);
        }
        n
    }

    fn name(&mut self, v: &str) -> String {
        if let Some(n) = self.map.get(v) {
            return n.clone();
        }
        let written = unqualify(v);
        let own = self.scope.is_some() && scope_of(v) == self.scope.as_deref();
        let n = if own
            || (self.scope.is_none() && !v.starts_with('?') && !self.used.contains(written))
        {
            written.to_string()
        } else {
            (0..)
                .map(|i| {
                    let c = (b'a' + (i % 26) as u8) as char;
                    if i < 26 {
                        c.to_string()
                    } else {
                        format!("{c}{}", i / 26)
                    }
                })
                .find(|c| !self.used.contains(c))
                .unwrap()
        };
        self.used.insert(n.clone());
        self.map.insert(v.to_string(), n.clone());
        n
    }
}

/// How state and `result` are spelled while translating a formula into a
/// predicate body.
#[derive(Clone, Debug)]
pub(crate) struct PredMode {
    pub state: Vec<String>,
    /// Replacement for `old !h` per state reference.
    pub old: Vec<Expr>,
    /// Replacement for `!h` per state reference.
    pub cur: Vec<Expr>,
    pub result: Option<String>,
}

impl<'a> Cx<'a> {
    fn new(tp: &'a TypedProgram, an: &'a Analysis) -> Result<Self> {
        let lambdas: BTreeMap<SiteId, &Lambda> = tp
            .program()
            .lambdas()
            .into_iter()
            .map(|l| (l.site, l))
            .collect();
        let mut cx = Cx {
            tp,
            an,
            groups: Vec::new(),
            lambdas,
            site_posts: BTreeMap::new(),
            warnings: Vec::new(),
        };
        cx.groups = cx.build_groups()?;
        Ok(cx)
    }

    fn is_global_name(&self, n: &str) -> bool {
        let generated = self.groups.iter().any(|g| {
            let x = &g.names;
            [&x.apply, &x.post, &x.pre].iter().any(|m| *m == n)
        });
        generated
            || self.tp.fun_sig(n).is_some()
            || self.tp.program().find_logic(n).is_some()
            || BUILTINS.contains(&n)
    }

    /// Type of the first occurrence of variable `n` inside `e`.
    fn var_type(&self, e: &Expr, n: &str) -> Option<Type> {
        let mut found = None;
        e.walk(&mut |x| {
            if found.is_none() {
                if let ExprKind::Var(m) = &x.kind {
                    if m == n {
                        found = self.tp.type_of(x).cloned();
                    }
                }
            }
        });
        found
    }

    fn build_groups(&self) -> Result<Vec<LambdaGroup>> {
        let p = self.tp.program();
        let mut taken: HashSet<String> = HashSet::new();
        for t in p.type_defs() {
            taken.insert(t.name.clone());
            if let TypeDefBody::Adt(cs) = &t.body {
                taken.extend(cs.iter().map(|c| c.name.clone()));
            }
        }
        taken.extend(p.logic_decls().map(|l| l.name.clone()));
        taken.extend(p.all_funs().iter().map(|f| f.name.clone()));
        taken.extend(BUILTINS.iter().map(|s| s.to_string()));
        let fresh = |base: &str, i: usize, taken: &mut HashSet<String>| {
            let name = (i..)
                .map(|n| {
                    if n == 0 {
                        base.to_string()
                    } else {
                        format!("{base}{n}")
                    }
                })
                .find(|c| !taken.contains(c))
                .unwrap();
            taken.insert(name.clone());
            name
        };

        let mut diags = Vec::new();
        let mut groups = Vec::new();
        let mut ctor_names: HashSet<String> = HashSet::new();
        for (i, g) in self.an.groups.iter().enumerate() {
            let state_names: Vec<&str> = g.state.iter().map(|r| r.name.as_str()).collect();
            let mut sites = Vec::new();
            for s in &g.sites {
                let l = self.lambdas[s];
                let params = l.param.binders();
                let mut names = free_vars(&l.body);
                let mut contract = Vec::new();
                l.contract.for_each_clause(&mut |c| contract.push(c));
                for c in &contract {
                    for n in free_vars(c) {
                        if !names.contains(&n) {
                            names.push(n);
                        }
                    }
                }
                let lam_expr_types = |n: &str| {
                    self.var_type(&l.body, n)
                        .or_else(|| contract.iter().find_map(|c| self.var_type(c, n)))
                };
                let mut captures = Vec::new();
                for n in names {
                    if params.contains(&n) || state_names.contains(&n.as_str()) {
                        continue;
                    }
                    let Some(ty) = lam_expr_types(&n) else {
                        continue;
                    };
                    if self.is_global_name(&n)
                        && !matches!(ty, Type::Ref(_))
                        && self.var_is_global(l, &n)
                    {
                        continue;
                    }
                    if matches!(ty, Type::Ref(_)) {
                        diags.push(Diagnostic::error(
                            format!(
                                "anonymous function captures reference `{n}`, which is not part of the state of its group"
                            ),
                            l.body.span,
                        ));
                        continue;
                    }
                    captures.push((n, self.an.resolve(&ty)));
                }
                let constructor = l.kont_name.clone().unwrap_or_else(|| format!("K{}", s.0));
                if taken.contains(&constructor) || !ctor_names.insert(constructor.clone()) {
                    diags.push(Diagnostic::error(
                        format!("constructor name `{constructor}` is already in use"),
                        l.body.span,
                    ));
                }
                sites.push(SiteInfo {
                    site: *s,
                    constructor,
                    captures,
                    param: l.param.clone(),
                    scope: self
                        .tp
                        .site(*s)
                        .map(|t| t.scope.clone())
                        .unwrap_or_default(),
                    effectful: !self.an.site_effects[s].is_empty() || mentions_old(l),
                });
            }
            let kont = match &g.alias {
                Some(a) => a.clone(),
                None => fresh("kont", i, &mut taken),
            };
            let capture_names: HashSet<&str> = sites
                .iter()
                .flat_map(|s| s.captures.iter().map(|(n, _)| n.as_str()))
                .collect();
            let avoid = |base: &str| {
                (0..)
                    .map(|n| {
                        if n == 0 {
                            base.to_string()
                        } else {
                            format!("{base}{n}")
                        }
                    })
                    .find(|c| !capture_names.contains(c.as_str()))
                    .unwrap()
            };
            let k = self
                .kont_param_name(g.id)
                .unwrap_or_else(|| "k".to_string());
            let names = GroupNames {
                kont,
                apply: fresh("apply", i, &mut taken),
                post: fresh("post", i, &mut taken),
                pre: fresh("pre", i, &mut taken),
                state: fresh("state", i, &mut taken),
                k,
                arg: avoid("arg"),
                old: avoid("old"),
                cur: avoid("cur"),
                result: avoid("result"),
            };
            let has_pre = g
                .sites
                .iter()
                .any(|s| !self.lambdas[s].contract.requires.is_empty())
                || self
                    .tp
                    .projections()
                    .iter()
                    .any(|p| !p.post && self.an.group_of(&p.fn_type) == Some(g.id));
            groups.push(LambdaGroup {
                id: g.id,
                arrow: g.normalized(),
                domain: g.domain.clone(),
                codomain: g.codomain.clone(),
                effectful: g.effectful,
                state: g
                    .state
                    .iter()
                    .map(|r| StateRef {
                        name: r.name.clone(),
                        ty: self.an.resolve(&r.ty),
                    })
                    .collect(),
                sites,
                names,
                type_params: Vec::new(),
                measures: Vec::new(),
                from_alias: g.alias.is_some(),
                has_pre,
            });
        }
        if !diags.is_empty() {
            return Err(Error::Diagnostics(diags));
        }
        // Type parameters: variables of capture types, of the arrow, and of
        // captured continuations of other groups, up to a fixpoint.
        loop {
            let mut changed = false;
            for gi in 0..groups.len() {
                let mut vars = groups[gi].type_params.clone();
                let add = |v: String, vars: &mut Vec<String>| {
                    if !vars.contains(&v) {
                        vars.push(v);
                    }
                };
                let mut tys: Vec<Type> = groups[gi]
                    .sites
                    .iter()
                    .flat_map(|s| s.captures.iter().map(|(_, t)| t.clone()))
                    .collect();
                tys.push(groups[gi].domain.clone());
                tys.push(groups[gi].codomain.clone());
                for t in &tys {
                    self.param_vars(t, &groups, &mut |v| add(v, &mut vars));
                }
                if vars != groups[gi].type_params {
                    groups[gi].type_params = vars;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for g in &mut groups {
            g.measures = p
                .logic_decls()
                .filter(|l| l.measure)
                .filter(|l| {
                    matches!(l.params.first().map(|x| &x.ty), Some(Type::Adt(n, _)) if *n == g.names.kont)
                })
                .map(|l| l.name.clone())
                .collect();
        }
        Ok(groups)
    }

    /// Whether `n` inside lambda `l` refers to a global declaration rather
    /// than a local variable: it has no recorded variable type of its own.
    fn var_is_global(&self, l: &Lambda, n: &str) -> bool {
        let mut global = true;
        let mut check = |e: &Expr| {
            e.walk(&mut |x| {
                if let ExprKind::Var(m) = &x.kind {
                    if m == n && self.tp.type_of(x).is_some() && self.tp.fun_sig(n).is_none() {
                        global = false;
                    }
                }
            })
        };
        check(&l.body);
        l.contract.for_each_clause(&mut check);
        global
    }

    fn param_vars(&self, t: &Type, groups: &[LambdaGroup], f: &mut dyn FnMut(String)) {
        match t {
            Type::Var(v) => f(v.clone()),
            Type::Arrow(..) => {
                if let Some(g) = self.an.group_of(t) {
                    for v in &groups[g].type_params {
                        f(v.clone());
                    }
                }
            }
            Type::Adt(_, ts) | Type::Tuple(ts) => {
                ts.iter().for_each(|x| self.param_vars(x, groups, f))
            }
            Type::Ref(x) | Type::Set(x) => self.param_vars(x, groups, f),
            _ => {}
        }
    }

    /// Name of the first function parameter whose type is in the group.
    fn kont_param_name(&self, g: usize) -> Option<String> {
        for f in self.tp.program().all_funs() {
            let sig = self.tp.fun_sig(&f.name)?;
            for (p, t) in f.params.iter().zip(&sig.params) {
                if matches!(t, Type::Arrow(..)) && self.an.group_of(t) == Some(g) {
                    return Some(p.name.clone());
                }
            }
        }
        None
    }

    pub(crate) fn group_of_type(&self, t: &Type) -> Option<&LambdaGroup> {
        self.an.group_of(t).map(|g| &self.groups[g])
    }

    pub(crate) fn group_of_site(&self, s: SiteId) -> &LambdaGroup {
        &self.groups[self.an.site_group[&s]]
    }

    // -----------------------------------------------------------------
    // Types

    /// First-order rendering of a qualified type.
    pub(crate) fn render(&self, t: &Type, namer: &mut Namer) -> Type {
        let t = self.an.resolve(t);
        self.render_resolved(&t, namer)
    }

    fn render_resolved(&self, t: &Type, namer: &mut Namer) -> Type {
        match t {
            Type::Var(v) => Type::Var(namer.name(v)),
            Type::Arrow(..) => match self.group_of_type(t) {
                Some(g) => Type::Adt(
                    g.names.kont.clone(),
                    g.type_params
                        .iter()
                        .map(|v| Type::Var(namer.name(v)))
                        .collect(),
                ),
                None => t.clone(),
            },
            Type::Adt(n, ts) => Type::Adt(
                n.clone(),
                ts.iter().map(|x| self.render_resolved(x, namer)).collect(),
            ),
            Type::Tuple(ts) => {
                Type::Tuple(ts.iter().map(|x| self.render_resolved(x, namer)).collect())
            }
            Type::Ref(x) => Type::Ref(Box::new(self.render_resolved(x, namer))),
            Type::Set(x) => Type::Set(Box::new(self.render_resolved(x, namer))),
            _ => t.clone(),
        }
    }

    /// Rewrites a type annotation written in `scope`. Annotations without
    /// arrows whose variables were not instantiated by grouping are kept
    /// verbatim (aliases included).
    fn annotation(&self, written: &Type, scope: &str, namer: &mut Namer) -> Type {
        let Ok(q) = self.tp.resolve(written, scope) else {
            return written.clone();
        };
        if q.contains_arrow() || self.an.resolve(&q) != q {
            self.render(&q, namer)
        } else {
            written.clone()
        }
    }

    pub(crate) fn canonical_namer(&self, g: &LambdaGroup) -> Namer {
        Namer::canonical(&g.type_params)
    }

    pub(crate) fn kont_type(&self, g: &LambdaGroup, namer: &mut Namer) -> Type {
        Type::Adt(
            g.names.kont.clone(),
            g.type_params
                .iter()
                .map(|v| Type::Var(namer.name(v)))
                .collect(),
        )
    }

    /// The state type as seen through `namer`: the referenced value type,
    /// or a tuple of them.
    pub(crate) fn state_value_type(&self, g: &LambdaGroup, namer: &mut Namer) -> Type {
        let mut ts: Vec<Type> = g.state.iter().map(|r| self.render(&r.ty, namer)).collect();
        if ts.len() == 1 {
            ts.pop().unwrap()
        } else {
            Type::Tuple(ts)
        }
    }

    fn state_vars(&self, g: &LambdaGroup) -> Vec<String> {
        let mut vars = Vec::new();
        for r in &g.state {
            for v in self.an.resolve(&r.ty).type_vars() {
                if !vars.contains(&v) {
                    vars.push(v);
                }
            }
        }
        vars
    }

    /// `state 'a ..` applied to the variables of the state type.
    pub(crate) fn state_type(&self, g: &LambdaGroup, namer: &mut Namer) -> Type {
        Type::Adt(
            g.names.state.clone(),
            self.state_vars(g)
                .iter()
                .map(|v| Type::Var(namer.name(v)))
                .collect(),
        )
    }

    fn kont_decl(&self, g: &LambdaGroup) -> TypeDef {
        let mut namer = self.canonical_namer(g);
        let params = g.type_params.iter().map(|v| namer.name(v)).collect();
        let ctors = g
            .sites
            .iter()
            .map(|s| Constructor {
                name: s.constructor.clone(),
                fields: s
                    .captures
                    .iter()
                    .map(|(_, t)| self.render(t, &mut namer))
                    .collect(),
            })
            .collect();
        TypeDef {
            name: g.names.kont.clone(),
            params,
            body: TypeDefBody::Adt(ctors),
        }
    }

    fn state_decl(&self, g: &LambdaGroup) -> TypeDef {
        let mut namer = self.canonical_namer(g);
        let vars = self.state_vars(g);
        let params = vars.iter().map(|v| namer.name(v)).collect();
        TypeDef {
            name: g.names.state.clone(),
            params,
            body: TypeDefBody::Alias(self.state_value_type(g, &mut namer)),
        }
    }

    // -----------------------------------------------------------------
    // Expressions

    /// Rewrites an expression of declaration `scope`. In predicate mode,
    /// state reads, `old` and `result` are replaced by predicate parameters.
    pub(crate) fn rw(
        &self,
        e: &Expr,
        scope: &str,
        namer: &mut Namer,
        mode: Option<&PredMode>,
    ) -> std::result::Result<Expr, Diagnostic> {
        let span = e.span;
        let go = |x: &Expr, namer: &mut Namer| self.rw(x, scope, namer, mode);
        let kind = match &e.kind {
            ExprKind::Lambda(l) => {
                let s = self.group_of_site(l.site).site(l.site).expect("site");
                ExprKind::Construct(
                    s.constructor.clone(),
                    s.captures.iter().map(|(n, _)| Expr::var(n)).collect(),
                )
            }
            ExprKind::App(head, args) => {
                let dynamic = matches!(self.tp.type_of(head), Some(Type::Arrow(..)));
                if dynamic {
                    let g = self
                        .group_of_type(self.tp.type_of(head).unwrap())
                        .ok_or_else(|| {
                            Diagnostic::error("function value of unknown origin", span)
                        })?;
                    let mut new_args = vec![go(head, namer)?];
                    for a in args {
                        new_args.push(go(a, namer)?);
                    }
                    ExprKind::App(Box::new(Expr::var(&g.names.apply)), new_args)
                } else {
                    let mut new_args = Vec::new();
                    for a in args {
                        new_args.push(go(a, namer)?);
                    }
                    ExprKind::App(Box::new(go(head, namer)?), new_args)
                }
            }
            ExprKind::PostProj(f, args) | ExprKind::PreProj(f, args) => {
                let post = matches!(e.kind, ExprKind::PostProj(..));
                let g = self
                    .tp
                    .type_of(f)
                    .and_then(|t| self.group_of_type(t))
                    .ok_or_else(|| {
                        Diagnostic::error("projection of a term that is not a function value", span)
                    })?;
                let name = if post { &g.names.post } else { &g.names.pre };
                let mut new_args = vec![go(f, namer)?];
                for a in args {
                    new_args.push(go(a, namer)?);
                }
                ExprKind::App(Box::new(Expr::var(name)), new_args)
            }
            ExprKind::Old(x) if mode.is_some() => {
                let m = mode.unwrap();
                return self.state_term(x, m, true).ok_or_else(|| {
                    Diagnostic::error("`old` of a term that is not part of the state", span)
                });
            }
            ExprKind::RefGet(x) if mode.is_some() => {
                let m = mode.unwrap();
                match self.state_term(e, m, false) {
                    Some(t) => return Ok(t),
                    None => ExprKind::RefGet(Box::new(go(x, namer)?)),
                }
            }
            ExprKind::Result if mode.and_then(|m| m.result.as_ref()).is_some() => {
                return Ok(Expr::var(mode.unwrap().result.as_ref().unwrap()))
            }
            ExprKind::LetRec(decls, body) => {
                let mut new = Vec::new();
                for d in decls {
                    new.push(self.rw_fun(d, scope, namer)?);
                }
                ExprKind::LetRec(new, Box::new(go(body, namer)?))
            }
            ExprKind::Forall(vs, body) => {
                let vs = vs
                    .iter()
                    .map(|(v, t)| {
                        (
                            v.clone(),
                            t.as_ref().map(|t| self.annotation(t, scope, namer)),
                        )
                    })
                    .collect();
                ExprKind::Forall(vs, Box::new(go(body, namer)?))
            }
            ExprKind::Var(_) | ExprKind::Const(_) | ExprKind::Absurd | ExprKind::Result => {
                e.kind.clone()
            }
            ExprKind::Let(p, a, b) => {
                ExprKind::Let(p.clone(), Box::new(go(a, namer)?), Box::new(go(b, namer)?))
            }
            ExprKind::Match(s, arms) => {
                let s = go(s, namer)?;
                let mut new = Vec::new();
                for a in arms {
                    new.push(MatchArm {
                        pattern: a.pattern.clone(),
                        body: go(&a.body, namer)?,
                    });
                }
                ExprKind::Match(Box::new(s), new)
            }
            ExprKind::Construct(c, args) => ExprKind::Construct(
                c.clone(),
                args.iter()
                    .map(|a| go(a, namer))
                    .collect::<std::result::Result<_, _>>()?,
            ),
            ExprKind::Tuple(args) => ExprKind::Tuple(
                args.iter()
                    .map(|a| go(a, namer))
                    .collect::<std::result::Result<_, _>>()?,
            ),
            ExprKind::RefNew(x) => ExprKind::RefNew(Box::new(go(x, namer)?)),
            ExprKind::RefGet(x) => ExprKind::RefGet(Box::new(go(x, namer)?)),
            ExprKind::RefSet(a, b) => {
                ExprKind::RefSet(Box::new(go(a, namer)?), Box::new(go(b, namer)?))
            }
            ExprKind::Seq(a, b) => ExprKind::Seq(Box::new(go(a, namer)?), Box::new(go(b, namer)?)),
            ExprKind::If(c, t, f) => ExprKind::If(
                Box::new(go(c, namer)?),
                Box::new(go(t, namer)?),
                Box::new(go(f, namer)?),
            ),
            ExprKind::BinOp(op, a, b) => {
                ExprKind::BinOp(*op, Box::new(go(a, namer)?), Box::new(go(b, namer)?))
            }
            ExprKind::UnOp(op, x) => ExprKind::UnOp(*op, Box::new(go(x, namer)?)),
            ExprKind::Old(x) => ExprKind::Old(Box::new(go(x, namer)?)),
        };
        Ok(Expr::with_span(kind, span))
    }

    /// `!h` (or `old !h`) for a state reference, or a tuple of those.
    fn state_term(&self, e: &Expr, m: &PredMode, old: bool) -> Option<Expr> {
        match &e.kind {
            ExprKind::RefGet(x) => match &x.kind {
                ExprKind::Var(h) => {
                    let i = m.state.iter().position(|s| s == h)?;
                    Some(if old {
                        m.old[i].clone()
                    } else {
                        m.cur[i].clone()
                    })
                }
                _ => None,
            },
            ExprKind::Tuple(es) => Some(Expr::new(ExprKind::Tuple(
                es.iter()
                    .map(|x| self.state_term(x, m, old))
                    .collect::<Option<_>>()?,
            ))),
            _ => None,
        }
    }

    fn rw_fun(
        &self,
        f: &FunDecl,
        scope: &str,
        namer: &mut Namer,
    ) -> std::result::Result<FunDecl, Diagnostic> {
        let params = f
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                ty: self.annotation(&p.ty, scope, namer),
            })
            .collect();
        let ret = self.annotation(&f.ret, scope, namer);
        let mut contract = Contract::default();
        for r in &f.contract.requires {
            contract.requires.push(self.rw(r, scope, namer, None)?);
        }
        for r in &f.contract.ensures {
            contract.ensures.push(self.rw(r, scope, namer, None)?);
        }
        if self.variant_supported(f) {
            for v in &f.contract.variant {
                contract.variant.push(self.rw(v, scope, namer, None)?);
            }
        }
        Ok(FunDecl {
            name: f.name.clone(),
            params,
            ret,
            contract,
            body: self.rw(&f.body, scope, namer, None)?,
            lemma: f.lemma,
            span: f.span,
        })
    }

    /// A variant that uses a measure over a continuation type that is not
    /// generated cannot be carried over.
    fn variant_supported(&self, f: &FunDecl) -> bool {
        let p = self.tp.program();
        let mut ok = true;
        for v in &f.contract.variant {
            v.walk(&mut |x| {
                if let Some((n, _)) = x.call_head() {
                    if let Some(l) = p.find_logic(n).filter(|l| l.measure) {
                        let kont = match l.params.first().map(|p| &p.ty) {
                            Some(Type::Adt(k, _)) => k.clone(),
                            _ => String::new(),
                        };
                        if !self.groups.iter().any(|g| g.names.kont == kont) {
                            ok = false;
                        }
                    }
                }
            });
        }
        ok
    }

    fn namer_for(&self, scope: &str) -> Namer {
        let mut tys = Vec::new();
        for sig in self.tp.funs().values().filter(|s| s.scope == scope) {
            tys.extend(sig.params.iter().cloned());
            tys.push(sig.ret.clone());
        }
        Namer::scoped(scope, &tys)
    }

    // -----------------------------------------------------------------
    // Assembly

    fn apply_arms(&self, g: &LambdaGroup) -> std::result::Result<Vec<MatchArm>, Diagnostic> {
        let mut arms = Vec::new();
        for s in &g.sites {
            let l = self.lambdas[&s.site];
            let mut namer = self.namer_for(&s.scope);
            let body = self.rw(&l.body, &s.scope, &mut namer, None)?;
            arms.push(MatchArm {
                pattern: ctor_pattern(s),
                body: Expr::let_(s.param.clone(), Expr::var(&g.names.arg), body),
            });
        }
        Ok(arms)
    }

    fn apply_decl(&self, g: &LambdaGroup, arms: Vec<MatchArm>, namer: &mut Namer) -> FunDecl {
        let n = &g.names;
        FunDecl {
            name: n.apply.clone(),
            params: vec![
                Param::new(&n.k, self.kont_type(g, namer)),
                Param::new(&n.arg, self.render(&g.domain, namer)),
            ],
            ret: self.render(&g.codomain, namer),
            contract: specgen::apply_contract(self, g),
            body: Expr::new(ExprKind::Match(Box::new(Expr::var(&n.k)), arms)),
            lemma: false,
            span: Span::default(),
        }
    }

    fn assemble(&mut self) -> Result<Program> {
        let p = self.tp.program();
        let mut diags = Vec::new();
        // Rewrite existing declarations.
        let mut decls: Vec<Decl> = Vec::new();
        for d in &p.decls {
            let nd = match d {
                Decl::Let { rec, funs } => {
                    let mut new = Vec::new();
                    for f in funs {
                        let mut namer = self.namer_for(&f.name);
                        match self.rw_fun(f, &f.name, &mut namer) {
                            Ok(f) => new.push(f),
                            Err(e) => diags.push(e),
                        }
                    }
                    Decl::Let {
                        rec: *rec,
                        funs: new,
                    }
                }
                Decl::Types(ts) => Decl::Types(
                    ts.iter()
                        .map(|t| {
                            if let Some(g) = self
                                .groups
                                .iter()
                                .find(|g| g.from_alias && g.names.kont == t.name)
                            {
                                return self.kont_decl(g);
                            }
                            let mut namer = Namer::scoped(&t.name, &[]);
                            TypeDef {
                                name: t.name.clone(),
                                params: t.params.clone(),
                                body: match &t.body {
                                    TypeDefBody::Adt(cs) => TypeDefBody::Adt(
                                        cs.iter()
                                            .map(|c| Constructor {
                                                name: c.name.clone(),
                                                fields: c
                                                    .fields
                                                    .iter()
                                                    .map(|f| {
                                                        self.annotation(f, &t.name, &mut namer)
                                                    })
                                                    .collect(),
                                            })
                                            .collect(),
                                    ),
                                    TypeDefBody::Alias(a) => {
                                        TypeDefBody::Alias(self.annotation(a, &t.name, &mut namer))
                                    }
                                },
                            }
                        })
                        .collect(),
                ),
                // The continuation type now exists: a plain function.
                Decl::Logic(l) if l.measure => Decl::Logic(LogicDecl {
                    measure: false,
                    ..l.clone()
                }),
                other => other.clone(),
            };
            decls.push(nd);
        }
        if !diags.is_empty() {
            return Err(Error::Diagnostics(diags));
        }

        let mut before: BTreeMap<usize, Vec<Decl>> = BTreeMap::new();
        let mut konts_placed: HashSet<usize> = HashSet::new();
        let kont_groups = self.kont_blocks();
        for block in kont_groups {
            let members: Vec<&LambdaGroup> = block.iter().map(|i| &self.groups[*i]).collect();
            if members.iter().all(|g| g.from_alias) {
                continue;
            }
            let at = members
                .iter()
                .filter_map(|g| self.first_reference(g, true))
                .min()
                .unwrap_or(decls.len());
            let defs: Vec<TypeDef> = members
                .iter()
                .filter(|g| !g.from_alias)
                .map(|g| self.kont_decl(g))
                .collect();
            before.entry(at).or_default().push(Decl::Types(defs));
            konts_placed.extend(block);
        }
        for g in &self.groups {
            let at = self.first_reference(g, false).unwrap_or(decls.len());
            let slot = before.entry(at).or_default();
            if g.effectful {
                slot.push(Decl::Types(vec![self.state_decl(g)]));
            }
            slot.push(Decl::Logic(
                specgen::post_predicate(self, g).map_err(|d| Error::Diagnostics(vec![d]))?,
            ));
            if g.has_pre {
                slot.push(Decl::Logic(
                    specgen::pre_predicate(self, g).map_err(|d| Error::Diagnostics(vec![d]))?,
                ));
            }
        }

        // Place each apply.
        for g in self.groups.clone() {
            let arms = self
                .apply_arms(&g)
                .map_err(|d| Error::Diagnostics(vec![d]))?;
            let probe = self.apply_decl(&g, arms.clone(), &mut self.canonical_namer(&g));
            let refs = referenced_names(&probe);
            let local_fun = refs
                .iter()
                .find(|n| self.tp.fun_sig(n).is_some_and(|s| s.local));
            let local_var = refs.iter().find(|n| !self.is_global_name(n));
            if let Some(f) = local_fun.or(local_var) {
                let owner = decls.iter().position(|d| decl_binds_local(d, f));
                let Some(i) = owner else {
                    return Err(Error::Internal(format!("cannot place `{}`", g.names.apply)));
                };
                let scope = match &decls[i] {
                    Decl::Let { funs, .. } => funs
                        .iter()
                        .find(|fd| binds_local(&fd.body, f))
                        .map(|fd| fd.name.clone())
                        .unwrap_or_default(),
                    _ => String::new(),
                };
                let mut namer = self.namer_for(&scope);
                let apply = self.apply_decl(&g, arms, &mut namer);
                let placed = match local_fun {
                    Some(f) => insert_into_letrec(&mut decls[i], f, apply),
                    None => wrap_after_let(&mut decls[i], local_var.unwrap(), apply),
                };
                if !placed {
                    return Err(Error::Internal(format!("cannot place `{}`", g.names.apply)));
                }
                continue;
            }
            let apply = self.apply_decl(&g, arms, &mut self.canonical_namer(&g));
            let recursive = refs.contains(&g.names.apply);
            // Join the block of a top-level function that calls back.
            let partner = decls.iter().position(|d| match d {
                Decl::Let { funs, .. } => funs
                    .iter()
                    .any(|f| refs.contains(&f.name) && calls(&f.body, &g.names.apply)),
                _ => false,
            });
            match partner {
                Some(i) => {
                    if let Decl::Let { rec, funs } = &mut decls[i] {
                        *rec = true;
                        funs.insert(0, apply);
                    }
                }
                None => {
                    let at = self.first_reference(&g, false).unwrap_or(decls.len());
                    before.entry(at).or_default().push(Decl::Let {
                        rec: recursive,
                        funs: vec![apply],
                    });
                }
            }
        }

        let mut out = Vec::new();
        for (i, d) in decls.into_iter().enumerate() {
            if let Some(extra) = before.remove(&i) {
                out.extend(extra);
            }
            out.push(d);
        }
        for (_, extra) in before {
            out.extend(extra);
        }
        Ok(Program { decls: out })
    }

    /// Groups of mutually dependent continuation types (in group order).
    fn kont_blocks(&self) -> Vec<Vec<usize>> {
        let n = self.groups.len();
        let mut reach = vec![vec![false; n]; n];
        for g in &self.groups {
            for s in &g.sites {
                for (_, t) in &s.captures {
                    let mut arrows = Vec::new();
                    collect_arrows(t, &mut arrows);
                    for a in arrows {
                        if let Some(h) = self.an.group_of(&a) {
                            reach[g.id][h] = true;
                        }
                    }
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for i in 0..n {
            if seen[i] {
                continue;
            }
            let block: Vec<usize> = (0..n)
                .filter(|&j| j == i || (reach[i][j] && reach[j][i]))
                .collect();
            for &j in &block {
                seen[j] = true;
            }
            out.push(block);
        }
        out
    }

    /// Index of the first declaration that uses the group. With
    /// `with_measures`, measure functions and lemmas over the continuation
    /// type count as uses.
    fn first_reference(&self, g: &LambdaGroup, with_measures: bool) -> Option<usize> {
        let p = self.tp.program();
        p.decls.iter().position(|d| match d {
            Decl::Logic(l) => {
                with_measures && l.params.iter().any(|x| mentions_type(&x.ty, &g.names.kont))
            }
            Decl::Lemma { body, .. } => {
                let mut hit = false;
                body.walk(&mut |x| {
                    if let ExprKind::Forall(vs, _) = &x.kind {
                        hit |= vs.iter().any(|(_, t)| {
                            t.as_ref().is_some_and(|t| mentions_type(t, &g.names.kont))
                        });
                    }
                });
                with_measures && hit
            }
            Decl::Let { funs, .. } => funs.iter().any(|f| self.fun_uses_group(f, g)),
            Decl::Types(_) => false,
        })
    }

    fn fun_uses_group(&self, f: &FunDecl, g: &LambdaGroup) -> bool {
        let mut hit = false;
        let mut visit = |e: &Expr| {
            e.walk(&mut |x| {
                if let ExprKind::Lambda(l) = &x.kind {
                    hit |= g.site(l.site).is_some();
                }
                if let ExprKind::LetRec(ds, _) = &x.kind {
                    for d in ds {
                        hit |= self.sig_uses_group(&d.name, g);
                    }
                }
            })
        };
        visit(&f.body);
        f.contract.for_each_clause(&mut visit);
        hit || self.sig_uses_group(&f.name, g)
    }

    fn sig_uses_group(&self, name: &str, g: &LambdaGroup) -> bool {
        let Some(sig) = self.tp.fun_sig(name) else {
            return false;
        };
        sig.params.iter().chain([&sig.ret]).any(|t| {
            let mut arrows = Vec::new();
            collect_arrows(t, &mut arrows);
            arrows.iter().any(|a| self.an.group_of(a) == Some(g.id))
        })
    }
}

fn mentions_old(l: &Lambda) -> bool {
    let mut old = false;
    l.contract
        .for_each_clause(&mut |c| c.walk(&mut |x| old |= matches!(x.kind, ExprKind::Old(_))));
    old
}

pub(crate) fn ctor_pattern(s: &SiteInfo) -> Pattern {
    Pattern::new(PatternKind::Construct(
        s.constructor.clone(),
        s.captures.iter().map(|(n, _)| Pattern::var(n)).collect(),
    ))
}

fn collect_arrows(t: &Type, out: &mut Vec<Type>) {
    match t {
        Type::Arrow(a, b) => {
            out.push(t.clone());
            collect_arrows(a, out);
            collect_arrows(b, out);
        }
        Type::Adt(_, ts) | Type::Tuple(ts) => ts.iter().for_each(|x| collect_arrows(x, out)),
        Type::Ref(x) | Type::Set(x) => collect_arrows(x, out),
        _ => {}
    }
}

fn mentions_type(t: &Type, name: &str) -> bool {
    match t {
        Type::Adt(n, ts) => n == name || ts.iter().any(|x| mentions_type(x, name)),
        Type::Tuple(ts) => ts.iter().any(|x| mentions_type(x, name)),
        Type::Arrow(a, b) => mentions_type(a, name) || mentions_type(b, name),
        Type::Ref(x) | Type::Set(x) => mentions_type(x, name),
        _ => false,
    }
}

/// Free names of a function declaration (calls included), minus its
/// parameters.
fn referenced_names(f: &FunDecl) -> BTreeSet<String> {
    let params: Vec<&String> = f.params.iter().map(|p| &p.name).collect();
    let mut out = BTreeSet::new();
    let mut add = |e: &Expr| {
        for n in free_vars(e) {
            if !params.contains(&&n) {
                out.insert(n);
            }
        }
    };
    add(&f.body);
    f.contract.for_each_clause(&mut add);
    out
}

fn calls(e: &Expr, name: &str) -> bool {
    let mut hit = false;
    e.walk(&mut |x| {
        if let Some((n, _)) = x.call_head() {
            hit |= n == name;
        }
    });
    hit
}

fn binds_local(e: &Expr, name: &str) -> bool {
    let mut hit = false;
    e.walk(&mut |x| match &x.kind {
        ExprKind::LetRec(ds, _) => hit |= ds.iter().any(|d| d.name == name),
        ExprKind::Let(p, ..) => hit |= p.binders().iter().any(|b| b == name),
        _ => {}
    });
    hit
}

fn decl_binds_local(d: &Decl, name: &str) -> bool {
    match d {
        Decl::Let { funs, .. } => funs.iter().any(|f| binds_local(&f.body, name)),
        _ => false,
    }
}

fn insert_into_letrec(d: &mut Decl, fun: &str, apply: FunDecl) -> bool {
    fn go(e: &mut Expr, fun: &str, apply: &mut Option<FunDecl>) {
        if apply.is_none() {
            return;
        }
        if let ExprKind::LetRec(ds, _) = &mut e.kind {
            if ds.iter().any(|d| d.name == fun) {
                ds.insert(0, apply.take().unwrap());
                return;
            }
        }
        for_each_child_mut(e, &mut |c| go(c, fun, apply));
    }
    let mut slot = Some(apply);
    if let Decl::Let { funs, .. } = d {
        for f in funs {
            go(&mut f.body, fun, &mut slot);
        }
    }
    slot.is_none()
}

fn wrap_after_let(d: &mut Decl, var: &str, apply: FunDecl) -> bool {
    fn go(e: &mut Expr, var: &str, apply: &mut Option<FunDecl>) {
        if apply.is_none() {
            return;
        }
        if let ExprKind::Let(p, _, body) = &mut e.kind {
            if p.binders().iter().any(|b| b == var) {
                let inner = std::mem::replace(&mut **body, Expr::unit());
                **body = Expr::new(ExprKind::LetRec(
                    vec![apply.take().unwrap()],
                    Box::new(inner),
                ));
                return;
            }
        }
        for_each_child_mut(e, &mut |c| go(c, var, apply));
    }
    let mut slot = Some(apply);
    if let Decl::Let { funs, .. } = d {
        for f in funs {
            go(&mut f.body, var, &mut slot);
        }
    }
    slot.is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn transform(src: &str) -> Result<Defunctionalized> {
        defunctionalize_program(parse(src).unwrap()).map(|(_, d)| d)
    }

    #[test]
    fn identity_only_group() {
        let d =
            transform("let f (k: int -> int) : int = k 1\nlet g (u: unit) : int = f (fun x -> x)")
                .unwrap();
        let g = &d.groups[0];
        assert_eq!(g.sites.len(), 1);
        assert_eq!(g.sites[0].constructor, "K0");
        assert!(g.sites[0].captures.is_empty());
        let apply = d.program.find_fun("apply").unwrap();
        match &apply.body.kind {
            ExprKind::Match(_, arms) => assert_eq!(arms.len(), 1),
            _ => panic!("apply is not a match"),
        }
    }

    #[test]
    fn first_order_input_warns() {
        let d = transform("let f (x: int) : int = x + 1").unwrap();
        assert!(d.warnings[0].message.contains("nothing to defunctionalize"));
        assert!(d.groups.is_empty());
    }

    #[test]
    fn opaque_lambda_needs_ensures() {
        let e = transform(
            "let f (k: int -> int) : int = k 1\n\
             let g (j: int -> int) : int = f (fun x -> j x)\n\
             let h (u: unit) : int = g (fun y -> y)",
        )
        .unwrap_err();
        assert!(e.to_string().contains("explicit ensures"), "{e}");
    }
}

//! Type checking by first-order unification.
//!
//! Type variables written in a declaration are rigid inside it and are
//! instantiated afresh at every call of a top-level function or logic
//! declaration. Local functions (`let rec .. in`) share the type variables
//! of their enclosing declaration and are monomorphic.
//!
//! Internally the variable `'a` of declaration `f` is named `a@f`, so types
//! recorded for different declarations never clash. [`unqualify`] recovers
//! the written name. Unification variables are named `?n`; any left over
//! after checking are unconstrained.
//!
//! Declarations that mention the continuation type before it exists (a
//! `[@measure]` function over `kont`, or a lemma quantifying over it) are
//! deferred: they are checked when the generated program is.

use std::collections::{BTreeMap, HashMap};

use crate::ast::*;
use crate::diag::{Diagnostic, Error, Result};

/// Built-in logic and program functions over integers and finite sets.
pub const BUILTINS: &[&str] = &[
    "max",
    "min",
    "abs",
    "empty",
    "add",
    "remove",
    "mem",
    "cardinal",
    "union",
    "singleton",
];

fn builtin_sig(name: &str) -> Option<(Vec<Type>, Type)> {
    let a = || Type::Var("a@builtin".into());
    let set = || Type::Set(Box::new(a()));
    Some(match name {
        "max" | "min" => (vec![Type::Int, Type::Int], Type::Int),
        "abs" => (vec![Type::Int], Type::Int),
        "empty" => (vec![], set()),
        "add" | "remove" => (vec![a(), set()], set()),
        "mem" => (vec![a(), set()], Type::Bool),
        "cardinal" => (vec![set()], Type::Int),
        "union" => (vec![set(), set()], set()),
        "singleton" => (vec![a()], set()),
        _ => return None,
    })
}

pub fn qualify(var: &str, scope: &str) -> String {
    format!("{var}@{scope}")
}

/// Written name of a (possibly qualified) type variable.
pub fn unqualify(var: &str) -> &str {
    var.split('@').next().unwrap_or(var)
}

/// Declaration a qualified type variable belongs to.
pub fn scope_of(var: &str) -> Option<&str> {
    var.split_once('@').map(|(_, s)| s)
}

pub(crate) fn node_key(e: &Expr) -> usize {
    e as *const Expr as usize
}

/// Signature of a program function with qualified type variables.
#[derive(Clone, Debug, PartialEq)]
pub struct FunSig {
    pub params: Vec<Type>,
    pub ret: Type,
    /// Top-level declaration whose type variables the signature uses.
    pub scope: String,
    pub local: bool,
}

/// Arrow type of a lambda site, with qualified type variables.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteType {
    pub scope: String,
    pub domain: Type,
    pub codomain: Type,
}

impl SiteType {
    pub fn arrow(&self) -> Type {
        Type::arrow(self.domain.clone(), self.codomain.clone())
    }
}

/// One `post f ..` or `pre f ..` occurrence.
#[derive(Clone, Debug)]
pub struct Projection {
    pub post: bool,
    /// Arrow type of the projected function.
    pub fn_type: Type,
    /// Number of arguments after the function.
    pub arity: usize,
    pub span: Span,
}

impl Projection {
    /// Whether the arity is the one for effectful functions.
    pub fn is_stateful(&self) -> bool {
        if self.post {
            self.arity == 4
        } else {
            self.arity == 2
        }
    }
}

/// A program together with the type of every expression node.
///
/// Types are keyed by node address, so the program is kept immutable for
/// the lifetime of the value.
#[derive(Debug)]
pub struct TypedProgram {
    program: Program,
    types: HashMap<usize, Type>,
    sites: BTreeMap<SiteId, SiteType>,
    funs: HashMap<String, FunSig>,
    projections: Vec<Projection>,
    deferred: Vec<String>,
    env: TypeEnv,
}

impl TypedProgram {
    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn into_program(self) -> Program {
        self.program
    }

    /// Type of an expression node of [`TypedProgram::program`]. Heads of
    /// calls to named functions have no type of their own.
    pub fn type_of(&self, e: &Expr) -> Option<&Type> {
        self.types.get(&node_key(e))
    }

    pub fn site(&self, id: SiteId) -> Option<&SiteType> {
        self.sites.get(&id)
    }

    pub fn sites(&self) -> &BTreeMap<SiteId, SiteType> {
        &self.sites
    }

    /// Program functions, top-level and local, by name.
    pub fn fun_sig(&self, name: &str) -> Option<&FunSig> {
        self.funs.get(name)
    }

    pub fn funs(&self) -> &HashMap<String, FunSig> {
        &self.funs
    }

    pub fn projections(&self) -> &[Projection] {
        &self.projections
    }

    /// Declarations left unchecked because they mention types that do not
    /// exist yet.
    pub fn deferred(&self) -> &[String] {
        &self.deferred
    }

    /// Qualifies and alias-expands a type annotation written in `scope`.
    pub fn resolve(&self, ty: &Type, scope: &str) -> std::result::Result<Type, String> {
        self.env.resolve(ty, scope)
    }

    pub fn type_env(&self) -> &TypeEnv {
        &self.env
    }
}

/// Declared algebraic types and aliases.
#[derive(Clone, Debug, Default)]
pub struct TypeEnv {
    adts: HashMap<String, (Vec<String>, Vec<Constructor>)>,
    ctors: HashMap<String, (String, Vec<String>, Vec<Type>)>,
    aliases: HashMap<String, (Vec<String>, Type)>,
}

impl TypeEnv {
    pub fn new(p: &Program) -> Self {
        let mut env = TypeEnv::default();
        for t in p.type_defs() {
            match &t.body {
                TypeDefBody::Adt(cs) => {
                    for c in cs {
                        env.ctors.insert(
                            c.name.clone(),
                            (t.name.clone(), t.params.clone(), c.fields.clone()),
                        );
                    }
                    env.adts
                        .insert(t.name.clone(), (t.params.clone(), cs.clone()));
                }
                TypeDefBody::Alias(body) => {
                    env.aliases
                        .insert(t.name.clone(), (t.params.clone(), body.clone()));
                }
            }
        }
        env
    }

    pub fn is_alias(&self, name: &str) -> bool {
        self.aliases.contains_key(name)
    }

    /// Constructors of an algebraic type, in declaration order.
    pub fn constructors(&self, ty_name: &str) -> Option<(&[String], &[Constructor])> {
        self.adts
            .get(ty_name)
            .map(|(ps, cs)| (ps.as_slice(), cs.as_slice()))
    }

    /// `(type name, type parameters, field types)` of a constructor.
    pub fn constructor(&self, name: &str) -> Option<(&str, &[String], &[Type])> {
        self.ctors
            .get(name)
            .map(|(t, ps, fs)| (t.as_str(), ps.as_slice(), fs.as_slice()))
    }

    /// Expands aliases without qualifying variables.
    pub fn expand(&self, ty: &Type) -> Type {
        self.expand_depth(ty, 0)
    }

    fn expand_depth(&self, ty: &Type, depth: usize) -> Type {
        match ty {
            Type::Adt(n, args) => {
                let args: Vec<Type> = args.iter().map(|a| self.expand_depth(a, depth)).collect();
                match self.aliases.get(n) {
                    Some((ps, body)) if depth < 64 && ps.len() == args.len() => {
                        let inst = body
                            .subst(&|v| ps.iter().position(|p| p == v).map(|i| args[i].clone()));
                        self.expand_depth(&inst, depth + 1)
                    }
                    _ => Type::Adt(n.clone(), args),
                }
            }
            Type::Arrow(a, b) => {
                Type::arrow(self.expand_depth(a, depth), self.expand_depth(b, depth))
            }
            Type::Tuple(ts) => {
                Type::Tuple(ts.iter().map(|t| self.expand_depth(t, depth)).collect())
            }
            Type::Ref(t) => Type::Ref(Box::new(self.expand_depth(t, depth))),
            Type::Set(t) => Type::Set(Box::new(self.expand_depth(t, depth))),
            _ => ty.clone(),
        }
    }

    /// First unknown type name, or wrong type arity, in an annotation.
    pub fn validate(&self, ty: &Type) -> std::result::Result<(), String> {
        match ty {
            Type::Adt(n, args) => {
                let arity = match (self.adts.get(n), self.aliases.get(n)) {
                    (Some((ps, _)), _) | (_, Some((ps, _))) => ps.len(),
                    _ => return Err(format!("unknown type `{n}`")),
                };
                if arity != args.len() {
                    return Err(format!(
                        "type `{n}` expects {arity} argument(s), got {}",
                        args.len()
                    ));
                }
                args.iter().try_for_each(|a| self.validate(a))
            }
            Type::Arrow(a, b) => {
                self.validate(a)?;
                self.validate(b)
            }
            Type::Tuple(ts) => ts.iter().try_for_each(|t| self.validate(t)),
            Type::Ref(t) | Type::Set(t) => self.validate(t),
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, ty: &Type, scope: &str) -> std::result::Result<Type, String> {
        self.validate(ty)?;
        Ok(self
            .expand(ty)
            .subst(&|v| (!v.contains('@')).then(|| Type::Var(qualify(v, scope)))))
    }
}

#[derive(Clone, Debug)]
struct LogicSig {
    params: Vec<Type>,
    ret: Type,
    deferred: bool,
}

#[derive(Clone, Debug)]
enum Local {
    Var(Type),
    Fun(FunSig),
}

#[derive(Clone)]
struct Ctx {
    logic: bool,
    result: Option<Type>,
}

impl Ctx {
    fn code() -> Self {
        Ctx {
            logic: false,
            result: None,
        }
    }

    fn formula(result: Option<Type>) -> Self {
        Ctx {
            logic: true,
            result,
        }
    }
}

type TResult<T> = std::result::Result<T, Diagnostic>;

struct Checker {
    env: TypeEnv,
    logic: HashMap<String, LogicSig>,
    funs: HashMap<String, FunSig>,
    metas: Vec<Option<Type>>,
    types: HashMap<usize, Type>,
    sites: BTreeMap<SiteId, SiteType>,
    projections: Vec<Projection>,
    scope: String,
    locals: Vec<(String, Local)>,
}

/// Type checks a parsed program.
pub fn typecheck(program: Program) -> Result<TypedProgram> {
    let mut ck = Checker {
        env: TypeEnv::new(&program),
        logic: HashMap::new(),
        funs: HashMap::new(),
        metas: Vec::new(),
        types: HashMap::new(),
        sites: BTreeMap::new(),
        projections: Vec::new(),
        scope: String::new(),
        locals: Vec::new(),
    };
    let mut diags = Vec::new();
    let mut deferred = Vec::new();
    ck.check_type_defs(&program, &mut diags);
    for d in &program.decls {
        match d {
            Decl::Logic(l) => {
                let sig = ck.logic_sig(l);
                match sig {
                    Ok(sig) => {
                        if sig.deferred {
                            deferred.push(l.name.clone());
                        }
                        ck.logic.insert(l.name.clone(), sig);
                    }
                    Err(e) => diags.push(e),
                }
            }
            Decl::Let { funs, .. } => {
                for f in funs {
                    match ck.fun_sig(f, &f.name, false) {
                        Ok(sig) => {
                            ck.funs.insert(f.name.clone(), sig);
                        }
                        Err(e) => diags.push(e),
                    }
                }
            }
            Decl::Types(_) => {}
            Decl::Lemma { name, body } => {
                if ck.mentions_unknown_type(body) {
                    deferred.push(name.clone());
                }
            }
        }
    }
    if !diags.is_empty() {
        return Err(Error::Diagnostics(diags));
    }
    for d in &program.decls {
        let r = match d {
            Decl::Types(_) => Ok(()),
            Decl::Logic(l) if ck.logic[&l.name].deferred => Ok(()),
            Decl::Logic(l) => ck.check_logic(l),
            Decl::Let { funs, .. } => funs.iter().try_for_each(|f| ck.check_top_fun(f)),
            Decl::Lemma { name, .. } if deferred.contains(name) => Ok(()),
            Decl::Lemma { name, body } => {
                ck.scope = name.clone();
                ck.check_formula(body, None)
            }
        };
        if let Err(e) = r {
            diags.push(e);
        }
        ck.locals.clear();
    }
    if !diags.is_empty() {
        return Err(Error::Diagnostics(diags));
    }
    let types = std::mem::take(&mut ck.types)
        .into_iter()
        .map(|(k, t)| (k, ck.zonk(&t)))
        .collect();
    let sites = std::mem::take(&mut ck.sites)
        .into_iter()
        .map(|(k, s)| {
            let s = SiteType {
                scope: s.scope,
                domain: ck.zonk(&s.domain),
                codomain: ck.zonk(&s.codomain),
            };
            (k, s)
        })
        .collect();
    let projections = std::mem::take(&mut ck.projections)
        .into_iter()
        .map(|p| Projection {
            fn_type: ck.zonk(&p.fn_type),
            ..p
        })
        .collect();
    let funs = std::mem::take(&mut ck.funs);
    Ok(TypedProgram {
        program,
        types,
        sites,
        funs,
        projections,
        deferred,
        env: ck.env,
    })
}

impl Checker {
    fn check_type_defs(&mut self, p: &Program, diags: &mut Vec<Diagnostic>) {
        for t in p.type_defs() {
            let tys: Vec<&Type> = match &t.body {
                TypeDefBody::Adt(cs) => cs.iter().flat_map(|c| &c.fields).collect(),
                TypeDefBody::Alias(ty) => vec![ty],
            };
            for ty in tys {
                if let Err(m) = self.env.validate(ty) {
                    diags.push(Diagnostic::error(
                        format!("in type `{}`: {m}", t.name),
                        Span::default(),
                    ));
                }
                for v in ty.type_vars() {
                    if !t.params.contains(&v) {
                        diags.push(Diagnostic::error(
                            format!("type variable '{v} is not a parameter of `{}`", t.name),
                            Span::default(),
                        ));
                    }
                }
            }
        }
    }

    fn mentions_unknown_type(&self, e: &Expr) -> bool {
        let mut unknown = false;
        e.walk(&mut |x| {
            if let ExprKind::Forall(vs, _) = &x.kind {
                for (_, t) in vs {
                    if let Some(t) = t {
                        unknown |= self.env.validate(t).is_err();
                    }
                }
            }
        });
        unknown
    }

    fn logic_sig(&self, l: &LogicDecl) -> TResult<LogicSig> {
        let mut tys: Vec<&Type> = l.params.iter().map(|p| &p.ty).collect();
        if let Some(r) = &l.ret {
            tys.push(r);
        }
        let unknown = tys.iter().find_map(|t| self.env.validate(t).err());
        if let Some(m) = unknown {
            if l.measure {
                return Ok(LogicSig {
                    params: Vec::new(),
                    ret: l.result_type(),
                    deferred: true,
                });
            }
            return Err(Diagnostic::error(format!("in `{}`: {m}", l.name), l.span));
        }
        let res = |t: &Type| self.env.resolve(t, &l.name).expect("validated");
        Ok(LogicSig {
            params: l.params.iter().map(|p| res(&p.ty)).collect(),
            ret: res(&l.result_type()),
            deferred: false,
        })
    }

    fn fun_sig(&self, f: &FunDecl, scope: &str, local: bool) -> TResult<FunSig> {
        let res = |t: &Type| {
            self.env
                .resolve(t, scope)
                .map_err(|m| Diagnostic::error(format!("in `{}`: {m}", f.name), f.span))
        };
        Ok(FunSig {
            params: f
                .params
                .iter()
                .map(|p| res(&p.ty))
                .collect::<TResult<_>>()?,
            ret: res(&f.ret)?,
            scope: scope.to_string(),
            local,
        })
    }

    // -----------------------------------------------------------------
    // Unification

    fn fresh(&mut self) -> Type {
        self.metas.push(None);
        Type::Var(format!("?{}", self.metas.len() - 1))
    }

    fn meta_index(v: &str) -> Option<usize> {
        v.strip_prefix('?').and_then(|n| n.parse().ok())
    }

    fn shallow(&self, t: &Type) -> Type {
        let mut t = t.clone();
        while let Type::Var(v) = &t {
            match Self::meta_index(v).and_then(|i| self.metas[i].clone()) {
                Some(next) => t = next,
                None => break,
            }
        }
        t
    }

    fn zonk(&self, t: &Type) -> Type {
        match self.shallow(t) {
            Type::Adt(n, args) => Type::Adt(n, args.iter().map(|a| self.zonk(a)).collect()),
            Type::Tuple(ts) => Type::Tuple(ts.iter().map(|a| self.zonk(a)).collect()),
            Type::Arrow(a, b) => Type::arrow(self.zonk(&a), self.zonk(&b)),
            Type::Ref(a) => Type::Ref(Box::new(self.zonk(&a))),
            Type::Set(a) => Type::Set(Box::new(self.zonk(&a))),
            t => t,
        }
    }

    fn occurs(&self, i: usize, t: &Type) -> bool {
        match self.shallow(t) {
            Type::Var(v) => Self::meta_index(&v) == Some(i),
            Type::Adt(_, ts) | Type::Tuple(ts) => ts.iter().any(|t| self.occurs(i, t)),
            Type::Arrow(a, b) => self.occurs(i, &a) || self.occurs(i, &b),
            Type::Ref(a) | Type::Set(a) => self.occurs(i, &a),
            _ => false,
        }
    }

    fn unify(&mut self, a: &Type, b: &Type) -> bool {
        let (a, b) = (self.shallow(a), self.shallow(b));
        match (&a, &b) {
            (Type::Var(x), Type::Var(y)) if x == y => true,
            (Type::Var(x), other) | (other, Type::Var(x)) if Self::meta_index(x).is_some() => {
                let i = Self::meta_index(x).unwrap();
                if self.occurs(i, other) {
                    return false;
                }
                self.metas[i] = Some(other.clone());
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

    fn expect(&mut self, found: &Type, expected: &Type, span: Span) -> TResult<()> {
        if self.unify(found, expected) {
            Ok(())
        } else {
            Err(Diagnostic::error(
                format!(
                    "type mismatch: expected {}, found {}",
                    show(&self.zonk(expected)),
                    show(&self.zonk(found))
                ),
                span,
            ))
        }
    }

    /// Replaces the variables of `scope` in a signature with fresh metas.
    fn instantiate(&mut self, tys: &[Type], scope_vars: &[String]) -> Vec<Type> {
        let fresh: Vec<(String, Type)> = scope_vars
            .iter()
            .map(|v| (v.clone(), self.fresh()))
            .collect();
        tys.iter()
            .map(|t| t.subst(&|v| fresh.iter().find(|(n, _)| n == v).map(|(_, m)| m.clone())))
            .collect()
    }

    fn sig_vars(tys: &[Type]) -> Vec<String> {
        let mut out = Vec::new();
        for t in tys {
            t.collect_vars(&mut out);
        }
        out.retain(|v| !v.starts_with('?'));
        out
    }

    // -----------------------------------------------------------------
    // Declarations

    fn check_logic(&mut self, l: &LogicDecl) -> TResult<()> {
        self.scope = l.name.clone();
        let sig = self.logic[&l.name].clone();
        for (p, t) in l.params.iter().zip(&sig.params) {
            self.locals.push((p.name.clone(), Local::Var(t.clone())));
        }
        let t = self.infer(&l.body, &Ctx::formula(None))?;
        self.expect(&t, &sig.ret, l.body.span)
    }

    fn check_top_fun(&mut self, f: &FunDecl) -> TResult<()> {
        self.scope = f.name.clone();
        let sig = self.funs[&f.name].clone();
        self.check_fun_body(f, &sig)
    }

    fn check_fun_body(&mut self, f: &FunDecl, sig: &FunSig) -> TResult<()> {
        let mark = self.locals.len();
        for (p, t) in f.params.iter().zip(&sig.params) {
            self.locals.push((p.name.clone(), Local::Var(t.clone())));
        }
        for r in &f.contract.requires {
            self.check_formula(r, None)?;
        }
        for v in &f.contract.variant {
            self.check_variant(v)?;
        }
        let t = self.infer(&f.body, &Ctx::code())?;
        self.expect(&t, &sig.ret, f.body.span)?;
        for e in &f.contract.ensures {
            self.check_formula(e, Some(sig.ret.clone()))?;
        }
        self.locals.truncate(mark);
        Ok(())
    }

    fn check_formula(&mut self, f: &Expr, result: Option<Type>) -> TResult<()> {
        let t = self.infer(f, &Ctx::formula(result))?;
        self.expect(&t, &Type::Bool, f.span)
    }

    fn check_variant(&mut self, v: &Expr) -> TResult<()> {
        let t = self.infer(v, &Ctx::formula(None))?;
        match self.zonk(&t) {
            Type::Int | Type::Adt(..) => Ok(()),
            t => Err(Diagnostic::error(
                format!(
                    "variant term must be an integer or an algebraic value, found {}",
                    show(&t)
                ),
                v.span,
            )),
        }
    }

    fn annotation(&self, ty: &Type, span: Span) -> TResult<Type> {
        self.env
            .resolve(ty, &self.scope)
            .map_err(|m| Diagnostic::error(m, span))
    }

    fn lookup_local(&self, name: &str) -> Option<&Local> {
        self.locals
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l)
    }

    fn record(&mut self, e: &Expr, t: &Type) {
        self.types.insert(node_key(e), t.clone());
    }

    // -----------------------------------------------------------------
    // Expressions

    fn infer(&mut self, e: &Expr, ctx: &Ctx) -> TResult<Type> {
        let t = self.infer_kind(e, ctx)?;
        self.record(e, &t);
        Ok(t)
    }

    fn code_only(ctx: &Ctx, what: &str, span: Span) -> TResult<()> {
        if ctx.logic {
            Err(Diagnostic::error(
                format!("{what} is not allowed in a formula"),
                span,
            ))
        } else {
            Ok(())
        }
    }

    fn logic_only(ctx: &Ctx, what: &str, span: Span) -> TResult<()> {
        if ctx.logic {
            Ok(())
        } else {
            Err(Diagnostic::error(
                format!("{what} is only allowed in a formula"),
                span,
            ))
        }
    }

    fn infer_kind(&mut self, e: &Expr, ctx: &Ctx) -> TResult<Type> {
        let span = e.span;
        match &e.kind {
            ExprKind::Var(n) => self.infer_var(n, ctx, span),
            ExprKind::Const(Literal::Int(_)) => Ok(Type::Int),
            ExprKind::Const(Literal::Bool(_)) => Ok(Type::Bool),
            ExprKind::Const(Literal::Unit) => Ok(Type::Unit),
            ExprKind::Lambda(l) => {
                Self::code_only(ctx, "an anonymous function", span)?;
                let dom = match &l.param_ty {
                    Some(t) => self.annotation(t, span)?,
                    None => self.fresh(),
                };
                let mark = self.locals.len();
                self.bind_pattern(&l.param, &dom)?;
                for r in &l.contract.requires {
                    self.check_formula(r, None)?;
                }
                let cod = self.infer(&l.body, &Ctx::code())?;
                for en in &l.contract.ensures {
                    self.check_formula(en, Some(cod.clone()))?;
                }
                self.locals.truncate(mark);
                self.sites.insert(
                    l.site,
                    SiteType {
                        scope: self.scope.clone(),
                        domain: dom.clone(),
                        codomain: cod.clone(),
                    },
                );
                Ok(Type::arrow(dom, cod))
            }
            ExprKind::App(head, args) => self.infer_app(head, args, ctx, span),
            ExprKind::Let(p, a, b) => {
                let ta = self.infer(a, ctx)?;
                let mark = self.locals.len();
                self.bind_pattern(p, &ta)?;
                let tb = self.infer(b, ctx)?;
                self.locals.truncate(mark);
                Ok(tb)
            }
            ExprKind::LetRec(decls, body) => {
                Self::code_only(ctx, "a local function", span)?;
                let mark = self.locals.len();
                let mut sigs = Vec::new();
                for d in decls {
                    let sig = self.fun_sig(d, &self.scope.clone(), true)?;
                    self.funs.insert(d.name.clone(), sig.clone());
                    self.locals.push((d.name.clone(), Local::Fun(sig.clone())));
                    sigs.push(sig);
                }
                for (d, sig) in decls.iter().zip(&sigs) {
                    self.check_fun_body(d, sig)?;
                }
                let t = self.infer(body, ctx)?;
                self.locals.truncate(mark);
                Ok(t)
            }
            ExprKind::Match(s, arms) => {
                let ts = self.infer(s, ctx)?;
                let out = self.fresh();
                for arm in arms {
                    let mark = self.locals.len();
                    self.bind_pattern(&arm.pattern, &ts)?;
                    let t = self.infer(&arm.body, ctx)?;
                    self.expect(&t, &out, arm.body.span)?;
                    self.locals.truncate(mark);
                }
                Ok(out)
            }
            ExprKind::Construct(c, args) => {
                let (ty, fields) = self.instantiate_ctor(c, args.len(), span)?;
                for (a, f) in args.iter().zip(&fields) {
                    let t = self.infer(a, ctx)?;
                    self.expect(&t, f, a.span)?;
                }
                Ok(ty)
            }
            ExprKind::Tuple(args) => Ok(Type::Tuple(
                args.iter()
                    .map(|a| self.infer(a, ctx))
                    .collect::<TResult<_>>()?,
            )),
            ExprKind::RefNew(x) => {
                Self::code_only(ctx, "`ref`", span)?;
                Ok(Type::Ref(Box::new(self.infer(x, ctx)?)))
            }
            ExprKind::RefGet(x) => {
                let t = self.infer(x, ctx)?;
                let inner = self.fresh();
                self.expect(&t, &Type::Ref(Box::new(inner.clone())), x.span)?;
                Ok(inner)
            }
            ExprKind::RefSet(r, v) => {
                Self::code_only(ctx, "assignment", span)?;
                let tr = self.infer(r, ctx)?;
                let tv = self.infer(v, ctx)?;
                self.expect(&tr, &Type::Ref(Box::new(tv)), r.span)?;
                Ok(Type::Unit)
            }
            ExprKind::Seq(a, b) => {
                Self::code_only(ctx, "sequencing", span)?;
                let ta = self.infer(a, ctx)?;
                self.expect(&ta, &Type::Unit, a.span)?;
                self.infer(b, ctx)
            }
            ExprKind::If(c, t, f) => {
                let tc = self.infer(c, ctx)?;
                self.expect(&tc, &Type::Bool, c.span)?;
                let tt = self.infer(t, ctx)?;
                let tf = self.infer(f, ctx)?;
                self.expect(&tf, &tt, f.span)?;
                Ok(tt)
            }
            ExprKind::BinOp(op, a, b) => {
                let ta = self.infer(a, ctx)?;
                let tb = self.infer(b, ctx)?;
                let (operand, out) = match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul => (Some(Type::Int), Type::Int),
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => (Some(Type::Int), Type::Bool),
                    BinOp::And | BinOp::Or | BinOp::Implies => (Some(Type::Bool), Type::Bool),
                    BinOp::Eq | BinOp::Ne | BinOp::ExtEq => (None, Type::Bool),
                };
                match operand {
                    Some(t) => {
                        self.expect(&ta, &t, a.span)?;
                        self.expect(&tb, &t, b.span)?;
                    }
                    None => self.expect(&tb, &ta, b.span)?,
                }
                Ok(out)
            }
            ExprKind::UnOp(op, x) => {
                let t = self.infer(x, ctx)?;
                let want = match op {
                    UnOp::Not => Type::Bool,
                    UnOp::Neg => Type::Int,
                };
                self.expect(&t, &want, x.span)?;
                Ok(want)
            }
            ExprKind::Absurd => Ok(self.fresh()),
            ExprKind::Forall(vs, body) => {
                Self::logic_only(ctx, "`forall`", span)?;
                let mark = self.locals.len();
                for (v, t) in vs {
                    let t = match t {
                        Some(t) => self.annotation(t, span)?,
                        None => self.fresh(),
                    };
                    if t.contains_arrow() {
                        return Err(Diagnostic::error(
                            "quantification over functions is not supported",
                            span,
                        ));
                    }
                    self.locals.push((v.clone(), Local::Var(t)));
                }
                let t = self.infer(body, ctx)?;
                self.expect(&t, &Type::Bool, body.span)?;
                self.locals.truncate(mark);
                Ok(Type::Bool)
            }
            ExprKind::PostProj(f, args) | ExprKind::PreProj(f, args) => {
                let post = matches!(e.kind, ExprKind::PostProj(..));
                let name = if post { "post" } else { "pre" };
                Self::logic_only(ctx, &format!("`{name}`"), span)?;
                let tf = self.infer(f, ctx)?;
                let (dom, cod) = (self.fresh(), self.fresh());
                self.expect(&tf, &Type::arrow(dom.clone(), cod.clone()), f.span)?;
                let state = self.fresh();
                let expected: Vec<Type> = match (post, args.len()) {
                    (true, 2) => vec![dom, cod],
                    (true, 4) => vec![dom, state.clone(), state, cod],
                    (false, 1) => vec![dom],
                    (false, 2) => vec![dom, state],
                    _ => {
                        return Err(Diagnostic::error(
                            if post {
                                "`post f` takes 2 arguments (pure) or 4 (with state)".to_string()
                            } else {
                                "`pre f` takes 1 argument (pure) or 2 (with state)".to_string()
                            },
                            span,
                        ))
                    }
                };
                for (a, t) in args.iter().zip(&expected) {
                    let ta = self.infer(a, ctx)?;
                    self.expect(&ta, t, a.span)?;
                }
                self.projections.push(Projection {
                    post,
                    fn_type: tf,
                    arity: args.len(),
                    span,
                });
                Ok(Type::Bool)
            }
            ExprKind::Old(x) => {
                Self::logic_only(ctx, "`old`", span)?;
                if !is_state_term(x) {
                    return Err(Diagnostic::error(
                        "`old` applies only to reference reads or state variables",
                        span,
                    ));
                }
                self.infer(x, ctx)
            }
            ExprKind::Result => ctx
                .result
                .clone()
                .ok_or_else(|| Diagnostic::error("`result` outside of an ensures clause", span)),
        }
    }

    fn infer_var(&mut self, n: &str, ctx: &Ctx, span: Span) -> TResult<Type> {
        match self.lookup_local(n).cloned() {
            Some(Local::Var(t)) => return Ok(t),
            Some(Local::Fun(sig)) if sig.params.is_empty() => return Ok(sig.ret),
            Some(Local::Fun(_)) => return Err(value_use(n, span)),
            None => {}
        }
        if let Some(sig) = self.funs.get(n).filter(|s| !s.local).cloned() {
            Self::code_only(ctx, &format!("program function `{n}`"), span)?;
            if !sig.params.is_empty() {
                return Err(value_use(n, span));
            }
            let vars = Self::sig_vars(std::slice::from_ref(&sig.ret));
            return Ok(self.instantiate(&[sig.ret], &vars).remove(0));
        }
        if let Some(sig) = self.logic.get(n).cloned() {
            if !sig.params.is_empty() || sig.deferred {
                return Err(value_use(n, span));
            }
            let vars = Self::sig_vars(std::slice::from_ref(&sig.ret));
            return Ok(self.instantiate(&[sig.ret], &vars).remove(0));
        }
        if let Some((ps, ret)) = builtin_sig(n) {
            if ps.is_empty() {
                let vars = Self::sig_vars(std::slice::from_ref(&ret));
                return Ok(self.instantiate(&[ret], &vars).remove(0));
            }
            return Err(value_use(n, span));
        }
        Err(Diagnostic::error(format!("unbound name `{n}`"), span))
    }

    fn infer_app(&mut self, head: &Expr, args: &[Expr], ctx: &Ctx, span: Span) -> TResult<Type> {
        if let ExprKind::Var(n) = &head.kind {
            let sig: Option<(Vec<Type>, Type, bool)> = match self.lookup_local(n) {
                Some(Local::Fun(sig)) => {
                    Self::code_only(ctx, &format!("program function `{n}`"), span)?;
                    Some((sig.params.clone(), sig.ret.clone(), false))
                }
                Some(Local::Var(_)) => None,
                None => {
                    if let Some(sig) = self.funs.get(n).filter(|s| !s.local).cloned() {
                        Self::code_only(ctx, &format!("program function `{n}`"), span)?;
                        Some((sig.params, sig.ret, true))
                    } else if let Some(sig) = self.logic.get(n).cloned() {
                        if sig.deferred {
                            for a in args {
                                self.infer(a, ctx)?;
                            }
                            return Ok(sig.ret);
                        }
                        Some((sig.params, sig.ret, true))
                    } else if let Some((ps, ret)) = builtin_sig(n) {
                        Some((ps, ret, true))
                    } else {
                        return Err(Diagnostic::error(format!("unbound name `{n}`"), head.span));
                    }
                }
            };
            if let Some((params, ret, poly)) = sig {
                if params.len() != args.len() {
                    return Err(Diagnostic::error(
                        format!(
                            "`{n}` expects {} argument(s), got {}",
                            params.len(),
                            args.len()
                        ),
                        span,
                    ));
                }
                let mut all = params;
                all.push(ret);
                if poly {
                    let vars = Self::sig_vars(&all);
                    all = self.instantiate(&all, &vars);
                }
                let ret = all.pop().unwrap();
                for (a, t) in args.iter().zip(&all) {
                    let ta = self.infer(a, ctx)?;
                    self.expect(&ta, t, a.span)?;
                }
                return Ok(ret);
            }
        }
        let th = self.infer(head, ctx)?;
        if args.len() != 1 {
            return Err(Diagnostic::error(
                "a function value takes exactly one argument",
                span,
            ));
        }
        let ta = self.infer(&args[0], ctx)?;
        let r = self.fresh();
        self.expect(&th, &Type::arrow(ta, r.clone()), head.span)?;
        Ok(r)
    }

    fn instantiate_ctor(&mut self, c: &str, n: usize, span: Span) -> TResult<(Type, Vec<Type>)> {
        let (ty, params, fields) = self
            .env
            .ctors
            .get(c)
            .cloned()
            .ok_or_else(|| Diagnostic::error(format!("unknown constructor `{c}`"), span))?;
        if fields.len() != n {
            return Err(Diagnostic::error(
                format!(
                    "constructor `{c}` expects {} argument(s), got {n}",
                    fields.len()
                ),
                span,
            ));
        }
        let metas: Vec<Type> = params.iter().map(|_| self.fresh()).collect();
        let inst = |t: &Type| {
            self.env
                .expand(t)
                .subst(&|v| params.iter().position(|p| p == v).map(|i| metas[i].clone()))
        };
        let fields = fields.iter().map(inst).collect();
        Ok((Type::Adt(ty, metas), fields))
    }

    fn bind_pattern(&mut self, p: &Pattern, ty: &Type) -> TResult<()> {
        match &p.kind {
            PatternKind::Wild => Ok(()),
            PatternKind::Var(v) => {
                self.locals.push((v.clone(), Local::Var(ty.clone())));
                Ok(())
            }
            PatternKind::Unit => self.expect(ty, &Type::Unit, p.span),
            PatternKind::Tuple(ps) => {
                let ts: Vec<Type> = ps.iter().map(|_| self.fresh()).collect();
                self.expect(ty, &Type::Tuple(ts.clone()), p.span)?;
                ps.iter()
                    .zip(&ts)
                    .try_for_each(|(p, t)| self.bind_pattern(p, t))
            }
            PatternKind::Construct(c, ps) => {
                let (cty, fields) = self.instantiate_ctor(c, ps.len(), p.span)?;
                self.expect(ty, &cty, p.span)?;
                ps.iter()
                    .zip(&fields)
                    .try_for_each(|(p, t)| self.bind_pattern(p, t))
            }
        }
    }
}

fn value_use(n: &str, span: Span) -> Diagnostic {
    Diagnostic::error(
        format!("function `{n}` used as a value; only anonymous functions can be defunctionalized"),
        span,
    )
}

fn is_state_term(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::RefGet(_) | ExprKind::Var(_) => true,
        ExprKind::Tuple(es) => es.iter().all(is_state_term),
        _ => false,
    }
}

/// Renders a type with written variable names.
pub fn show(t: &Type) -> String {
    crate::emit::emit_type(&t.subst(&|v| Some(Type::Var(unqualify(v).to_string()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn check(src: &str) -> Result<TypedProgram> {
        typecheck(parse(src).unwrap())
    }

    fn err(src: &str) -> String {
        check(src).unwrap_err().to_string()
    }

    #[test]
    fn constructor_arity() {
        let m = err("type k = Kid\nlet f (x: int) : k = Kid 5");
        assert!(m.contains("expects 0 argument"), "{m}");
    }

    #[test]
    fn continuation_application_is_typed() {
        let tp = check("let f (k: int -> 'b) : 'b = k 0").unwrap();
        let f = tp.program().find_fun("f").unwrap();
        assert_eq!(tp.type_of(&f.body), Some(&Type::Var("b@f".into())));
    }

    #[test]
    fn lambda_sites_get_arrow_types() {
        let tp =
            check("let g (k: int -> 'b) : 'b = k 1\nlet h (u: unit) : int = g (fun x -> x + 1)")
                .unwrap();
        let s = tp.site(SiteId(0)).unwrap();
        assert_eq!(s.arrow(), Type::arrow(Type::Int, Type::Int));
        assert_eq!(s.scope, "h");
    }

    #[test]
    fn post_arity_checked() {
        let m = err("let f (k: int -> int) : int ensures { post k 1 2 3 } = k 0");
        assert!(m.contains("2 arguments"), "{m}");
    }

    #[test]
    fn mismatch_reported() {
        let m = err("let f (x: int) : bool = x");
        assert!(m.contains("expected bool, found int"), "{m}");
    }

    #[test]
    fn measures_over_missing_types_are_deferred() {
        let tp = check(
            "[@measure] function m (k: kont) : int = 0\nlemma l: forall k: kont. m k >= 0\nlet f (k: int -> int) : int variant { m k } = k 0",
        )
        .unwrap();
        assert_eq!(tp.deferred(), ["m".to_string(), "l".to_string()]);
    }

    #[test]
    fn function_as_value_is_rejected() {
        let m = err("let g (x: int) : int = x\nlet f (k: int -> int) : int = k 0\nlet h (u: unit) : int = f g");
        assert!(m.contains("used as a value"), "{m}");
    }

    #[test]
    fn variant_must_be_integer_or_adt() {
        let m = err("let rec f (b: bool) : int variant { b } = 0");
        assert!(m.contains("variant term"), "{m}");
    }
}

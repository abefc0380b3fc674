//! Explicit-stack evaluation of program code.

use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ast::{BinOp, Decl, ExprKind, FunDecl, Lambda, LogicDecl, MatchArm, UnOp};
use crate::emit::emit_expr;
use crate::typecheck::TypeEnv;

pub(crate) enum Ctl<'p> {
    Eval(&'p Expr, Env),
    Ret(Value),
}

enum Pending<'p> {
    Fun(&'p FunDecl, usize, Env),
    /// Dynamic application; the head is the first collected value.
    Dyn,
    Construct(&'p str),
    Tuple,
    Logic(&'p str),
}

struct CallFrame<'p> {
    name: String,
    ensures: &'p [Expr],
    env: Env,
    old: Option<Store>,
    variant: Option<Vec<Value>>,
    block: Option<usize>,
    apply: bool,
}

enum Frame<'p> {
    Let(&'p Pattern, &'p Expr, Env),
    Seq(&'p Expr, Env),
    If(&'p Expr, &'p Expr, Env),
    Match(&'p [MatchArm], Env, Span),
    BinL(BinOp, &'p Expr, Env),
    BinR(BinOp, Value),
    Un(UnOp),
    Head(&'p [Expr], Env),
    Args {
        pending: Pending<'p>,
        vals: Vec<Value>,
        rest: &'p [Expr],
        next: usize,
        env: Env,
    },
    RefNew,
    RefGet,
    RefSetL(&'p Expr, Env),
    RefSetR(usize),
    Return(Box<CallFrame<'p>>),
}

pub(crate) struct Machine<'p> {
    pub(super) tenv: TypeEnv,
    funs: HashMap<&'p str, (&'p FunDecl, usize)>,
    pub(super) logic: HashMap<&'p str, &'p LogicDecl>,
    blocks: HashMap<usize, &'p [FunDecl]>,
    pub(super) lambdas: HashMap<SiteId, &'p Lambda>,
    pub(super) sites: Option<&'p SiteTable>,
    pub store: Store,
    pub report: CheckReport,
    pub trace: Vec<String>,
    pub(super) cfg: EvalConfig,
    pub(super) steps: u64,
    pub(super) rng: ChaCha8Rng,
    pub(super) sampled: bool,
    pub(super) witness: Vec<(String, String)>,
    stack: Vec<Frame<'p>>,
}

fn is_apply_name(n: &str) -> bool {
    n.strip_prefix("apply")
        .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
}

fn index_blocks<'p>(
    e: &'p Expr,
    blocks: &mut HashMap<usize, &'p [FunDecl]>,
    lambdas: &mut HashMap<SiteId, &'p Lambda>,
) {
    e.walk(&mut |x| match &x.kind {
        ExprKind::LetRec(ds, _) => {
            blocks.insert(ds.as_ptr() as usize, &ds[..]);
        }
        ExprKind::Lambda(l) => {
            lambdas.insert(l.site, l);
        }
        _ => {}
    });
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p Program, sites: Option<&'p SiteTable>, cfg: EvalConfig) -> Self {
        let mut funs = HashMap::new();
        let mut logic = HashMap::new();
        let mut blocks = HashMap::new();
        let mut lambdas = HashMap::new();
        for d in &prog.decls {
            match d {
                Decl::Let { funs: fs, .. } => {
                    let key = fs.as_ptr() as usize;
                    blocks.insert(key, &fs[..]);
                    for f in fs {
                        funs.insert(f.name.as_str(), (f, key));
                    }
                }
                Decl::Logic(l) => {
                    logic.insert(l.name.as_str(), l);
                }
                _ => {}
            }
        }
        prog.for_each_expr(&mut |e| index_blocks(e, &mut blocks, &mut lambdas));
        let seed = cfg.seed;
        Machine {
            tenv: TypeEnv::new(prog),
            funs,
            logic,
            blocks,
            lambdas,
            sites,
            store: Store::default(),
            report: CheckReport::default(),
            trace: Vec::new(),
            cfg,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sampled: false,
            witness: Vec::new(),
            stack: Vec::new(),
        }
    }

    /// Calls a top-level function and collects the outcome.
    pub fn run(&mut self, entry: &str, args: Vec<Value>) -> Outcome {
        let result = self.call(entry, args);
        Outcome {
            result,
            store: std::mem::take(&mut self.store),
            report: std::mem::take(&mut self.report),
            trace: std::mem::take(&mut self.trace),
            steps: self.steps,
        }
    }

    pub fn call(&mut self, entry: &str, args: Vec<Value>) -> Result<Value, EvalError> {
        let Some(&(fd, key)) = self.funs.get(entry) else {
            return Err(EvalError::Stuck(format!("no function `{entry}`")));
        };
        if fd.params.len() != args.len() {
            return Err(EvalError::Stuck(format!(
                "`{entry}` expects {} arguments, got {}",
                fd.params.len(),
                args.len()
            )));
        }
        let base = self.stack.len();
        let mut ctl = self.enter(fd, key, Env::new(), args)?;
        loop {
            self.tick()?;
            ctl = match ctl {
                Ctl::Eval(e, env) => self.eval(e, env)?,
                Ctl::Ret(v) => {
                    if self.stack.len() == base {
                        return Ok(v);
                    }
                    let f = self.stack.pop().unwrap();
                    self.ret(f, v)?
                }
            };
        }
    }

    /// Fresh fuel, empty stack and store, keeping the report.
    pub(crate) fn reset(&mut self) {
        self.steps = 0;
        self.stack.clear();
        self.store = Store::default();
    }

    pub(super) fn tick(&mut self) -> Result<(), EvalError> {
        self.steps += 1;
        if self.steps > self.cfg.fuel {
            Err(EvalError::FuelExhausted(self.cfg.fuel))
        } else {
            Ok(())
        }
    }

    fn eval(&mut self, e: &'p Expr, env: Env) -> Result<Ctl<'p>, EvalError> {
        Ok(match &e.kind {
            ExprKind::Var(n) => match env.lookup(n) {
                Some(v) => Ctl::Ret(v.clone()),
                None => Ctl::Ret(self.call_logic(n, Vec::new())?),
            },
            ExprKind::Const(l) => Ctl::Ret(super::logic::literal(l)),
            ExprKind::Lambda(l) => {
                if self.sites.is_none() {
                    return Err(EvalError::Stuck(
                        "closure created in a first-order run".into(),
                    ));
                }
                Ctl::Ret(Value::Closure(Rc::new(Closure { site: l.site, env })))
            }
            ExprKind::App(head, args) => {
                if let ExprKind::Var(n) = &head.kind {
                    let pending = match env.lookup(n) {
                        Some(Value::LocalFun(b, i)) => {
                            let decls = self.blocks[&b.key];
                            Pending::Fun(&decls[*i], b.key, self.block_env(b))
                        }
                        Some(v @ Value::Closure(_)) => {
                            let v = v.clone();
                            return self.collect(Pending::Dyn, vec![v], args, env);
                        }
                        Some(v) => {
                            return Err(EvalError::Stuck(format!("`{n}` = {v} is not a function")))
                        }
                        None => match self.funs.get(n.as_str()) {
                            Some(&(fd, key)) => Pending::Fun(fd, key, Env::new()),
                            None => Pending::Logic(n),
                        },
                    };
                    return self.collect(pending, Vec::new(), args, env);
                }
                self.stack.push(Frame::Head(args, env.clone()));
                Ctl::Eval(head, env)
            }
            ExprKind::Let(p, a, b) => {
                self.stack.push(Frame::Let(p, b, env.clone()));
                Ctl::Eval(a, env)
            }
            ExprKind::LetRec(ds, body) => {
                let block = Rc::new(Block {
                    key: ds.as_ptr() as usize,
                    env: env.clone(),
                });
                let mut env = env;
                for (i, d) in ds.iter().enumerate() {
                    env = env.bind(&d.name, Value::LocalFun(block.clone(), i));
                }
                Ctl::Eval(body, env)
            }
            ExprKind::Match(s, arms) => {
                self.stack.push(Frame::Match(arms, env.clone(), e.span));
                Ctl::Eval(s, env)
            }
            ExprKind::Construct(c, args) => {
                return self.collect(Pending::Construct(c), Vec::new(), args, env)
            }
            ExprKind::Tuple(args) => return self.collect(Pending::Tuple, Vec::new(), args, env),
            ExprKind::RefNew(x) => {
                self.stack.push(Frame::RefNew);
                Ctl::Eval(x, env)
            }
            ExprKind::RefGet(x) => {
                self.stack.push(Frame::RefGet);
                Ctl::Eval(x, env)
            }
            ExprKind::RefSet(a, b) => {
                self.stack.push(Frame::RefSetL(b, env.clone()));
                Ctl::Eval(a, env)
            }
            ExprKind::Seq(a, b) => {
                self.stack.push(Frame::Seq(b, env.clone()));
                Ctl::Eval(a, env)
            }
            ExprKind::If(c, t, f) => {
                self.stack.push(Frame::If(t, f, env.clone()));
                Ctl::Eval(c, env)
            }
            ExprKind::BinOp(op, a, b) => {
                self.stack.push(Frame::BinL(*op, b, env.clone()));
                Ctl::Eval(a, env)
            }
            ExprKind::UnOp(op, x) => {
                self.stack.push(Frame::Un(*op));
                Ctl::Eval(x, env)
            }
            ExprKind::Absurd => {
                self.report.absurd.push(e.span);
                return Err(EvalError::Absurd { span: e.span });
            }
            _ => return Err(EvalError::Stuck("formula evaluated as code".into())),
        })
    }

    fn block_env(&self, b: &Rc<Block>) -> Env {
        let mut env = b.env.clone();
        for (i, d) in self.blocks[&b.key].iter().enumerate() {
            env = env.bind(&d.name, Value::LocalFun(b.clone(), i));
        }
        env
    }

    fn collect(
        &mut self,
        pending: Pending<'p>,
        vals: Vec<Value>,
        rest: &'p [Expr],
        env: Env,
    ) -> Result<Ctl<'p>, EvalError> {
        if rest.is_empty() {
            return self.finish(pending, vals);
        }
        self.stack.push(Frame::Args {
            pending,
            vals,
            rest,
            next: 1,
            env: env.clone(),
        });
        Ok(Ctl::Eval(&rest[0], env))
    }

    fn ret(&mut self, frame: Frame<'p>, v: Value) -> Result<Ctl<'p>, EvalError> {
        Ok(match frame {
            Frame::Let(p, body, env) => match match_pattern(p, &v, &env) {
                Some(env) => Ctl::Eval(body, env),
                None => {
                    return Err(EvalError::MatchFailure {
                        value: v.to_string(),
                        span: p.span,
                    })
                }
            },
            Frame::Seq(b, env) => Ctl::Eval(b, env),
            Frame::If(t, f, env) => match v {
                Value::Bool(true) => Ctl::Eval(t, env),
                Value::Bool(false) => Ctl::Eval(f, env),
                _ => return Err(EvalError::Stuck("non-boolean condition".into())),
            },
            Frame::Match(arms, env, span) => {
                for a in arms {
                    if let Some(env) = match_pattern(&a.pattern, &v, &env) {
                        return Ok(Ctl::Eval(&a.body, env));
                    }
                }
                return Err(EvalError::MatchFailure {
                    value: v.to_string(),
                    span,
                });
            }
            Frame::BinL(op, b, env) => match (op, v.as_bool()) {
                (BinOp::And, Some(false)) => Ctl::Ret(Value::Bool(false)),
                (BinOp::Or, Some(true)) => Ctl::Ret(Value::Bool(true)),
                (BinOp::Implies, Some(false)) => Ctl::Ret(Value::Bool(true)),
                _ => {
                    self.stack.push(Frame::BinR(op, v));
                    Ctl::Eval(b, env)
                }
            },
            Frame::BinR(op, a) => Ctl::Ret(super::logic::binop(op, &a, &v)?),
            Frame::Un(op) => Ctl::Ret(super::logic::unop(op, &v)?),
            Frame::Head(args, env) => return self.collect(Pending::Dyn, vec![v], args, env),
            Frame::Args {
                pending,
                mut vals,
                rest,
                next,
                env,
            } => {
                vals.push(v);
                if next < rest.len() {
                    let e = &rest[next];
                    self.stack.push(Frame::Args {
                        pending,
                        vals,
                        rest,
                        next: next + 1,
                        env: env.clone(),
                    });
                    Ctl::Eval(e, env)
                } else {
                    return self.finish(pending, vals);
                }
            }
            Frame::RefNew => Ctl::Ret(Value::Ref(self.store.alloc(v))),
            Frame::RefGet => match v {
                Value::Ref(l) => Ctl::Ret(self.store.get(l).cloned().ok_or_else(|| dangling(l))?),
                _ => return Err(EvalError::Stuck("dereference of a non-reference".into())),
            },
            Frame::RefSetL(b, env) => match v {
                Value::Ref(l) => {
                    self.stack.push(Frame::RefSetR(l));
                    Ctl::Eval(b, env)
                }
                _ => return Err(EvalError::Stuck("assignment to a non-reference".into())),
            },
            Frame::RefSetR(l) => {
                if l >= self.store.len() {
                    return Err(dangling(l));
                }
                self.store.set(l, v);
                Ctl::Ret(Value::Unit)
            }
            Frame::Return(cf) => {
                self.leave(*cf, &v)?;
                Ctl::Ret(v)
            }
        })
    }

    fn finish(&mut self, pending: Pending<'p>, vals: Vec<Value>) -> Result<Ctl<'p>, EvalError> {
        Ok(match pending {
            Pending::Fun(fd, key, base) => return self.enter(fd, key, base, vals),
            Pending::Dyn => {
                let mut it = vals.into_iter();
                let head = it.next().unwrap();
                let arg = it
                    .next()
                    .ok_or_else(|| EvalError::Stuck("application without argument".into()))?;
                match head {
                    Value::Closure(c) => return self.enter_closure(&c, arg),
                    other => return Err(EvalError::Stuck(format!("{other} is not a function"))),
                }
            }
            Pending::Construct(c) => Ctl::Ret(Value::con(c, vals)),
            Pending::Tuple => Ctl::Ret(Value::tuple(vals)),
            Pending::Logic(n) => Ctl::Ret(self.call_logic(n, vals)?),
        })
    }

    fn enter(
        &mut self,
        fd: &'p FunDecl,
        key: usize,
        base: Env,
        args: Vec<Value>,
    ) -> Result<Ctl<'p>, EvalError> {
        let mut env = base;
        for (p, a) in fd.params.iter().zip(args) {
            env = env.bind(&p.name, a);
        }
        let apply = is_apply_name(&fd.name);
        if apply && self.cfg.trace {
            let params: Vec<Value> = fd
                .params
                .iter()
                .map(|p| env.lookup(&p.name).unwrap().clone())
                .collect();
            if let [Value::Con(c, _), arg] = &params[..] {
                self.trace.push(format!("{} {c} {arg}", fd.name));
            }
        }
        let mut variant = None;
        if self.cfg.check_contracts {
            self.check(
                &fd.name,
                "requires",
                &fd.contract.requires,
                &env,
                None,
                None,
            )?;
            if !fd.contract.variant.is_empty() {
                variant = self.check_variant(&fd.name, &fd.contract.variant, &env, key, fd.span)?;
            }
        }
        let old = (self.cfg.check_contracts && !fd.contract.ensures.is_empty())
            .then(|| self.store.clone());
        self.stack.push(Frame::Return(Box::new(CallFrame {
            name: fd.name.clone(),
            ensures: &fd.contract.ensures,
            env: env.clone(),
            old,
            variant,
            block: Some(key),
            apply,
        })));
        Ok(Ctl::Eval(&fd.body, env))
    }

    fn enter_closure(&mut self, c: &Closure, arg: Value) -> Result<Ctl<'p>, EvalError> {
        let l = *self
            .lambdas
            .get(&c.site)
            .ok_or_else(|| EvalError::Stuck(format!("unknown lambda site {}", c.site)))?;
        let env = match_pattern(&l.param, &arg, &c.env).ok_or_else(|| EvalError::MatchFailure {
            value: arg.to_string(),
            span: l.param.span,
        })?;
        let name = match self.sites.and_then(|t| t.sites.get(&c.site)) {
            Some(s) => {
                if self.cfg.trace {
                    self.trace
                        .push(format!("{} {} {arg}", s.apply, s.constructor));
                }
                s.constructor.clone()
            }
            None => format!("fun#{}", c.site),
        };
        if self.cfg.check_contracts {
            self.check(&name, "requires", &l.contract.requires, &env, None, None)?;
        }
        let old = (self.cfg.check_contracts && !l.contract.ensures.is_empty())
            .then(|| self.store.clone());
        self.stack.push(Frame::Return(Box::new(CallFrame {
            name,
            ensures: &l.contract.ensures,
            env: env.clone(),
            old,
            variant: None,
            block: None,
            apply: false,
        })));
        Ok(Ctl::Eval(&l.body, env))
    }

    fn leave(&mut self, cf: CallFrame<'p>, result: &Value) -> Result<(), EvalError> {
        if self.cfg.check_contracts && !cf.ensures.is_empty() {
            self.check(
                &cf.name,
                "ensures",
                cf.ensures,
                &cf.env,
                cf.old.as_ref(),
                Some(result),
            )?;
            if cf.apply {
                self.report.apply_posts += cf.ensures.len();
            }
        }
        Ok(())
    }

    /// Evaluates contract clauses, recording the outcome.
    pub(super) fn check(
        &mut self,
        who: &str,
        kind: &'static str,
        clauses: &[Expr],
        env: &Env,
        old: Option<&Store>,
        result: Option<&Value>,
    ) -> Result<(), EvalError> {
        for c in clauses {
            self.sampled = false;
            self.witness.clear();
            let cur = self.store.clone();
            let verdict = self.formula(c, env.clone(), old, &cur, result.cloned());
            if self.sampled {
                self.report.sampled += 1;
            }
            match verdict {
                Ok(true) => self.report.checked += 1,
                Ok(false) => {
                    self.report.checked += 1;
                    let mut witness: Vec<(String, String)> = env
                        .bindings()
                        .into_iter()
                        .filter(|(_, v)| !matches!(v, Value::LocalFun(..)))
                        .map(|(n, v)| (n, v.to_string()))
                        .collect();
                    witness.reverse();
                    if let Some(r) = result {
                        witness.push(("result".into(), r.to_string()));
                    }
                    witness.append(&mut self.witness);
                    let v = Violation {
                        function: who.to_string(),
                        kind,
                        clause: emit_expr(c),
                        span: c.span,
                        witness,
                    };
                    if self.cfg.strict {
                        return Err(EvalError::Violation(v));
                    }
                    self.report.violations.push(v);
                }
                Err(EvalError::NotDecidable(_)) => self.report.undecided += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Checks that the variant decreases with respect to the nearest active
    /// call of the same recursive block, and that integer components are
    /// nonnegative.
    fn check_variant(
        &mut self,
        who: &str,
        clauses: &'p [Expr],
        env: &Env,
        key: usize,
        span: Span,
    ) -> Result<Option<Vec<Value>>, EvalError> {
        let cur = self.store.clone();
        let mut vals = Vec::new();
        for c in clauses {
            vals.push(self.eval_term(c, env.clone(), None, &cur, None)?);
        }
        let prev = self.stack.iter().rev().find_map(|f| match f {
            Frame::Return(cf) if cf.block == Some(key) => cf.variant.as_ref(),
            _ => None,
        });
        let mut problem = None;
        if vals.iter().any(|v| matches!(v, Value::Int(n) if *n < 0)) {
            problem = Some("a measure is negative".to_string());
        }
        if let Some(prev) = prev {
            self.report.variant_checks += 1;
            if problem.is_none() {
                problem = lex_decrease(prev, &vals).err();
            }
        }
        if let Some(p) = problem {
            let mut witness: Vec<(String, String)> = clauses
                .iter()
                .zip(&vals)
                .map(|(c, v)| (emit_expr(c), v.to_string()))
                .collect();
            if let Some(prev) = prev {
                witness.push((
                    "caller measure".into(),
                    prev.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(", "),
                ));
            }
            let v = Violation {
                function: who.to_string(),
                kind: "variant",
                clause: p,
                span,
                witness,
            };
            if self.cfg.strict {
                return Err(EvalError::Violation(v));
            }
            self.report.variant_violations.push(v);
        }
        Ok(Some(vals))
    }
}

fn dangling(l: usize) -> EvalError {
    EvalError::Stuck(format!("dangling reference {l}"))
}

/// Strict lexicographic decrease; integers compare numerically and
/// constructor values by the strict subterm relation.
pub(crate) fn lex_decrease(prev: &[Value], next: &[Value]) -> Result<(), String> {
    for (a, b) in prev.iter().zip(next) {
        match (a, b) {
            (Value::Int(x), Value::Int(y)) => {
                if y < x {
                    return Ok(());
                }
                if y > x {
                    return Err(format!("measure increased from {x} to {y}"));
                }
            }
            (Value::Con(..), Value::Con(..)) => {
                if a == b {
                    continue;
                }
                if subterms(a).iter().skip(1).any(|s| s == b) {
                    return Ok(());
                }
                return Err(format!("{b} is not a subterm of {a}"));
            }
            _ => {
                if a != b {
                    return Err(format!("measures {a} and {b} are not comparable"));
                }
            }
        }
    }
    Err("measure did not decrease".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_order() {
        let i = Value::Int;
        assert!(lex_decrease(&[i(3)], &[i(2)]).is_ok());
        assert!(lex_decrease(&[i(3)], &[i(3)]).is_err());
        assert!(lex_decrease(&[i(3), i(0)], &[i(3), i(-1)]).is_ok());
        assert!(lex_decrease(&[i(2), i(0)], &[i(3), i(-1)]).is_err());
        let leaf = Value::con("CHole", vec![]);
        let c = Value::con("CApp_left", vec![leaf.clone(), i(1)]);
        assert!(lex_decrease(std::slice::from_ref(&c), std::slice::from_ref(&leaf)).is_ok());
        assert!(lex_decrease(&[leaf], &[c]).is_err());
    }
}

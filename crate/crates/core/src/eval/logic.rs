//! Evaluation of formulas and logic functions.

use std::collections::BTreeSet;
use std::rc::Rc;

use rand::Rng;

use super::machine::Machine;
use super::*;
use crate::ast::{BinOp, ExprKind, Literal, Type, UnOp};
use crate::emit::emit_type;

/// Stores and `result` visible to a formula.
#[derive(Clone, Copy)]
pub(super) struct Scope<'s> {
    old: Option<&'s Store>,
    cur: &'s Store,
    result: Option<&'s Value>,
}

pub(super) fn literal(l: &Literal) -> Value {
    match l {
        Literal::Int(n) => Value::Int(*n),
        Literal::Bool(b) => Value::Bool(*b),
        Literal::Unit => Value::Unit,
    }
}

fn int(v: &Value) -> Result<i64, EvalError> {
    v.as_int()
        .ok_or_else(|| EvalError::Stuck(format!("expected an integer, got {v}")))
}

fn boolean(v: &Value) -> Result<bool, EvalError> {
    v.as_bool()
        .ok_or_else(|| EvalError::Stuck(format!("expected a boolean, got {v}")))
}

fn set(v: &Value) -> Result<&Rc<BTreeSet<Value>>, EvalError> {
    match v {
        Value::Set(s) => Ok(s),
        _ => Err(EvalError::Stuck(format!("expected a set, got {v}"))),
    }
}

pub(super) fn binop(op: BinOp, a: &Value, b: &Value) -> Result<Value, EvalError> {
    use BinOp::*;
    let arith = |r: Option<i64>| r.map(Value::Int).ok_or(EvalError::Overflow);
    Ok(match op {
        Add => arith(int(a)?.checked_add(int(b)?))?,
        Sub => arith(int(a)?.checked_sub(int(b)?))?,
        Mul => arith(int(a)?.checked_mul(int(b)?))?,
        Lt => Value::Bool(int(a)? < int(b)?),
        Le => Value::Bool(int(a)? <= int(b)?),
        Gt => Value::Bool(int(a)? > int(b)?),
        Ge => Value::Bool(int(a)? >= int(b)?),
        Eq | ExtEq => Value::Bool(a == b),
        Ne => Value::Bool(a != b),
        And => Value::Bool(boolean(a)? && boolean(b)?),
        Or => Value::Bool(boolean(a)? || boolean(b)?),
        Implies => Value::Bool(!boolean(a)? || boolean(b)?),
    })
}

pub(super) fn unop(op: UnOp, v: &Value) -> Result<Value, EvalError> {
    Ok(match op {
        UnOp::Not => Value::Bool(!boolean(v)?),
        UnOp::Neg => Value::Int(int(v)?.checked_neg().ok_or(EvalError::Overflow)?),
    })
}

fn builtin(name: &str, args: &[Value]) -> Option<Result<Value, EvalError>> {
    let with_set = |s: &Value, f: &dyn Fn(&mut BTreeSet<Value>)| {
        set(s).map(|s| {
            let mut s = (**s).clone();
            f(&mut s);
            Value::Set(Rc::new(s))
        })
    };
    Some(match (name, args) {
        ("max", [a, b]) => int(a).and_then(|x| int(b).map(|y| Value::Int(x.max(y)))),
        ("min", [a, b]) => int(a).and_then(|x| int(b).map(|y| Value::Int(x.min(y)))),
        ("abs", [a]) => {
            int(a).and_then(|x| x.checked_abs().map(Value::Int).ok_or(EvalError::Overflow))
        }
        ("empty", []) => Ok(Value::set([])),
        ("add", [x, s]) => with_set(s, &|s| {
            s.insert(x.clone());
        }),
        ("remove", [x, s]) => with_set(s, &|s| {
            s.remove(x);
        }),
        ("mem", [x, s]) => set(s).map(|s| Value::Bool(s.contains(x))),
        ("cardinal", [s]) => set(s).map(|s| Value::Int(s.len() as i64)),
        ("union", [a, b]) => set(b).and_then(|b| with_set(a, &|s| s.extend(b.iter().cloned()))),
        ("singleton", [x]) => Ok(Value::set([x.clone()])),
        _ => return None,
    })
}

impl<'p> Machine<'p> {
    /// Truth value of a formula.
    pub(crate) fn formula(
        &mut self,
        f: &Expr,
        env: Env,
        old: Option<&Store>,
        cur: &Store,
        result: Option<Value>,
    ) -> Result<bool, EvalError> {
        let v = self.eval_term(f, env, old, cur, result)?;
        boolean(&v)
    }

    pub(crate) fn eval_term(
        &mut self,
        f: &Expr,
        env: Env,
        old: Option<&Store>,
        cur: &Store,
        result: Option<Value>,
    ) -> Result<Value, EvalError> {
        let sc = Scope {
            old,
            cur,
            result: result.as_ref(),
        };
        self.term(f, &env, sc)
    }

    /// Calls a logic function or builtin from code.
    pub(crate) fn call_logic(&mut self, name: &str, args: Vec<Value>) -> Result<Value, EvalError> {
        let cur = self.store.clone();
        let sc = Scope {
            old: None,
            cur: &cur,
            result: None,
        };
        self.apply_logic(name, args, sc)
    }

    fn apply_logic(&mut self, name: &str, args: Vec<Value>, sc: Scope) -> Result<Value, EvalError> {
        self.tick()?;
        if let Some(l) = self.logic.get(name).copied() {
            if l.params.len() != args.len() {
                return Err(EvalError::Stuck(format!(
                    "`{name}` applied to {} arguments",
                    args.len()
                )));
            }
            let mut env = Env::new();
            for (p, a) in l.params.iter().zip(args) {
                env = env.bind(&p.name, a);
            }
            return self.term(&l.body, &env, sc);
        }
        match builtin(name, &args) {
            Some(r) => r,
            None => Err(EvalError::Stuck(format!("unknown function `{name}`"))),
        }
    }

    fn term(&mut self, e: &Expr, env: &Env, sc: Scope) -> Result<Value, EvalError> {
        Ok(match &e.kind {
            ExprKind::Var(n) => match env.lookup(n) {
                Some(v) => v.clone(),
                None => self.apply_logic(n, Vec::new(), sc)?,
            },
            ExprKind::Const(l) => literal(l),
            ExprKind::Result => sc
                .result
                .cloned()
                .ok_or_else(|| EvalError::Stuck("`result` outside a postcondition".into()))?,
            ExprKind::App(head, args) => {
                let ExprKind::Var(f) = &head.kind else {
                    return Err(EvalError::Stuck(
                        "application of a term in a formula".into(),
                    ));
                };
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.term(a, env, sc)?);
                }
                if env.lookup(f).is_some() {
                    return Err(EvalError::Stuck(format!("`{f}` applied in a formula")));
                }
                self.apply_logic(f, vals, sc)?
            }
            ExprKind::Construct(c, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.term(a, env, sc)?);
                }
                Value::con(c, vals)
            }
            ExprKind::Tuple(args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.term(a, env, sc)?);
                }
                Value::tuple(vals)
            }
            ExprKind::Let(p, a, b) => {
                let mut v = self.term(a, env, sc)?;
                if matches!(p.kind, PatternKind::Construct(..)) {
                    v = self.as_data(v)?;
                }
                let env = match_pattern(p, &v, env).ok_or_else(|| EvalError::MatchFailure {
                    value: v.to_string(),
                    span: p.span,
                })?;
                self.term(b, &env, sc)?
            }
            ExprKind::Match(s, arms) => {
                let v = self.term(s, env, sc)?;
                let v = self.as_data(v)?;
                for a in arms {
                    if let Some(env) = match_pattern(&a.pattern, &v, env) {
                        return self.term(&a.body, &env, sc);
                    }
                }
                return Err(EvalError::MatchFailure {
                    value: v.to_string(),
                    span: e.span,
                });
            }
            ExprKind::If(c, t, f) => {
                if boolean(&self.term(c, env, sc)?)? {
                    self.term(t, env, sc)?
                } else {
                    self.term(f, env, sc)?
                }
            }
            ExprKind::BinOp(op, a, b) => {
                let x = self.term(a, env, sc)?;
                match (op, x.as_bool()) {
                    (BinOp::And, Some(false)) => Value::Bool(false),
                    (BinOp::Or, Some(true)) => Value::Bool(true),
                    (BinOp::Implies, Some(false)) => Value::Bool(true),
                    _ => {
                        let y = self.term(b, env, sc)?;
                        binop(*op, &x, &y)?
                    }
                }
            }
            ExprKind::UnOp(op, x) => unop(*op, &self.term(x, env, sc)?)?,
            ExprKind::RefGet(x) => match self.term(x, env, sc)? {
                Value::Ref(l) => sc
                    .cur
                    .get(l)
                    .cloned()
                    .ok_or_else(|| EvalError::Stuck(format!("dangling reference {l}")))?,
                v => return Err(EvalError::Stuck(format!("dereference of {v}"))),
            },
            ExprKind::Old(x) => {
                let old = sc
                    .old
                    .ok_or_else(|| EvalError::Stuck("`old` outside a postcondition".into()))?;
                self.term(x, env, Scope { cur: old, ..sc })?
            }
            ExprKind::Forall(vs, body) => Value::Bool(self.forall(vs, body, env, sc)?),
            ExprKind::PostProj(f, args) | ExprKind::PreProj(f, args) => {
                let post = matches!(e.kind, ExprKind::PostProj(..));
                let fv = self.term(f, env, sc)?;
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.term(a, env, sc)?);
                }
                let name = if post { "post" } else { "pre" };
                if !matches!(fv, Value::Closure(_)) && self.logic.contains_key(name) {
                    // A formula parsed without its program: `post` is the
                    // generated predicate.
                    vals.insert(0, fv);
                    return self.apply_logic(name, vals, sc);
                }
                Value::Bool(self.projection(post, fv, vals, sc)?)
            }
            ExprKind::Absurd => return Err(EvalError::Stuck("`absurd` in a formula".into())),
            _ => return Err(EvalError::Stuck("program construct in a formula".into())),
        })
    }

    /// Replaces closures by the constructor values they become after
    /// defunctionalization, so that formulas can match on them.
    fn as_data(&self, v: Value) -> Result<Value, EvalError> {
        match &v {
            Value::Closure(c) => {
                let spec = self
                    .sites
                    .and_then(|t| t.sites.get(&c.site))
                    .ok_or_else(|| EvalError::Stuck("closure without site information".into()))?;
                let mut fields = Vec::new();
                for n in &spec.captures {
                    let x = c
                        .env
                        .lookup(n)
                        .cloned()
                        .ok_or_else(|| EvalError::Stuck(format!("capture `{n}` missing")))?;
                    fields.push(self.as_data(x)?);
                }
                Ok(Value::con(&spec.constructor, fields))
            }
            _ => Ok(v),
        }
    }

    /// `post f ..` or `pre f ..` on a closure: the contract of its lambda.
    fn projection(
        &mut self,
        post: bool,
        f: Value,
        args: Vec<Value>,
        sc: Scope,
    ) -> Result<bool, EvalError> {
        let Value::Closure(c) = &f else {
            return Err(EvalError::Stuck(format!("projection of {f}")));
        };
        let spec = self
            .sites
            .and_then(|t| t.sites.get(&c.site))
            .ok_or_else(|| EvalError::Stuck("closure without site information".into()))?;
        let l = self.lambdas[&c.site];
        let stateful = if post {
            args.len() == 4
        } else {
            args.len() == 2
        };
        let arg = &args[0];
        let env = match_pattern(&l.param, arg, &c.env).ok_or_else(|| EvalError::MatchFailure {
            value: arg.to_string(),
            span: l.param.span,
        })?;
        let locs: Vec<usize> = if stateful {
            spec.state
                .iter()
                .map(|h| match c.env.lookup(h) {
                    Some(Value::Ref(l)) => Ok(*l),
                    _ => Err(EvalError::Stuck(format!("state `{h}` not found"))),
                })
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let with_state = |base: &Store, v: &Value| -> Store {
            let mut s = base.clone();
            let parts: Vec<Value> = match v {
                Value::Tuple(vs) if locs.len() > 1 => vs.to_vec(),
                _ => vec![v.clone()],
            };
            for (l, x) in locs.iter().zip(parts) {
                if *l < s.len() {
                    s.set(*l, x);
                }
            }
            s
        };
        let formula = if post { &spec.post } else { &spec.pre };
        let formula = formula.clone();
        if post {
            let result = args.last().unwrap().clone();
            if stateful {
                let old = with_state(sc.cur, &args[1]);
                let cur = with_state(sc.cur, &args[2]);
                self.formula(&formula, env, Some(&old), &cur, Some(result))
            } else {
                self.formula(&formula, env, sc.old, sc.cur, Some(result))
            }
        } else if stateful {
            let cur = with_state(sc.cur, &args[1]);
            self.formula(&formula, env, None, &cur, None)
        } else {
            self.formula(&formula, env, None, sc.cur, None)
        }
    }

    /// Checks a universally quantified formula on random instances drawn
    /// from fresh values and from values in scope.
    fn forall(
        &mut self,
        vs: &[(String, Option<Type>)],
        body: &Expr,
        env: &Env,
        sc: Scope,
    ) -> Result<bool, EvalError> {
        self.sampled = true;
        let mut tys = Vec::new();
        for (v, t) in vs {
            match t {
                Some(t) => tys.push(t.clone()),
                None => {
                    return Err(EvalError::NotDecidable(format!(
                        "quantifier over `{v}` has no type"
                    )))
                }
            }
        }
        let mut pools: Vec<Vec<Value>> = Vec::new();
        let in_scope: Vec<Value> = env
            .bindings()
            .into_iter()
            .flat_map(|(_, v)| subterms(&v))
            .chain(sc.result.map(subterms).unwrap_or_default())
            .collect();
        for t in &tys {
            let mut pool: Vec<Value> = in_scope
                .iter()
                .filter(|v| !v.has_closure() && value_has_type(v, t, &self.tenv))
                .cloned()
                .collect();
            pool.sort();
            pool.dedup();
            pools.push(pool);
        }
        for _ in 0..self.cfg.samples {
            let mut e = env.clone();
            let mut chosen = Vec::new();
            for (((v, _), t), pool) in vs.iter().zip(&tys).zip(&pools) {
                let x = if !pool.is_empty() && self.rng.gen_bool(0.5) {
                    pool[self.rng.gen_range(0..pool.len())].clone()
                } else {
                    let size = self.rng.gen_range(0..=6);
                    gen_value(t, &self.tenv, &mut self.rng, size).ok_or_else(|| {
                        EvalError::NotDecidable(format!(
                            "cannot sample values of type {}",
                            emit_type(t)
                        ))
                    })?
                };
                chosen.push((v.clone(), x.to_string()));
                e = e.bind(v, x);
            }
            if !boolean(&self.term(body, &e, sc)?)? {
                self.witness = chosen;
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_builtins() {
        let s = builtin("add", &[Value::Int(2), Value::set([Value::Int(1)])])
            .unwrap()
            .unwrap();
        assert_eq!(s, Value::set([Value::Int(1), Value::Int(2)]));
        let c = builtin("cardinal", std::slice::from_ref(&s))
            .unwrap()
            .unwrap();
        assert_eq!(c, Value::Int(2));
        let r = builtin("remove", &[Value::Int(1), s]).unwrap().unwrap();
        assert_eq!(r, Value::set([Value::Int(2)]));
    }

    #[test]
    fn arithmetic_overflow_is_an_error() {
        assert_eq!(
            binop(BinOp::Add, &Value::Int(i64::MAX), &Value::Int(1)),
            Err(EvalError::Overflow)
        );
        assert_eq!(
            unop(UnOp::Neg, &Value::Int(i64::MIN)),
            Err(EvalError::Overflow)
        );
    }
}

//! Interpreters for source and target programs with runtime contract
//! checking.
//!
//! Both programs run on the same machine: an explicit-stack CEK machine, so
//! deep CPS recursion never grows the host stack. Formulas (contracts and
//! logic functions) are evaluated by a separate recursive evaluator;
//! quantifiers are checked on random samples and counted as such in the
//! [`CheckReport`].
//!
//! In the source program a `post f ..` projection on a closure evaluates the
//! postcondition of the lambda the closure comes from, as given by a
//! [`SiteTable`]. The same table lets formulas pattern match on closures as
//! if they were already constructor values, which is how measures over the
//! continuation type apply to source runs.

mod gen;
mod lemma;
mod logic;
mod machine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::ast::{Expr, Pattern, PatternKind, Program, SiteId, Span};
use crate::defunc::Defunctionalized;
use crate::typecheck::TypedProgram;

pub use gen::{gen_value, subterms, value_has_type};
pub use lemma::{check_lemma_dynamic, LemmaReport};
pub(crate) use machine::Machine;

/// Runtime value. Closures only occur in source runs.
#[derive(Clone, Debug)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Unit,
    Tuple(Rc<[Value]>),
    Con(Rc<str>, Rc<[Value]>),
    Closure(Rc<Closure>),
    /// A function of a local `let rec` block.
    LocalFun(Rc<Block>, usize),
    Ref(usize),
    Set(Rc<BTreeSet<Value>>),
}

#[derive(Debug)]
pub struct Closure {
    pub site: SiteId,
    pub env: Env,
}

/// A local recursive block and the environment it was defined in.
#[derive(Debug)]
pub struct Block {
    pub key: usize,
    pub env: Env,
}

impl Value {
    pub fn con(name: &str, fields: Vec<Value>) -> Value {
        Value::Con(name.into(), fields.into())
    }

    pub fn tuple(vs: Vec<Value>) -> Value {
        Value::Tuple(vs.into())
    }

    pub fn set(vs: impl IntoIterator<Item = Value>) -> Value {
        Value::Set(Rc::new(vs.into_iter().collect()))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Int(_) => 0,
            Value::Bool(_) => 1,
            Value::Unit => 2,
            Value::Tuple(_) => 3,
            Value::Con(..) => 4,
            Value::Closure(_) => 5,
            Value::LocalFun(..) => 6,
            Value::Ref(_) => 7,
            Value::Set(_) => 8,
        }
    }

    /// Whether the value contains a closure anywhere.
    pub fn has_closure(&self) -> bool {
        match self {
            Value::Closure(_) | Value::LocalFun(..) => true,
            Value::Tuple(vs) | Value::Con(_, vs) => vs.iter().any(Value::has_closure),
            Value::Set(s) => s.iter().any(Value::has_closure),
            _ => false,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use Value::*;
        match (self, other) {
            (Int(a), Int(b)) => a.cmp(b),
            (Bool(a), Bool(b)) => a.cmp(b),
            (Unit, Unit) => std::cmp::Ordering::Equal,
            (Tuple(a), Tuple(b)) => a.iter().cmp(b.iter()),
            (Con(c, a), Con(d, b)) => c.cmp(d).then_with(|| a.iter().cmp(b.iter())),
            (Closure(a), Closure(b)) => a
                .site
                .cmp(&b.site)
                .then_with(|| Rc::as_ptr(a).cmp(&Rc::as_ptr(b))),
            (LocalFun(a, i), LocalFun(b, j)) => Rc::as_ptr(a).cmp(&Rc::as_ptr(b)).then(i.cmp(j)),
            (Ref(a), Ref(b)) => a.cmp(b),
            (Set(a), Set(b)) => a.iter().cmp(b.iter()),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn atom(v: &Value, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match v {
                Value::Con(_, fs) if !fs.is_empty() => write!(f, "({v})"),
                Value::Int(n) if *n < 0 => write!(f, "({n})"),
                _ => write!(f, "{v}"),
            }
        }
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Unit => write!(f, "()"),
            Value::Tuple(vs) => {
                write!(f, "(")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
            Value::Con(c, fs) => {
                write!(f, "{c}")?;
                for v in fs.iter() {
                    write!(f, " ")?;
                    atom(v, f)?;
                }
                Ok(())
            }
            Value::Closure(c) => write!(f, "<fun#{}>", c.site),
            Value::LocalFun(_, i) => write!(f, "<local#{i}>"),
            Value::Ref(l) => write!(f, "<ref#{l}>"),
            Value::Set(s) => {
                write!(f, "{{")?;
                for (i, v) in s.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

/// Persistent environment.
#[derive(Clone, Debug, Default)]
pub struct Env(Option<Rc<EnvNode>>);

#[derive(Debug)]
struct EnvNode {
    name: Rc<str>,
    value: Value,
    next: Env,
}

impl Env {
    pub fn new() -> Self {
        Env(None)
    }

    pub fn bind(&self, name: &str, value: Value) -> Env {
        Env(Some(Rc::new(EnvNode {
            name: name.into(),
            value,
            next: self.clone(),
        })))
    }

    pub fn lookup(&self, name: &str) -> Option<&Value> {
        let mut cur = &self.0;
        while let Some(n) = cur {
            if &*n.name == name {
                return Some(&n.value);
            }
            cur = &n.next.0;
        }
        None
    }

    /// Bindings, innermost first, shadowed ones omitted.
    pub fn bindings(&self) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut cur = &self.0;
        while let Some(n) = cur {
            if !out.iter().any(|(m, _)| **m == *n.name) {
                out.push((n.name.to_string(), n.value.clone()));
            }
            cur = &n.next.0;
        }
        out
    }
}

/// Mutable store: location to value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Store {
    cells: Vec<Value>,
}

impl Store {
    pub fn alloc(&mut self, v: Value) -> usize {
        self.cells.push(v);
        self.cells.len() - 1
    }

    pub fn get(&self, loc: usize) -> Option<&Value> {
        self.cells.get(loc)
    }

    pub fn set(&mut self, loc: usize, v: Value) {
        self.cells[loc] = v;
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Value] {
        &self.cells
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("no match arm applies to `{value}`")]
    MatchFailure { value: String, span: Span },
    #[error("fuel exhausted after {0} steps")]
    FuelExhausted(u64),
    #[error("integer overflow")]
    Overflow,
    #[error("`absurd` reached")]
    Absurd { span: Span },
    #[error("{0}")]
    Violation(Violation),
    #[error("not decidable: {0}")]
    NotDecidable(String),
    #[error("stuck: {0}")]
    Stuck(String),
}

/// A contract clause that evaluated to false.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub function: String,
    /// `requires`, `ensures` or `variant`.
    pub kind: &'static str,
    pub clause: String,
    pub span: Span,
    /// Values of the relevant variables.
    pub witness: Vec<(String, String)>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} of `{}` violated: {}",
            self.kind, self.function, self.clause
        )?;
        for (n, v) in &self.witness {
            write!(f, "\n    {n} = {v}")?;
        }
        Ok(())
    }
}

/// Counts of contract checks performed during one or more runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    /// Clauses evaluated to true or false.
    pub checked: usize,
    pub violations: Vec<Violation>,
    pub variant_violations: Vec<Violation>,
    pub absurd: Vec<Span>,
    /// Clauses containing a quantifier, checked on samples only.
    pub sampled: usize,
    /// Clauses that could not be decided.
    pub undecided: usize,
    /// Ensures clauses checked at returns of `apply`.
    pub apply_posts: usize,
    /// Variant comparisons performed.
    pub variant_checks: usize,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.variant_violations.is_empty() && self.absurd.is_empty()
    }

    pub fn merge(&mut self, o: &CheckReport) {
        self.checked += o.checked;
        self.violations.extend(o.violations.iter().cloned());
        self.variant_violations
            .extend(o.variant_violations.iter().cloned());
        self.absurd.extend(o.absurd.iter().cloned());
        self.sampled += o.sampled;
        self.undecided += o.undecided;
        self.apply_posts += o.apply_posts;
        self.variant_checks += o.variant_checks;
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub fuel: u64,
    /// Samples per quantified formula.
    pub samples: usize,
    pub seed: u64,
    /// Stop at the first violation.
    pub strict: bool,
    pub trace: bool,
    pub check_contracts: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fuel: 10_000_000,
            samples: 64,
            seed: 0,
            strict: false,
            trace: false,
            check_contracts: true,
        }
    }
}

/// Result of one run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub result: Result<Value, EvalError>,
    pub store: Store,
    pub report: CheckReport,
    pub trace: Vec<String>,
    pub steps: u64,
}

/// What the source interpreter needs to know about each lambda site.
#[derive(Clone, Debug, Default)]
pub struct SiteTable {
    pub sites: BTreeMap<SiteId, SiteSpec>,
}

#[derive(Clone, Debug)]
pub struct SiteSpec {
    pub constructor: String,
    pub captures: Vec<String>,
    /// Postcondition in source vocabulary.
    pub post: Expr,
    pub pre: Expr,
    /// State references of the group.
    pub state: Vec<String>,
    /// Name of the generated `apply`, used in traces.
    pub apply: String,
}

impl SiteTable {
    pub fn new(d: &Defunctionalized) -> Self {
        let mut sites = BTreeMap::new();
        for g in &d.groups {
            for s in &g.sites {
                sites.insert(
                    s.site,
                    SiteSpec {
                        constructor: s.constructor.clone(),
                        captures: s.captures.iter().map(|(n, _)| n.clone()).collect(),
                        post: d
                            .site_posts
                            .get(&s.site)
                            .cloned()
                            .unwrap_or_else(|| Expr::bool(true)),
                        pre: d
                            .site_pres
                            .get(&s.site)
                            .cloned()
                            .unwrap_or_else(|| Expr::bool(true)),
                        state: g.state.iter().map(|r| r.name.clone()).collect(),
                        apply: g.names.apply.clone(),
                    },
                );
            }
        }
        SiteTable { sites }
    }
}

/// Runs `entry` of the source program.
pub fn eval_source(
    tp: &TypedProgram,
    d: &Defunctionalized,
    entry: &str,
    args: Vec<Value>,
    cfg: &EvalConfig,
) -> Outcome {
    let table = SiteTable::new(d);
    let mut m = Machine::new(tp.program(), Some(&table), cfg.clone());
    m.run(entry, args)
}

/// Runs `entry` of a first-order program. Functions named `apply` or
/// `apply<n>` are traced.
pub fn eval_target(p: &Program, entry: &str, args: Vec<Value>, cfg: &EvalConfig) -> Outcome {
    let mut m = Machine::new(p, None, cfg.clone());
    m.run(entry, args)
}

/// Evaluates a closed formula (free variables from `env`) of program `p`.
pub fn eval_formula(
    p: &Program,
    f: &Expr,
    env: &[(String, Value)],
    old: Option<&Store>,
    cur: &Store,
    cfg: &EvalConfig,
) -> Result<bool, EvalError> {
    let mut m = Machine::new(p, None, cfg.clone());
    let mut e = Env::new();
    for (n, v) in env {
        e = e.bind(n, v.clone());
    }
    m.formula(f, e, old, cur, None)
}

/// Calls a logic function (or builtin) of `p` on values.
pub fn call_logic(
    p: &Program,
    name: &str,
    args: Vec<Value>,
    cfg: &EvalConfig,
) -> Result<Value, EvalError> {
    let mut m = Machine::new(p, None, cfg.clone());
    m.call_logic(name, args)
}

pub(crate) fn match_pattern(p: &Pattern, v: &Value, env: &Env) -> Option<Env> {
    match (&p.kind, v) {
        (PatternKind::Wild, _) => Some(env.clone()),
        (PatternKind::Var(x), _) => Some(env.bind(x, v.clone())),
        (PatternKind::Unit, Value::Unit) => Some(env.clone()),
        (PatternKind::Tuple(ps), Value::Tuple(vs)) if ps.len() == vs.len() => {
            let mut e = env.clone();
            for (p, v) in ps.iter().zip(vs.iter()) {
                e = match_pattern(p, v, &e)?;
            }
            Some(e)
        }
        (PatternKind::Construct(c, ps), Value::Con(d, vs))
            if **c == **d && ps.len() == vs.len() =>
        {
            let mut e = env.clone();
            for (p, v) in ps.iter().zip(vs.iter()) {
                e = match_pattern(p, v, &e)?;
            }
            Some(e)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_order_structurally() {
        let a = Value::con("Node", vec![Value::con("Empty", vec![]), Value::Int(1)]);
        let b = Value::con("Node", vec![Value::con("Empty", vec![]), Value::Int(1)]);
        assert_eq!(a, b);
        assert!(Value::Int(1) < Value::Int(2));
        assert_eq!(
            Value::set([Value::Int(1), Value::Int(1)]),
            Value::set([Value::Int(1)])
        );
    }

    #[test]
    fn display_parenthesizes_arguments() {
        let v = Value::con(
            "Sub",
            vec![
                Value::con("Const", vec![Value::Int(-3)]),
                Value::con("Const", vec![Value::Int(1)]),
            ],
        );
        assert_eq!(v.to_string(), "Sub (Const (-3)) (Const 1)");
    }

    #[test]
    fn env_shadowing() {
        let e = Env::new().bind("x", Value::Int(1)).bind("x", Value::Int(2));
        assert_eq!(e.lookup("x"), Some(&Value::Int(2)));
        assert_eq!(e.bindings().len(), 1);
    }
}

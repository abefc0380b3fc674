//! Dynamic checking of lemma functions.
//!
//! Arguments are generated one parameter at a time, from fresh random
//! values, from values generated earlier (and their subterms), or as results
//! of program functions applied to those. After each parameter, every
//! conjunct of the precondition whose variables are all bound must hold,
//! otherwise the parameter is drawn again (a bounded number of times).
//! Accepted tuples are run through the lemma body with contracts checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ast::{formula_free_vars, BinOp, ExprKind, FunDecl, Type};
use crate::typecheck::TypeEnv;

const PARAM_RETRIES: usize = 40;

#[derive(Clone, Debug, Default)]
pub struct LemmaReport {
    pub name: String,
    pub requested: usize,
    /// Argument tuples that satisfied the precondition and were run.
    pub instances: usize,
    pub attempts: usize,
    pub report: CheckReport,
    /// Runs that ended in an evaluation error.
    pub errors: Vec<String>,
}

impl LemmaReport {
    pub fn inconclusive(&self) -> bool {
        self.requested == 0 || self.instances < self.requested
    }

    pub fn passed(&self) -> bool {
        !self.inconclusive() && self.report.is_clean() && self.errors.is_empty()
    }
}

fn conjuncts(e: &Expr, out: &mut Vec<Expr>) {
    match &e.kind {
        ExprKind::BinOp(BinOp::And, a, b) => {
            conjuncts(a, out);
            conjuncts(b, out);
        }
        _ => out.push(e.clone()),
    }
}

/// Types equal up to aliases, variables matching anything.
fn fits(a: &Type, b: &Type, tenv: &TypeEnv) -> bool {
    match (tenv.expand(a), tenv.expand(b)) {
        (Type::Var(_), _) | (_, Type::Var(_)) => true,
        (Type::Adt(x, xs), Type::Adt(y, ys)) => {
            x == y && xs.len() == ys.len() && xs.iter().zip(&ys).all(|(p, q)| fits(p, q, tenv))
        }
        (Type::Tuple(xs), Type::Tuple(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(&ys).all(|(p, q)| fits(p, q, tenv))
        }
        (Type::Set(x), Type::Set(y)) => fits(&x, &y, tenv),
        (x, y) => x == y,
    }
}

struct Gen<'p> {
    prog: &'p Program,
    tenv: TypeEnv,
    rng: ChaCha8Rng,
    producers: Vec<&'p FunDecl>,
    cfg: EvalConfig,
}

impl<'p> Gen<'p> {
    fn pick_existing(&mut self, ty: &Type, args: &[Value]) -> Option<Value> {
        let exact: Vec<&Value> = args
            .iter()
            .filter(|v| value_has_type(v, ty, &self.tenv))
            .collect();
        if !exact.is_empty() && self.rng.gen_bool(0.7) {
            return Some(exact[self.rng.gen_range(0..exact.len())].clone());
        }
        let subs: Vec<Value> = args
            .iter()
            .flat_map(subterms)
            .filter(|v| value_has_type(v, ty, &self.tenv))
            .collect();
        if subs.is_empty() {
            None
        } else {
            Some(subs[self.rng.gen_range(0..subs.len())].clone())
        }
    }

    fn random(&mut self, ty: &Type) -> Option<Value> {
        let size = self.rng.gen_range(0..=8);
        gen_value(ty, &self.tenv, &mut self.rng, size)
    }

    fn produce(&mut self, ty: &Type, args: &[Value], depth: usize) -> Option<Value> {
        let fs: Vec<&FunDecl> = self
            .producers
            .iter()
            .copied()
            .filter(|f| fits(&f.ret, ty, &self.tenv))
            .collect();
        if fs.is_empty() {
            return None;
        }
        let f = fs[self.rng.gen_range(0..fs.len())];
        let mut call_args = Vec::new();
        for p in &f.params {
            call_args.push(self.value(&p.ty, args, depth + 1)?);
        }
        let cfg = EvalConfig {
            fuel: 200_000,
            trace: false,
            ..self.cfg.clone()
        };
        let out = eval_target(self.prog, &f.name, call_args, &cfg);
        match out.result {
            Ok(v) if out.report.is_clean() && value_has_type(&v, ty, &self.tenv) => Some(v),
            _ => None,
        }
    }

    fn value(&mut self, ty: &Type, args: &[Value], depth: usize) -> Option<Value> {
        let r: f64 = self.rng.gen();
        let v = if r < 0.4 && depth < 3 {
            self.produce(ty, args, depth)
        } else if r < 0.75 {
            self.pick_existing(ty, args)
        } else {
            None
        };
        v.or_else(|| self.random(ty))
    }
}

/// Runs lemma function `name` of `p` on `samples` generated argument tuples.
pub fn check_lemma_dynamic(
    p: &Program,
    name: &str,
    samples: usize,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<LemmaReport, EvalError> {
    let fd = p
        .top_funs()
        .find(|f| f.name == name)
        .ok_or_else(|| EvalError::Stuck(format!("no lemma function `{name}`")))?;
    let mut rep = LemmaReport {
        name: name.to_string(),
        requested: samples,
        ..LemmaReport::default()
    };
    if samples == 0 {
        return Ok(rep);
    }
    let mut g = Gen {
        prog: p,
        tenv: TypeEnv::new(p),
        rng: ChaCha8Rng::seed_from_u64(seed),
        producers: p
            .top_funs()
            .filter(|f| !f.lemma && !f.params.is_empty())
            .collect(),
        cfg: cfg.clone(),
    };
    // Precondition conjuncts, indexed by the last parameter they mention.
    let names: Vec<&str> = fd.params.iter().map(|x| x.name.as_str()).collect();
    let mut staged: Vec<Vec<Expr>> = vec![Vec::new(); names.len()];
    for r in &fd.contract.requires {
        let mut cs = Vec::new();
        conjuncts(r, &mut cs);
        for c in cs {
            let last = formula_free_vars(&c)
                .iter()
                .filter_map(|v| names.iter().position(|n| n == v))
                .max()
                .unwrap_or(0);
            staged[last].push(c);
        }
    }
    let mut m = Machine::new(p, None, cfg.clone());
    let budget = samples * 50;
    'outer: while rep.instances < samples && rep.attempts < budget {
        rep.attempts += 1;
        let mut args: Vec<Value> = Vec::new();
        for (i, prm) in fd.params.iter().enumerate() {
            let mut accepted = false;
            for _ in 0..PARAM_RETRIES {
                let Some(v) = g.value(&prm.ty, &args, 0) else {
                    continue;
                };
                args.push(v);
                let mut env = Env::new();
                for (n, a) in names.iter().zip(&args) {
                    env = env.bind(n, a.clone());
                }
                let store = Store::default();
                m.reset();
                let ok = staged[i]
                    .iter()
                    .all(|c| matches!(m.formula(c, env.clone(), None, &store, None), Ok(true)));
                if ok {
                    accepted = true;
                    break;
                }
                args.pop();
            }
            if !accepted {
                continue 'outer;
            }
        }
        rep.instances += 1;
        m.reset();
        match m.call(name, args) {
            Ok(_) => {}
            Err(EvalError::Violation(v)) => rep.report.violations.push(v),
            Err(e) => rep.errors.push(e.to_string()),
        }
    }
    rep.report.merge(&std::mem::take(&mut m.report));
    Ok(rep)
}

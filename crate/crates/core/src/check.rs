//! Dynamic checking of a corpus entry: golden comparison, differential runs
//! against the reference oracle, runtime contracts and variants, lemma
//! sampling and entry-specific properties.
//!
//! The result is a list of [`CheckLine`]s, rendered one per line as
//! `entry<TAB>check<TAB>status<TAB>detail`. Everything is seeded, so equal
//! configurations give byte-identical reports.

use std::fmt;

use crate::ast::{Decl, ExprKind, Program, TypeDefBody};
use crate::corpus::{eval_exp, CorpusEntry, Generator};
use crate::defunc::{defunctionalize_program, Defunctionalized, LambdaGroup};
use crate::emit::{emit, emit_diff, EmitConfig};
use crate::eval::{
    check_lemma_dynamic, eval_formula, CheckReport, EvalConfig, EvalError, LemmaReport, Machine,
    SiteTable, Store, Value,
};
use crate::parser::parse;
use crate::typecheck::typecheck;

#[derive(Clone, Debug)]
pub struct CheckConfig {
    /// Overrides of the entry's own settings.
    pub runs: Option<usize>,
    pub max_size: Option<usize>,
    pub seed: Option<u64>,
    pub lemma_samples: Option<usize>,
    pub fuel: u64,
    /// Samples per quantified clause.
    pub samples: usize,
    /// Stop at the first failing run.
    pub strict: bool,
    pub trace: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            runs: None,
            max_size: None,
            seed: None,
            lemma_samples: None,
            fuel: EvalConfig::default().fuel,
            samples: 64,
            strict: false,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// Holds, but some quantified clause was only checked on samples.
    Sampled,
    Fail,
    Inconclusive,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Sampled => "sampled",
            Status::Fail => "FAIL",
            Status::Inconclusive => "inconclusive",
            Status::Skip => "skip",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub entry: String,
    pub check: String,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep the report one line per check.
        let detail = self.detail.replace('\n', " | ");
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.entry, self.check, self.status, detail
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct EntryReport {
    pub entry: String,
    pub lines: Vec<CheckLine>,
    pub runs: usize,
    pub mismatches: usize,
    pub source: CheckReport,
    pub target: CheckReport,
    pub lemmas: Vec<LemmaReport>,
    /// The transform broke one of its own invariants.
    pub internal: bool,
    /// Target trace of the first failing run (or the first run), when
    /// tracing is on.
    pub trace: Vec<String>,
}

impl EntryReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.status != Status::Fail)
    }

    pub fn line(&self, check: &str) -> Option<&CheckLine> {
        self.lines.iter().find(|l| l.check == check)
    }

    fn push(&mut self, check: &str, status: Status, detail: impl Into<String>) {
        self.lines.push(CheckLine {
            entry: self.entry.clone(),
            check: check.to_string(),
            status,
            detail: detail.into(),
        });
    }
}

/// A machine reused across calls; fuel and store are reset per call, the
/// contract report accumulates.
struct Runner<'p> {
    m: Machine<'p>,
}

impl<'p> Runner<'p> {
    fn new(p: &'p Program, sites: Option<&'p SiteTable>, cfg: &EvalConfig) -> Self {
        Runner {
            m: Machine::new(p, sites, cfg.clone()),
        }
    }

    fn call(&mut self, f: &str, args: Vec<Value>) -> (Result<Value, EvalError>, Store) {
        self.m.reset();
        let r = self.m.call(f, args);
        // In strict mode the first violation aborts the run instead of
        // being recorded.
        if let Err(EvalError::Violation(v)) = &r {
            let rep = &mut self.m.report;
            if v.kind == "variant" {
                rep.variant_violations.push(v.clone());
            } else {
                rep.violations.push(v.clone());
            }
        }
        (r, std::mem::take(&mut self.m.store))
    }

    fn call_logic(&mut self, f: &str, args: Vec<Value>) -> Result<Value, EvalError> {
        self.m.reset();
        self.m.call_logic(f, args)
    }

    fn violations(&self) -> usize {
        let r = &self.m.report;
        r.violations.len() + r.variant_violations.len() + r.absurd.len()
    }

    fn first_violation_since(&self, n: usize) -> Option<String> {
        let r = &self.m.report;
        r.violations
            .iter()
            .chain(&r.variant_violations)
            .map(|v| v.to_string())
            .chain(r.absurd.iter().map(|s| format!("`absurd` reached at {s}")))
            .nth(n)
    }
}

fn show(r: &Result<Value, EvalError>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => format!("error: {e}"),
    }
}

/// No lambda or arrow type remains, and every continuation type has one
/// constructor per lambda site with matching `apply` and `post` arms.
pub fn structure(p: &Program, groups: &[LambdaGroup]) -> Result<String, String> {
    if p.order() != crate::ast::Order::FirstOrder {
        return Err("an arrow type remains in the target".into());
    }
    let mut lambdas = 0;
    p.for_each_expr(&mut |e| {
        e.walk(&mut |x| {
            if matches!(x.kind, ExprKind::Lambda(_)) {
                lambdas += 1;
            }
        })
    });
    if lambdas > 0 {
        return Err(format!("{lambdas} lambda(s) remain in the target"));
    }
    let arms = |e: &crate::ast::Expr| match &e.kind {
        ExprKind::Match(_, arms) => arms.len(),
        _ => 1,
    };
    let mut parts = Vec::new();
    for g in groups {
        let n = &g.names;
        let ctors = p
            .type_defs()
            .find(|t| t.name == n.kont)
            .and_then(|t| match &t.body {
                TypeDefBody::Adt(cs) => Some(cs.len()),
                TypeDefBody::Alias(_) => None,
            })
            .ok_or_else(|| format!("no data type `{}`", n.kont))?;
        let apply = p
            .find_fun(&n.apply)
            .ok_or_else(|| format!("no function `{}`", n.apply))?;
        let post = p
            .find_logic(&n.post)
            .ok_or_else(|| format!("no predicate `{}`", n.post))?;
        let (a, q) = (arms(&apply.body), arms(&post.body));
        if ctors != g.sites.len() || a != ctors || q != ctors {
            return Err(format!(
                "{}: {} sites, {ctors} constructors, {a} `{}` arms, {q} `{}` arms",
                n.kont,
                g.sites.len(),
                n.apply,
                n.post
            ));
        }
        parts.push(format!("{}: {ctors} constructors", n.kont));
    }
    Ok(parts.join(", "))
}

fn contract_line(rep: &mut EntryReport, name: &str, r: &CheckReport, first: Option<&String>) {
    let detail = format!(
        "{} clauses checked, {} apply posts, {} sampled, {} undecided",
        r.checked, r.apply_posts, r.sampled, r.undecided
    );
    if !r.violations.is_empty() || !r.absurd.is_empty() {
        let n = r.violations.len() + r.absurd.len();
        rep.push(
            name,
            Status::Fail,
            format!("{n} violation(s); {}", first.cloned().unwrap_or_default()),
        );
    } else if r.sampled > 0 || r.undecided > 0 {
        rep.push(name, Status::Sampled, detail);
    } else {
        rep.push(name, Status::Pass, detail);
    }
}

/// Checks one corpus entry. With `target`, that program text replaces the
/// generated one (used for mutants).
pub fn check_entry(entry: &CorpusEntry, target: Option<&str>, cfg: &CheckConfig) -> EntryReport {
    let mut rep = EntryReport {
        entry: entry.name.clone(),
        ..EntryReport::default()
    };
    let source = match parse(&entry.source)
        .map_err(crate::Error::Diagnostics)
        .and_then(defunctionalize_program)
    {
        Ok(x) => x,
        Err(e) => {
            rep.internal = matches!(e, crate::Error::Internal(_));
            rep.push("transform", Status::Fail, e.to_string());
            return rep;
        }
    };
    let (tp, d) = source;
    rep.push(
        "transform",
        Status::Pass,
        format!("{} group(s)", d.groups.len()),
    );

    match parse(&entry.golden) {
        Ok(golden) if target.is_none() => {
            let diff = emit_diff(&golden, &d.program);
            if diff.is_empty() {
                rep.push("golden", Status::Pass, "matches golden.fof");
            } else {
                rep.push(
                    "golden",
                    Status::Fail,
                    diff.lines().take(6).collect::<Vec<_>>().join("\n"),
                );
            }
        }
        Ok(_) => rep.push("golden", Status::Skip, "target supplied"),
        Err(ds) => rep.push(
            "golden",
            Status::Fail,
            format!("golden.fof: {}", crate::Error::Diagnostics(ds)),
        ),
    }

    let target_prog = match target {
        None => d.program.clone(),
        Some(text) => match parse(text)
            .map_err(crate::Error::Diagnostics)
            .and_then(typecheck)
        {
            Ok(tp) => tp.into_program(),
            Err(e) => {
                rep.push("target", Status::Fail, e.to_string());
                return rep;
            }
        },
    };
    let target_prog = with_lemmas(target_prog, entry, &mut rep);

    match structure(&target_prog, &d.groups) {
        Ok(s) => rep.push("structure", Status::Pass, s),
        Err(e) => rep.push("structure", Status::Fail, e),
    }

    differential(entry, &tp, &d, &target_prog, cfg, &mut rep);
    lemma_statements(&target_prog, cfg, &mut rep);
    lemma_functions(&target_prog, entry, cfg, &mut rep);
    if entry.meta.properties.iter().any(|p| p == "contexts") {
        contexts(entry, &d, &target_prog, cfg, &mut rep);
    }
    rep
}

fn with_lemmas(p: Program, entry: &CorpusEntry, rep: &mut EntryReport) -> Program {
    let Some(text) = &entry.lemmas else { return p };
    // Parsed together with the target so that `post` names its predicate.
    let joined = format!("{}\n{text}", emit(&p, &EmitConfig::default()));
    match parse(&joined)
        .map_err(crate::Error::Diagnostics)
        .and_then(typecheck)
    {
        Ok(tp) => tp.into_program(),
        Err(e) => {
            rep.push("lemmas", Status::Fail, e.to_string());
            p
        }
    }
}

fn eval_config(cfg: &CheckConfig, seed: u64) -> EvalConfig {
    EvalConfig {
        fuel: cfg.fuel,
        samples: cfg.samples,
        seed,
        strict: cfg.strict,
        trace: cfg.trace,
        check_contracts: true,
    }
}

fn differential(
    entry: &CorpusEntry,
    tp: &crate::typecheck::TypedProgram,
    d: &Defunctionalized,
    target: &Program,
    cfg: &CheckConfig,
    rep: &mut EntryReport,
) {
    let runs = cfg.runs.unwrap_or(entry.meta.runs);
    let max_size = cfg.max_size.unwrap_or(entry.meta.max_size);
    let seed = cfg.seed.unwrap_or(entry.meta.seed);
    let ecfg = eval_config(cfg, seed);
    let table = SiteTable::new(d);
    let mut src = Runner::new(tp.program(), Some(&table), &ecfg);
    let mut tgt = Runner::new(target, None, &ecfg);
    let f = &entry.meta.entry;
    let mut mismatch: Option<String> = None;
    let mut src_first: Option<String> = None;
    let mut tgt_first: Option<String> = None;
    let mut variant_first: Option<String> = None;
    for run in 0..runs {
        let input = entry.input(seed, run, max_size);
        let (sv, ss) = (src.violations(), tgt.violations());
        let (s_res, s_store) = src.call(f, vec![input.clone()]);
        let (t_res, t_store) = tgt.call(f, vec![input.clone()]);
        let want = entry.meta.oracle.run(&input);
        let trace = std::mem::take(&mut tgt.m.trace);
        rep.runs += 1;
        let equal = matches!((&s_res, &t_res), (Ok(a), Ok(b)) if *a == want && *b == want)
            && s_store.cells() == t_store.cells();
        if !equal {
            rep.mismatches += 1;
            if mismatch.is_none() {
                let mut m = format!(
                    "input = {input}; source = {}; target = {}; oracle = {want}",
                    show(&s_res),
                    show(&t_res)
                );
                if s_store.cells() != t_store.cells() {
                    m.push_str(&format!(
                        "; source store = {:?}; target store = {:?}",
                        s_store
                            .cells()
                            .iter()
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>(),
                        t_store
                            .cells()
                            .iter()
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>()
                    ));
                }
                mismatch = Some(m);
                rep.trace = trace;
            }
        } else if run == 0 {
            rep.trace = trace;
        }
        // Attribute the first new violation of this run to its input.
        for (runner, before, slot) in [(&src, sv, &mut src_first), (&tgt, ss, &mut tgt_first)] {
            if slot.is_none() {
                if let Some(v) = runner.first_violation_since(before) {
                    *slot = Some(format!("input = {input}; {v}"));
                }
            }
        }
        if variant_first.is_none() {
            let vv = tgt.m.report.variant_violations.first().or(src
                .m
                .report
                .variant_violations
                .first());
            if let Some(v) = vv {
                variant_first = Some(format!("input = {input}; {v}"));
            }
        }
        if cfg.strict && (mismatch.is_some() || src_first.is_some() || tgt_first.is_some()) {
            break;
        }
    }
    match mismatch {
        None => rep.push(
            "differential",
            Status::Pass,
            format!("{} runs, source = target = oracle", rep.runs),
        ),
        Some(m) => rep.push(
            "differential",
            Status::Fail,
            format!("{} of {} runs differ; first: {m}", rep.mismatches, rep.runs),
        ),
    }
    rep.source = std::mem::take(&mut src.m.report);
    rep.target = std::mem::take(&mut tgt.m.report);
    let (s, t) = (rep.source.clone(), rep.target.clone());
    contract_line(rep, "contracts-source", &s, src_first.as_ref());
    contract_line(rep, "contracts-target", &t, tgt_first.as_ref());
    let checks = s.variant_checks + t.variant_checks;
    let bad = s.variant_violations.len() + t.variant_violations.len();
    if bad > 0 {
        rep.push(
            "variants",
            Status::Fail,
            format!(
                "{bad} of {checks} decreases failed; {}",
                variant_first.unwrap_or_default()
            ),
        );
    } else {
        rep.push(
            "variants",
            Status::Pass,
            format!("{checks} decreases checked"),
        );
    }
}

/// `lemma name: formula` declarations, checked on samples.
fn lemma_statements(p: &Program, cfg: &CheckConfig, rep: &mut EntryReport) {
    let ecfg = eval_config(cfg, cfg.seed.unwrap_or(0));
    for d in &p.decls {
        if let Decl::Lemma { name, body } = d {
            let check = format!("lemma {name}");
            match eval_formula(p, body, &[], None, &Store::default(), &ecfg) {
                Ok(true) => rep.push(
                    &check,
                    Status::Sampled,
                    format!("{} samples per quantifier", cfg.samples),
                ),
                Ok(false) => rep.push(&check, Status::Fail, "counterexample found"),
                Err(EvalError::Violation(v)) => rep.push(&check, Status::Fail, v.to_string()),
                Err(e) => rep.push(&check, Status::Inconclusive, e.to_string()),
            }
        }
    }
}

/// Lemma functions from the entry's lemma file, run on generated arguments.
fn lemma_functions(p: &Program, entry: &CorpusEntry, cfg: &CheckConfig, rep: &mut EntryReport) {
    let Some(text) = &entry.lemmas else { return };
    let Ok(lp) = parse(text) else { return };
    let samples = cfg.lemma_samples.unwrap_or(entry.meta.lemma_samples);
    let seed = cfg.seed.unwrap_or(entry.meta.seed);
    let ecfg = eval_config(cfg, seed);
    for f in lp.top_funs().filter(|f| f.lemma) {
        let check = format!("lemma-fn {}", f.name);
        match check_lemma_dynamic(p, &f.name, samples, seed, &ecfg) {
            Ok(lr) => {
                let detail = format!(
                    "{} of {} instances ({} attempts)",
                    lr.instances, lr.requested, lr.attempts
                );
                if let Some(v) = lr.report.violations.first() {
                    rep.push(&check, Status::Fail, format!("{detail}; {v}"));
                } else if let Some(e) = lr.errors.first() {
                    rep.push(&check, Status::Fail, format!("{detail}; {e}"));
                } else if lr.inconclusive() {
                    rep.push(&check, Status::Inconclusive, detail);
                } else {
                    rep.push(&check, Status::Pass, detail);
                }
                rep.lemmas.push(lr);
            }
            Err(e) => rep.push(&check, Status::Fail, e.to_string()),
        }
    }
}

/// Properties of the small-step interpreter: decomposition, preservation of
/// `eval` by each reduction step, and agreement of `red` with `eval`.
fn contexts(
    entry: &CorpusEntry,
    d: &Defunctionalized,
    p: &Program,
    cfg: &CheckConfig,
    rep: &mut EntryReport,
) {
    if entry.meta.generator != Generator::Exp {
        rep.push("contexts", Status::Skip, "needs expression inputs");
        return;
    }
    let apply = d
        .groups
        .first()
        .map(|g| g.names.apply.clone())
        .unwrap_or_else(|| "apply".into());
    let runs = cfg.runs.unwrap_or(entry.meta.runs);
    let max_size = cfg.max_size.unwrap_or(entry.meta.max_size);
    let seed = cfg.seed.unwrap_or(entry.meta.seed);
    let ecfg = eval_config(cfg, seed);
    let mut r = Runner::new(p, None, &ecfg);
    let is_const = |e: &Value| matches!(e, Value::Con(c, _) if &**c == "Const");
    let (mut dec_fail, mut step_fail, mut red_fail) = (None, None, None);
    let (mut decomposed, mut steps, mut reds) = (0, 0, 0);
    for run in 0..runs {
        let e = entry.input(seed, run, max_size);
        let want = eval_exp(&e);
        reds += 1;
        match r.call(&entry.meta.entry, vec![e.clone()]).0 {
            Ok(Value::Int(n)) if n == want => {}
            other => {
                red_fail.get_or_insert(format!(
                    "input = {e}; red = {}; eval = {want}",
                    show(&other)
                ));
            }
        }
        if is_const(&e) {
            continue;
        }
        decomposed += 1;
        let dec = |r: &mut Runner, e: &Value| -> Result<(Value, Value), String> {
            match r.call("decompose", vec![e.clone()]).0 {
                Ok(Value::Tuple(vs)) if vs.len() == 2 => Ok((vs[0].clone(), vs[1].clone())),
                other => Err(format!("decompose {e} = {}", show(&other))),
            }
        };
        match dec(&mut r, &e).and_then(|(c, e2)| {
            if r.call_logic("is_redex", vec![e2.clone()]) != Ok(Value::Bool(true)) {
                return Err(format!("decompose {e}: {e2} is not a redex"));
            }
            match r.call(&apply, vec![c.clone(), e2.clone()]).0 {
                Ok(back) if eval_exp(&back) == want => Ok(()),
                other => Err(format!(
                    "{apply} ({c}) ({e2}) = {}; eval {e} = {want}",
                    show(&other)
                )),
            }
        }) {
            Ok(()) => {}
            Err(m) => {
                dec_fail.get_or_insert(m);
            }
        }
        let mut cur = e.clone();
        for _ in 0..10_000 {
            if is_const(&cur) {
                break;
            }
            steps += 1;
            let next = dec(&mut r, &cur).and_then(|(c, redex)| {
                let reduced = r
                    .call("head_reduction", vec![redex])
                    .0
                    .map_err(|x| x.to_string())?;
                r.call(&apply, vec![c, reduced])
                    .0
                    .map_err(|x| x.to_string())
            });
            match next {
                Ok(n) if eval_exp(&n) == eval_exp(&cur) => cur = n,
                other => {
                    step_fail.get_or_insert(format!(
                        "step from {cur}: {}",
                        match other {
                            Ok(n) => format!("{n} (eval {} vs {})", eval_exp(&n), eval_exp(&cur)),
                            Err(m) => m,
                        }
                    ));
                    break;
                }
            }
        }
    }
    let line = |rep: &mut EntryReport, name: &str, fail: Option<String>, ok: String| match fail {
        None => rep.push(name, Status::Pass, ok),
        Some(m) => rep.push(name, Status::Fail, m),
    };
    line(
        rep,
        "decompose",
        dec_fail,
        format!("{decomposed} decompositions compose back"),
    );
    line(
        rep,
        "red-steps",
        step_fail,
        format!("{steps} steps preserve eval"),
    );
    line(
        rep,
        "red-eval",
        red_fail,
        format!("{reds} runs, red = eval"),
    );
}

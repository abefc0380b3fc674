//! Pretty-printing of programs back to surface syntax.
//!
//! The plain dialect re-parses to a structurally equal program. The whyml
//! dialect wraps the same declarations in a module with the library imports
//! an external verifier expects; it is not guaranteed to be accepted by any
//! particular verifier release.

use crate::ast::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    Plain,
    WhyMl,
}

#[derive(Clone, Debug)]
pub struct EmitConfig {
    pub dialect: Dialect,
    /// At least 40.
    pub width: usize,
    pub indent: usize,
    pub attributes: bool,
    pub module_name: String,
}

impl Default for EmitConfig {
    fn default() -> Self {
        EmitConfig {
            dialect: Dialect::Plain,
            width: 80,
            indent: 2,
            attributes: true,
            module_name: "Defunctionalized".to_string(),
        }
    }
}

impl EmitConfig {
    pub fn whyml() -> Self {
        EmitConfig {
            dialect: Dialect::WhyMl,
            ..EmitConfig::default()
        }
    }
}

pub fn emit(p: &Program, cfg: &EmitConfig) -> String {
    let cfg = EmitConfig {
        width: cfg.width.max(40),
        ..cfg.clone()
    };
    let pr = Printer { cfg: &cfg };
    let mut out = String::new();
    let base = match cfg.dialect {
        Dialect::Plain => 0,
        Dialect::WhyMl => {
            out.push_str(&format!("module {}\n\n", cfg.module_name));
            for u in ["int.Int", "int.MinMax", "set.Fset", "ref.Ref"] {
                out.push_str(&format!("  use {u}\n"));
            }
            cfg.indent
        }
    };
    for (i, d) in p.decls.iter().enumerate() {
        if i > 0 || cfg.dialect == Dialect::WhyMl {
            out.push('\n');
        }
        let text = pr.decl(d, base);
        out.push_str(&" ".repeat(base));
        out.push_str(&text);
        out.push('\n');
    }
    if cfg.dialect == Dialect::WhyMl {
        out.push_str("\nend\n");
    }
    out
}

pub fn emit_type(t: &Type) -> String {
    type_str(t, 0)
}

pub fn emit_expr(e: &Expr) -> String {
    let cfg = EmitConfig::default();
    Printer { cfg: &cfg }.expr(e, 0, 0)
}

pub fn emit_pattern(p: &Pattern) -> String {
    pattern_str(p, false)
}

struct Printer<'a> {
    cfg: &'a EmitConfig,
}

// Precedence levels, mirroring the parser.
const SEQ: u8 = 0;
const ASSIGN: u8 = 1;
const IMPLIES: u8 = 2;
const OR: u8 = 3;
const AND: u8 = 4;
const NOT: u8 = 5;
const CMP: u8 = 6;
const ADD: u8 = 7;
const MUL: u8 = 8;
const NEG: u8 = 9;
const APP: u8 = 10;
const ATOM: u8 = 11;

fn binop_levels(op: BinOp) -> (u8, u8, u8) {
    // (own, lhs, rhs)
    match op {
        BinOp::Implies => (IMPLIES, OR, IMPLIES),
        BinOp::Or => (OR, OR, AND),
        BinOp::And => (AND, AND, NOT),
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::ExtEq => {
            (CMP, ADD, ADD)
        }
        BinOp::Add | BinOp::Sub => (ADD, ADD, MUL),
        BinOp::Mul => (MUL, MUL, NEG),
    }
}

fn level(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Seq(..)
        | ExprKind::Let(..)
        | ExprKind::LetRec(..)
        | ExprKind::Lambda(_)
        | ExprKind::If(..)
        | ExprKind::Forall(..) => SEQ,
        ExprKind::RefSet(..) => ASSIGN,
        ExprKind::BinOp(op, ..) => binop_levels(*op).0,
        ExprKind::UnOp(UnOp::Not, _) => NOT,
        ExprKind::UnOp(UnOp::Neg, _) => NEG,
        ExprKind::App(..)
        | ExprKind::PostProj(..)
        | ExprKind::PreProj(..)
        | ExprKind::Old(_)
        | ExprKind::RefNew(_) => APP,
        ExprKind::Construct(_, args) if !args.is_empty() => APP,
        ExprKind::Const(Literal::Int(n)) if *n < 0 => ATOM,
        _ => ATOM,
    }
}

/// Forms that are always laid out over several lines.
fn must_break(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |x| {
        if matches!(
            x.kind,
            ExprKind::Match(..) | ExprKind::LetRec(..) | ExprKind::Seq(..)
        ) {
            found = true;
        }
    });
    found
}

impl Printer<'_> {
    fn decl(&self, d: &Decl, ind: usize) -> String {
        match d {
            Decl::Types(defs) => {
                let mut out = String::new();
                for (i, t) in defs.iter().enumerate() {
                    if i > 0 {
                        out.push('\n');
                        out.push_str(&" ".repeat(ind));
                        out.push_str("with ");
                    } else {
                        out.push_str("type ");
                    }
                    out.push_str(&self.type_def(t, ind));
                }
                out
            }
            Decl::Logic(l) => {
                let mut head = String::new();
                if l.measure && self.cfg.attributes {
                    head.push_str("[@measure] ");
                }
                head.push_str(if l.is_predicate() {
                    "predicate "
                } else {
                    "function "
                });
                head.push_str(&l.name);
                head.push_str(&params_str(&l.params));
                if let Some(r) = &l.ret {
                    head.push_str(" : ");
                    head.push_str(&type_str(r, 0));
                }
                head.push_str(" =");
                let body = self.expr(&l.body, SEQ, ind + self.cfg.indent);
                self.attach(head, body, ind)
            }
            Decl::Let { rec, funs } => {
                let mut out = String::new();
                for (i, f) in funs.iter().enumerate() {
                    if i == 0 {
                        out.push_str(if *rec { "let rec " } else { "let " });
                    } else {
                        out.push('\n');
                        out.push_str(&" ".repeat(ind));
                        out.push_str("with ");
                    }
                    out.push_str(&self.fun_decl(f, ind));
                }
                out
            }
            Decl::Lemma { name, body } => {
                let head = format!("lemma {name}:");
                let body = self.expr(body, SEQ, ind + self.cfg.indent);
                self.attach(head, body, ind)
            }
        }
    }

    /// `head body` on one line when it fits, else body on the next line.
    fn attach(&self, head: String, body: String, ind: usize) -> String {
        let fits = !body.contains('\n') && ind + head.len() + 1 + body.len() <= self.cfg.width;
        if fits || body.starts_with("match ") {
            format!("{head} {body}")
        } else {
            format!("{head}\n{}{body}", " ".repeat(ind + self.cfg.indent))
        }
    }

    fn type_def(&self, t: &TypeDef, ind: usize) -> String {
        let mut out = t.name.clone();
        for p in &t.params {
            out.push_str(&format!(" '{p}"));
        }
        out.push_str(" =");
        match &t.body {
            TypeDefBody::Alias(ty) => {
                out.push(' ');
                out.push_str(&type_str(ty, 0));
            }
            TypeDefBody::Adt(ctors) => {
                let items: Vec<String> = ctors
                    .iter()
                    .map(|c| {
                        let mut s = c.name.clone();
                        for f in &c.fields {
                            s.push(' ');
                            s.push_str(&type_str(f, 2));
                        }
                        s
                    })
                    .collect();
                let flat = format!(" {}", items.join(" | "));
                if ind + out.len() + flat.len() + 5 <= self.cfg.width {
                    out.push_str(&flat);
                } else {
                    for item in items {
                        out.push('\n');
                        out.push_str(&" ".repeat(ind + self.cfg.indent));
                        out.push_str("| ");
                        out.push_str(&item);
                    }
                }
            }
        }
        out
    }

    fn fun_decl(&self, f: &FunDecl, ind: usize) -> String {
        let mut out = String::new();
        if f.lemma {
            out.push_str("lemma ");
        }
        out.push_str(&f.name);
        out.push_str(&params_str(&f.params));
        out.push_str(" : ");
        out.push_str(&type_str(&f.ret, 0));
        let cind = ind + self.cfg.indent;
        out.push_str(&self.contract(&f.contract, cind));
        out.push('\n');
        out.push_str(&" ".repeat(ind));
        out.push_str("= ");
        out.push_str(&self.expr(&f.body, SEQ, ind + self.cfg.indent));
        out
    }

    fn contract(&self, c: &Contract, ind: usize) -> String {
        let mut out = String::new();
        let pad = " ".repeat(ind);
        for (kw, clauses) in [("requires", &c.requires), ("ensures", &c.ensures)] {
            for e in clauses {
                let body = self.expr(e, SEQ, ind + self.cfg.indent);
                out.push_str(&format!("\n{pad}{kw} {{ {body} }}"));
            }
        }
        if !c.variant.is_empty() {
            let items: Vec<String> = c.variant.iter().map(|e| self.expr(e, SEQ, ind)).collect();
            out.push_str(&format!("\n{pad}variant {{ {} }}", items.join(", ")));
        }
        out
    }

    /// Renders `e` in a context that requires precedence `prec`. Lines after
    /// the first are indented to column `ind`.
    fn expr(&self, e: &Expr, prec: u8, ind: usize) -> String {
        let needs_parens = level(e) < prec;
        if !must_break(e) {
            let flat = self.flat(e);
            let flat = if needs_parens {
                format!("({flat})")
            } else {
                flat
            };
            if ind + flat.len() <= self.cfg.width {
                return flat;
            }
        }
        if needs_parens {
            format!("({})", self.block(e, ind + 1))
        } else {
            self.block(e, ind)
        }
    }

    fn flat(&self, e: &Expr) -> String {
        // Width is irrelevant for flat output; reuse block rendering with
        // everything on one line.
        self.render(e, 0, true)
    }

    fn block(&self, e: &Expr, ind: usize) -> String {
        self.render(e, ind, false)
    }

    fn sub(&self, e: &Expr, prec: u8, ind: usize, flat: bool) -> String {
        if flat {
            let s = self.render(e, 0, true);
            if level(e) < prec {
                format!("({s})")
            } else {
                s
            }
        } else {
            self.expr(e, prec, ind)
        }
    }

    fn nl(&self, ind: usize, flat: bool) -> String {
        if flat {
            " ".to_string()
        } else {
            format!("\n{}", " ".repeat(ind))
        }
    }

    fn render(&self, e: &Expr, ind: usize, flat: bool) -> String {
        let step = self.cfg.indent;
        match &e.kind {
            ExprKind::Var(v) => v.clone(),
            ExprKind::Const(Literal::Int(n)) if *n < 0 => format!("({n})"),
            ExprKind::Const(Literal::Int(n)) => n.to_string(),
            ExprKind::Const(Literal::Bool(b)) => b.to_string(),
            ExprKind::Const(Literal::Unit) => "()".to_string(),
            ExprKind::Absurd => "absurd".to_string(),
            ExprKind::Result => "result".to_string(),
            ExprKind::Lambda(l) => {
                let mut head = String::new();
                if self.cfg.attributes {
                    if let Some(k) = &l.kont_name {
                        head.push_str(&format!("[@kont {k}] "));
                    }
                }
                head.push_str("fun ");
                match &l.param_ty {
                    Some(t) => head.push_str(&format!(
                        "({}: {})",
                        pattern_str(&l.param, false),
                        type_str(t, 0)
                    )),
                    None => head.push_str(&pattern_str(&l.param, true)),
                }
                head.push_str(" ->");
                let inner = ind + step;
                let mut out = head;
                for r in &l.contract.requires {
                    out.push_str(&self.nl(inner, flat));
                    out.push_str(&format!("requires {{ {} }}", self.sub(r, SEQ, inner, flat)));
                }
                for r in &l.contract.ensures {
                    out.push_str(&self.nl(inner, flat));
                    out.push_str(&format!("ensures {{ {} }}", self.sub(r, SEQ, inner, flat)));
                }
                out.push_str(&self.nl(inner, flat));
                out.push_str(&self.sub(&l.body, SEQ, inner, flat));
                out
            }
            ExprKind::App(head, args) => {
                let mut out = self.sub(head, ATOM, ind, flat);
                for a in args {
                    out.push(' ');
                    out.push_str(&self.sub(a, ATOM, ind + step, flat));
                }
                out
            }
            ExprKind::PostProj(g, args) | ExprKind::PreProj(g, args) => {
                let kw = if matches!(e.kind, ExprKind::PostProj(..)) {
                    "post"
                } else {
                    "pre"
                };
                let mut out = format!("{kw} {}", self.sub(g, ATOM, ind, flat));
                for a in args {
                    out.push(' ');
                    out.push_str(&self.sub(a, ATOM, ind + step, flat));
                }
                out
            }
            ExprKind::Construct(c, args) => {
                let mut out = c.clone();
                for a in args {
                    out.push(' ');
                    out.push_str(&self.sub(a, ATOM, ind + step, flat));
                }
                out
            }
            ExprKind::Tuple(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|a| self.sub(a, SEQ, ind + 1, flat))
                    .collect();
                format!("({})", parts.join(", "))
            }
            ExprKind::Let(p, a, b) => {
                let bound = self.sub(a, SEQ, ind + step, flat);
                format!(
                    "let {} = {bound} in{}{}",
                    pattern_str(p, false),
                    self.nl(ind, flat),
                    self.sub(b, SEQ, ind, flat)
                )
            }
            ExprKind::LetRec(decls, body) => {
                let mut out = String::new();
                for (i, d) in decls.iter().enumerate() {
                    if i == 0 {
                        out.push_str("let rec ");
                    } else {
                        out.push('\n');
                        out.push_str(&" ".repeat(ind));
                        out.push_str("with ");
                    }
                    out.push_str(&self.fun_decl(d, ind));
                }
                out.push('\n');
                out.push_str(&" ".repeat(ind));
                out.push_str("in\n");
                out.push_str(&" ".repeat(ind));
                out.push_str(&self.sub(body, SEQ, ind, false));
                out
            }
            ExprKind::Match(s, arms) => {
                let mut out = format!("match {} with", self.sub(s, SEQ, ind + step, flat));
                for arm in arms {
                    out.push_str(&self.nl(ind, flat));
                    let pat = pattern_str(&arm.pattern, false);
                    let body_ind = ind + 2 * step;
                    out.push_str(&format!(
                        "| {pat} -> {}",
                        self.sub(&arm.body, SEQ, body_ind, flat)
                    ));
                }
                out.push_str(&self.nl(ind, flat));
                out.push_str("end");
                out
            }
            ExprKind::RefNew(x) => format!("ref {}", self.sub(x, ATOM, ind, flat)),
            ExprKind::RefGet(x) => format!("!{}", self.sub(x, ATOM, ind, flat)),
            ExprKind::Old(x) => format!("old {}", self.sub(x, ATOM, ind, flat)),
            ExprKind::RefSet(a, b) => format!(
                "{} := {}",
                self.sub(a, IMPLIES, ind, flat),
                self.sub(b, IMPLIES, ind + step, flat)
            ),
            ExprKind::Seq(a, b) => format!(
                "{};{}{}",
                self.sub(a, ASSIGN, ind, flat),
                self.nl(ind, flat),
                self.sub(b, SEQ, ind, flat)
            ),
            ExprKind::If(c, t, f) => format!(
                "if {} then{}{}{}else{}{}",
                self.sub(c, SEQ, ind + step, flat),
                self.nl(ind + step, flat),
                self.sub(t, SEQ, ind + step, flat),
                self.nl(ind, flat),
                self.nl(ind + step, flat),
                self.sub(f, SEQ, ind + step, flat)
            ),
            ExprKind::BinOp(op, a, b) => {
                let (_, l, r) = binop_levels(*op);
                format!(
                    "{} {} {}",
                    self.sub(a, l, ind, flat),
                    op.symbol(),
                    self.sub(b, r, ind + step, flat)
                )
            }
            ExprKind::UnOp(UnOp::Not, x) => format!("not {}", self.sub(x, ATOM, ind, flat)),
            ExprKind::UnOp(UnOp::Neg, x) => {
                if matches!(x.kind, ExprKind::Const(Literal::Int(n)) if n >= 0) {
                    format!("-({})", self.render(x, ind, true))
                } else {
                    format!("-{}", self.sub(x, ATOM, ind, flat))
                }
            }
            ExprKind::Forall(vs, body) => {
                let binders: Vec<String> = vs
                    .iter()
                    .map(|(v, t)| match t {
                        Some(t) => format!("{v}: {}", type_str(t, 0)),
                        None => v.clone(),
                    })
                    .collect();
                format!(
                    "forall {}.{}{}",
                    binders.join(", "),
                    self.nl(ind + step, flat),
                    self.sub(body, SEQ, ind + step, flat)
                )
            }
        }
    }
}

fn params_str(ps: &[Param]) -> String {
    ps.iter()
        .map(|p| format!(" ({}: {})", p.name, type_str(&p.ty, 0)))
        .collect()
}

/// `prec`: 0 anywhere, 1 left of an arrow, 2 argument position.
fn type_str(t: &Type, prec: u8) -> String {
    let s = match t {
        Type::Var(v) => return format!("'{v}"),
        Type::Int => return "int".into(),
        Type::Bool => return "bool".into(),
        Type::Unit => return "unit".into(),
        Type::Tuple(items) => {
            let parts: Vec<String> = items.iter().map(|i| type_str(i, 0)).collect();
            return format!("({})", parts.join(", "));
        }
        Type::Adt(n, args) if args.is_empty() => return n.clone(),
        Type::Adt(n, args) => {
            let parts: Vec<String> = args.iter().map(|a| type_str(a, 2)).collect();
            format!("{n} {}", parts.join(" "))
        }
        Type::Set(x) => format!("set {}", type_str(x, 2)),
        Type::Ref(x) => format!("ref {}", type_str(x, 2)),
        Type::Arrow(a, b) => {
            let s = format!("{} -> {}", type_str(a, 1), type_str(b, 0));
            return if prec >= 1 { format!("({s})") } else { s };
        }
    };
    if prec >= 2 {
        format!("({s})")
    } else {
        s
    }
}

/// `atomic`: parenthesize constructor patterns with arguments.
fn pattern_str(p: &Pattern, atomic: bool) -> String {
    match &p.kind {
        PatternKind::Wild => "_".into(),
        PatternKind::Var(v) => v.clone(),
        PatternKind::Unit => "()".into(),
        PatternKind::Tuple(items) => {
            let parts: Vec<String> = items.iter().map(|i| pattern_str(i, false)).collect();
            format!("({})", parts.join(", "))
        }
        PatternKind::Construct(c, args) if args.is_empty() => c.clone(),
        PatternKind::Construct(c, args) => {
            let parts: Vec<String> = args.iter().map(|a| pattern_str(a, true)).collect();
            let s = format!("{c} {}", parts.join(" "));
            if atomic {
                format!("({s})")
            } else {
                s
            }
        }
    }
}

/// Line diff between the plain renderings of two programs. Empty iff the
/// programs are structurally equal (spans ignored).
pub fn emit_diff(a: &Program, b: &Program) -> String {
    if a == b {
        return String::new();
    }
    let cfg = EmitConfig::default();
    let ta = emit(a, &cfg);
    let tb = emit(b, &cfg);
    if ta == tb {
        return "@@ programs differ only in lambda site numbering @@\n".to_string();
    }
    let la: Vec<&str> = ta.lines().collect();
    let lb: Vec<&str> = tb.lines().collect();
    line_diff(&la, &lb)
}

fn line_diff(a: &[&str], b: &[&str]) -> String {
    let (n, m) = (a.len(), b.len());
    // lcs[i][j] = LCS length of a[i..], b[j..]
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    enum Op<'a> {
        Keep,
        Del(&'a str),
        Add(&'a str),
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            ops.push((i, j, Op::Keep));
            i += 1;
            j += 1;
        } else if j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j]) {
            ops.push((i, j, Op::Add(b[j])));
            j += 1;
        } else {
            ops.push((i, j, Op::Del(a[i])));
            i += 1;
        }
    }
    let mut out = String::new();
    let mut k = 0;
    while k < ops.len() {
        if matches!(ops[k].2, Op::Keep) {
            k += 1;
            continue;
        }
        let (ai, bj, _) = ops[k];
        out.push_str(&format!("@@ -{} +{} @@\n", ai + 1, bj + 1));
        while k < ops.len() && !matches!(ops[k].2, Op::Keep) {
            match ops[k].2 {
                Op::Del(l) => out.push_str(&format!("-{l}\n")),
                Op::Add(l) => out.push_str(&format!("+{l}\n")),
                Op::Keep => unreachable!(),
            }
            k += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, parse_formula};

    #[test]
    fn empty_whyml_program_is_header_and_footer() {
        let out = emit(&Program::default(), &EmitConfig::whyml());
        assert!(out.starts_with("module Defunctionalized"));
        assert!(out.trim_end().ends_with("end"));
        assert!(!out.contains("let"));
    }

    #[test]
    fn diff_of_equal_programs_is_empty() {
        let p = parse("type t = A | B\nlet f (x: t) : t = A").unwrap();
        assert_eq!(emit_diff(&p, &p), "");
    }

    #[test]
    fn one_constructor_rename_is_one_hunk() {
        let a = parse("type t = A | B\nlet f (x: int) : int = x").unwrap();
        let b = parse("type t = A | C\nlet f (x: int) : int = x").unwrap();
        let d = emit_diff(&a, &b);
        assert_eq!(d.matches("@@ -").count(), 1, "{d}");
        assert!(d.contains("-type t = A | B"));
        assert!(d.contains("+type t = A | C"));
    }

    #[test]
    fn formulas_round_trip() {
        for src in [
            "post k (1 + max hl (height r)) result",
            "not (is_value e)",
            "let (c', e') = result in is_redex e' && (forall res: exp. post c e res -> post c' e' res)",
            "a -> b -> c",
            "(a -> b) -> c",
            "x - (y - z) = -(3) + (-4)",
            "old !h == !h",
        ] {
            let f = parse_formula(src).unwrap();
            let text = emit_expr(&f);
            assert_eq!(parse_formula(&text).unwrap(), f, "{src} => {text}");
        }
    }
}

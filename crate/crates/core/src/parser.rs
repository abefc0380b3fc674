//! Recursive-descent parser for the surface language.
//!
//! One grammar serves both dialects; whether a program is first-order is
//! computed afterwards ([`Program::order`]). Operator levels, loosest first:
//!
//! | level | forms |
//! |-------|-------|
//! | 0 | `e1; e2`, `let`, `let rec`, `fun`, `if`, `forall` |
//! | 1 | `r := e` |
//! | 2 | `->` (right) |
//! | 3 | `\|\|` |
//! | 4 | `&&` |
//! | 5 | `not` |
//! | 6 | `= <> < <= > >= ==` (non-associative) |
//! | 7 | `+ -` |
//! | 8 | `*` |
//! | 9 | unary `-` |
//! | 10 | application, constructors, `old e`, `ref e` |
//! | 11 | atoms, `!e`, `match .. end`, parentheses |

use std::collections::HashSet;

use crate::ast::*;
use crate::diag::Diagnostic;
use crate::lexer::{tokenize, Tok, Token};

type PResult<T> = Result<T, Diagnostic>;

/// Parses a whole program. Warnings are dropped; see
/// [`parse_with_warnings`].
pub fn parse(text: &str) -> Result<Program, Vec<Diagnostic>> {
    parse_with_warnings(text).map(|(p, _)| p)
}

pub fn parse_with_warnings(text: &str) -> Result<(Program, Vec<Diagnostic>), Vec<Diagnostic>> {
    let toks = tokenize(text).map_err(|d| vec![d])?;
    let mut p = Parser::new(toks);
    let mut decls = Vec::new();
    let mut errors = Vec::new();
    while !p.at_eof() {
        match p.decl() {
            Ok(d) => decls.push(d),
            Err(e) => {
                errors.push(e);
                p.recover();
            }
        }
    }
    let program = Program { decls };
    errors.extend(check_duplicates(&program));
    if !errors.is_empty() {
        return Err(errors);
    }
    let program = fresh_site_ids(resolve_projections(program));
    Ok((program, p.warnings))
}

/// Parses a standalone formula. `result` and `old` are accepted as in an
/// ensures clause; `post`/`pre` applications become projections.
pub fn parse_formula(text: &str) -> Result<Expr, Vec<Diagnostic>> {
    let toks = tokenize(text).map_err(|d| vec![d])?;
    let mut p = Parser::new(toks);
    p.in_ensures = true;
    let e = p.expr().map_err(|d| vec![d])?;
    if !p.at_eof() {
        return Err(vec![p.unexpected("end of formula")]);
    }
    Ok(resolve_expr(e, &HashSet::new()))
}

pub fn parse_type(text: &str) -> Result<Type, Vec<Diagnostic>> {
    let toks = tokenize(text).map_err(|d| vec![d])?;
    let mut p = Parser::new(toks);
    let t = p.ty().map_err(|d| vec![d])?;
    if !p.at_eof() {
        return Err(vec![p.unexpected("end of type")]);
    }
    Ok(t)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    in_ensures: bool,
    /// `old` / `result` are ordinary parameters of the enclosing logic
    /// declaration.
    old_is_var: bool,
    result_is_var: bool,
    next_site: usize,
    warnings: Vec<Diagnostic>,
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Parser {
            toks,
            pos: 0,
            in_ensures: false,
            old_is_var: false,
            result_is_var: false,
            next_site: 0,
            warnings: Vec::new(),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Kw(x) if *x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) | Tok::Upper(s) => format!("`{s}`"),
            Tok::TyVar(s) => format!("`'{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Kw(k) => format!("`{k}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Attr(a, _) => format!("attribute `[@{a}]`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        Diagnostic::error(
            format!(
                "syntax error: expected {wanted}, found {}",
                Self::describe(self.peek())
            ),
            self.span(),
        )
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{k}`")))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn upper(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Upper(s) => {
                self.advance();
                Ok(s)
            }
            _ => Err(self.unexpected("constructor name")),
        }
    }

    /// Skips to the next token that can start a declaration.
    fn recover(&mut self) {
        self.advance();
        while !self.at_eof() {
            if matches!(
                self.peek(),
                Tok::Kw("type") | Tok::Kw("function") | Tok::Kw("predicate") | Tok::Kw("lemma")
            ) || matches!(self.peek(), Tok::Attr(..))
            {
                return;
            }
            if self.is_kw("let") && self.toks[self.pos].span.start_col == 1 {
                return;
            }
            self.advance();
        }
    }

    // ---------------------------------------------------------------
    // Declarations

    fn decl(&mut self) -> PResult<Decl> {
        let mut measure = false;
        while let Tok::Attr(name, _) = self.peek().clone() {
            let sp = self.span();
            self.advance();
            match name.as_str() {
                "measure" => measure = true,
                other => {
                    return Err(Diagnostic::error(
                        format!("unknown declaration attribute `[@{other}]`"),
                        sp,
                    ))
                }
            }
        }
        let start = self.span();
        match self.peek() {
            Tok::Kw("type") if !measure => {
                self.advance();
                let mut defs = vec![self.type_def()?];
                while self.eat_kw("with") {
                    defs.push(self.type_def()?);
                }
                Ok(Decl::Types(defs))
            }
            Tok::Kw("function") | Tok::Kw("predicate") => {
                let is_pred = self.is_kw("predicate");
                self.advance();
                let name = self.ident()?;
                let params = self.params()?;
                let ret = if is_pred {
                    None
                } else {
                    self.expect_sym(":")?;
                    Some(self.ty()?)
                };
                self.expect_sym("=")?;
                self.old_is_var = params.iter().any(|p| p.name == "old");
                self.result_is_var = params.iter().any(|p| p.name == "result");
                let body = self.expr();
                self.old_is_var = false;
                self.result_is_var = false;
                let body = body?;
                Ok(Decl::Logic(LogicDecl {
                    name,
                    params,
                    ret,
                    body,
                    measure,
                    span: start.join(self.prev_span()),
                }))
            }
            Tok::Kw("let") if !measure => {
                self.advance();
                let rec = self.eat_kw("rec");
                let mut funs = vec![self.fun_decl()?];
                while self.eat_kw("with") {
                    funs.push(self.fun_decl()?);
                }
                if !rec && funs.len() > 1 {
                    return Err(Diagnostic::error("`with` requires `let rec`", start));
                }
                Ok(Decl::Let { rec, funs })
            }
            Tok::Kw("lemma") if !measure => {
                self.advance();
                let name = self.ident()?;
                self.expect_sym(":")?;
                let body = self.expr()?;
                Ok(Decl::Lemma { name, body })
            }
            _ if measure => Err(self.unexpected("`function` after `[@measure]`")),
            _ => Err(self.unexpected("declaration")),
        }
    }

    fn type_def(&mut self) -> PResult<TypeDef> {
        let name = self.ident()?;
        let mut params = Vec::new();
        while let Tok::TyVar(v) = self.peek().clone() {
            self.advance();
            params.push(v);
        }
        self.expect_sym("=")?;
        let is_adt = self.is_sym("|") || matches!(self.peek(), Tok::Upper(_));
        let body = if is_adt {
            self.eat_sym("|");
            let mut ctors = vec![self.constructor()?];
            while self.eat_sym("|") {
                ctors.push(self.constructor()?);
            }
            TypeDefBody::Adt(ctors)
        } else {
            TypeDefBody::Alias(self.ty()?)
        };
        Ok(TypeDef { name, params, body })
    }

    fn constructor(&mut self) -> PResult<Constructor> {
        let name = self.upper()?;
        let mut fields = Vec::new();
        while self.starts_atom_type() {
            fields.push(self.atom_type()?);
        }
        Ok(Constructor { name, fields })
    }

    /// `(x y: τ) (z: σ) ...`
    fn params(&mut self) -> PResult<Vec<Param>> {
        let mut out = Vec::new();
        while self.is_sym("(") && matches!(self.peek_at(1), Tok::Ident(_)) {
            self.advance();
            let mut names = vec![self.ident()?];
            while let Tok::Ident(n) = self.peek().clone() {
                self.advance();
                names.push(n);
            }
            self.expect_sym(":")?;
            let ty = self.ty()?;
            self.expect_sym(")")?;
            out.extend(names.into_iter().map(|n| Param {
                name: n,
                ty: ty.clone(),
            }));
        }
        Ok(out)
    }

    fn fun_decl(&mut self) -> PResult<FunDecl> {
        let start = self.span();
        let lemma = self.eat_kw("lemma");
        let name = self.ident()?;
        let params = self.params()?;
        self.expect_sym(":")?;
        let ret = self.ty()?;
        let contract = self.contract(false)?;
        self.expect_sym("=")?;
        let body = self.expr()?;
        Ok(FunDecl {
            name,
            params,
            ret,
            contract,
            body,
            lemma,
            span: start.join(self.prev_span()),
        })
    }

    fn contract(&mut self, lambda: bool) -> PResult<Contract> {
        let mut c = Contract::default();
        loop {
            if self.is_kw("requires") {
                let sp = self.span();
                self.advance();
                if lambda {
                    self.warnings.push(Diagnostic::warning(
                        "requires on an anonymous function becomes part of its group's pre predicate",
                        sp,
                    ));
                }
                c.requires.push(self.clause(false)?);
            } else if self.eat_kw("ensures") {
                c.ensures.push(self.clause(true)?);
            } else if self.eat_kw("variant") {
                self.expect_sym("{")?;
                c.variant.push(self.expr()?);
                while self.eat_sym(",") {
                    c.variant.push(self.expr()?);
                }
                self.expect_sym("}")?;
            } else {
                return Ok(c);
            }
        }
    }

    fn clause(&mut self, ensures: bool) -> PResult<Expr> {
        self.expect_sym("{")?;
        let saved = self.in_ensures;
        self.in_ensures = ensures;
        let e = self.expr();
        self.in_ensures = saved;
        let e = e?;
        self.expect_sym("}")?;
        Ok(e)
    }

    // ---------------------------------------------------------------
    // Types

    fn ty(&mut self) -> PResult<Type> {
        let dom = self.app_type()?;
        if self.eat_sym("->") {
            let cod = self.ty()?;
            Ok(Type::arrow(dom, cod))
        } else {
            Ok(dom)
        }
    }

    fn app_type(&mut self) -> PResult<Type> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                let mut args = Vec::new();
                while self.starts_atom_type() {
                    args.push(self.atom_type()?);
                }
                Ok(Type::Adt(name, args))
            }
            Tok::Kw("set") => {
                self.advance();
                Ok(Type::Set(Box::new(self.atom_type()?)))
            }
            Tok::Kw("ref") => {
                self.advance();
                Ok(Type::Ref(Box::new(self.atom_type()?)))
            }
            _ => self.atom_type(),
        }
    }

    fn starts_atom_type(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Kw("int") | Tok::Kw("bool") | Tok::Kw("unit") | Tok::TyVar(_) | Tok::Ident(_)
        ) || self.is_sym("(")
    }

    fn atom_type(&mut self) -> PResult<Type> {
        match self.peek().clone() {
            Tok::Kw("int") => {
                self.advance();
                Ok(Type::Int)
            }
            Tok::Kw("bool") => {
                self.advance();
                Ok(Type::Bool)
            }
            Tok::Kw("unit") => {
                self.advance();
                Ok(Type::Unit)
            }
            Tok::TyVar(v) => {
                self.advance();
                Ok(Type::Var(v))
            }
            Tok::Ident(n) => {
                self.advance();
                Ok(Type::Adt(n, Vec::new()))
            }
            Tok::Sym("(") => {
                self.advance();
                if self.eat_sym(")") {
                    return Ok(Type::Unit);
                }
                let first = self.ty()?;
                if self.eat_sym(",") {
                    let mut items = vec![first, self.ty()?];
                    while self.eat_sym(",") {
                        items.push(self.ty()?);
                    }
                    self.expect_sym(")")?;
                    Ok(Type::Tuple(items))
                } else {
                    self.expect_sym(")")?;
                    Ok(first)
                }
            }
            _ => Err(self.unexpected("type")),
        }
    }

    // ---------------------------------------------------------------
    // Patterns

    fn pattern(&mut self) -> PResult<Pattern> {
        let start = self.span();
        if let Tok::Upper(name) = self.peek().clone() {
            self.advance();
            let mut args = Vec::new();
            while self.starts_atom_pattern() {
                args.push(self.atom_pattern()?);
            }
            return Ok(Pattern {
                kind: PatternKind::Construct(name, args),
                span: start.join(self.prev_span()),
            });
        }
        self.atom_pattern()
    }

    fn starts_atom_pattern(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_) | Tok::Upper(_) | Tok::Sym("_") | Tok::Sym("(")
        )
    }

    fn atom_pattern(&mut self) -> PResult<Pattern> {
        let start = self.span();
        let kind = match self.peek().clone() {
            Tok::Sym("_") => {
                self.advance();
                PatternKind::Wild
            }
            Tok::Ident(v) => {
                self.advance();
                PatternKind::Var(v)
            }
            Tok::Upper(c) => {
                self.advance();
                PatternKind::Construct(c, Vec::new())
            }
            Tok::Sym("(") => {
                self.advance();
                if self.eat_sym(")") {
                    PatternKind::Unit
                } else {
                    let first = self.pattern()?;
                    if self.eat_sym(",") {
                        let mut items = vec![first, self.pattern()?];
                        while self.eat_sym(",") {
                            items.push(self.pattern()?);
                        }
                        self.expect_sym(")")?;
                        PatternKind::Tuple(items)
                    } else {
                        self.expect_sym(")")?;
                        return Ok(first);
                    }
                }
            }
            _ => return Err(self.unexpected("pattern")),
        };
        Ok(Pattern {
            kind,
            span: start.join(self.prev_span()),
        })
    }

    // ---------------------------------------------------------------
    // Expressions

    fn expr(&mut self) -> PResult<Expr> {
        let first = self.stmt()?;
        if self.eat_sym(";") {
            let rest = self.expr()?;
            let span = first.span.join(rest.span);
            return Ok(Expr::with_span(
                ExprKind::Seq(Box::new(first), Box::new(rest)),
                span,
            ));
        }
        Ok(first)
    }

    fn stmt(&mut self) -> PResult<Expr> {
        let start = self.span();
        match self.peek().clone() {
            Tok::Kw("let") => {
                self.advance();
                if self.eat_kw("rec") {
                    let mut funs = vec![self.fun_decl()?];
                    while self.eat_kw("with") {
                        funs.push(self.fun_decl()?);
                    }
                    self.expect_kw("in")?;
                    let body = self.expr()?;
                    let span = start.join(body.span);
                    return Ok(Expr::with_span(
                        ExprKind::LetRec(funs, Box::new(body)),
                        span,
                    ));
                }
                let pat = self.pattern()?;
                self.expect_sym("=")?;
                let bound = self.expr()?;
                self.expect_kw("in")?;
                let body = self.expr()?;
                let span = start.join(body.span);
                Ok(Expr::with_span(
                    ExprKind::Let(pat, Box::new(bound), Box::new(body)),
                    span,
                ))
            }
            Tok::Kw("fun") | Tok::Attr(..) => self.lambda(),
            Tok::Kw("if") => {
                self.advance();
                let c = self.expr()?;
                self.expect_kw("then")?;
                let t = self.expr()?;
                self.expect_kw("else")?;
                let e = self.expr()?;
                let span = start.join(e.span);
                Ok(Expr::with_span(
                    ExprKind::If(Box::new(c), Box::new(t), Box::new(e)),
                    span,
                ))
            }
            Tok::Kw("forall") => {
                self.advance();
                let mut binders = Vec::new();
                loop {
                    let name = self.ident()?;
                    let ty = if self.eat_sym(":") {
                        Some(self.ty()?)
                    } else {
                        None
                    };
                    binders.push((name, ty));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(".")?;
                let body = self.expr()?;
                let span = start.join(body.span);
                Ok(Expr::with_span(
                    ExprKind::Forall(binders, Box::new(body)),
                    span,
                ))
            }
            _ => self.assign(),
        }
    }

    fn lambda(&mut self) -> PResult<Expr> {
        let start = self.span();
        let mut kont_name = None;
        while let Tok::Attr(name, args) = self.peek().clone() {
            let sp = self.span();
            self.advance();
            match (name.as_str(), args.as_slice()) {
                ("kont", [ctor]) if ctor.starts_with(|c: char| c.is_ascii_uppercase()) => {
                    kont_name = Some(ctor.clone())
                }
                _ => {
                    return Err(Diagnostic::error(
                        format!("malformed attribute `[@{name}]`; expected `[@kont Name]`"),
                        sp,
                    ))
                }
            }
        }
        self.expect_kw("fun")?;
        let (param, param_ty) = if self.is_sym("(")
            && matches!(self.peek_at(1), Tok::Ident(_))
            && matches!(self.peek_at(2), Tok::Sym(":"))
        {
            self.advance();
            let pstart = self.prev_span();
            let name = self.ident()?;
            self.expect_sym(":")?;
            let ty = self.ty()?;
            self.expect_sym(")")?;
            let mut p = Pattern::var(&name);
            p.span = pstart.join(self.prev_span());
            (p, Some(ty))
        } else {
            (self.atom_pattern()?, None)
        };
        self.expect_sym("->")?;
        let contract = self.contract(true)?;
        if !contract.variant.is_empty() {
            return Err(Diagnostic::error(
                "variant clauses are not allowed on anonymous functions",
                start,
            ));
        }
        let site = SiteId(self.next_site);
        self.next_site += 1;
        let body = self.expr()?;
        let span = start.join(body.span);
        Ok(Expr::with_span(
            ExprKind::Lambda(Lambda {
                param,
                param_ty,
                contract,
                body: Box::new(body),
                site,
                kont_name,
            }),
            span,
        ))
    }

    fn assign(&mut self) -> PResult<Expr> {
        let lhs = self.implies()?;
        if self.eat_sym(":=") {
            let rhs = self.implies()?;
            let span = lhs.span.join(rhs.span);
            return Ok(Expr::with_span(
                ExprKind::RefSet(Box::new(lhs), Box::new(rhs)),
                span,
            ));
        }
        Ok(lhs)
    }

    fn implies(&mut self) -> PResult<Expr> {
        let lhs = self.or()?;
        if self.eat_sym("->") {
            let rhs = self.implies_rhs()?;
            return Ok(bin(BinOp::Implies, lhs, rhs));
        }
        Ok(lhs)
    }

    /// The right operand of `->` may be a binder form (`forall`, `let`).
    fn implies_rhs(&mut self) -> PResult<Expr> {
        if matches!(
            self.peek(),
            Tok::Kw("forall") | Tok::Kw("let") | Tok::Kw("if")
        ) {
            self.stmt()
        } else {
            self.implies()
        }
    }

    fn or(&mut self) -> PResult<Expr> {
        let mut lhs = self.and()?;
        while self.eat_sym("||") {
            let rhs = self.and()?;
            lhs = bin(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> PResult<Expr> {
        let mut lhs = self.not()?;
        while self.eat_sym("&&") {
            let rhs = self.not()?;
            lhs = bin(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> PResult<Expr> {
        let start = self.span();
        if self.eat_kw("not") {
            let e = self.not()?;
            let span = start.join(e.span);
            return Ok(Expr::with_span(
                ExprKind::UnOp(UnOp::Not, Box::new(e)),
                span,
            ));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> PResult<Expr> {
        let lhs = self.arith()?;
        let op = match self.peek() {
            Tok::Sym("=") => BinOp::Eq,
            Tok::Sym("<>") => BinOp::Ne,
            Tok::Sym("<") => BinOp::Lt,
            Tok::Sym("<=") => BinOp::Le,
            Tok::Sym(">") => BinOp::Gt,
            Tok::Sym(">=") => BinOp::Ge,
            Tok::Sym("==") => BinOp::ExtEq,
            _ => return Ok(lhs),
        };
        self.advance();
        let rhs = self.arith()?;
        Ok(bin(op, lhs, rhs))
    }

    fn arith(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => BinOp::Add,
                Tok::Sym("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.term()?;
            lhs = bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while self.eat_sym("*") {
            let rhs = self.unary()?;
            lhs = bin(BinOp::Mul, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let start = self.span();
        if self.eat_sym("-") {
            if let Tok::Int(n) = *self.peek() {
                self.advance();
                return Ok(Expr::with_span(
                    ExprKind::Const(Literal::Int(-n)),
                    start.join(self.prev_span()),
                ));
            }
            let e = self.unary()?;
            let span = start.join(e.span);
            return Ok(Expr::with_span(
                ExprKind::UnOp(UnOp::Neg, Box::new(e)),
                span,
            ));
        }
        self.app()
    }

    fn app(&mut self) -> PResult<Expr> {
        let start = self.span();
        match self.peek().clone() {
            Tok::Upper(name) => {
                self.advance();
                let mut args = Vec::new();
                while self.starts_atom() {
                    args.push(self.atom()?);
                }
                Ok(Expr::with_span(
                    ExprKind::Construct(name, args),
                    start.join(self.prev_span()),
                ))
            }
            Tok::Kw("ref") => {
                self.advance();
                let e = self.atom()?;
                let span = start.join(e.span);
                Ok(Expr::with_span(ExprKind::RefNew(Box::new(e)), span))
            }
            Tok::Ident(ref n) if n == "old" && !self.old_is_var => {
                if !self.in_ensures {
                    return Err(Diagnostic::error(
                        "`old` may only appear inside an ensures clause",
                        start,
                    ));
                }
                self.advance();
                let e = self.atom()?;
                let span = start.join(e.span);
                Ok(Expr::with_span(ExprKind::Old(Box::new(e)), span))
            }
            _ => {
                let head = self.atom()?;
                if !matches!(head.kind, ExprKind::Var(_)) {
                    return Ok(head);
                }
                let mut args = Vec::new();
                while self.starts_atom() {
                    args.push(self.atom()?);
                }
                if args.is_empty() {
                    return Ok(head);
                }
                let span = start.join(self.prev_span());
                Ok(Expr::with_span(ExprKind::App(Box::new(head), args), span))
            }
        }
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Tok::Ident(n) => n != "old" || self.old_is_var,
            Tok::Upper(_) | Tok::Int(_) => true,
            Tok::Kw(k) => matches!(*k, "true" | "false" | "absurd" | "match"),
            Tok::Sym(s) => matches!(*s, "(" | "!"),
            _ => false,
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        let start = self.span();
        let kind = match self.peek().clone() {
            Tok::Ident(n) => {
                self.advance();
                if n == "result" && !self.result_is_var {
                    if !self.in_ensures {
                        return Err(Diagnostic::error(
                            "`result` may only appear inside an ensures clause",
                            start,
                        ));
                    }
                    ExprKind::Result
                } else {
                    ExprKind::Var(n)
                }
            }
            Tok::Upper(c) => {
                self.advance();
                ExprKind::Construct(c, Vec::new())
            }
            Tok::Int(n) => {
                self.advance();
                ExprKind::Const(Literal::Int(n))
            }
            Tok::Kw("true") => {
                self.advance();
                ExprKind::Const(Literal::Bool(true))
            }
            Tok::Kw("false") => {
                self.advance();
                ExprKind::Const(Literal::Bool(false))
            }
            Tok::Kw("absurd") => {
                self.advance();
                ExprKind::Absurd
            }
            Tok::Sym("!") => {
                self.advance();
                let e = self.atom()?;
                ExprKind::RefGet(Box::new(e))
            }
            Tok::Kw("match") => {
                self.advance();
                let scrut = self.expr()?;
                self.expect_kw("with")?;
                self.eat_sym("|");
                let mut arms = vec![self.arm()?];
                while self.eat_sym("|") {
                    arms.push(self.arm()?);
                }
                self.expect_kw("end")?;
                ExprKind::Match(Box::new(scrut), arms)
            }
            Tok::Sym("(") => {
                self.advance();
                if self.eat_sym(")") {
                    ExprKind::Const(Literal::Unit)
                } else {
                    let first = self.expr()?;
                    if self.eat_sym(",") {
                        let mut items = vec![first, self.expr()?];
                        while self.eat_sym(",") {
                            items.push(self.expr()?);
                        }
                        self.expect_sym(")")?;
                        ExprKind::Tuple(items)
                    } else {
                        self.expect_sym(")")?;
                        let mut e = first;
                        e.span = start.join(self.prev_span());
                        return Ok(e);
                    }
                }
            }
            _ => return Err(self.unexpected("expression")),
        };
        Ok(Expr::with_span(kind, start.join(self.prev_span())))
    }

    fn arm(&mut self) -> PResult<MatchArm> {
        let pattern = self.pattern()?;
        self.expect_sym("->")?;
        let body = self.expr()?;
        Ok(MatchArm { pattern, body })
    }
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    let span = a.span.join(b.span);
    Expr::with_span(ExprKind::BinOp(op, Box::new(a), Box::new(b)), span)
}

fn check_duplicates(p: &Program) -> Vec<Diagnostic> {
    let mut errors = Vec::new();
    let mut types = HashSet::new();
    let mut ctors = HashSet::new();
    let mut values = HashSet::new();
    for d in &p.decls {
        match d {
            Decl::Types(defs) => {
                for t in defs {
                    if !types.insert(t.name.clone()) {
                        errors.push(Diagnostic::error(
                            format!("duplicate declaration of type `{}`", t.name),
                            Span::default(),
                        ));
                    }
                    if let TypeDefBody::Adt(cs) = &t.body {
                        for c in cs {
                            if !ctors.insert(c.name.clone()) {
                                errors.push(Diagnostic::error(
                                    format!("duplicate declaration of constructor `{}`", c.name),
                                    Span::default(),
                                ));
                            }
                        }
                    }
                }
            }
            Decl::Logic(l) => {
                if !values.insert(l.name.clone()) {
                    errors.push(Diagnostic::error(
                        format!("duplicate declaration of `{}`", l.name),
                        l.span,
                    ));
                }
            }
            Decl::Let { funs, .. } => {
                for f in funs {
                    if !values.insert(f.name.clone()) {
                        errors.push(Diagnostic::error(
                            format!("duplicate declaration of `{}`", f.name),
                            f.span,
                        ));
                    }
                }
            }
            Decl::Lemma { name, body } => {
                if !values.insert(name.clone()) {
                    errors.push(Diagnostic::error(
                        format!("duplicate declaration of `{name}`"),
                        body.span,
                    ));
                }
            }
        }
    }
    errors
}

/// `post f a ..` / `pre f a ..` become projections unless the program
/// declares a logic symbol of that name (as generated targets do).
fn resolve_projections(mut p: Program) -> Program {
    let declared: HashSet<String> = p
        .decls
        .iter()
        .filter_map(|d| match d {
            Decl::Logic(l) => Some(l.name.clone()),
            _ => None,
        })
        .collect();
    for d in &mut p.decls {
        match d {
            Decl::Types(_) => {}
            Decl::Logic(l) => {
                l.body = resolve_expr(std::mem::replace(&mut l.body, Expr::unit()), &declared)
            }
            Decl::Lemma { body, .. } => {
                *body = resolve_expr(std::mem::replace(body, Expr::unit()), &declared)
            }
            Decl::Let { funs, .. } => {
                for f in funs {
                    let c = std::mem::take(&mut f.contract);
                    f.contract = c.map_clauses(&mut |e| resolve_expr(e, &declared));
                    f.body = resolve_expr(std::mem::replace(&mut f.body, Expr::unit()), &declared);
                }
            }
        }
    }
    p
}

fn resolve_expr(e: Expr, declared: &HashSet<String>) -> Expr {
    e.map_bottom_up(&mut |e| {
        let Expr { kind, span } = e;
        let kind = match kind {
            ExprKind::App(head, mut args) => match &head.kind {
                ExprKind::Var(n) if (n == "post" || n == "pre") && !declared.contains(n) => {
                    let f = args.remove(0);
                    if n == "post" {
                        ExprKind::PostProj(Box::new(f), args)
                    } else {
                        ExprKind::PreProj(Box::new(f), args)
                    }
                }
                _ => ExprKind::App(head, args),
            },
            k => k,
        };
        Expr { kind, span }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert_eq!(parse("").unwrap().decls.len(), 0);
    }

    #[test]
    fn result_outside_ensures_is_rejected() {
        let err = parse("let f (x: int) : int = result").unwrap_err();
        assert!(err[0].message.contains("result"));
    }

    #[test]
    fn old_outside_ensures_is_rejected() {
        let err = parse("let f (r: ref int) : int requires { old !r = 0 } = !r").unwrap_err();
        assert!(err[0].message.contains("old"));
    }

    #[test]
    fn post_projection_formula() {
        let f = parse_formula("post k (height t) result").unwrap();
        match f.kind {
            ExprKind::PostProj(g, args) => {
                assert_eq!(g.kind, ExprKind::Var("k".into()));
                assert_eq!(args.len(), 2);
                assert_eq!(args[1].kind, ExprKind::Result);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trivial_formula() {
        assert!(parse_formula("true").unwrap().is_true());
    }

    #[test]
    fn quantified_formula() {
        let f = parse_formula("forall t: tree 'a. var_tree t >= 0").unwrap();
        match f.kind {
            ExprKind::Forall(vs, _) => {
                assert_eq!(
                    vs,
                    vec![(
                        "t".into(),
                        Some(Type::adt("tree", vec![Type::Var("a".into())]))
                    )]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn declared_post_is_a_plain_call() {
        let p = parse(
            "predicate post (k: int) (arg: int) (result: int) = k = result\n\
                       let f (x: int) : int ensures { post x x result } = x",
        )
        .unwrap();
        let f = p.find_fun("f").unwrap();
        assert_eq!(f.contract.ensures[0].call_head().unwrap().0, "post");
    }

    #[test]
    fn syntax_error_has_span() {
        let err = parse("let f (x: int) : int = (x").unwrap_err();
        assert!(err[0].message.starts_with("syntax error"));
        assert!(!err[0].span.is_synthetic());
    }

    #[test]
    fn duplicate_declarations() {
        let err = parse("let f (x: int) : int = x\nlet f (y: int) : int = y").unwrap_err();
        assert!(err[0].message.contains("duplicate"));
    }

    #[test]
    fn negative_literals_and_subtraction() {
        let e = parse_formula("1 - -2").unwrap();
        assert_eq!(e, Expr::binop(BinOp::Sub, Expr::int(1), Expr::int(-2)));
    }

    #[test]
    fn lambda_requires_warns() {
        let (_, warnings) = parse_with_warnings(
            "let f (x: int) : int = let g = fun y -> requires { y > 0 } y in 0",
        )
        .unwrap();
        assert_eq!(warnings.len(), 1);
    }
}

//! SMT-LIB2 rendering and parsing for linear integer terms and formulas.
//!
//! Two prime styles exist: the solver protocol quotes primed variables as
//! `|x'|`, while the game text format mangles them to `x_p`.

use std::fmt::Write as _;

use crate::fol::{Atom, Fol, LinTerm, Qf, Rel, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimeStyle {
    /// `|x'|`
    Quoted,
    /// `x_p`
    Suffixed,
}

pub fn var_to_smtlib(v: &Var, style: PrimeStyle) -> String {
    if !v.primed {
        v.name.clone()
    } else {
        match style {
            PrimeStyle::Quoted => format!("|{}'|", v.name),
            PrimeStyle::Suffixed => format!("{}_p", v.name),
        }
    }
}

pub fn term_to_smtlib(t: &LinTerm, style: PrimeStyle) -> String {
    let mut parts: Vec<String> = Vec::new();
    for (v, c) in &t.coeffs {
        let vs = var_to_smtlib(v, style);
        parts.push(match *c {
            1 => vs,
            -1 => format!("(- {vs})"),
            c if c < 0 => format!("(* (- {}) {vs})", -c),
            c => format!("(* {c} {vs})"),
        });
    }
    if t.constant != 0 || parts.is_empty() {
        parts.push(int_to_smtlib(t.constant));
    }
    match parts.len() {
        1 => parts.pop().unwrap(),
        _ => format!("(+ {})", parts.join(" ")),
    }
}

fn int_to_smtlib(c: i64) -> String {
    if c < 0 {
        format!("(- {})", -c)
    } else {
        c.to_string()
    }
}

pub fn qf_to_smtlib(q: &Qf, style: PrimeStyle) -> String {
    match q {
        Qf::True => "true".into(),
        Qf::False => "false".into(),
        Qf::Atom(Atom::Cmp { term, rel }) => {
            let op = match rel {
                Rel::Le => "<=",
                Rel::Lt => "<",
                Rel::Ge => ">=",
                Rel::Gt => ">",
                Rel::Eq => "=",
                Rel::Ne => return format!("(not (= {} 0))", term_to_smtlib(term, style)),
            };
            format!("({op} {} 0)", term_to_smtlib(term, style))
        }
        Qf::Atom(Atom::Dvd { modulus, term, negated }) => {
            let inner = format!("((_ divisible {modulus}) {})", term_to_smtlib(term, style));
            if *negated {
                format!("(not {inner})")
            } else {
                inner
            }
        }
        Qf::Not(f) => format!("(not {})", qf_to_smtlib(f, style)),
        Qf::And(fs) => nary("and", "true", fs.iter().map(|f| qf_to_smtlib(f, style))),
        Qf::Or(fs) => nary("or", "false", fs.iter().map(|f| qf_to_smtlib(f, style))),
    }
}

pub fn fol_to_smtlib(f: &Fol, style: PrimeStyle) -> String {
    match f {
        Fol::Qf(q) => qf_to_smtlib(q, style),
        Fol::Not(g) => format!("(not {})", fol_to_smtlib(g, style)),
        Fol::And(gs) => nary("and", "true", gs.iter().map(|g| fol_to_smtlib(g, style))),
        Fol::Or(gs) => nary("or", "false", gs.iter().map(|g| fol_to_smtlib(g, style))),
        Fol::Exists(vs, g) | Fol::Forall(vs, g) => {
            let quant = if matches!(f, Fol::Exists(..)) { "exists" } else { "forall" };
            let mut binders = String::new();
            for v in vs {
                let _ = write!(binders, "({} Int)", var_to_smtlib(v, style));
            }
            format!("({quant} ({binders}) {})", fol_to_smtlib(g, style))
        }
    }
}

fn nary(op: &str, unit: &str, parts: impl Iterator<Item = String>) -> String {
    let parts: Vec<String> = parts.collect();
    match parts.len() {
        0 => unit.into(),
        1 => parts.into_iter().next().unwrap(),
        _ => format!("({op} {})", parts.join(" ")),
    }
}

/// Parse error for SMT-LIB terms embedded in the game text format.
#[derive(Debug, Clone, thiserror::Error)]
#[error("smtlib parse error at byte {at}: {msg}")]
pub struct SmtParseError {
    pub msg: String,
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Sym(String),
    Int(i64),
    List(Vec<Sexp>),
}

struct SexpParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> SexpParser<'a> {
    fn err(&self, msg: impl Into<String>) -> SmtParseError {
        SmtParseError { msg: msg.into(), at: self.pos }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn parse(&mut self) -> Result<Sexp, SmtParseError> {
        self.skip_ws();
        if self.pos >= self.s.len() {
            return Err(self.err("unexpected end of input"));
        }
        match self.s[self.pos] {
            b'(' => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    if self.pos >= self.s.len() {
                        return Err(self.err("unterminated list"));
                    }
                    if self.s[self.pos] == b')' {
                        self.pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    items.push(self.parse()?);
                }
            }
            b')' => Err(self.err("unexpected ')'")),
            b'|' => {
                let start = self.pos + 1;
                let mut end = start;
                while end < self.s.len() && self.s[end] != b'|' {
                    end += 1;
                }
                if end >= self.s.len() {
                    return Err(self.err("unterminated quoted symbol"));
                }
                self.pos = end + 1;
                Ok(Sexp::Sym(String::from_utf8_lossy(&self.s[start..end]).into_owned()))
            }
            _ => {
                let start = self.pos;
                while self.pos < self.s.len()
                    && !self.s[self.pos].is_ascii_whitespace()
                    && self.s[self.pos] != b'('
                    && self.s[self.pos] != b')'
                {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                if let Ok(n) = tok.parse::<i64>() {
                    Ok(Sexp::Int(n))
                } else {
                    Ok(Sexp::Sym(tok.to_string()))
                }
            }
        }
    }
}

/// Parses an SMT-LIB boolean term over integer variables. Symbols ending in
/// `_p` denote primed variables.
pub fn parse_qf_smtlib(input: &str) -> Result<Qf, SmtParseError> {
    let mut p = SexpParser { s: input.as_bytes(), pos: 0 };
    let sexp = p.parse()?;
    p.skip_ws();
    if p.pos != input.len() {
        return Err(p.err("trailing input after term"));
    }
    sexp_to_qf(&sexp).map_err(|msg| SmtParseError { msg, at: 0 })
}

fn sym_to_var(s: &str) -> Var {
    if let Some(base) = s.strip_suffix("_p") {
        Var::primed(base)
    } else if let Some(base) = s.strip_suffix('\'') {
        Var::primed(base)
    } else {
        Var::new(s)
    }
}

fn sexp_to_term(s: &Sexp) -> Result<LinTerm, String> {
    match s {
        Sexp::Int(n) => Ok(LinTerm::constant(*n)),
        Sexp::Sym(name) => Ok(LinTerm::var(sym_to_var(name))),
        Sexp::List(items) => {
            let (op, args) = split_op(items)?;
            match op {
                "+" => {
                    let mut acc = LinTerm::constant(0);
                    for a in args {
                        acc = acc.add(&sexp_to_term(a)?);
                    }
                    Ok(acc)
                }
                "-" => match args.len() {
                    0 => Err("(-) needs arguments".into()),
                    1 => Ok(sexp_to_term(&args[0])?.neg()),
                    _ => {
                        let mut acc = sexp_to_term(&args[0])?;
                        for a in &args[1..] {
                            acc = acc.sub(&sexp_to_term(a)?);
                        }
                        Ok(acc)
                    }
                },
                "*" => {
                    let mut constant: i64 = 1;
                    let mut var_part: Option<LinTerm> = None;
                    for a in args {
                        let t = sexp_to_term(a)?;
                        if t.is_constant() {
                            constant *= t.constant;
                        } else if var_part.is_none() {
                            var_part = Some(t);
                        } else {
                            return Err("nonlinear multiplication".into());
                        }
                    }
                    Ok(match var_part {
                        Some(t) => t.scale(constant),
                        None => LinTerm::constant(constant),
                    })
                }
                other => Err(format!("unknown term operator '{other}'")),
            }
        }
    }
}

fn split_op(items: &[Sexp]) -> Result<(&str, &[Sexp]), String> {
    match items.first() {
        Some(Sexp::Sym(op)) => Ok((op.as_str(), &items[1..])),
        _ => Err("expected operator at head of list".into()),
    }
}

fn sexp_to_qf(s: &Sexp) -> Result<Qf, String> {
    match s {
        Sexp::Sym(sym) if sym == "true" => Ok(Qf::True),
        Sexp::Sym(sym) if sym == "false" => Ok(Qf::False),
        Sexp::Sym(other) => Err(format!("expected formula, found symbol '{other}'")),
        Sexp::Int(_) => Err("expected formula, found integer".into()),
        Sexp::List(items) => {
            // (_ divisible n) applications have a list head.
            if let Some(Sexp::List(head)) = items.first() {
                if head.len() == 3
                    && head[0] == Sexp::Sym("_".into())
                    && head[1] == Sexp::Sym("divisible".into())
                {
                    let Sexp::Int(m) = head[2] else {
                        return Err("divisible needs an integer modulus".into());
                    };
                    if items.len() != 2 {
                        return Err("divisible takes one argument".into());
                    }
                    return Ok(Qf::Atom(Atom::Dvd {
                        modulus: m,
                        term: sexp_to_term(&items[1])?,
                        negated: false,
                    }));
                }
                return Err("unexpected list head".into());
            }
            let (op, args) = split_op(items)?;
            let rel = match op {
                "<=" => Some(Rel::Le),
                "<" => Some(Rel::Lt),
                ">=" => Some(Rel::Ge),
                ">" => Some(Rel::Gt),
                "=" => Some(Rel::Eq),
                _ => None,
            };
            if let Some(rel) = rel {
                if args.len() != 2 {
                    return Err(format!("'{op}' takes two arguments"));
                }
                let lhs = sexp_to_term(&args[0])?;
                let rhs = sexp_to_term(&args[1])?;
                return Ok(Qf::Atom(Atom::Cmp { term: lhs.sub(&rhs), rel }));
            }
            match op {
                "not" => {
                    if args.len() != 1 {
                        return Err("'not' takes one argument".into());
                    }
                    Ok(Qf::not(sexp_to_qf(&args[0])?))
                }
                "and" => Ok(Qf::And(args.iter().map(sexp_to_qf).collect::<Result<_, _>>()?)),
                "or" => Ok(Qf::Or(args.iter().map(sexp_to_qf).collect::<Result<_, _>>()?)),
                "=>" => {
                    if args.len() != 2 {
                        return Err("'=>' takes two arguments".into());
                    }
                    Ok(Qf::implies(sexp_to_qf(&args[0])?, sexp_to_qf(&args[1])?))
                }
                "distinct" => {
                    if args.len() != 2 {
                        return Err("'distinct' takes two arguments".into());
                    }
                    let lhs = sexp_to_term(&args[0])?;
                    let rhs = sexp_to_term(&args[1])?;
                    Ok(Qf::Atom(Atom::Cmp { term: lhs.sub(&rhs), rel: Rel::Ne }))
                }
                other => Err(format!("unknown formula operator '{other}'")),
            }
        }
    }
}

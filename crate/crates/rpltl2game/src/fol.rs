//! Quantifier-free and quantified formulas over linear integer arithmetic.
//!
//! Variables come in primed (`x'`, the value in the next step) and unprimed
//! flavours; atoms are linear constraints plus divisibility constraints (the
//! latter only arise internally during quantifier elimination).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// A program variable, input, or its primed (next-step) version.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub name: String,
    pub primed: bool,
}

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var { name: name.into(), primed: false }
    }

    pub fn primed(name: impl Into<String>) -> Self {
        Var { name: name.into(), primed: true }
    }

    /// The primed version of this variable.
    pub fn prime(&self) -> Self {
        Var { name: self.name.clone(), primed: true }
    }

    /// The unprimed version of this variable.
    pub fn unprime(&self) -> Self {
        Var { name: self.name.clone(), primed: false }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.name, if self.primed { "'" } else { "" })
    }
}

/// Whether a declared variable is controlled by the environment or the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    /// Environment input; may not appear primed.
    Input,
    /// Program (state) variable; may appear primed and unprimed.
    Program,
}

/// A declared variable of a specification. Only integer-sorted variables
/// exist; booleans are encoded as 0/1 integers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
}

/// An assignment of integer values to variables.
pub type Valuation = BTreeMap<Var, i64>;

/// A linear term: sum of coefficient * variable plus a constant.
///
/// # Invariant
/// No coefficient stored in `coeffs` is zero.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LinTerm {
    pub coeffs: BTreeMap<Var, i64>,
    pub constant: i64,
}

impl LinTerm {
    pub fn constant(c: i64) -> Self {
        LinTerm { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(v, 1);
        LinTerm { coeffs, constant: 0 }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, v: &Var) -> i64 {
        self.coeffs.get(v).copied().unwrap_or(0)
    }

    pub fn add_term(&mut self, v: Var, c: i64) {
        let entry = self.coeffs.entry(v).or_insert(0);
        *entry += c;
        if *entry == 0 {
            let key = self.coeffs.iter().find(|(_, c)| **c == 0).map(|(v, _)| v.clone());
            if let Some(key) = key {
                self.coeffs.remove(&key);
            }
        }
    }

    pub fn add(&self, other: &LinTerm) -> LinTerm {
        let mut out = self.clone();
        out.constant += other.constant;
        for (v, c) in &other.coeffs {
            out.add_term(v.clone(), *c);
        }
        out
    }

    pub fn scale(&self, k: i64) -> LinTerm {
        if k == 0 {
            return LinTerm::constant(0);
        }
        LinTerm {
            coeffs: self.coeffs.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn sub(&self, other: &LinTerm) -> LinTerm {
        self.add(&other.scale(-1))
    }

    pub fn neg(&self) -> LinTerm {
        self.scale(-1)
    }

    /// Replaces every occurrence of `v` by `t`.
    pub fn substitute(&self, v: &Var, t: &LinTerm) -> LinTerm {
        match self.coeffs.get(v) {
            None => self.clone(),
            Some(&c) => {
                let mut out = self.clone();
                out.coeffs.remove(v);
                out.add(&t.scale(c))
            }
        }
    }

    /// Applies a variable renaming.
    pub fn rename(&self, map: &BTreeMap<Var, Var>) -> LinTerm {
        let mut out = LinTerm::constant(self.constant);
        for (v, c) in &self.coeffs {
            out.add_term(map.get(v).cloned().unwrap_or_else(|| v.clone()), *c);
        }
        out
    }

    /// Evaluates under a total valuation; unbound variables default to 0.
    pub fn eval(&self, val: &Valuation) -> i64 {
        let mut acc: i128 = self.constant as i128;
        for (v, c) in &self.coeffs {
            acc += (*c as i128) * (val.get(v).copied().unwrap_or(0) as i128);
        }
        acc.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.coeffs.keys()
    }
}

impl fmt::Display for LinTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "{}", self.constant);
        }
        let mut first = true;
        for (v, c) in &self.coeffs {
            if first {
                match *c {
                    1 => write!(f, "{v}")?,
                    -1 => write!(f, "-{v}")?,
                    c => write!(f, "{c}*{v}")?,
                }
                first = false;
            } else if *c >= 0 {
                if *c == 1 {
                    write!(f, " + {v}")?;
                } else {
                    write!(f, " + {c}*{v}")?;
                }
            } else if *c == -1 {
                write!(f, " - {v}")?;
            } else {
                write!(f, " - {}*{v}", -c)?;
            }
        }
        if self.constant > 0 {
            write!(f, " + {}", self.constant)?;
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)?;
        }
        Ok(())
    }
}

/// Comparison relation of a canonical atom. `Lt`, `Gt` and `Ge` are parser
/// conveniences; canonicalization reduces every comparison to `Le`, `Eq`
/// or `Ne` against zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

/// An atomic constraint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// `term REL 0`.
    Cmp { term: LinTerm, rel: Rel },
    /// `modulus | term` (or its negation). Only produced by quantifier
    /// elimination and by parsing the explicit `divides(k, t)` syntax.
    Dvd { modulus: i64, term: LinTerm, negated: bool },
}

impl Atom {
    pub fn cmp(term: LinTerm, rel: Rel) -> Atom {
        Atom::Cmp { term, rel }
    }

    pub fn eval(&self, val: &Valuation) -> bool {
        match self {
            Atom::Cmp { term, rel } => {
                let v = term.eval(val);
                match rel {
                    Rel::Le => v <= 0,
                    Rel::Lt => v < 0,
                    Rel::Ge => v >= 0,
                    Rel::Gt => v > 0,
                    Rel::Eq => v == 0,
                    Rel::Ne => v != 0,
                }
            }
            Atom::Dvd { modulus, term, negated } => {
                let d = term.eval(val).rem_euclid(*modulus) == 0;
                d != *negated
            }
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// A quantifier-free formula over linear integer atoms.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Qf {
    True,
    False,
    Atom(Atom),
    Not(Box<Qf>),
    And(Vec<Qf>),
    Or(Vec<Qf>),
}

impl Qf {
    pub fn atom(term: LinTerm, rel: Rel) -> Qf {
        Qf::Atom(Atom::cmp(term, rel))
    }

    pub fn not(f: Qf) -> Qf {
        Qf::Not(Box::new(f))
    }

    pub fn and(fs: Vec<Qf>) -> Qf {
        Qf::And(fs)
    }

    pub fn or(fs: Vec<Qf>) -> Qf {
        Qf::Or(fs)
    }

    pub fn implies(a: Qf, b: Qf) -> Qf {
        Qf::Or(vec![Qf::not(a), b])
    }

    /// Conjunction of an iterator of formulas; empty yields `True`.
    pub fn conj(fs: impl IntoIterator<Item = Qf>) -> Qf {
        let v: Vec<Qf> = fs.into_iter().collect();
        match v.len() {
            0 => Qf::True,
            1 => v.into_iter().next().unwrap(),
            _ => Qf::And(v),
        }
    }

    pub fn eval(&self, val: &Valuation) -> bool {
        match self {
            Qf::True => true,
            Qf::False => false,
            Qf::Atom(a) => a.eval(val),
            Qf::Not(f) => !f.eval(val),
            Qf::And(fs) => fs.iter().all(|f| f.eval(val)),
            Qf::Or(fs) => fs.iter().any(|f| f.eval(val)),
        }
    }

    pub fn substitute(&self, v: &Var, t: &LinTerm) -> Qf {
        self.map_terms(&|tm| tm.substitute(v, t))
    }

    pub fn rename(&self, map: &BTreeMap<Var, Var>) -> Qf {
        self.map_terms(&|tm| tm.rename(map))
    }

    /// Replaces every unprimed program variable by its primed version.
    /// Inputs (listed in `inputs`) are left alone.
    pub fn prime(&self, inputs: &BTreeSet<String>) -> Qf {
        self.map_terms(&|tm| {
            let mut out = LinTerm::constant(tm.constant);
            for (v, c) in &tm.coeffs {
                let nv = if !v.primed && !inputs.contains(&v.name) { v.prime() } else { v.clone() };
                out.add_term(nv, *c);
            }
            out
        })
    }

    fn map_terms(&self, f: &impl Fn(&LinTerm) -> LinTerm) -> Qf {
        match self {
            Qf::True => Qf::True,
            Qf::False => Qf::False,
            Qf::Atom(Atom::Cmp { term, rel }) => Qf::Atom(Atom::Cmp { term: f(term), rel: *rel }),
            Qf::Atom(Atom::Dvd { modulus, term, negated }) => {
                Qf::Atom(Atom::Dvd { modulus: *modulus, term: f(term), negated: *negated })
            }
            Qf::Not(g) => Qf::not(g.map_terms(f)),
            Qf::And(gs) => Qf::And(gs.iter().map(|g| g.map_terms(f)).collect()),
            Qf::Or(gs) => Qf::Or(gs.iter().map(|g| g.map_terms(f)).collect()),
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Qf::True | Qf::False => {}
            Qf::Atom(Atom::Cmp { term, .. }) | Qf::Atom(Atom::Dvd { term, .. }) => {
                out.extend(term.vars().cloned());
            }
            Qf::Not(f) => f.collect_vars(out),
            Qf::And(fs) | Qf::Or(fs) => {
                for f in fs {
                    f.collect_vars(out);
                }
            }
        }
    }

    /// Canonical form: negation-normal (negations folded into atoms),
    /// flattened and sorted `And`/`Or` with duplicates removed, constants
    /// folded, atoms normalized (gcd-reduced, relation reduced to
    /// `<= 0` / `= 0` / `!= 0`).
    pub fn canon(&self) -> Qf {
        self.canon_signed(false)
    }

    fn canon_signed(&self, negate: bool) -> Qf {
        match self {
            Qf::True => {
                if negate {
                    Qf::False
                } else {
                    Qf::True
                }
            }
            Qf::False => {
                if negate {
                    Qf::True
                } else {
                    Qf::False
                }
            }
            Qf::Not(f) => f.canon_signed(!negate),
            Qf::Atom(a) => canon_atom(a, negate),
            Qf::And(fs) | Qf::Or(fs) => {
                let is_and = matches!(self, Qf::And(_)) != negate;
                let mut children: BTreeSet<Qf> = BTreeSet::new();
                let mut stack: Vec<Qf> = fs.iter().map(|f| f.canon_signed(negate)).collect();
                while let Some(c) = stack.pop() {
                    match (&c, is_and) {
                        (Qf::And(inner), true) | (Qf::Or(inner), false) => {
                            stack.extend(inner.iter().cloned());
                        }
                        (Qf::False, true) | (Qf::True, false) => return c,
                        (Qf::True, true) | (Qf::False, false) => {}
                        _ => {
                            children.insert(c);
                        }
                    }
                }
                // An atom together with its complement collapses the node.
                for c in &children {
                    if let Qf::Atom(a) = c {
                        if let Qf::Atom(na) = canon_atom(a, true) {
                            if children.contains(&Qf::Atom(na)) {
                                return if is_and { Qf::False } else { Qf::True };
                            }
                        }
                    }
                }
                let children: Vec<Qf> = children.into_iter().collect();
                match children.len() {
                    0 => {
                        if is_and {
                            Qf::True
                        } else {
                            Qf::False
                        }
                    }
                    1 => children.into_iter().next().unwrap(),
                    _ => {
                        if is_and {
                            Qf::And(children)
                        } else {
                            Qf::Or(children)
                        }
                    }
                }
            }
        }
    }

    /// A stable 64-bit key of the canonical form, identical across runs.
    pub fn canon_key(&self) -> u64 {
        let mut h = Fnv::new();
        feed_qf(&self.canon(), &mut h);
        h.finish()
    }
}

impl fmt::Display for Qf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_qf(self, f, 0)
    }
}

fn fmt_qf(q: &Qf, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
    // prec: 0 = or, 1 = and, 2 = unary.
    match q {
        Qf::True => write!(f, "true"),
        Qf::False => write!(f, "false"),
        Qf::Atom(Atom::Cmp { term, rel }) => {
            let (lhs, op, rhs) = display_cmp(term, *rel);
            write!(f, "{lhs} {op} {rhs}")
        }
        Qf::Atom(Atom::Dvd { modulus, term, negated }) => {
            if *negated {
                write!(f, "!divides({modulus}, {term})")
            } else {
                write!(f, "divides({modulus}, {term})")
            }
        }
        Qf::Not(g) => {
            write!(f, "!")?;
            write!(f, "(")?;
            fmt_qf(g, f, 0)?;
            write!(f, ")")
        }
        Qf::And(gs) => {
            if gs.is_empty() {
                return write!(f, "true");
            }
            let need_paren = prec > 1;
            if need_paren {
                write!(f, "(")?;
            }
            for (i, g) in gs.iter().enumerate() {
                if i > 0 {
                    write!(f, " && ")?;
                }
                let child_needs = matches!(g, Qf::Or(_) | Qf::And(_));
                if child_needs {
                    write!(f, "(")?;
                    fmt_qf(g, f, 0)?;
                    write!(f, ")")?;
                } else {
                    fmt_qf(g, f, 2)?;
                }
            }
            if need_paren {
                write!(f, ")")?;
            }
            Ok(())
        }
        Qf::Or(gs) => {
            if gs.is_empty() {
                return write!(f, "false");
            }
            let need_paren = prec > 0;
            if need_paren {
                write!(f, "(")?;
            }
            for (i, g) in gs.iter().enumerate() {
                if i > 0 {
                    write!(f, " || ")?;
                }
                let child_needs = matches!(g, Qf::Or(_) | Qf::And(_));
                if child_needs {
                    write!(f, "(")?;
                    fmt_qf(g, f, 0)?;
                    write!(f, ")")?;
                } else {
                    fmt_qf(g, f, 2)?;
                }
            }
            if need_paren {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

/// Splits a canonical `term REL 0` atom into a readable `lhs op rhs` triple:
/// variables with positive coefficients on the left, the rest on the right.
fn display_cmp(term: &LinTerm, rel: Rel) -> (String, &'static str, String) {
    let mut lhs = LinTerm::constant(0);
    let mut rhs = LinTerm::constant(-term.constant);
    for (v, c) in &term.coeffs {
        if *c > 0 {
            lhs.add_term(v.clone(), *c);
        } else {
            rhs.add_term(v.clone(), -c);
        }
    }
    if term.constant > 0 && lhs.coeffs.is_empty() {
        lhs.constant = term.constant;
        rhs.constant = 0;
    }
    let op = match rel {
        Rel::Le => "<=",
        Rel::Lt => "<",
        Rel::Ge => ">=",
        Rel::Gt => ">",
        Rel::Eq => "=",
        Rel::Ne => "!=",
    };
    (lhs.to_string(), op, rhs.to_string())
}

/// Normalizes an atom (optionally negated) to `Le`/`Eq`/`Ne` form with
/// gcd-reduced coefficients, folding variable-free atoms to constants.
fn canon_atom(a: &Atom, negate: bool) -> Qf {
    match a {
        Atom::Cmp { term, rel } => {
            // Reduce to `t <= 0`, `t = 0` or `t != 0`.
            let (term, rel) = match (*rel, negate) {
                (Rel::Le, false) | (Rel::Gt, true) => (term.clone(), Rel::Le),
                (Rel::Lt, false) | (Rel::Ge, true) => (term.add(&LinTerm::constant(1)), Rel::Le),
                (Rel::Ge, false) | (Rel::Lt, true) => (term.neg(), Rel::Le),
                (Rel::Gt, false) | (Rel::Le, true) => (term.neg().add(&LinTerm::constant(1)), Rel::Le),
                (Rel::Eq, false) | (Rel::Ne, true) => (term.clone(), Rel::Eq),
                (Rel::Ne, false) | (Rel::Eq, true) => (term.clone(), Rel::Ne),
            };
            if term.is_constant() {
                let holds = match rel {
                    Rel::Le => term.constant <= 0,
                    Rel::Eq => term.constant == 0,
                    Rel::Ne => term.constant != 0,
                    _ => unreachable!(),
                };
                return if holds { Qf::True } else { Qf::False };
            }
            let g = term.coeffs.values().fold(0, |acc, c| gcd(acc, *c));
            let term = if g > 1 {
                match rel {
                    // g*s + c <= 0  <=>  s <= floor(-c/g)  <=>  s - floor(-c/g) <= 0
                    Rel::Le => LinTerm {
                        coeffs: term.coeffs.iter().map(|(v, c)| (v.clone(), c / g)).collect(),
                        constant: -((-term.constant).div_euclid(g)),
                    },
                    Rel::Eq | Rel::Ne => {
                        if term.constant % g != 0 {
                            // g*t + c = 0 with g not dividing c is unsatisfiable.
                            return if rel == Rel::Eq { Qf::False } else { Qf::True };
                        }
                        LinTerm {
                            coeffs: term.coeffs.iter().map(|(v, c)| (v.clone(), c / g)).collect(),
                            constant: term.constant / g,
                        }
                    }
                    _ => unreachable!(),
                }
            } else {
                term
            };
            // For (in)equalities the sign is immaterial: fix it so the first
            // variable has a positive coefficient.
            let term = if matches!(rel, Rel::Eq | Rel::Ne) {
                match term.coeffs.values().next() {
                    Some(c) if *c < 0 => term.neg(),
                    _ => term,
                }
            } else {
                term
            };
            Qf::Atom(Atom::Cmp { term, rel })
        }
        Atom::Dvd { modulus, term, negated } => {
            let negated = *negated != negate;
            let m = modulus.abs();
            if m <= 1 {
                return if negated { Qf::False } else { Qf::True };
            }
            // Reduce coefficients and constant modulo m.
            let mut t = LinTerm::constant(term.constant.rem_euclid(m));
            for (v, c) in &term.coeffs {
                let c = c.rem_euclid(m);
                if c != 0 {
                    t.add_term(v.clone(), c);
                }
            }
            if t.is_constant() {
                let holds = t.constant.rem_euclid(m) == 0;
                return if holds != negated { Qf::True } else { Qf::False };
            }
            Qf::Atom(Atom::Dvd { modulus: m, term: t, negated })
        }
    }
}

/// A possibly-quantified first-order formula over linear integer arithmetic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Fol {
    Qf(Qf),
    Not(Box<Fol>),
    And(Vec<Fol>),
    Or(Vec<Fol>),
    Exists(Vec<Var>, Box<Fol>),
    Forall(Vec<Var>, Box<Fol>),
}

impl Fol {
    pub fn implies(a: Fol, b: Fol) -> Fol {
        Fol::Or(vec![Fol::Not(Box::new(a)), b])
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        match self {
            Fol::Qf(q) => q.vars(),
            Fol::Not(f) => f.free_vars(),
            Fol::And(fs) | Fol::Or(fs) => {
                fs.iter().flat_map(|f| f.free_vars()).collect()
            }
            Fol::Exists(vs, f) | Fol::Forall(vs, f) => {
                let mut out = f.free_vars();
                for v in vs {
                    out.remove(v);
                }
                out
            }
        }
    }
}

impl fmt::Display for Fol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fol::Qf(q) => write!(f, "{q}"),
            Fol::Not(g) => write!(f, "!({g})"),
            Fol::And(gs) => {
                write!(f, "(")?;
                for (i, g) in gs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " && ")?;
                    }
                    write!(f, "{g}")?;
                }
                write!(f, ")")
            }
            Fol::Or(gs) => {
                write!(f, "(")?;
                for (i, g) in gs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " || ")?;
                    }
                    write!(f, "{g}")?;
                }
                write!(f, ")")
            }
            Fol::Exists(vs, g) => {
                write!(f, "exists ")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ". ({g})")
            }
            Fol::Forall(vs, g) => {
                write!(f, "forall ")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ". ({g})")
            }
        }
    }
}

/// FNV-1a, used for canonical keys: stable across runs and platforms.
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn write_i64(&mut self, v: i64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_str(&mut self, s: &str) {
        self.write(s.as_bytes());
        self.write(&[0xff]);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Fnv::new()
    }
}

pub(crate) fn feed_term(t: &LinTerm, h: &mut Fnv) {
    h.write(&[b'T']);
    for (v, c) in &t.coeffs {
        h.write_str(&v.name);
        h.write(&[v.primed as u8]);
        h.write_i64(*c);
    }
    h.write_i64(t.constant);
}

pub(crate) fn feed_qf(q: &Qf, h: &mut Fnv) {
    match q {
        Qf::True => h.write(&[b'1']),
        Qf::False => h.write(&[b'0']),
        Qf::Atom(Atom::Cmp { term, rel }) => {
            h.write(&[b'A', *rel as u8]);
            feed_term(term, h);
        }
        Qf::Atom(Atom::Dvd { modulus, term, negated }) => {
            h.write(&[b'D', *negated as u8]);
            h.write_i64(*modulus);
            feed_term(term, h);
        }
        Qf::Not(f) => {
            h.write(&[b'N']);
            feed_qf(f, h);
        }
        Qf::And(fs) => {
            h.write(&[b'&']);
            h.write_i64(fs.len() as i64);
            for f in fs {
                feed_qf(f, h);
            }
        }
        Qf::Or(fs) => {
            h.write(&[b'|']);
            h.write_i64(fs.len() as i64);
            for f in fs {
                feed_qf(f, h);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Var {
        Var::new("x")
    }

    fn y() -> Var {
        Var::new("y")
    }

    fn tm(pairs: &[(Var, i64)], c: i64) -> LinTerm {
        let mut t = LinTerm::constant(c);
        for (v, k) in pairs {
            t.add_term(v.clone(), *k);
        }
        t
    }

    #[test]
    fn substitute_then_evaluate() {
        // (x + 2y - 1)[x := y + 3] at y = 2  ==>  (2 + 3) + 4 - 1 = 8
        let t = tm(&[(x(), 1), (y(), 2)], -1);
        let s = t.substitute(&x(), &tm(&[(y(), 1)], 3));
        let mut val = Valuation::new();
        val.insert(y(), 2);
        assert_eq!(s.eval(&val), 8);
    }

    #[test]
    fn prime_renames_program_vars_only() {
        let inputs: BTreeSet<String> = ["e".to_string()].into_iter().collect();
        let f = Qf::atom(tm(&[(x(), 1), (Var::new("e"), -1)], 0), Rel::Eq);
        let p = f.prime(&inputs);
        let vars = p.vars();
        assert!(vars.contains(&Var::primed("x")));
        assert!(vars.contains(&Var::new("e")));
        assert!(!vars.contains(&x()));
    }

    #[test]
    fn canon_strict_to_weak() {
        // 0 < x  and  x >= 1  normalize identically.
        let a = Qf::atom(tm(&[(x(), -1)], 0), Rel::Lt); // -x < 0  i.e.  0 < x
        let b = Qf::atom(tm(&[(x(), -1)], 1), Rel::Le); // 1 - x <= 0  i.e.  x >= 1
        assert_eq!(a.canon(), b.canon());
        assert_eq!(a.canon_key(), b.canon_key());
    }

    #[test]
    fn canon_folds_constants_and_duplicates() {
        let a = Qf::atom(tm(&[(x(), 1)], 0), Rel::Le);
        let f = Qf::And(vec![a.clone(), Qf::True, a.clone(), Qf::Or(vec![Qf::False])]);
        // Nested Or(False) is False, which absorbs the conjunction.
        assert_eq!(f.canon(), Qf::False);
        let g = Qf::And(vec![a.clone(), Qf::True, a.clone()]);
        assert_eq!(g.canon(), a.canon());
    }

    #[test]
    fn canon_gcd_reduction() {
        // 2x + 4 <= 0  ==>  x + 2 <= 0
        let a = Qf::atom(tm(&[(x(), 2)], 4), Rel::Le);
        let b = Qf::atom(tm(&[(x(), 1)], 2), Rel::Le);
        assert_eq!(a.canon(), b.canon());
        // 2x + 1 = 0 is unsatisfiable over the integers.
        let c = Qf::atom(tm(&[(x(), 2)], 1), Rel::Eq);
        assert_eq!(c.canon(), Qf::False);
    }

    #[test]
    fn canon_complement_pair() {
        let a = Qf::atom(tm(&[(x(), 1)], 0), Rel::Eq);
        let f = Qf::And(vec![a.clone(), Qf::not(a)]);
        assert_eq!(f.canon(), Qf::False);
    }

    #[test]
    fn canon_is_idempotent_and_eval_preserving() {
        // Small deterministic enumeration of formulas over x, y.
        let atoms = [
            Qf::atom(tm(&[(x(), 1)], -1), Rel::Le),
            Qf::atom(tm(&[(x(), 2), (y(), -1)], 0), Rel::Eq),
            Qf::atom(tm(&[(y(), 3)], 2), Rel::Gt),
        ];
        let mut formulas: Vec<Qf> = atoms.to_vec();
        for a in &atoms {
            for b in &atoms {
                formulas.push(Qf::And(vec![a.clone(), Qf::not(b.clone())]));
                formulas.push(Qf::Or(vec![Qf::not(a.clone()), b.clone()]));
            }
        }
        for f in &formulas {
            let c = f.canon();
            assert_eq!(c, c.canon(), "canon not idempotent for {f}");
            for xv in -2..=2 {
                for yv in -2..=2 {
                    let mut val = Valuation::new();
                    val.insert(x(), xv);
                    val.insert(y(), yv);
                    assert_eq!(f.eval(&val), c.eval(&val), "canon changed meaning of {f}");
                }
            }
        }
    }

    #[test]
    fn dvd_eval_and_canon() {
        let d = Atom::Dvd { modulus: 3, term: tm(&[(x(), 1)], 1), negated: false };
        let mut val = Valuation::new();
        val.insert(x(), 2);
        assert!(d.eval(&val)); // 3 | 3
        val.insert(x(), 3);
        assert!(!d.eval(&val)); // 3 | 4 fails
        let q = Qf::Atom(Atom::Dvd { modulus: 3, term: tm(&[(x(), 4)], 7), negated: false });
        // 4x + 7 ~ x + 1 (mod 3)
        let c = Qf::Atom(Atom::Dvd { modulus: 3, term: tm(&[(x(), 1)], 1), negated: false });
        assert_eq!(q.canon(), c.canon());
    }
}

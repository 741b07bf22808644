//! Temporal formulas whose atoms are linear integer constraints, the
//! specification file parser, normal forms, Booleanization, and the
//! concrete lasso-trace semantics used as a test oracle throughout.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::fol::{Atom, LinTerm, Qf, Rel, Valuation, Var, VarDecl, VarKind, Fnv, feed_qf};

/// A temporal formula. `F`, `G` and `W` are first-class nodes: the
/// syntactic-safety check and several simplification rules pattern-match
/// them directly.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rpltl {
    True,
    False,
    Atom(Qf),
    Not(Box<Rpltl>),
    And(Vec<Rpltl>),
    Or(Vec<Rpltl>),
    Implies(Box<Rpltl>, Box<Rpltl>),
    Next(Box<Rpltl>),
    Until(Box<Rpltl>, Box<Rpltl>),
    WeakUntil(Box<Rpltl>, Box<Rpltl>),
    Finally(Box<Rpltl>),
    Globally(Box<Rpltl>),
}

impl Rpltl {
    pub fn atom(q: Qf) -> Rpltl {
        Rpltl::Atom(q)
    }

    pub fn not(f: Rpltl) -> Rpltl {
        Rpltl::Not(Box::new(f))
    }

    pub fn implies(a: Rpltl, b: Rpltl) -> Rpltl {
        Rpltl::Implies(Box::new(a), Box::new(b))
    }

    pub fn next(f: Rpltl) -> Rpltl {
        Rpltl::Next(Box::new(f))
    }

    pub fn until(a: Rpltl, b: Rpltl) -> Rpltl {
        Rpltl::Until(Box::new(a), Box::new(b))
    }

    pub fn weak_until(a: Rpltl, b: Rpltl) -> Rpltl {
        Rpltl::WeakUntil(Box::new(a), Box::new(b))
    }

    pub fn finally(f: Rpltl) -> Rpltl {
        Rpltl::Finally(Box::new(f))
    }

    pub fn globally(f: Rpltl) -> Rpltl {
        Rpltl::Globally(Box::new(f))
    }

    pub fn conj(fs: impl IntoIterator<Item = Rpltl>) -> Rpltl {
        let v: Vec<Rpltl> = fs.into_iter().collect();
        match v.len() {
            0 => Rpltl::True,
            1 => v.into_iter().next().unwrap(),
            _ => Rpltl::And(v),
        }
    }

    /// Whether the formula contains a temporal operator.
    pub fn is_temporal(&self) -> bool {
        match self {
            Rpltl::True | Rpltl::False | Rpltl::Atom(_) => false,
            Rpltl::Not(f) => f.is_temporal(),
            Rpltl::And(fs) | Rpltl::Or(fs) => fs.iter().any(|f| f.is_temporal()),
            Rpltl::Implies(a, b) => a.is_temporal() || b.is_temporal(),
            _ => true,
        }
    }

    /// Converts a non-temporal formula to its quantifier-free form.
    pub fn as_qf(&self) -> Option<Qf> {
        match self {
            Rpltl::True => Some(Qf::True),
            Rpltl::False => Some(Qf::False),
            Rpltl::Atom(q) => Some(q.clone()),
            Rpltl::Not(f) => Some(Qf::not(f.as_qf()?)),
            Rpltl::And(fs) => Some(Qf::And(fs.iter().map(|f| f.as_qf()).collect::<Option<_>>()?)),
            Rpltl::Or(fs) => Some(Qf::Or(fs.iter().map(|f| f.as_qf()).collect::<Option<_>>()?)),
            Rpltl::Implies(a, b) => Some(Qf::implies(a.as_qf()?, b.as_qf()?)),
            _ => None,
        }
    }

    /// Canonical form: canonical atoms (negation folded in), flattened and
    /// sorted `&&`/`||`, constants folded, plus the fixed rewrite catalog
    /// (`φ W false → G φ`, `G true → true`, `F false → false`,
    /// `G G φ → G φ`, `F F φ → F φ`).
    pub fn canon(&self) -> Rpltl {
        match self {
            Rpltl::True => Rpltl::True,
            Rpltl::False => Rpltl::False,
            Rpltl::Atom(q) => lift_qf(&q.canon()),
            Rpltl::Not(f) => match f.canon() {
                Rpltl::True => Rpltl::False,
                Rpltl::False => Rpltl::True,
                Rpltl::Not(g) => *g,
                Rpltl::Atom(q) => lift_qf(&Qf::not(q).canon()),
                g => Rpltl::not(g),
            },
            Rpltl::And(fs) => {
                let mut children: BTreeSet<Rpltl> = BTreeSet::new();
                let mut stack: Vec<Rpltl> = fs.iter().map(|f| f.canon()).collect();
                while let Some(c) = stack.pop() {
                    match c {
                        Rpltl::And(inner) => stack.extend(inner),
                        Rpltl::False => return Rpltl::False,
                        Rpltl::True => {}
                        other => {
                            children.insert(other);
                        }
                    }
                }
                let children: Vec<Rpltl> = children.into_iter().collect();
                match children.len() {
                    0 => Rpltl::True,
                    1 => children.into_iter().next().unwrap(),
                    _ => Rpltl::And(children),
                }
            }
            Rpltl::Or(fs) => {
                let mut children: BTreeSet<Rpltl> = BTreeSet::new();
                let mut stack: Vec<Rpltl> = fs.iter().map(|f| f.canon()).collect();
                while let Some(c) = stack.pop() {
                    match c {
                        Rpltl::Or(inner) => stack.extend(inner),
                        Rpltl::True => return Rpltl::True,
                        Rpltl::False => {}
                        other => {
                            children.insert(other);
                        }
                    }
                }
                let children: Vec<Rpltl> = children.into_iter().collect();
                match children.len() {
                    0 => Rpltl::False,
                    1 => children.into_iter().next().unwrap(),
                    _ => Rpltl::Or(children),
                }
            }
            Rpltl::Implies(a, b) => match (a.canon(), b.canon()) {
                (Rpltl::True, b) => b,
                (Rpltl::False, _) => Rpltl::True,
                (_, Rpltl::True) => Rpltl::True,
                (a, Rpltl::False) => Rpltl::not(a).canon(),
                (a, b) if a == b => Rpltl::True,
                (a, b) => Rpltl::implies(a, b),
            },
            Rpltl::Next(f) => match f.canon() {
                Rpltl::True => Rpltl::True,
                Rpltl::False => Rpltl::False,
                g => Rpltl::next(g),
            },
            Rpltl::Until(a, b) => match (a.canon(), b.canon()) {
                (_, Rpltl::True) => Rpltl::True,
                (_, Rpltl::False) => Rpltl::False,
                (Rpltl::False, b) => b,
                (Rpltl::True, b) => Rpltl::finally(b).canon(),
                (a, b) => Rpltl::until(a, b),
            },
            Rpltl::WeakUntil(a, b) => match (a.canon(), b.canon()) {
                (_, Rpltl::True) => Rpltl::True,
                (a, Rpltl::False) => Rpltl::globally(a).canon(),
                (Rpltl::True, _) => Rpltl::True,
                (Rpltl::False, b) => b,
                (a, b) => Rpltl::weak_until(a, b),
            },
            Rpltl::Finally(f) => match f.canon() {
                Rpltl::True => Rpltl::True,
                Rpltl::False => Rpltl::False,
                Rpltl::Finally(g) => Rpltl::Finally(g),
                g => Rpltl::finally(g),
            },
            Rpltl::Globally(f) => match f.canon() {
                Rpltl::True => Rpltl::True,
                Rpltl::False => Rpltl::False,
                Rpltl::Globally(g) => Rpltl::Globally(g),
                g => Rpltl::globally(g),
            },
        }
    }

    /// Stable hash of the canonical form.
    pub fn canon_key(&self) -> u64 {
        let mut h = Fnv::new();
        feed_rpltl(&self.canon(), &mut h);
        h.finish()
    }

    /// Negation normal form: negations pushed to atoms, `->` removed,
    /// temporal operators dualized (`!U` through `W` and vice versa).
    pub fn nnf(&self) -> Rpltl {
        self.nnf_signed(false)
    }

    fn nnf_signed(&self, neg: bool) -> Rpltl {
        match self {
            Rpltl::True => {
                if neg { Rpltl::False } else { Rpltl::True }
            }
            Rpltl::False => {
                if neg { Rpltl::True } else { Rpltl::False }
            }
            Rpltl::Atom(q) => {
                if neg {
                    Rpltl::Atom(Qf::not(q.clone()).canon())
                } else {
                    Rpltl::Atom(q.canon())
                }
            }
            Rpltl::Not(f) => f.nnf_signed(!neg),
            Rpltl::And(fs) => {
                let kids = fs.iter().map(|f| f.nnf_signed(neg)).collect();
                if neg { Rpltl::Or(kids) } else { Rpltl::And(kids) }
            }
            Rpltl::Or(fs) => {
                let kids = fs.iter().map(|f| f.nnf_signed(neg)).collect();
                if neg { Rpltl::And(kids) } else { Rpltl::Or(kids) }
            }
            Rpltl::Implies(a, b) => {
                if neg {
                    Rpltl::And(vec![a.nnf_signed(false), b.nnf_signed(true)])
                } else {
                    Rpltl::Or(vec![a.nnf_signed(true), b.nnf_signed(false)])
                }
            }
            Rpltl::Next(f) => Rpltl::next(f.nnf_signed(neg)),
            Rpltl::Until(a, b) => {
                if neg {
                    // !(a U b) = (!b) W (!a && !b)
                    let na = a.nnf_signed(true);
                    let nb = b.nnf_signed(true);
                    Rpltl::weak_until(nb.clone(), Rpltl::And(vec![na, nb]))
                } else {
                    Rpltl::until(a.nnf_signed(false), b.nnf_signed(false))
                }
            }
            Rpltl::WeakUntil(a, b) => {
                if neg {
                    // !(a W b) = (!b) U (!a && !b)
                    let na = a.nnf_signed(true);
                    let nb = b.nnf_signed(true);
                    Rpltl::until(nb.clone(), Rpltl::And(vec![na, nb]))
                } else {
                    Rpltl::weak_until(a.nnf_signed(false), b.nnf_signed(false))
                }
            }
            Rpltl::Finally(f) => {
                if neg {
                    Rpltl::globally(f.nnf_signed(true))
                } else {
                    Rpltl::finally(f.nnf_signed(false))
                }
            }
            Rpltl::Globally(f) => {
                if neg {
                    Rpltl::finally(f.nnf_signed(true))
                } else {
                    Rpltl::globally(f.nnf_signed(false))
                }
            }
        }
    }

    /// A formula is syntactically safe when its negation normal form
    /// contains neither `U` nor `F`.
    pub fn is_syntactic_safety(&self) -> bool {
        fn scan(f: &Rpltl) -> bool {
            match f {
                Rpltl::Until(..) | Rpltl::Finally(..) => false,
                Rpltl::True | Rpltl::False | Rpltl::Atom(_) => true,
                Rpltl::Not(g) | Rpltl::Next(g) | Rpltl::Globally(g) => scan(g),
                Rpltl::And(gs) | Rpltl::Or(gs) => gs.iter().all(scan),
                Rpltl::Implies(a, b) | Rpltl::WeakUntil(a, b) => scan(a) && scan(b),
            }
        }
        scan(&self.nnf())
    }

    /// All atoms of the formula.
    pub fn atoms(&self) -> BTreeSet<Qf> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |q, _| {
            out.insert(q.clone());
        });
        out
    }

    /// Atoms occurring outside the scope of any `X` — exactly the atoms
    /// read by one expansion step.
    pub fn atoms_outside_next(&self) -> BTreeSet<Qf> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |q, under_next| {
            if !under_next {
                out.insert(q.clone());
            }
        });
        out
    }

    fn visit_atoms(&self, f: &mut impl FnMut(&Qf, bool)) {
        fn go(t: &Rpltl, under_next: bool, f: &mut impl FnMut(&Qf, bool)) {
            match t {
                Rpltl::True | Rpltl::False => {}
                Rpltl::Atom(q) => f(q, under_next),
                Rpltl::Not(g) | Rpltl::Globally(g) | Rpltl::Finally(g) => go(g, under_next, f),
                Rpltl::Next(g) => go(g, true, f),
                Rpltl::And(gs) | Rpltl::Or(gs) => {
                    for g in gs {
                        go(g, under_next, f);
                    }
                }
                Rpltl::Implies(a, b) | Rpltl::Until(a, b) | Rpltl::WeakUntil(a, b) => {
                    go(a, under_next, f);
                    go(b, under_next, f);
                }
            }
        }
        go(self, false, f);
    }

    /// Replaces every occurrence of `from` (compared on canonical forms)
    /// by `to`. The `non_nested` variant leaves occurrences under temporal
    /// operators untouched.
    pub fn replace(&self, from: &Rpltl, to: &Rpltl, non_nested: bool) -> Rpltl {
        if self == from {
            return to.clone();
        }
        match self {
            Rpltl::True | Rpltl::False | Rpltl::Atom(_) => self.clone(),
            Rpltl::Not(f) => Rpltl::not(f.replace(from, to, non_nested)),
            Rpltl::And(fs) => {
                Rpltl::And(fs.iter().map(|f| f.replace(from, to, non_nested)).collect())
            }
            Rpltl::Or(fs) => {
                Rpltl::Or(fs.iter().map(|f| f.replace(from, to, non_nested)).collect())
            }
            Rpltl::Implies(a, b) => Rpltl::implies(
                a.replace(from, to, non_nested),
                b.replace(from, to, non_nested),
            ),
            Rpltl::Next(f) | Rpltl::Finally(f) | Rpltl::Globally(f) => {
                let inner = if non_nested { (**f).clone() } else { f.replace(from, to, non_nested) };
                match self {
                    Rpltl::Next(_) => Rpltl::next(inner),
                    Rpltl::Finally(_) => Rpltl::finally(inner),
                    _ => Rpltl::globally(inner),
                }
            }
            Rpltl::Until(a, b) | Rpltl::WeakUntil(a, b) => {
                let (na, nb) = if non_nested {
                    ((**a).clone(), (**b).clone())
                } else {
                    (a.replace(from, to, non_nested), b.replace(from, to, non_nested))
                };
                match self {
                    Rpltl::Until(..) => Rpltl::until(na, nb),
                    _ => Rpltl::weak_until(na, nb),
                }
            }
        }
    }

    /// The inductive set of subformula combinations closed under one-step
    /// expansion. Derived operators are desugared first (`F φ = ⊤ U φ`,
    /// `G φ = ¬(⊤ U ¬φ)`, `φ W ψ = (φ U ψ) ∨ G φ`, with `∨`/`→` through
    /// `¬`/`∧`). Test-only: exponential on conjunctions by design.
    pub fn closure(&self) -> BTreeSet<Rpltl> {
        fn desugar(f: &Rpltl) -> Rpltl {
            match f {
                Rpltl::True | Rpltl::False | Rpltl::Atom(_) => f.clone(),
                Rpltl::Not(g) => Rpltl::not(desugar(g)),
                Rpltl::And(gs) => Rpltl::And(gs.iter().map(desugar).collect()),
                Rpltl::Or(gs) => Rpltl::not(Rpltl::And(
                    gs.iter().map(|g| Rpltl::not(desugar(g))).collect(),
                )),
                Rpltl::Implies(a, b) => {
                    Rpltl::not(Rpltl::And(vec![desugar(a), Rpltl::not(desugar(b))]))
                }
                Rpltl::Next(g) => Rpltl::next(desugar(g)),
                Rpltl::Until(a, b) => Rpltl::until(desugar(a), desugar(b)),
                Rpltl::Finally(g) => Rpltl::until(Rpltl::True, desugar(g)),
                Rpltl::Globally(g) => {
                    Rpltl::not(Rpltl::until(Rpltl::True, Rpltl::not(desugar(g))))
                }
                Rpltl::WeakUntil(a, b) => {
                    let a = desugar(a);
                    let b = desugar(b);
                    let g_a = Rpltl::not(Rpltl::until(Rpltl::True, Rpltl::not(a.clone())));
                    // (a U b) ∨ G a  as  ¬(¬(a U b) ∧ ¬G a)
                    Rpltl::not(Rpltl::And(vec![
                        Rpltl::not(Rpltl::until(a, b)),
                        Rpltl::not(g_a),
                    ]))
                }
            }
        }
        fn go(f: &Rpltl) -> BTreeSet<Rpltl> {
            match f {
                Rpltl::True | Rpltl::False | Rpltl::Atom(_) => {
                    [f.clone(), Rpltl::True, Rpltl::False].into_iter().collect()
                }
                Rpltl::Not(g) => {
                    let inner = go(g);
                    let mut out = inner.clone();
                    out.extend(inner.into_iter().map(Rpltl::not));
                    out
                }
                Rpltl::Next(g) => {
                    let inner = go(g);
                    let mut out = inner.clone();
                    out.extend(inner.into_iter().map(Rpltl::next));
                    out
                }
                Rpltl::And(gs) => {
                    let parts: Vec<BTreeSet<Rpltl>> = gs.iter().map(go).collect();
                    let mut out: BTreeSet<Rpltl> = parts.iter().flatten().cloned().collect();
                    // Cross products, folded left over the conjunction.
                    let mut combos: BTreeSet<Vec<Rpltl>> =
                        parts[0].iter().map(|p| vec![p.clone()]).collect();
                    for part in &parts[1..] {
                        let mut next = BTreeSet::new();
                        for combo in &combos {
                            for p in part {
                                let mut c = combo.clone();
                                c.push(p.clone());
                                next.insert(c);
                            }
                        }
                        combos = next;
                    }
                    out.extend(combos.into_iter().map(Rpltl::And));
                    out
                }
                Rpltl::Until(a, b) => {
                    let pa = go(a);
                    let pb = go(b);
                    let mut out: BTreeSet<Rpltl> = pa.union(&pb).cloned().collect();
                    for x in &pa {
                        for y in &pb {
                            out.insert(Rpltl::until(x.clone(), y.clone()));
                        }
                    }
                    out
                }
                _ => unreachable!("closure operates on desugared formulas"),
            }
        }
        go(&desugar(self))
    }
}

/// Lifts boolean structure of a quantifier-free formula into the temporal
/// AST, so that canonical temporal formulas contain only atomic `Atom`
/// nodes and substitutions see uniform structure.
fn lift_qf(q: &Qf) -> Rpltl {
    match q {
        Qf::True => Rpltl::True,
        Qf::False => Rpltl::False,
        Qf::Atom(_) => Rpltl::Atom(q.clone()),
        Qf::Not(f) => match lift_qf(f) {
            Rpltl::Atom(a) => Rpltl::Atom(Qf::not(a).canon()),
            other => Rpltl::not(other),
        },
        Qf::And(fs) => Rpltl::And(fs.iter().map(lift_qf).collect()).canon(),
        Qf::Or(fs) => Rpltl::Or(fs.iter().map(lift_qf).collect()).canon(),
    }
}

pub(crate) fn feed_rpltl(f: &Rpltl, h: &mut Fnv) {
    match f {
        Rpltl::True => h.write(&[b'T']),
        Rpltl::False => h.write(&[b'F']),
        Rpltl::Atom(q) => {
            h.write(&[b'a']);
            feed_qf(q, h);
        }
        Rpltl::Not(g) => {
            h.write(&[b'!']);
            feed_rpltl(g, h);
        }
        Rpltl::And(gs) => {
            h.write(&[b'&']);
            h.write_i64(gs.len() as i64);
            for g in gs {
                feed_rpltl(g, h);
            }
        }
        Rpltl::Or(gs) => {
            h.write(&[b'|']);
            h.write_i64(gs.len() as i64);
            for g in gs {
                feed_rpltl(g, h);
            }
        }
        Rpltl::Implies(a, b) => {
            h.write(&[b'>']);
            feed_rpltl(a, h);
            feed_rpltl(b, h);
        }
        Rpltl::Next(g) => {
            h.write(&[b'X']);
            feed_rpltl(g, h);
        }
        Rpltl::Until(a, b) => {
            h.write(&[b'U']);
            feed_rpltl(a, h);
            feed_rpltl(b, h);
        }
        Rpltl::WeakUntil(a, b) => {
            h.write(&[b'W']);
            feed_rpltl(a, h);
            feed_rpltl(b, h);
        }
        Rpltl::Finally(g) => {
            h.write(&[b'f']);
            feed_rpltl(g, h);
        }
        Rpltl::Globally(g) => {
            h.write(&[b'G']);
            feed_rpltl(g, h);
        }
    }
}

impl fmt::Display for Rpltl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_rpltl(self, f, 0)
    }
}

// Precedence: 0 = ->, 1 = ||, 2 = &&, 3 = U/W, 4 = unary.
fn fmt_rpltl(t: &Rpltl, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
    let paren = |needed: bool, f: &mut fmt::Formatter<'_>, inner: &dyn Fn(&mut fmt::Formatter<'_>) -> fmt::Result| {
        if needed {
            write!(f, "(")?;
            inner(f)?;
            write!(f, ")")
        } else {
            inner(f)
        }
    };
    match t {
        Rpltl::True => write!(f, "true"),
        Rpltl::False => write!(f, "false"),
        Rpltl::Atom(q) => write!(f, "{q}"),
        Rpltl::Not(g) => {
            write!(f, "!")?;
            fmt_rpltl(g, f, 4)
        }
        Rpltl::And(gs) => paren(prec > 2, f, &|f| {
            for (i, g) in gs.iter().enumerate() {
                if i > 0 {
                    write!(f, " && ")?;
                }
                fmt_rpltl(g, f, 3)?;
            }
            Ok(())
        }),
        Rpltl::Or(gs) => paren(prec > 1, f, &|f| {
            for (i, g) in gs.iter().enumerate() {
                if i > 0 {
                    write!(f, " || ")?;
                }
                fmt_rpltl(g, f, 2)?;
            }
            Ok(())
        }),
        Rpltl::Implies(a, b) => paren(prec > 0, f, &|f| {
            fmt_rpltl(a, f, 1)?;
            write!(f, " -> ")?;
            fmt_rpltl(b, f, 0)
        }),
        Rpltl::Next(g) => {
            write!(f, "X ")?;
            fmt_rpltl(g, f, 4)
        }
        Rpltl::Finally(g) => {
            write!(f, "F ")?;
            fmt_rpltl(g, f, 4)
        }
        Rpltl::Globally(g) => {
            write!(f, "G ")?;
            fmt_rpltl(g, f, 4)
        }
        Rpltl::Until(a, b) => paren(prec > 3, f, &|f| {
            fmt_rpltl(a, f, 4)?;
            write!(f, " U ")?;
            fmt_rpltl(b, f, 3)
        }),
        Rpltl::WeakUntil(a, b) => paren(prec > 3, f, &|f| {
            fmt_rpltl(a, f, 4)?;
            write!(f, " W ")?;
            fmt_rpltl(b, f, 3)
        }),
    }
}

/// A parsed specification: declarations, assumptions and guarantees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Spec {
    pub decls: Vec<VarDecl>,
    pub assumptions: Vec<Rpltl>,
    pub guarantees: Vec<Rpltl>,
}

impl Spec {
    pub fn input_names(&self) -> BTreeSet<String> {
        self.decls
            .iter()
            .filter(|d| d.kind == VarKind::Input)
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn program_names(&self) -> BTreeSet<String> {
        self.decls
            .iter()
            .filter(|d| d.kind == VarKind::Program)
            .map(|d| d.name.clone())
            .collect()
    }

    /// The specification as one formula: assumptions imply guarantees.
    pub fn formula(&self) -> Rpltl {
        let a = Rpltl::conj(self.assumptions.iter().cloned());
        let g = Rpltl::conj(self.guarantees.iter().cloned());
        if self.assumptions.is_empty() {
            g
        } else {
            Rpltl::implies(a, g)
        }
    }
}

/// Parse error with source position.
#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at {line}:{col}: {msg}")]
pub struct ParseError {
    pub msg: String,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Prime, // trailing ' after an identifier
    Int(i64),
    LParen,
    RParen,
    Semi,
    Colon,
    Comma,
    Plus,
    Minus,
    Star,
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Ne,
    Bang,
    AndAnd,
    OrOr,
    Arrow,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
    inputs: BTreeSet<String>,
    programs: BTreeSet<String>,
    /// When false, undeclared variables are accepted as program variables
    /// (used for parsing formulas outside a specification context).
    strict: bool,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.pos];
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn tokenize(mut self) -> Result<Vec<(Tok, usize, usize)>, ParseError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let (line, col) = (self.line, self.col);
            let c = self.src[self.pos];
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.bump();
                }
                b'/' if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                        self.bump();
                    }
                }
                b'(' => {
                    self.bump();
                    out.push((Tok::LParen, line, col));
                }
                b')' => {
                    self.bump();
                    out.push((Tok::RParen, line, col));
                }
                b';' => {
                    self.bump();
                    out.push((Tok::Semi, line, col));
                }
                b':' => {
                    self.bump();
                    out.push((Tok::Colon, line, col));
                }
                b',' => {
                    self.bump();
                    out.push((Tok::Comma, line, col));
                }
                b'+' => {
                    self.bump();
                    out.push((Tok::Plus, line, col));
                }
                b'*' => {
                    self.bump();
                    out.push((Tok::Star, line, col));
                }
                b'\'' => {
                    self.bump();
                    out.push((Tok::Prime, line, col));
                }
                b'-' => {
                    self.bump();
                    if self.pos < self.src.len() && self.src[self.pos] == b'>' {
                        self.bump();
                        out.push((Tok::Arrow, line, col));
                    } else {
                        out.push((Tok::Minus, line, col));
                    }
                }
                b'<' => {
                    self.bump();
                    if self.pos < self.src.len() && self.src[self.pos] == b'=' {
                        self.bump();
                        out.push((Tok::Le, line, col));
                    } else {
                        out.push((Tok::Lt, line, col));
                    }
                }
                b'>' => {
                    self.bump();
                    if self.pos < self.src.len() && self.src[self.pos] == b'=' {
                        self.bump();
                        out.push((Tok::Ge, line, col));
                    } else {
                        out.push((Tok::Gt, line, col));
                    }
                }
                b'=' => {
                    self.bump();
                    out.push((Tok::Eq, line, col));
                }
                b'!' => {
                    self.bump();
                    if self.pos < self.src.len() && self.src[self.pos] == b'=' {
                        self.bump();
                        out.push((Tok::Ne, line, col));
                    } else {
                        out.push((Tok::Bang, line, col));
                    }
                }
                b'&' => {
                    self.bump();
                    if self.pos < self.src.len() && self.src[self.pos] == b'&' {
                        self.bump();
                        out.push((Tok::AndAnd, line, col));
                    } else {
                        return Err(ParseError { msg: "expected '&&'".into(), line, col });
                    }
                }
                b'|' => {
                    self.bump();
                    if self.pos < self.src.len() && self.src[self.pos] == b'|' {
                        self.bump();
                        out.push((Tok::OrOr, line, col));
                    } else {
                        return Err(ParseError { msg: "expected '||'".into(), line, col });
                    }
                }
                b'0'..=b'9' => {
                    let start = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.bump();
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    let n = text.parse::<i64>().map_err(|_| ParseError {
                        msg: format!("integer literal '{text}' out of range"),
                        line,
                        col,
                    })?;
                    out.push((Tok::Int(n), line, col));
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let start = self.pos;
                    while self.pos < self.src.len()
                        && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                    {
                        self.bump();
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    out.push((Tok::Ident(text.to_string()), line, col));
                }
                other => {
                    return Err(ParseError {
                        msg: format!("unexpected character '{}'", other as char),
                        line,
                        col,
                    });
                }
            }
        }
        out.push((Tok::Eof, self.line, self.col));
        Ok(out)
    }
}

const KEYWORDS: &[&str] =
    &["input", "var", "assume", "guarantee", "int", "true", "false", "G", "F", "X", "U", "W", "divides"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn here(&self) -> (usize, usize) {
        (self.toks[self.pos].1, self.toks[self.pos].2)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError { msg: msg.into(), line, col }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn parse_spec(&mut self) -> Result<Spec, ParseError> {
        let mut decls: Vec<VarDecl> = Vec::new();
        let mut assumptions = Vec::new();
        let mut guarantees = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "input" || kw == "var" => {
                    self.bump();
                    let name = self.ident()?;
                    if KEYWORDS.contains(&name.as_str()) {
                        return Err(self.err(format!("'{name}' is a reserved word")));
                    }
                    if self.inputs.contains(&name) || self.programs.contains(&name) {
                        return Err(self.err(format!("duplicate declaration of '{name}'")));
                    }
                    self.expect(Tok::Colon, "':'")?;
                    let sort = self.ident()?;
                    if sort != "int" {
                        return Err(self.err(format!("unknown sort '{sort}' (only 'int' exists)")));
                    }
                    self.expect(Tok::Semi, "';'")?;
                    let kind = if kw == "input" { VarKind::Input } else { VarKind::Program };
                    if kind == VarKind::Input {
                        self.inputs.insert(name.clone());
                    } else {
                        self.programs.insert(name.clone());
                    }
                    decls.push(VarDecl { name, kind });
                }
                Tok::Ident(kw) if kw == "assume" || kw == "guarantee" => {
                    self.bump();
                    let f = self.formula()?;
                    self.expect(Tok::Semi, "';'")?;
                    if kw == "assume" {
                        assumptions.push(f.canon());
                    } else {
                        guarantees.push(f.canon());
                    }
                }
                _ => return Err(self.err("expected 'input', 'var', 'assume' or 'guarantee'")),
            }
        }
        if guarantees.is_empty() {
            guarantees.push(Rpltl::True);
        }
        Ok(Spec { decls, assumptions, guarantees })
    }

    // Precedence climbing: -> (right) < || < && < U/W (right) < unary.
    fn formula(&mut self) -> Result<Rpltl, ParseError> {
        let lhs = self.or_formula()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.formula()?;
            Ok(Rpltl::implies(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn or_formula(&mut self) -> Result<Rpltl, ParseError> {
        let mut parts = vec![self.and_formula()?];
        while *self.peek() == Tok::OrOr {
            self.bump();
            parts.push(self.and_formula()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Rpltl::Or(parts) })
    }

    fn and_formula(&mut self) -> Result<Rpltl, ParseError> {
        let mut parts = vec![self.until_formula()?];
        while *self.peek() == Tok::AndAnd {
            self.bump();
            parts.push(self.until_formula()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Rpltl::And(parts) })
    }

    fn until_formula(&mut self) -> Result<Rpltl, ParseError> {
        let lhs = self.unary_formula()?;
        match self.peek().clone() {
            Tok::Ident(s) if s == "U" => {
                self.bump();
                let rhs = self.until_formula()?;
                Ok(Rpltl::until(lhs, rhs))
            }
            Tok::Ident(s) if s == "W" => {
                self.bump();
                let rhs = self.until_formula()?;
                Ok(Rpltl::weak_until(lhs, rhs))
            }
            _ => Ok(lhs),
        }
    }

    fn unary_formula(&mut self) -> Result<Rpltl, ParseError> {
        match self.peek().clone() {
            Tok::Bang => {
                self.bump();
                Ok(Rpltl::not(self.unary_formula()?))
            }
            Tok::Ident(s) if s == "G" => {
                self.bump();
                Ok(Rpltl::globally(self.unary_formula()?))
            }
            Tok::Ident(s) if s == "F" => {
                self.bump();
                Ok(Rpltl::finally(self.unary_formula()?))
            }
            Tok::Ident(s) if s == "X" => {
                self.bump();
                Ok(Rpltl::next(self.unary_formula()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Rpltl, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "true" => {
                self.bump();
                Ok(Rpltl::True)
            }
            Tok::Ident(s) if s == "false" => {
                self.bump();
                Ok(Rpltl::False)
            }
            Tok::Ident(s) if s == "divides" => {
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let m = match self.bump() {
                    Tok::Int(n) => n,
                    _ => return Err(self.err("expected integer modulus")),
                };
                self.expect(Tok::Comma, "','")?;
                let t = self.term()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Rpltl::Atom(Qf::Atom(Atom::Dvd { modulus: m, term: t, negated: false })))
            }
            Tok::LParen => {
                self.bump();
                let f = self.formula()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Tok::Ident(_) | Tok::Int(_) | Tok::Minus => self.comparison(),
            _ => Err(self.err("expected formula")),
        }
    }

    fn comparison(&mut self) -> Result<Rpltl, ParseError> {
        let lhs = self.term()?;
        let rel = match self.bump() {
            Tok::Lt => Rel::Lt,
            Tok::Le => Rel::Le,
            Tok::Eq => Rel::Eq,
            Tok::Ge => Rel::Ge,
            Tok::Gt => Rel::Gt,
            Tok::Ne => Rel::Ne,
            _ => {
                self.pos -= 1;
                return Err(self.err("expected comparison operator"));
            }
        };
        let rhs = self.term()?;
        Ok(Rpltl::Atom(Qf::atom(lhs.sub(&rhs), rel)))
    }

    fn term(&mut self) -> Result<LinTerm, ParseError> {
        let mut acc = self.product(1)?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    acc = acc.add(&self.product(1)?);
                }
                Tok::Minus => {
                    self.bump();
                    acc = acc.add(&self.product(-1)?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn product(&mut self, sign: i64) -> Result<LinTerm, ParseError> {
        let mut sign = sign;
        while *self.peek() == Tok::Minus {
            self.bump();
            sign = -sign;
        }
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                if *self.peek() == Tok::Star {
                    self.bump();
                    let v = self.variable()?;
                    Ok(LinTerm::var(v).scale(sign * n))
                } else {
                    Ok(LinTerm::constant(sign * n))
                }
            }
            Tok::Ident(_) => {
                let v = self.variable()?;
                if *self.peek() == Tok::Star {
                    self.bump();
                    match self.bump() {
                        Tok::Int(n) => Ok(LinTerm::var(v).scale(sign * n)),
                        _ => Err(self.err("nonlinear term: expected integer after '*'")),
                    }
                } else {
                    Ok(LinTerm::var(v).scale(sign))
                }
            }
            _ => Err(self.err("expected term")),
        }
    }

    fn variable(&mut self) -> Result<Var, ParseError> {
        let name = self.ident()?;
        if KEYWORDS.contains(&name.as_str()) {
            self.pos -= 1;
            return Err(self.err(format!("'{name}' is a reserved word")));
        }
        let primed = if *self.peek() == Tok::Prime {
            self.bump();
            true
        } else {
            false
        };
        if self.strict {
            if self.inputs.contains(&name) {
                if primed {
                    self.pos -= 1;
                    return Err(self.err(format!("input '{name}' cannot be primed")));
                }
            } else if !self.programs.contains(&name) {
                self.pos -= 1;
                return Err(self.err(format!("undeclared variable '{name}'")));
            }
        }
        Ok(Var { name, primed })
    }
}

/// Parses a specification file.
pub fn parse_spec(text: &str) -> Result<Spec, ParseError> {
    let toks = Lexer::new(text).tokenize()?;
    let mut p = Parser {
        toks,
        pos: 0,
        inputs: BTreeSet::new(),
        programs: BTreeSet::new(),
        strict: true,
    };
    p.parse_spec()
}

/// Parses a standalone formula; undeclared variables are accepted as
/// program variables (used for testing and JSON re-import).
pub fn parse_formula(text: &str) -> Result<Rpltl, ParseError> {
    let toks = Lexer::new(text).tokenize()?;
    let mut p = Parser {
        toks,
        pos: 0,
        inputs: BTreeSet::new(),
        programs: BTreeSet::new(),
        strict: false,
    };
    let f = p.formula()?;
    if *p.peek() != Tok::Eof {
        return Err(p.err("trailing input after formula"));
    }
    Ok(f.canon())
}

/// Result of Booleanization: a propositional LTL string and the atom map.
#[derive(Clone, Debug)]
pub struct Booleanization {
    /// Proposition `p<i>` denotes `props[i]`.
    pub props: Vec<Qf>,
    pub text: String,
}

impl Booleanization {
    pub fn index_of(&self, atom: &Qf) -> Option<usize> {
        let c = atom.canon();
        self.props.iter().position(|p| *p == c)
    }
}

/// Replaces each distinct canonical atom by a proposition `p0, p1, ...`
/// in first-traversal order and renders the propositional formula.
pub fn booleanize(f: &Rpltl) -> Booleanization {
    let mut props: Vec<Qf> = Vec::new();
    let mut text = String::new();
    render_bool(&f.canon(), &mut props, &mut text, 0);
    Booleanization { props, text }
}

fn prop_id(q: &Qf, props: &mut Vec<Qf>) -> usize {
    let c = q.canon();
    if let Some(i) = props.iter().position(|p| *p == c) {
        i
    } else {
        props.push(c);
        props.len() - 1
    }
}

fn render_bool(f: &Rpltl, props: &mut Vec<Qf>, out: &mut String, prec: u8) {
    match f {
        Rpltl::True => out.push_str("true"),
        Rpltl::False => out.push_str("false"),
        Rpltl::Atom(q) => {
            let i = prop_id(q, props);
            out.push_str(&format!("p{i}"));
        }
        Rpltl::Not(g) => {
            out.push('!');
            render_bool(g, props, out, 4);
        }
        Rpltl::And(gs) => {
            let paren = prec > 2;
            if paren {
                out.push('(');
            }
            for (i, g) in gs.iter().enumerate() {
                if i > 0 {
                    out.push_str(" & ");
                }
                render_bool(g, props, out, 3);
            }
            if paren {
                out.push(')');
            }
        }
        Rpltl::Or(gs) => {
            let paren = prec > 1;
            if paren {
                out.push('(');
            }
            for (i, g) in gs.iter().enumerate() {
                if i > 0 {
                    out.push_str(" | ");
                }
                render_bool(g, props, out, 2);
            }
            if paren {
                out.push(')');
            }
        }
        Rpltl::Implies(a, b) => {
            let paren = prec > 0;
            if paren {
                out.push('(');
            }
            render_bool(a, props, out, 1);
            out.push_str(" -> ");
            render_bool(b, props, out, 0);
            if paren {
                out.push(')');
            }
        }
        Rpltl::Next(g) => {
            out.push_str("X ");
            render_bool(g, props, out, 4);
        }
        Rpltl::Finally(g) => {
            out.push_str("F ");
            render_bool(g, props, out, 4);
        }
        Rpltl::Globally(g) => {
            out.push_str("G ");
            render_bool(g, props, out, 4);
        }
        Rpltl::Until(a, b) => {
            let paren = prec > 3;
            if paren {
                out.push('(');
            }
            render_bool(a, props, out, 4);
            out.push_str(" U ");
            render_bool(b, props, out, 3);
            if paren {
                out.push(')');
            }
        }
        Rpltl::WeakUntil(a, b) => {
            let paren = prec > 3;
            if paren {
                out.push('(');
            }
            render_bool(a, props, out, 4);
            out.push_str(" W ");
            render_bool(b, props, out, 3);
            if paren {
                out.push(')');
            }
        }
    }
}

/// An ultimately periodic infinite word `stem · loop^ω` of valuations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lasso {
    pub stem: Vec<Valuation>,
    /// Non-empty.
    pub looping: Vec<Valuation>,
}

impl Lasso {
    pub fn new(stem: Vec<Valuation>, looping: Vec<Valuation>) -> Lasso {
        assert!(!looping.is_empty(), "lasso loop must be non-empty");
        Lasso { stem, looping }
    }

    pub fn len(&self) -> usize {
        self.stem.len() + self.looping.len()
    }

    pub fn valuation_at(&self, i: usize) -> &Valuation {
        if i < self.stem.len() {
            &self.stem[i]
        } else {
            &self.looping[(i - self.stem.len()) % self.looping.len()]
        }
    }

    /// Index of the position after `i` within the `stem.len()+loop.len()`
    /// representative window.
    fn next_pos(&self, i: usize) -> usize {
        if i + 1 < self.len() {
            i + 1
        } else {
            self.stem.len()
        }
    }

    /// The valuation pair at step `i`: current values plus primed values of
    /// the successor position.
    pub fn step_valuation(&self, i: usize) -> Valuation {
        let mut v = self.valuation_at(i).clone();
        let next = self.valuation_at(i + 1);
        for (var, val) in next {
            if !var.primed {
                v.insert(var.prime(), *val);
            }
        }
        v
    }

    /// The lasso with the first `k` positions dropped.
    pub fn shift(&self, k: usize) -> Lasso {
        if k <= self.stem.len() {
            Lasso { stem: self.stem[k..].to_vec(), looping: self.looping.clone() }
        } else {
            let offset = (k - self.stem.len()) % self.looping.len();
            let mut rotated = self.looping[offset..].to_vec();
            rotated.extend_from_slice(&self.looping[..offset]);
            Lasso { stem: Vec::new(), looping: rotated }
        }
    }
}

/// Exhaustively enumerates lassos over the named variables: every
/// valuation sequence with entries in `[-radius, radius]`, stem length
/// `0..=stem_max` and loop length `1..=loop_max`. The count grows as
/// `(2r+1)^(vars * positions)`; keep the parameters tiny.
pub fn enumerate_lassos(
    names: &[String],
    radius: i64,
    stem_max: usize,
    loop_max: usize,
) -> Vec<Lasso> {
    let domain: Vec<i64> = (-radius..=radius).collect();
    let mut valuations: Vec<Valuation> = vec![Valuation::new()];
    for n in names {
        let mut next = Vec::new();
        for v in &valuations {
            for &c in &domain {
                let mut v2 = v.clone();
                v2.insert(Var::new(n.clone()), c);
                next.push(v2);
            }
        }
        valuations = next;
    }
    let mut sequences: Vec<Vec<Valuation>> = vec![Vec::new()];
    for _ in 0..stem_max + loop_max {
        let mut next: Vec<Vec<Valuation>> = sequences.clone();
        for s in &sequences {
            if s.len() < stem_max + loop_max {
                for v in &valuations {
                    let mut s2 = s.clone();
                    s2.push(v.clone());
                    next.push(s2);
                }
            }
        }
        next.sort();
        next.dedup();
        sequences = next;
    }
    let mut out = Vec::new();
    for s in &sequences {
        for stem_len in 0..=stem_max.min(s.len().saturating_sub(1)) {
            let loop_len = s.len() - stem_len;
            if loop_len == 0 || loop_len > loop_max {
                continue;
            }
            out.push(Lasso::new(s[..stem_len].to_vec(), s[stem_len..].to_vec()));
        }
    }
    out
}

/// Evaluates a temporal formula on a lasso (exact semantics on the
/// ultimately periodic word — atoms at position `i` read positions `i` and
/// `i+1`, wrapping through the loop).
pub fn lasso_eval(f: &Rpltl, rho: &Lasso) -> bool {
    let mut tables: HashMap<Rpltl, Vec<bool>> = HashMap::new();
    truth_table(f, rho, &mut tables)[0]
}

fn truth_table<'a>(
    f: &Rpltl,
    rho: &Lasso,
    tables: &'a mut HashMap<Rpltl, Vec<bool>>,
) -> &'a Vec<bool> {
    if !tables.contains_key(f) {
        let n = rho.len();
        let table: Vec<bool> = match f {
            Rpltl::True => vec![true; n],
            Rpltl::False => vec![false; n],
            Rpltl::Atom(q) => (0..n).map(|i| q.eval(&rho.step_valuation(i))).collect(),
            Rpltl::Not(g) => {
                let t = truth_table(g, rho, tables).clone();
                t.into_iter().map(|b| !b).collect()
            }
            Rpltl::And(gs) => {
                let mut acc = vec![true; n];
                for g in gs {
                    let t = truth_table(g, rho, tables).clone();
                    for i in 0..n {
                        acc[i] &= t[i];
                    }
                }
                acc
            }
            Rpltl::Or(gs) => {
                let mut acc = vec![false; n];
                for g in gs {
                    let t = truth_table(g, rho, tables).clone();
                    for i in 0..n {
                        acc[i] |= t[i];
                    }
                }
                acc
            }
            Rpltl::Implies(a, b) => {
                let ta = truth_table(a, rho, tables).clone();
                let tb = truth_table(b, rho, tables).clone();
                (0..n).map(|i| !ta[i] || tb[i]).collect()
            }
            Rpltl::Next(g) => {
                let t = truth_table(g, rho, tables).clone();
                (0..n).map(|i| t[rho.next_pos(i)]).collect()
            }
            Rpltl::Finally(g) => {
                let t = truth_table(g, rho, tables).clone();
                fixpoint(rho, false, |acc, i, next| t[i] || acc[next])
            }
            Rpltl::Globally(g) => {
                let t = truth_table(g, rho, tables).clone();
                fixpoint(rho, true, |acc, i, next| t[i] && acc[next])
            }
            Rpltl::Until(a, b) => {
                let ta = truth_table(a, rho, tables).clone();
                let tb = truth_table(b, rho, tables).clone();
                fixpoint(rho, false, |acc, i, next| tb[i] || (ta[i] && acc[next]))
            }
            Rpltl::WeakUntil(a, b) => {
                let ta = truth_table(a, rho, tables).clone();
                let tb = truth_table(b, rho, tables).clone();
                fixpoint(rho, true, |acc, i, next| tb[i] || (ta[i] && acc[next]))
            }
        };
        tables.insert(f.clone(), table);
    }
    &tables[f]
}

/// Kleene iteration of a one-step temporal equation on the lasso window,
/// from the pessimistic (`init=false`, least fixpoint: U/F) or optimistic
/// (`init=true`, greatest fixpoint: W/G) starting point.
fn fixpoint(rho: &Lasso, init: bool, step: impl Fn(&[bool], usize, usize) -> bool) -> Vec<bool> {
    let n = rho.len();
    let mut acc = vec![init; n];
    loop {
        let mut changed = false;
        for i in (0..n).rev() {
            let v = step(&acc, i, rho.next_pos(i));
            if v != acc[i] {
                acc[i] = v;
                changed = true;
            }
        }
        if !changed {
            return acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val(pairs: &[(&str, i64)]) -> Valuation {
        pairs.iter().map(|(n, v)| (Var::new(*n), *v)).collect()
    }

    fn pf(s: &str) -> Rpltl {
        parse_formula(s).unwrap()
    }

    #[test]
    fn parse_spec_basic() {
        let spec = parse_spec(
            "input e : int;\nvar x : int;\nassume G (e > 0);\nguarantee G (e > 0 -> x' <= x + 2);\n",
        )
        .unwrap();
        assert_eq!(spec.assumptions.len(), 1);
        assert_eq!(spec.guarantees.len(), 1);
        let atoms = spec.guarantees[0].atoms();
        assert_eq!(atoms.len(), 2);
    }

    #[test]
    fn parse_rejects_primed_input() {
        let err = parse_spec("input i : int;\nassume G (i' > 0);\n").unwrap_err();
        assert!(err.msg.contains("cannot be primed"), "{err}");
        assert_eq!(err.line, 2);
    }

    #[test]
    fn parse_rejects_undeclared() {
        let err = parse_spec("var x : int;\nguarantee G (y = 0);\n").unwrap_err();
        assert!(err.msg.contains("undeclared"), "{err}");
    }

    #[test]
    fn empty_guarantees_default_true() {
        let spec = parse_spec("var x : int;\n").unwrap();
        assert_eq!(spec.guarantees, vec![Rpltl::True]);
    }

    #[test]
    fn display_reparses() {
        for s in [
            "G (e > 0 -> x' <= x + 2)",
            "(x = 0) U (x > 2 && y != 1)",
            "F (x = 1) || G (x >= 0) W (y < 0)",
            "X ! (x = 0) -> G F (x >= 10)",
            "divides(3, x + 1)",
        ] {
            let f = pf(s);
            let round = parse_formula(&f.to_string())
                .unwrap_or_else(|e| panic!("reparse of '{}' (from '{s}'): {e}", f));
            assert_eq!(round, f, "display of '{s}' changed the formula");
        }
    }

    #[test]
    fn nnf_examples() {
        // !G a = F !a
        let f = Rpltl::not(pf("G (x > 0)"));
        assert_eq!(f.nnf(), pf("F (x <= 0)").canon());
        // nnf(a) = a
        let a = pf("x = 0");
        assert_eq!(a.nnf(), a);
    }

    #[test]
    fn nnf_preserves_semantics_on_lassos() {
        let formulas = [
            "!((x = 0) U (x > 1))",
            "!((x = 0) W (x > 1))",
            "!(G (x > 0) -> F (x = 2))",
            "!X (x = 0 || x = 1)",
            "!(F (x' = x + 1))",
        ];
        let lassos = enumerate_lassos_1var("x", -2, 2, 2, 2);
        for s in &formulas {
            let f = pf(s);
            let g = f.nnf();
            for rho in &lassos {
                assert_eq!(
                    lasso_eval(&f, rho),
                    lasso_eval(&g, rho),
                    "nnf changed meaning of {s} on {rho:?}"
                );
            }
        }
    }

    pub(crate) fn enumerate_lassos_1var(
        name: &str,
        lo: i64,
        hi: i64,
        stem_max: usize,
        loop_max: usize,
    ) -> Vec<Lasso> {
        let vals: Vec<i64> = (lo..=hi).collect();
        let mut out = Vec::new();
        let seqs = |len: usize| -> Vec<Vec<Valuation>> {
            let mut acc: Vec<Vec<Valuation>> = vec![Vec::new()];
            for _ in 0..len {
                let mut next = Vec::new();
                for prefix in &acc {
                    for v in &vals {
                        let mut p = prefix.clone();
                        p.push(val(&[(name, *v)]));
                        next.push(p);
                    }
                }
                acc = next;
            }
            acc
        };
        for stem_len in 0..=stem_max {
            for loop_len in 1..=loop_max {
                for stem in seqs(stem_len) {
                    for looping in seqs(loop_len) {
                        out.push(Lasso::new(stem.clone(), looping));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn syntactic_safety_classification() {
        assert!(pf("G (x' = x + 1)").is_syntactic_safety());
        assert!(!pf("F (x >= 42)").is_syntactic_safety());
        assert!(pf("!F (x > 0)").is_syntactic_safety()); // nnf: G(x <= 0)
        assert!(pf("(x = 0) W (x = 1)").is_syntactic_safety());
        assert!(!pf("(x = 0) U (x = 1)").is_syntactic_safety());
        assert!(!pf("!((x = 0) W (x = 1))").is_syntactic_safety());
    }

    #[test]
    fn closure_atom_and_next() {
        let a = pf("x = 0");
        assert_eq!(
            a.closure(),
            [a.clone(), Rpltl::True, Rpltl::False].into_iter().collect::<BTreeSet<_>>()
        );
        let xa = Rpltl::next(a.clone());
        let c = xa.closure();
        for f in [
            xa.clone(),
            a.clone(),
            Rpltl::next(Rpltl::True),
            Rpltl::next(Rpltl::False),
            Rpltl::True,
            Rpltl::False,
        ] {
            assert!(c.contains(&f), "closure(X a) missing {f}");
        }
    }

    #[test]
    fn booleanize_dedups_canonical_atoms() {
        // 0 < x and x > 0 map to the same proposition.
        let f = Rpltl::And(vec![
            Rpltl::Atom(Qf::atom(LinTerm::var(Var::new("x")).neg(), Rel::Lt)), // 0 < x
            Rpltl::next(Rpltl::Atom(Qf::atom(LinTerm::var(Var::new("x")).neg(), Rel::Lt))),
            Rpltl::Atom(Qf::atom(
                LinTerm::var(Var::new("x")).neg().add(&LinTerm::constant(1)),
                Rel::Le,
            )), // x >= 1
        ]);
        let b = booleanize(&f);
        assert_eq!(b.props.len(), 1);
        assert!(b.text.contains("p0"), "{}", b.text);
        assert!(!b.text.contains("p1"), "{}", b.text);
    }

    #[test]
    fn booleanize_shapes() {
        let b = booleanize(&pf("G (e > 0 -> x' <= x + 2)"));
        assert_eq!(b.text, "G (p0 -> p1)");
        assert_eq!(b.props.len(), 2);
        assert_eq!(booleanize(&Rpltl::True).text, "true");
    }

    #[test]
    fn lasso_eval_loop_consistency() {
        // G(x' = x + 1) on the single-position loop x=0 is false.
        let f = pf("G (x' = x + 1)");
        let rho = Lasso::new(vec![], vec![val(&[("x", 0)])]);
        assert!(!lasso_eval(&f, &rho));
        // F(x = 1) with stem x=0, loop x=1 is true.
        let g = pf("F (x = 1)");
        let rho2 = Lasso::new(vec![val(&[("x", 0)])], vec![val(&[("x", 1)])]);
        assert!(lasso_eval(&g, &rho2));
    }

    #[test]
    fn lasso_eval_next_shifts() {
        let lassos = enumerate_lassos_1var("x", -1, 1, 2, 2);
        let f = pf("(x = 0) U (x' > x)");
        for rho in &lassos {
            assert_eq!(
                lasso_eval(&Rpltl::next(f.clone()), rho),
                lasso_eval(&f, &rho.shift(1)),
                "X-shift mismatch on {rho:?}"
            );
        }
    }

    #[test]
    fn lasso_eval_until_weakuntil_relation() {
        // a W b == (a U b) || G a on every lasso.
        let a = pf("x >= 0");
        let b = pf("x = 2");
        let w = Rpltl::weak_until(a.clone(), b.clone());
        let expanded = Rpltl::Or(vec![
            Rpltl::until(a.clone(), b.clone()),
            Rpltl::globally(a.clone()),
        ]);
        for rho in enumerate_lassos_1var("x", -2, 2, 2, 2) {
            assert_eq!(lasso_eval(&w, &rho), lasso_eval(&expanded, &rho), "{rho:?}");
        }
    }

    #[test]
    fn canon_rewrite_catalog() {
        assert_eq!(pf("(x = 0) W false"), pf("G (x = 0)"));
        assert_eq!(pf("G true"), Rpltl::True);
        assert_eq!(pf("F false"), Rpltl::False);
        assert_eq!(pf("G G (x = 0)"), pf("G (x = 0)"));
        assert_eq!(pf("F F (x = 0)"), pf("F (x = 0)"));
        assert_eq!(pf("true U (x = 0)"), pf("F (x = 0)"));
        assert_eq!(pf("x = 0 -> false"), pf("x != 0"));
    }

    #[test]
    fn canon_key_stable_across_equivalent_syntax() {
        assert_eq!(pf("x > 0 && y = 1").canon_key(), pf("y = 1 && 0 < x").canon_key());
        assert_ne!(pf("x > 0").canon_key(), pf("x >= 0").canon_key());
    }
}

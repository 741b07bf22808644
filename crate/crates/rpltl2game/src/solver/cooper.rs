//! Quantifier elimination for linear integer arithmetic (Cooper's method).
//!
//! Eliminating `exists x. phi` works on the canonical negation-normal form:
//! coefficients of `x` are unified to the lcm `m`, `m*x` is treated as a new
//! unit-coefficient variable constrained by `m | x`, and the quantifier is
//! replaced by a finite disjunction over the divisibility period and the
//! lower-bound terms of `x`.

use std::cell::Cell;
use std::collections::BTreeSet;

use crate::fol::{Atom, Fol, LinTerm, Qf, Rel, Var};

/// Work limit for a single top-level query; exceeded limits surface as
/// `Unknown` verdicts rather than unbounded blowup.
pub struct QeBudget {
    max_ops: u64,
    used: Cell<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetExceeded;

impl QeBudget {
    pub fn new(max_ops: u64) -> Self {
        QeBudget { max_ops, used: Cell::new(0) }
    }

    fn spend(&self, n: u64) -> Result<(), BudgetExceeded> {
        let used = self.used.get().saturating_add(n);
        self.used.set(used);
        if used > self.max_ops {
            Err(BudgetExceeded)
        } else {
            Ok(())
        }
    }
}

fn lcm(a: i64, b: i64) -> i64 {
    if a == 0 || b == 0 {
        return a.abs().max(b.abs());
    }
    (a / gcd(a, b) * b).abs()
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

/// Eliminates all quantifiers, returning an equivalent quantifier-free
/// formula over the free variables.
pub fn qe(f: &Fol, budget: &QeBudget) -> Result<Qf, BudgetExceeded> {
    match f {
        Fol::Qf(q) => Ok(q.canon()),
        Fol::Not(g) => Ok(Qf::not(qe(g, budget)?).canon()),
        Fol::And(gs) => {
            let mut out = Vec::with_capacity(gs.len());
            for g in gs {
                let q = qe(g, budget)?;
                if q == Qf::False {
                    return Ok(Qf::False);
                }
                out.push(q);
            }
            Ok(Qf::And(out).canon())
        }
        Fol::Or(gs) => {
            let mut out = Vec::with_capacity(gs.len());
            for g in gs {
                let q = qe(g, budget)?;
                if q == Qf::True {
                    return Ok(Qf::True);
                }
                out.push(q);
            }
            Ok(Qf::Or(out).canon())
        }
        Fol::Exists(vs, g) => {
            let mut q = qe(g, budget)?;
            for v in vs {
                q = eliminate_exists(v, &q, budget)?;
            }
            Ok(q)
        }
        Fol::Forall(vs, g) => {
            let mut q = Qf::not(qe(g, budget)?).canon();
            for v in vs {
                q = eliminate_exists(v, &q, budget)?;
            }
            Ok(Qf::not(q).canon())
        }
    }
}

/// Decides satisfiability of a sentence-after-closure: all free variables
/// are closed existentially, then eliminated.
pub fn check_sat(f: &Fol, budget: &QeBudget) -> Result<bool, BudgetExceeded> {
    let free: Vec<Var> = f.free_vars().into_iter().collect();
    let closed = if free.is_empty() {
        f.clone()
    } else {
        Fol::Exists(free, Box::new(f.clone()))
    };
    match qe(&closed, budget)? {
        Qf::True => Ok(true),
        Qf::False => Ok(false),
        other => unreachable!("ground formula did not fold to a constant: {other}"),
    }
}

/// Eliminates a single existential quantifier from a canonical formula.
pub fn eliminate_exists(v: &Var, q: &Qf, budget: &QeBudget) -> Result<Qf, BudgetExceeded> {
    let q = q.canon();
    if !q.vars().contains(v) {
        return Ok(q);
    }
    budget.spend(formula_size(&q) as u64)?;

    // Unify the coefficient of `v` to +-1 (conceptually substituting
    // y = m*x and conjoining m | y).
    let mut m: i64 = 1;
    collect_coeff_lcm(&q, v, &mut m);
    let mut unified = scale_var_to_unit(&q, v, m);
    if m > 1 {
        unified = Qf::And(vec![
            unified,
            Qf::Atom(Atom::Dvd { modulus: m, term: LinTerm::var(v.clone()), negated: false }),
        ]);
    }
    let unified = unified.canon();

    // Period of the divisibility constraints and lower-bound terms.
    let mut period: i64 = 1;
    collect_dvd_lcm(&unified, v, &mut period);
    let mut lower_bounds: BTreeSet<LinTerm> = BTreeSet::new();
    collect_lower_bounds(&unified, v, &mut lower_bounds);

    budget.spend((period as u64).saturating_mul((1 + lower_bounds.len() as u64) * formula_size(&unified) as u64))?;

    let mut disjuncts: Vec<Qf> = Vec::new();
    for j in 1..=period {
        let d = minus_infinity(&unified, v, j).canon();
        if d == Qf::True {
            return Ok(Qf::True);
        }
        if d != Qf::False {
            disjuncts.push(d);
        }
    }
    for b in &lower_bounds {
        for j in 1..=period {
            let t = b.add(&LinTerm::constant(j));
            let d = substitute_unit(&unified, v, &t).canon();
            if d == Qf::True {
                return Ok(Qf::True);
            }
            if d != Qf::False {
                disjuncts.push(d);
            }
        }
    }
    Ok(Qf::Or(disjuncts).canon())
}

fn formula_size(q: &Qf) -> usize {
    match q {
        Qf::True | Qf::False | Qf::Atom(_) => 1,
        Qf::Not(f) => 1 + formula_size(f),
        Qf::And(fs) | Qf::Or(fs) => 1 + fs.iter().map(formula_size).sum::<usize>(),
    }
}

fn collect_coeff_lcm(q: &Qf, v: &Var, m: &mut i64) {
    match q {
        Qf::Atom(Atom::Cmp { term, .. }) | Qf::Atom(Atom::Dvd { term, .. }) => {
            let c = term.coeff(v);
            if c != 0 {
                *m = lcm(*m, c);
            }
        }
        Qf::Not(f) => collect_coeff_lcm(f, v, m),
        Qf::And(fs) | Qf::Or(fs) => {
            for f in fs {
                collect_coeff_lcm(f, v, m);
            }
        }
        _ => {}
    }
}

/// Rescales every atom containing `v` so that the coefficient of `v`
/// becomes +-1, interpreting `v` as `m * v_original` afterwards.
fn scale_var_to_unit(q: &Qf, v: &Var, m: i64) -> Qf {
    match q {
        Qf::True | Qf::False => q.clone(),
        Qf::Not(f) => Qf::not(scale_var_to_unit(f, v, m)),
        Qf::And(fs) => Qf::And(fs.iter().map(|f| scale_var_to_unit(f, v, m)).collect()),
        Qf::Or(fs) => Qf::Or(fs.iter().map(|f| scale_var_to_unit(f, v, m)).collect()),
        Qf::Atom(a) => {
            let (term, rebuild): (&LinTerm, Box<dyn Fn(LinTerm) -> Atom>) = match a {
                Atom::Cmp { term, rel } => {
                    let rel = *rel;
                    (term, Box::new(move |t| Atom::Cmp { term: t, rel }))
                }
                Atom::Dvd { modulus, term, negated } => {
                    let (modulus, negated) = (*modulus, *negated);
                    // The modulus is scaled below together with the term.
                    (term, Box::new(move |t| Atom::Dvd { modulus, term: t, negated }))
                }
            };
            let c = term.coeff(v);
            if c == 0 {
                return q.clone();
            }
            let k = m / c.abs();
            let mut scaled = term.scale(k);
            // k*c*x = sign(c) * m * x = sign(c) * y.
            scaled.coeffs.insert(v.clone(), c.signum());
            match a {
                Atom::Cmp { .. } => Qf::Atom(rebuild(scaled)),
                Atom::Dvd { modulus, negated, .. } => {
                    Qf::Atom(Atom::Dvd { modulus: modulus * k, term: scaled, negated: *negated })
                }
            }
        }
    }
}

fn collect_dvd_lcm(q: &Qf, v: &Var, period: &mut i64) {
    match q {
        Qf::Atom(Atom::Dvd { modulus, term, .. }) => {
            if term.coeff(v) != 0 {
                *period = lcm(*period, *modulus);
            }
        }
        Qf::Not(f) => collect_dvd_lcm(f, v, period),
        Qf::And(fs) | Qf::Or(fs) => {
            for f in fs {
                collect_dvd_lcm(f, v, period);
            }
        }
        _ => {}
    }
}

/// Lower-bound terms `b` such that solutions, if any, include some `b + j`
/// with `1 <= j <= period`: strict lower bounds, predecessors of equality
/// witnesses, and disequality holes.
fn collect_lower_bounds(q: &Qf, v: &Var, out: &mut BTreeSet<LinTerm>) {
    match q {
        Qf::Atom(Atom::Cmp { term, rel }) => {
            let s = term.coeff(v);
            if s == 0 {
                return;
            }
            debug_assert!(s == 1 || s == -1);
            let mut rest = term.clone();
            rest.coeffs.remove(v);
            match (rel, s) {
                // -v + r <= 0  <=>  v >= r: strict lower bound r - 1.
                (Rel::Le, -1) => {
                    out.insert(rest.add(&LinTerm::constant(-1)));
                }
                // s*v + r = 0  <=>  v = -s*r: lower bound -s*r - 1.
                (Rel::Eq, s) => {
                    out.insert(rest.scale(-s).add(&LinTerm::constant(-1)));
                }
                // s*v + r != 0: the hole itself is a bound.
                (Rel::Ne, s) => {
                    out.insert(rest.scale(-s));
                }
                _ => {}
            }
        }
        Qf::Not(f) => collect_lower_bounds(f, v, out),
        Qf::And(fs) | Qf::Or(fs) => {
            for f in fs {
                collect_lower_bounds(f, v, out);
            }
        }
        _ => {}
    }
}

/// The formula at `v -> -infinity`, with `v` replaced by the constant `j`
/// inside the (periodic) divisibility atoms.
fn minus_infinity(q: &Qf, v: &Var, j: i64) -> Qf {
    match q {
        Qf::True | Qf::False => q.clone(),
        Qf::Not(f) => Qf::not(minus_infinity(f, v, j)),
        Qf::And(fs) => Qf::And(fs.iter().map(|f| minus_infinity(f, v, j)).collect()),
        Qf::Or(fs) => Qf::Or(fs.iter().map(|f| minus_infinity(f, v, j)).collect()),
        Qf::Atom(Atom::Cmp { term, rel }) => {
            let s = term.coeff(v);
            if s == 0 {
                return q.clone();
            }
            match (rel, s) {
                (Rel::Le, 1) => Qf::True,   // v + r <= 0 holds near -infinity
                (Rel::Le, -1) => Qf::False, // v >= r fails near -infinity
                (Rel::Eq, _) => Qf::False,
                (Rel::Ne, _) => Qf::True,
                _ => unreachable!("non-canonical relation in QE"),
            }
        }
        Qf::Atom(Atom::Dvd { .. }) => substitute_unit(q, v, &LinTerm::constant(j)),
    }
}

/// Substitutes the term `t` for the unit-coefficient variable `v`.
fn substitute_unit(q: &Qf, v: &Var, t: &LinTerm) -> Qf {
    q.substitute(v, t)
}

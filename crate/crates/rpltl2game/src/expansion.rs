//! Predicate interning, three-valued letters, the one-step expansion
//! function on temporal formulas, letter enumeration, and predicate
//! propagation along transitions.

use std::collections::{BTreeMap, BTreeSet};

use crate::fol::{Qf, Valuation, Var};
use crate::ltl::Rpltl;
use crate::solver::{SmtVerdict, Solver};

/// Identifier of an interned predicate.
pub type PredId = usize;

/// One interned predicate: a canonical quantifier-free formula together
/// with its roles.
///
/// # Invariant
/// `qf` is the lexicographically smaller of the predicate and its negation
/// (both in canonical form), so each complement pair has one entry.
#[derive(Clone, Debug)]
pub struct PredEntry {
    pub qf: Qf,
    /// Appears as an atom of the specification formula.
    pub is_atom: bool,
    /// Eligible for propagation along transitions: mentions only unprimed
    /// program variables.
    pub is_prop: bool,
    /// Introduced by invariant or reachability generalization.
    pub is_gen: bool,
}

/// Interning table for the predicates a monitor construction works with.
#[derive(Clone, Debug, Default)]
pub struct PredicateTable {
    entries: Vec<PredEntry>,
    index: BTreeMap<Qf, PredId>,
    inputs: BTreeSet<String>,
}

impl PredicateTable {
    pub fn new(inputs: BTreeSet<String>) -> PredicateTable {
        PredicateTable { entries: Vec::new(), index: BTreeMap::new(), inputs }
    }

    /// Builds the table for a formula: every atom is interned, and the
    /// propagation candidates are the atoms over unprimed program
    /// variables plus, for every atom of the shape `x' = t` with `t` over
    /// unprimed variables, its unprimed copy `x = t`.
    pub fn for_formula(f: &Rpltl, inputs: &BTreeSet<String>) -> PredicateTable {
        let mut table = PredicateTable::new(inputs.clone());
        for atom in f.atoms() {
            let (id, _) = table.intern(&atom);
            table.entries[id].is_atom = true;
            if table.is_state_pred(&table.entries[id].qf.clone()) {
                table.entries[id].is_prop = true;
            }
            // x' = t with t unprimed also yields the state copy x = t.
            if let Qf::Atom(a) = &atom.canon() {
                if let crate::fol::Atom::Cmp { term, rel: crate::fol::Rel::Eq } = a {
                    let primed: Vec<Var> =
                        term.vars().filter(|v| v.primed).cloned().collect();
                    if primed.len() == 1 {
                        let rename: BTreeMap<Var, Var> =
                            [(primed[0].clone(), primed[0].unprime())].into_iter().collect();
                        let copy = Qf::Atom(crate::fol::Atom::Cmp {
                            term: term.rename(&rename),
                            rel: crate::fol::Rel::Eq,
                        });
                        if table.is_state_pred(&copy) {
                            let (cid, _) = table.intern(&copy);
                            table.entries[cid].is_prop = true;
                        }
                    }
                }
            }
        }
        table
    }

    /// True when the predicate mentions only unprimed program variables.
    fn is_state_pred(&self, q: &Qf) -> bool {
        q.vars().iter().all(|v| !v.primed && !self.inputs.contains(&v.name))
    }

    /// Interns a predicate, returning its id and the polarity of the query
    /// relative to the stored representative (`true` = same).
    pub fn intern(&mut self, q: &Qf) -> (PredId, bool) {
        let c = q.canon();
        let n = Qf::not(c.clone()).canon();
        let (rep, polarity) = if c <= n { (c, true) } else { (n, false) };
        if let Some(&id) = self.index.get(&rep) {
            return (id, polarity);
        }
        let id = self.entries.len();
        self.index.insert(rep.clone(), id);
        self.entries.push(PredEntry { qf: rep, is_atom: false, is_prop: false, is_gen: false });
        (id, polarity)
    }

    /// Looks a predicate up without inserting.
    pub fn lookup(&self, q: &Qf) -> Option<(PredId, bool)> {
        let c = q.canon();
        if let Some(&id) = self.index.get(&c) {
            return Some((id, true));
        }
        let n = Qf::not(c).canon();
        self.index.get(&n).map(|&id| (id, false))
    }

    /// Registers a generalization-derived state predicate.
    pub fn add_generated(&mut self, q: &Qf) -> PredId {
        let (id, _) = self.intern(q);
        self.entries[id].is_gen = true;
        if self.is_state_pred(&self.entries[id].qf.clone()) {
            self.entries[id].is_prop = true;
        }
        id
    }

    pub fn get(&self, id: PredId) -> &PredEntry {
        &self.entries[id]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prop_ids(&self) -> impl Iterator<Item = PredId> + '_ {
        (0..self.entries.len()).filter(|&i| self.entries[i].is_prop)
    }

    pub fn inputs(&self) -> &BTreeSet<String> {
        &self.inputs
    }
}

/// A three-valued letter: predicates asserted positively, negatively, or
/// left as don't-cares (absent from both sets).
///
/// # Invariant
/// `pos` and `neg` are disjoint. Polarities are relative to the stored
/// representative in the [`PredicateTable`].
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter {
    pub pos: BTreeSet<PredId>,
    pub neg: BTreeSet<PredId>,
}

impl Letter {
    /// Sets the truth of a predicate (given by id and representative
    /// polarity).
    pub fn set(&mut self, id: PredId, polarity: bool, value: bool) {
        if polarity == value {
            self.pos.insert(id);
            self.neg.remove(&id);
        } else {
            self.neg.insert(id);
            self.pos.remove(&id);
        }
    }

    /// Truth of a predicate under the letter, `None` for don't-care.
    pub fn truth(&self, table: &PredicateTable, q: &Qf) -> Option<bool> {
        match q.canon() {
            Qf::True => return Some(true),
            Qf::False => return Some(false),
            _ => {}
        }
        let (id, polarity) = table.lookup(q)?;
        if self.pos.contains(&id) {
            Some(polarity)
        } else if self.neg.contains(&id) {
            Some(!polarity)
        } else {
            None
        }
    }

    /// The conjunction of all determined constraints of the letter.
    /// Don't-cares contribute nothing.
    pub fn formula(&self, table: &PredicateTable) -> Qf {
        let mut parts: Vec<Qf> = Vec::new();
        for &id in &self.pos {
            parts.push(table.get(id).qf.clone());
        }
        for &id in &self.neg {
            parts.push(Qf::not(table.get(id).qf.clone()));
        }
        Qf::conj(parts).canon()
    }

    /// The letter fully determined by a concrete step valuation: every
    /// table predicate is evaluated on it.
    pub fn from_valuation(table: &PredicateTable, v: &Valuation) -> Letter {
        let mut letter = Letter::default();
        for id in 0..table.len() {
            let value = table.get(id).qf.eval(v);
            letter.set(id, true, value);
        }
        letter
    }
}

/// One-step expansion: rewrites a formula into what must hold of the rest
/// of the trace after reading one letter. Temporal operators unfold by one
/// step; atoms are replaced by their truth under the letter.
///
/// # Invariant
/// Every atom of `f` occurring outside `X` must be determined by the
/// letter; letter enumeration branches on exactly those atoms.
pub fn expand(f: &Rpltl, a: &Letter, table: &PredicateTable) -> Rpltl {
    expand_raw(f, a, table).canon()
}

fn expand_raw(f: &Rpltl, a: &Letter, table: &PredicateTable) -> Rpltl {
    match f {
        Rpltl::True => Rpltl::True,
        Rpltl::False => Rpltl::False,
        Rpltl::Atom(q) => match a.truth(table, q) {
            Some(true) => Rpltl::True,
            Some(false) => Rpltl::False,
            None => panic!("expansion read don't-care predicate {q}"),
        },
        Rpltl::Not(g) => Rpltl::not(expand_raw(g, a, table)),
        Rpltl::And(gs) => Rpltl::And(gs.iter().map(|g| expand_raw(g, a, table)).collect()),
        Rpltl::Or(gs) => Rpltl::Or(gs.iter().map(|g| expand_raw(g, a, table)).collect()),
        Rpltl::Implies(p, q) => {
            Rpltl::implies(expand_raw(p, a, table), expand_raw(q, a, table))
        }
        Rpltl::Next(g) => (**g).clone(),
        Rpltl::Until(p, q) => Rpltl::Or(vec![
            expand_raw(q, a, table),
            Rpltl::And(vec![expand_raw(p, a, table), f.clone()]),
        ]),
        Rpltl::WeakUntil(p, q) => Rpltl::Or(vec![
            expand_raw(q, a, table),
            Rpltl::And(vec![expand_raw(p, a, table), f.clone()]),
        ]),
        Rpltl::Finally(g) => Rpltl::Or(vec![expand_raw(g, a, table), f.clone()]),
        Rpltl::Globally(g) => Rpltl::And(vec![expand_raw(g, a, table), f.clone()]),
    }
}

/// Upper bound on the number of predicates a state may branch on; beyond
/// this the letter enumeration would be infeasible anyway.
const MAX_BRANCH_PREDS: usize = 20;

/// Enumerates the letters relevant for a set of state formulas: branches
/// on exactly the atoms occurring outside `X`, leaves every other
/// predicate a don't-care, and drops letters whose constraints are
/// unsatisfiable together with the optional context. The surviving cubes
/// cover all behaviours because don't-cares impose nothing.
pub fn relevant_letters(
    formulas: &[&Rpltl],
    context: Option<&Qf>,
    table: &PredicateTable,
    solver: &Solver,
) -> Vec<Letter> {
    let mut branch: BTreeSet<PredId> = BTreeSet::new();
    for f in formulas {
        for atom in f.atoms_outside_next() {
            if let Some((id, _)) = table.lookup(&atom) {
                branch.insert(id);
            } else {
                panic!("state formula mentions uninterned predicate {atom}");
            }
        }
    }
    let branch: Vec<PredId> = branch.into_iter().collect();
    assert!(
        branch.len() <= MAX_BRANCH_PREDS,
        "state branches on {} predicates; enumeration capped at {MAX_BRANCH_PREDS}",
        branch.len()
    );
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << branch.len()) {
        let mut letter = Letter::default();
        for (bit, &id) in branch.iter().enumerate() {
            letter.set(id, true, mask & (1 << bit) != 0);
        }
        let mut constraint = letter.formula(table);
        if let Some(ctx) = context {
            constraint = Qf::conj([constraint, ctx.clone()]).canon();
        }
        // Unknown keeps the letter: dropping it could lose behaviours.
        if solver.check_sat_qf(&constraint) != SmtVerdict::Unsat {
            out.push(letter);
        }
    }
    out
}

/// Predicates certain to hold of the *next* state after reading a letter:
/// every propagation candidate `β` (or its negation) entailed, with program
/// variables primed, by the letter's constraints.
pub fn propagate(a: &Letter, table: &PredicateTable, solver: &Solver) -> Vec<Qf> {
    let premise = a.formula(table);
    if premise == Qf::False {
        return Vec::new();
    }
    let mut out = Vec::new();
    for id in table.prop_ids() {
        let beta = table.get(id).qf.clone();
        for candidate in [beta.clone(), Qf::not(beta).canon()] {
            let primed = candidate.prime(table.inputs());
            if solver.entails(&premise, &primed) {
                out.push(candidate.canon());
                break;
            }
        }
    }
    out
}

//! The monitor-state data model and the state transformation rule system:
//! simplification rules, unsatisfiability detection, implied-formula
//! deduction, and the fixed application pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::expansion::PredicateTable;
use crate::fixpoint::{check_inductive, reach_entails, reachable_set, FixpointBudget};
use crate::fol::{Atom, Fnv, Qf, Rel};
use crate::ltl::{feed_rpltl, lasso_eval, Lasso, Rpltl, Spec};
use crate::solver::{SmtVerdict, Solver};

/// Assumption or guarantee component selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Assumption,
    Guarantee,
}

pub const SIDES: [Side; 2] = [Side::Assumption, Side::Guarantee];

/// Body of an implied formula `G(γ → ψ)`: the four admissible shapes of
/// `ψ` over a non-temporal core `α`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ImpBody {
    Now(Qf),
    Next(Qf),
    Finally(Qf),
    Globally(Qf),
}

impl ImpBody {
    pub fn core(&self) -> &Qf {
        match self {
            ImpBody::Now(a) | ImpBody::Next(a) | ImpBody::Finally(a) | ImpBody::Globally(a) => a,
        }
    }

    fn to_rpltl(&self) -> Rpltl {
        let a = Rpltl::Atom(self.core().clone()).canon();
        match self {
            ImpBody::Now(_) => a,
            ImpBody::Next(_) => Rpltl::next(a),
            ImpBody::Finally(_) => Rpltl::finally(a),
            ImpBody::Globally(_) => Rpltl::globally(a),
        }
    }
}

/// An implied formula `G(γ → ψ)` with a quantifier-free guard.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Imp {
    pub guard: Qf,
    pub body: ImpBody,
}

impl Imp {
    pub fn new(guard: Qf, body: ImpBody) -> Imp {
        let body = match body {
            ImpBody::Now(a) => ImpBody::Now(a.canon()),
            ImpBody::Next(a) => ImpBody::Next(a.canon()),
            ImpBody::Finally(a) => ImpBody::Finally(a.canon()),
            ImpBody::Globally(a) => ImpBody::Globally(a.canon()),
        };
        Imp { guard: guard.canon(), body }
    }

    /// The formula `G(γ → ψ)`.
    pub fn to_rpltl(&self) -> Rpltl {
        Rpltl::globally(Rpltl::implies(
            Rpltl::Atom(self.guard.clone()).canon(),
            self.body.to_rpltl(),
        ))
        .canon()
    }
}

impl fmt::Display for Imp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_rpltl())
    }
}

/// A monitor state `⟨F_A, E_A, F_G, E_G, Imp_A, Imp_G⟩`.
///
/// # Invariant
/// All formulas are canonical; `⊤` never appears as a set member (an empty
/// set is the empty conjunction).
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct MonitorState {
    pub f_a: BTreeSet<Rpltl>,
    pub e_a: BTreeSet<Rpltl>,
    pub f_g: BTreeSet<Rpltl>,
    pub e_g: BTreeSet<Rpltl>,
    pub imp_a: BTreeSet<Imp>,
    pub imp_g: BTreeSet<Imp>,
}

impl MonitorState {
    pub fn f(&self, d: Side) -> &BTreeSet<Rpltl> {
        match d {
            Side::Assumption => &self.f_a,
            Side::Guarantee => &self.f_g,
        }
    }

    pub fn f_mut(&mut self, d: Side) -> &mut BTreeSet<Rpltl> {
        match d {
            Side::Assumption => &mut self.f_a,
            Side::Guarantee => &mut self.f_g,
        }
    }

    pub fn e(&self, d: Side) -> &BTreeSet<Rpltl> {
        match d {
            Side::Assumption => &self.e_a,
            Side::Guarantee => &self.e_g,
        }
    }

    pub fn e_mut(&mut self, d: Side) -> &mut BTreeSet<Rpltl> {
        match d {
            Side::Assumption => &mut self.e_a,
            Side::Guarantee => &mut self.e_g,
        }
    }

    pub fn imp(&self, d: Side) -> &BTreeSet<Imp> {
        match d {
            Side::Assumption => &self.imp_a,
            Side::Guarantee => &self.imp_g,
        }
    }

    pub fn imp_mut(&mut self, d: Side) -> &mut BTreeSet<Imp> {
        match d {
            Side::Assumption => &mut self.imp_a,
            Side::Guarantee => &mut self.imp_g,
        }
    }

    /// `Formula(q) := ⋀(F_A ∪ E_A) → ⋀(F_G ∪ E_G)`.
    pub fn formula(&self) -> Rpltl {
        let a = Rpltl::conj(self.f_a.iter().chain(&self.e_a).cloned());
        let g = Rpltl::conj(self.f_g.iter().chain(&self.e_g).cloned());
        Rpltl::implies(a, g).canon()
    }

    /// The formula of the state including the implied sets, as used by the
    /// transformation soundness conditions.
    pub fn formula_with_imps(&self) -> Rpltl {
        let a = Rpltl::conj(
            self.f_a
                .iter()
                .chain(&self.e_a)
                .cloned()
                .chain(self.imp_a.iter().map(Imp::to_rpltl)),
        );
        let g = Rpltl::conj(
            self.f_g
                .iter()
                .chain(&self.e_g)
                .cloned()
                .chain(self.imp_g.iter().map(Imp::to_rpltl)),
        );
        Rpltl::implies(a, g).canon()
    }

    /// Conjunction of the non-temporal members of `E_A` (assumption side)
    /// or `E_G ∪ E_A` (guarantee side: guarantees are conditional on the
    /// assumptions holding).
    pub fn curr(&self, d: Side) -> Qf {
        let mut parts: Vec<Qf> = Vec::new();
        let mut take = |set: &BTreeSet<Rpltl>| {
            for f in set {
                if let Some(q) = f.as_qf() {
                    parts.push(q);
                }
            }
        };
        take(&self.e_a);
        if d == Side::Guarantee {
            take(&self.e_g);
        }
        Qf::conj(parts).canon()
    }

    /// Conjunction of the cores of unconditional invariants
    /// `G(⊤ → α) ∈ Imp_D` with non-temporal `α`.
    pub fn imp_inv(&self, d: Side) -> Qf {
        let parts: Vec<Qf> = self
            .imp(d)
            .iter()
            .filter(|i| i.guard == Qf::True && matches!(i.body, ImpBody::Now(_)))
            .map(|i| i.body.core().clone())
            .collect();
        Qf::conj(parts).canon()
    }

    /// Stable hash of the sextuple for deduplication.
    pub fn canonical_key(&self) -> u64 {
        let mut h = Fnv::new();
        for (tag, set) in [(b'A', &self.f_a), (b'a', &self.e_a), (b'G', &self.f_g), (b'g', &self.e_g)]
        {
            h.write(&[tag]);
            h.write_i64(set.len() as i64);
            for f in set.iter() {
                feed_rpltl(f, &mut h);
            }
        }
        for (tag, set) in [(b'I', &self.imp_a), (b'i', &self.imp_g)] {
            h.write(&[tag]);
            h.write_i64(set.len() as i64);
            for i in set.iter() {
                feed_rpltl(&i.to_rpltl(), &mut h);
            }
        }
        h.finish()
    }

    fn is_false(&self, d: Side) -> bool {
        self.f(d).contains(&Rpltl::False) || self.e(d).contains(&Rpltl::False)
    }

    fn set_false(&mut self, d: Side) {
        *self.f_mut(d) = [Rpltl::False].into_iter().collect();
        *self.e_mut(d) = [Rpltl::False].into_iter().collect();
    }
}

impl fmt::Display for MonitorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = |s: &BTreeSet<Rpltl>| {
            s.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
        };
        let imps = |s: &BTreeSet<Imp>| {
            s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        };
        write!(
            f,
            "<F_A={{{}}}, E_A={{{}}}, F_G={{{}}}, E_G={{{}}}, Imp_A={{{}}}, Imp_G={{{}}}>",
            set(&self.f_a),
            set(&self.e_a),
            set(&self.f_g),
            set(&self.e_g),
            imps(&self.imp_a),
            imps(&self.imp_g)
        )
    }
}

/// Identifiers of the transformation rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleId {
    NextExt,
    Unsat,
    UnsatF,
    SubstTrue,
    SubstFalse,
    SimplifyImpl,
    SimplifyAnd,
    SimplifyNonNested,
    PropagateAssump,
    PropagateG,
    PropagateW,
    JoinImp,
    ChainImp,
    ChainImpG,
    ChainImpF,
    ChainImpX,
    GenInv,
    GenInvP,
    GenReach,
    Rewrite,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Shape analysis for implied-formula bodies: decomposes `ψ` into a guard
/// and an admissible body, or fails. Handles implications with
/// non-temporal antecedent and disjunctions with exactly one temporal
/// disjunct (the non-temporal disjuncts become guard negations).
pub fn imp_body_shape(psi: &Rpltl) -> Option<(Qf, ImpBody)> {
    let psi = psi.canon();
    // A fully non-temporal body keeps any implication inside the core, so
    // conditional constraints (guarded dynamics) enter the implied
    // invariant whole.
    if !psi.is_temporal() {
        return Some((Qf::True, ImpBody::Now(psi.as_qf()?.canon())));
    }
    let (guard, rest): (Qf, Rpltl) = match &psi {
        Rpltl::Implies(a, b) if !a.is_temporal() => (a.as_qf()?, (**b).clone()),
        _ => (Qf::True, psi.clone()),
    };
    if !rest.is_temporal() {
        return Some((guard.canon(), ImpBody::Now(rest.as_qf()?)));
    }
    let (extra_guard, temporal): (Qf, Rpltl) = match &rest {
        Rpltl::Or(parts) => {
            let (temps, plains): (Vec<_>, Vec<_>) =
                parts.iter().partition(|p| p.is_temporal());
            if temps.len() != 1 {
                return None;
            }
            let blocked: Vec<Qf> = plains.iter().map(|p| p.as_qf()).collect::<Option<_>>()?;
            (Qf::not(Qf::or(blocked)), temps[0].clone())
        }
        _ => (Qf::True, rest),
    };
    let body = match temporal.nnf() {
        Rpltl::Next(g) if !g.is_temporal() => ImpBody::Next(g.as_qf()?),
        Rpltl::Finally(g) if !g.is_temporal() => ImpBody::Finally(g.as_qf()?),
        Rpltl::Globally(g) if !g.is_temporal() => ImpBody::Globally(g.as_qf()?),
        _ => return None,
    };
    Some((Qf::conj([guard, extra_guard]).canon(), body))
}

/// Whether a formula may live in `E_D`: non-temporal, a weak-until over
/// non-temporal operands, or a `G` whose body has an admissible implied
/// shape. `G F β` and `F ψ` never move — the eventuality discharge needs
/// them in `F_D`.
pub fn movable_to_e(f: &Rpltl) -> bool {
    if !f.is_temporal() {
        return true;
    }
    match f {
        Rpltl::WeakUntil(a, b) => !a.is_temporal() && !b.is_temporal(),
        Rpltl::Globally(psi) => {
            matches!(imp_body_shape(psi), Some((_, body)) if !matches!(body, ImpBody::Finally(_)))
        }
        _ => false,
    }
}

/// The initial monitor state for a specification: each top-level conjunct
/// of the assumptions and guarantees is placed in `E_D` when allowed, else
/// in `F_D`; the implied sets start empty.
pub fn partition_initial(spec: &Spec) -> MonitorState {
    let mut st = MonitorState::default();
    let place = |formulas: &[Rpltl], d: Side, st: &mut MonitorState| {
        let mut conjuncts: Vec<Rpltl> = Vec::new();
        for f in formulas {
            match f.canon() {
                Rpltl::And(parts) => conjuncts.extend(parts),
                Rpltl::True => {}
                other => conjuncts.push(other),
            }
        }
        for c in conjuncts {
            if movable_to_e(&c) {
                st.e_mut(d).insert(c);
            } else {
                st.f_mut(d).insert(c);
            }
        }
    };
    place(&spec.assumptions, Side::Assumption, &mut st);
    place(&spec.guarantees, Side::Guarantee, &mut st);
    st
}

/// Shared environment for rule application.
pub struct RuleEnv<'a> {
    pub solver: &'a Solver,
    pub table: &'a mut PredicateTable,
    pub inputs: BTreeSet<String>,
    pub budget: FixpointBudget,
    pub enable_gen_inv_p: bool,
    /// Canonical `E_D` keys already handed to the precise-invariant rule
    /// (it fires at most once per distinct `E_D`).
    pub gen_inv_p_seen: &'a mut BTreeSet<(Side, u64)>,
    /// Memoized forced-reachability verdicts keyed by the canonical keys
    /// of (source, target, invariant) — the same query recurs across
    /// monitor states.
    pub reach_cache: &'a mut BTreeMap<(u64, u64, u64), bool>,
    pub log: &'a mut Vec<RuleId>,
}

/// A transformation rule: fires on the first applicable instance in
/// canonical order and returns the transformed state, or nothing.
pub trait Rule {
    fn id(&self) -> RuleId;
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState>;
}

/// All rules, in a fixed order, keyed by identifier.
pub fn registry() -> Vec<Box<dyn Rule>> {
    vec![
        Box::new(RewriteRule),
        Box::new(NextExtRule),
        Box::new(UnsatRule),
        Box::new(UnsatFRule),
        Box::new(SubstRule { positive: true }),
        Box::new(SubstRule { positive: false }),
        Box::new(SimplifyImplRule),
        Box::new(SimplifyAndRule),
        Box::new(SimplifyNonNestedRule),
        Box::new(PropagateAssumpRule),
        Box::new(PropagateGRule),
        Box::new(PropagateWRule),
        Box::new(JoinImpRule),
        Box::new(ChainImpRule),
        Box::new(ChainImpGRule),
        Box::new(ChainImpFRule),
        Box::new(ChainImpXRule),
        Box::new(GenInvRule),
        Box::new(GenInvPRule),
        Box::new(GenReachRule),
    ]
}

/// Applies a single rule by identifier.
pub fn try_rule(
    id: RuleId,
    st: &MonitorState,
    env: &mut RuleEnv<'_>,
) -> Option<MonitorState> {
    registry().iter().find(|r| r.id() == id).and_then(|r| r.apply(st, env))
}

// ---------------------------------------------------------------------
// Individual rules.
// ---------------------------------------------------------------------

struct RewriteRule;

impl Rule for RewriteRule {
    fn id(&self) -> RuleId {
        RuleId::Rewrite
    }

    /// Re-canonicalization: the equivalence catalog (`φ W ⊥ → G φ`,
    /// `G ⊤ → ⊤`, `F ⊥ → ⊥`, `G G`/`F F` collapse, constant folding) is
    /// folded into the canonical form, so rewriting is normalizing every
    /// member and dropping `⊤`.
    fn apply(&self, st: &MonitorState, _env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        let mut out = st.clone();
        let mut changed = false;
        for d in SIDES {
            for part in [true, false] {
                let set = if part { out.f(d).clone() } else { out.e(d).clone() };
                let next: BTreeSet<Rpltl> = set
                    .iter()
                    .map(|f| f.canon())
                    .filter(|f| *f != Rpltl::True)
                    .collect();
                if next != set {
                    changed = true;
                    if part {
                        *out.f_mut(d) = next;
                    } else {
                        *out.e_mut(d) = next;
                    }
                }
            }
        }
        changed.then_some(out)
    }
}

struct NextExtRule;

impl Rule for NextExtRule {
    fn id(&self) -> RuleId {
        RuleId::NextExt
    }

    /// For `α` over unprimed program variables, replaces the primed copy
    /// `α[X↦X']` and the formula `X α` by `α[X↦X'] ∧ X α`, tying
    /// next-state variables to the next-step operator. Applied to
    /// non-nested occurrences only.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        let mut candidates: BTreeSet<Rpltl> = BTreeSet::new();
        let mut scan = |f: &Rpltl| {
            collect_next_ext_candidates(f, &env.inputs, &mut candidates);
        };
        for d in SIDES {
            st.f(d).iter().for_each(&mut scan);
            st.e(d).iter().for_each(&mut scan);
        }
        for alpha in candidates {
            let a_qf = alpha.as_qf().expect("candidate is non-temporal");
            let primed = Rpltl::Atom(a_qf.prime(&env.inputs)).canon();
            let next = Rpltl::next(alpha.clone()).canon();
            let target = Rpltl::And(vec![primed.clone(), next.clone()]).canon();
            let mut out = st.clone();
            let mut changed = false;
            for d in SIDES {
                for part in [true, false] {
                    let set = if part { out.f(d).clone() } else { out.e(d).clone() };
                    let rewritten: BTreeSet<Rpltl> = set
                        .iter()
                        .map(|f| {
                            f.replace(&primed, &target, true)
                                .replace(&next, &target, true)
                                .canon()
                        })
                        .collect();
                    if rewritten != set {
                        changed = true;
                        if part {
                            *out.f_mut(d) = rewritten;
                        } else {
                            *out.e_mut(d) = rewritten;
                        }
                    }
                }
            }
            if changed {
                return Some(out);
            }
        }
        None
    }
}

fn collect_next_ext_candidates(
    f: &Rpltl,
    inputs: &BTreeSet<String>,
    out: &mut BTreeSet<Rpltl>,
) {
    let state_only = |g: &Rpltl| {
        g.as_qf().is_some_and(|q| {
            q.vars().iter().all(|v| !v.primed && !inputs.contains(&v.name)) && q != Qf::True
        })
    };
    match f {
        Rpltl::Next(g) if state_only(g) => {
            out.insert(g.canon());
        }
        _ => {}
    }
    // A purely-primed non-temporal subformula is the primed copy of its
    // unprimed counterpart.
    if let Some(q) = f.as_qf() {
        let vars = q.vars();
        if !vars.is_empty() && vars.iter().all(|v| v.primed) {
            let map: std::collections::BTreeMap<_, _> =
                vars.iter().map(|v| (v.clone(), v.unprime())).collect();
            out.insert(Rpltl::Atom(q.rename(&map)).canon());
        }
    }
    match f {
        Rpltl::Not(g) | Rpltl::Next(g) | Rpltl::Finally(g) | Rpltl::Globally(g) => {
            collect_next_ext_candidates(g, inputs, out)
        }
        Rpltl::And(gs) | Rpltl::Or(gs) => {
            for g in gs {
                collect_next_ext_candidates(g, inputs, out);
            }
        }
        Rpltl::Implies(a, b) | Rpltl::Until(a, b) | Rpltl::WeakUntil(a, b) => {
            collect_next_ext_candidates(a, inputs, out);
            collect_next_ext_candidates(b, inputs, out);
        }
        _ => {}
    }
}

struct UnsatRule;

impl Rule for UnsatRule {
    fn id(&self) -> RuleId {
        RuleId::Unsat
    }

    /// `Curr_D ∧ ImpInv_D ⊨ ⊥` collapses the side to `{⊥}`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            if st.is_false(d) {
                continue;
            }
            let premise = Qf::conj([st.curr(d), st.imp_inv(d)]).canon();
            if premise == Qf::True {
                continue;
            }
            if env.solver.check_sat_qf(&premise) == SmtVerdict::Unsat {
                let mut out = st.clone();
                out.set_false(d);
                return Some(out);
            }
        }
        None
    }
}

struct UnsatFRule;

impl Rule for UnsatFRule {
    fn id(&self) -> RuleId {
        RuleId::UnsatF
    }

    /// A pending eventuality `G(γ → F β) ∈ Imp_D` whose guard currently
    /// holds but whose target contradicts the implied invariants makes the
    /// side unsatisfiable.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            if st.is_false(d) {
                continue;
            }
            let curr = st.curr(d);
            let inv = st.imp_inv(d);
            for imp in st.imp(d) {
                let beta = match &imp.body {
                    ImpBody::Finally(b) => b,
                    _ => continue,
                };
                if !env.solver.entails(&curr, &imp.guard) {
                    continue;
                }
                let clash = Qf::conj([beta.clone(), inv.clone()]).canon();
                if env.solver.check_sat_qf(&clash) == SmtVerdict::Unsat {
                    let mut out = st.clone();
                    out.set_false(d);
                    return Some(out);
                }
            }
        }
        None
    }
}

/// Collects every non-constant, non-temporal subformula.
fn qf_subformulas(f: &Rpltl, out: &mut BTreeSet<Rpltl>) {
    if !f.is_temporal() && !matches!(f, Rpltl::True | Rpltl::False) {
        out.insert(f.clone());
    }
    match f {
        Rpltl::Not(g) | Rpltl::Next(g) | Rpltl::Finally(g) | Rpltl::Globally(g) => {
            qf_subformulas(g, out)
        }
        Rpltl::And(gs) | Rpltl::Or(gs) => {
            for g in gs {
                qf_subformulas(g, out);
            }
        }
        Rpltl::Implies(a, b) | Rpltl::Until(a, b) | Rpltl::WeakUntil(a, b) => {
            qf_subformulas(a, out);
            qf_subformulas(b, out);
        }
        _ => {}
    }
}

struct SubstRule {
    positive: bool,
}

impl Rule for SubstRule {
    fn id(&self) -> RuleId {
        if self.positive {
            RuleId::SubstTrue
        } else {
            RuleId::SubstFalse
        }
    }

    /// A quantifier-free subformula of `F_D` entailed (or refuted) by the
    /// implied invariants is replaced by the corresponding constant,
    /// everywhere in `F_D`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let inv = st.imp_inv(d);
            if inv == Qf::True {
                continue;
            }
            let mut candidates = BTreeSet::new();
            for f in st.f(d) {
                qf_subformulas(f, &mut candidates);
            }
            for gamma in candidates {
                let q = gamma.as_qf().expect("candidate is non-temporal");
                let goal = if self.positive { q } else { Qf::not(q).canon() };
                if !env.solver.entails(&inv, &goal) {
                    continue;
                }
                let to = if self.positive { Rpltl::True } else { Rpltl::False };
                let next: BTreeSet<Rpltl> = st
                    .f(d)
                    .iter()
                    .map(|f| f.replace(&gamma, &to, false).canon())
                    .filter(|f| *f != Rpltl::True)
                    .collect();
                if next != *st.f(d) {
                    let mut out = st.clone();
                    *out.f_mut(d) = next;
                    return Some(out);
                }
            }
        }
        None
    }
}

struct SimplifyImplRule;

impl Rule for SimplifyImplRule {
    fn id(&self) -> RuleId {
        RuleId::SimplifyImpl
    }

    /// `G(γ → φ) ∈ Imp_D` holds at all times, so occurrences of `γ → φ`
    /// in `F_D` are `⊤`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        let _ = env;
        for d in SIDES {
            for imp in st.imp(d) {
                let guard_rp = Rpltl::Atom(imp.guard.clone()).canon();
                let body_rp = imp.body.to_rpltl();
                let mut patterns = vec![
                    Rpltl::implies(guard_rp.clone(), body_rp.clone()).canon(),
                    Rpltl::Or(vec![Rpltl::not(guard_rp.clone()), body_rp.clone()]).canon(),
                ];
                patterns.dedup();
                for pat in patterns {
                    if matches!(pat, Rpltl::True | Rpltl::False) {
                        continue;
                    }
                    let next: BTreeSet<Rpltl> = st
                        .f(d)
                        .iter()
                        .map(|f| f.replace(&pat, &Rpltl::True, false).canon())
                        .filter(|f| *f != Rpltl::True)
                        .collect();
                    if next != *st.f(d) {
                        let mut out = st.clone();
                        *out.f_mut(d) = next;
                        return Some(out);
                    }
                }
            }
        }
        None
    }
}

/// Removes `φ` from conjunctions that also contain `γ` (the substitution
/// `(γ ∧ φ) ↦ γ`).
fn and_absorb(f: &Rpltl, gamma: &Rpltl, phi: &Rpltl) -> Rpltl {
    match f {
        Rpltl::And(parts) => {
            let parts: Vec<Rpltl> =
                parts.iter().map(|p| and_absorb(p, gamma, phi)).collect();
            if parts.contains(gamma) && parts.contains(phi) {
                Rpltl::And(parts.into_iter().filter(|p| p != phi).collect())
            } else {
                Rpltl::And(parts)
            }
        }
        Rpltl::Not(g) => Rpltl::not(and_absorb(g, gamma, phi)),
        Rpltl::Or(parts) => {
            Rpltl::Or(parts.iter().map(|p| and_absorb(p, gamma, phi)).collect())
        }
        Rpltl::Implies(a, b) => {
            Rpltl::implies(and_absorb(a, gamma, phi), and_absorb(b, gamma, phi))
        }
        Rpltl::Next(g) => Rpltl::next(and_absorb(g, gamma, phi)),
        Rpltl::Finally(g) => Rpltl::finally(and_absorb(g, gamma, phi)),
        Rpltl::Globally(g) => Rpltl::globally(and_absorb(g, gamma, phi)),
        Rpltl::Until(a, b) => {
            Rpltl::until(and_absorb(a, gamma, phi), and_absorb(b, gamma, phi))
        }
        Rpltl::WeakUntil(a, b) => {
            Rpltl::weak_until(and_absorb(a, gamma, phi), and_absorb(b, gamma, phi))
        }
        _ => f.clone(),
    }
}

struct SimplifyAndRule;

impl Rule for SimplifyAndRule {
    fn id(&self) -> RuleId {
        RuleId::SimplifyAnd
    }

    /// `G(γ → φ) ∈ Imp_D` lets `γ ∧ φ` collapse to `γ` inside `F_D`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        let _ = env;
        for d in SIDES {
            for imp in st.imp(d) {
                let gamma = Rpltl::Atom(imp.guard.clone()).canon();
                let phi = imp.body.to_rpltl();
                if gamma == phi || matches!(gamma, Rpltl::True | Rpltl::False) {
                    continue;
                }
                let next: BTreeSet<Rpltl> = st
                    .f(d)
                    .iter()
                    .map(|f| and_absorb(f, &gamma, &phi).canon())
                    .filter(|f| *f != Rpltl::True)
                    .collect();
                if next != *st.f(d) {
                    let mut out = st.clone();
                    *out.f_mut(d) = next;
                    return Some(out);
                }
            }
        }
        None
    }
}

struct SimplifyNonNestedRule;

impl Rule for SimplifyNonNestedRule {
    fn id(&self) -> RuleId {
        RuleId::SimplifyNonNested
    }

    /// When the guard of `G(γ → φ) ∈ Imp_D` holds now (`Curr ∧ ImpInv ⊨
    /// γ`), the current-time occurrences of `φ` in `F_D` — those outside
    /// any temporal operator — are `⊤`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let now = Qf::conj([st.curr(d), st.imp_inv(d)]).canon();
            for imp in st.imp(d) {
                let phi = imp.body.to_rpltl();
                if matches!(phi, Rpltl::True | Rpltl::False) {
                    continue;
                }
                if !env.solver.entails(&now, &imp.guard) {
                    continue;
                }
                let next: BTreeSet<Rpltl> = st
                    .f(d)
                    .iter()
                    .map(|f| f.replace(&phi, &Rpltl::True, true).canon())
                    .filter(|f| *f != Rpltl::True)
                    .collect();
                if next != *st.f(d) {
                    let mut out = st.clone();
                    *out.f_mut(d) = next;
                    return Some(out);
                }
            }
        }
        None
    }
}

struct PropagateAssumpRule;

impl Rule for PropagateAssumpRule {
    fn id(&self) -> RuleId {
        RuleId::PropagateAssump
    }

    /// Everything implied by the assumptions is implied by the
    /// assumption-guarantee pair: `Imp_G ∪= Imp_A`.
    fn apply(&self, st: &MonitorState, _env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        if st.imp_a.is_subset(&st.imp_g) {
            return None;
        }
        let mut out = st.clone();
        let adds: Vec<Imp> = st.imp_a.difference(&st.imp_g).cloned().collect();
        out.imp_g.extend(adds);
        Some(out)
    }
}

struct PropagateGRule;

impl Rule for PropagateGRule {
    fn id(&self) -> RuleId {
        RuleId::PropagateG
    }

    /// `G ψ ∈ E_D` with `ψ` of implied shape enters `Imp_D`.
    fn apply(&self, st: &MonitorState, _env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        let mut out = st.clone();
        let mut changed = false;
        for d in SIDES {
            let mut adds: Vec<Imp> = Vec::new();
            for f in st.e(d) {
                if let Rpltl::Globally(psi) = f {
                    if let Some((guard, body)) = imp_body_shape(psi) {
                        let imp = Imp::new(guard, body);
                        if !st.imp(d).contains(&imp) {
                            adds.push(imp);
                        }
                    }
                }
            }
            if !adds.is_empty() {
                out.imp_mut(d).extend(adds);
                changed = true;
            }
        }
        changed.then_some(out)
    }
}

struct PropagateWRule;

impl Rule for PropagateWRule {
    fn id(&self) -> RuleId {
        RuleId::PropagateW
    }

    /// Two weak-until members of `E_D` whose end conditions are mutually
    /// impossible (also against the other's hold condition) jointly pin
    /// both hold conditions forever: add `G(⊤ → G(α1 ∧ α2))`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let inv = st.imp_inv(d);
            let ws: Vec<(Qf, Qf)> = st
                .e(d)
                .iter()
                .filter_map(|f| match f {
                    Rpltl::WeakUntil(a, b) => Some((a.as_qf()?, b.as_qf()?)),
                    _ => None,
                })
                .collect();
            for (i, (a1, b1)) in ws.iter().enumerate() {
                for (a2, b2) in ws.iter().skip(i) {
                    let checks = [
                        Qf::conj([a1.clone(), b2.clone(), inv.clone()]),
                        Qf::conj([a2.clone(), b1.clone(), inv.clone()]),
                        Qf::conj([b1.clone(), b2.clone(), inv.clone()]),
                    ];
                    if checks
                        .iter()
                        .all(|c| env.solver.check_sat_qf(&c.canon()) == SmtVerdict::Unsat)
                    {
                        let alpha = Qf::conj([a1.clone(), a2.clone()]).canon();
                        let imp = Imp::new(Qf::True, ImpBody::Globally(alpha));
                        if !st.imp(d).contains(&imp) {
                            let mut out = st.clone();
                            out.imp_mut(d).insert(imp);
                            return Some(out);
                        }
                    }
                }
            }
        }
        None
    }
}

struct JoinImpRule;

impl Rule for JoinImpRule {
    fn id(&self) -> RuleId {
        RuleId::JoinImp
    }

    /// Two implied formulas with the same body merge their guards:
    /// `G((γ1 ∨ γ2) → φ)`.
    fn apply(&self, st: &MonitorState, _env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let imps: Vec<&Imp> = st.imp(d).iter().collect();
            for (i, x) in imps.iter().enumerate() {
                for y in imps.iter().skip(i + 1) {
                    if x.body != y.body || x.guard == y.guard {
                        continue;
                    }
                    let joined = Imp::new(
                        Qf::or(vec![x.guard.clone(), y.guard.clone()]),
                        x.body.clone(),
                    );
                    if !st.imp(d).contains(&joined) && joined.to_rpltl() != Rpltl::True {
                        let mut out = st.clone();
                        out.imp_mut(d).insert(joined);
                        return Some(out);
                    }
                }
            }
        }
        None
    }
}

struct ChainImpRule;

impl Rule for ChainImpRule {
    fn id(&self) -> RuleId {
        RuleId::ChainImp
    }

    /// From `G(γ → γ1)` and `G(γ2 → φ)` with `γ1 ∧ ImpInv ⊨ γ2`, derive
    /// `G(γ → φ)`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let inv = st.imp_inv(d);
            for first in st.imp(d) {
                let gamma1 = match &first.body {
                    ImpBody::Now(a) => a,
                    _ => continue,
                };
                for second in st.imp(d) {
                    // Chaining through an unconditional invariant only
                    // weakens it; skip the redundant derivation.
                    if second.guard == Qf::True {
                        continue;
                    }
                    let derived = Imp::new(first.guard.clone(), second.body.clone());
                    if st.imp(d).contains(&derived)
                        || derived == *second
                        || derived.to_rpltl() == Rpltl::True
                    {
                        continue;
                    }
                    let premise = Qf::conj([gamma1.clone(), inv.clone()]).canon();
                    if env.solver.entails(&premise, &second.guard) {
                        let mut out = st.clone();
                        out.imp_mut(d).insert(derived);
                        return Some(out);
                    }
                }
            }
        }
        None
    }
}

struct ChainImpGRule;

impl Rule for ChainImpGRule {
    fn id(&self) -> RuleId {
        RuleId::ChainImpG
    }

    /// `G(γ → G α) ∈ Imp_D` whose guard holds now yields the
    /// unconditional invariant `G(⊤ → α)`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let now = Qf::conj([st.curr(d), st.imp_inv(d)]).canon();
            for imp in st.imp(d) {
                let alpha = match &imp.body {
                    ImpBody::Globally(a) => a,
                    _ => continue,
                };
                let derived = Imp::new(Qf::True, ImpBody::Now(alpha.clone()));
                if st.imp(d).contains(&derived) {
                    continue;
                }
                if env.solver.entails(&now, &imp.guard) {
                    let mut out = st.clone();
                    out.imp_mut(d).insert(derived);
                    return Some(out);
                }
            }
        }
        None
    }
}

struct ChainImpFRule;

impl Rule for ChainImpFRule {
    fn id(&self) -> RuleId {
        RuleId::ChainImpF
    }

    /// From `G(γ → F β)` and `G(γ1 → φ)` with `β ∧ ImpInv ⊨ γ1`, derive
    /// `G(γ → F φ)` (for non-temporal `φ`).
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        chain_through(st, env, |body| matches!(body, ImpBody::Finally(_)), |phi| {
            ImpBody::Finally(phi)
        })
    }
}

struct ChainImpXRule;

impl Rule for ChainImpXRule {
    fn id(&self) -> RuleId {
        RuleId::ChainImpX
    }

    /// From `G(γ → X β)` and `G(γ1 → φ)` with `β ∧ ImpInv ⊨ γ1`, derive
    /// `G(γ → X φ)` (for non-temporal `φ`).
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        chain_through(st, env, |body| matches!(body, ImpBody::Next(_)), |phi| ImpBody::Next(phi))
    }
}

fn chain_through(
    st: &MonitorState,
    env: &mut RuleEnv<'_>,
    selects: impl Fn(&ImpBody) -> bool,
    wrap: impl Fn(Qf) -> ImpBody,
) -> Option<MonitorState> {
    for d in SIDES {
        let inv = st.imp_inv(d);
        for first in st.imp(d) {
            if !selects(&first.body) {
                continue;
            }
            let beta = first.body.core();
            for second in st.imp(d) {
                // F/X of an unconditional invariant adds nothing.
                if second.guard == Qf::True {
                    continue;
                }
                let phi = match &second.body {
                    ImpBody::Now(a) => a.clone(),
                    _ => continue,
                };
                let derived = Imp::new(first.guard.clone(), wrap(phi));
                if st.imp(d).contains(&derived)
                    || derived == *first
                    || derived.to_rpltl() == Rpltl::True
                {
                    continue;
                }
                let premise = Qf::conj([beta.clone(), inv.clone()]).canon();
                if env.solver.entails(&premise, &second.guard) {
                    let mut out = st.clone();
                    out.imp_mut(d).insert(derived);
                    return Some(out);
                }
            }
        }
    }
    None
}

/// Eventuality and weak-until end conditions appearing non-nested in a
/// formula: the negations of these are the invariant candidates.
fn liveness_targets(f: &Rpltl, out: &mut BTreeSet<Qf>) {
    match f {
        Rpltl::Finally(b) | Rpltl::WeakUntil(_, b) => {
            if let Some(q) = b.as_qf() {
                out.insert(q.canon());
            }
        }
        Rpltl::Not(g) => liveness_targets(g, out),
        Rpltl::And(gs) | Rpltl::Or(gs) => {
            for g in gs {
                liveness_targets(g, out);
            }
        }
        Rpltl::Implies(a, b) => {
            liveness_targets(a, out);
            liveness_targets(b, out);
        }
        _ => {}
    }
}

/// Reachability goals for eventuality discharge: `β` with `F β`, `G ¬β`,
/// or a non-nested `G F β` in the formula.
fn reach_targets(f: &Rpltl, out: &mut BTreeSet<Qf>) {
    match f {
        Rpltl::Finally(b) => {
            if let Some(q) = b.as_qf() {
                out.insert(q.canon());
            }
        }
        Rpltl::Globally(g) => match &**g {
            Rpltl::Finally(b) => {
                if let Some(q) = b.as_qf() {
                    out.insert(q.canon());
                }
            }
            body if !body.is_temporal() => {
                if let Some(q) = body.as_qf() {
                    out.insert(Qf::not(q).canon());
                }
            }
            _ => {}
        },
        Rpltl::Not(g) => reach_targets(g, out),
        Rpltl::And(gs) | Rpltl::Or(gs) => {
            for g in gs {
                reach_targets(g, out);
            }
        }
        Rpltl::Implies(a, b) => {
            reach_targets(a, out);
            reach_targets(b, out);
        }
        _ => {}
    }
}

fn state_only(q: &Qf, inputs: &BTreeSet<String>) -> bool {
    q.vars().iter().all(|v| !v.primed && !inputs.contains(&v.name))
}

/// Weakenings of equality conjuncts of a constraint (`t = 0` relaxes to
/// `t ≤ 0` and `t ≥ 0`), used as inductive-strengthening candidates.
fn equality_relaxations(curr: &Qf) -> Vec<Qf> {
    let mut out = Vec::new();
    let conjuncts: Vec<&Qf> = match curr {
        Qf::And(cs) => cs.iter().collect(),
        other => vec![other],
    };
    for c in conjuncts {
        if let Qf::Atom(Atom::Cmp { term, rel: Rel::Eq }) = c {
            out.push(Qf::atom(term.clone(), Rel::Le));
            out.push(Qf::atom(term.neg(), Rel::Le));
        }
    }
    out
}

struct GenInvRule;

impl Rule for GenInvRule {
    fn id(&self) -> RuleId {
        RuleId::GenInv
    }

    /// Invariant generalization: for candidate invariants `α = ¬β` drawn
    /// from pending eventualities, searches for an inductive
    /// strengthening `θ` with `θ ⊨ α`, `Curr_D ⊨ θ` and `θ` closed under
    /// the implied invariants, then adds `G(Curr_D → G α)`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let gamma = st.curr(d);
            let inv = st.imp_inv(d);
            if inv == Qf::True {
                continue;
            }
            let mut targets = BTreeSet::new();
            for f in st.f(d) {
                liveness_targets(f, &mut targets);
            }
            for beta in targets {
                if !state_only(&beta, &env.inputs) {
                    continue;
                }
                let alpha = Qf::not(beta).canon();
                let derived = Imp::new(gamma.clone(), ImpBody::Globally(alpha.clone()));
                if st.imp(d).contains(&derived) {
                    continue;
                }
                let mut thetas: Vec<Qf> = vec![alpha.clone()];
                for r in equality_relaxations(&gamma) {
                    thetas.push(Qf::conj([alpha.clone(), r]).canon());
                }
                let props: Vec<Qf> = env
                    .table
                    .prop_ids()
                    .map(|i| env.table.get(i).qf.clone())
                    .collect();
                let mut lits: Vec<Qf> = Vec::new();
                for p in &props {
                    lits.push(p.clone());
                    lits.push(Qf::not(p.clone()).canon());
                }
                for (i, l1) in lits.iter().enumerate() {
                    thetas.push(Qf::conj([alpha.clone(), l1.clone()]).canon());
                    for l2 in lits.iter().skip(i + 1) {
                        thetas.push(Qf::conj([alpha.clone(), l1.clone(), l2.clone()]).canon());
                    }
                }
                for theta in thetas {
                    if !state_only(&theta, &env.inputs) {
                        continue;
                    }
                    if check_inductive(&theta, &alpha, &gamma, &inv, &env.inputs, env.solver) {
                        let mut out = st.clone();
                        out.imp_mut(d).insert(derived);
                        return Some(out);
                    }
                }
            }
        }
        None
    }
}

struct GenInvPRule;

impl Rule for GenInvPRule {
    fn id(&self) -> RuleId {
        RuleId::GenInvP
    }

    /// Precise invariant generation: computes the exact forward reachable
    /// set from the current constraint under the implied invariants and
    /// adds it as `G(Curr_D → G α)`. Disabled unless requested, and
    /// attempted at most once per distinct `E_D`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        if !env.enable_gen_inv_p {
            return None;
        }
        for d in SIDES {
            let mut h = Fnv::new();
            for f in st.e(d) {
                feed_rpltl(f, &mut h);
            }
            let key = (d, h.finish());
            if env.gen_inv_p_seen.contains(&key) {
                continue;
            }
            env.gen_inv_p_seen.insert(key);
            let gamma = st.curr(d);
            let inv = st.imp_inv(d);
            if gamma == Qf::True || inv == Qf::True {
                continue;
            }
            if let Some(alpha) = reachable_set(&gamma, &inv, &env.inputs, env.solver, &env.budget)
            {
                if alpha == Qf::True {
                    continue;
                }
                let derived = Imp::new(gamma.clone(), ImpBody::Globally(alpha.clone()));
                if st.imp(d).contains(&derived) {
                    continue;
                }
                env.table.add_generated(&alpha);
                let mut out = st.clone();
                out.imp_mut(d).insert(derived);
                return Some(out);
            }
        }
        None
    }
}

struct GenReachRule;

impl Rule for GenReachRule {
    fn id(&self) -> RuleId {
        RuleId::GenReach
    }

    /// Forced-reachability generalization: when every `Curr_D`-state must
    /// reach `β` under the implied invariants, adds `G(Curr_D → F β)`.
    fn apply(&self, st: &MonitorState, env: &mut RuleEnv<'_>) -> Option<MonitorState> {
        for d in SIDES {
            let inv = st.imp_inv(d);
            if inv == Qf::True {
                continue;
            }
            let mut targets = BTreeSet::new();
            for f in st.f(d) {
                reach_targets(f, &mut targets);
            }
            let curr = st.curr(d);
            let mut gammas: Vec<Qf> = Vec::new();
            if curr != Qf::True && state_only(&curr, &env.inputs) {
                gammas.push(curr);
            }
            gammas.push(Qf::True);
            for beta in targets {
                if !state_only(&beta, &env.inputs) {
                    continue;
                }
                for gamma in &gammas {
                    let derived = Imp::new(gamma.clone(), ImpBody::Finally(beta.clone()));
                    if st.imp(d).contains(&derived) {
                        continue;
                    }
                    let key = (gamma.canon_key(), beta.canon_key(), inv.canon_key());
                    let reached = *env.reach_cache.entry(key).or_insert_with(|| {
                        reach_entails(gamma, &beta, &inv, &env.inputs, env.solver, &env.budget)
                    });
                    if reached {
                        let mut out = st.clone();
                        out.imp_mut(d).insert(derived);
                        return Some(out);
                    }
                }
            }
        }
        None
    }
}

// ---------------------------------------------------------------------
// The application pipeline.
// ---------------------------------------------------------------------

/// Drives rule application with the fixed pipeline and owns the pieces
/// that persist across states: the application log, the soundness
/// auditor, and the once-per-`E_D` bookkeeping.
pub struct RulesEngine {
    rules: Vec<Box<dyn Rule>>,
    pub enable_gen_inv_p: bool,
    pub budget: FixpointBudget,
    pub inputs: BTreeSet<String>,
    pub log: Vec<RuleId>,
    gen_inv_p_seen: BTreeSet<(Side, u64)>,
    reach_cache: BTreeMap<(u64, u64, u64), bool>,
    /// Sampled lassos for the transformation soundness audit; empty when
    /// auditing is off.
    pub audit_lassos: Vec<Lasso>,
    pub violations: Vec<String>,
}

const BLOCK_PASSES: usize = 3;
const CHAIN_ROUNDS: usize = 3;
const FIRE_CAP: usize = 8;

impl RulesEngine {
    pub fn new(inputs: BTreeSet<String>) -> RulesEngine {
        RulesEngine {
            rules: registry(),
            enable_gen_inv_p: false,
            budget: FixpointBudget::default(),
            inputs,
            log: Vec::new(),
            gen_inv_p_seen: BTreeSet::new(),
            reach_cache: BTreeMap::new(),
            audit_lassos: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn fire(
        &mut self,
        id: RuleId,
        st: &mut MonitorState,
        solver: &Solver,
        table: &mut PredicateTable,
    ) -> bool {
        let rule = self.rules.iter().find(|r| r.id() == id).expect("rule registered");
        let mut env = RuleEnv {
            solver,
            table,
            inputs: self.inputs.clone(),
            budget: self.budget,
            enable_gen_inv_p: self.enable_gen_inv_p,
            gen_inv_p_seen: &mut self.gen_inv_p_seen,
            reach_cache: &mut self.reach_cache,
            log: &mut self.log,
        };
        if let Some(next) = rule.apply(st, &mut env) {
            if !self.audit_lassos.is_empty() {
                let issues = audit_transformation(st, &next, &self.audit_lassos);
                for v in issues {
                    self.violations.push(format!("{id}: {v}"));
                }
            }
            self.log.push(id);
            *st = next;
            self.normalize(st, solver, table);
            true
        } else {
            false
        }
    }

    /// Repeated firing of one rule, bounded.
    fn fire_loop(
        &mut self,
        id: RuleId,
        st: &mut MonitorState,
        solver: &Solver,
        table: &mut PredicateTable,
    ) -> bool {
        let mut any = false;
        for _ in 0..FIRE_CAP {
            if !self.fire(id, st, solver, table) {
                break;
            }
            any = true;
        }
        any
    }

    /// Canonicalization, legal `F → E` moves, and the structural
    /// propagation rules, iterated to a fixed point.
    fn normalize(&mut self, st: &mut MonitorState, solver: &Solver, table: &mut PredicateTable) {
        for _ in 0..FIRE_CAP {
            let mut changed = false;
            // Rewriting keeps every member canonical; log only real changes.
            let mut env = RuleEnv {
                solver,
                table,
                inputs: self.inputs.clone(),
                budget: self.budget,
                enable_gen_inv_p: self.enable_gen_inv_p,
                gen_inv_p_seen: &mut self.gen_inv_p_seen,
                reach_cache: &mut self.reach_cache,
                            log: &mut self.log,
            };
            if let Some(next) = RewriteRule.apply(st, &mut env) {
                *st = next;
                self.log.push(RuleId::Rewrite);
                changed = true;
            }
            for d in SIDES {
                let trivial: Vec<Imp> = st
                    .imp(d)
                    .iter()
                    .filter(|i| i.to_rpltl() == Rpltl::True)
                    .cloned()
                    .collect();
                for t in trivial {
                    st.imp_mut(d).remove(&t);
                    changed = true;
                }
                // `G(⊤ → G α)` and `G(⊤ → α)` are the same formula; keep
                // the invariant form so ImpInv sees the core directly.
                let unconditional: Vec<Imp> = st
                    .imp(d)
                    .iter()
                    .filter(|i| i.guard == Qf::True && matches!(i.body, ImpBody::Globally(_)))
                    .cloned()
                    .collect();
                for u in unconditional {
                    st.imp_mut(d).remove(&u);
                    st.imp_mut(d).insert(Imp::new(Qf::True, ImpBody::Now(u.body.core().clone())));
                    changed = true;
                }
                let movers: Vec<Rpltl> = st
                    .f(d)
                    .iter()
                    .filter(|f| **f != Rpltl::False && movable_to_e(f))
                    .cloned()
                    .collect();
                if !movers.is_empty() {
                    for m in movers {
                        st.f_mut(d).remove(&m);
                        st.e_mut(d).insert(m);
                    }
                    changed = true;
                }
            }
            let mut env = RuleEnv {
                solver,
                table,
                inputs: self.inputs.clone(),
                budget: self.budget,
                enable_gen_inv_p: self.enable_gen_inv_p,
                gen_inv_p_seen: &mut self.gen_inv_p_seen,
                reach_cache: &mut self.reach_cache,
                            log: &mut self.log,
            };
            if let Some(next) = PropagateAssumpRule.apply(st, &mut env) {
                *st = next;
                self.log.push(RuleId::PropagateAssump);
                changed = true;
            }
            let mut env = RuleEnv {
                solver,
                table,
                inputs: self.inputs.clone(),
                budget: self.budget,
                enable_gen_inv_p: self.enable_gen_inv_p,
                gen_inv_p_seen: &mut self.gen_inv_p_seen,
                reach_cache: &mut self.reach_cache,
                            log: &mut self.log,
            };
            if let Some(next) = PropagateGRule.apply(st, &mut env) {
                *st = next;
                self.log.push(RuleId::PropagateG);
                changed = true;
            }
            if !changed {
                break;
            }
        }
    }

    /// Steps 1–3 of the pipeline — unsatisfiability detection, implied-set
    /// saturation, substitution — as a bounded saturation block.
    fn block(&mut self, st: &mut MonitorState, solver: &Solver, table: &mut PredicateTable) {
        for _ in 0..BLOCK_PASSES {
            let mut changed = false;
            // (1) Contradiction detection; pending eventualities first so
            // that a liveness clash is attributed to it rather than to the
            // generic rule.
            changed |= self.fire(RuleId::UnsatF, st, solver, table);
            changed |= self.fire(RuleId::Unsat, st, solver, table);
            // (2) Saturation of the implied sets.
            for _ in 0..CHAIN_ROUNDS {
                let mut round = false;
                for id in [
                    RuleId::JoinImp,
                    RuleId::ChainImp,
                    RuleId::ChainImpG,
                    RuleId::ChainImpF,
                    RuleId::ChainImpX,
                    RuleId::PropagateW,
                ] {
                    round |= self.fire_loop(id, st, solver, table);
                }
                changed |= round;
                if !round {
                    break;
                }
            }
            // (3) Substitution.
            for id in [
                RuleId::SubstTrue,
                RuleId::SubstFalse,
                RuleId::SimplifyImpl,
                RuleId::SimplifyAnd,
                RuleId::SimplifyNonNested,
            ] {
                changed |= self.fire_loop(id, st, solver, table);
            }
            if !changed {
                break;
            }
        }
    }

    /// The full pipeline on one state.
    pub fn apply_rules(
        &mut self,
        st: &MonitorState,
        solver: &Solver,
        table: &mut PredicateTable,
    ) -> MonitorState {
        let mut st = st.clone();
        self.normalize(&mut st, solver, table);
        self.block(&mut st, solver, table);
        for id in [RuleId::GenInv, RuleId::GenReach, RuleId::GenInvP] {
            self.fire_loop(id, &mut st, solver, table);
        }
        self.block(&mut st, solver, table);
        st
    }
}

/// Checks the transformation soundness conditions on sampled lassos:
/// (a) formula-level equivalence including implied sets, (b) new implied
/// sets follow from the new `E` sets plus the old implied sets, (c) the
/// `E` sets only strengthen. Returns human-readable violations.
pub fn audit_transformation(
    before: &MonitorState,
    after: &MonitorState,
    lassos: &[Lasso],
) -> Vec<String> {
    let mut out = Vec::new();
    let conj_rp = |fs: Vec<Rpltl>| Rpltl::conj(fs).canon();
    let f1 = before.formula_with_imps();
    let f2 = after.formula_with_imps();
    let b_a_premise = conj_rp(
        after
            .e_a
            .iter()
            .cloned()
            .chain(before.imp_a.iter().map(Imp::to_rpltl))
            .collect(),
    );
    let b_a_concl = conj_rp(after.imp_a.iter().map(Imp::to_rpltl).collect());
    let b_g_premise = conj_rp(
        after
            .e_a
            .iter()
            .chain(&after.e_g)
            .cloned()
            .chain(before.imp_a.iter().chain(&before.imp_g).map(Imp::to_rpltl))
            .collect(),
    );
    let b_g_concl = conj_rp(after.imp_g.iter().map(Imp::to_rpltl).collect());
    for (i, rho) in lassos.iter().enumerate() {
        if lasso_eval(&f1, rho) != lasso_eval(&f2, rho) {
            out.push(format!("(a) formula equivalence broken on lasso #{i}"));
        }
        if lasso_eval(&b_a_premise, rho) && !lasso_eval(&b_a_concl, rho) {
            out.push(format!("(b) assumption implied set unjustified on lasso #{i}"));
        }
        if lasso_eval(&b_g_premise, rho) && !lasso_eval(&b_g_concl, rho) {
            out.push(format!("(b) guarantee implied set unjustified on lasso #{i}"));
        }
        for d in SIDES {
            let e2 = conj_rp(after.e(d).iter().cloned().collect());
            let e1 = conj_rp(before.e(d).iter().cloned().collect());
            if lasso_eval(&e2, rho) && !lasso_eval(&e1, rho) {
                out.push(format!("(c) E weakened on lasso #{i}"));
            }
        }
    }
    out
}

/// Deterministic sample of lassos over the given variables with values in
/// a small range, for the soundness audit.
pub fn sample_lassos(names: &[String], count: usize, seed: u64) -> Vec<Lasso> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..count {
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            names
                .iter()
                .map(|n| (crate::fol::Var::new(n.clone()), rng.gen_range(-2i64..=2)))
                .collect()
        };
        let stem_len = rng.gen_range(0..3);
        let loop_len = rng.gen_range(1..3);
        out.push(Lasso::new(
            (0..stem_len).map(|_| mk(&mut rng)).collect(),
            (0..loop_len).map(|_| mk(&mut rng)).collect(),
        ));
    }
    out
}

/// True when `needle` occurs as a (not necessarily contiguous)
/// subsequence of `haystack`.
pub fn is_subsequence(needle: &[RuleId], haystack: &[RuleId]) -> bool {
    let mut it = haystack.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::{parse_formula, parse_spec};
    use crate::solver::SolverConfig;

    fn pf(s: &str) -> Rpltl {
        parse_formula(s).unwrap()
    }

    fn qf(s: &str) -> Qf {
        pf(s).as_qf().unwrap().canon()
    }

    fn engine() -> (RulesEngine, Solver) {
        (RulesEngine::new(BTreeSet::new()), Solver::new(&SolverConfig::default()))
    }

    #[test]
    fn curr_and_imp_inv_examples() {
        let mut st = MonitorState::default();
        st.e_a.insert(pf("i = 0"));
        st.e_g.insert(pf("x = 0"));
        st.imp_a.insert(Imp::new(Qf::True, ImpBody::Now(qf("i > 0"))));
        st.imp_g.insert(Imp::new(Qf::True, ImpBody::Now(qf("x' - y = x"))));
        st.imp_g.insert(Imp::new(Qf::True, ImpBody::Next(qf("x > 0"))));
        assert_eq!(st.curr(Side::Assumption), qf("i = 0"));
        assert_eq!(st.curr(Side::Guarantee), qf("i = 0 && x = 0"));
        assert_eq!(st.imp_inv(Side::Assumption), qf("i > 0"));
        assert_eq!(st.imp_inv(Side::Guarantee), qf("x' - y = x"));
    }

    #[test]
    fn curr_filters_temporal_members() {
        let mut st = MonitorState::default();
        st.e_g.insert(pf("x = 0"));
        st.e_g.insert(pf("G (x' >= x)"));
        assert_eq!(st.curr(Side::Guarantee), qf("x = 0"));
    }

    #[test]
    fn imp_body_shapes() {
        assert_eq!(
            imp_body_shape(&pf("x' = x + 1")),
            Some((Qf::True, ImpBody::Now(qf("x' = x + 1"))))
        );
        // Non-temporal implications stay whole so guarded dynamics reach
        // the implied invariant.
        let (g, b) = imp_body_shape(&pf("e > 0 -> x' <= x + 2")).unwrap();
        assert_eq!(g, Qf::True);
        assert_eq!(b, ImpBody::Now(qf("e > 0 -> x' <= x + 2")));
        // Negated next-disjunct: X(c = 1) -> e = 1  ≡  e != 1 -> X(c != 1).
        let (g, b) = imp_body_shape(&pf("!X (c = 1) || e = 1")).unwrap();
        assert_eq!(g, qf("e != 1"));
        assert_eq!(b, ImpBody::Next(qf("c != 1")));
        // Two temporal disjuncts have no admissible shape.
        assert!(imp_body_shape(&pf("X (x = 0) || F (x = 1)")).is_none());
        let (g, b) = imp_body_shape(&pf("x = 0 -> F (x > 10)")).unwrap();
        assert_eq!(g, qf("x = 0"));
        assert_eq!(b, ImpBody::Finally(qf("x > 10")));
    }

    #[test]
    fn partition_places_safety_in_e() {
        let spec = parse_spec(
            "input e : int;\nvar x : int;\nguarantee x = 0 && G (x' >= x) && F (x >= 42) && G F (x > 1);\n",
        )
        .unwrap();
        let st = partition_initial(&spec);
        assert!(st.e_g.contains(&pf("x = 0")));
        assert!(st.e_g.contains(&pf("G (x' >= x)")));
        assert!(st.f_g.contains(&pf("F (x >= 42)")));
        assert!(st.f_g.contains(&pf("G F (x > 1)")), "eventuality must stay in F: {st}");
        assert!(st.imp_a.is_empty() && st.imp_g.is_empty());
    }

    #[test]
    fn partition_trivial_spec_is_empty() {
        let spec = parse_spec("var x : int;\n").unwrap();
        let st = partition_initial(&spec);
        assert_eq!(st, MonitorState::default());
    }

    #[test]
    fn unsat_detects_current_contradiction() {
        let (mut eng, solver) = engine();
        let mut table = PredicateTable::new(BTreeSet::new());
        let mut st = MonitorState::default();
        st.e_g.insert(pf("x = 0"));
        st.imp_g.insert(Imp::new(Qf::True, ImpBody::Now(qf("x != 0"))));
        let out = eng.apply_rules(&st, &solver, &mut table);
        assert_eq!(out.f_g, [Rpltl::False].into_iter().collect());
        assert_eq!(out.e_g, [Rpltl::False].into_iter().collect());
        assert!(eng.log.contains(&RuleId::Unsat), "{:?}", eng.log);
    }

    #[test]
    fn unsat_f_detects_liveness_clash() {
        let (mut eng, solver) = engine();
        let mut table = PredicateTable::new(BTreeSet::new());
        let mut st = MonitorState::default();
        st.e_g.insert(pf("x = 0"));
        st.imp_g.insert(Imp::new(qf("x = 0"), ImpBody::Finally(qf("y = 0"))));
        st.imp_g.insert(Imp::new(Qf::True, ImpBody::Now(qf("y != 0"))));
        let out = eng.apply_rules(&st, &solver, &mut table);
        assert_eq!(out.f_g, [Rpltl::False].into_iter().collect());
        assert!(eng.log.contains(&RuleId::UnsatF), "{:?}", eng.log);
        // The eventuality clash must be credited before the generic rule.
        assert!(!eng.log.contains(&RuleId::Unsat), "{:?}", eng.log);
    }

    #[test]
    fn invariant_generalization_pipeline() {
        // E_G = {x = 0, G x = y, G x' >= x}, F_G = {y = 0 -> F x = -5}:
        // the eventuality target x = -5 is unreachable (x stays
        // non-negative), which cascades into an overall contradiction.
        let (mut eng, solver) = engine();
        let spec = parse_spec(
            "var x : int;\nvar y : int;\nguarantee x = 0 && G (x = y) && G (x' >= x) && (y = 0 -> F (x = -5));\n",
        )
        .unwrap();
        let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
        let st = partition_initial(&spec);
        let out = eng.apply_rules(&st, &solver, &mut table);
        assert_eq!(out.f_g, [Rpltl::False].into_iter().collect(), "{out}");
        assert_eq!(out.e_g, [Rpltl::False].into_iter().collect(), "{out}");
        assert!(
            is_subsequence(
                &[
                    RuleId::PropagateG,
                    RuleId::GenInv,
                    RuleId::ChainImpG,
                    RuleId::SubstFalse,
                    RuleId::Unsat
                ],
                &eng.log
            ),
            "log: {:?}",
            eng.log
        );
    }

    #[test]
    fn reachability_generalization_pipeline() {
        // E_G = {x = 0, G x' > x}, F_G = {F x > 1000}: a large enough
        // fixpoint budget proves the eventuality and discharges it.
        let (mut eng, solver) = engine();
        eng.budget = FixpointBudget { max_iters: 1100 };
        let spec = parse_spec(
            "var x : int;\nguarantee x = 0 && G (x' > x) && F (x > 1000);\n",
        )
        .unwrap();
        let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
        let st = partition_initial(&spec);
        let out = eng.apply_rules(&st, &solver, &mut table);
        assert!(out.f_g.is_empty(), "{out}");
        assert!(out.e_g.contains(&pf("x = 0")));
        assert!(out.e_g.contains(&pf("G (x' > x)")));
        assert!(out
            .imp_g
            .contains(&Imp::new(qf("x = 0"), ImpBody::Finally(qf("x > 1000")))));
        assert!(
            is_subsequence(&[RuleId::GenReach, RuleId::SimplifyNonNested], &eng.log),
            "log: {:?}",
            eng.log
        );
    }

    #[test]
    fn precise_invariant_generalization() {
        // E_G = {x = 1, G x' >= 2x}: the reachable set is x = 1 ∨ x >= 2.
        let (mut eng, solver) = engine();
        eng.enable_gen_inv_p = true;
        let spec = parse_spec("var x : int;\nguarantee x = 1 && G (x' >= 2*x);\n").unwrap();
        let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
        let st = partition_initial(&spec);
        let out = eng.apply_rules(&st, &solver, &mut table);
        assert!(eng.log.contains(&RuleId::GenInvP), "log: {:?}", eng.log);
        let inv = out.imp_inv(Side::Guarantee);
        // ChainImpG promotes the generated invariant to unconditional.
        assert!(eng.log.contains(&RuleId::ChainImpG), "log: {:?}", eng.log);
        // ImpInv also carries the dynamics; it must pin the reachable set.
        assert!(solver.entails(&inv, &qf("x = 1 || x >= 2")), "inv: {inv}");
    }

    #[test]
    fn gen_inv_p_once_per_e_set() {
        let (mut eng, solver) = engine();
        eng.enable_gen_inv_p = true;
        let spec = parse_spec("var x : int;\nguarantee x = 1 && G (x' >= 2*x);\n").unwrap();
        let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
        let st = partition_initial(&spec);
        let _ = eng.apply_rules(&st, &solver, &mut table);
        let first = eng.log.iter().filter(|r| **r == RuleId::GenInvP).count();
        let _ = eng.apply_rules(&st, &solver, &mut table);
        let second = eng.log.iter().filter(|r| **r == RuleId::GenInvP).count();
        assert_eq!(first, 1);
        assert_eq!(second, first, "second visit of the same E set must not re-fire");
    }

    #[test]
    fn propagate_w_pins_hold_conditions() {
        let (mut eng, solver) = engine();
        let mut table = PredicateTable::new(BTreeSet::new());
        let mut st = MonitorState::default();
        st.e_g.insert(pf("(x >= 0) W (x = -1)"));
        st.e_g.insert(pf("(x <= 5) W (x = 9)"));
        st.imp_g.insert(Imp::new(Qf::True, ImpBody::Now(qf("x >= 0 && x <= 5"))));
        let out = eng.apply_rules(&st, &solver, &mut table);
        assert!(eng.log.contains(&RuleId::PropagateW), "{:?}", eng.log);
        // Normalization renders the unconditional invariant in `Now` form.
        let expected = Imp::new(Qf::True, ImpBody::Now(qf("x >= 0 && x <= 5")));
        assert!(out.imp_g.contains(&expected), "{out}");
    }

    #[test]
    fn next_ext_ties_primed_and_next() {
        let (mut eng, solver) = engine();
        let mut table = PredicateTable::new(BTreeSet::new());
        let mut st = MonitorState::default();
        st.f_g.insert(pf("x' = 5"));
        let mut env = RuleEnv {
            solver: &solver,
            table: &mut table,
            inputs: BTreeSet::new(),
            budget: FixpointBudget::default(),
            enable_gen_inv_p: false,
            gen_inv_p_seen: &mut eng.gen_inv_p_seen,
            reach_cache: &mut eng.reach_cache,
            log: &mut eng.log,
        };
        let out = try_rule(RuleId::NextExt, &st, &mut env).unwrap();
        assert!(out.f_g.contains(&pf("x' = 5 && X (x = 5)")), "{out}");
        // Idempotent: the target form does not re-fire.
        assert!(try_rule(RuleId::NextExt, &out, &mut env).is_none());
    }

    #[test]
    fn audit_passes_on_sound_pipeline() {
        let (mut eng, solver) = engine();
        eng.audit_lassos = sample_lassos(&["x".into(), "y".into()], 40, 7);
        let spec = parse_spec(
            "var x : int;\nvar y : int;\nguarantee x = 0 && G (x = y) && G (x' >= x) && (y = 0 -> F (x = -5));\n",
        )
        .unwrap();
        let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
        let st = partition_initial(&spec);
        let _ = eng.apply_rules(&st, &solver, &mut table);
        assert!(eng.violations.is_empty(), "soundness violations: {:?}", eng.violations);
    }

    #[test]
    fn audit_flags_unsound_transformation() {
        let lassos = sample_lassos(&["x".into()], 30, 3);
        let mut before = MonitorState::default();
        before.f_g.insert(pf("F (x = 1)"));
        let mut after = before.clone();
        // Fabricated: dropping an obligation changes the formula.
        after.f_g.clear();
        let issues = audit_transformation(&before, &after, &lassos);
        assert!(!issues.is_empty());
    }

    #[test]
    fn formula_of_state() {
        let mut st = MonitorState::default();
        st.e_a.insert(pf("i > 0"));
        st.f_g.insert(pf("F (x = 1)"));
        st.e_g.insert(pf("x = 0"));
        assert_eq!(st.formula(), pf("i > 0 -> (F (x = 1) && x = 0)"));
        let mut dead = MonitorState::default();
        dead.set_false(Side::Guarantee);
        assert_eq!(dead.formula(), Rpltl::False);
    }
}

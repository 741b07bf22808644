//! Bounded symbolic fixpoint computations over the transition relation
//! induced by an invariant formula: inductiveness checks, backward
//! forced-reachability, and forward reachable-set approximation.

use std::collections::{BTreeMap, BTreeSet};

use crate::fol::{Fol, Qf, Var};
use crate::solver::Solver;

/// Iteration bound for the fixpoint loops. Exhausting it makes the
/// computation answer conservatively (entailment not established, no
/// reachable set), never unsoundly.
#[derive(Clone, Copy, Debug)]
pub struct FixpointBudget {
    pub max_iters: usize,
}

impl Default for FixpointBudget {
    fn default() -> Self {
        FixpointBudget { max_iters: 25 }
    }
}

/// Checks the three premises of invariant generalization: `θ ⊨ α`,
/// `γ ⊨ θ`, and `θ` inductive under the invariant (`θ ∧ inv ⊨ θ'`).
pub fn check_inductive(
    theta: &Qf,
    alpha: &Qf,
    gamma: &Qf,
    inv: &Qf,
    inputs: &BTreeSet<String>,
    solver: &Solver,
) -> bool {
    solver.entails(theta, alpha)
        && solver.entails(gamma, theta)
        && solver.entails(&Qf::conj([theta.clone(), inv.clone()]).canon(), &theta.prime(inputs))
}

/// The variables to quantify for a one-step image or preimage: inputs and,
/// depending on direction, the primed or unprimed program variables.
fn quantified_vars(f: &Fol, inputs: &BTreeSet<String>, primed: bool) -> Vec<Var> {
    f.free_vars()
        .into_iter()
        .filter(|v| {
            if inputs.contains(&v.name) && !v.primed {
                true
            } else {
                v.primed == primed
            }
        })
        .collect()
}

fn unprime_all(q: &Qf) -> Qf {
    let map: BTreeMap<Var, Var> = q
        .vars()
        .into_iter()
        .filter(|v| v.primed)
        .map(|v| (v.clone(), v.unprime()))
        .collect();
    q.rename(&map)
}

/// Decides whether every `γ`-state is forced to reach a `β`-state under
/// the invariant: `γ ⊨ μB. β ∨ ∀I ∀X'. inv → B'`. Quantifiers are
/// eliminated eagerly each iteration; the answer is `false` when the bound
/// or the elimination budget is exhausted first.
pub fn reach_entails(
    gamma: &Qf,
    beta: &Qf,
    inv: &Qf,
    inputs: &BTreeSet<String>,
    solver: &Solver,
    budget: &FixpointBudget,
) -> bool {
    let mut b = beta.canon();
    for _ in 0..budget.max_iters {
        if solver.entails(gamma, &b) {
            return true;
        }
        let body = Fol::implies(Fol::Qf(inv.clone()), Fol::Qf(b.prime(inputs)));
        let vars = quantified_vars(&body, inputs, true);
        let pre = match solver.qe(&Fol::Forall(vars, Box::new(body))) {
            Some(q) => q,
            None => return false,
        };
        let next = solver.simplify_dnf(&Qf::or(vec![beta.clone(), pre]));
        if solver.entails(&next, &b) {
            // Fixpoint reached without covering γ.
            return false;
        }
        b = next;
    }
    false
}

/// Forward reachable states from `γ` under the invariant, as a formula
/// over the unprimed program variables. Returns `None` when the iteration
/// does not converge within the budget. A returned set is verified to
/// contain `γ` and to be closed under the transition relation.
pub fn reachable_set(
    gamma: &Qf,
    inv: &Qf,
    inputs: &BTreeSet<String>,
    solver: &Solver,
    budget: &FixpointBudget,
) -> Option<Qf> {
    let init = project_states(gamma, inputs, solver)?;
    let mut r = init.clone();
    let mut converged = false;
    for _ in 0..budget.max_iters {
        let step = Fol::Qf(Qf::conj([r.clone(), inv.clone()]).canon());
        let vars = quantified_vars(&step, inputs, false);
        let image = unprime_all(&solver.qe(&Fol::Exists(vars, Box::new(step)))?).canon();
        let next = solver.simplify_dnf(&Qf::or(vec![r.clone(), image]));
        if solver.entails(&next, &r) {
            converged = true;
            break;
        }
        r = next;
    }
    if !converged {
        return None;
    }
    // The fixpoint is only trusted after re-verification.
    let closed = {
        let pre = Qf::conj([r.clone(), inv.clone()]).canon();
        solver.entails(&pre, &r.prime(inputs))
    };
    if closed && solver.entails(&init, &r) {
        Some(r)
    } else {
        None
    }
}

/// Projects a constraint onto the unprimed program variables by
/// eliminating inputs and primed variables.
fn project_states(gamma: &Qf, inputs: &BTreeSet<String>, solver: &Solver) -> Option<Qf> {
    let f = Fol::Qf(gamma.clone());
    let vars = quantified_vars(&f, inputs, true);
    if vars.is_empty() {
        return Some(gamma.canon());
    }
    solver.qe(&Fol::Exists(vars, Box::new(f))).map(|q| q.canon())
}

//! On-the-fly monitor construction: worklist exploration with state
//! deduplication, the eventuality-discharge post-pass over the finished
//! graph, verdict labeling, and the DOT/JSON exports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::expansion::{expand, propagate, relevant_letters, Letter, PredicateTable};
use crate::fixpoint::FixpointBudget;
use crate::fol::Qf;
use crate::ltl::{lasso_eval, parse_formula, Lasso, Rpltl, Spec};
use crate::rules::{
    imp_body_shape, partition_initial, sample_lassos, Imp, MonitorState, RuleId, RulesEngine,
    Side, SIDES,
};
use crate::solver::Solver;
use thiserror::Error;

/// Verdict of a monitor state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Unsat,
    Safety,
    Open,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Unsat => write!(f, "UNSAT"),
            Verdict::Safety => write!(f, "SAFETY"),
            Verdict::Open => write!(f, "OPEN"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MonitorConfig {
    pub max_states: usize,
    pub budget: FixpointBudget,
    pub enable_gen_inv_p: bool,
    /// Runs the per-rule transformation soundness audit during the build.
    pub debug_soundness: bool,
    pub audit_seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            max_states: 5000,
            budget: FixpointBudget::default(),
            enable_gen_inv_p: false,
            debug_soundness: false,
            audit_seed: 0xD1CE,
        }
    }
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("state cap exceeded: more than {0} monitor states")]
    StateCap(usize),
    #[error("verdict monotonicity violated on transition {0} -> {1}")]
    Monotonicity(usize, usize),
    #[error("malformed monitor JSON: {0}")]
    Json(String),
}

/// A deterministic monitor over three-valued letters.
///
/// # Invariant
/// The transition function is total over theory-consistent letters:
/// every concrete predicate valuation is consistent with exactly one
/// stored letter per state.
pub struct Monitor {
    pub states: Vec<MonitorState>,
    pub init: usize,
    pub table: PredicateTable,
    pub transitions: BTreeMap<usize, BTreeMap<Letter, usize>>,
    pub verdicts: Vec<Verdict>,
    pub inputs: BTreeSet<String>,
    pub programs: BTreeSet<String>,
    /// Rule applications in firing order across the whole build.
    pub rule_log: Vec<RuleId>,
    /// Soundness-audit findings (empty unless debug mode found problems).
    pub violations: Vec<String>,
    /// Number of repeated-eventuality obligations removed by the
    /// discharge pass.
    pub discharged: usize,
}

/// The raw successor of a state under a letter: every set member is
/// expanded, the implied sets carry over unchanged, and next-state facts
/// forced by the letter join `E_G`.
pub fn next_state_raw(
    st: &MonitorState,
    a: &Letter,
    table: &PredicateTable,
    solver: &Solver,
) -> MonitorState {
    let mut out = MonitorState::default();
    for d in SIDES {
        for f in st.f(d) {
            let e = expand(f, a, table);
            if e != Rpltl::True {
                out.f_mut(d).insert(e);
            }
        }
        for f in st.e(d) {
            let e = expand(f, a, table);
            if e != Rpltl::True {
                out.e_mut(d).insert(e);
            }
        }
        *out.imp_mut(d) = st.imp(d).clone();
    }
    for q in propagate(a, table, solver) {
        let f = Rpltl::Atom(q).canon();
        if f != Rpltl::True {
            out.e_g.insert(f);
        }
    }
    out
}

/// Interns every atom of the state's formulas so letter enumeration can
/// branch on them (rules may introduce fresh atoms, e.g. primed copies).
pub fn intern_state_atoms(st: &MonitorState, table: &mut PredicateTable) {
    for d in SIDES {
        for f in st.f(d).iter().chain(st.e(d)) {
            for atom in f.atoms() {
                table.intern(&atom);
            }
        }
    }
}

/// Opaque propositional view: collects the units (atoms and maximal
/// temporal subformulas) of a formula.
fn opaque_units(f: &Rpltl, out: &mut BTreeSet<Rpltl>) {
    match f {
        Rpltl::True | Rpltl::False => {}
        Rpltl::And(gs) | Rpltl::Or(gs) => {
            for g in gs {
                opaque_units(g, out);
            }
        }
        Rpltl::Not(g) => opaque_units(g, out),
        Rpltl::Implies(a, b) => {
            opaque_units(a, out);
            opaque_units(b, out);
        }
        _ => {
            out.insert(f.clone());
        }
    }
}

fn eval_opaque(f: &Rpltl, assign: &BTreeMap<Rpltl, bool>) -> bool {
    if let Some(v) = assign.get(f) {
        return *v;
    }
    match f {
        Rpltl::True => true,
        Rpltl::False => false,
        Rpltl::And(gs) => gs.iter().all(|g| eval_opaque(g, assign)),
        Rpltl::Or(gs) => gs.iter().any(|g| eval_opaque(g, assign)),
        Rpltl::Not(g) => !eval_opaque(g, assign),
        Rpltl::Implies(a, b) => !eval_opaque(a, assign) || eval_opaque(b, assign),
        _ => unreachable!("unit not in assignment: {f}"),
    }
}

const MAX_OPAQUE_UNITS: usize = 14;

/// Propositional equivalence treating atoms and temporal subformulas as
/// opaque propositions; conservative (falls back to equality) past the
/// enumeration cap.
fn prop_equiv(f1: &Rpltl, f2: &Rpltl) -> bool {
    if f1 == f2 {
        return true;
    }
    let mut units = BTreeSet::new();
    opaque_units(f1, &mut units);
    opaque_units(f2, &mut units);
    if units.len() > MAX_OPAQUE_UNITS {
        return false;
    }
    let units: Vec<Rpltl> = units.into_iter().collect();
    for mask in 0u64..(1u64 << units.len()) {
        let assign: BTreeMap<Rpltl, bool> = units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), mask & (1 << i) != 0))
            .collect();
        if eval_opaque(f1, &assign) != eval_opaque(f2, &assign) {
            return false;
        }
    }
    true
}

/// Componentwise propositional equivalence of two monitor states.
fn states_equivalent(a: &MonitorState, b: &MonitorState) -> bool {
    let conj = |s: &BTreeSet<Rpltl>| Rpltl::conj(s.iter().cloned()).canon();
    for d in SIDES {
        if a.imp(d) != b.imp(d) {
            return false;
        }
        if !prop_equiv(&conj(a.f(d)), &conj(b.f(d))) {
            return false;
        }
        if !prop_equiv(&conj(a.e(d)), &conj(b.e(d))) {
            return false;
        }
    }
    true
}

/// Builds the monitor by worklist exploration, then runs the discharge
/// pass and labels verdicts.
pub fn build(
    spec: &Spec,
    solver: &Solver,
    config: &MonitorConfig,
) -> Result<Monitor, MonitorError> {
    let inputs = spec.input_names();
    let mut table = PredicateTable::for_formula(&spec.formula(), &inputs);
    let mut engine = RulesEngine::new(inputs.clone());
    engine.budget = config.budget;
    engine.enable_gen_inv_p = config.enable_gen_inv_p;
    if config.debug_soundness {
        let names: Vec<String> = inputs
            .iter()
            .cloned()
            .chain(spec.program_names().iter().cloned())
            .collect();
        engine.audit_lassos = sample_lassos(&names, 40, config.audit_seed);
    }

    let init = engine.apply_rules(&partition_initial(spec), solver, &mut table);
    intern_state_atoms(&init, &mut table);
    let mut states: Vec<MonitorState> = vec![init];
    let mut by_key: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    by_key.insert(states[0].canonical_key(), vec![0]);
    let mut transitions: BTreeMap<usize, BTreeMap<Letter, usize>> = BTreeMap::new();
    let mut work: VecDeque<usize> = VecDeque::from([0]);

    while let Some(i) = work.pop_front() {
        let st = states[i].clone();
        let formulas: Vec<&Rpltl> = SIDES
            .iter()
            .flat_map(|d| st.f(*d).iter().chain(st.e(*d)))
            .collect();
        let letters = relevant_letters(&formulas, None, &table, solver);
        for a in letters {
            let raw = next_state_raw(&st, &a, &table, solver);
            let succ = engine.apply_rules(&raw, solver, &mut table);
            intern_state_atoms(&succ, &mut table);
            let key = succ.canonical_key();
            let mut id = None;
            if let Some(ids) = by_key.get(&key) {
                id = ids.iter().copied().find(|j| states[*j] == succ);
            }
            if id.is_none() {
                // Hash miss: escalate to the propositional-equivalence
                // merge over existing states.
                id = (0..states.len()).find(|j| states_equivalent(&states[*j], &succ));
            }
            let id = match id {
                Some(id) => id,
                None => {
                    if states.len() >= config.max_states {
                        return Err(MonitorError::StateCap(config.max_states));
                    }
                    states.push(succ);
                    let id = states.len() - 1;
                    by_key.entry(key).or_default().push(id);
                    work.push_back(id);
                    id
                }
            };
            transitions.entry(i).or_default().insert(a, id);
        }
    }

    let mut m = Monitor {
        verdicts: vec![Verdict::Open; states.len()],
        states,
        init: 0,
        table,
        transitions,
        inputs,
        programs: spec.program_names(),
        rule_log: Vec::new(),
        violations: Vec::new(),
        discharged: 0,
    };
    discharge_gf(&mut m, &mut engine, solver);
    m.rule_log = std::mem::take(&mut engine.log);
    m.violations = std::mem::take(&mut engine.violations);
    label_verdicts(&mut m)?;
    Ok(m)
}

/// Non-nested repeated eventualities `G F β` in a formula.
fn gf_obligations(f: &Rpltl, out: &mut BTreeSet<Qf>) {
    match f {
        Rpltl::Globally(g) => {
            if let Rpltl::Finally(b) = &**g {
                if let Some(q) = b.as_qf() {
                    out.insert(q.canon());
                }
            }
        }
        Rpltl::Not(g) => gf_obligations(g, out),
        Rpltl::And(gs) | Rpltl::Or(gs) => {
            for g in gs {
                gf_obligations(g, out);
            }
        }
        Rpltl::Implies(a, b) => {
            gf_obligations(a, out);
            gf_obligations(b, out);
        }
        _ => {}
    }
}

/// The discharge pass for repeated eventualities: a `G F β` obligation is
/// replaced by `⊤` in every state from which all paths keep reaching
/// states whose implied sets force `F β` (or trivial states), computed as
/// nested fixpoints over the finished graph.
pub fn discharge_gf(m: &mut Monitor, engine: &mut RulesEngine, solver: &Solver) {
    let n = m.states.len();
    let mut betas: BTreeSet<Qf> = BTreeSet::new();
    for st in &m.states {
        for f in &st.f_g {
            gf_obligations(f, &mut betas);
        }
    }
    for beta in betas {
        let q_triv: BTreeSet<usize> = (0..n)
            .filter(|&q| matches!(m.states[q].formula(), Rpltl::True | Rpltl::False))
            .collect();
        let q_f: BTreeSet<usize> = (0..n)
            .filter(|&q| {
                let st = &m.states[q];
                let now =
                    Qf::conj([st.curr(Side::Guarantee), st.imp_inv(Side::Guarantee)]).canon();
                st.imp_g.iter().any(|imp| {
                    matches!(&imp.body, crate::rules::ImpBody::Finally(b) if *b == beta)
                        && solver.entails(&now, &imp.guard)
                })
            })
            .collect();
        // AF: states all of whose paths reach the target set.
        let mut af: BTreeSet<usize> = q_f.union(&q_triv).copied().collect();
        loop {
            let mut grew = false;
            for q in 0..n {
                if af.contains(&q) {
                    continue;
                }
                let succs = m.transitions.get(&q);
                let all_in = succs
                    .map(|t| !t.is_empty() && t.values().all(|s| af.contains(s)))
                    .unwrap_or(false);
                if all_in {
                    af.insert(q);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        // AG over AF: largest subset closed under successors.
        let mut ag = af.clone();
        loop {
            let stay: BTreeSet<usize> = ag
                .iter()
                .copied()
                .filter(|q| {
                    m.transitions
                        .get(q)
                        .map(|t| t.values().all(|s| ag.contains(s)))
                        .unwrap_or(true)
                })
                .collect();
            if stay.len() == ag.len() {
                break;
            }
            ag = stay;
        }
        let pattern =
            Rpltl::globally(Rpltl::finally(Rpltl::Atom(beta.clone()).canon())).canon();
        for q in ag {
            let replaced: BTreeSet<Rpltl> = m.states[q]
                .f_g
                .iter()
                .map(|f| f.replace(&pattern, &Rpltl::True, true).canon())
                .filter(|f| *f != Rpltl::True)
                .collect();
            if replaced != m.states[q].f_g {
                m.discharged += 1;
                m.states[q].f_g = replaced;
                m.states[q] = engine.apply_rules(&m.states[q], solver, &mut m.table);
            }
        }
    }
}

/// Assigns verdicts: UNSAT when the state formula is `⊥`, SAFETY when
/// every reachable state's formula is a syntactic safety formula, OPEN
/// otherwise; then re-asserts verdict monotonicity over the graph.
pub fn label_verdicts(m: &mut Monitor) -> Result<(), MonitorError> {
    let n = m.states.len();
    let formulas: Vec<Rpltl> = m.states.iter().map(|s| s.formula()).collect();
    // Backward closure: states that can reach a non-safety formula.
    let mut tainted: Vec<bool> = formulas.iter().map(|f| !f.is_syntactic_safety()).collect();
    loop {
        let mut grew = false;
        for q in 0..n {
            if tainted[q] {
                continue;
            }
            if let Some(t) = m.transitions.get(&q) {
                if t.values().any(|s| tainted[*s]) {
                    tainted[q] = true;
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    for q in 0..n {
        m.verdicts[q] = if formulas[q] == Rpltl::False {
            Verdict::Unsat
        } else if !tainted[q] {
            Verdict::Safety
        } else {
            Verdict::Open
        };
    }
    for (from, succs) in &m.transitions {
        for to in succs.values() {
            let bad = match m.verdicts[*from] {
                Verdict::Unsat => m.verdicts[*to] != Verdict::Unsat,
                Verdict::Safety => m.verdicts[*to] == Verdict::Open,
                Verdict::Open => false,
            };
            if bad {
                return Err(MonitorError::Monotonicity(*from, *to));
            }
        }
    }
    Ok(())
}

/// Finds the unique stored transition whose three-valued letter is
/// consistent with a fully-determined one.
pub fn step(m: &Monitor, q: usize, concrete: &Letter) -> Option<usize> {
    let succs = m.transitions.get(&q)?;
    for (letter, to) in succs {
        let pos_ok = letter.pos.iter().all(|p| concrete.pos.contains(p));
        let neg_ok = letter.neg.iter().all(|p| concrete.neg.contains(p));
        if pos_ok && neg_ok {
            return Some(*to);
        }
    }
    None
}

/// Walks the monitor along a lasso for `steps` steps, returning the state
/// indices visited (position 0 is the initial state).
pub fn run(m: &Monitor, rho: &Lasso, steps: usize) -> Vec<usize> {
    let mut out = vec![m.init];
    let mut q = m.init;
    for i in 0..steps {
        let v = rho.step_valuation(i);
        let concrete = Letter::from_valuation(&m.table, &v);
        match step(m, q, &concrete) {
            Some(next) => {
                q = next;
                out.push(q);
            }
            None => break,
        }
    }
    out
}

/// Bounded verdict soundness oracle: an UNSAT visit refutes the lasso, a
/// SAFETY visit on an UNSAT-free periodic run confirms it.
pub fn check_verdict_soundness(m: &Monitor, spec: &Spec, lassos: &[Lasso]) -> Vec<String> {
    let phi = spec.formula();
    let mut out = Vec::new();
    for (i, rho) in lassos.iter().enumerate() {
        let steps = rho.stem.len() + 2 * rho.looping.len() + 2;
        let visited = run(m, rho, steps);
        if visited.len() < steps + 1 {
            out.push(format!("lasso #{i}: no transition matched (totality broken)"));
            continue;
        }
        let sat = lasso_eval(&phi, rho);
        let any_unsat = visited.iter().any(|q| m.verdicts[*q] == Verdict::Unsat);
        let any_safety = visited.iter().any(|q| m.verdicts[*q] == Verdict::Safety);
        if any_unsat && sat {
            out.push(format!("lasso #{i}: UNSAT verdict on a satisfying lasso"));
        }
        if any_safety && !any_unsat && !sat {
            out.push(format!(
                "lasso #{i}: SAFETY verdict but the lasso violates the specification"
            ));
        }
    }
    out
}

/// Bounded state-correctness oracle: the specification holds on a lasso
/// iff the current state's formula holds on the corresponding suffix.
pub fn check_state_correctness(m: &Monitor, spec: &Spec, lassos: &[Lasso]) -> Vec<String> {
    let phi = spec.formula();
    let mut out = Vec::new();
    for (i, rho) in lassos.iter().enumerate() {
        let sat = lasso_eval(&phi, rho);
        let visited = run(m, rho, rho.stem.len() + rho.looping.len());
        for (k, q) in visited.iter().enumerate() {
            let suffix_sat = lasso_eval(&m.states[*q].formula(), &rho.shift(k));
            if suffix_sat != sat {
                out.push(format!(
                    "lasso #{i} position {k}: state {q} formula truth {suffix_sat} but specification truth {sat}"
                ));
                break;
            }
        }
    }
    out
}

fn verdict_color(v: Verdict) -> &'static str {
    match v {
        Verdict::Unsat => "indianred1",
        Verdict::Safety => "palegreen",
        Verdict::Open => "gray85",
    }
}

/// DOT export with verdict-colored nodes and letter-labeled edges.
pub fn export_dot(m: &Monitor) -> String {
    let mut s = String::from("digraph monitor {\n  rankdir=LR;\n  node [style=filled];\n");
    for (q, st) in m.states.iter().enumerate() {
        let label = format!("q{}\\n{}", q, st.formula()).replace('"', "\\\"");
        s.push_str(&format!(
            "  q{q} [label=\"{label}\", fillcolor={}];\n",
            verdict_color(m.verdicts[q])
        ));
    }
    s.push_str(&format!("  init [shape=point]; init -> q{};\n", m.init));
    for (from, succs) in &m.transitions {
        for (letter, to) in succs {
            let lbl = letter.formula(&m.table).to_string().replace('"', "\\\"");
            s.push_str(&format!("  q{from} -> q{to} [label=\"{lbl}\"];\n"));
        }
    }
    s.push_str("}\n");
    s
}

fn formulas_json(set: &BTreeSet<Rpltl>) -> serde_json::Value {
    serde_json::Value::Array(
        set.iter().map(|f| serde_json::Value::String(f.to_string())).collect(),
    )
}

/// JSON export of the full monitor (schema stable and deterministic).
pub fn export_json(m: &Monitor) -> String {
    use serde_json::{json, Value};
    let predicates: Vec<Value> = (0..m.table.len())
        .map(|i| Value::String(m.table.get(i).qf.to_string()))
        .collect();
    let states: Vec<Value> = m
        .states
        .iter()
        .enumerate()
        .map(|(q, st)| {
            json!({
                "id": q,
                "verdict": m.verdicts[q].to_string(),
                "formula_text": st.formula().to_string(),
                "f_a": formulas_json(&st.f_a),
                "e_a": formulas_json(&st.e_a),
                "f_g": formulas_json(&st.f_g),
                "e_g": formulas_json(&st.e_g),
                "imp_a": serde_json::Value::Array(
                    st.imp_a.iter().map(|i| Value::String(i.to_rpltl().to_string())).collect()),
                "imp_g": serde_json::Value::Array(
                    st.imp_g.iter().map(|i| Value::String(i.to_rpltl().to_string())).collect()),
            })
        })
        .collect();
    let transitions: Vec<Value> = m
        .transitions
        .iter()
        .flat_map(|(from, succs)| {
            succs.iter().map(move |(letter, to)| {
                json!({
                    "from": from,
                    "letter": {
                        "true": letter.pos.iter().collect::<Vec<_>>(),
                        "false": letter.neg.iter().collect::<Vec<_>>(),
                    },
                    "to": to,
                })
            })
        })
        .collect();
    let doc = json!({
        "predicates": predicates,
        "states": states,
        "init": m.init,
        "transitions": transitions,
    });
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

fn parse_set(v: &serde_json::Value, field: &str) -> Result<BTreeSet<Rpltl>, MonitorError> {
    let arr = v
        .get(field)
        .and_then(|x| x.as_array())
        .ok_or_else(|| MonitorError::Json(format!("missing array {field}")))?;
    arr.iter()
        .map(|x| {
            let s = x
                .as_str()
                .ok_or_else(|| MonitorError::Json(format!("non-string in {field}")))?;
            parse_formula(s).map_err(|e| MonitorError::Json(format!("{field}: {e}")))
        })
        .collect()
}

fn parse_imps(v: &serde_json::Value, field: &str) -> Result<BTreeSet<Imp>, MonitorError> {
    let fs = parse_set(v, field)?;
    fs.into_iter()
        .filter(|f| *f != Rpltl::True)
        .map(|f| match &f {
            Rpltl::Globally(psi) => imp_body_shape(psi)
                .map(|(g, b)| Imp::new(g, b))
                .ok_or_else(|| MonitorError::Json(format!("bad implied formula {f}"))),
            _ => Err(MonitorError::Json(format!("implied formula not G-rooted: {f}"))),
        })
        .collect()
}

/// Reconstructs a monitor from its JSON export; round-trips on canonical
/// keys.
pub fn import_json(
    text: &str,
    inputs: &BTreeSet<String>,
    programs: &BTreeSet<String>,
) -> Result<Monitor, MonitorError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| MonitorError::Json(e.to_string()))?;
    let mut table = PredicateTable::new(inputs.clone());
    for p in doc
        .get("predicates")
        .and_then(|x| x.as_array())
        .ok_or_else(|| MonitorError::Json("missing predicates".into()))?
    {
        let s = p.as_str().ok_or_else(|| MonitorError::Json("non-string predicate".into()))?;
        let f = parse_formula(s).map_err(|e| MonitorError::Json(e.to_string()))?;
        let q = f
            .as_qf()
            .ok_or_else(|| MonitorError::Json(format!("temporal predicate {s}")))?;
        table.intern(&q);
    }
    let mut states = Vec::new();
    let mut verdicts = Vec::new();
    for s in doc
        .get("states")
        .and_then(|x| x.as_array())
        .ok_or_else(|| MonitorError::Json("missing states".into()))?
    {
        let mut st = MonitorState::default();
        st.f_a = parse_set(s, "f_a")?;
        st.e_a = parse_set(s, "e_a")?;
        st.f_g = parse_set(s, "f_g")?;
        st.e_g = parse_set(s, "e_g")?;
        st.imp_a = parse_imps(s, "imp_a")?;
        st.imp_g = parse_imps(s, "imp_g")?;
        verdicts.push(match s.get("verdict").and_then(|v| v.as_str()) {
            Some("UNSAT") => Verdict::Unsat,
            Some("SAFETY") => Verdict::Safety,
            Some("OPEN") => Verdict::Open,
            other => return Err(MonitorError::Json(format!("bad verdict {other:?}"))),
        });
        states.push(st);
    }
    let init = doc
        .get("init")
        .and_then(|x| x.as_u64())
        .ok_or_else(|| MonitorError::Json("missing init".into()))? as usize;
    let mut transitions: BTreeMap<usize, BTreeMap<Letter, usize>> = BTreeMap::new();
    for t in doc
        .get("transitions")
        .and_then(|x| x.as_array())
        .ok_or_else(|| MonitorError::Json("missing transitions".into()))?
    {
        let from = t.get("from").and_then(|x| x.as_u64()).unwrap_or(u64::MAX) as usize;
        let to = t.get("to").and_then(|x| x.as_u64()).unwrap_or(u64::MAX) as usize;
        if from >= states.len() || to >= states.len() {
            return Err(MonitorError::Json("transition endpoint out of range".into()));
        }
        let mut letter = Letter::default();
        let get_ids = |key: &str| -> Vec<usize> {
            t.get("letter")
                .and_then(|l| l.get(key))
                .and_then(|x| x.as_array())
                .map(|a| a.iter().filter_map(|v| v.as_u64()).map(|v| v as usize).collect())
                .unwrap_or_default()
        };
        for id in get_ids("true") {
            letter.set(id, true, true);
        }
        for id in get_ids("false") {
            letter.set(id, true, false);
        }
        transitions.entry(from).or_default().insert(letter, to);
    }
    Ok(Monitor {
        states,
        init,
        table,
        transitions,
        verdicts,
        inputs: inputs.clone(),
        programs: programs.clone(),
        rule_log: Vec::new(),
        violations: Vec::new(),
        discharged: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::{parse_formula, parse_spec};
    use crate::rules::{is_subsequence, ImpBody};
    use crate::solver::SolverConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pf(s: &str) -> Rpltl {
        parse_formula(s).unwrap()
    }

    fn qf(s: &str) -> Qf {
        pf(s).as_qf().unwrap().canon()
    }

    fn solver() -> Solver {
        Solver::new(&SolverConfig::default())
    }

    fn random_lassos(names: &[&str], count: usize, seed: u64, extra: &[i64]) -> Vec<Lasso> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<i64> = (-2..=2).collect();
        values.extend_from_slice(extra);
        let mut out = Vec::new();
        for _ in 0..count {
            let mut mk = |rng: &mut ChaCha8Rng| {
                names
                    .iter()
                    .map(|n| {
                        (
                            crate::fol::Var::new(n.to_string()),
                            values[rng.gen_range(0..values.len())],
                        )
                    })
                    .collect()
            };
            let stem = rng.gen_range(0..=3);
            let looping = rng.gen_range(1..=2);
            out.push(Lasso::new(
                (0..stem).map(|_| mk(&mut rng)).collect(),
                (0..looping).map(|_| mk(&mut rng)).collect(),
            ));
        }
        out
    }

    #[test]
    fn pure_safety_spec_is_all_safety() {
        let spec = parse_spec("var x : int;\nguarantee G (x' = x);\n").unwrap();
        let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
        assert!(m.states.len() <= 2, "{} states", m.states.len());
        // The initial state and every non-violating continuation are
        // SAFETY; breaking the invariant falls into the UNSAT sink.
        assert_eq!(m.verdicts[m.init], Verdict::Safety);
        assert!(m.verdicts.iter().all(|v| *v != Verdict::Open));
    }

    #[test]
    fn unsat_spec_reaches_absorbing_unsat() {
        // Scaled unsatisfiable fixture: the eventuality x <= -10 clashes
        // with the derived invariant x >= -9 ∧ y >= 1.
        let spec = parse_spec(
            "input e : int;\nvar x : int;\nvar y : int;\n\
             assume e > 0 && x = 0;\n\
             guarantee x' = 0 && X G (x' = x + 1 || x' = x + y) && F (x <= -10)\n\
               && y' = e && X G (y' = y) && X (y > 0);\n",
        )
        .unwrap();
        let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
        assert!(
            m.verdicts.contains(&Verdict::Unsat),
            "no UNSAT state among {}",
            m.states.len()
        );
        // UNSAT absorbs: every successor of an UNSAT state is UNSAT.
        for (from, succs) in &m.transitions {
            if m.verdicts[*from] == Verdict::Unsat {
                assert!(succs.values().all(|to| m.verdicts[*to] == Verdict::Unsat));
            }
        }
        let lassos = random_lassos(&["e", "x", "y"], 400, 11, &[-10, 10]);
        // The formula is assumption -> guarantee: among lassos whose first
        // step satisfies the assumption, none can satisfy the whole
        // specification.
        let assumption = pf("e > 0 && x = 0");
        assert!(lassos
            .iter()
            .filter(|rho| lasso_eval(&assumption, rho))
            .count() > 0);
        assert!(lassos
            .iter()
            .filter(|rho| lasso_eval(&assumption, rho))
            .all(|rho| !lasso_eval(&spec.formula(), rho)));
        let issues = check_verdict_soundness(&m, &spec, &lassos);
        assert!(issues.is_empty(), "{issues:?}");
    }

    #[test]
    fn state_correctness_on_small_specs() {
        let texts = [
            "var x : int;\nguarantee G (x' = x);\n",
            "var x : int;\nguarantee F (x = 1);\n",
            "input e : int;\nvar x : int;\nguarantee G (e > 0 -> x' <= x + 2);\n",
            "var x : int;\nguarantee (x = 0) U (x > 2);\n",
        ];
        let solver = solver();
        for text in texts {
            let spec = parse_spec(text).unwrap();
            let names: Vec<&str> = spec
                .decls
                .iter()
                .map(|d| d.name.as_str())
                .collect();
            let m = build(&spec, &solver, &MonitorConfig::default()).unwrap();
            let lassos = random_lassos(&names, 250, 23, &[]);
            let issues = check_state_correctness(&m, &spec, &lassos);
            assert!(issues.is_empty(), "{text}: {issues:?}");
            let issues = check_verdict_soundness(&m, &spec, &lassos);
            assert!(issues.is_empty(), "{text}: {issues:?}");
        }
    }

    #[test]
    fn precise_invariant_trace_over_expansion() {
        // State with E_G = {x = 1}, F_G = {X (y = 1), X G (y = x')} and
        // implied formulas G(⊤ → x' > x), G(y = 1 → F (y < 0)): the
        // precise reachable set x >= 1 makes the pending eventuality
        // y < 0 impossible one step later.
        let solver = solver();
        let mut table = PredicateTable::for_formula(
            &pf("x = 1 && X (y = 1) && X G (y = x') && G (x' > x) && F (y < 0)"),
            &BTreeSet::new(),
        );
        let mut st = MonitorState::default();
        st.e_g.insert(pf("x = 1"));
        st.f_g.insert(pf("X (y = 1)"));
        st.f_g.insert(pf("X G (y = x')"));
        st.imp_g.insert(Imp::new(Qf::True, ImpBody::Now(qf("x' > x"))));
        st.imp_g.insert(Imp::new(qf("y = 1"), ImpBody::Finally(qf("y < 0"))));
        let mut engine = RulesEngine::new(BTreeSet::new());
        engine.enable_gen_inv_p = true;
        let st = engine.apply_rules(&st, &solver, &mut table);
        assert!(
            is_subsequence(&[RuleId::GenInvP, RuleId::ChainImpG], &engine.log),
            "log: {:?}",
            engine.log
        );
        intern_state_atoms(&st, &mut table);
        // Expansion step under the letter where x = 1 holds.
        let formulas: Vec<&Rpltl> = st.f_g.iter().chain(&st.e_g).collect();
        let letters = relevant_letters(&formulas, None, &table, &solver);
        let a = letters
            .iter()
            .find(|a| a.truth(&table, &qf("x = 1")) == Some(true))
            .expect("letter with x = 1");
        let raw = next_state_raw(&st, a, &table, &solver);
        let succ = engine.apply_rules(&raw, &solver, &mut table);
        assert_eq!(succ.f_g, [Rpltl::False].into_iter().collect(), "{succ}");
        assert_eq!(succ.e_g, [Rpltl::False].into_iter().collect(), "{succ}");
        assert!(
            is_subsequence(&[RuleId::GenInvP, RuleId::ChainImpG, RuleId::UnsatF], &engine.log),
            "log: {:?}",
            engine.log
        );
    }

    #[test]
    fn discharge_identity_without_gf() {
        let spec = parse_spec("var x : int;\nguarantee G (x' = x);\n").unwrap();
        let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
        assert_eq!(m.discharged, 0);
    }

    #[test]
    fn discharge_skips_looping_counterexample() {
        // Hand-built two-state graph: state 1 loops forever outside the
        // eventuality-forcing set, so nothing may be discharged there.
        let solver = solver();
        let mut engine = RulesEngine::new(BTreeSet::new());
        let mut table = PredicateTable::for_formula(&pf("G F (x = 1) && x = 0"), &BTreeSet::new());
        let mut s0 = MonitorState::default();
        s0.f_g.insert(pf("G F (x = 1)"));
        s0.e_g.insert(pf("x = 0"));
        let s1 = s0.clone();
        let mut m = Monitor {
            states: vec![s0, s1],
            init: 0,
            table: table.clone(),
            transitions: BTreeMap::new(),
            verdicts: vec![Verdict::Open; 2],
            inputs: BTreeSet::new(),
            programs: ["x".to_string()].into_iter().collect(),
            rule_log: Vec::new(),
            violations: Vec::new(),
            discharged: 0,
        };
        let mut loop0 = BTreeMap::new();
        loop0.insert(Letter::default(), 1usize);
        m.transitions.insert(0, loop0);
        let mut loop1 = BTreeMap::new();
        loop1.insert(Letter::default(), 1usize);
        m.transitions.insert(1, loop1);
        discharge_gf(&mut m, &mut engine, &solver);
        assert_eq!(m.discharged, 0);
        assert!(m.states[1].f_g.contains(&pf("G F (x = 1)")));
        let _ = table.intern(&qf("x = 1"));
    }

    #[test]
    fn gf_discharged_in_pinned_counter_spec() {
        // Scaled repeated-eventuality fixture: x is reset to 10 whenever
        // c is nonzero and incremented otherwise, so x >= 10 recurs on
        // every path. With the pinned x >= 0 invariant the reachability
        // generalization already proves `G (true -> F (x >= 10))` and the
        // implication substitution removes the repeated eventuality during
        // rule application, so no state survives with an OPEN obligation.
        let spec = parse_spec(
            "input e : int;\nvar x : int;\nvar c : int;\n\
             guarantee x = 0 && G (x >= 0) && G (c' = 0 || c' = 1)\n\
               && G (c = 0 -> x' = x + 1) && G (!(c = 0) -> x' = 10)\n\
               && G F (x >= 10);\n",
        )
        .unwrap();
        let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
        assert!(
            m.verdicts.iter().all(|v| *v != Verdict::Open),
            "verdicts: {:?}",
            m.verdicts
        );
        assert_eq!(m.verdicts[m.init], Verdict::Safety);
        assert!(is_subsequence(&[RuleId::GenReach], &m.rule_log), "{:?}", m.rule_log);
    }

    #[test]
    fn gf_discharged_by_graph_pass_on_alternator() {
        // Nonnegative x jumps straight to 10 while negative x diverges
        // downward. The global reachability fixpoint stalls at x >= 0, so
        // only the per-state forcing implications combined with the graph
        // pass can remove the repeated eventuality.
        let spec = parse_spec(
            "var x : int;\nguarantee x = 0 && G (x >= 0 -> x' = 10)\n\
               && G (x < 0 -> x' = x - 1) && G F (x >= 10);\n",
        )
        .unwrap();
        let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
        assert!(m.discharged > 0, "graph pass discharged nothing");
        assert!(
            m.verdicts.iter().all(|v| *v != Verdict::Open),
            "verdicts: {:?}",
            m.verdicts
        );
        assert_eq!(m.verdicts[m.init], Verdict::Safety);
    }

    #[test]
    fn exports_are_deterministic_and_round_trip() {
        let spec = parse_spec("var x : int;\nguarantee G (x' = x) && F (x = 1);\n").unwrap();
        let solver = solver();
        let m1 = build(&spec, &solver, &MonitorConfig::default()).unwrap();
        let m2 = build(&spec, &solver, &MonitorConfig::default()).unwrap();
        assert_eq!(export_json(&m1), export_json(&m2));
        assert_eq!(export_dot(&m1), export_dot(&m2));
        let text = export_json(&m1);
        let imported = import_json(&text, &m1.inputs, &m1.programs).unwrap();
        let keys1: Vec<u64> = m1.states.iter().map(|s| s.canonical_key()).collect();
        let keys2: Vec<u64> = imported.states.iter().map(|s| s.canonical_key()).collect();
        assert_eq!(keys1, keys2);
        assert_eq!(m1.init, imported.init);
        assert_eq!(m1.verdicts, imported.verdicts);
    }

    #[test]
    fn debug_soundness_audit_is_clean() {
        let spec = parse_spec(
            "var x : int;\nvar y : int;\n\
             guarantee x = 0 && G (x = y) && G (x' >= x) && (y = 0 -> F (x = -5));\n",
        )
        .unwrap();
        let config = MonitorConfig { debug_soundness: true, ..MonitorConfig::default() };
        let m = build(&spec, &solver(), &config).unwrap();
        assert!(m.violations.is_empty(), "{:?}", m.violations);
        assert!(m.verdicts.contains(&Verdict::Unsat));
    }

    #[test]
    fn state_cap_is_a_hard_error() {
        let spec = parse_spec("var x : int;\nguarantee F (x = 1);\n").unwrap();
        let config = MonitorConfig { max_states: 1, ..MonitorConfig::default() };
        match build(&spec, &solver(), &config) {
            Err(MonitorError::StateCap(1)) => {}
            other => panic!("expected state-cap error, got {:?}", other.map(|m| m.states.len())),
        }
    }
}

//! Acceptance suite: one test per criterion, each ending in a single
//! `criterion N: pass` line (a failed assertion is the fail line).
//!
//! The bundled fixtures live in `fixtures/` at the repository root; the
//! motivating examples are scaled (10000 -> 10) as documented there.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpltl2game::expansion::{expand, relevant_letters, Letter, PredicateTable};
use rpltl2game::fixpoint::{reach_entails, FixpointBudget};
use rpltl2game::fol::{Qf, Valuation, Var};
use rpltl2game::game::{
    check_wellformed, game_accepts, game_from_dpa, parse_hoa, product, product_accepts,
};
use rpltl2game::ltl::{
    booleanize, enumerate_lassos, lasso_eval, parse_formula, parse_spec, Lasso, Rpltl, Spec,
};
use rpltl2game::monitor::{
    build, check_state_correctness, check_verdict_soundness, intern_state_atoms, next_state_raw,
    MonitorConfig, Verdict,
};
use rpltl2game::rules::{
    is_subsequence, partition_initial, Imp, ImpBody, MonitorState, RuleId, RulesEngine,
};
use rpltl2game::solver::{Solver, SolverConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn load(name: &str) -> Spec {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    parse_spec(&text).unwrap()
}

fn solver() -> Solver {
    Solver::new(&SolverConfig::default())
}

fn pf(s: &str) -> Rpltl {
    parse_formula(s).unwrap()
}

fn qf(s: &str) -> Qf {
    pf(s).as_qf().unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rpltl2game"))
}

fn run_bin(args: &[&str]) -> (String, String, bool) {
    let out = bin().args(args).output().unwrap();
    (
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
        out.status.success(),
    )
}

/// Oracle lassos over the enumeration box plus targeted valuations
/// containing the scaled constants.
fn box_lassos(names: &[&str], extra_values: &[i64], seed: u64, count: usize) -> Vec<Lasso> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let owned: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    if owned.len() <= 2 {
        out.extend(enumerate_lassos(&owned, 1, 2, 2));
    }
    let mut values: Vec<i64> = (-2..=2).collect();
    values.extend_from_slice(extra_values);
    for _ in 0..count {
        let mk = |rng: &mut ChaCha8Rng| -> Valuation {
            owned
                .iter()
                .map(|n| (Var::new(n.clone()), values[rng.gen_range(0..values.len())]))
                .collect()
        };
        let stem = (0..rng.gen_range(0..=3)).map(|_| mk(&mut rng)).collect();
        let looping = (0..rng.gen_range(1..=2)).map(|_| mk(&mut rng)).collect();
        out.push(Lasso::new(stem, looping));
    }
    out
}

#[test]
fn criterion_01_unsat_example_monitor_and_oracle() {
    let start = Instant::now();
    let (stdout, _, ok) =
        run_bin(&["monitor", fixture("phi_unsat.rpltl").to_str().unwrap(), "--out", "/dev/null"]);
    assert!(ok, "cmd_monitor failed");
    assert!(stdout.contains("UNSAT"), "no UNSAT verdict reported:\n{stdout}");
    assert!(
        stdout.contains("initial obligations UNSAT-bound: yes"),
        "continuations after the assumption-satisfying first step are not all UNSAT:\n{stdout}"
    );

    let spec = load("phi_unsat.rpltl");
    let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
    assert!(m.verdicts.contains(&Verdict::Unsat));
    let lassos = box_lassos(&["e", "x", "y"], &[-10, 10], 0xAC01, 400);
    let assumption = pf("e > 0 && x = 0");
    let phi = spec.formula();
    let mut gated = 0usize;
    for rho in &lassos {
        if lasso_eval(&assumption, rho) {
            gated += 1;
            assert!(!lasso_eval(&phi, rho), "satisfying extension found: {rho:?}");
        }
    }
    assert!(gated > 0, "no assumption-satisfying lasso in the box");
    let issues = check_verdict_soundness(&m, &spec, &lassos);
    assert!(issues.is_empty(), "{issues:?}");
    assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());
    println!("criterion 1: pass ({gated} gated lassos, {:?})", start.elapsed());
}

#[test]
fn criterion_02_vacuous_eventuality_discharged() {
    let start = Instant::now();
    let spec = load("phi_vac.rpltl");
    let solver = solver();
    let m = build(&spec, &solver, &MonitorConfig::default()).unwrap();
    assert!(
        is_subsequence(&[RuleId::GenReach, RuleId::SimplifyNonNested], &m.rule_log),
        "discharge rules missing from log: {:?}",
        m.rule_log
    );
    // No eventuality survives: every reachable state is SAFETY apart from
    // the absorbing violation sink.
    assert_eq!(m.verdicts[m.init], Verdict::Safety);
    assert!(m.verdicts.iter().all(|v| *v != Verdict::Open), "{:?}", m.verdicts);
    // Def. 5.2 condition 2 on the bounded box: runs visiting a SAFETY
    // state satisfy the formula unless they later hit UNSAT.
    let lassos = box_lassos(&["e", "x", "y"], &[10, 11], 0xAC02, 300);
    let issues = check_verdict_soundness(&m, &spec, &lassos);
    assert!(issues.is_empty(), "{issues:?}");
    assert!(start.elapsed() < Duration::from_secs(120), "{:?}", start.elapsed());
    println!("criterion 2: pass ({} states, {:?})", m.states.len(), start.elapsed());
}

#[test]
fn criterion_03_repeated_eventuality_removed_and_product_safety() {
    let start = Instant::now();
    let spec = load("phi_simplify.rpltl");
    let m = build(&spec, &solver(), &MonitorConfig::default()).unwrap();
    // The G F obligation is gone from every reachable state.
    for st in &m.states {
        for f in st.f_g.iter().chain(&st.e_g) {
            assert!(
                !format!("{f}").contains("G F"),
                "repeated eventuality survived: {f}"
            );
        }
    }
    assert!(m.verdicts.iter().all(|v| *v != Verdict::Open), "{:?}", m.verdicts);

    let (stdout, stderr, ok) = run_bin(&[
        "product",
        fixture("phi_simplify.rpltl").to_str().unwrap(),
        "--hoa",
        fixture("phi_simplify.hoa").to_str().unwrap(),
        "--out",
        "/dev/null",
    ]);
    assert!(ok, "cmd_product failed: {stderr}");
    assert!(
        stdout.contains("winning condition: safety on all reachable locations"),
        "{stdout}"
    );
    assert!(start.elapsed() < Duration::from_secs(120), "{:?}", start.elapsed());
    println!("criterion 3: pass ({:?})", start.elapsed());
}

#[test]
fn criterion_04_rule_trace_reproduction() {
    let solver = solver();

    // Invariant generalization cascade: Gen-Inv, Chain-Imp-G, Subst-⊥,
    // UNSAT, ending in the all-false sextuple.
    let spec = parse_spec(
        "var x : int;\nvar y : int;\n\
         guarantee x = 0 && G (x = y) && G (x' >= x) && (y = 0 -> F (x = -5));\n",
    )
    .unwrap();
    let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
    let mut eng = RulesEngine::new(BTreeSet::new());
    let out = eng.apply_rules(&partition_initial(&spec), &solver, &mut table);
    assert!(
        is_subsequence(
            &[RuleId::GenInv, RuleId::ChainImpG, RuleId::SubstFalse, RuleId::Unsat],
            &eng.log
        ),
        "{:?}",
        eng.log
    );
    assert_eq!(out.f_g, [Rpltl::False].into_iter().collect::<BTreeSet<_>>(), "{out}");
    assert_eq!(out.e_g, [Rpltl::False].into_iter().collect::<BTreeSet<_>>(), "{out}");

    // Precise invariant generalization across one expansion step:
    // Gen-Inv-P, Chain-Imp-G, then UNSAT-F in the successor.
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
    let mut eng = RulesEngine::new(BTreeSet::new());
    eng.enable_gen_inv_p = true;
    let st = eng.apply_rules(&st, &solver, &mut table);
    intern_state_atoms(&st, &mut table);
    let formulas: Vec<&Rpltl> = st.f_g.iter().chain(&st.e_g).collect();
    let letters = relevant_letters(&formulas, None, &table, &solver);
    let a = letters
        .iter()
        .find(|a| a.truth(&table, &qf("x = 1")) == Some(true))
        .expect("letter with x = 1");
    let raw = next_state_raw(&st, a, &table, &solver);
    let succ = eng.apply_rules(&raw, &solver, &mut table);
    assert!(
        is_subsequence(&[RuleId::GenInvP, RuleId::ChainImpG, RuleId::UnsatF], &eng.log),
        "{:?}",
        eng.log
    );
    assert_eq!(succ.f_g, [Rpltl::False].into_iter().collect::<BTreeSet<_>>(), "{succ}");
    assert_eq!(succ.e_g, [Rpltl::False].into_iter().collect::<BTreeSet<_>>(), "{succ}");

    // Reachability generalization: Gen-Reach then Simplify-Non-Nested,
    // keeping the forcing implication and the displayed constant.
    let spec =
        parse_spec("var x : int;\nguarantee x = 0 && G (x' > x) && F (x > 1000);\n").unwrap();
    let mut table = PredicateTable::for_formula(&spec.formula(), &spec.input_names());
    let mut eng = RulesEngine::new(BTreeSet::new());
    eng.budget = FixpointBudget { max_iters: 1100 };
    let out = eng.apply_rules(&partition_initial(&spec), &solver, &mut table);
    assert!(
        is_subsequence(&[RuleId::GenReach, RuleId::SimplifyNonNested], &eng.log),
        "{:?}",
        eng.log
    );
    assert!(out.f_g.is_empty(), "{out}");
    assert!(out.imp_g.contains(&Imp::new(qf("x = 0"), ImpBody::Finally(qf("x > 1000")))));
    println!("criterion 4: pass");
}

fn random_formula(rng: &mut ChaCha8Rng, depth: usize) -> Rpltl {
    let atoms = ["x = 0", "x > 0", "x' = x + 1", "x <= y", "y' > x", "y != 1"];
    if depth == 0 || rng.gen_bool(0.3) {
        return pf(atoms[rng.gen_range(0..atoms.len())]);
    }
    match rng.gen_range(0..8) {
        0 => Rpltl::not(random_formula(rng, depth - 1)),
        1 => Rpltl::And(vec![random_formula(rng, depth - 1), random_formula(rng, depth - 1)]),
        2 => Rpltl::Or(vec![random_formula(rng, depth - 1), random_formula(rng, depth - 1)]),
        3 => Rpltl::next(random_formula(rng, depth - 1)),
        4 => Rpltl::until(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        5 => Rpltl::weak_until(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        6 => Rpltl::finally(random_formula(rng, depth - 1)),
        _ => Rpltl::globally(random_formula(rng, depth - 1)),
    }
}

#[test]
fn criterion_05_expansion_lasso_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC05);
    let mut checked = 0usize;
    while checked < 1000 {
        let f = random_formula(&mut rng, 3).canon();
        let table = PredicateTable::for_formula(&f, &BTreeSet::new());
        let mk = |rng: &mut ChaCha8Rng| -> Valuation {
            [
                (Var::new("x"), rng.gen_range(-3i64..=3)),
                (Var::new("y"), rng.gen_range(-3i64..=3)),
            ]
            .into_iter()
            .collect()
        };
        let stem = (0..rng.gen_range(0..3)).map(|_| mk(&mut rng)).collect();
        let looping = (0..rng.gen_range(1..4)).map(|_| mk(&mut rng)).collect();
        let rho = Lasso::new(stem, looping);
        let a = Letter::from_valuation(&table, &rho.step_valuation(0));
        let expanded = expand(&f, &a, &table);
        assert_eq!(
            lasso_eval(&f, &rho),
            lasso_eval(&expanded, &rho.shift(1)),
            "expansion mismatch for {f} on {rho:?}"
        );
        checked += 1;
    }
    println!("criterion 5: pass ({checked} triples)");
}

#[test]
fn criterion_06_soundness_audit_on_fixtures() {
    let solver = solver();
    let cfg = MonitorConfig { debug_soundness: true, ..MonitorConfig::default() };
    let mut audited = 0usize;
    for name in [
        "phi_unsat.rpltl",
        "phi_vac.rpltl",
        "phi_simplify.rpltl",
        "safety.rpltl",
        "reach.rpltl",
        "guarded.rpltl",
        "until.rpltl",
        "live.rpltl",
    ] {
        let m = build(&load(name), &solver, &cfg).unwrap();
        assert!(m.violations.is_empty(), "{name}: {:?}", m.violations);
        audited += m.rule_log.len();
    }
    println!("criterion 6: pass ({audited} rule applications audited)");
}

fn fixture_pairs() -> Vec<(&'static str, &'static str, Vec<&'static str>)> {
    vec![
        ("safety.rpltl", "safety.hoa", vec!["x"]),
        ("reach.rpltl", "reach.hoa", vec!["x"]),
        ("guarded.rpltl", "guarded.hoa", vec!["e", "x"]),
        ("until.rpltl", "until.hoa", vec!["x"]),
        ("live.rpltl", "live.hoa", vec!["e", "x"]),
    ]
}

#[test]
fn criterion_07_pseudo_language_equality() {
    let solver = solver();
    let mut total = 0usize;
    for (spec_name, hoa_name, vars) in fixture_pairs() {
        let spec = load(spec_name);
        let dpa = parse_hoa(&std::fs::read_to_string(fixture(hoa_name)).unwrap()).unwrap();
        let b = booleanize(&spec.formula());
        let g = game_from_dpa(&dpa, &b.props, &spec.input_names(), &spec.program_names())
            .unwrap();
        let m = build(&spec, &solver, &MonitorConfig::default()).unwrap();
        let p = product(&g, &m, &solver).unwrap();
        let phi = spec.formula();
        let owned: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        for rho in enumerate_lassos(&owned, 1, 2, 2) {
            let lambda = game_accepts(&g, &rho)
                .unwrap_or_else(|| panic!("{spec_name}: no unique run on {rho:?}"));
            assert_eq!(
                lambda,
                lasso_eval(&phi, &rho),
                "{spec_name}: automaton/formula mismatch on {rho:?}"
            );
            let cross = product_accepts(&p, &rho)
                .unwrap_or_else(|| panic!("{spec_name}: no unique product run on {rho:?}"));
            assert_eq!(lambda, cross, "{spec_name}: product mismatch on {rho:?}");
            total += 1;
        }
    }
    println!("criterion 7: pass ({total} lasso memberships)");
}

#[test]
fn criterion_08_wellformedness() {
    let solver = solver();
    let mut pairs = fixture_pairs();
    pairs.push(("phi_simplify.rpltl", "phi_simplify.hoa", vec![]));
    for (spec_name, hoa_name, _) in pairs {
        let spec = load(spec_name);
        let dpa = parse_hoa(&std::fs::read_to_string(fixture(hoa_name)).unwrap()).unwrap();
        let b = booleanize(&spec.formula());
        let g = game_from_dpa(&dpa, &b.props, &spec.input_names(), &spec.program_names())
            .unwrap();
        let report = check_wellformed(&g.dom, &g.delta, &g.inputs, &g.programs, &solver);
        assert!(report.is_empty(), "{spec_name} game: {report:?}");
        let m = build(&spec, &solver, &MonitorConfig::default()).unwrap();
        let p = product(&g, &m, &solver).unwrap();
        let report = check_wellformed(&p.dom, &p.delta, &p.inputs, &p.programs, &solver);
        assert!(report.is_empty(), "{spec_name} product: {report:?}");
    }
    println!("criterion 8: pass");
}

#[test]
fn criterion_09_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for (args, label) in [
        (vec!["monitor", "fixtures/phi_unsat.rpltl"], "monitor json"),
        (vec!["monitor", "fixtures/phi_simplify.rpltl", "--format", "dot"], "monitor dot"),
        (
            vec![
                "product",
                "fixtures/phi_simplify.rpltl",
                "--hoa",
                "fixtures/phi_simplify.hoa",
            ],
            "product",
        ),
    ] {
        let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
        for out in [&out1, &out2] {
            let status = bin()
                .current_dir(&root)
                .args(&args)
                .arg("--out")
                .arg(out)
                .status()
                .unwrap();
            assert!(status.success(), "{label} failed");
        }
        let a = std::fs::read(&out1).unwrap();
        let b = std::fs::read(&out2).unwrap();
        assert_eq!(a, b, "{label}: consecutive runs differ");
        assert!(!a.is_empty(), "{label}: empty output");
    }
    println!("criterion 9: pass");
}

#[test]
fn criterion_10_fixpoints_vs_enumeration() {
    const LO: i64 = -8;
    const HI: i64 = 8;
    let solver = solver();
    let budget = FixpointBudget { max_iters: 40 };
    let no_inputs = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC10);
    let atom = |rng: &mut ChaCha8Rng| -> String {
        let k = rng.gen_range(LO..=HI);
        let rel = ["=", "<=", ">=", "<", ">"][rng.gen_range(0..5)];
        format!("x {rel} {k}")
    };
    let mut done = 0usize;
    while done < 50 {
        let guard = atom(&mut rng);
        let d1 = rng.gen_range(-2i64..=2);
        let d2 = rng.gen_range(-2i64..=2);
        let inv = qf(&format!(
            "((({guard}) -> x' = x + {d1}) && (!({guard}) -> x' = x + {d2})) \
             && x >= {LO} && x <= {HI} && x' >= {LO} && x' <= {HI}"
        ));
        let beta = qf(&atom(&mut rng));
        let gamma = qf(&format!("({}) && x >= {LO} && x <= {HI}", atom(&mut rng)));
        let eval1 = |q: &Qf, v: i64| {
            let val: Valuation = [(Var::new("x"), v)].into_iter().collect();
            q.eval(&val)
        };
        let succs = |v: i64| -> Vec<i64> {
            (LO..=HI)
                .filter(|&w| {
                    let val: Valuation =
                        [(Var::new("x"), v), (Var::new("x").prime(), w)].into_iter().collect();
                    inv.eval(&val)
                })
                .collect()
        };
        let mut forced: BTreeSet<i64> = (LO..=HI).filter(|&v| eval1(&beta, v)).collect();
        loop {
            let grown: BTreeSet<i64> = (LO..=HI)
                .filter(|&v| forced.contains(&v) || succs(v).iter().all(|w| forced.contains(w)))
                .collect();
            if grown == forced {
                break;
            }
            forced = grown;
        }
        let expect = (LO..=HI).filter(|&v| eval1(&gamma, v)).all(|v| forced.contains(&v));
        let got = reach_entails(&gamma, &beta, &inv, &no_inputs, &solver, &budget);
        assert_eq!(got, expect, "inv={inv} beta={beta} gamma={gamma}");
        done += 1;
    }
    println!("criterion 10: pass ({done} relations)");
}

/// The monitor-state correctness oracle also holds on every bundled
/// fixture (supporting evidence for criteria 1-3).
#[test]
fn bundled_fixture_state_correctness() {
    let solver = solver();
    for name in ["safety.rpltl", "reach.rpltl", "until.rpltl"] {
        let spec = load(name);
        let m = build(&spec, &solver, &MonitorConfig::default()).unwrap();
        let lassos = box_lassos(&["x"], &[], 0xAC99, 150);
        let issues = check_state_correctness(&m, &spec, &lassos);
        assert!(issues.is_empty(), "{name}: {issues:?}");
    }
}

//! Command-line driver: spec checking, monitor construction, game-monitor
//! products, and the bounded verification oracles.
//!
//! Exit codes: 0 success, 1 oracle or property failure, 2 usage or parse
//! error, 3 external-tool failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rpltl2game::expansion::PredicateTable;
use rpltl2game::fixpoint::FixpointBudget;
use rpltl2game::game::{
    check_wellformed, game_accepts, game_from_dpa, parse_hoa, product, product_accepts,
    serialize_product, ProductGame, SymbolicGame,
};
use rpltl2game::ltl::{booleanize, enumerate_lassos, lasso_eval, parse_spec, Lasso, Spec};
use rpltl2game::monitor::{
    build, check_state_correctness, check_verdict_soundness, export_dot, export_json, Monitor,
    MonitorConfig, Verdict,
};
use rpltl2game::rules::sample_lassos;
use rpltl2game::solver::{BackendChoice, Solver, SolverConfig};

#[derive(Parser)]
#[command(name = "rpltl2game", version, about = "Compiles temporal specifications over linear integer arithmetic into monitor-augmented symbolic games")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: CommonOpts,
}

#[derive(Args)]
struct CommonOpts {
    /// External SMT solver executable (default: internal decision procedure).
    #[arg(long, global = true, env = "RPLTL2GAME_SOLVER")]
    solver: Option<PathBuf>,

    /// External LTL-to-HOA translator executable.
    #[arg(long, global = true, env = "RPLTL2GAME_TRANSLATOR")]
    translator: Option<PathBuf>,

    /// Automaton input in HOA v1 format.
    #[arg(long, global = true, env = "RPLTL2GAME_HOA")]
    hoa: Option<PathBuf>,

    /// Hard cap on constructed monitor states.
    #[arg(long, global = true, env = "RPLTL2GAME_MAX_STATES", default_value_t = 5000)]
    max_states: usize,

    /// Iteration budget for reachability fixpoints.
    #[arg(long, global = true, env = "RPLTL2GAME_FIXPOINT_ITERS", default_value_t = 25)]
    fixpoint_iters: usize,

    /// Enables the precise invariant generalization rule (off by default).
    #[arg(long, global = true, env = "RPLTL2GAME_ENABLE_GEN_INV_P")]
    enable_gen_inv_p: bool,

    /// External CHC solver hook (reserved; internal fixpoints substitute).
    #[arg(long, global = true, env = "RPLTL2GAME_CHC")]
    chc: Option<PathBuf>,

    /// Radius of the valuation box for the bounded oracles.
    #[arg(long = "box", global = true, env = "RPLTL2GAME_BOX", default_value_t = 2)]
    box_radius: i64,

    /// Seed for oracle lasso sampling.
    #[arg(long, global = true, env = "RPLTL2GAME_SEED", default_value_t = 0xD1CE)]
    seed: u64,

    /// Output format for `monitor` (json or dot) and `product` (game).
    #[arg(long, global = true, env = "RPLTL2GAME_FORMAT", value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Audits every rule application against the sampled-lasso soundness
    /// conditions (expensive; enabled in CI).
    #[arg(long, global = true, env = "RPLTL2GAME_DEBUG_SOUNDNESS")]
    debug_soundness: bool,

    /// Output file (defaults to stdout).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Dot,
    Game,
}

#[derive(Subcommand)]
enum Command {
    /// Parses a specification and reports its atom inventory.
    Check { spec: PathBuf },
    /// Builds the verdict-labeled monitor.
    Monitor { spec: PathBuf },
    /// Builds the game-monitor product from an automaton for the
    /// Booleanized specification.
    Product { spec: PathBuf },
    /// Runs the bounded lasso oracles against the built artifacts.
    Verify { spec: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    msg: String,
}

fn fail(code: u8, msg: impl Into<String>) -> CliError {
    CliError { code, msg: msg.into() }
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Check { spec } => cmd_check(spec),
        Command::Monitor { spec } => cmd_monitor(spec, &cli.opts),
        Command::Product { spec } => cmd_product(spec, &cli.opts),
        Command::Verify { spec } => cmd_verify(spec, &cli.opts),
    }
}

fn load_spec(path: &Path) -> Result<Spec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(2, format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn make_solver(opts: &CommonOpts) -> Solver {
    let mut cfg = SolverConfig::default();
    if let Some(path) = &opts.solver {
        cfg.backend = BackendChoice::Process(path.clone());
    }
    Solver::new(&cfg)
}

fn monitor_config(opts: &CommonOpts) -> MonitorConfig {
    MonitorConfig {
        max_states: opts.max_states,
        budget: FixpointBudget { max_iters: opts.fixpoint_iters },
        enable_gen_inv_p: opts.enable_gen_inv_p,
        debug_soundness: opts.debug_soundness,
        audit_seed: opts.seed,
    }
}

fn write_out(opts: &CommonOpts, content: &str) -> Result<(), CliError> {
    match &opts.out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| fail(3, format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_check(path: &Path) -> Result<ExitCode, CliError> {
    let spec = load_spec(path)?;
    let inputs = spec.input_names();
    let formula = spec.formula();
    let table = PredicateTable::for_formula(&formula, &inputs);
    let atoms = table.len();
    let props = table.prop_ids().count();
    println!("OK, {atoms} atoms, {props} PropPreds");
    Ok(ExitCode::SUCCESS)
}

fn build_monitor(spec: &Spec, solver: &Solver, opts: &CommonOpts) -> Result<Monitor, CliError> {
    let m = build(spec, solver, &monitor_config(opts))
        .map_err(|e| fail(1, format!("monitor construction failed: {e}")))?;
    if !m.violations.is_empty() {
        for v in &m.violations {
            eprintln!("soundness violation: {v}");
        }
        return Err(fail(1, format!("{} soundness audit failures", m.violations.len())));
    }
    Ok(m)
}

fn verdict_histogram(m: &Monitor) -> BTreeMap<Verdict, usize> {
    let mut hist = BTreeMap::new();
    for v in &m.verdicts {
        *hist.entry(*v).or_insert(0usize) += 1;
    }
    hist
}

/// True when every initial successor consistent with the assumptions is
/// UNSAT: the obligations bind every continuation once the assumption
/// holds on the first step.
fn unsat_bound(m: &Monitor) -> bool {
    let mut saw_assumption_consistent = false;
    for (_, q) in m.transitions.get(&m.init).into_iter().flatten() {
        let st = &m.states[*q];
        let assumption_broken = st
            .e_a
            .iter()
            .chain(st.f_a.iter())
            .any(|f| *f == rpltl2game::ltl::Rpltl::False);
        if assumption_broken {
            continue;
        }
        saw_assumption_consistent = true;
        if m.verdicts[*q] != Verdict::Unsat {
            return false;
        }
    }
    saw_assumption_consistent
}

fn cmd_monitor(path: &Path, opts: &CommonOpts) -> Result<ExitCode, CliError> {
    let spec = load_spec(path)?;
    let solver = make_solver(opts);
    let m = build_monitor(&spec, &solver, opts)?;

    for (v, n) in verdict_histogram(&m) {
        println!("{v}: {n}");
    }
    if m.discharged > 0 {
        let plural = if m.discharged == 1 { "obligation" } else { "obligations" };
        println!("GF discharged: {} {plural}", m.discharged);
    }
    // Violation sinks (formula collapsed to false) keep UNSAT; every other
    // state being SAFETY still makes the reachable behavior pure safety.
    if m.verdicts[m.init] == Verdict::Safety && m.verdicts.iter().all(|v| *v != Verdict::Open) {
        println!("all states SAFETY");
    }
    if m.verdicts[m.init] == Verdict::Unsat {
        println!("initial state UNSAT");
    } else {
        println!("initial obligations UNSAT-bound: {}", if unsat_bound(&m) { "yes" } else { "no" });
    }

    let content = match opts.format {
        Format::Dot => export_dot(&m),
        _ => export_json(&m),
    };
    write_out(opts, &content)?;
    Ok(ExitCode::SUCCESS)
}

fn obtain_hoa(spec: &Spec, opts: &CommonOpts) -> Result<String, CliError> {
    if let Some(path) = &opts.hoa {
        return std::fs::read_to_string(path)
            .map_err(|e| fail(2, format!("cannot read {}: {e}", path.display())));
    }
    let translator = opts
        .translator
        .as_ref()
        .ok_or_else(|| fail(2, "product requires --hoa FILE or --translator PATH"))?;
    let b = booleanize(&spec.formula());
    let output = std::process::Command::new(translator)
        .arg(&b.text)
        .output()
        .map_err(|e| fail(3, format!("cannot run translator {}: {e}", translator.display())))?;
    if !output.status.success() {
        return Err(fail(3, format!("translator exited with {}", output.status)));
    }
    String::from_utf8(output.stdout).map_err(|_| fail(3, "translator produced non-UTF-8 output"))
}

fn build_product(
    spec: &Spec,
    solver: &Solver,
    opts: &CommonOpts,
) -> Result<(SymbolicGame, Monitor, ProductGame), CliError> {
    let hoa_text = obtain_hoa(spec, opts)?;
    let dpa = parse_hoa(&hoa_text).map_err(|e| fail(2, e.to_string()))?;
    let b = booleanize(&spec.formula());
    if dpa.aps.len() > b.props.len() {
        return Err(fail(
            2,
            format!(
                "automaton declares {} propositions but the Booleanized formula has {}",
                dpa.aps.len(),
                b.props.len()
            ),
        ));
    }
    let inputs = spec.input_names();
    let programs = spec.program_names();
    let g = game_from_dpa(&dpa, &b.props, &inputs, &programs)
        .map_err(|e| fail(2, e.to_string()))?;
    let m = build_monitor(spec, solver, opts)?;
    let p = product(&g, &m, solver).map_err(|e| fail(1, e.to_string()))?;
    Ok((g, m, p))
}

fn cmd_product(path: &Path, opts: &CommonOpts) -> Result<ExitCode, CliError> {
    let spec = load_spec(path)?;
    let solver = make_solver(opts);
    let (g, _m, p) = build_product(&spec, &solver, opts)?;

    println!("game locations: {}", g.locations());
    println!("product locations: {} (reachable)", p.locations.len());
    let safety = p.verdicts.iter().filter(|v| **v == Verdict::Safety).count();
    let unsat = p.verdicts.iter().filter(|v| **v == Verdict::Unsat).count();
    let open = p.verdicts.iter().filter(|v| **v == Verdict::Open).count();
    println!("downgraded to safety: {safety} locations ({unsat} UNSAT sinks, {open} parity)");
    if open == 0 {
        println!("winning condition: safety on all reachable locations");
    }

    write_out(opts, &serialize_product(&p))?;
    Ok(ExitCode::SUCCESS)
}

fn oracle_lassos(spec: &Spec, opts: &CommonOpts) -> Vec<Lasso> {
    let names: Vec<String> = spec
        .input_names()
        .into_iter()
        .chain(spec.program_names())
        .collect();
    let mut lassos = if names.len() <= 2 {
        enumerate_lassos(&names, opts.box_radius.min(1), 2, 2)
    } else {
        Vec::new()
    };
    lassos.extend(sample_lassos(&names, 200, opts.seed));
    lassos
}

fn cmd_verify(path: &Path, opts: &CommonOpts) -> Result<ExitCode, CliError> {
    let spec = load_spec(path)?;
    let solver = make_solver(opts);
    let m = build_monitor(&spec, &solver, opts)?;
    let lassos = oracle_lassos(&spec, opts);
    println!("oracle lassos: {}", lassos.len());

    let mut failures = Vec::new();
    failures.extend(check_state_correctness(&m, &spec, &lassos));
    failures.extend(check_verdict_soundness(&m, &spec, &lassos));

    if opts.hoa.is_some() || opts.translator.is_some() {
        let (g, _m2, p) = build_product(&spec, &solver, opts)?;
        let wf = check_wellformed(&g.dom, &g.delta, &g.inputs, &g.programs, &solver);
        failures.extend(wf.into_iter().map(|v| format!("game: {v}")));
        let phi = spec.formula();
        for rho in &lassos {
            let lambda = match game_accepts(&g, rho) {
                Some(b) => b,
                None => {
                    failures.push(format!("no unique game run on {rho:?}"));
                    continue;
                }
            };
            if lambda != lasso_eval(&phi, rho) {
                failures.push(format!("game language mismatch on {rho:?}"));
            }
            match product_accepts(&p, rho) {
                Some(cross) if cross == lambda => {}
                Some(_) => failures.push(format!("product language mismatch on {rho:?}")),
                None => failures.push(format!("no unique product run on {rho:?}")),
            }
        }
    }

    if failures.is_empty() {
        println!("verify: pass");
        Ok(ExitCode::SUCCESS)
    } else {
        for f in failures.iter().take(10) {
            eprintln!("counterexample: {f}");
        }
        eprintln!("verify: {} failures", failures.len());
        Ok(ExitCode::FAILURE)
    }
}

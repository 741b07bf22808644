//! Satisfiability and entailment over linear integer arithmetic.
//!
//! Backends implement [`TheoryBackend`] and are registered by name: the
//! built-in quantifier-elimination decision procedure (`internal`, complete
//! for this fragment) and an external SMT-LIB2 solver process. Results are
//! memoized in an LRU cache keyed by the canonical form of the query.

pub mod cooper;
pub mod smtlib;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};

use crate::fol::{feed_qf, Fnv, Fol, Qf, Var};

/// Outcome of a satisfiability query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmtVerdict {
    Sat,
    Unsat,
    /// Timeout, budget exhaustion or backend failure. Consumers treat
    /// `Unknown` as "premise not established": rules silently do not fire.
    Unknown,
}

/// How satisfiability queries are discharged.
pub trait TheoryBackend {
    fn name(&self) -> &'static str;
    fn check_sat(&mut self, f: &Fol) -> SmtVerdict;
}

/// Backend selection, parsed from CLI / environment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendChoice {
    Internal,
    Process(PathBuf),
}

impl Default for BackendChoice {
    fn default() -> Self {
        BackendChoice::Internal
    }
}

/// Solver construction parameters.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub backend: BackendChoice,
    /// Work budget for one internal QE query.
    pub qe_budget: u64,
    /// Millisecond timeout passed to external solver processes.
    pub timeout_ms: u64,
    pub cache_capacity: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: BackendChoice::Internal,
            qe_budget: 50_000_000,
            timeout_ms: 2_000,
            cache_capacity: 1 << 16,
        }
    }
}

/// The built-in decision procedure.
struct InternalBackend {
    budget: u64,
}

impl TheoryBackend for InternalBackend {
    fn name(&self) -> &'static str {
        "internal"
    }

    fn check_sat(&mut self, f: &Fol) -> SmtVerdict {
        let budget = cooper::QeBudget::new(self.budget);
        match cooper::check_sat(f, &budget) {
            Ok(true) => SmtVerdict::Sat,
            Ok(false) => SmtVerdict::Unsat,
            Err(_) => SmtVerdict::Unknown,
        }
    }
}

/// An external SMT-LIB2 solver, spawned once and driven through
/// `(push)`/`(pop)` scopes on stdin/stdout.
struct ProcessBackend {
    path: PathBuf,
    timeout_ms: u64,
    child: Option<Child>,
}

impl ProcessBackend {
    fn new(path: PathBuf, timeout_ms: u64) -> Self {
        ProcessBackend { path, timeout_ms, child: None }
    }

    fn ensure_child(&mut self) -> std::io::Result<&mut Child> {
        if self.child.is_none() {
            let mut child = Command::new(&self.path)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()?;
            if let Some(stdin) = child.stdin.as_mut() {
                writeln!(stdin, "(set-option :print-success false)")?;
                writeln!(stdin, "(set-option :timeout {})", self.timeout_ms)?;
            }
            self.child = Some(child);
        }
        Ok(self.child.as_mut().unwrap())
    }

    fn query(&mut self, f: &Fol) -> std::io::Result<SmtVerdict> {
        let vars: Vec<Var> = f.free_vars().into_iter().collect();
        let body = smtlib::fol_to_smtlib(f, smtlib::PrimeStyle::Quoted);
        let child = self.ensure_child()?;
        let stdin = child.stdin.as_mut().expect("piped stdin");
        writeln!(stdin, "(push 1)")?;
        for v in &vars {
            writeln!(stdin, "(declare-const {} Int)", smtlib::var_to_smtlib(v, smtlib::PrimeStyle::Quoted))?;
        }
        writeln!(stdin, "(assert {body})")?;
        writeln!(stdin, "(check-sat)")?;
        stdin.flush()?;
        let stdout = child.stdout.as_mut().expect("piped stdout");
        let mut reader = BufReader::new(stdout);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let verdict = match line.trim() {
            "sat" => SmtVerdict::Sat,
            "unsat" => SmtVerdict::Unsat,
            _ => SmtVerdict::Unknown,
        };
        let stdin = child.stdin.as_mut().expect("piped stdin");
        writeln!(stdin, "(pop 1)")?;
        stdin.flush()?;
        Ok(verdict)
    }
}

impl TheoryBackend for ProcessBackend {
    fn name(&self) -> &'static str {
        "process"
    }

    fn check_sat(&mut self, f: &Fol) -> SmtVerdict {
        match self.query(f) {
            Ok(v) => v,
            Err(_) => {
                // Drop the broken child; a later query may respawn it.
                self.child = None;
                SmtVerdict::Unknown
            }
        }
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            if let Some(stdin) = child.stdin.as_mut() {
                let _ = writeln!(stdin, "(exit)");
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct LruCache {
    capacity: usize,
    map: HashMap<u64, (SmtVerdict, u64)>,
    order: BTreeMap<u64, u64>,
    stamp: u64,
}

impl LruCache {
    fn new(capacity: usize) -> Self {
        LruCache { capacity, map: HashMap::new(), order: BTreeMap::new(), stamp: 0 }
    }

    fn get(&mut self, key: u64) -> Option<SmtVerdict> {
        let (verdict, old_stamp) = *self.map.get(&key)?;
        self.stamp += 1;
        self.order.remove(&old_stamp);
        self.order.insert(self.stamp, key);
        self.map.insert(key, (verdict, self.stamp));
        Some(verdict)
    }

    fn put(&mut self, key: u64, verdict: SmtVerdict) {
        if self.map.len() >= self.capacity {
            if let Some((&oldest, &victim)) = self.order.iter().next() {
                self.order.remove(&oldest);
                self.map.remove(&victim);
            }
        }
        self.stamp += 1;
        if let Some((_, old)) = self.map.insert(key, (verdict, self.stamp)) {
            self.order.remove(&old);
        }
        self.order.insert(self.stamp, key);
    }
}

/// Query statistics, reported by the CLI in debug output.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolverStats {
    pub queries: u64,
    pub cache_hits: u64,
    pub unknown: u64,
}

/// The shared satisfiability front-end: canonicalization, caching and
/// backend dispatch.
pub struct Solver {
    backend: RefCell<Box<dyn TheoryBackend>>,
    cache: RefCell<LruCache>,
    stats: RefCell<SolverStats>,
    qe_budget: u64,
}

impl Solver {
    pub fn new(cfg: &SolverConfig) -> Solver {
        let backend: Box<dyn TheoryBackend> = match &cfg.backend {
            BackendChoice::Internal => Box::new(InternalBackend { budget: cfg.qe_budget }),
            BackendChoice::Process(path) => {
                Box::new(ProcessBackend::new(path.clone(), cfg.timeout_ms))
            }
        };
        Solver {
            backend: RefCell::new(backend),
            cache: RefCell::new(LruCache::new(cfg.cache_capacity.max(16))),
            stats: RefCell::new(SolverStats::default()),
            qe_budget: cfg.qe_budget,
        }
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.borrow().name()
    }

    pub fn stats(&self) -> SolverStats {
        *self.stats.borrow()
    }

    pub fn check_sat(&self, f: &Fol) -> SmtVerdict {
        let key = fol_key(f);
        if let Some(hit) = self.cache.borrow_mut().get(key) {
            self.stats.borrow_mut().cache_hits += 1;
            return hit;
        }
        self.stats.borrow_mut().queries += 1;
        let verdict = self.backend.borrow_mut().check_sat(f);
        if verdict == SmtVerdict::Unknown {
            self.stats.borrow_mut().unknown += 1;
        }
        self.cache.borrow_mut().put(key, verdict);
        verdict
    }

    pub fn check_sat_qf(&self, q: &Qf) -> SmtVerdict {
        self.check_sat(&Fol::Qf(q.clone()))
    }

    /// `premise |= conclusion`; `Unknown` counts as "not established".
    pub fn entails(&self, premise: &Qf, conclusion: &Qf) -> bool {
        self.check_sat(&Fol::And(vec![
            Fol::Qf(premise.clone()),
            Fol::Not(Box::new(Fol::Qf(conclusion.clone()))),
        ])) == SmtVerdict::Unsat
    }

    pub fn entails_fol(&self, premise: &Fol, conclusion: &Fol) -> bool {
        self.check_sat(&Fol::And(vec![
            premise.clone(),
            Fol::Not(Box::new(conclusion.clone())),
        ])) == SmtVerdict::Unsat
    }

    pub fn valid(&self, q: &Qf) -> bool {
        self.check_sat(&Fol::Not(Box::new(Fol::Qf(q.clone())))) == SmtVerdict::Unsat
    }

    pub fn equivalent(&self, a: &Qf, b: &Qf) -> bool {
        self.entails(a, b) && self.entails(b, a)
    }

    /// Quantifier elimination; always uses the internal engine (external
    /// solvers answer sat/unsat but do not produce formulas).
    pub fn qe(&self, f: &Fol) -> Option<Qf> {
        let budget = cooper::QeBudget::new(self.qe_budget);
        cooper::qe(f, &budget).ok()
    }

    /// Semantic simplification by subsumption: unsatisfiable disjuncts and
    /// disjuncts implied by the rest are dropped, and so are conjuncts
    /// implied by the rest. Essential for iterated quantifier elimination,
    /// whose raw output grows multiplicatively.
    pub fn simplify(&self, q: &Qf) -> Qf {
        match q.canon() {
            Qf::Or(children) => {
                let mut kept: Vec<Qf> = Vec::new();
                for c in children {
                    let c = self.simplify(&c);
                    if self.check_sat_qf(&c) != SmtVerdict::Unsat {
                        kept.push(c);
                    }
                }
                let mut i = 0;
                while i < kept.len() {
                    let rest = Qf::Or(
                        kept.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c.clone()).collect(),
                    );
                    if self.entails(&kept[i], &rest) {
                        kept.remove(i);
                    } else {
                        i += 1;
                    }
                }
                Qf::Or(kept).canon()
            }
            Qf::And(children) => {
                let mut kept: Vec<Qf> = children.iter().map(|c| self.simplify(c)).collect();
                let mut i = 0;
                while i < kept.len() {
                    let rest = Qf::And(
                        kept.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c.clone()).collect(),
                    );
                    if self.entails(&rest, &kept[i]) {
                        kept.remove(i);
                    } else {
                        i += 1;
                    }
                }
                Qf::And(kept).canon()
            }
            other => other,
        }
    }

    /// Normalizes to a subsumption-pruned disjunction of satisfiable
    /// cubes. Iterated preimage computation needs this: its raw results
    /// nest conjunctions and disjunctions ever deeper, and flat
    /// subsumption cannot stop the doubling. Falls back to [`simplify`]
    /// when the cube count would explode.
    ///
    /// [`simplify`]: Solver::simplify
    pub fn simplify_dnf(&self, q: &Qf) -> Qf {
        const CUBE_CAP: usize = 256;
        let q = q.canon();
        let cubes = match self.dnf_cubes(&q, CUBE_CAP) {
            Some(c) => c,
            None => return self.simplify(&q),
        };
        let mut kept: Vec<Qf> = Vec::new();
        for cube in cubes {
            let whole = Qf::And(cube.clone()).canon();
            if self.check_sat_qf(&whole) == SmtVerdict::Unsat {
                continue;
            }
            // Drop literals implied by the rest of their cube.
            let mut lits = cube;
            let mut i = 0;
            while i < lits.len() {
                let rest = Qf::And(
                    lits.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, l)| l.clone()).collect(),
                );
                if self.entails(&rest, &lits[i]) {
                    lits.remove(i);
                } else {
                    i += 1;
                }
            }
            kept.push(Qf::And(lits).canon());
        }
        let mut i = 0;
        while i < kept.len() {
            let rest = Qf::Or(
                kept.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c.clone()).collect(),
            );
            if self.entails(&kept[i], &rest) {
                kept.remove(i);
            } else {
                i += 1;
            }
        }
        Qf::Or(kept).canon()
    }

    /// Cubes of the disjunctive normal form, or `None` past the cap.
    /// Unsatisfiable cubes are dropped during the conjunction product to
    /// keep intermediate growth in check. Input must be canonical (no
    /// `Not` nodes above atoms).
    fn dnf_cubes(&self, q: &Qf, cap: usize) -> Option<Vec<Vec<Qf>>> {
        match q {
            Qf::True => Some(vec![vec![]]),
            Qf::False => Some(vec![]),
            Qf::Atom(_) | Qf::Not(_) => Some(vec![vec![q.clone()]]),
            Qf::Or(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    out.extend(self.dnf_cubes(c, cap)?);
                    if out.len() > cap {
                        return None;
                    }
                }
                Some(out)
            }
            Qf::And(cs) => {
                let mut acc: Vec<Vec<Qf>> = vec![vec![]];
                for c in cs {
                    let part = self.dnf_cubes(c, cap)?;
                    let mut next = Vec::new();
                    for cube in &acc {
                        for p in &part {
                            let mut merged = cube.clone();
                            merged.extend(p.iter().cloned());
                            if self.check_sat_qf(&Qf::And(merged.clone()).canon())
                                != SmtVerdict::Unsat
                            {
                                next.push(merged);
                            }
                        }
                    }
                    if next.len() > cap {
                        return None;
                    }
                    acc = next;
                }
                Some(acc)
            }
        }
    }
}

fn fol_key(f: &Fol) -> u64 {
    let mut h = Fnv::new();
    feed_fol(f, &mut h);
    h.finish()
}

fn feed_fol(f: &Fol, h: &mut Fnv) {
    match f {
        Fol::Qf(q) => {
            h.write(&[b'q']);
            feed_qf(&q.canon(), h);
        }
        Fol::Not(g) => {
            h.write(&[b'n']);
            feed_fol(g, h);
        }
        Fol::And(gs) => {
            h.write(&[b'a']);
            h.write_i64(gs.len() as i64);
            for g in gs {
                feed_fol(g, h);
            }
        }
        Fol::Or(gs) => {
            h.write(&[b'o']);
            h.write_i64(gs.len() as i64);
            for g in gs {
                feed_fol(g, h);
            }
        }
        Fol::Exists(vs, g) | Fol::Forall(vs, g) => {
            h.write(&[if matches!(f, Fol::Exists(..)) { b'e' } else { b'f' }]);
            for v in vs {
                h.write_str(&v.name);
                h.write(&[v.primed as u8]);
            }
            feed_fol(g, h);
        }
    }
}

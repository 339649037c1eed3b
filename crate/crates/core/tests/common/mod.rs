#![allow(dead_code)]

use invrank::sygus::{parse_candidate, parse_problem, InvariantCandidate, Problem, Source};
use invrank::verifier::{Solver, SolverConfig};

/// The solver used by integration tests: `INVRANK_SOLVER` or `z3` on PATH.
pub fn solver() -> Solver {
    let cfg = SolverConfig::from_env();
    let probe = std::process::Command::new(&cfg.solver_path)
        .arg("--version")
        .output();
    assert!(
        probe.is_ok(),
        "SMT solver `{}` not found; install z3 or set INVRANK_SOLVER",
        cfg.solver_path.display()
    );
    Solver::new(cfg)
}

pub const COUNTER_SL: &str = "\
(set-logic LIA)
(synth-inv inv_fun ((x Int)))
(define-fun pre_fun ((x Int)) Bool (= x 0))
(define-fun trans_fun ((x Int) (x! Int)) Bool (and (< x 5) (= x! (+ x 1))))
(define-fun post_fun ((x Int)) Bool (=> (>= x 5) (= x 5)))
(inv-constraint inv_fun pre_fun trans_fun post_fun)
(check-synth)
";

pub const COUNTER_LOOP: &str = "pre: (= x 0); while (< x 5) do { x := (+ x 1); } post: (= x 5);";

pub fn counter_problem() -> Problem {
    parse_problem("counter", COUNTER_SL).unwrap()
}

pub fn candidates(p: &Problem, texts: &[&str]) -> Vec<InvariantCandidate> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| parse_candidate(t, p, Source::Other, i).unwrap())
        .collect()
}

//! External SMT solver driver.
//!
//! Each check spawns one solver process, feeds it an SMT-LIB2 script on
//! standard input and reads the status line from standard output. A model is
//! requested only after `sat`, so solvers that reject `(get-model)` after
//! `unsat` still exit cleanly.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::vc::VerificationCondition;
use crate::formulas::{Sort, Term};

pub const SOLVER_ENV: &str = "INVRANK_SOLVER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub solver_path: PathBuf,
    /// Per-check timeout in seconds.
    pub timeout: f64,
    pub args: Vec<String>,
    pub get_model: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            solver_path: PathBuf::from("z3"),
            timeout: 10.0,
            args: vec!["-in".into(), "-smt2".into()],
            get_model: true,
        }
    }
}

impl SolverConfig {
    /// Default configuration with the solver path taken from
    /// `INVRANK_SOLVER` when set.
    pub fn from_env() -> Self {
        let mut cfg = SolverConfig::default();
        if let Ok(p) = std::env::var(SOLVER_ENV) {
            if !p.is_empty() {
                cfg.solver_path = p.into();
            }
        }
        cfg
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Valid,
    Invalid,
    Unknown,
    Timeout,
    SolverError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverVerdict {
    pub status: SolverStatus,
    /// Counterexample text; only present when `Invalid`.
    pub model: Option<String>,
    pub elapsed: Duration,
    /// Diagnostic for `SolverError`.
    pub detail: Option<String>,
}

impl SolverVerdict {
    fn new(status: SolverStatus, started: Instant) -> Self {
        SolverVerdict {
            status,
            model: None,
            elapsed: started.elapsed(),
            detail: None,
        }
    }

    fn error(started: Instant, detail: impl Into<String>) -> Self {
        SolverVerdict {
            detail: Some(detail.into()),
            ..Self::new(SolverStatus::SolverError, started)
        }
    }
}

/// Anything that can decide validity of a quantifier-free formula.
pub trait Checker {
    /// Decides whether `formula` holds for every assignment of `decls`.
    fn check_valid(&self, formula: &Term, decls: &[(String, Sort)]) -> SolverVerdict;

    fn check_vc(&self, vc: &VerificationCondition) -> SolverVerdict {
        self.check_valid(&vc.formula, &vc.decls)
    }
}

/// The query part of the script: everything up to and including
/// `(check-sat)`.
pub fn validity_script(formula: &Term, decls: &[(String, Sort)]) -> String {
    let mut s = String::from("(set-logic ALL)\n");
    for (name, sort) in decls {
        s.push_str(&format!("(declare-const {name} {sort})\n"));
    }
    s.push_str(&format!("(assert (not {formula}))\n(check-sat)\n"));
    s
}

#[derive(Debug, Clone, Default)]
pub struct Solver {
    pub config: SolverConfig,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Self {
        Solver { config }
    }

    fn spawn(&self) -> std::io::Result<Child> {
        Command::new(&self.config.solver_path)
            .args(&self.config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
    }

    fn run(&self, script: &str) -> SolverVerdict {
        let started = Instant::now();
        let deadline = started + self.config.timeout();
        let mut child = match self.spawn() {
            Ok(c) => c,
            Err(e) => {
                return SolverVerdict::error(
                    started,
                    format!("cannot start `{}`: {e}", self.config.solver_path.display()),
                )
            }
        };
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");
        let stderr = thread::spawn(move || {
            let mut s = String::new();
            let _ = std::io::Read::read_to_string(&mut stderr_pipe, &mut s);
            s
        });
        let (tx, rx) = mpsc::channel::<String>();
        // detached; it ends when the solver closes stdout
        let reader = thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });

        if let Err(e) = stdin
            .write_all(script.as_bytes())
            .and_then(|_| stdin.flush())
        {
            drop(stdin);
            kill(&mut child);
            return SolverVerdict::error(started, format!("writing script: {e}"));
        }

        // First non-empty line carries the status.
        let status_line = loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(remaining) {
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => break Some(line),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    drop(stdin);
                    kill(&mut child);
                    return SolverVerdict::new(SolverStatus::Timeout, started);
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => break None,
            }
        };

        let status = match status_line.as_deref().map(str::trim) {
            Some("unsat") => SolverStatus::Valid,
            Some("sat") => SolverStatus::Invalid,
            Some("unknown") => SolverStatus::Unknown,
            other => {
                drop(stdin);
                kill(&mut child);
                let stderr = stderr.join().unwrap_or_default();
                let detail = format!(
                    "unexpected solver output {:?}{}",
                    other.unwrap_or("<none>"),
                    if stderr.trim().is_empty() {
                        String::new()
                    } else {
                        format!("; stderr: {}", stderr.trim())
                    }
                );
                return SolverVerdict::error(started, detail);
            }
        };

        let want_model = status == SolverStatus::Invalid && self.config.get_model;
        let tail = if want_model {
            "(get-model)\n(exit)\n"
        } else {
            "(exit)\n"
        };
        let _ = stdin.write_all(tail.as_bytes());
        drop(stdin);

        let mut model_lines = Vec::new();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(remaining) {
                Ok(line) => model_lines.push(line),
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    if want_model {
                        kill(&mut child);
                        return SolverVerdict::new(SolverStatus::Timeout, started);
                    }
                    break;
                }
            }
        }
        drop(reader);

        let remaining = deadline.saturating_duration_since(Instant::now());
        match child.wait_timeout(remaining.max(Duration::from_millis(100))) {
            Ok(Some(code)) if !code.success() => {
                kill(&mut child);
                return SolverVerdict::error(started, format!("solver exited with {code}"));
            }
            Ok(Some(_)) => {}
            Ok(None) => {
                kill(&mut child);
                return SolverVerdict::new(SolverStatus::Timeout, started);
            }
            Err(e) => {
                kill(&mut child);
                return SolverVerdict::error(started, format!("waiting for solver: {e}"));
            }
        }

        let mut verdict = SolverVerdict::new(status, started);
        if want_model {
            let model = model_lines.join("\n").trim().to_string();
            verdict.model = Some(model);
        }
        verdict
    }
}

fn kill(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}

impl Checker for Solver {
    fn check_valid(&self, formula: &Term, decls: &[(String, Sort)]) -> SolverVerdict {
        self.run(&validity_script(formula, decls))
    }
}

/// Checks one verification condition with a fresh solver process.
pub fn check_vc(vc: &VerificationCondition, cfg: &SolverConfig) -> SolverVerdict {
    Solver::new(cfg.clone()).check_vc(vc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::vc::VcKind;

    #[test]
    fn script_layout() {
        let f = Term::implies(
            Term::eq(Term::int_var("x"), Term::int(0)),
            Term::le(Term::int_var("x"), Term::int(5)),
        );
        let s = validity_script(
            &f,
            &[("x".into(), Sort::Int), ("a".into(), Sort::ArrayIntBool)],
        );
        assert_eq!(
            s,
            "(set-logic ALL)\n(declare-const x Int)\n(declare-const a (Array Int Bool))\n\
             (assert (not (=> (= x 0) (<= x 5))))\n(check-sat)\n"
        );
    }

    #[test]
    fn missing_binary_is_solver_error() {
        let cfg = SolverConfig {
            solver_path: "/nonexistent/solver-binary".into(),
            ..SolverConfig::default()
        };
        let vc = VerificationCondition {
            kind: VcKind::Entry,
            formula: Term::bool(true),
            decls: vec![],
        };
        let v = check_vc(&vc, &cfg);
        assert_eq!(v.status, SolverStatus::SolverError);
        assert!(v.model.is_none());
    }

    #[test]
    fn garbage_output_is_solver_error() {
        // `echo` prints its arguments and ignores stdin
        let cfg = SolverConfig {
            solver_path: "echo".into(),
            args: vec!["banana".into()],
            ..SolverConfig::default()
        };
        let v = Solver::new(cfg).check_valid(&Term::bool(true), &[]);
        assert_eq!(v.status, SolverStatus::SolverError);
        assert!(v.detail.unwrap().contains("banana"));
    }

    #[test]
    fn hanging_solver_times_out() {
        let cfg = SolverConfig {
            solver_path: "sleep".into(),
            args: vec!["5".into()],
            timeout: 0.3,
            ..SolverConfig::default()
        };
        let started = Instant::now();
        let v = Solver::new(cfg).check_valid(&Term::bool(true), &[]);
        assert_eq!(v.status, SolverStatus::Timeout);
        assert!(started.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn scripted_answers_are_interpreted() {
        for (answer, status) in [
            ("unsat", SolverStatus::Valid),
            ("unknown", SolverStatus::Unknown),
        ] {
            let cfg = SolverConfig {
                solver_path: "sh".into(),
                args: vec!["-c".into(), format!("cat >/dev/null & echo {answer}; wait")],
                ..SolverConfig::default()
            };
            let v = Solver::new(cfg).check_valid(&Term::bool(true), &[]);
            assert_eq!(v.status, status, "answer {answer}");
            assert!(v.model.is_none());
        }
    }
}

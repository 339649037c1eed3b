//! Deciding whether a candidate is an inductive invariant, and semantic
//! equivalence between candidates.

pub mod solver;
pub mod vc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use solver::{
    check_vc, Checker, Solver, SolverConfig, SolverStatus, SolverVerdict, SOLVER_ENV,
};
pub use vc::{hoare_vcs, inv_vcs, inv_vcs_for, wp, VcKind, VerificationCondition};

use crate::formulas::{FormulaError, LoopSpec, Sort, Term};
use crate::sygus::{InvariantCandidate, Problem};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("sort error: {0}")]
    Sort(FormulaError),
    #[error("invariant mentions unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("candidate `{candidate}` does not belong to problem `{problem}`")]
    ForeignCandidate { candidate: String, problem: String },
}

impl From<FormulaError> for VerifyError {
    fn from(e: FormulaError) -> Self {
        match e {
            FormulaError::UnknownVariable(v) => VerifyError::UnknownVariable(v),
            other => VerifyError::Sort(other),
        }
    }
}

/// Something that yields the three inductive-invariant conditions.
pub trait VcTarget {
    fn vcs(&self, inv: &Term) -> Result<[VerificationCondition; 3], VerifyError>;
}

impl VcTarget for Problem {
    fn vcs(&self, inv: &Term) -> Result<[VerificationCondition; 3], VerifyError> {
        inv_vcs_for(self, inv)
    }
}

impl VcTarget for LoopSpec {
    fn vcs(&self, inv: &Term) -> Result<[VerificationCondition; 3], VerifyError> {
        hoare_vcs(self, inv)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Rejected {
        kind: VcKind,
        model: Option<String>,
    },
    /// The solver could not decide `kind` (unknown, timeout or failure).
    Unknown {
        kind: VcKind,
        status: SolverStatus,
    },
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub verdict: Verdict,
    /// Solver invocations made, between 1 and 3.
    pub calls: u32,
}

/// Checks entry, preservation and exit in that order, stopping at the first
/// condition that is not valid.
pub fn verify<T: VcTarget + ?Sized>(
    target: &T,
    inv: &Term,
    checker: &impl Checker,
) -> Result<Verification, VerifyError> {
    let vcs = target.vcs(inv)?;
    let mut calls = 0;
    for vc in &vcs {
        calls += 1;
        let v = checker.check_vc(vc);
        let verdict = match v.status {
            SolverStatus::Valid => continue,
            SolverStatus::Invalid => Verdict::Rejected {
                kind: vc.kind,
                model: v.model,
            },
            status => Verdict::Unknown {
                kind: vc.kind,
                status,
            },
        };
        return Ok(Verification { verdict, calls });
    }
    Ok(Verification {
        verdict: Verdict::Verified,
        calls,
    })
}

pub fn verify_candidate(
    p: &Problem,
    c: &InvariantCandidate,
    checker: &impl Checker,
) -> Result<Verification, VerifyError> {
    inv_vcs(p, c)?;
    verify(p, &c.body, checker)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equivalence {
    Equivalent,
    Distinct,
    Unknown,
}

/// One solver call deciding `forall vars. a <=> b`.
pub fn equivalent_terms(
    a: &Term,
    b: &Term,
    checker: &impl Checker,
) -> Result<Equivalence, VerifyError> {
    a.check_bool()?;
    b.check_bool()?;
    let decls: Vec<(String, Sort)> = a.free_vars().union(&b.free_vars()).cloned().collect();
    let v = checker.check_valid(&Term::eq(a.clone(), b.clone()), &decls);
    Ok(match v.status {
        SolverStatus::Valid => Equivalence::Equivalent,
        SolverStatus::Invalid => Equivalence::Distinct,
        _ => Equivalence::Unknown,
    })
}

pub fn equivalent(
    a: &InvariantCandidate,
    b: &InvariantCandidate,
    checker: &impl Checker,
) -> Result<Equivalence, VerifyError> {
    if a.problem_id != b.problem_id {
        return Err(VerifyError::ForeignCandidate {
            candidate: b.id.clone(),
            problem: a.problem_id.clone(),
        });
    }
    equivalent_terms(&a.body, &b.body, checker)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dedup {
    pub kept: Vec<InvariantCandidate>,
    pub calls: u32,
}

/// Streaming semantic deduplication in generation order.
///
/// Each new candidate is compared against every earlier candidate, kept or
/// not, until one is found equivalent. An `Unknown` answer counts as
/// distinct, so undecidable pairs are kept.
pub fn dedup(cands: &[InvariantCandidate], checker: &impl Checker) -> Result<Dedup, VerifyError> {
    let mut kept = Vec::new();
    let mut calls = 0;
    for (i, c) in cands.iter().enumerate() {
        let mut duplicate = false;
        for earlier in &cands[..i] {
            calls += 1;
            if equivalent(earlier, c, checker)? == Equivalence::Equivalent {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept.push(c.clone());
        }
    }
    Ok(Dedup { kept, calls })
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;
    use std::time::Duration;

    use super::*;
    use crate::sygus::{parse_candidate, parse_loopspec, parse_problem, Source};

    /// Answers from a fixed script, recording every query.
    struct Scripted {
        answers: RefCell<Vec<SolverStatus>>,
        queries: RefCell<Vec<Term>>,
    }

    impl Scripted {
        fn new(mut answers: Vec<SolverStatus>) -> Self {
            answers.reverse();
            Scripted {
                answers: RefCell::new(answers),
                queries: RefCell::new(vec![]),
            }
        }
    }

    impl Checker for Scripted {
        fn check_valid(&self, formula: &Term, _: &[(String, Sort)]) -> SolverVerdict {
            self.queries.borrow_mut().push(formula.clone());
            let status = self.answers.borrow_mut().pop().expect("unexpected query");
            SolverVerdict {
                status,
                model: (status == SolverStatus::Invalid).then(|| "model".to_string()),
                elapsed: Duration::ZERO,
                detail: None,
            }
        }
    }

    fn spec() -> LoopSpec {
        parse_loopspec("pre: (= x 0); while (< x 5) do { x := (+ x 1); } post: (= x 5);").unwrap()
    }

    #[test]
    fn short_circuits_on_first_failure() {
        use SolverStatus::*;
        let inv = Term::bool(true);
        let v = verify(&spec(), &inv, &Scripted::new(vec![Invalid])).unwrap();
        assert_eq!(v.calls, 1);
        assert!(matches!(
            v.verdict,
            Verdict::Rejected {
                kind: VcKind::Entry,
                ..
            }
        ));

        let v = verify(&spec(), &inv, &Scripted::new(vec![Valid, Timeout])).unwrap();
        assert_eq!(v.calls, 2);
        assert_eq!(
            v.verdict,
            Verdict::Unknown {
                kind: VcKind::Preservation,
                status: Timeout
            }
        );

        let v = verify(
            &spec(),
            &inv,
            &Scripted::new(vec![Valid, Valid, SolverError]),
        )
        .unwrap();
        assert_eq!(v.calls, 3);
        assert!(matches!(
            v.verdict,
            Verdict::Unknown {
                kind: VcKind::Exit,
                ..
            }
        ));

        let v = verify(&spec(), &inv, &Scripted::new(vec![Valid, Valid, Valid])).unwrap();
        assert_eq!(
            v,
            Verification {
                verdict: Verdict::Verified,
                calls: 3
            }
        );
    }

    fn cands(texts: &[&str]) -> Vec<InvariantCandidate> {
        let p = parse_problem(
            "p",
            "(synth-inv inv_fun ((x Int)))
             (define-fun pre_fun ((x Int)) Bool (= x 0))
             (define-fun trans_fun ((x Int) (x! Int)) Bool (= x! x))
             (define-fun post_fun ((x Int)) Bool true)
             (inv-constraint inv_fun pre_fun trans_fun post_fun)",
        )
        .unwrap();
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| parse_candidate(t, &p, Source::Other, i).unwrap())
            .collect()
    }

    #[test]
    fn dedup_compares_against_all_earlier_candidates() {
        use SolverStatus::*;
        let cs = cands(&["(> x (- 1))", "(> (+ x 1) 0)", "(> x 0)"]);
        // pair (0,1) equivalent; (0,2) and (1,2) distinct
        let d = dedup(&cs, &Scripted::new(vec![Valid, Invalid, Invalid])).unwrap();
        assert_eq!(d.calls, 3);
        assert_eq!(d.kept, vec![cs[0].clone(), cs[2].clone()]);
    }

    #[test]
    fn dedup_keeps_unknown_pairs() {
        let cs = cands(&["(> x 0)", "(> x 0)"]);
        let d = dedup(&cs, &Scripted::new(vec![SolverStatus::Timeout])).unwrap();
        assert_eq!(d.kept.len(), 2);
        assert_eq!(d.calls, 1);
    }

    #[test]
    fn dedup_trivial_cases() {
        let cs = cands(&["(> x 0)"]);
        let d = dedup(&cs, &Scripted::new(vec![])).unwrap();
        assert_eq!((d.kept.len(), d.calls), (1, 0));
        let d = dedup(&[], &Scripted::new(vec![])).unwrap();
        assert_eq!((d.kept.len(), d.calls), (0, 0));
    }

    #[test]
    fn equivalence_query_is_a_biconditional() {
        let cs = cands(&["(> x 0)", "(>= x 1)"]);
        let s = Scripted::new(vec![SolverStatus::Valid]);
        assert_eq!(
            equivalent(&cs[0], &cs[1], &s).unwrap(),
            Equivalence::Equivalent
        );
        assert_eq!(s.queries.borrow()[0].to_string(), "(= (> x 0) (>= x 1))");
    }
}

//! Verification-condition generation: weakest preconditions over loop-free
//! statements and the three inductive-invariant conditions.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::VerifyError;
use crate::formulas::{LoopSpec, Sort, Stmt, Term};
use crate::sygus::{InvariantCandidate, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VcKind {
    Entry,
    Preservation,
    Exit,
}

impl fmt::Display for VcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VcKind::Entry => "entry",
            VcKind::Preservation => "preservation",
            VcKind::Exit => "exit",
        })
    }
}

/// An implication whose validity discharges one Hoare condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationCondition {
    pub kind: VcKind,
    pub formula: Term,
    pub decls: Vec<(String, Sort)>,
}

/// Weakest precondition of a loop-free statement.
pub fn wp(s: &Stmt, phi: &Term) -> Term {
    match s {
        Stmt::Assign(x, a) => phi.subst_unchecked(&|v: &str| (v == x).then(|| a.clone())),
        Stmt::Skip => phi.clone(),
        Stmt::Seq(s1, s2) => wp(s1, &wp(s2, phi)),
        Stmt::If(b, s1, s2) => Term::and(vec![
            Term::implies(b.clone(), wp(s1, phi)),
            Term::implies(Term::not(b.clone()), wp(s2, phi)),
        ]),
    }
}

fn check_inv_vars(inv: &Term, vars: &[(String, Sort)]) -> Result<(), VerifyError> {
    inv.check_bool()?;
    let declared: BTreeSet<&(String, Sort)> = vars.iter().collect();
    for v in inv.free_vars() {
        if !declared.contains(&v) {
            return Err(VerifyError::UnknownVariable(v.0));
        }
    }
    Ok(())
}

/// Entry, preservation and exit conditions for `inv` on a while loop.
pub fn hoare_vcs(spec: &LoopSpec, inv: &Term) -> Result<[VerificationCondition; 3], VerifyError> {
    spec.validate()?;
    check_inv_vars(inv, &spec.vars)?;
    let decls = spec.vars.clone();
    Ok([
        VerificationCondition {
            kind: VcKind::Entry,
            formula: Term::implies(spec.pre.clone(), inv.clone()),
            decls: decls.clone(),
        },
        VerificationCondition {
            kind: VcKind::Preservation,
            formula: Term::implies(
                Term::and(vec![inv.clone(), spec.guard.clone()]),
                wp(&spec.body, inv),
            ),
            decls: decls.clone(),
        },
        VerificationCondition {
            kind: VcKind::Exit,
            formula: Term::implies(
                Term::and(vec![inv.clone(), Term::not(spec.guard.clone())]),
                spec.post.clone(),
            ),
            decls,
        },
    ])
}

/// The same three conditions for a transition-relation problem. The guard is
/// folded into `trans` and `post`.
pub fn inv_vcs_for(p: &Problem, inv: &Term) -> Result<[VerificationCondition; 3], VerifyError> {
    check_inv_vars(inv, &p.vars)?;
    let primed = inv.rename(&p.priming());
    let both: Vec<(String, Sort)> = p.vars.iter().chain(&p.primed_vars).cloned().collect();
    Ok([
        VerificationCondition {
            kind: VcKind::Entry,
            formula: Term::implies(p.pre.clone(), inv.clone()),
            decls: p.vars.clone(),
        },
        VerificationCondition {
            kind: VcKind::Preservation,
            formula: Term::implies(Term::and(vec![inv.clone(), p.trans.clone()]), primed),
            decls: both,
        },
        VerificationCondition {
            kind: VcKind::Exit,
            formula: Term::implies(inv.clone(), p.post.clone()),
            decls: p.vars.clone(),
        },
    ])
}

pub fn inv_vcs(
    p: &Problem,
    c: &InvariantCandidate,
) -> Result<[VerificationCondition; 3], VerifyError> {
    if c.problem_id != p.id {
        return Err(VerifyError::ForeignCandidate {
            candidate: c.id.clone(),
            problem: p.id.clone(),
        });
    }
    inv_vcs_for(p, &c.body)
}

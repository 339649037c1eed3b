mod common;

use common::*;
use invrank::formulas::{Sort, Term};
use invrank::sygus::parse_loopspec;
use invrank::verifier::{
    check_vc, dedup, equivalent, verify, verify_candidate, Checker, Equivalence, SolverConfig,
    SolverStatus, VcKind, Verdict, VerificationCondition,
};

fn x() -> Term {
    Term::int_var("x")
}

fn vc(formula: Term) -> VerificationCondition {
    VerificationCondition {
        kind: VcKind::Entry,
        formula,
        decls: vec![("x".into(), Sort::Int)],
    }
}

#[test]
fn check_vc_examples() {
    let cfg = solver().config;
    let v = check_vc(
        &vc(Term::implies(
            Term::eq(x(), Term::int(0)),
            Term::le(x(), Term::int(5)),
        )),
        &cfg,
    );
    assert_eq!(v.status, SolverStatus::Valid);
    assert!(v.model.is_none());

    let v = check_vc(
        &vc(Term::implies(
            Term::le(x(), Term::int(5)),
            Term::eq(x(), Term::int(5)),
        )),
        &cfg,
    );
    assert_eq!(v.status, SolverStatus::Invalid);
    let model = v.model.expect("model for invalid VC");
    assert!(model.contains("x"), "model: {model}");

    let missing = SolverConfig {
        solver_path: "/no/such/solver".into(),
        ..cfg
    };
    assert_eq!(
        check_vc(&vc(Term::bool(true)), &missing).status,
        SolverStatus::SolverError
    );
}

#[test]
fn verify_counter_loop() {
    let s = solver();
    let spec = parse_loopspec(COUNTER_LOOP).unwrap();
    let inv = |lo: Option<i64>, hi: i64| match lo {
        Some(lo) => Term::and(vec![
            Term::le(Term::int(lo), x()),
            Term::le(x(), Term::int(hi)),
        ]),
        None => Term::le(x(), Term::int(hi)),
    };

    let v = verify(&spec, &inv(Some(0), 5), &s).unwrap();
    assert_eq!((v.verdict, v.calls), (Verdict::Verified, 3));

    let v = verify(&spec, &inv(None, 6), &s).unwrap();
    assert_eq!(v.calls, 3);
    match v.verdict {
        Verdict::Rejected { kind, model } => {
            assert_eq!(kind, VcKind::Exit);
            assert!(model.unwrap().contains('6'));
        }
        other => panic!("expected exit rejection, got {other:?}"),
    }

    // x <= 4 is not preserved (4 -> 5)
    let v = verify(&spec, &inv(None, 4), &s).unwrap();
    assert!(matches!(
        v.verdict,
        Verdict::Rejected {
            kind: VcKind::Preservation,
            ..
        }
    ));
    assert_eq!(v.calls, 2);

    let v = verify(&spec, &Term::bool(false), &s).unwrap();
    assert!(matches!(
        v.verdict,
        Verdict::Rejected {
            kind: VcKind::Entry,
            ..
        }
    ));
    assert_eq!(v.calls, 1);
}

#[test]
fn verify_sygus_counter() {
    let s = solver();
    let p = counter_problem();
    let cs = candidates(
        &p,
        &["(and (<= 0 x) (<= x 5))", "(<= x 6)", "false", "true"],
    );
    let out: Vec<_> = cs
        .iter()
        .map(|c| verify_candidate(&p, c, &s).unwrap())
        .collect();
    assert_eq!(out[0].verdict, Verdict::Verified);
    assert!(matches!(
        out[1].verdict,
        Verdict::Rejected {
            kind: VcKind::Exit,
            ..
        }
    ));
    assert!(matches!(
        out[2].verdict,
        Verdict::Rejected {
            kind: VcKind::Entry,
            ..
        }
    ));
    assert!(matches!(
        out[3].verdict,
        Verdict::Rejected {
            kind: VcKind::Exit,
            ..
        }
    ));
    for o in &out {
        assert!((1..=3).contains(&o.calls));
    }
}

#[test]
fn nonlinear_timeout_is_unknown_not_rejected() {
    let mut s = solver();
    s.config.timeout = 0.2;
    // Fermat-style cubic: hard for the solver within the budget
    let v = |n| Term::int_var(n);
    let cube = |t: Term| Term::mul(t.clone(), Term::mul(t.clone(), t));
    let f = Term::not(Term::and(vec![
        Term::gt(v("a"), Term::int(0)),
        Term::gt(v("b"), Term::int(0)),
        Term::gt(v("c"), Term::int(0)),
        Term::eq(Term::add(cube(v("a")), cube(v("b"))), cube(v("c"))),
    ]));
    let decls: Vec<_> = ["a", "b", "c"]
        .iter()
        .map(|n| (n.to_string(), Sort::Int))
        .collect();
    let verdict = s.check_valid(&f, &decls);
    assert!(
        matches!(
            verdict.status,
            SolverStatus::Timeout | SolverStatus::Unknown
        ),
        "got {:?}",
        verdict.status
    );
}

#[test]
fn equivalence_examples_and_symmetry() {
    let s = solver();
    let p = counter_problem();
    let cs = candidates(&p, &["(> (+ x 1) 0)", "(> x (- 1))", "(>= x 0)", "(> x 0)"]);
    assert_eq!(
        equivalent(&cs[0], &cs[1], &s).unwrap(),
        Equivalence::Equivalent
    );
    assert_eq!(
        equivalent(&cs[2], &cs[3], &s).unwrap(),
        Equivalence::Distinct
    );
    for a in &cs {
        assert_eq!(equivalent(a, a, &s).unwrap(), Equivalence::Equivalent);
        for b in &cs {
            assert_eq!(equivalent(a, b, &s).unwrap(), equivalent(b, a, &s).unwrap());
        }
    }
}

#[test]
fn dedup_examples() {
    let s = solver();
    let p = counter_problem();
    let cs = candidates(&p, &["(> x (- 1))", "(> (+ x 1) 0)", "(> x 0)"]);
    let d = dedup(&cs, &s).unwrap();
    assert_eq!(d.calls, 3);
    assert_eq!(d.kept, vec![cs[0].clone(), cs[2].clone()]);

    let same = candidates(&p, &["(<= x 5)"; 4]);
    let d = dedup(&same, &s).unwrap();
    assert_eq!(d.kept, vec![same[0].clone()]);
    assert_eq!(d.calls, 3);

    let again = dedup(&dedup(&cs, &s).unwrap().kept, &s).unwrap();
    assert_eq!(again.kept, d_kept(&cs, &s));
}

fn d_kept(
    cs: &[invrank::sygus::InvariantCandidate],
    s: &impl Checker,
) -> Vec<invrank::sygus::InvariantCandidate> {
    dedup(cs, s).unwrap().kept
}

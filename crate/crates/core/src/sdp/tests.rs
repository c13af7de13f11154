use super::*;
use crate::constraints::{compile, compile_common, Hyperparams};
use crate::corpus::{FactKind, SpoTuple};
use crate::graph::{build_graph_from_parts, FactGraph, Family, GraphFact};
use crate::relevance::TermSet;
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ts(words: &[&str]) -> TermSet {
    words.iter().copied().collect()
}

fn fact(id: &str, s: &[&str], o: &[&str], kind: FactKind) -> GraphFact {
    let mut terms = ts(s);
    terms.extend(&ts(o));
    GraphFact {
        id: id.into(),
        terms,
        kind,
        tuple: Some(SpoTuple { subject: ts(s), predicate: TermSet::new(), object: ts(o) }),
        embedding_key: id.into(),
    }
}

/// `n` hypotheses and `k` facts that all share the term "x".
fn dense_graph(n: usize, kinds: &[FactKind]) -> FactGraph {
    let facts = kinds.iter().enumerate().map(|(i, k)| fact(&format!("F{}", i + 1), &["x"], &[], *k)).collect();
    build_graph_from_parts(vec![ts(&["x"]); n], (0..n).map(|i| format!("h{i}")).collect(), facts).unwrap()
}

fn two_hypothesis_case() -> (FactGraph, Mat<f64>) {
    let g = dense_graph(2, &[FactKind::Grounding; 3]);
    let mut w = Mat::zeros(5, 5);
    for h in 0..2 {
        for f in 2..5 {
            w[(h, f)] = 0.1;
            w[(f, h)] = 0.1;
        }
    }
    w[(0, 2)] = 0.9;
    w[(2, 0)] = 0.9;
    w[(0, 3)] = 0.8;
    w[(3, 0)] = 0.8;
    (g, w)
}

fn check_residuals(sol: &SdpSolution<f64>) {
    assert_eq!(sol.status, SdpStatus::Optimal, "{sol:?}");
    assert!(sol.residuals.primal_eq <= 1e-8, "{:?}", sol.residuals);
    assert!(sol.residuals.primal_ineq <= 1e-8, "{:?}", sol.residuals);
    assert!(sol.residuals.min_eig >= -1e-7, "{:?}", sol.residuals);
}

#[test]
fn two_hypothesis_instance_matches_brute_force() {
    let (g, w) = two_hypothesis_case();
    let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
    let (sel, obj) = brute_force_ilp(&w, &cs, &g).unwrap();
    assert_eq!(sel.answer_index, 0);
    assert_eq!(sel.explanation_ids, ["F1", "F2"]);
    assert_relative_eq!(obj, 1.7, epsilon = 1e-12);

    let sol = solve(&SdpProblem::from_weights(&w, cs, SolverSettings::default())).unwrap();
    check_residuals(&sol);
    assert!(sol.objective_value >= obj - 1e-6, "{} < {obj}", sol.objective_value);
    let r = round_solution(&sol, &g, 2);
    assert_eq!(r.answer_index, 0);
    assert_eq!(r.explanation_ids, ["F1", "F2"]);
}

#[test]
fn single_hypothesis_saturates() {
    let g = dense_graph(1, &[FactKind::Grounding; 2]);
    let w = Mat::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 0.5 });
    let cs = compile_common::<f64>(&g, Family::ExplanationLp, &Hyperparams::default()).unwrap();
    let sol = solve(&SdpProblem::from_weights(&w, cs, SolverSettings::default())).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    for d in sol.diag() {
        assert!((d - 1.0).abs() < 1e-6, "{:?}", sol.diag());
    }
}

#[test]
fn abstract_limit_infeasible_is_reported() {
    let g = dense_graph(1, &[FactKind::Abstract; 3]);
    let w = Mat::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.3 });
    let cs = compile::<f64>(&g, Family::ExplanationLp, &Hyperparams { m: 3, w4: 2, ..Default::default() }).unwrap();
    assert!(matches!(brute_force_ilp(&w, &cs, &g), Err(crate::Error::Infeasible(_))));
    let sol = solve(&SdpProblem::from_weights(&w, cs.clone(), SolverSettings::default())).unwrap();
    assert_eq!(sol.status, SdpStatus::Infeasible, "{:?}", sol.residuals);
    assert!(solve_feasible(&SdpProblem::from_weights(&w, cs, SolverSettings::default())).is_err());
}

#[test]
fn rounding_examples() {
    let g = dense_graph(2, &[FactKind::Grounding; 3]);
    let s = round_diagonal(&[0.9, 0.1, 0.8, 0.7, 0.2], &g, 2);
    assert_eq!((s.answer_index, s.explanation_ids.as_slice()), (0, &["F1".to_string(), "F2".to_string()][..]));
    let s = round_diagonal(&[0.5, 0.5, 0.3, 0.6, 0.6], &g, 2);
    assert_eq!(s.answer_index, 0);
    assert_eq!(s.explanation_ids, ["F2", "F3"]);
    let s = round_diagonal(&[1.0001, -0.0001, 1.0, 0.5, 0.2], &g, 2);
    assert_eq!(s.node_probs[0], 1.0);
    assert_eq!(s.node_probs[1], 0.0);
}

#[test]
fn brute_force_zero_weights_takes_first() {
    let g = dense_graph(3, &[FactKind::Grounding; 4]);
    let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
    let (sel, obj) = brute_force_ilp(&Mat::zeros(7, 7), &cs, &g).unwrap();
    assert_eq!(obj, 0.0);
    assert_eq!(sel.answer_index, 0);
    assert_eq!(sel.explanation_ids, ["F1", "F2"]);
}

#[test]
fn brute_force_respects_subject_pins() {
    // F1 matches the hypothesis only through its object, so it is pinned out
    let facts = vec![
        fact("F1", &["sun"], &["heat"], FactKind::Grounding),
        fact("F2", &["heat"], &[], FactKind::Grounding),
        fact("F3", &["heat"], &[], FactKind::Grounding),
    ];
    let g = build_graph_from_parts(vec![ts(&["heat"]), ts(&["heat"])], vec!["a".into(), "b".into()], facts).unwrap();
    let mut w = Mat::zeros(5, 5);
    for (i, j, v) in [(0, 2, 5.0), (0, 3, 1.0), (0, 4, 0.9), (1, 3, 0.2), (1, 4, 0.2)] {
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    let hp = Hyperparams::default();
    let unpinned = compile_common::<f64>(&g, Family::TupleIlp, &hp).unwrap();
    let (free, free_obj) = brute_force_ilp(&w, &unpinned, &g).unwrap();
    assert_eq!(free.explanation_ids, ["F1", "F2"]);
    assert_relative_eq!(free_obj, 6.0);
    let pinned = compile::<f64>(&g, Family::TupleIlp, &hp).unwrap();
    assert!(pinned.is_pinned(0, 2));
    // with F1 selected the pinned product Z_{h,F1} = 1 breaks its row
    let (sel, obj) = brute_force_ilp(&w, &pinned, &g).unwrap();
    assert_eq!(sel.explanation_ids, ["F2", "F3"]);
    assert_relative_eq!(obj, 1.9);
    assert_relative_eq!(free_obj - obj, 4.1);
}

#[test]
fn brute_force_size_guard() {
    let g = dense_graph(3, &[FactKind::Grounding; 20]);
    let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
    assert!(matches!(brute_force_ilp(&Mat::zeros(23, 23), &cs, &g), Err(crate::Error::TooLarge { nodes: 23, limit: 22 })));
}

#[test]
fn scaling_weights_keeps_selection() {
    let (g, w) = two_hypothesis_case();
    let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
    let base = solve(&SdpProblem::from_weights(&w, cs.clone(), SolverSettings::default())).unwrap();
    for scale in [0.1, 7.0] {
        let sol = solve(&SdpProblem::from_weights(&w.scale(scale), cs.clone(), SolverSettings::default())).unwrap();
        check_residuals(&sol);
        let (a, b) = (round_solution(&sol, &g, 2), round_solution(&base, &g, 2));
        assert_eq!((a.answer_index, a.explanation_ids), (b.answer_index, b.explanation_ids));
        assert_relative_eq!(sol.objective_value, scale * base.objective_value, max_relative = 1e-6);
    }
}

#[test]
fn barrier_target_reaches_central_point() {
    let (g, w) = two_hypothesis_case();
    let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
    let sol = solve(&SdpProblem::from_weights(&w, cs, SolverSettings::at_barrier(0.05))).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal, "{:?}", sol.residuals);
    assert_eq!(sol.final_barrier, 0.05);
    assert!(sol.residuals.primal_eq <= 1e-8);
    // soft but still ordered
    let r = round_solution(&sol, &g, 2);
    assert_eq!(r.answer_index, 0);
    assert!(r.node_probs.iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn runs_in_f32() {
    let (g, w) = two_hypothesis_case();
    let cs = compile_common::<f32>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
    let sol = solve(&SdpProblem::from_weights(&w.cast::<f32>(), cs, SolverSettings::default())).unwrap();
    let r = round_solution(&sol, &g, 2);
    assert_eq!(r.answer_index, 0);
    // both facts sit at 1 up to f32 noise, so only the set is stable
    let mut ids = r.explanation_ids.clone();
    ids.sort();
    assert_eq!(ids, ["F1", "F2"]);
}

fn random_case(seed: u64, family: Family) -> (FactGraph, Mat<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let k = rng.random_range(4..=8);
    let vocab = ["a", "b", "c", "d"];
    let hyp: Vec<TermSet> = (0..n).map(|_| ts(&[vocab[rng.random_range(0..4)], vocab[rng.random_range(0..4)]])).collect();
    let facts = (0..k)
        .map(|i| {
            let kind = if rng.random_bool(0.5) { FactKind::Abstract } else { FactKind::Grounding };
            fact(&format!("F{i}"), &[vocab[rng.random_range(0..4)]], &[vocab[rng.random_range(0..4)]], kind)
        })
        .filter(|f| hyp.iter().any(|h| h.intersects(&f.terms)))
        .collect::<Vec<_>>();
    let facts = if facts.len() < 2 { vec![fact("Fa", &["a", "b", "c", "d"], &[], FactKind::Grounding), fact("Fb", &["a", "b", "c", "d"], &[], FactKind::Abstract)] } else { facts };
    let g = build_graph_from_parts(hyp, (0..n).map(|i| format!("h{i}")).collect(), facts).unwrap();
    let nn = g.n_nodes();
    let mut w = Mat::zeros(nn, nn);
    for (i, j) in crate::graph::weight_support(&g, family) {
        let v = rng.random::<f64>();
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    (g, w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn relaxation_upper_bounds_the_integer_optimum(seed in 0u64..10_000, tuple in proptest::bool::ANY) {
        let family = if tuple { Family::TupleIlp } else { Family::ExplanationLp };
        let (g, w) = random_case(seed, family);
        let cs = compile::<f64>(&g, family, &Hyperparams::default()).unwrap();
        if let Ok((_, best)) = brute_force_ilp(&w, &cs, &g) {
            let sol = solve(&SdpProblem::from_weights(&w, cs, SolverSettings::default())).unwrap();
            prop_assert_eq!(sol.status, SdpStatus::Optimal);
            prop_assert!(sol.objective_value >= best - 1e-6);
        }
    }
}

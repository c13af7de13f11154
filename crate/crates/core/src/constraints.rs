//! Linear trace constraints over the lifted variable `Z = [[1, yᵀ], [y, Y]]`.
//!
//! Graph node `i` lives at lifted index `i + 1`. Coefficient matrices are
//! stored as upper-triangle entries `(r, c, v)` with `r ≤ c`; an off-diagonal
//! entry stands for both `(r, c)` and `(c, r)`, so
//! `⟨A, Z⟩ = Σ_diag v·Z_rr + Σ_off 2·v·Z_rc`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::FactKind;
use crate::error::{Error, Result};
use crate::graph::{weight_support, FactGraph, Family};
use crate::linalg::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Eq,
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint<T> {
    pub entries: Vec<(usize, usize, T)>,
    pub rhs: T,
    pub sense: Sense,
    pub label: String,
}

impl<T: Scalar> LinearConstraint<T> {
    fn new(mut entries: Vec<(usize, usize, T)>, rhs: T, sense: Sense, label: impl Into<String>) -> Self {
        for e in &mut entries {
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        Self { entries, rhs, sense, label: label.into() }
    }

    /// `⟨A, Z⟩`.
    pub fn apply(&self, z: &Mat<T>) -> T {
        let two = T::lit(2.0);
        self.entries.iter().map(|&(r, c, v)| if r == c { v * z[(r, c)] } else { two * v * z[(r, c)] }).sum()
    }

    /// `⟨A, Z⟩` at the rank-one point `Z = [1; y][1; y]ᵀ`.
    pub fn apply_rank_one(&self, y: &[T]) -> T {
        let lifted = |i: usize| if i == 0 { T::one() } else { y[i - 1] };
        let two = T::lit(2.0);
        self.entries
            .iter()
            .map(|&(r, c, v)| {
                let p = lifted(r) * lifted(c);
                if r == c {
                    v * p
                } else {
                    two * v * p
                }
            })
            .sum()
    }

    /// Signed violation: `|⟨A,Z⟩ − b|` for equalities, `max(⟨A,Z⟩ − b, 0)` otherwise.
    pub fn violation(&self, value: T) -> T {
        match self.sense {
            Sense::Eq => (value - self.rhs).abs(),
            Sense::Le => (value - self.rhs).max(T::zero()),
        }
    }

    /// Dense symmetric coefficient matrix.
    pub fn dense(&self, dim: usize) -> Mat<T> {
        let mut a = Mat::zeros(dim, dim);
        for &(r, c, v) in &self.entries {
            a[(r, c)] += v;
            if r != c {
                a[(c, r)] += v;
            }
        }
        a
    }

    pub fn cast<U: Scalar>(&self) -> LinearConstraint<U> {
        LinearConstraint {
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, U::lit(v.as_f64()))).collect(),
            rhs: U::lit(self.rhs.as_f64()),
            sense: self.sense,
            label: self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub m: usize,
    pub w1: usize,
    pub w2: usize,
    pub w3: usize,
    pub w4: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { m: 2, w1: 2, w2: 2, w3: 1, w4: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet<T> {
    pub constraints: Vec<LinearConstraint<T>>,
    /// Node pairs `(i, j)`, `i < j`, forced to `Z = 0`.
    pub pinned_zero_edges: BTreeSet<(usize, usize)>,
    pub hyperparams: Hyperparams,
    pub n_hyp: usize,
    pub n_nodes: usize,
}

/// Largest violations over equality and inequality rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violations<T> {
    pub eq: T,
    pub ineq: T,
}

impl<T: Scalar> ConstraintSet<T> {
    /// Side length of the lifted variable.
    pub fn dim(&self) -> usize {
        self.n_nodes + 1
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn n_eq(&self) -> usize {
        self.constraints.iter().filter(|c| c.sense == Sense::Eq).count()
    }

    pub fn n_le(&self) -> usize {
        self.len() - self.n_eq()
    }

    pub fn get(&self, label: &str) -> Option<&LinearConstraint<T>> {
        self.constraints.iter().find(|c| c.label == label)
    }

    pub fn is_pinned(&self, i: usize, j: usize) -> bool {
        self.pinned_zero_edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn violations(&self, z: &Mat<T>) -> Violations<T> {
        let mut out = Violations { eq: T::zero(), ineq: T::zero() };
        for c in &self.constraints {
            let v = c.violation(c.apply(z));
            match c.sense {
                Sense::Eq => out.eq = out.eq.max(v),
                Sense::Le => out.ineq = out.ineq.max(v),
            }
        }
        out
    }

    /// Every row holds within `tol` at `Z = [1; y][1; y]ᵀ`.
    pub fn feasible_rank_one(&self, y: &[T], tol: T) -> bool {
        self.constraints.iter().all(|c| c.violation(c.apply_rank_one(y)) <= tol)
    }

    pub fn cast<U: Scalar>(&self) -> ConstraintSet<U> {
        ConstraintSet {
            constraints: self.constraints.iter().map(LinearConstraint::cast).collect(),
            pinned_zero_edges: self.pinned_zero_edges.clone(),
            hyperparams: self.hyperparams,
            n_hyp: self.n_hyp,
            n_nodes: self.n_nodes,
        }
    }
}

fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}

fn rows_common<T: Scalar>(g: &FactGraph, m: usize) -> Result<Vec<LinearConstraint<T>>> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let n = g.n_nodes();
    if m + 1 > n {
        return Err(Error::InfeasibleCardinality { needed: m + 1, nodes: n });
    }
    if m > g.n_facts() {
        return Err(Error::InfeasibleCardinality { needed: m + 1, nodes: g.n_facts() + 1 });
    }
    let one = T::one();
    let mut rows = Vec::with_capacity(3 * n + 3);
    rows.push(LinearConstraint::new((1..=g.n_hyp).map(|i| (i, i, one)).collect(), one, Sense::Eq, "answer"));
    rows.push(LinearConstraint::new((1..=n).map(|i| (i, i, one)).collect(), lit(m as f64 + 1.0), Sense::Eq, "cardinality"));
    rows.push(LinearConstraint::new(vec![(0, 0, one)], one, Sense::Eq, "lift"));
    for i in 1..=n {
        rows.push(LinearConstraint::new(vec![(0, i, lit(0.5)), (i, i, -one)], T::zero(), Sense::Eq, format!("lift[{}]", i - 1)));
    }
    for i in 1..=n {
        rows.push(LinearConstraint::new(vec![(i, i, one)], one, Sense::Le, format!("box_hi[{}]", i - 1)));
        rows.push(LinearConstraint::new(vec![(i, i, -one)], T::zero(), Sense::Le, format!("box_lo[{}]", i - 1)));
    }
    Ok(rows)
}

fn nonneg_and_pins<T: Scalar>(
    g: &FactGraph,
    family: Family,
    pins: &BTreeSet<(usize, usize)>,
    rows: &mut Vec<LinearConstraint<T>>,
) {
    for (i, j) in weight_support(g, family) {
        if !pins.contains(&(i, j)) {
            rows.push(LinearConstraint::new(vec![(i + 1, j + 1, lit(-0.5))], T::zero(), Sense::Le, format!("nonneg[{i},{j}]")));
        }
    }
    for &(i, j) in pins {
        rows.push(LinearConstraint::new(vec![(i + 1, j + 1, lit(0.5))], T::zero(), Sense::Eq, format!("pin[{i},{j}]")));
    }
}

/// Common rows only: answer, cardinality, lifting, boxes and edge signs on
/// the family's weight support.
pub fn compile_common<T: Scalar>(g: &FactGraph, family: Family, hp: &Hyperparams) -> Result<ConstraintSet<T>> {
    let mut rows = rows_common(g, hp.m)?;
    let pins = BTreeSet::new();
    nonneg_and_pins(g, family, &pins, &mut rows);
    Ok(ConstraintSet { constraints: rows, pinned_zero_edges: pins, hyperparams: *hp, n_hyp: g.n_hyp, n_nodes: g.n_nodes() })
}

/// Pairs removed by the subject rule and the active-field rule.
pub fn tupleilp_pins(g: &FactGraph, w3: usize) -> BTreeSet<(usize, usize)> {
    let mut pins = BTreeSet::new();
    for i in 0..g.n_hyp {
        for j in g.n_hyp..g.n_nodes() {
            if !g.adjacency.get(i, j) {
                continue;
            }
            let fields = usize::from(g.subject_overlap.get(i, j))
                + usize::from(g.predicate_overlap.get(i, j))
                + usize::from(g.object_overlap.get(i, j));
            if !g.subject_overlap.get(i, j) || fields < w3 {
                pins.insert((i, j));
            }
        }
    }
    pins
}

pub fn compile_tupleilp<T: Scalar>(g: &FactGraph, hp: &Hyperparams) -> Result<ConstraintSet<T>> {
    if let Some(f) = g.facts.iter().find(|f| f.tuple.is_none()) {
        return Err(Error::MissingTuples(f.id.clone()));
    }
    let mut rows = rows_common(g, hp.m)?;
    let one = T::one();
    rows.push(LinearConstraint::new(
        (g.n_hyp..g.n_nodes()).map(|i| (i + 1, i + 1, one)).collect(),
        lit(hp.w1 as f64 + 1.0),
        Sense::Le,
        "active_tuples",
    ));
    for (t, term) in g.hyp_term_list.iter().enumerate() {
        let entries = g.term_edges[t].iter().map(|&(i, j)| (i + 1, j + 1, lit(0.5))).collect();
        rows.push(LinearConstraint::new(entries, lit(hp.w2 as f64), Sense::Le, format!("term_edges[{term}]")));
    }
    let pins = tupleilp_pins(g, hp.w3);
    nonneg_and_pins(g, Family::TupleIlp, &pins, &mut rows);
    Ok(ConstraintSet { constraints: rows, pinned_zero_edges: pins, hyperparams: *hp, n_hyp: g.n_hyp, n_nodes: g.n_nodes() })
}

pub fn compile_explanationlp<T: Scalar>(g: &FactGraph, hp: &Hyperparams) -> Result<ConstraintSet<T>> {
    if let Some(f) = g.facts.iter().find(|f| f.kind == FactKind::Unlabeled) {
        return Err(Error::UnlabeledFact(f.id.clone()));
    }
    let mut rows = rows_common(g, hp.m)?;
    let entries = (g.n_hyp..g.n_nodes())
        .filter(|&i| g.fact_of(i).kind == FactKind::Abstract)
        .map(|i| (i + 1, i + 1, T::one()))
        .collect();
    rows.push(LinearConstraint::new(entries, lit(hp.w4 as f64), Sense::Le, "abstract_limit"));
    let pins = BTreeSet::new();
    nonneg_and_pins(g, Family::ExplanationLp, &pins, &mut rows);
    Ok(ConstraintSet { constraints: rows, pinned_zero_edges: pins, hyperparams: *hp, n_hyp: g.n_hyp, n_nodes: g.n_nodes() })
}

pub fn compile<T: Scalar>(g: &FactGraph, family: Family, hp: &Hyperparams) -> Result<ConstraintSet<T>> {
    match family {
        Family::TupleIlp => compile_tupleilp(g, hp),
        Family::ExplanationLp => compile_explanationlp(g, hp),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SpoTuple;
    use crate::graph::{build_graph_from_parts, GraphFact};
    use crate::relevance::TermSet;

    fn ts(words: &[&str]) -> TermSet {
        words.iter().copied().collect()
    }

    fn fact(id: &str, s: &[&str], p: &[&str], o: &[&str], kind: FactKind) -> GraphFact {
        let mut terms = ts(s);
        terms.extend(&ts(p));
        terms.extend(&ts(o));
        GraphFact {
            id: id.into(),
            terms,
            kind,
            tuple: Some(SpoTuple { subject: ts(s), predicate: ts(p), object: ts(o) }),
            embedding_key: id.into(),
        }
    }

    fn graph(hyps: &[&[&str]], facts: Vec<GraphFact>) -> FactGraph {
        let keys = (0..hyps.len()).map(|i| format!("h{i}")).collect();
        build_graph_from_parts(hyps.iter().map(|h| ts(h)).collect(), keys, facts).unwrap()
    }

    fn diag_y(n: usize, on: &[usize]) -> Vec<f64> {
        (0..n).map(|i| if on.contains(&i) { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn single_hypothesis_forces_its_diagonal() {
        let g = graph(&[&["fire"]], vec![fact("F0", &["fire"], &[], &[], FactKind::Grounding), fact("F1", &["fire"], &[], &[], FactKind::Abstract)]);
        let cs = compile_common::<f64>(&g, Family::ExplanationLp, &Hyperparams { m: 1, ..Default::default() }).unwrap();
        let ans = cs.get("answer").unwrap();
        assert_eq!(ans.entries, vec![(1, 1, 1.0)]);
        assert!(cs.feasible_rank_one(&diag_y(3, &[0, 1]), 1e-12));
        assert!(!cs.feasible_rank_one(&diag_y(3, &[1, 2]), 1e-12));
    }

    #[test]
    fn saturated_cardinality_selects_everything() {
        let g = graph(&[&["fire"]], vec![fact("F0", &["fire"], &[], &[], FactKind::Grounding), fact("F1", &["fire"], &[], &[], FactKind::Abstract)]);
        let cs = compile_common::<f64>(&g, Family::ExplanationLp, &Hyperparams::default()).unwrap();
        // enumerate all 0/1 vectors; only all-ones survives
        let feasible: Vec<usize> = (0..8usize)
            .filter(|mask| cs.feasible_rank_one(&(0..3).map(|i| ((mask >> i) & 1) as f64).collect::<Vec<_>>(), 1e-12))
            .collect();
        assert_eq!(feasible, vec![7]);
    }

    #[test]
    fn common_row_counts() {
        let facts = (0..8).map(|i| fact(&format!("F{i}"), &["t"], &[], &[], FactKind::Grounding)).collect();
        let g = graph(&[&["t"], &["t"], &["t"], &["t"]], facts);
        let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams::default()).unwrap();
        let n = 12;
        assert_eq!(cs.constraints.iter().filter(|c| c.label == "answer" || c.label == "cardinality").count(), 2);
        assert_eq!(cs.constraints.iter().filter(|c| c.label.starts_with("lift")).count(), n + 1);
        assert_eq!(cs.get("cardinality").unwrap().rhs, 3.0);
        let labels: BTreeSet<&str> = cs.constraints.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels.len(), cs.len());
    }

    #[test]
    fn cardinality_guard() {
        let g = graph(&[&["a"], &["a"]], vec![fact("F0", &["a"], &[], &[], FactKind::Grounding)]);
        assert!(matches!(compile::<f64>(&g, Family::TupleIlp, &Hyperparams { m: 3, ..Default::default() }), Err(Error::InfeasibleCardinality { needed: 4, nodes: 3 })));
        assert!(matches!(compile::<f64>(&g, Family::TupleIlp, &Hyperparams::default()), Err(Error::InfeasibleCardinality { .. })));
    }

    #[test]
    fn lift_row_semantics() {
        let g = graph(&[&["a"]], vec![fact("F0", &["a"], &[], &[], FactKind::Grounding)]);
        let cs = compile_common::<f64>(&g, Family::TupleIlp, &Hyperparams { m: 1, ..Default::default() }).unwrap();
        let row = cs.get("lift[1]").unwrap();
        let mut z = Mat::zeros(3, 3);
        z[(0, 2)] = 0.3;
        z[(2, 0)] = 0.3;
        z[(2, 2)] = 0.3;
        assert_eq!(row.apply(&z), 0.0);
        z[(2, 2)] = 0.5;
        assert!((row.apply(&z) + 0.2).abs() < 1e-15);
        assert!(row.dense(3).is_symmetric(0.0));
    }

    #[test]
    fn subject_rule_pins_object_only_match() {
        // hypothesis shares "heat" only with the object of F0
        let g = graph(&[&["heat"]], vec![fact("F0", &["sun"], &["give"], &["heat"], FactKind::Grounding), fact("F1", &["heat"], &["cause"], &["melt"], FactKind::Grounding)]);
        let cs = compile_tupleilp::<f64>(&g, &Hyperparams { m: 1, ..Default::default() }).unwrap();
        assert!(cs.is_pinned(0, 1));
        assert!(!cs.is_pinned(0, 2));
        assert!(cs.get("pin[0,1]").is_some());
        assert!(cs.get("nonneg[0,1]").is_none());
        assert!(cs.get("nonneg[0,2]").is_some());
    }

    #[test]
    fn field_rule_threshold() {
        let g = graph(&[&["heat", "melt"]], vec![fact("F0", &["heat"], &["cause"], &["melt"], FactKind::Grounding)]);
        assert!(tupleilp_pins(&g, 1).is_empty());
        assert!(tupleilp_pins(&g, 2).is_empty());
        assert_eq!(tupleilp_pins(&g, 3).len(), 1);
    }

    #[test]
    fn tupleilp_row_count_from_masks() {
        let facts = vec![
            fact("F0", &["fire"], &["need"], &["oxygen"], FactKind::Grounding),
            fact("F1", &["oxygen"], &["is"], &["gas"], FactKind::Grounding),
            fact("F2", &["wood"], &["is"], &["fuel"], FactKind::Grounding),
            fact("F3", &["ice"], &["is"], &["water", "fire"], FactKind::Grounding),
        ];
        let g = graph(&[&["fire", "oxygen"], &["wood", "gas"]], facts);
        let hp = Hyperparams { m: 2, w3: 1, ..Default::default() };
        let cs = compile_tupleilp::<f64>(&g, &hp).unwrap();
        // independent scan: pin where A=1 and subject mask is off
        let mut expected_pins = 0;
        for i in 0..2 {
            for j in 2..6 {
                if g.adjacency.get(i, j) && !g.subject_overlap.get(i, j) {
                    expected_pins += 1;
                }
            }
        }
        // h0–F3 (object), h1–F1 (object) are pinned
        assert_eq!(expected_pins, 2);
        let l = g.hyp_term_list.len();
        assert_eq!(l, 4);
        let common = compile_common::<f64>(&g, Family::TupleIlp, &hp).unwrap();
        // common rows minus the nonneg rows that pins replace
        let common_without_signs = common.len() - common.constraints.iter().filter(|c| c.label.starts_with("nonneg")).count();
        let edges = g.adjacency.count() / 2;
        assert_eq!(cs.len(), common_without_signs + 1 + l + expected_pins + (edges - expected_pins));
    }

    #[test]
    fn term_edge_row_counts_each_edge_once() {
        let g = graph(&[&["fire"]], vec![fact("F0", &["fire"], &[], &[], FactKind::Grounding), fact("F1", &["fire"], &[], &[], FactKind::Grounding)]);
        let cs = compile_tupleilp::<f64>(&g, &Hyperparams { m: 1, w2: 1, ..Default::default() }).unwrap();
        let row = cs.get("term_edges[fire]").unwrap();
        assert_eq!(row.apply_rank_one(&[1.0, 1.0, 0.0]), 1.0);
        assert_eq!(row.apply_rank_one(&[1.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn missing_tuples_rejected() {
        let mut f = fact("F0", &["a"], &[], &[], FactKind::Grounding);
        f.tuple = None;
        let g = graph(&[&["a"]], vec![f, fact("F1", &["a"], &[], &[], FactKind::Grounding)]);
        assert!(matches!(compile_tupleilp::<f64>(&g, &Hyperparams { m: 1, ..Default::default() }), Err(Error::MissingTuples(ref id)) if id == "F0"));
    }

    #[test]
    fn abstract_limit_rows() {
        let g = graph(&[&["a"]], vec![fact("F0", &["a"], &[], &[], FactKind::Grounding), fact("F1", &["a"], &[], &[], FactKind::Grounding)]);
        let cs = compile_explanationlp::<f64>(&g, &Hyperparams { m: 1, ..Default::default() }).unwrap();
        assert!(cs.get("abstract_limit").unwrap().entries.is_empty());

        let facts = (0..3).map(|i| fact(&format!("A{i}"), &["a"], &[], &[], FactKind::Abstract)).collect();
        let g = graph(&[&["a"]], facts);
        let cs = compile_explanationlp::<f64>(&g, &Hyperparams { m: 3, w4: 2, ..Default::default() }).unwrap();
        // all three abstract diagonals at 1 break the limit
        assert!(!cs.feasible_rank_one(&[1.0, 1.0, 1.0, 1.0], 1e-9));
        assert_eq!(cs.get("abstract_limit").unwrap().apply_rank_one(&[1.0, 1.0, 1.0, 1.0]), 3.0);
    }

    #[test]
    fn mixed_kb_has_feasible_selection() {
        let mut facts = Vec::new();
        for i in 0..3 {
            facts.push(fact(&format!("A{i}"), &["a"], &[], &[], FactKind::Abstract));
            facts.push(fact(&format!("G{i}"), &["a"], &[], &[], FactKind::Grounding));
        }
        let g = graph(&[&["a"], &["a"]], facts);
        let cs = compile_explanationlp::<f64>(&g, &Hyperparams::default()).unwrap();
        // h0 + two abstract facts
        let y = diag_y(8, &[0, 2, 3]);
        for c in &cs.constraints {
            assert!(c.violation(c.apply_rank_one(&y)) <= 1e-12, "{}", c.label);
        }
        assert!(!cs.feasible_rank_one(&diag_y(8, &[0, 1, 2]), 1e-12));
    }

    #[test]
    fn compile_is_deterministic() {
        let facts = vec![fact("F0", &["fire"], &["need"], &["oxygen"], FactKind::Grounding), fact("F1", &["oxygen"], &["is"], &["gas"], FactKind::Abstract)];
        let g = graph(&[&["fire", "oxygen"], &["gas"]], facts);
        for fam in [Family::TupleIlp, Family::ExplanationLp] {
            let a = compile::<f64>(&g, fam, &Hyperparams { m: 1, ..Default::default() }).unwrap();
            let b = compile::<f64>(&g, fam, &Hyperparams { m: 1, ..Default::default() }).unwrap();
            assert_eq!(a, b);
        }
    }
}

//! Per-question hypothesis–fact graph and the two edge-weight families.
//!
//! Node order is `[h_1..h_n, f_1..f_k]`. All structural matrices are 0/1
//! masks over that order; the weight maps are linear in θ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, FactKind, Hypothesis, KnowledgeBase, SpoTuple};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::relevance::{self, EmbeddingAdapter, TermSet};
use crate::scalar::Scalar;

/// Symmetric boolean N×N matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = true;
        self.bits[j * self.n + i] = true;
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn to_mat<T: Scalar>(&self) -> Mat<T> {
        Mat::from_fn(self.n, self.n, |i, j| if self.get(i, j) { T::one() } else { T::zero() })
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n).map(|i| (0..self.n).map(|j| u8::from(self.get(i, j))).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFact {
    pub id: String,
    pub terms: TermSet,
    pub kind: FactKind,
    pub tuple: Option<SpoTuple>,
    pub embedding_key: String,
}

impl From<&Fact> for GraphFact {
    fn from(f: &Fact) -> Self {
        Self {
            id: f.id.clone(),
            terms: f.terms.clone(),
            kind: f.kind,
            tuple: f.tuple.clone(),
            embedding_key: f.embedding_key.clone(),
        }
    }
}

/// One question's hypothesis–fact graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FactGraph {
    pub n_hyp: usize,
    pub hyp_terms: Vec<TermSet>,
    pub hyp_keys: Vec<String>,
    pub facts: Vec<GraphFact>,
    /// Lexical hypothesis–fact connections.
    pub adjacency: Mask,
    pub subject_overlap: Mask,
    pub predicate_overlap: Mask,
    pub object_overlap: Mask,
    /// Unique hypothesis terms, sorted; index `t` addresses `term_edges[t]`.
    pub hyp_term_list: Vec<String>,
    /// Sparse term-incidence tensor: for each hypothesis term, the
    /// `(hypothesis node, fact node)` pairs where both endpoints contain it.
    pub term_edges: Vec<Vec<(usize, usize)>>,
    /// Hypothesis–abstract-fact mask.
    pub abstract_mask: Mask,
}

impl FactGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_hyp + self.facts.len()
    }

    pub fn n_facts(&self) -> usize {
        self.facts.len()
    }

    #[inline]
    pub fn is_hyp(&self, node: usize) -> bool {
        node < self.n_hyp
    }

    /// Fact position of a node index.
    #[inline]
    pub fn fact_of(&self, node: usize) -> &GraphFact {
        &self.facts[node - self.n_hyp]
    }

    pub fn fact_node(&self, fact_id: &str) -> Option<usize> {
        self.facts.iter().position(|f| f.id == fact_id).map(|p| p + self.n_hyp)
    }

    /// Dense N×N slice of the term-incidence tensor for hypothesis term `t`.
    pub fn term_incidence<T: Scalar>(&self, t: usize) -> Mat<T> {
        let n = self.n_nodes();
        let mut m = Mat::zeros(n, n);
        for &(i, j) in &self.term_edges[t] {
            m[(i, j)] = T::one();
            m[(j, i)] = T::one();
        }
        m
    }

    /// JSON view of the structural matrices and an optional weight matrix.
    pub fn debug_json<T: Scalar>(&self, weights: Option<&Mat<T>>) -> serde_json::Value {
        let w = weights.map(|w| {
            w.to_rows().into_iter().map(|r| r.into_iter().map(Scalar::as_f64).collect::<Vec<_>>()).collect::<Vec<_>>()
        });
        serde_json::json!({
            "n_hyp": self.n_hyp,
            "facts": self.facts.iter().map(|f| &f.id).collect::<Vec<_>>(),
            "A": self.adjacency.to_rows(),
            "T_s": self.subject_overlap.to_rows(),
            "T_p": self.predicate_overlap.to_rows(),
            "T_o": self.object_overlap.to_rows(),
            "F_ab": self.abstract_mask.to_rows(),
            "W": w,
        })
    }
}

/// Build the graph from hypotheses and the retrieved fact roster. The roster
/// is deduplicated and ordered by id; facts sharing no term with any
/// hypothesis are dropped.
pub fn build_graph(hypotheses: &[Hypothesis], facts: &[&Fact]) -> Result<FactGraph> {
    let hyp_terms: Vec<TermSet> = hypotheses.iter().map(|h| h.terms.clone()).collect();
    let hyp_keys = hypotheses.iter().map(|h| h.embedding_key.clone()).collect();
    let roster: BTreeMap<&str, &Fact> = facts.iter().map(|f| (f.id.as_str(), *f)).collect();
    let kept: Vec<GraphFact> = roster
        .values()
        .filter(|f| hyp_terms.iter().any(|h| h.intersects(&f.terms)))
        .map(|f| GraphFact::from(*f))
        .collect();
    build_graph_from_parts(hyp_terms, hyp_keys, kept)
}

/// Graph over already-filtered parts; every fact must touch some hypothesis.
pub fn build_graph_from_parts(hyp_terms: Vec<TermSet>, hyp_keys: Vec<String>, facts: Vec<GraphFact>) -> Result<FactGraph> {
    if facts.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let n_hyp = hyp_terms.len();
    let n = n_hyp + facts.len();
    let mut adjacency = Mask::new(n);
    let mut subject_overlap = Mask::new(n);
    let mut predicate_overlap = Mask::new(n);
    let mut object_overlap = Mask::new(n);
    let mut abstract_mask = Mask::new(n);

    let hyp_term_list: Vec<String> = hyp_terms
        .iter()
        .flat_map(|t| t.iter().map(str::to_string))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut term_edges = vec![Vec::new(); hyp_term_list.len()];

    for (i, h) in hyp_terms.iter().enumerate() {
        for (fi, f) in facts.iter().enumerate() {
            let j = n_hyp + fi;
            if h.intersects(&f.terms) {
                adjacency.set_sym(i, j);
            }
            if let Some(t) = &f.tuple {
                if h.intersects(&t.subject) {
                    subject_overlap.set_sym(i, j);
                }
                if h.intersects(&t.predicate) {
                    predicate_overlap.set_sym(i, j);
                }
                if h.intersects(&t.object) {
                    object_overlap.set_sym(i, j);
                }
            }
            if f.kind == FactKind::Abstract {
                abstract_mask.set_sym(i, j);
            }
            for (t, term) in hyp_term_list.iter().enumerate() {
                if h.contains(term) && f.terms.contains(term) {
                    term_edges[t].push((i, j));
                }
            }
        }
    }

    Ok(FactGraph {
        n_hyp,
        hyp_terms,
        hyp_keys,
        facts,
        adjacency,
        subject_overlap,
        predicate_overlap,
        object_overlap,
        hyp_term_list,
        term_edges,
        abstract_mask,
    })
}

/// Semantic (`s`) and lexical (`l`) hypothesis–fact scores, `n_hyp × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores<T> {
    pub semantic: Mat<T>,
    pub lexical: Mat<T>,
}

impl<T: Scalar> RelevanceScores<T> {
    pub fn check_shape(&self, g: &FactGraph) -> bool {
        let shape = (g.n_hyp, g.n_facts());
        (self.semantic.rows(), self.semantic.cols()) == shape && (self.lexical.rows(), self.lexical.cols()) == shape
    }
}

/// Embedding vectors of the graph's nodes, hypotheses then facts.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVectors<T> {
    pub hyps: Vec<Vec<T>>,
    pub facts: Vec<Vec<T>>,
}

impl<T: Scalar> NodeVectors<T> {
    pub fn from_kb(g: &FactGraph, kb: &KnowledgeBase) -> Self {
        let to_t = |v: &[f64]| v.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
        Self {
            hyps: g.hyp_keys.iter().map(|k| to_t(kb.embedding(k))).collect(),
            facts: g.facts.iter().map(|f| to_t(kb.embedding(&f.embedding_key))).collect(),
        }
    }
}

/// Score every hypothesis–fact pair of the graph.
pub fn score_graph<T: Scalar>(
    g: &FactGraph,
    kb: &KnowledgeBase,
    adapter: Option<&EmbeddingAdapter<T>>,
) -> Result<RelevanceScores<T>> {
    score_with_vectors(g, &NodeVectors::from_kb(g, kb), adapter)
}

pub fn score_with_vectors<T: Scalar>(
    g: &FactGraph,
    vectors: &NodeVectors<T>,
    adapter: Option<&EmbeddingAdapter<T>>,
) -> Result<RelevanceScores<T>> {
    let mut semantic = Mat::zeros(g.n_hyp, g.n_facts());
    let mut lexical = Mat::zeros(g.n_hyp, g.n_facts());
    for i in 0..g.n_hyp {
        for (j, f) in g.facts.iter().enumerate() {
            semantic[(i, j)] = relevance::semantic_relevance(&vectors.hyps[i], &vectors.facts[j], adapter)?;
            lexical[(i, j)] = relevance::lexical_relevance(&g.hyp_terms[i], &f.terms);
        }
    }
    Ok(RelevanceScores { semantic, lexical })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "tupleilp")]
    TupleIlp,
    #[serde(rename = "explanationlp")]
    ExplanationLp,
}

impl Family {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::TupleIlp => &["theta_sr", "theta_lr"],
            Family::ExplanationLp => {
                &["theta_gg", "theta_aa", "theta_ga", "theta_qgl", "theta_qgs", "theta_qal", "theta_qas"]
            }
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::TupleIlp => "tupleilp",
            Family::ExplanationLp => "explanationlp",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tupleilp" => Ok(Family::TupleIlp),
            "explanationlp" => Ok(Family::ExplanationLp),
            other => Err(Error::Config(format!("unknown family {other:?} (tupleilp|explanationlp)"))),
        }
    }
}

/// Trainable relevance weights, each clamped to `[0, 1]`, plus the
/// optional embedding adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams<T> {
    pub family: Family,
    pub values: Vec<T>,
    pub adapter: Option<EmbeddingAdapter<T>>,
}

impl<T: Scalar> ThetaParams<T> {
    /// Every component at `value`, no adapter.
    pub fn uniform(family: Family, value: T) -> Self {
        Self { family, values: vec![value; family.n_params()], adapter: None }
    }

    pub fn from_named(family: Family, named: &BTreeMap<String, T>) -> Result<Self> {
        let mut values = Vec::with_capacity(family.n_params());
        for name in family.param_names() {
            let v = named
                .get(*name)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter {name} for family {family}")))?;
            values.push(v);
        }
        if let Some(extra) = named.keys().find(|k| !family.param_names().contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown parameter {extra} for family {family}")));
        }
        Ok(Self { family, values, adapter: None })
    }

    pub fn named(&self) -> BTreeMap<String, T> {
        self.family.param_names().iter().map(|n| n.to_string()).zip(self.values.iter().copied()).collect()
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.family.param_names().iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, v: T) {
        if let Some(i) = self.family.param_names().iter().position(|n| *n == name) {
            self.values[i] = v;
        }
    }

    pub fn clamp(&mut self) {
        for v in &mut self.values {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn in_unit_box(&self) -> bool {
        self.values.iter().all(|v| *v >= T::zero() && *v <= T::one())
    }
}

pub type WeightMatrix<T> = Mat<T>;

/// `W_ij = (θ_sr S_ij + θ_lr L_ij) A_ij` on hypothesis–fact pairs; zero elsewhere.
pub fn weights_tupleilp<T: Scalar>(g: &FactGraph, scores: &RelevanceScores<T>, theta: &ThetaParams<T>) -> WeightMatrix<T> {
    assert_eq!(theta.family, Family::TupleIlp);
    let (sr, lr) = (theta.values[0], theta.values[1]);
    let n = g.n_nodes();
    let mut w = Mat::zeros(n, n);
    for i in 0..g.n_hyp {
        for fj in 0..g.n_facts() {
            let j = g.n_hyp + fj;
            if g.adjacency.get(i, j) {
                let v = sr * scores.semantic[(i, fj)] + lr * scores.lexical[(i, fj)];
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    w
}

/// Lexical relevance between two facts of the graph (node indices).
pub fn fact_fact_lexical<T: Scalar>(g: &FactGraph, a: usize, b: usize) -> T {
    relevance::lexical_relevance(&g.fact_of(a).terms, &g.fact_of(b).terms)
}

/// Piecewise weights by endpoint kind: negative same-kind fact links,
/// positive grounding–abstract links, and hypothesis–fact edges mixing
/// lexical and semantic scores with separate grounding/abstract parameters.
pub fn weights_explanationlp<T: Scalar>(
    g: &FactGraph,
    scores: &RelevanceScores<T>,
    theta: &ThetaParams<T>,
) -> Result<WeightMatrix<T>> {
    assert_eq!(theta.family, Family::ExplanationLp);
    if let Some(f) = g.facts.iter().find(|f| f.kind == FactKind::Unlabeled) {
        return Err(Error::UnlabeledFact(f.id.clone()));
    }
    let [gg, aa, ga, qgl, qgs, qal, qas]: [T; 7] =
        theta.values.as_slice().try_into().expect("explanationlp has seven graph weights");
    let n = g.n_nodes();
    let mut w = Mat::zeros(n, n);
    for i in 0..g.n_hyp {
        for (fj, f) in g.facts.iter().enumerate() {
            let j = g.n_hyp + fj;
            let (l, s) = (scores.lexical[(i, fj)], scores.semantic[(i, fj)]);
            let v = match f.kind {
                FactKind::Grounding => qgl * l + qgs * s,
                _ => qal * l + qas * s,
            };
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    for a in g.n_hyp..n {
        for b in (a + 1)..n {
            let l: T = fact_fact_lexical(g, a, b);
            if l == T::zero() {
                continue;
            }
            let v = match (g.fact_of(a).kind, g.fact_of(b).kind) {
                (FactKind::Grounding, FactKind::Grounding) => -gg * l,
                (FactKind::Abstract, FactKind::Abstract) => -aa * l,
                _ => ga * l,
            };
            w[(a, b)] = v;
            w[(b, a)] = v;
        }
    }
    Ok(w)
}

pub fn weights<T: Scalar>(g: &FactGraph, scores: &RelevanceScores<T>, theta: &ThetaParams<T>) -> Result<WeightMatrix<T>> {
    match theta.family {
        Family::TupleIlp => Ok(weights_tupleilp(g, scores, theta)),
        Family::ExplanationLp => weights_explanationlp(g, scores, theta),
    }
}

/// Pairs `(i, j)`, `i < j`, where the family's weight map can be nonzero.
pub fn weight_support(g: &FactGraph, family: Family) -> Vec<(usize, usize)> {
    let n = g.n_nodes();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let keep = match family {
                Family::TupleIlp => g.adjacency.get(i, j),
                Family::ExplanationLp => {
                    (g.is_hyp(i) && !g.is_hyp(j)) || (!g.is_hyp(i) && g.fact_of(i).terms.intersects(&g.fact_of(j).terms))
                }
            };
            if keep {
                out.push((i, j));
            }
        }
    }
    out
}

/// Chain rule through the (linear) weight map: `dL/dθ_k = Σ_ij dL/dW_ij ∂W_ij/∂θ_k`,
/// plus `dL/dS` (n_hyp × k) for chaining into the embedding adapter.
pub fn weight_backward<T: Scalar>(
    g: &FactGraph,
    scores: &RelevanceScores<T>,
    theta: &ThetaParams<T>,
    dl_dw: &Mat<T>,
) -> (Vec<T>, Mat<T>) {
    let mut d_theta = vec![T::zero(); theta.family.n_params()];
    let mut d_sem = Mat::zeros(g.n_hyp, g.n_facts());
    match theta.family {
        Family::TupleIlp => {
            let sr = theta.values[0];
            for i in 0..g.n_hyp {
                for fj in 0..g.n_facts() {
                    let j = g.n_hyp + fj;
                    if !g.adjacency.get(i, j) {
                        continue;
                    }
                    let gsum = dl_dw[(i, j)] + dl_dw[(j, i)];
                    d_theta[0] += gsum * scores.semantic[(i, fj)];
                    d_theta[1] += gsum * scores.lexical[(i, fj)];
                    d_sem[(i, fj)] = gsum * sr;
                }
            }
        }
        Family::ExplanationLp => {
            let (qgs, qas) = (theta.values[4], theta.values[6]);
            for i in 0..g.n_hyp {
                for (fj, f) in g.facts.iter().enumerate() {
                    let j = g.n_hyp + fj;
                    let gsum = dl_dw[(i, j)] + dl_dw[(j, i)];
                    let (l, s) = (scores.lexical[(i, fj)], scores.semantic[(i, fj)]);
                    if f.kind == FactKind::Grounding {
                        d_theta[3] += gsum * l;
                        d_theta[4] += gsum * s;
                        d_sem[(i, fj)] = gsum * qgs;
                    } else {
                        d_theta[5] += gsum * l;
                        d_theta[6] += gsum * s;
                        d_sem[(i, fj)] = gsum * qas;
                    }
                }
            }
            let n = g.n_nodes();
            for a in g.n_hyp..n {
                for b in (a + 1)..n {
                    let l: T = fact_fact_lexical(g, a, b);
                    if l == T::zero() {
                        continue;
                    }
                    let gsum = dl_dw[(a, b)] + dl_dw[(b, a)];
                    match (g.fact_of(a).kind, g.fact_of(b).kind) {
                        (FactKind::Grounding, FactKind::Grounding) => d_theta[0] -= gsum * l,
                        (FactKind::Abstract, FactKind::Abstract) => d_theta[1] -= gsum * l,
                        _ => d_theta[2] += gsum * l,
                    }
                }
            }
        }
    }
    (d_theta, d_sem)
}

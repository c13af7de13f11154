use super::SdpSolution;
use crate::graph::FactGraph;
use crate::scalar::Scalar;

/// Discrete answer and explanation read off the node diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub answer_index: usize,
    /// Top-`m` facts by diagonal value, best first; ties go to the smaller id.
    pub explanation_ids: Vec<String>,
    /// Node diagonals clipped to `[0, 1]`, hypotheses first.
    pub node_probs: Vec<T>,
}

impl<T: Scalar> Selection<T> {
    pub fn hypothesis_probs(&self, n_hyp: usize) -> &[T] {
        &self.node_probs[..n_hyp]
    }

    pub fn fact_probs(&self, n_hyp: usize) -> &[T] {
        &self.node_probs[n_hyp..]
    }
}

pub fn round_solution<T: Scalar>(sol: &SdpSolution<T>, graph: &FactGraph, m: usize) -> Selection<T> {
    round_diagonal(&sol.diag(), graph, m)
}

/// Rounding on a raw node diagonal.
pub fn round_diagonal<T: Scalar>(diag: &[T], graph: &FactGraph, m: usize) -> Selection<T> {
    assert_eq!(diag.len(), graph.n_nodes());
    let node_probs: Vec<T> = diag.iter().map(|&v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) }).collect();
    let mut answer_index = 0;
    for i in 1..graph.n_hyp {
        if node_probs[i] > node_probs[answer_index] {
            answer_index = i;
        }
    }
    let mut order: Vec<usize> = (0..graph.n_facts()).collect();
    // facts are id-ordered, so a stable sort by value keeps the id tie rule
    order.sort_by(|&a, &b| {
        node_probs[graph.n_hyp + b].partial_cmp(&node_probs[graph.n_hyp + a]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let explanation_ids = order.into_iter().take(m).map(|f| graph.facts[f].id.clone()).collect();
    Selection { answer_index, explanation_ids, node_probs }
}

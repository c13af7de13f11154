use super::Selection;
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::graph::FactGraph;
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Node-count guard for exhaustive enumeration.
pub const BRUTE_FORCE_LIMIT: usize = 22;

/// Exhaustive maximizer of `Σ_{i<j} W_ij y_i y_j` over selections of one
/// hypothesis and `m` facts satisfying every compiled row at `Y = y yᵀ`.
/// Candidates are visited in lexicographic order of
/// `(hypothesis, fact indices)`; the first maximum wins.
pub fn brute_force_ilp<T: Scalar>(w: &Mat<T>, cs: &ConstraintSet<T>, graph: &FactGraph) -> Result<(Selection<T>, T)> {
    let n = graph.n_nodes();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { nodes: n, limit: BRUTE_FORCE_LIMIT });
    }
    let m = cs.hyperparams.m;
    let k = graph.n_facts();
    let tol = T::lit(1e-8).max(T::tol_floor());
    let mut best: Option<(T, Vec<T>, usize, Vec<usize>)> = None;
    let mut combo: Vec<usize> = (0..m).collect();
    if m > k {
        return Err(Error::InfeasibleCardinality { needed: m + 1, nodes: k + 1 });
    }
    for h in 0..graph.n_hyp {
        combo.iter_mut().enumerate().for_each(|(i, c)| *c = i);
        loop {
            let mut y = vec![T::zero(); n];
            y[h] = T::one();
            for &f in &combo {
                y[graph.n_hyp + f] = T::one();
            }
            if cs.feasible_rank_one(&y, tol) {
                let obj = half_quadratic(w, &y);
                if best.as_ref().map_or(true, |b| obj > b.0) {
                    best = Some((obj, y, h, combo.clone()));
                }
            }
            if !next_combination(&mut combo, k) {
                break;
            }
        }
    }
    let (obj, y, h, facts) = best.ok_or_else(|| Error::Infeasible("no integral selection satisfies the constraints".into()))?;
    let explanation_ids = facts.iter().map(|&f| graph.facts[f].id.clone()).collect();
    Ok((Selection { answer_index: h, explanation_ids, node_probs: y }, obj))
}

fn half_quadratic<T: Scalar>(w: &Mat<T>, y: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..y.len() {
        if y[i] == T::zero() {
            continue;
        }
        for j in (i + 1)..y.len() {
            acc += w[(i, j)] * y[i] * y[j];
        }
    }
    acc
}

/// Advance to the next `m`-subset of `0..k` in lexicographic order.
fn next_combination(c: &mut [usize], k: usize) -> bool {
    let m = c.len();
    for i in (0..m).rev() {
        if c[i] < k - m + i {
            c[i] += 1;
            for j in (i + 1)..m {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::next_combination;

    #[test]
    fn combinations_in_order() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }
}

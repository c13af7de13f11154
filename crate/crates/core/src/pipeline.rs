//! Per-question plumbing shared by training and evaluation: retrieval,
//! graph and constraint preparation, and the forward solve.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{compile, ConstraintSet, Hyperparams};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graph::{build_graph, score_with_vectors, weights, Family, FactGraph, NodeVectors, RelevanceScores, ThetaParams};
use crate::relevance::{retrieve_top_k, RetrievalMode};
use crate::scalar::Scalar;
use crate::sdp::{round_solution, solve_feasible, SdpProblem, SdpSolution, Selection, SolverConfig, SolverSettings};

/// Retrieval depth, retrieval scoring and the constraint hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub k: usize,
    pub retrieval: RetrievalMode,
    pub hyperparams: Hyperparams,
    pub solver: SolverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { k: 10, retrieval: RetrievalMode::Combined, hyperparams: Hyperparams::default(), solver: SolverConfig::default() }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("retrieval depth k must be at least 1".into()));
        }
        if self.hyperparams.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        self.solver.validate()
    }
}

/// Ranked retrieval lists per hypothesis at a fixed depth. Any `k` up to
/// the depth is served by prefixes, so a k-sweep retrieves once.
#[derive(Debug, Clone)]
pub struct RetrievalCache {
    pub depth: usize,
    pub mode: RetrievalMode,
    lists: BTreeMap<String, Vec<Vec<String>>>,
}

impl RetrievalCache {
    pub fn build(corpus: &Corpus, depth: usize, mode: RetrievalMode) -> Result<Self> {
        let kb = &corpus.kb;
        let lists = corpus
            .questions
            .par_iter()
            .map(|q| {
                let per_hyp = corpus
                    .hypotheses_for(&q.id)
                    .iter()
                    .map(|h| {
                        let r = retrieve_top_k(&h.terms, kb.embedding(&h.embedding_key), kb.candidates(), depth, mode)?;
                        Ok(r.hits.into_iter().map(|s| s.id).collect())
                    })
                    .collect::<Result<Vec<Vec<String>>>>()?;
                Ok((q.id.clone(), per_hyp))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { depth, mode, lists: lists.into_iter().collect() })
    }

    /// Union of the per-hypothesis top-`k` lists.
    pub fn roster(&self, question_id: &str, k: usize) -> Result<BTreeSet<&str>> {
        if k > self.depth {
            return Err(Error::Config(format!("k = {k} exceeds cached retrieval depth {}", self.depth)));
        }
        let lists = self
            .lists
            .get(question_id)
            .ok_or_else(|| Error::Internal(format!("question {question_id} missing from retrieval cache")))?;
        Ok(lists.iter().flat_map(|l| l.iter().take(k).map(String::as_str)).collect())
    }
}

/// Everything about one question that does not depend on θ.
#[derive(Debug, Clone)]
pub struct QuestionInstance<T> {
    pub question_id: String,
    pub gold_answer: usize,
    pub graph: FactGraph,
    pub vectors: NodeVectors<T>,
    /// Scores with the raw embeddings; recomputed only when an adapter is active.
    pub scores: RelevanceScores<T>,
    pub constraints: ConstraintSet<T>,
    /// Per-fact explanation targets when gold explanations exist.
    pub targets: Option<Vec<bool>>,
    /// Gold explanation facts missing from the roster.
    pub gold_miss: usize,
}

/// A question that could not be prepared for numerical reasons.
#[derive(Debug)]
pub struct Skipped {
    pub question_id: String,
    pub error: Error,
}

pub type Prepared<T> = std::result::Result<QuestionInstance<T>, Skipped>;

/// Build instances for every question at depth `k`. Input errors abort;
/// numerical ones (empty graph, cardinality) are returned per question.
pub fn prepare<T: Scalar>(
    corpus: &Corpus,
    cache: &RetrievalCache,
    k: usize,
    family: Family,
    hp: &Hyperparams,
) -> Result<Vec<Prepared<T>>> {
    corpus
        .questions
        .par_iter()
        .map(|q| {
            let build = || -> Result<QuestionInstance<T>> {
                let hyps = corpus.hypotheses_for(&q.id);
                let roster = cache.roster(&q.id, k)?;
                let facts: Vec<_> = roster.iter().filter_map(|id| corpus.kb.fact(id)).collect();
                let graph = build_graph(hyps, &facts)?;
                let vectors = NodeVectors::<T>::from_kb(&graph, &corpus.kb);
                let scores = score_with_vectors(&graph, &vectors, None)?;
                let constraints = compile(&graph, family, hp)?;
                let (targets, gold_miss) = match &q.gold_explanation_ids {
                    Some(gold) => {
                        let t: Vec<bool> = graph.facts.iter().map(|f| gold.contains(&f.id)).collect();
                        let hit = t.iter().filter(|b| **b).count();
                        (Some(t), gold.len() - hit)
                    }
                    None => (None, 0),
                };
                Ok(QuestionInstance {
                    question_id: q.id.clone(),
                    gold_answer: q.gold_answer_index,
                    graph,
                    vectors,
                    scores,
                    constraints,
                    targets,
                    gold_miss,
                })
            };
            match build() {
                Ok(inst) => Ok(Ok(inst)),
                Err(e) if e.is_numerical() => Ok(Err(Skipped { question_id: q.id.clone(), error: e })),
                Err(e) => Err(e),
            }
        })
        .collect()
}

impl<T: Scalar> QuestionInstance<T> {
    /// Relevance scores under θ's adapter (the raw scores when there is none).
    pub fn scores_for(&self, theta: &ThetaParams<T>) -> Result<RelevanceScores<T>> {
        match &theta.adapter {
            Some(a) if a.enabled => score_with_vectors(&self.graph, &self.vectors, Some(a)),
            _ => Ok(self.scores.clone()),
        }
    }

    /// The SDP for θ, together with the scores it was built from.
    pub fn problem(&self, theta: &ThetaParams<T>, settings: SolverSettings<T>) -> Result<(SdpProblem<T>, RelevanceScores<T>)> {
        let scores = self.scores_for(theta)?;
        let w = weights(&self.graph, &scores, theta)?;
        Ok((SdpProblem::from_weights(&w, self.constraints.clone(), settings), scores))
    }

    /// Solve and round. A solve stopped at the iteration cap still yields a
    /// usable iterate; callers can inspect the returned status.
    pub fn predict(&self, theta: &ThetaParams<T>, settings: SolverSettings<T>) -> Result<(Selection<T>, SdpSolution<T>)> {
        let (problem, _) = self.problem(theta, settings)?;
        let sol = solve_feasible(&problem)?;
        Ok((round_solution(&sol, &self.graph, self.constraints.hyperparams.m), sol))
    }
}

/// Partition prepared instances into usable ones and skips.
pub fn split_prepared<T>(prepared: Vec<Prepared<T>>) -> (Vec<QuestionInstance<T>>, Vec<Skipped>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for p in prepared {
        match p {
            Ok(i) => ok.push(i),
            Err(s) => skipped.push(s),
        }
    }
    (ok, skipped)
}

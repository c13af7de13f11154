//! Accuracy and Precision@K, the IR and frozen-θ search baselines, the
//! retrieval-depth sweep, and the synthetic corpus generator.

mod synth;

pub use synth::{generate_synthetic_corpus, planted_theta, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graph::{Family, ThetaParams};
use crate::pipeline::{prepare, split_prepared, PipelineConfig, QuestionInstance, RetrievalCache};
use crate::relevance::{retrieve_top_k, RetrievalMode};
use crate::scalar::Scalar;
use crate::sdp::{SdpStatus, SolverSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub predicted: usize,
    pub gold: usize,
    /// Predicted explanation, best first.
    pub explanation: Vec<String>,
    /// Predicted facts that are gold; absent without gold explanations.
    pub explanation_hits: Option<usize>,
    /// Set when the solve stopped at the iteration cap.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub max_iters: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `correct / answered`; zero when nothing was answered.
    pub accuracy: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub per_question: Vec<QuestionResult>,
    pub answered: usize,
    pub skipped: usize,
}

impl EvalReport {
    fn from_results(mut per_question: Vec<QuestionResult>, skipped: usize, golds: &BTreeMap<String, BTreeSet<String>>, ks: &[usize]) -> Self {
        per_question.sort_by(|a, b| a.id.cmp(&b.id));
        let answered = per_question.len();
        let correct = per_question.iter().filter(|r| r.predicted == r.gold).count();
        let accuracy = if answered == 0 { 0.0 } else { correct as f64 / answered as f64 };
        let mut precision_at = BTreeMap::new();
        for &k in ks {
            let vals: Vec<f64> = per_question
                .iter()
                .filter_map(|r| golds.get(r.id.as_str()).map(|g| precision_at_k(&r.explanation, g, k)))
                .collect();
            if !vals.is_empty() {
                precision_at.insert(k, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        Self { accuracy, precision_at, per_question, answered, skipped }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// `|top-K(predicted) ∩ gold| / K`.
pub fn precision_at_k(predicted: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k > 0, "K must be positive");
    let hits = predicted.iter().take(k).filter(|id| gold.contains(*id)).count();
    hits as f64 / k as f64
}

/// Solve and score prepared instances. `pre_skipped` counts questions
/// dropped during preparation.
pub fn evaluate_instances<T: Scalar>(
    instances: &[QuestionInstance<T>],
    pre_skipped: usize,
    theta: &ThetaParams<T>,
    settings: SolverSettings<T>,
) -> EvalReport {
    let outcomes: Vec<Option<(QuestionResult, Option<BTreeSet<String>>)>> = instances
        .par_iter()
        .map(|inst| {
            let (sel, sol) = match inst.predict(theta, settings) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("question {}: {e}", inst.question_id);
                    return None;
                }
            };
            let gold_set: Option<BTreeSet<String>> = inst.targets.as_ref().map(|t| {
                inst.graph.facts.iter().zip(t).filter(|(_, b)| **b).map(|(f, _)| f.id.clone()).collect()
            });
            let hits = gold_set.as_ref().map(|g| sel.explanation_ids.iter().filter(|id| g.contains(*id)).count());
            let result = QuestionResult {
                id: inst.question_id.clone(),
                predicted: sel.answer_index,
                gold: inst.gold_answer,
                explanation: sel.explanation_ids,
                explanation_hits: hits,
                max_iters: sol.status == SdpStatus::MaxIters,
            };
            Some((result, gold_set))
        })
        .collect();
    let m = instances.first().map_or(0, |i| i.constraints.hyperparams.m);
    let skipped = pre_skipped + outcomes.iter().filter(|o| o.is_none()).count();
    let (results, golds): (Vec<_>, Vec<_>) = outcomes.into_iter().flatten().unzip();
    let gold_map: BTreeMap<String, BTreeSet<String>> =
        results.iter().zip(golds).filter_map(|(r, g)| g.map(|g| (r.id.clone(), g))).collect();
    let ks: Vec<usize> = (1..=m).collect();
    EvalReport::from_results(results, skipped, &gold_map, &ks)
}

/// Full pipeline at depth `pipe.k` with exact (non-smoothed) solves.
/// Precision@K uses the gold explanation set restricted to the retrieved roster.
pub fn evaluate(corpus: &Corpus, family: Family, theta: &ThetaParams<f64>, pipe: &PipelineConfig) -> Result<EvalReport> {
    let cache = RetrievalCache::build(corpus, pipe.k, pipe.retrieval)?;
    evaluate_cached(corpus, &cache, pipe.k, family, theta, pipe)
}

fn evaluate_cached(
    corpus: &Corpus,
    cache: &RetrievalCache,
    k: usize,
    family: Family,
    theta: &ThetaParams<f64>,
    pipe: &PipelineConfig,
) -> Result<EvalReport> {
    let (instances, skips) = split_prepared(prepare::<f64>(corpus, cache, k, family, &pipe.hyperparams)?);
    Ok(evaluate_instances(&instances, skips.len(), theta, pipe.solver.settings()))
}

/// Descending semantic retrieval scores per hypothesis, to depth `depth`.
fn semantic_scores(corpus: &Corpus, depth: usize) -> Result<Vec<(String, usize, Vec<Vec<f64>>)>> {
    let kb = &corpus.kb;
    corpus
        .questions
        .par_iter()
        .map(|q| {
            let lists = corpus
                .hypotheses_for(&q.id)
                .iter()
                .map(|h| {
                    let r = retrieve_top_k(&h.terms, kb.embedding(&h.embedding_key), kb.candidates(), depth, RetrievalMode::Semantic)?;
                    Ok(r.hits.into_iter().map(|s| s.semantic).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok((q.id.clone(), q.gold_answer_index, lists))
        })
        .collect()
}

fn ir_report(scores: &[(String, usize, Vec<Vec<f64>>)], k: usize) -> EvalReport {
    let results = scores
        .iter()
        .map(|(id, gold, lists)| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, l) in lists.iter().enumerate() {
                let s: f64 = l.iter().take(k).sum();
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            QuestionResult { id: id.clone(), predicted: best, gold: *gold, explanation: Vec::new(), explanation_hits: None, max_iters: false }
        })
        .collect();
    EvalReport::from_results(results, 0, &BTreeMap::new(), &[])
}

/// Retrieval-only baseline: each hypothesis scores the sum of the cosine
/// similarities of its top-`k` facts; the highest score answers.
pub fn ir_solver(corpus: &Corpus, k: usize) -> Result<EvalReport> {
    Ok(ir_report(&semantic_scores(corpus, k)?, k))
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Candidate θ vectors: a `g × g` grid for TupleILP, `g` uniform samples
/// for ExplanationLP.
pub fn search_points(family: Family, grid_points: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    match family {
        Family::TupleIlp => {
            if grid_points < 2 {
                return Err(Error::Config("grid search needs at least 2 points per dimension".into()));
            }
            let axis: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
            Ok(axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect())
        }
        Family::ExplanationLp => {
            if grid_points == 0 {
                return Err(Error::Config("random search needs at least one sample".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..grid_points).map(|_| (0..family.n_params()).map(|_| rng.random::<f64>()).collect()).collect())
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub theta: ThetaParams<f64>,
    pub accuracy: f64,
    pub evaluations: usize,
}

/// Frozen-representation baseline: the θ among [`search_points`] with the
/// best accuracy on `corpus`; ties go to the lexicographically smallest θ.
pub fn grid_search_theta(corpus: &Corpus, family: Family, grid_points: usize, seed: u64, pipe: &PipelineConfig) -> Result<SearchResult> {
    let points = search_points(family, grid_points, seed)?;
    let cache = RetrievalCache::build(corpus, pipe.k, pipe.retrieval)?;
    let (instances, skips) = split_prepared(prepare::<f64>(corpus, &cache, pipe.k, family, &pipe.hyperparams)?);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for p in &points {
        let theta = ThetaParams { family, values: p.clone(), adapter: None };
        let acc = evaluate_instances(&instances, skips.len(), &theta, pipe.solver.settings()).accuracy;
        let better = match &best {
            None => true,
            Some((bp, ba)) => acc > *ba || (acc == *ba && lex_less(p, bp)),
        };
        if better {
            best = Some((p.clone(), acc));
        }
    }
    let (values, accuracy) = best.expect("at least one search point");
    Ok(SearchResult { theta: ThetaParams { family, values, adapter: None }, accuracy, evaluations: points.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweep {
    pub family: Family,
    pub entries: Vec<SweepEntry>,
}

impl KSweep {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.k == k).map(|e| e.accuracy)
    }

    pub fn baseline_at(&self, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.k == k).map(|e| e.baseline_accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,accuracy,baseline_accuracy\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.k, e.accuracy, e.baseline_accuracy);
        }
        out
    }
}

/// Model and IR-baseline accuracy at each retrieval depth. Retrieval runs
/// once at the largest depth; smaller depths use prefixes.
pub fn k_sweep(corpus: &Corpus, family: Family, theta: &ThetaParams<f64>, ks: &[usize], pipe: &PipelineConfig) -> Result<KSweep> {
    if ks.is_empty() {
        return Err(Error::Config("k sweep needs at least one depth".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(Error::Config(format!("k values must be positive and strictly ascending, got {ks:?}")));
    }
    let depth = *ks.last().expect("non-empty");
    let cache = RetrievalCache::build(corpus, depth, pipe.retrieval)?;
    let ir = semantic_scores(corpus, depth)?;
    let entries = ks
        .iter()
        .map(|&k| {
            let report = evaluate_cached(corpus, &cache, k, family, theta, pipe)?;
            Ok(SweepEntry { k, accuracy: report.accuracy, baseline_accuracy: ir_report(&ir, k).accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KSweep { family, entries })
}

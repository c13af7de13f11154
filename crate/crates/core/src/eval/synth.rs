//! Synthetic question sets with planted explanations and tunable
//! distractors.
//!
//! Every question has four candidates. The gold candidate gets a grounding
//! fact and an abstract fact chained by a shared bridge term, both close to
//! the gold hypothesis in embedding space but with little lexical overlap.
//! A wrong candidate may receive, each with probability `distractor_ratio`:
//! a lexical decoy pair (heavy term overlap with that hypothesis and with each
//! other, weak embedding similarity), and a cluster of semantic decoys that
//! share no terms but sit moderately close in embedding space. The lexical
//! pair enters the graph and misleads lexically weighted relevance; the
//! semantic cluster only affects retrieval and grows in weight as `k` grows.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{hypothesis_key, Corpus, FactKind, QuestionRecord};
use crate::error::{Error, Result};
use crate::graph::{Family, ThetaParams};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_questions: usize,
    pub seed: u64,
    pub distractor_ratio: f64,
    pub dim: usize,
    pub semantic_decoys: usize,
    pub gold_supports: usize,
}

impl SynthConfig {
    pub fn new(n_questions: usize, seed: u64, distractor_ratio: f64) -> Self {
        Self { n_questions, seed, distractor_ratio, dim: 128, semantic_decoys: 12, gold_supports: 3 }
    }
}

/// θ under which the planted explanation wins: semantic relevance only,
/// with neutral fact–fact weights.
pub fn planted_theta() -> ThetaParams<f64> {
    let mut t = ThetaParams::uniform(Family::ExplanationLp, 0.5);
    for (name, v) in [("theta_qgl", 0.0), ("theta_qal", 0.0), ("theta_qgs", 1.0), ("theta_qas", 1.0)] {
        t.set(name, v);
    }
    t
}

pub fn generate_synthetic_corpus(n_questions: usize, seed: u64, distractor_ratio: f64) -> Result<Corpus> {
    SynthConfig::new(n_questions, seed, distractor_ratio).generate()
}

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aeiou";

struct Gen {
    rng: ChaCha8Rng,
    dim: usize,
    next_word: usize,
}

impl Gen {
    /// Unique pronounceable token; the final `k` keeps suffix stripping away.
    fn word(&mut self) -> String {
        let n_syl = CONSONANTS.len() * VOWELS.len();
        let mut x = self.next_word;
        self.next_word += 1;
        let mut w = String::with_capacity(8);
        for _ in 0..3 {
            let s = x % n_syl;
            x /= n_syl;
            w.push(CONSONANTS[s / VOWELS.len()] as char);
            w.push(VOWELS[s % VOWELS.len()] as char);
        }
        assert_eq!(x, 0, "synthetic vocabulary exhausted");
        w.push('k');
        w
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }

    fn unit(&mut self) -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..self.dim).map(|_| self.rng.sample(StandardNormal)).collect();
            let n = linalg::norm(&v);
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                return v;
            }
        }
    }

    /// Unit vector with cosine `s` (jittered) to the unit vector `u`.
    fn near(&mut self, u: &[f64], s: f64, jitter: f64) -> Vec<f64> {
        let z: f64 = self.rng.sample(StandardNormal);
        let s = (s + jitter * z).clamp(-0.99, 0.99);
        let mut n = self.unit();
        let d = linalg::dot(&n, u);
        n.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        let nn = linalg::norm(&n);
        n.iter_mut().for_each(|a| *a /= nn);
        let c = (1.0 - s * s).sqrt();
        u.iter().zip(&n).map(|(a, b)| s * a + c * b).collect()
    }

    fn mix(&mut self, parts: &[(f64, &[f64])]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (w, p) in parts {
            v.iter_mut().zip(p.iter()).for_each(|(a, b)| *a += w * b);
        }
        let n = linalg::norm(&v);
        v.iter_mut().for_each(|a| *a /= n);
        v
    }
}

type FactRow = (String, String, FactKind, Option<crate::corpus::RawTuple>);

impl SynthConfig {
    pub fn generate(&self) -> Result<Corpus> {
        if self.n_questions < 10 {
            return Err(Error::Config(format!("synthetic corpus needs at least 10 questions, got {}", self.n_questions)));
        }
        if !(0.0..=1.0).contains(&self.distractor_ratio) {
            return Err(Error::Config(format!("distractor ratio must lie in [0, 1], got {}", self.distractor_ratio)));
        }
        let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(self.seed), dim: self.dim, next_word: 0 };
        let mut facts: Vec<FactRow> = Vec::new();
        let mut questions = Vec::with_capacity(self.n_questions);
        let mut embeddings: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let width = self.n_questions.to_string().len().max(3);

        for qi in 0..self.n_questions {
            let qid = format!("q{qi:0width$}");
            let add = |facts: &mut Vec<FactRow>, emb: &mut BTreeMap<String, Vec<f64>>, tag: String, words: &[String], kind, v| {
                let id = format!("{qid}-{tag}");
                facts.push((id.clone(), words.join(" "), kind, None));
                emb.insert(id, v);
            };

            let qw = g.words(3);
            let cw: Vec<Vec<String>> = (0..4).map(|_| g.words(3)).collect();
            let gold = g.rng.random_range(0..4usize);
            let topic = g.unit();
            let hyps: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    let c = g.unit();
                    g.mix(&[(0.3, &topic), (1.0, &c)])
                })
                .collect();
            for (i, h) in hyps.iter().enumerate() {
                embeddings.insert(hypothesis_key(&qid, i), h.clone());
            }

            let bridge = g.word();
            let mut ground = vec![cw[gold][0].clone(), bridge.clone()];
            ground.extend(g.words(2));
            let v = g.near(&hyps[gold], 0.85, 0.02);
            add(&mut facts, &mut embeddings, "gold-g".into(), &ground, FactKind::Grounding, v);
            let mut abs = vec![bridge, qw[0].clone()];
            abs.extend(g.words(2));
            let v = g.near(&hyps[gold], 0.65, 0.02);
            add(&mut facts, &mut embeddings, "gold-a".into(), &abs, FactKind::Abstract, v);

            for (t, kind) in [(1usize, FactKind::Grounding), (2, FactKind::Abstract)] {
                let mut w = vec![qw[t].clone()];
                w.extend(g.words(2));
                let n = g.unit();
                let v = g.mix(&[(1.0, &topic), (1.0, &n)]);
                add(&mut facts, &mut embeddings, format!("topic{t}"), &w, kind, v);
            }
            for s in 0..self.gold_supports {
                let w = g.words(3);
                let v = g.near(&hyps[gold], 0.35, 0.02);
                let kind = if s % 2 == 0 { FactKind::Grounding } else { FactKind::Abstract };
                add(&mut facts, &mut embeddings, format!("support{s}"), &w, kind, v);
            }

            for j in (0..4).filter(|&j| j != gold) {
                if g.rng.random_bool(self.distractor_ratio) {
                    let d = g.words(2);
                    let wg = vec![cw[j][0].clone(), cw[j][1].clone(), cw[j][2].clone(), qw[1].clone(), d[0].clone()];
                    let v = g.near(&hyps[j], 0.35, 0.02);
                    add(&mut facts, &mut embeddings, format!("lex{j}-g"), &wg, FactKind::Grounding, v);
                    let wa = vec![cw[j][1].clone(), cw[j][2].clone(), qw[2].clone(), d[0].clone(), d[1].clone()];
                    let v = g.near(&hyps[j], 0.30, 0.02);
                    add(&mut facts, &mut embeddings, format!("lex{j}-a"), &wa, FactKind::Abstract, v);
                }
                if g.rng.random_bool(self.distractor_ratio) {
                    for s in 0..self.semantic_decoys {
                        let w = g.words(3);
                        let v = g.near(&hyps[j], 0.45, 0.02);
                        let kind = if s % 2 == 0 { FactKind::Grounding } else { FactKind::Abstract };
                        add(&mut facts, &mut embeddings, format!("sem{j}-{s:02}"), &w, kind, v);
                    }
                }
            }

            questions.push(QuestionRecord {
                id: qid.clone(),
                question_text: format!("{}?", qw.join(" ")),
                candidates: cw.iter().map(|c| c.join(" ")).collect(),
                gold_answer_index: gold,
                gold_explanation_ids: Some(BTreeSet::from([format!("{qid}-gold-a"), format!("{qid}-gold-g")])),
            });
        }
        Corpus::from_records(facts, questions, Some(embeddings))
    }
}

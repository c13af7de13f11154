//! Question sets, fact knowledge bases and embeddings: JSON Lines
//! ingestion, validation and the immutable [`Corpus`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::relevance::{self, DocFreqs, TermExtractor, TermSet};

/// Default dimension of synthesized hashed TF-IDF embeddings.
pub const DEFAULT_HASH_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactKind {
    Abstract,
    Grounding,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoTuple {
    pub subject: TermSet,
    pub predicate: TermSet,
    pub object: TermSet,
}

impl SpoTuple {
    pub fn is_empty(&self) -> bool {
        self.subject.is_empty() && self.predicate.is_empty() && self.object.is_empty()
    }
}

/// Tuple exactly as supplied in the KB file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTuple {
    pub s: Vec<String>,
    pub p: Vec<String>,
    pub o: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub id: String,
    pub text: String,
    pub terms: TermSet,
    pub kind: FactKind,
    pub tuple: Option<SpoTuple>,
    /// Present when the KB file supplied the tuple; otherwise `tuple` came from the naive splitter.
    pub tuple_source: Option<RawTuple>,
    pub embedding_key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub question_id: String,
    pub candidate_index: usize,
    pub text: String,
    pub terms: TermSet,
    pub embedding_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(rename = "question")]
    pub question_text: String,
    pub candidates: Vec<String>,
    #[serde(rename = "answer")]
    pub gold_answer_index: usize,
    #[serde(rename = "explanations", default, skip_serializing_if = "Option::is_none")]
    pub gold_explanation_ids: Option<BTreeSet<String>>,
}

/// Facts plus every embedding vector, shared by all question subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub facts: BTreeMap<String, Fact>,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    pub dim: usize,
}

impl KnowledgeBase {
    pub fn fact(&self, id: &str) -> Option<&Fact> {
        self.facts.get(id)
    }

    pub fn embedding(&self, key: &str) -> &[f64] {
        self.embeddings.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn candidates(&self) -> impl Iterator<Item = relevance::Candidate<'_>> {
        self.facts.values().map(|f| relevance::Candidate {
            id: &f.id,
            terms: &f.terms,
            embedding: self.embedding(&f.embedding_key),
        })
    }

    pub fn all_labeled(&self) -> std::result::Result<(), String> {
        match self.facts.values().find(|f| f.kind == FactKind::Unlabeled) {
            Some(f) => Err(f.id.clone()),
            None => Ok(()),
        }
    }
}

/// Immutable, validated question set over a shared knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub questions: Vec<QuestionRecord>,
    pub hypotheses: BTreeMap<String, Vec<Hypothesis>>,
    pub kb: Arc<KnowledgeBase>,
}

#[derive(Debug, Deserialize)]
struct RawFact {
    id: String,
    text: String,
    #[serde(default)]
    kind: Option<FactKind>,
    #[serde(default)]
    tuple: Option<RawTuple>,
}

#[derive(Debug, Serialize)]
struct FactLine<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<FactKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuple: Option<&'a RawTuple>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    key: String,
    vec: Vec<f64>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::Internal(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SPO_MARKERS: [&str; 7] = ["is a", "is", "are", "causes", "can be used to", "has", "means"];
const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn predicate_terms<'a>(tokens: impl IntoIterator<Item = &'a str>) -> TermSet {
    tokens
        .into_iter()
        .filter(|t| !ARTICLES.contains(t))
        .map(relevance::normalize_token)
        .collect()
}

/// Split a fact at the first copula/verb marker. Subject and object are
/// content terms; the predicate keeps the marker words minus articles.
pub fn naive_spo_split(fact_text: &str) -> SpoTuple {
    naive_spo_split_with(&TermExtractor::default(), fact_text)
}

pub fn naive_spo_split_with(extractor: &TermExtractor, fact_text: &str) -> SpoTuple {
    let tokens: Vec<String> = relevance::raw_tokens(fact_text).collect();
    let markers: Vec<Vec<&str>> = SPO_MARKERS.iter().map(|m| m.split(' ').collect()).collect();
    let content = |toks: &[String]| -> TermSet {
        toks.iter()
            .filter(|t| !extractor.is_stopword(t))
            .map(|t| relevance::normalize_token(t))
            .filter(|t| !t.is_empty())
            .collect()
    };
    for pos in 0..tokens.len() {
        for marker in &markers {
            let end = pos + marker.len();
            if end <= tokens.len() && tokens[pos..end].iter().zip(marker).all(|(a, b)| a == b) {
                return SpoTuple {
                    subject: content(&tokens[..pos]),
                    predicate: predicate_terms(marker.iter().copied()),
                    object: content(&tokens[end..]),
                };
            }
        }
    }
    SpoTuple { subject: content(&tokens), predicate: TermSet::new(), object: TermSet::new() }
}

fn tuple_from_raw(extractor: &TermExtractor, raw: &RawTuple) -> SpoTuple {
    let p_tokens: Vec<String> = raw.p.iter().flat_map(|p| relevance::raw_tokens(p)).collect();
    SpoTuple {
        subject: extractor.extract(&raw.s.join(" ")),
        predicate: predicate_terms(p_tokens.iter().map(String::as_str)),
        object: extractor.extract(&raw.o.join(" ")),
    }
}

/// One hypothesis per candidate: question text without its trailing '?',
/// a space, then the candidate text.
pub fn build_hypotheses(question: &QuestionRecord) -> Vec<Hypothesis> {
    build_hypotheses_with(&TermExtractor::default(), question)
}

pub fn build_hypotheses_with(extractor: &TermExtractor, question: &QuestionRecord) -> Vec<Hypothesis> {
    let stem = question.question_text.trim_end().trim_end_matches('?').trim_end();
    question
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let text = format!("{stem} {}", c.trim());
            Hypothesis {
                question_id: question.id.clone(),
                candidate_index: i,
                terms: extractor.extract(&text),
                embedding_key: hypothesis_key(&question.id, i),
                text,
            }
        })
        .collect()
}

pub fn hypothesis_key(question_id: &str, candidate: usize) -> String {
    format!("{question_id}#{candidate}")
}

fn normalize_unit(v: &mut [f64]) -> bool {
    let n = linalg::norm(v);
    if n <= 1e-12 || !n.is_finite() {
        return false;
    }
    if (n - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    true
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub extractor: TermExtractor,
    pub hash_dim: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { extractor: TermExtractor::default(), hash_dim: DEFAULT_HASH_DIM }
    }
}

impl Corpus {
    pub fn load(kb_path: &Path, questions_path: &Path, embeddings_path: Option<&Path>) -> Result<Self> {
        Self::load_with(kb_path, questions_path, embeddings_path, &LoadOptions::default())
    }

    pub fn load_with(
        kb_path: &Path,
        questions_path: &Path,
        embeddings_path: Option<&Path>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        let raw_facts: Vec<RawFact> = read_jsonl(kb_path)?;
        let questions: Vec<QuestionRecord> = read_jsonl(questions_path)?;
        let embeddings = match embeddings_path {
            Some(p) => {
                let lines: Vec<EmbeddingLine> = read_jsonl(p)?;
                let mut map = BTreeMap::new();
                for line in lines {
                    if map.insert(line.key.clone(), line.vec).is_some() {
                        return Err(Error::Validation(format!("duplicate embedding key {}", line.key)));
                    }
                }
                Some(map)
            }
            None => None,
        };
        Self::from_parts(raw_facts, questions, embeddings, opts)
    }

    fn from_parts(
        raw_facts: Vec<RawFact>,
        questions: Vec<QuestionRecord>,
        embeddings: Option<BTreeMap<String, Vec<f64>>>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        let ex = &opts.extractor;
        let mut facts = BTreeMap::new();
        for rf in raw_facts {
            if rf.text.trim().is_empty() {
                return Err(Error::Validation(format!("fact {} has empty text", rf.id)));
            }
            let tuple = match &rf.tuple {
                Some(raw) => {
                    let t = tuple_from_raw(ex, raw);
                    if t.is_empty() {
                        return Err(Error::Validation(format!("fact {} has an empty tuple", rf.id)));
                    }
                    t
                }
                None => naive_spo_split_with(ex, &rf.text),
            };
            let fact = Fact {
                terms: ex.extract(&rf.text),
                kind: rf.kind.unwrap_or(FactKind::Unlabeled),
                tuple: Some(tuple),
                tuple_source: rf.tuple,
                embedding_key: rf.id.clone(),
                text: rf.text,
                id: rf.id,
            };
            if facts.contains_key(&fact.id) {
                return Err(Error::Validation(format!("duplicate fact id {}", fact.id)));
            }
            facts.insert(fact.id.clone(), fact);
        }
        let questions: Vec<QuestionRecord> = questions;
        Self::assemble(facts, questions, embeddings, opts)
    }

    fn assemble(
        facts: BTreeMap<String, Fact>,
        questions: Vec<QuestionRecord>,
        embeddings: Option<BTreeMap<String, Vec<f64>>>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut hypotheses = BTreeMap::new();
        for q in &questions {
            if !seen.insert(q.id.clone()) {
                return Err(Error::Validation(format!("duplicate question id {}", q.id)));
            }
            if q.candidates.len() < 2 {
                return Err(Error::Validation(format!("question {} needs at least 2 candidates", q.id)));
            }
            if q.gold_answer_index >= q.candidates.len() {
                return Err(Error::Validation(format!(
                    "question {} answer index {} out of range",
                    q.id, q.gold_answer_index
                )));
            }
            if let Some(gold) = &q.gold_explanation_ids {
                if let Some(missing) = gold.iter().find(|id| !facts.contains_key(*id)) {
                    return Err(Error::Validation(format!(
                        "question {} references unknown explanation fact {missing}",
                        q.id
                    )));
                }
            }
            let hyps = build_hypotheses_with(&opts.extractor, q);
            if let Some(h) = hyps.iter().find(|h| h.terms.is_empty()) {
                return Err(Error::Validation(format!("hypothesis {} has no content terms", h.embedding_key)));
            }
            hypotheses.insert(q.id.clone(), hyps);
        }

        let embeddings = match embeddings {
            Some(mut map) => {
                for v in map.values_mut() {
                    if !normalize_unit(v) {
                        return Err(Error::Validation("embedding with zero or non-finite norm".into()));
                    }
                }
                map
            }
            None => {
                let stats = DocFreqs::from_term_sets(facts.values().map(|f| &f.terms));
                let dim = opts.hash_dim;
                let mut map = BTreeMap::new();
                for f in facts.values() {
                    map.insert(
                        f.embedding_key.clone(),
                        relevance::hashed_tfidf_embed_with(&opts.extractor, &f.text, dim, &stats),
                    );
                }
                for h in hypotheses.values().flatten() {
                    map.insert(
                        h.embedding_key.clone(),
                        relevance::hashed_tfidf_embed_with(&opts.extractor, &h.text, dim, &stats),
                    );
                }
                map
            }
        };

        let dim = embeddings.values().next().map_or(0, Vec::len);
        if let Some((k, v)) = embeddings.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Validation(format!(
                "embedding dimension mismatch: {k} has {} entries, expected {dim}",
                v.len()
            )));
        }
        let keys = facts
            .values()
            .map(|f| &f.embedding_key)
            .chain(hypotheses.values().flatten().map(|h| &h.embedding_key));
        for key in keys {
            if !embeddings.contains_key(key) {
                return Err(Error::Validation(format!("no embedding for key {key}")));
            }
        }

        Ok(Self { questions, hypotheses, kb: Arc::new(KnowledgeBase { facts, embeddings, dim }) })
    }

    /// Build a corpus from in-memory records, e.g. from a generator.
    pub fn from_records(
        facts: Vec<(String, String, FactKind, Option<RawTuple>)>,
        questions: Vec<QuestionRecord>,
        embeddings: Option<BTreeMap<String, Vec<f64>>>,
    ) -> Result<Self> {
        let raw = facts
            .into_iter()
            .map(|(id, text, kind, tuple)| RawFact {
                id,
                text,
                kind: (kind != FactKind::Unlabeled).then_some(kind),
                tuple,
            })
            .collect();
        Self::from_parts(raw, questions, embeddings, &LoadOptions::default())
    }

    /// Write the three JSON Lines files; loading them back yields an identical corpus.
    pub fn save(&self, kb_path: &Path, questions_path: &Path, embeddings_path: &Path) -> Result<()> {
        write_jsonl(
            kb_path,
            self.kb.facts.values().map(|f| FactLine {
                id: &f.id,
                text: &f.text,
                kind: (f.kind != FactKind::Unlabeled).then_some(f.kind),
                tuple: f.tuple_source.as_ref(),
            }),
        )?;
        write_jsonl(questions_path, &self.questions)?;
        write_jsonl(
            embeddings_path,
            self.kb.embeddings.iter().map(|(k, v)| EmbeddingLine { key: k.clone(), vec: v.clone() }),
        )
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn hypotheses_for(&self, question_id: &str) -> &[Hypothesis] {
        self.hypotheses.get(question_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Question subset over the same shared knowledge base.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        let questions = self.questions[range].to_vec();
        let hypotheses = questions
            .iter()
            .map(|q| (q.id.clone(), self.hypotheses[&q.id].clone()))
            .collect();
        Self { questions, hypotheses, kb: Arc::clone(&self.kb) }
    }

    /// First `n_train` questions and the remainder.
    pub fn split(&self, n_train: usize) -> (Self, Self) {
        let n = n_train.min(self.len());
        (self.subset(0..n), self.subset(n..self.len()))
    }
}

//! Term normalization, lexical and semantic relevance, embedding
//! providers and exact top-k retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::scalar::Scalar;

/// Bundled stopword list, one word per line.
pub const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Set of lowercase normalized tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermSet(BTreeSet<String>);

impl TermSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &TermSet) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.iter().filter(|t| large.contains(t)).count()
    }

    pub fn intersects(&self, other: &TermSet) -> bool {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.iter().any(|t| large.contains(t))
    }

    pub fn insert(&mut self, term: impl Into<String>) -> bool {
        self.0.insert(term.into())
    }

    pub fn extend(&mut self, other: &TermSet) {
        self.0.extend(other.0.iter().cloned());
    }
}

impl<S: Into<String>> FromIterator<S> for TermSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// Tokenizer + stopword filter + suffix stripper.
#[derive(Debug, Clone)]
pub struct TermExtractor {
    stopwords: HashSet<String>,
}

impl Default for TermExtractor {
    fn default() -> Self {
        Self::from_list(BUNDLED_STOPWORDS)
    }
}

impl TermExtractor {
    pub fn from_list(text: &str) -> Self {
        let stopwords = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { stopwords }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_list(&text))
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Normalized content tokens in text order, duplicates kept.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        raw_tokens(text)
            .filter(|t| !self.is_stopword(t))
            .map(|t| normalize_token(&t))
            .filter(|t| !t.is_empty())
            .collect()
    }

    pub fn extract(&self, text: &str) -> TermSet {
        self.tokens(text).into_iter().collect()
    }
}

fn bundled_extractor() -> &'static TermExtractor {
    static EXTRACTOR: OnceLock<TermExtractor> = OnceLock::new();
    EXTRACTOR.get_or_init(TermExtractor::default)
}

/// Unique normalized terms of `text` using the bundled stopword list.
pub fn extract_terms(text: &str) -> TermSet {
    bundled_extractor().extract(text)
}

/// Lowercased alphanumeric runs.
pub fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Suffix stripping: "ing"/"ed" (with undoubling of a final consonant pair),
/// sibilant "es", then plural "s". A rule applies only when the remaining
/// stem keeps at least three characters.
pub fn normalize_token(token: &str) -> String {
    const MIN_STEM: usize = 3;
    let t = token;
    let n = t.chars().count();
    if !t.is_ascii() || n <= MIN_STEM {
        return t.to_string();
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = t.strip_suffix(suffix) {
            if stem.len() >= MIN_STEM {
                return undouble(stem);
            }
        }
    }
    if let Some(stem) = t.strip_suffix("es") {
        let sibilant = ["x", "ch", "sh", "ss", "zz"].iter().any(|s| stem.ends_with(s));
        if sibilant && stem.len() >= MIN_STEM {
            return stem.to_string();
        }
    }
    if let Some(stem) = t.strip_suffix('s') {
        let keep = t.ends_with("ss") || t.ends_with("us") || t.ends_with("is");
        if !keep && stem.len() >= MIN_STEM {
            return stem.to_string();
        }
    }
    t.to_string()
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 4 && b[n - 1] == b[n - 2] {
        let c = b[n - 1];
        let consonant = c.is_ascii_alphabetic() && !b"aeiou".contains(&c);
        if consonant && !b"lsz".contains(&c) {
            return stem[..n - 1].to_string();
        }
    }
    stem.to_string()
}

/// `|h ∩ f| / max(|h|, |f|)`; zero when `f` is empty.
pub fn lexical_relevance<T: Scalar>(h: &TermSet, f: &TermSet) -> T {
    let denom = h.len().max(f.len());
    if denom == 0 || f.is_empty() {
        return T::zero();
    }
    T::from_usize_lossy(h.intersection_len(f)) / T::from_usize_lossy(denom)
}

/// Trainable linear map applied to embeddings before cosine scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAdapter<T> {
    pub matrix: Mat<T>,
    pub enabled: bool,
}

impl<T: Scalar> EmbeddingAdapter<T> {
    pub fn identity(dim: usize, enabled: bool) -> Self {
        Self { matrix: Mat::identity(dim), enabled }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.matrix.matvec(v)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingAdapter<U> {
        EmbeddingAdapter { matrix: self.matrix.cast(), enabled: self.enabled }
    }
}

/// Cosine similarity, optionally after mapping both vectors through the adapter.
pub fn semantic_relevance<T: Scalar>(
    v_h: &[T],
    v_f: &[T],
    adapter: Option<&EmbeddingAdapter<T>>,
) -> Result<T> {
    let tiny = T::lit(1e-12);
    match adapter.filter(|a| a.enabled) {
        Some(a) => {
            let (ah, af) = (a.apply(v_h), a.apply(v_f));
            let (nh, nf) = (linalg::norm(&ah), linalg::norm(&af));
            if nh < tiny || nf < tiny {
                return Err(Error::ZeroVector);
            }
            Ok(linalg::dot(&ah, &af) / (nh * nf))
        }
        None => {
            let (nh, nf) = (linalg::norm(v_h), linalg::norm(v_f));
            if nh < tiny || nf < tiny {
                return Err(Error::ZeroVector);
            }
            Ok(linalg::dot(v_h, v_f) / (nh * nf))
        }
    }
}

/// Gradient of `cos(A h, A f)` with respect to the adapter matrix `A`.
pub fn cosine_adapter_grad<T: Scalar>(v_h: &[T], v_f: &[T], adapter: &EmbeddingAdapter<T>) -> Mat<T> {
    let (u, w) = (adapter.apply(v_h), adapter.apply(v_f));
    let (nu, nw) = (linalg::norm(&u), linalg::norm(&w));
    let s = linalg::dot(&u, &w) / (nu * nw);
    let d = adapter.dim();
    let du: Vec<T> = (0..d).map(|i| (w[i] / nw - s * u[i] / nu) / nu).collect();
    let dw: Vec<T> = (0..d).map(|i| (u[i] / nu - s * w[i] / nw) / nw).collect();
    Mat::from_fn(d, d, |i, j| du[i] * v_h[j] + dw[i] * v_f[j])
}

/// Document frequencies over a fact collection.
#[derive(Debug, Clone, Default)]
pub struct DocFreqs {
    pub n_docs: usize,
    pub df: BTreeMap<String, usize>,
}

impl DocFreqs {
    pub fn from_term_sets<'a>(docs: impl IntoIterator<Item = &'a TermSet>) -> Self {
        let mut out = Self::default();
        for d in docs {
            out.n_docs += 1;
            for t in d.iter() {
                *out.df.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln()
    }
}

/// 64-bit FNV-1a.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed feature-hashed TF-IDF vector, L2-normalized. An all-zero vector
/// maps to the first basis vector.
pub fn hashed_tfidf_embed(text: &str, dim: usize, stats: &DocFreqs) -> Vec<f64> {
    hashed_tfidf_embed_with(bundled_extractor(), text, dim, stats)
}

pub fn hashed_tfidf_embed_with(extractor: &TermExtractor, text: &str, dim: usize, stats: &DocFreqs) -> Vec<f64> {
    assert!(dim >= 16, "hashed embedding dimension must be at least 16");
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for t in extractor.tokens(text) {
        *tf.entry(t).or_insert(0) += 1;
    }
    let mut v = vec![0.0; dim];
    for (term, count) in &tf {
        let h = stable_hash(term.as_bytes());
        let idx = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[idx] += sign * (1.0 + (*count as f64).ln()) * stats.idf(term);
    }
    let n = linalg::norm(&v);
    if n <= 1e-12 {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        return e;
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Semantic,
    #[default]
    Combined,
}

/// One retrievable fact as seen by the ranker.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: &'a str,
    pub terms: &'a TermSet,
    pub embedding: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFact {
    pub id: String,
    pub score: f64,
    pub semantic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<ScoredFact>,
    /// Set when `k` exceeded the store size and was clamped.
    pub clamped: bool,
}

/// Exact top-k by score (descending), ties by ascending fact id.
pub fn retrieve_top_k<'a>(
    h_terms: &TermSet,
    h_embedding: &[f64],
    candidates: impl IntoIterator<Item = Candidate<'a>>,
    k: usize,
    mode: RetrievalMode,
) -> Result<Retrieval> {
    if k == 0 {
        return Err(Error::Config("retrieval depth k must be at least 1".into()));
    }
    let mut scored: Vec<ScoredFact> = candidates
        .into_iter()
        .map(|c| {
            let s = cosine_f64(h_embedding, c.embedding);
            let score = match mode {
                RetrievalMode::Semantic => s,
                RetrievalMode::Combined => 0.5 * s + 0.5 * lexical_relevance::<f64>(h_terms, c.terms),
            };
            ScoredFact { id: c.id.to_string(), score, semantic: s }
        })
        .collect();
    let clamped = k > scored.len();
    let k = k.min(scored.len());
    let order = |a: &ScoredFact, b: &ScoredFact| {
        b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(Retrieval { hits: scored, clamped })
}

fn cosine_f64(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (linalg::norm(a), linalg::norm(b));
    if na <= 1e-12 || nb <= 1e-12 {
        return 0.0;
    }
    linalg::dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ts(words: &[&str]) -> TermSet {
        words.iter().copied().collect()
    }

    #[test]
    fn fanning_example_terms() {
        assert_eq!(extract_terms("fanning a fire increases the oxygen"), ts(&["fan", "fire", "increase", "oxygen"]));
    }

    #[test]
    fn empty_and_stopword_only() {
        assert!(extract_terms("").is_empty());
        assert!(extract_terms("The THE the").is_empty());
    }

    #[test]
    fn suffix_rules() {
        assert_eq!(normalize_token("burns"), "burn");
        assert_eq!(normalize_token("burning"), "burn");
        assert_eq!(normalize_token("boxes"), "box");
        assert_eq!(normalize_token("classes"), "class");
        assert_eq!(normalize_token("gas"), "gas");
        assert_eq!(normalize_token("stopped"), "stop");
        assert_eq!(normalize_token("falling"), "fall");
        assert_eq!(normalize_token("moss"), "moss");
        assert_eq!(normalize_token("hotter"), "hotter");
    }

    #[test]
    fn custom_stopwords() {
        let ex = TermExtractor::from_list("fire\n# comment\n");
        assert_eq!(ex.extract("the fire burns"), ts(&["the", "burn"]));
    }

    #[test]
    fn lexical_examples() {
        assert_relative_eq!(lexical_relevance::<f64>(&ts(&["fire", "burn", "hot"]), &ts(&["fire", "oxygen"])), 1.0 / 3.0);
        assert_relative_eq!(lexical_relevance::<f64>(&ts(&["a", "b"]), &ts(&["a", "b"])), 1.0);
        assert_eq!(lexical_relevance::<f64>(&ts(&["a", "b", "c", "d"]), &TermSet::new()), 0.0);
        assert_relative_eq!(lexical_relevance::<f32>(&ts(&["x", "y"]), &ts(&["x"])), 0.5);
    }

    #[test]
    fn semantic_examples() {
        let v = [0.6, 0.8, 0.0];
        let w = [0.0, 0.0, 1.0];
        let neg = [-0.6, -0.8, 0.0];
        assert_relative_eq!(semantic_relevance(&v, &v, None).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(semantic_relevance(&v, &w, None).unwrap(), 0.0);
        assert_relative_eq!(semantic_relevance(&v, &neg, None).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn adapter_zero_vector_error() {
        let a = EmbeddingAdapter { matrix: Mat::<f64>::zeros(2, 2), enabled: true };
        assert!(matches!(semantic_relevance(&[1.0, 0.0], &[0.0, 1.0], Some(&a)), Err(Error::ZeroVector)));
        // disabled adapter is ignored
        let off = EmbeddingAdapter { enabled: false, ..a };
        assert_relative_eq!(semantic_relevance(&[1.0, 0.0], &[1.0, 0.0], Some(&off)).unwrap(), 1.0);
    }

    #[test]
    fn adapter_grad_matches_finite_differences() {
        let h = [0.3, -0.2, 0.9];
        let f = [0.5, 0.4, -0.1];
        let mut a = EmbeddingAdapter::<f64>::identity(3, true);
        a.matrix[(0, 1)] = 0.2;
        a.matrix[(2, 0)] = -0.3;
        let g = cosine_adapter_grad(&h, &f, &a);
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut p = a.clone();
                p.matrix[(i, j)] += eps;
                let mut m = a.clone();
                m.matrix[(i, j)] -= eps;
                let fd = (semantic_relevance(&h, &f, Some(&p)).unwrap() - semantic_relevance(&h, &f, Some(&m)).unwrap())
                    / (2.0 * eps);
                assert_relative_eq!(g[(i, j)], fd, epsilon = 1e-8);
            }
        }
    }

    fn stats_for(texts: &[&str]) -> DocFreqs {
        let sets: Vec<TermSet> = texts.iter().map(|t| extract_terms(t)).collect();
        DocFreqs::from_term_sets(&sets)
    }

    #[test]
    fn tfidf_deterministic_and_unit() {
        let stats = stats_for(&["fire burns", "ice melts", "wood floats"]);
        let a = hashed_tfidf_embed("fire burns", 64, &stats);
        let b = hashed_tfidf_embed("fire burns", 64, &stats);
        assert_eq!(a, b);
        assert_relative_eq!(linalg::norm(&a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tfidf_disjoint_support_is_orthogonal() {
        let stats = stats_for(&["fire burns", "ice melts", "wood floats", "rock sinks"]);
        let a = hashed_tfidf_embed("fire burns", 4096, &stats);
        let b = hashed_tfidf_embed("ice melts", 4096, &stats);
        assert_eq!(linalg::dot(&a, &b), 0.0);
    }

    #[test]
    fn tfidf_all_zero_maps_to_first_basis() {
        let stats = stats_for(&["fire"]);
        // the only term appears in every document: idf 0
        let v = hashed_tfidf_embed("fire", 32, &stats);
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn tfidf_partial_overlap_cosine() {
        let stats = stats_for(&["fire burns", "fire is hot", "ice melts", "wood floats"]);
        let a = hashed_tfidf_embed("fire burns", 4096, &stats);
        let b = hashed_tfidf_embed("fire burns hot", 4096, &stats);
        let cos = linalg::dot(&a, &b);
        // oracle from the weighting formula alone: tf = 1, no collisions
        let idf = |df: f64| ((1.0 + 4.0) / (1.0 + df)).ln();
        let (wf, wb, wh) = (idf(2.0), idf(1.0), idf(1.0));
        let expected = (wf * wf + wb * wb) / ((wf * wf + wb * wb).sqrt() * (wf * wf + wb * wb + wh * wh).sqrt());
        assert!(cos > 0.0 && cos < 1.0);
        assert_relative_eq!(cos, expected, epsilon = 1e-12);
        assert_relative_eq!(cos, 0.753_159_44, epsilon = 1e-8);
    }

    fn toy_store() -> (Vec<String>, Vec<TermSet>, Vec<Vec<f64>>) {
        let texts = [
            "fire needs oxygen to burn",
            "ice is frozen water",
            "wood is a fuel",
            "plants need sunlight",
            "metal conducts heat",
            "sound travels in waves",
            "magnets attract iron",
            "the moon orbits earth",
            "rain falls from clouds",
            "seeds grow into plants",
        ];
        let ids: Vec<String> = (0..texts.len()).map(|i| format!("F{i:02}")).collect();
        let terms: Vec<TermSet> = texts.iter().map(|t| extract_terms(t)).collect();
        let stats = DocFreqs::from_term_sets(&terms);
        let embs = texts.iter().map(|t| hashed_tfidf_embed(t, 256, &stats)).collect();
        (ids, terms, embs)
    }

    #[test]
    fn combined_retrieval_ranks_overlap_first() {
        let (ids, terms, embs) = toy_store();
        let h = extract_terms("oxygen helps fire burn");
        let stats = DocFreqs::from_term_sets(&terms);
        let hv = hashed_tfidf_embed("oxygen helps fire burn", 256, &stats);
        let cands = (0..ids.len()).map(|i| Candidate { id: &ids[i], terms: &terms[i], embedding: &embs[i] });
        let r = retrieve_top_k(&h, &hv, cands, 3, RetrievalMode::Combined).unwrap();
        // brute-force: the only fact sharing 3 terms wins
        let best = (0..ids.len())
            .max_by(|&a, &b| {
                let sa = 0.5 * cosine_f64(&hv, &embs[a]) + 0.5 * lexical_relevance::<f64>(&h, &terms[a]);
                let sb = 0.5 * cosine_f64(&hv, &embs[b]) + 0.5 * lexical_relevance::<f64>(&h, &terms[b]);
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        assert_eq!(r.hits[0].id, ids[best]);
        assert_eq!(r.hits[0].id, "F00");
        assert!(!r.clamped);
    }

    #[test]
    fn exhaustive_and_clamped_retrieval() {
        let (ids, terms, embs) = toy_store();
        let h = extract_terms("plants");
        let hv = embs[3].clone();
        let cands = || (0..ids.len()).map(|i| Candidate { id: &ids[i], terms: &terms[i], embedding: &embs[i] });
        let all = retrieve_top_k(&h, &hv, cands(), ids.len(), RetrievalMode::Semantic).unwrap();
        assert_eq!(all.hits.len(), ids.len());
        assert!(all.hits.windows(2).all(|w| w[0].score >= w[1].score));
        let over = retrieve_top_k(&h, &hv, cands(), 50, RetrievalMode::Semantic).unwrap();
        assert!(over.clamped);
        assert_eq!(over.hits, all.hits);
    }

    #[test]
    fn ties_break_by_id() {
        let terms = [TermSet::new(), TermSet::new()];
        let e = vec![1.0, 0.0];
        let ids = ["F2".to_string(), "F1".to_string()];
        let cands = (0..2).map(|i| Candidate { id: &ids[i], terms: &terms[i], embedding: &e });
        let r = retrieve_top_k(&TermSet::new(), &e, cands, 2, RetrievalMode::Semantic).unwrap();
        assert_eq!(r.hits[0].id, "F1");
        assert_eq!(r.hits[1].id, "F2");
    }

    fn arb_terms() -> impl Strategy<Value = TermSet> {
        proptest::collection::btree_set("[a-f]{1,2}", 0..6).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn lexical_is_symmetric(h in arb_terms(), f in arb_terms()) {
            prop_assume!(!h.is_empty() && !f.is_empty());
            let a: f64 = lexical_relevance(&h, &f);
            let b: f64 = lexical_relevance(&f, &h);
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn cosine_scale_invariant(v in proptest::collection::vec(-1.0f64..1.0, 4), w in proptest::collection::vec(-1.0f64..1.0, 4),
                                  a in 0.1f64..10.0, b in 0.1f64..10.0) {
            prop_assume!(linalg::norm(&v) > 1e-3 && linalg::norm(&w) > 1e-3);
            let av: Vec<f64> = v.iter().map(|x| a * x).collect();
            let bw: Vec<f64> = w.iter().map(|x| b * x).collect();
            let s1 = semantic_relevance(&v, &w, None).unwrap();
            let s2 = semantic_relevance(&av, &bw, None).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
        }

        #[test]
        fn top_k_is_prefix_consistent(seed in 0u64..500, k in 1usize..9) {
            let (ids, terms, embs) = toy_store();
            let hv = &embs[(seed % 10) as usize];
            let h = extract_terms("water plants heat");
            let cands = || (0..ids.len()).map(|i| Candidate { id: &ids[i], terms: &terms[i], embedding: &embs[i] });
            let a = retrieve_top_k(&h, hv, cands(), k, RetrievalMode::Combined).unwrap();
            let b = retrieve_top_k(&h, hv, cands(), k + 1, RetrievalMode::Combined).unwrap();
            prop_assert_eq!(&a.hits[..], &b.hits[..k]);
        }
    }
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdpqa::constraints::{compile, Hyperparams};
use sdpqa::corpus::{FactKind, SpoTuple};
use sdpqa::graph::{build_graph_from_parts, weight_support, FactGraph, Family, GraphFact};
use sdpqa::linalg::Mat;
use sdpqa::relevance::TermSet;
use sdpqa::sdp::{SdpProblem, SolverSettings};

pub fn ts(words: &[&str]) -> TermSet {
    words.iter().copied().collect()
}

pub fn fact(id: &str, s: &[&str], o: &[&str], kind: FactKind) -> GraphFact {
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

/// 2 to 4 hypotheses, 4 to 8 candidate facts over a four-word vocabulary,
/// weights uniform in [0, 1) on the family's weight support.
pub fn random_case(seed: u64, family: Family) -> (FactGraph, Mat<f64>) {
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
    let facts = if facts.len() < 2 {
        vec![fact("Fa", &["a", "b", "c", "d"], &[], FactKind::Grounding), fact("Fb", &["a", "b", "c", "d"], &[], FactKind::Abstract)]
    } else {
        facts
    };
    let g = build_graph_from_parts(hyp, (0..n).map(|i| format!("h{i}")).collect(), facts).unwrap();
    let nn = g.n_nodes();
    let mut w = Mat::zeros(nn, nn);
    for (i, j) in weight_support(&g, family) {
        let v = rng.random::<f64>();
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    (g, w)
}

/// Two hypotheses and four facts (six nodes) under ExplanationLP, weights
/// uniform in [-0.5, 1).
pub fn six_node_problem(seed: u64, settings: SolverSettings<f64>) -> (FactGraph, SdpProblem<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [FactKind::Grounding, FactKind::Abstract, FactKind::Grounding, FactKind::Abstract];
    let facts = (0..4).map(|i| fact(&format!("F{i}"), &["x"], &[["p", "q"][i % 2]], kinds[i])).collect();
    let g = build_graph_from_parts(vec![ts(&["x", "p"]), ts(&["x", "q"])], vec!["a".into(), "b".into()], facts).unwrap();
    let mut w = Mat::zeros(6, 6);
    for (i, j) in weight_support(&g, Family::ExplanationLp) {
        let v = rng.random_range(-0.5..1.0);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    let cs = compile(&g, Family::ExplanationLp, &Hyperparams::default()).unwrap();
    (g, SdpProblem::from_weights(&w, cs, settings))
}

/// Run the command-line binary and return (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_sdpqa")).args(args).output().expect("spawn sdpqa");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

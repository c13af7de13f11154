//! Command-line entry points. Configuration merges defaults, then an
//! optional JSON file, then flags.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate, generate_synthetic_corpus, ir_solver, k_sweep};
use crate::graph::{Family, ThetaParams};
use crate::pipeline::{prepare, PipelineConfig, RetrievalCache};
use crate::sdp::SdpStatus;
use crate::train::{fit, grad_check_corpus, log_to_jsonl, Checkpoint, TrainConfig, GRAD_CHECK_FLOOR};

#[derive(Debug, Parser)]
#[command(name = "sdpqa", version, about = "Explainable multiple-choice QA via SDP-relaxed subgraph selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer every question and print one JSON line per question.
    Solve {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint or `{name: value}` JSON with relevance weights.
        #[arg(long)]
        theta_file: Option<PathBuf>,
        /// Report failing questions on stderr instead of exiting.
        #[arg(long)]
        skip_errors: bool,
    },
    /// Fit θ on a train/dev split and write the best checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        split: SplitArgs,
        /// Epoch log destination (JSON Lines); stderr summary otherwise.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Accuracy and Precision@K of a checkpoint, or of the IR baseline.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the retrieval-only baseline instead.
        #[arg(long)]
        ir: bool,
    },
    /// Model and IR accuracy across retrieval depths.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 25, 50, 75, 100])]
        ks: Vec<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference check of the training gradient.
    Gradcheck {
        #[command(flatten)]
        data: OptionalDataArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Number of questions to probe.
        #[arg(long, default_value_t = 4)]
        n_questions: usize,
        #[arg(long, default_value_t = 5)]
        probes: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
    /// Write a synthetic corpus (kb.jsonl, questions.jsonl, embeddings.jsonl).
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub questions: PathBuf,
    /// Embedding vectors; hashed TF-IDF vectors are synthesized when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptionalDataArgs {
    #[arg(long, requires = "questions")]
    pub kb: Option<PathBuf>,
    #[arg(long, requires = "kb")]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Questions before this index train; the rest are dev. Defaults to 80%.
    #[arg(long)]
    pub train_size: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub w1: Option<usize>,
    #[arg(long)]
    pub w2: Option<usize>,
    #[arg(long)]
    pub w3: Option<usize>,
    #[arg(long)]
    pub w4: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub determinism: bool,
    #[arg(long)]
    pub grad_check: bool,
    /// Train the embedding adapter alongside θ.
    #[arg(long)]
    pub adapter: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Every tunable, as read from a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub family: Option<Family>,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
    }

    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let hp = &mut cfg.pipeline.hyperparams;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(cfg.family, args.family.map(Some));
        set!(cfg.pipeline.k, args.k);
        set!(hp.m, args.m);
        set!(hp.w1, args.w1);
        set!(hp.w2, args.w2);
        set!(hp.w3, args.w3);
        set!(hp.w4, args.w4);
        set!(cfg.train.lr, args.lr);
        set!(cfg.train.epochs, args.epochs);
        set!(cfg.train.batch_size, args.batch);
        set!(cfg.train.seed, args.seed);
        set!(cfg.jobs, args.jobs.map(Some));
        cfg.train.determinism |= args.determinism;
        cfg.train.grad_check |= args.grad_check;
        cfg.train.adapter_enabled |= args.adapter;
        cfg.pipeline.validate()?;
        if cfg.jobs == Some(0) {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn family(&self) -> Family {
        self.family.unwrap_or(Family::ExplanationLp)
    }
}

fn load_corpus(data: &DataArgs) -> Result<Corpus> {
    Corpus::load(&data.kb, &data.questions, data.embeddings.as_deref())
}

fn split_corpus(corpus: &Corpus, split: &SplitArgs) -> Result<(Corpus, Corpus)> {
    let n_train = split.train_size.unwrap_or(corpus.len() * 4 / 5);
    if n_train == 0 || n_train >= corpus.len() {
        return Err(Error::Config(format!("train size {n_train} leaves an empty split of {} questions", corpus.len())));
    }
    Ok(corpus.split(n_train))
}

/// θ from a checkpoint or a plain name→value map. The checkpoint's family
/// is adopted unless one was configured explicitly.
fn load_theta(path: &Path, cfg: &mut RunConfig) -> Result<ThetaParams<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |e: serde_json::Error| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    let theta = if value.get("config_hash").is_some() {
        let ck: Checkpoint = serde_json::from_value(value).map_err(parse_err)?;
        match cfg.family {
            Some(f) if f != ck.family => {
                return Err(Error::Config(format!("checkpoint is for family {} but {f} was requested", ck.family)));
            }
            _ => cfg.family = Some(ck.family),
        }
        ck.theta()?
    } else {
        let named: BTreeMap<String, f64> = serde_json::from_value(value).map_err(parse_err)?;
        let theta = ThetaParams::from_named(cfg.family(), &named)?;
        if !theta.in_unit_box() {
            return Err(Error::Validation(format!("{}: θ outside [0, 1]", path.display())));
        }
        theta
    };
    Ok(theta)
}

fn theta_or_default(path: Option<&Path>, cfg: &mut RunConfig) -> Result<ThetaParams<f64>> {
    match path {
        Some(p) => load_theta(p, cfg),
        None => Ok(ThetaParams::uniform(cfg.family(), 0.5)),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6 + 0.0
}

#[derive(Debug, Serialize)]
struct SolveLine<'a> {
    id: &'a str,
    answer_index: usize,
    explanation: &'a [String],
    hypothesis_probs: Vec<f64>,
    objective: f64,
    status: SdpStatus,
}

fn cmd_solve(data: &DataArgs, cfg: &mut RunConfig, theta_file: Option<&Path>, skip_errors: bool, out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(data)?;
    let theta = theta_or_default(theta_file, cfg)?;
    let family = cfg.family();
    let pipe = cfg.pipeline;
    let cache = RetrievalCache::build(&corpus, pipe.k, pipe.retrieval)?;
    let prepared = prepare::<f64>(&corpus, &cache, pipe.k, family, &pipe.hyperparams)?;
    let mut text = String::new();
    let mut failures = 0usize;
    for p in prepared {
        let outcome = p.map_err(|s| (s.question_id, s.error)).and_then(|inst| {
            inst.predict(&theta, pipe.solver.settings()).map(|r| (inst, r)).map_err(|e| (String::new(), e))
        });
        match outcome {
            Ok((inst, (sel, sol))) => {
                let line = SolveLine {
                    id: &inst.question_id,
                    answer_index: sel.answer_index,
                    explanation: &sel.explanation_ids,
                    hypothesis_probs: sel.hypothesis_probs(inst.graph.n_hyp).iter().map(|&p| round6(p)).collect(),
                    objective: round6(sol.objective_value),
                    status: sol.status,
                };
                text.push_str(&serde_json::to_string(&line).expect("line serializes"));
                text.push('\n');
            }
            Err((qid, e)) => {
                if !skip_errors {
                    return Err(e);
                }
                failures += 1;
                warn!("question {qid}: {e}");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} question(s) skipped");
    }
    emit(out, &text)
}

fn cmd_train(data: &DataArgs, cfg: &RunConfig, split: &SplitArgs, log_path: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(data)?;
    let (train, dev) = split_corpus(&corpus, split)?;
    let result = fit(&train, &dev, cfg.family(), &cfg.train, &cfg.pipeline)?;
    let log = log_to_jsonl(&result.log);
    match log_path {
        Some(p) => fs::write(p, &log).map_err(|e| Error::io(p, e))?,
        None => eprint!("{log}"),
    }
    eprintln!(
        "best epoch {} dev accuracy {:.4} (gold explanations outside rosters: {})",
        result.checkpoint.epoch, result.checkpoint.dev_accuracy, result.gold_miss
    );
    let default_out = PathBuf::from("checkpoint.json");
    result.checkpoint.save(out.unwrap_or(&default_out))
}

fn cmd_eval(data: &DataArgs, cfg: &mut RunConfig, split: &SplitArgs, checkpoint: Option<&Path>, ir: bool, out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(data)?;
    let target = match split.train_size {
        Some(_) => split_corpus(&corpus, split)?.1,
        None => corpus,
    };
    let report = if ir {
        ir_solver(&target, cfg.pipeline.k)?
    } else {
        let theta = theta_or_default(checkpoint, cfg)?;
        evaluate(&target, cfg.family(), &theta, &cfg.pipeline)?
    };
    eprintln!("accuracy {:.4} over {} answered, {} skipped", report.accuracy, report.answered, report.skipped);
    emit(out, &report.to_json())
}

fn cmd_sweep(
    data: &DataArgs,
    cfg: &mut RunConfig,
    split: &SplitArgs,
    checkpoint: Option<&Path>,
    ks: &[usize],
    csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let corpus = load_corpus(data)?;
    let target = match split.train_size {
        Some(_) => split_corpus(&corpus, split)?.1,
        None => corpus,
    };
    let theta = theta_or_default(checkpoint, cfg)?;
    let sweep = k_sweep(&target, cfg.family(), &theta, ks, &cfg.pipeline)?;
    if let Some(p) = csv {
        fs::write(p, sweep.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    emit(out, &sweep.to_json())
}

/// Returns whether the check passed.
fn cmd_gradcheck(data: &OptionalDataArgs, cfg: &RunConfig, questions: usize, probes: usize, step: f64) -> Result<bool> {
    let corpus = match (&data.kb, &data.questions) {
        (Some(kb), Some(q)) => Corpus::load(kb, q, data.embeddings.as_deref())?,
        _ => generate_synthetic_corpus(200, cfg.train.seed, 0.5)?,
    };
    let summary = grad_check_corpus(&corpus, cfg.family(), &cfg.train, &cfg.pipeline, questions, probes, step)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    eprintln!("max relative error {:.3e} over {} probes", summary.max_rel_err, summary.probes);
    Ok(summary.passes(1e-3, GRAD_CHECK_FLOOR))
}

fn cmd_synth(cfg: &RunConfig, n: usize, ratio: f64, out: Option<&Path>) -> Result<()> {
    let dir = out.ok_or_else(|| Error::Config("synth needs --out <directory>".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let corpus = generate_synthetic_corpus(n, cfg.train.seed, ratio)?;
    corpus.save(&dir.join("kb.jsonl"), &dir.join("questions.jsonl"), &dir.join("embeddings.jsonl"))?;
    info!("wrote {} questions and {} facts to {}", corpus.len(), corpus.kb.facts.len(), dir.display());
    Ok(())
}

fn common(cmd: &Command) -> &CommonArgs {
    match cmd {
        Command::Solve { common, .. }
        | Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::Sweep { common, .. }
        | Command::Gradcheck { common, .. }
        | Command::Synth { common, .. } => common,
    }
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli.command) {
        Ok(true) => 0,
        Ok(false) => 3,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> Result<bool> {
    let args = common(cmd);
    let mut cfg = RunConfig::resolve(args)?;
    let threads = if cfg.train.determinism { Some(cfg.jobs.unwrap_or(1)) } else { cfg.jobs };
    if let Some(n) = threads {
        // fails only when a pool already exists, e.g. in-process tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = args.out.as_deref();
    match cmd {
        Command::Solve { data, theta_file, skip_errors, .. } => cmd_solve(data, &mut cfg, theta_file.as_deref(), *skip_errors, out)?,
        Command::Train { data, split, log, .. } => cmd_train(data, &cfg, split, log.as_deref(), out)?,
        Command::Eval { data, split, checkpoint, ir, .. } => cmd_eval(data, &mut cfg, split, checkpoint.as_deref(), *ir, out)?,
        Command::Sweep { data, split, checkpoint, ks, csv, .. } => {
            cmd_sweep(data, &mut cfg, split, checkpoint.as_deref(), ks, csv.as_deref(), out)?
        }
        Command::Gradcheck { data, n_questions, probes, step, .. } => return cmd_gradcheck(data, &cfg, *n_questions, *probes, *step),
        Command::Synth { n, ratio, .. } => cmd_synth(&cfg, *n, *ratio, out)?,
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        fs::write(&p, r#"{"family": "tupleilp", "pipeline": {"k": 7, "hyperparams": {"m": 3}}, "train": {"epochs": 4}}"#).unwrap();
        let args = CommonArgs { config: Some(p.clone()), k: Some(9), ..CommonArgs::default() };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.family(), Family::TupleIlp);
        assert_eq!(cfg.pipeline.k, 9);
        assert_eq!(cfg.pipeline.hyperparams.m, 3);
        assert_eq!(cfg.pipeline.hyperparams.w1, 2);
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.train.lr, 0.01);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        fs::write(&p, r#"{"pipeline": {"kk": 7}}"#).unwrap();
        let err = RunConfig::resolve(&CommonArgs { config: Some(p), ..CommonArgs::default() }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn theta_map_and_checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("theta.json");
        fs::write(&p, r#"{"theta_sr": 0.2, "theta_lr": 0.9}"#).unwrap();
        let mut cfg = RunConfig { family: Some(Family::TupleIlp), ..RunConfig::default() };
        let t = load_theta(&p, &mut cfg).unwrap();
        assert_eq!(t.values, vec![0.2, 0.9]);

        let ck = Checkpoint::from_theta(&ThetaParams::<f64>::uniform(Family::TupleIlp, 0.3), "h", 1, 0.5);
        ck.save(&p).unwrap();
        let mut cfg = RunConfig::default();
        load_theta(&p, &mut cfg).unwrap();
        assert_eq!(cfg.family(), Family::TupleIlp);
        let mut cfg = RunConfig { family: Some(Family::ExplanationLp), ..RunConfig::default() };
        assert!(load_theta(&p, &mut cfg).is_err());
    }

    #[test]
    fn rounding_has_no_negative_zero() {
        assert_eq!(round6(-1e-9).to_string(), "0");
        assert_eq!(round6(0.123_456_78), 0.123_457);
    }
}

//! Losses, the decoupled-weight-decay Adam optimizer and the epoch loop.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::diffgrad::{chain_to_params, solution_gradient};
use crate::error::{Error, Result};
use crate::eval::{evaluate_instances, EvalReport};
use crate::graph::{Family, ThetaParams};
use crate::linalg::Mat;
use crate::pipeline::{prepare, split_prepared, PipelineConfig, QuestionInstance, RetrievalCache};
use crate::relevance::EmbeddingAdapter;
use crate::scalar::Scalar;
use crate::sdp::{solve_feasible, SdpStatus, SolverSettings};

/// Probability clamp inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-6;

/// `Σ_i |p_i − 1[i = gold]|`.
pub fn answer_loss<T: Scalar>(probs: &[T], gold: usize) -> T {
    answer_loss_grad(probs, gold).0
}

/// Loss and subgradient (zero where the residual vanishes).
pub fn answer_loss_grad<T: Scalar>(probs: &[T], gold: usize) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let r = p - if i == gold { T::one() } else { T::zero() };
            loss += r.abs();
            if r > T::zero() {
                T::one()
            } else if r < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    (loss, grad)
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1 − ε]`.
pub fn explanation_loss<T: Scalar>(probs: &[T], targets: &[bool]) -> T {
    explanation_loss_grad(probs, targets).0
}

pub fn explanation_loss_grad<T: Scalar>(probs: &[T], targets: &[bool]) -> (T, Vec<T>) {
    assert_eq!(probs.len(), targets.len());
    if probs.is_empty() {
        return (T::zero(), Vec::new());
    }
    let eps = T::lit(BCE_EPS);
    let n = T::from_usize_lossy(probs.len());
    let mut loss = T::zero();
    let grad = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let q = p.max(eps).min(T::one() - eps);
            let inside = p > eps && p < T::one() - eps;
            if t {
                loss -= q.ln();
                if inside { -T::one() / (q * n) } else { T::zero() }
            } else {
                loss -= (T::one() - q).ln();
                if inside { T::one() / ((T::one() - q) * n) } else { T::zero() }
            }
        })
        .collect();
    (loss / n, grad)
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(n: usize, weight_decay: T) -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * self.weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub use_explanation_loss: bool,
    pub adapter_enabled: bool,
    pub seed: u64,
    pub determinism: bool,
    /// Barrier parameter of the smoothed solves used for gradients.
    pub barrier: f64,
    /// Run a finite-difference check on the first batch and abort on failure.
    pub grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch_size: 8,
            weight_decay: 0.0,
            use_explanation_loss: true,
            adapter_enabled: false,
            seed: 0,
            determinism: false,
            barrier: 0.05,
            grad_check: false,
        }
    }
}

impl TrainConfig {
    /// Settings used when fine-tuning a transformer encoder.
    pub fn transformer_preset() -> Self {
        Self { epochs: 14, lr: 1e-5, batch_size: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        // lr = 0 is a frozen run: parameters and dev accuracy stay put
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.barrier > 0.0) {
            return Err(Error::Config(format!("training barrier must be positive, got {}", self.barrier)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub family: Family,
    pub theta: BTreeMap<String, f64>,
    pub adapter: Option<Vec<Vec<f64>>>,
    pub config_hash: String,
    pub epoch: usize,
    pub dev_accuracy: f64,
}

impl Checkpoint {
    pub fn from_theta<T: Scalar>(theta: &ThetaParams<T>, config_hash: &str, epoch: usize, dev_accuracy: f64) -> Self {
        Self {
            family: theta.family,
            theta: theta.named().into_iter().map(|(k, v)| (k, v.as_f64())).collect(),
            adapter: theta.adapter.as_ref().filter(|a| a.enabled).map(|a| a.matrix.cast::<f64>().to_rows()),
            config_hash: config_hash.to_string(),
            epoch,
            dev_accuracy,
        }
    }

    pub fn theta<T: Scalar>(&self) -> Result<ThetaParams<T>> {
        let named = self.theta.iter().map(|(k, v)| (k.clone(), T::lit(*v))).collect();
        let mut theta = ThetaParams::from_named(self.family, &named)?;
        if !theta.in_unit_box() {
            return Err(Error::Validation("checkpoint θ outside [0, 1]".into()));
        }
        if let Some(rows) = &self.adapter {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::Validation("checkpoint adapter is not square".into()));
            }
            let m = Mat::from_rows(rows).cast::<T>();
            theta.adapter = Some(EmbeddingAdapter { matrix: m, enabled: true });
        }
        Ok(theta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
    }
}

/// SHA-256 over the canonical JSON of everything that shapes training.
pub fn config_hash(family: Family, cfg: &TrainConfig, pipe: &PipelineConfig) -> String {
    let v = serde_json::json!({ "family": family, "train": cfg, "pipeline": pipe });
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the examples that produced a gradient; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub dev_acc: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Gold explanation facts absent from training rosters.
    pub gold_miss: usize,
    /// Final (not necessarily best) parameters.
    pub last_theta: ThetaParams<f64>,
}

/// Training loss read off the diagonal of a lifted solution, and its
/// gradient with respect to `Z`. Diagonal entries outside `[0, 1]` are
/// clipped and receive no gradient.
pub fn lifted_loss<T: Scalar>(z: &Mat<T>, n_hyp: usize, gold: usize, targets: Option<&[bool]>) -> (T, Mat<T>) {
    let dim = z.rows();
    let diag: Vec<T> = (1..dim).map(|i| z[(i, i)]).collect();
    let clip = |p: T| p.max(T::zero()).min(T::one());
    let inside = |p: T| p >= T::zero() && p <= T::one();
    let hyp: Vec<T> = diag[..n_hyp].iter().map(|&p| clip(p)).collect();
    let (mut loss, g_ans) = answer_loss_grad(&hyp, gold);
    let mut g = Mat::zeros(dim, dim);
    for i in 0..n_hyp {
        if inside(diag[i]) {
            g[(i + 1, i + 1)] = g_ans[i];
        }
    }
    if let Some(targets) = targets {
        let facts: Vec<T> = diag[n_hyp..].iter().map(|&p| clip(p)).collect();
        let (le, g_exp) = explanation_loss_grad(&facts, targets);
        loss += le;
        for (j, gj) in g_exp.into_iter().enumerate() {
            let node = n_hyp + j;
            if inside(diag[node]) {
                g[(node + 1, node + 1)] += gj;
            }
        }
    }
    (loss, g)
}

struct ExampleGrad<T> {
    loss: T,
    d_theta: Vec<T>,
    d_adapter: Option<Mat<T>>,
}

fn example_gradient<T: Scalar>(
    inst: &QuestionInstance<T>,
    theta: &ThetaParams<T>,
    settings: SolverSettings<T>,
    use_explanation: bool,
) -> Result<ExampleGrad<T>> {
    let (problem, scores) = inst.problem(theta, settings)?;
    let sol = solve_feasible(&problem)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::MaxIters(sol.iterations));
    }
    let targets = if use_explanation { inst.targets.as_deref() } else { None };
    let (loss, g) = lifted_loss(&sol.z, inst.graph.n_hyp, inst.gold_answer, targets);
    let mut bundle = solution_gradient(&problem, &sol, &g)?;
    let adapter_on = theta.adapter.as_ref().is_some_and(|a| a.enabled);
    chain_to_params(&mut bundle, &inst.graph, &scores, theta, adapter_on.then_some(&inst.vectors));
    Ok(ExampleGrad { loss, d_theta: bundle.dl_dtheta, d_adapter: bundle.dl_dadapter })
}

/// Initial parameters: every θ at 0.5, identity adapter when enabled.
pub fn initial_theta<T: Scalar>(family: Family, cfg: &TrainConfig, dim: usize) -> ThetaParams<T> {
    let mut theta = ThetaParams::uniform(family, T::lit(0.5));
    if cfg.adapter_enabled {
        theta.adapter = Some(EmbeddingAdapter::identity(dim, true));
    }
    theta
}

/// Finite-difference check of the full θ gradient on one instance.
fn grad_check_instance<T: Scalar>(
    inst: &QuestionInstance<T>,
    theta: &ThetaParams<T>,
    settings: SolverSettings<T>,
    use_explanation: bool,
) -> Result<T> {
    let analytic = example_gradient(inst, theta, settings, use_explanation)?.d_theta;
    let h = T::lit(1e-5);
    let mut worst = T::zero();
    for p in 0..theta.values.len() {
        let eval = |delta: T| -> Result<T> {
            let mut t = theta.clone();
            t.values[p] += delta;
            Ok(example_gradient(inst, &t, settings, use_explanation)?.loss)
        };
        let numeric = (eval(h)? - eval(-h)?) / (h + h);
        let err = (analytic[p] - numeric).abs() / numeric.abs().max(T::lit(1e-3));
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Train on `train`, selecting the checkpoint by `dev` accuracy. Epoch 0
/// is the initial parameters; later epochs replace the best only on a
/// strict improvement.
pub fn fit(train: &Corpus, dev: &Corpus, family: Family, cfg: &TrainConfig, pipe: &PipelineConfig) -> Result<FitResult> {
    cfg.validate()?;
    pipe.validate()?;
    let hash = config_hash(family, cfg, pipe);
    let train_cache = RetrievalCache::build(train, pipe.k, pipe.retrieval)?;
    let dev_cache = RetrievalCache::build(dev, pipe.k, pipe.retrieval)?;
    let (train_set, train_skips) = split_prepared(prepare::<f64>(train, &train_cache, pipe.k, family, &pipe.hyperparams)?);
    let (dev_set, dev_skips) = split_prepared(prepare::<f64>(dev, &dev_cache, pipe.k, family, &pipe.hyperparams)?);
    for s in train_skips.iter().chain(&dev_skips) {
        warn!("skipping question {}: {}", s.question_id, s.error);
    }
    if train_set.is_empty() {
        return Err(Error::Validation("no trainable question in the training split".into()));
    }
    let gold_miss = train_set.iter().map(|i| i.gold_miss).sum();
    let use_explanation = cfg.use_explanation_loss && train_set.iter().any(|i| i.targets.is_some());
    if cfg.use_explanation_loss && !use_explanation {
        info!("no gold explanations in training data; using the answer loss only");
    }

    let mut theta = initial_theta::<f64>(family, cfg, train.kb.dim);
    let inference: SolverSettings<f64> = pipe.solver.settings();
    let settings = SolverSettings { barrier_target: Some(cfg.barrier), ..inference };
    let dev_eval = |theta: &ThetaParams<f64>| -> EvalReport { evaluate_instances(&dev_set, dev_skips.len(), theta, inference) };

    let report = dev_eval(&theta);
    let mut best = Checkpoint::from_theta(&theta, &hash, 0, report.accuracy);
    let mut log = vec![EpochLog { epoch: 0, train_loss: None, dev_acc: report.accuracy, skipped: report.skipped }];
    info!("epoch 0: dev_acc {:.4}", report.accuracy);

    let mut opt_theta = AdamW::new(theta.values.len(), cfg.weight_decay);
    let adapter_len = theta.adapter.as_ref().map_or(0, |a| a.dim() * a.dim());
    let mut opt_adapter = AdamW::new(adapter_len, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_ok = 0usize;
        let mut failed = train_skips.len();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.grad_check && epoch == 1 && b == 0 {
                let inst = &train_set[batch[0]];
                let err = grad_check_instance(inst, &theta, settings, use_explanation)?;
                info!("gradient check on {}: max relative error {err:.3e}", inst.question_id);
                if err > 1e-3 {
                    return Err(Error::Internal(format!("gradient check failed: max relative error {err:.3e}")));
                }
            }
            let run = |&i: &usize| example_gradient(&train_set[i], &theta, settings, use_explanation);
            // per-example results are collected in batch order, so the reduction is serial either way
            let results: Vec<Result<ExampleGrad<f64>>> = if cfg.determinism {
                batch.iter().map(run).collect()
            } else {
                batch.par_iter().map(run).collect()
            };
            let mut g_theta = vec![0.0; theta.values.len()];
            let mut g_adapter = vec![0.0; adapter_len];
            let mut used = 0usize;
            for (r, &i) in results.into_iter().zip(batch) {
                match r {
                    Ok(eg) => {
                        loss_sum += eg.loss;
                        n_ok += 1;
                        used += 1;
                        for (a, d) in g_theta.iter_mut().zip(&eg.d_theta) {
                            *a += d;
                        }
                        if let Some(da) = eg.d_adapter {
                            let d = da.rows();
                            for r in 0..d {
                                for c in 0..d {
                                    g_adapter[r * d + c] += da[(r, c)];
                                }
                            }
                        }
                    }
                    Err(e) if e.is_numerical() => {
                        failed += 1;
                        warn!("epoch {epoch}: skipping {}: {e}", train_set[i].question_id);
                    }
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                continue;
            }
            let scale = 1.0 / used as f64;
            g_theta.iter_mut().for_each(|g| *g *= scale);
            opt_theta.step(&mut theta.values, &g_theta, cfg.lr);
            theta.clamp();
            if let Some(a) = theta.adapter.as_mut() {
                g_adapter.iter_mut().for_each(|g| *g *= scale);
                let d = a.dim();
                let mut flat: Vec<f64> = (0..d * d).map(|k| a.matrix[(k / d, k % d)]).collect();
                opt_adapter.step(&mut flat, &g_adapter, cfg.lr);
                a.matrix = Mat::from_fn(d, d, |r, c| flat[r * d + c]);
            }
        }
        let total = train_set.len() + train_skips.len();
        if 2 * failed > total {
            return Err(Error::Infeasible(format!("epoch {epoch} aborted: {failed} of {total} training examples failed")));
        }
        let report = dev_eval(&theta);
        let train_loss = (n_ok > 0).then(|| loss_sum / n_ok as f64);
        info!("epoch {epoch}: train_loss {:.5} dev_acc {:.4} skipped {failed}", train_loss.unwrap_or(f64::NAN), report.accuracy);
        log.push(EpochLog { epoch, train_loss, dev_acc: report.accuracy, skipped: failed });
        if report.accuracy > best.dev_accuracy {
            best = Checkpoint::from_theta(&theta, &hash, epoch, report.accuracy);
        }
    }
    Ok(FitResult { checkpoint: best, log, gold_miss, last_theta: theta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub questions: Vec<String>,
    pub probes: usize,
    pub max_rel_err: f64,
    pub max_abs_err_small: f64,
    /// Questions passed over because their graph exceeds the probe size limit.
    pub too_large: usize,
}

impl GradCheckSummary {
    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.probes > 0 && self.max_rel_err <= rel_tol && self.max_abs_err_small <= abs_floor
    }
}

/// Gradient floor below which probes are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Finite-difference check of the training-loss gradient on the first
/// `n_questions` instances small enough to probe.
pub fn grad_check_corpus(
    corpus: &Corpus,
    family: Family,
    cfg: &TrainConfig,
    pipe: &PipelineConfig,
    n_questions: usize,
    n_probes: usize,
    step: f64,
) -> Result<GradCheckSummary> {
    let cache = RetrievalCache::build(corpus, pipe.k, pipe.retrieval)?;
    let (instances, _) = split_prepared(prepare::<f64>(corpus, &cache, pipe.k, family, &pipe.hyperparams)?);
    let theta = initial_theta::<f64>(family, cfg, corpus.kb.dim);
    let settings = SolverSettings {
        tol_gap: 1e-9,
        tol_feas: 1e-11,
        center_tol: 1e-10,
        ..SolverSettings::at_barrier(cfg.barrier)
    };
    let mut out = GradCheckSummary { questions: Vec::new(), probes: 0, max_rel_err: 0.0, max_abs_err_small: 0.0, too_large: 0 };
    for (q, inst) in instances.iter().enumerate() {
        if out.questions.len() == n_questions {
            break;
        }
        if inst.graph.n_nodes() > crate::diffgrad::FD_NODE_LIMIT {
            out.too_large += 1;
            continue;
        }
        let (problem, _) = inst.problem(&theta, settings)?;
        let targets = if cfg.use_explanation_loss { inst.targets.clone() } else { None };
        let loss = |z: &Mat<f64>| lifted_loss(z, inst.graph.n_hyp, inst.gold_answer, targets.as_deref());
        let report = crate::diffgrad::finite_diff_check(&problem, &loss, n_probes, cfg.seed.wrapping_add(q as u64), step, GRAD_CHECK_FLOOR)?;
        out.probes += report.probes.len();
        out.max_rel_err = out.max_rel_err.max(report.max_rel_err);
        out.max_abs_err_small = out.max_abs_err_small.max(report.max_abs_err_small);
        out.questions.push(inst.question_id.clone());
    }
    Ok(out)
}

/// One JSON object per line.
pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter().map(|e| serde_json::to_string(e).expect("log serializes") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn answer_loss_examples() {
        assert_relative_eq!(answer_loss(&[0.9, 0.1], 0), 0.2, epsilon = 1e-12);
        assert_eq!(answer_loss(&[0.0, 1.0, 0.0], 1), 0.0);
        assert_relative_eq!(answer_loss(&[0.25; 4], 2), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn explanation_loss_examples() {
        let sat = explanation_loss(&[1.0, 0.0, 1.0], &[true, false, true]);
        assert!(sat <= -(1.0f64 - 1e-6).ln() + 1e-15);
        assert_relative_eq!(explanation_loss(&[0.5], &[true]), std::f64::consts::LN_2, epsilon = 1e-12);
        let v = explanation_loss(&[0.9, 0.2, 0.1], &[true, false, false]);
        let oracle = (-(0.9f64.ln()) - 0.8f64.ln() - 0.9f64.ln()) / 3.0;
        assert_relative_eq!(v, oracle, epsilon = 1e-12);
        assert_relative_eq!(v, 0.144_621_527_5, epsilon = 1e-9);
    }

    #[test]
    fn adamw_first_step_is_lr_sized() {
        let mut opt = AdamW::new(2, 0.0);
        let mut p = vec![0.5, 0.5];
        opt.step(&mut p, &[2.0, -0.1], 0.01);
        assert_relative_eq!(p[0], 0.49, epsilon = 1e-6);
        assert_relative_eq!(p[1], 0.51, epsilon = 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.5);
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.0], 0.1);
        assert_relative_eq!(p[0], 0.95, epsilon = 1e-12);
    }

    #[test]
    fn config_rejects_zero_epochs() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig { lr: -0.1, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_ok());
    }

    #[test]
    fn config_unknown_key_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "lrate": 0.1}"#).is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 8);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut theta = ThetaParams::<f64>::uniform(Family::TupleIlp, 0.25);
        theta.values[1] = 0.75;
        let ck = Checkpoint::from_theta(&theta, "abc", 3, 0.5);
        let back: Checkpoint = serde_json::from_str(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.theta::<f64>().unwrap(), theta);
    }

    #[test]
    fn checkpoint_out_of_box_rejected() {
        let theta = ThetaParams::<f64>::uniform(Family::TupleIlp, 0.25);
        let mut ck = Checkpoint::from_theta(&theta, "abc", 3, 0.5);
        ck.theta.insert("theta_sr".into(), 1.5);
        assert!(ck.theta::<f64>().is_err());
    }

    #[test]
    fn config_hash_tracks_config() {
        let pipe = PipelineConfig::default();
        let a = config_hash(Family::ExplanationLp, &TrainConfig::default(), &pipe);
        let b = config_hash(Family::ExplanationLp, &TrainConfig { seed: 1, ..TrainConfig::default() }, &pipe);
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        assert_eq!(a, config_hash(Family::ExplanationLp, &TrainConfig::default(), &pipe));
    }

    proptest! {
        #[test]
        fn adamw_then_clamp_stays_in_box(
            start in proptest::collection::vec(0.0f64..=1.0, 7),
            grads in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 7), 1..20),
            lr in 0.001f64..2.0,
        ) {
            let mut theta = ThetaParams::<f64> { family: Family::ExplanationLp, values: start, adapter: None };
            let mut opt = AdamW::new(7, 0.01);
            for g in &grads {
                opt.step(&mut theta.values, g, lr);
                theta.clamp();
                prop_assert!(theta.in_unit_box());
            }
        }

        #[test]
        fn bce_gradient_matches_difference(p in 0.01f64..0.99, t in any::<bool>()) {
            let (_, g) = explanation_loss_grad(&[p, 0.5], &[t, false]);
            let h = 1e-6;
            let num = (explanation_loss(&[p + h, 0.5], &[t, false]) - explanation_loss(&[p - h, 0.5], &[t, false])) / (2.0 * h);
            prop_assert!((g[0] - num).abs() < 1e-6 * (1.0 + num.abs()));
        }
    }
}

//! Imitation learning on oracle paths, baseline schedules and the optimizer loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ParallelCorpus, SentencePair};
use crate::model::{
    save_checkpoint, CheckpointError, LossOptions, LossReport, ModelError, Real, ScorerModel, SupervisedPair,
    SupervisedPath,
};
use crate::oracle::{extreme_path, oracle_actions_at, waitk_path, Gamma, OracleConfig, OracleError, PathSide, Policy};
use crate::rng::substream;
use crate::transition::{Action, ActionSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub oracle: OracleConfig,
    pub mode: Policy,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    pub negative_term: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            oracle: OracleConfig { alpha: 1, beta: 5, gamma: Gamma::ONE },
            mode: Policy::Adaptive,
            optimizer: AdamConfig::default(),
            batch_size: 32,
            max_steps: 3000,
            checkpoint_every: 0,
            clip_norm: None,
            negative_term: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.oracle.validate() {
            v.push(format!("train.oracle: {e}"));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            v.push(format!("train.optimizer.lr must be positive, got {}", self.optimizer.lr));
        }
        for (name, b) in [("beta1", self.optimizer.beta1), ("beta2", self.optimizer.beta2)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("train.optimizer.{name} must be in [0, 1), got {b}"));
            }
        }
        if self.optimizer.eps <= 0.0 {
            v.push("train.optimizer.eps must be positive".to_string());
        }
        if self.batch_size == 0 {
            v.push("train.batch_size must be >= 1".to_string());
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                v.push(format!("train.clip_norm must be positive, got {c}"));
            }
        }
        v
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Oracle(#[from] OracleError),
    #[error("action {index} of the path is not allowed by the oracle")]
    NotAnOraclePath { index: usize },
    #[error("training diverged at step {step}; parameters restored to step {}", step - 1)]
    Diverged { step: usize },
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Oracle label sets along `path`, validating that every action is allowed.
pub fn oracle_labels(
    path: &ActionSequence,
    source_len: usize,
    target: &[usize],
    cfg: &OracleConfig,
) -> Result<Vec<Vec<Action>>, TrainError> {
    let (mut s, mut t) = (0, 0);
    let mut labels = Vec::with_capacity(path.len());
    for (index, &a) in path.iter().enumerate() {
        let allowed = oracle_actions_at(s, t, source_len, target, cfg)?;
        if !allowed.contains(&a) {
            return Err(TrainError::NotAnOraclePath { index });
        }
        labels.push(allowed);
        match a {
            Action::Delay => s += 1,
            Action::Word(_) => t += 1,
        }
    }
    Ok(labels)
}

fn own_labels(path: &ActionSequence) -> Vec<Vec<Action>> {
    path.iter().map(|&a| vec![a]).collect()
}

/// The supervised paths for one sentence pair under `mode`.
///
/// Adaptive: both extreme oracle paths at weight 1/2 with oracle label sets.
/// Fixed schedules: the schedule path at weight 1, each step labelled with
/// its own action.
pub fn supervised_pair(pair: &SentencePair, oracle: &OracleConfig, mode: Policy) -> Result<SupervisedPair, TrainError> {
    let n = pair.source.len();
    let y = &pair.target;
    let paths = match mode {
        Policy::Adaptive => [PathSide::Aggressive, PathSide::Conservative]
            .into_iter()
            .map(|side| {
                let actions = extreme_path(n, y, oracle, side);
                let labels = oracle_labels(&actions, n, y, oracle)?;
                Ok(SupervisedPath { actions, labels, weight: 0.5 })
            })
            .collect::<Result<Vec<_>, TrainError>>()?,
        Policy::WaitK(k) => {
            let actions = waitk_path(n, y, k);
            vec![SupervisedPath { labels: own_labels(&actions), actions, weight: 1.0 }]
        }
        Policy::FullSentence => {
            let actions = waitk_path(n, y, n);
            vec![SupervisedPath { labels: own_labels(&actions), actions, weight: 1.0 }]
        }
    };
    Ok(SupervisedPair { source: pair.source.clone(), target: pair.target.clone(), paths })
}

/// Mean model score over the oracle actions of the state reached by `prefix`.
pub fn oracle_step_probability<T: Real>(
    model: &ScorerModel<T>,
    prefix: &ActionSequence,
    source: &[usize],
    target: &[usize],
    cfg: &OracleConfig,
) -> Result<f64, TrainError> {
    oracle_labels(prefix, source.len(), target, cfg)?;
    let s = prefix.delays();
    let t = prefix.len() - s;
    let labels = oracle_actions_at(s, t, source.len(), target, cfg)?;
    let memory = if s == 0 {
        crate::model::EncoderMemory::empty(model.config().d_model)
    } else {
        model.encode(&source[..s])?
    };
    let scores = model.score_actions(&memory, prefix)?;
    let vocab = model.vocab();
    Ok(labels.iter().map(|&a| scores.scores[vocab.action_id(a)]).sum::<f64>() / labels.len() as f64)
}

/// `-sum_i ln f(a_<i)` along an oracle path.
pub fn path_loss<T: Real>(
    model: &ScorerModel<T>,
    path: &ActionSequence,
    source: &[usize],
    target: &[usize],
    cfg: &OracleConfig,
) -> Result<f64, TrainError> {
    let labels = oracle_labels(path, source.len(), target, cfg)?;
    let pair = SupervisedPair {
        source: source.to_vec(),
        target: target.to_vec(),
        paths: vec![SupervisedPath { actions: path.clone(), labels, weight: 1.0 }],
    };
    Ok(model.loss(&[pair], LossOptions::default())?.loss)
}

/// Average of the path losses of the two extreme oracle paths.
pub fn two_path_loss<T: Real>(
    model: &ScorerModel<T>,
    source: &[usize],
    target: &[usize],
    cfg: &OracleConfig,
) -> Result<f64, TrainError> {
    Ok(two_path_loss_and_gradients(model, source, target, cfg, false)?.loss)
}

/// [`two_path_loss`] with its parameter gradient when `want_grad` is set.
pub fn two_path_loss_and_gradients<T: Real>(
    model: &ScorerModel<T>,
    source: &[usize],
    target: &[usize],
    cfg: &OracleConfig,
    want_grad: bool,
) -> Result<LossReport<T>, TrainError> {
    let pair = SentencePair { source: source.to_vec(), target: target.to_vec() };
    let sup = supervised_pair(&pair, cfg, Policy::Adaptive)?;
    let report = if want_grad {
        model.loss_and_gradients(&[sup], LossOptions::default())?
    } else {
        model.loss(&[sup], LossOptions::default())?
    };
    Ok(report)
}

/// Adaptive-moment optimizer with bias correction; moments kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = T::of(params[i].f64() - c.lr * mhat / (vhat.sqrt() + c.eps));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub step: usize,
    /// Mean loss per sentence pair in the batch.
    pub loss: f64,
    /// L2 norm of the mean gradient before clipping.
    pub grad_norm: f64,
    pub examples: usize,
    pub floor_hits: usize,
    pub wall_ms: u64,
}

/// Stateful single-writer training loop.
pub struct Trainer<T> {
    model: ScorerModel<T>,
    cfg: TrainConfig,
    adam: Adam,
    examples: Vec<SupervisedPair>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    step: usize,
    consumed: usize,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ScorerModel<T>, corpus: &ParallelCorpus, cfg: TrainConfig) -> Result<Self, TrainError> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(TrainError::Config(v.join("; ")));
        }
        if corpus.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let examples = corpus
            .pairs
            .iter()
            .map(|p| supervised_pair(p, &cfg.oracle, cfg.mode))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rng = substream(cfg.seed, "shuffle");
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let adam = Adam::new(cfg.optimizer, model.num_params());
        Ok(Trainer { model, cfg, adam, examples, order, cursor: 0, rng, step: 0, consumed: 0, started: Instant::now() })
    }

    pub fn model(&self) -> &ScorerModel<T> {
        &self.model
    }

    pub fn into_model(self) -> ScorerModel<T> {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<SupervisedPair> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.examples[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer update. On a non-finite loss or gradient the parameters
    /// are left as they were before the step.
    pub fn step(&mut self) -> Result<TrainStepReport, TrainError> {
        let step = self.step + 1;
        let batch = self.next_batch();
        let opts = LossOptions { negative_term: self.cfg.negative_term };
        let report = match self.model.loss_and_gradients(&batch, opts) {
            Ok(r) => r,
            Err(ModelError::NonFiniteLoss { .. }) => return Err(TrainError::Diverged { step }),
            Err(e) => return Err(e.into()),
        };
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<f64> = report.grads.expect("gradients requested").iter().map(|g| g.f64() * scale).collect();
        let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        if let Some(c) = self.cfg.clip_norm {
            if grad_norm > c {
                let r = c / grad_norm;
                grads.iter_mut().for_each(|g| *g *= r);
            }
        }
        let backup = self.model.params().to_vec();
        let adam_backup = self.adam.clone();
        self.adam.step(self.model.params_mut(), &grads);
        if !self.model.all_finite() {
            self.model.params_mut().copy_from_slice(&backup);
            self.adam = adam_backup;
            return Err(TrainError::Diverged { step });
        }
        self.step = step;
        self.consumed += batch.len();
        Ok(TrainStepReport {
            step,
            loss: report.loss * scale,
            grad_norm,
            examples: self.consumed,
            floor_hits: report.floor_hits,
            wall_ms: self.started.elapsed().as_millis() as u64,
        })
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "step": self.step,
            "mode": self.cfg.mode.to_string(),
            "oracle": self.cfg.oracle,
            "train_seed": self.cfg.seed,
        })
    }

    /// Writes `checkpoint.bin` in `dir` through a temporary file.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, TrainError> {
        fs::create_dir_all(dir)?;
        let path = dir.join("checkpoint.bin");
        let tmp = dir.join("checkpoint.bin.tmp");
        save_checkpoint(&self.model, &self.metadata(), &tmp)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

/// Runs `cfg.max_steps` updates, calling `on_step` after each one.
///
/// With `checkpoint_dir` set, a checkpoint is written on the configured
/// cadence and at the end. A divergence leaves the last written checkpoint
/// untouched.
pub fn train<T: Real>(
    model: ScorerModel<T>,
    corpus: &ParallelCorpus,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_step: impl FnMut(&TrainStepReport),
) -> Result<ScorerModel<T>, TrainError> {
    let mut trainer = Trainer::new(model, corpus, cfg.clone())?;
    for _ in 0..cfg.max_steps {
        let report = trainer.step()?;
        on_step(&report);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && report.step % cfg.checkpoint_every == 0 {
                trainer.save(dir)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        trainer.save(dir)?;
    }
    Ok(trainer.into_model())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, CorpusSpec, TaskKind};
    use crate::model::ModelConfig;
    use crate::transition::Vocab;

    fn vocab() -> Vocab {
        Vocab::with_words((0..6).map(|i| format!("w{i}"))).unwrap()
    }

    fn band(alpha: i64, beta: i64) -> OracleConfig {
        OracleConfig::new(alpha, beta, Gamma::ONE).unwrap()
    }

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, ffn_width: 8, max_positions: 32, seed, ..Default::default() }
    }

    #[test]
    fn zero_model_step_probability_and_path_loss() {
        let m = ScorerModel::<f64>::zeros(tiny(0), vocab()).unwrap();
        let x = [2, 3];
        let y = [4, 5, 1];
        let cfg = band(0, 2);
        assert_eq!(oracle_step_probability(&m, &ActionSequence::new(), &x, &y, &cfg).unwrap(), 0.5);
        let path = extreme_path(2, &y, &cfg, PathSide::Aggressive);
        let l = path_loss(&m, &path, &x, &y, &cfg).unwrap();
        assert!((l - path.len() as f64 * 2f64.ln()).abs() < 1e-12);
        assert!((two_path_loss(&m, &x, &y, &cfg).unwrap() - l).abs() < 1e-12);
    }

    #[test]
    fn non_oracle_path_is_rejected() {
        let m = ScorerModel::<f64>::zeros(tiny(0), vocab()).unwrap();
        let bad = ActionSequence(vec![Action::Word(4)]);
        let err = path_loss(&m, &bad, &[2], &[4, 1], &band(0, 2)).unwrap_err();
        assert!(matches!(err, TrainError::NotAnOraclePath { index: 0 }));
    }

    #[test]
    fn two_path_loss_is_the_mean_of_path_losses() {
        let m = ScorerModel::<f64>::new(tiny(3), vocab()).unwrap();
        let x = [2, 3, 4];
        let y = [5, 6, 7, 1];
        let cfg = band(1, 3);
        let a = path_loss(&m, &extreme_path(3, &y, &cfg, PathSide::Aggressive), &x, &y, &cfg).unwrap();
        let b = path_loss(&m, &extreme_path(3, &y, &cfg, PathSide::Conservative), &x, &y, &cfg).unwrap();
        let two = two_path_loss(&m, &x, &y, &cfg).unwrap();
        assert!((two - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut p = vec![1.0f64, -1.0];
        adam.step(&mut p, &[0.3, -2.0]);
        assert!((p[0] - (1.0 - 5e-4)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 5e-4)).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic_and_waitk_matches_full_sentence() {
        let spec = CorpusSpec { task: TaskKind::Copy, vocab_size: 8, sentences: 12, min_len: 2, max_len: 4, seed: 1, ..Default::default() };
        let corpus = generate(&spec).unwrap();
        let run = |mode: Policy| {
            let cfg = TrainConfig { mode, batch_size: 4, max_steps: 3, ..Default::default() };
            let mut losses = Vec::new();
            let m = ScorerModel::<f32>::new(tiny(2), corpus.vocab.clone()).unwrap();
            let m = train(m, &corpus, &cfg, None, |r| losses.push(r.loss)).unwrap();
            (m, losses)
        };
        let (a, la) = run(Policy::Adaptive);
        let (b, lb) = run(Policy::Adaptive);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (w, lw) = run(Policy::WaitK(4));
        let (f, lf) = run(Policy::FullSentence);
        assert_eq!(lw, lf);
        assert_eq!(w, f);
    }
}

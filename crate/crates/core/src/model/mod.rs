//! Encoder-decoder action scorer over the extended vocabulary.
//!
//! The encoder runs bidirectional self-attention over the source prefix read
//! so far and is re-run from scratch after every read. The decoder sees the
//! emitted target words; earlier delay tokens are dropped from its attention
//! and do not take positional slots, while a delay issued by the most recent
//! action stays visible as the current input. The number of reads so far
//! enters through a learned count embedding added to every decoder input.
//!
//! With the default flags the score vector is therefore a function of the
//! emitted words, the clamped read count and whether the last action was a
//! read; histories that agree on those three score identically.

mod checkpoint;
pub mod ops;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, AnyModel, CheckpointError};
use ops::{Attention, AttentionCache, FeedForward, FeedForwardCache, Init, Layout, Mat, Norm, NormCache, Tensor};
pub use ops::Real;

use crate::rng::substream;
use crate::transition::{Action, ActionSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// Independent sigmoid per action.
    #[default]
    Sigmoid,
    /// One softmax over every action.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    /// Read counts above this share the last count-embedding row.
    pub max_delay_count: usize,
    /// Size of the positional tables for both encoder and decoder.
    pub max_positions: usize,
    /// Ablation: let every earlier delay token take part in decoder attention.
    pub keep_delay_in_attention: bool,
    /// Ablation switch for the read-count embedding.
    pub use_count_embedding: bool,
    pub scoring: Scoring,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_width: 256,
            max_delay_count: 64,
            max_positions: 128,
            keep_delay_in_attention: false,
            use_count_embedding: true,
            scoring: Scoring::Sigmoid,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.d_model == 0 {
            v.push("model.d_model must be positive".to_string());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads.max(1)) {
            v.push(format!("model.d_model ({}) must be divisible by model.n_heads ({})", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 {
            v.push("model.n_layers must be positive".to_string());
        }
        if self.ffn_width == 0 {
            v.push("model.ffn_width must be positive".to_string());
        }
        if self.max_delay_count == 0 {
            v.push("model.max_delay_count must be >= 1".to_string());
        }
        if self.max_positions < 2 {
            v.push("model.max_positions must be >= 2".to_string());
        }
        v
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("cannot encode an empty source prefix")]
    EmptyPrefix,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss on example {example}")]
    NonFiniteLoss { example: usize },
    #[error("example {example}: {msg}")]
    InvalidExample { example: usize, msg: String },
    #[error("position {position} exceeds the positional table ({max})")]
    PositionOverflow { position: usize, max: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(usize),
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct Network {
    enc_tok: Tensor,
    enc_pos: Tensor,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    dec_tok: Tensor,
    dec_pos: Tensor,
    dec_count: Tensor,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out: ops::Linear,
}

fn attention(layout: &mut Layout, name: &str, d: usize, heads: usize) -> Attention {
    Attention {
        q: layout.linear(&format!("{name}.q"), d, d),
        k: layout.linear(&format!("{name}.k"), d, d),
        v: layout.linear(&format!("{name}.v"), d, d),
        o: layout.linear(&format!("{name}.o"), d, d),
        heads,
    }
}

fn feed_forward(layout: &mut Layout, name: &str, d: usize, width: usize) -> FeedForward {
    FeedForward { up: layout.linear(&format!("{name}.up"), d, width), down: layout.linear(&format!("{name}.down"), width, d) }
}

impl Network {
    fn build(cfg: &ModelConfig, vocab_len: usize) -> (Network, Layout) {
        let d = cfg.d_model;
        let mut l = Layout::default();
        let enc_tok = l.add("enc.tok", vocab_len, d, Init::Embedding);
        let enc_pos = l.add("enc.pos", cfg.max_positions, d, Init::Embedding);
        let encoder = (0..cfg.n_layers)
            .map(|i| EncoderLayer {
                norm1: l.norm(&format!("enc.{i}.norm1"), d),
                attn: attention(&mut l, &format!("enc.{i}.attn"), d, cfg.n_heads),
                norm2: l.norm(&format!("enc.{i}.norm2"), d),
                ffn: feed_forward(&mut l, &format!("enc.{i}.ffn"), d, cfg.ffn_width),
            })
            .collect();
        let enc_norm = l.norm("enc.norm", d);
        // One extra row for the start-of-decoding input.
        let dec_tok = l.add("dec.tok", vocab_len + 1, d, Init::Embedding);
        let dec_pos = l.add("dec.pos", cfg.max_positions, d, Init::Embedding);
        let dec_count = l.add("dec.count", cfg.max_delay_count + 1, d, Init::Embedding);
        let decoder = (0..cfg.n_layers)
            .map(|i| DecoderLayer {
                norm1: l.norm(&format!("dec.{i}.norm1"), d),
                self_attn: attention(&mut l, &format!("dec.{i}.self"), d, cfg.n_heads),
                norm2: l.norm(&format!("dec.{i}.norm2"), d),
                cross_attn: attention(&mut l, &format!("dec.{i}.cross"), d, cfg.n_heads),
                norm3: l.norm(&format!("dec.{i}.norm3"), d),
                ffn: feed_forward(&mut l, &format!("dec.{i}.ffn"), d, cfg.ffn_width),
            })
            .collect();
        let dec_norm = l.norm("dec.norm", d);
        let out = l.linear("out", d, vocab_len);
        let net = Network { enc_tok, enc_pos, encoder, enc_norm, dec_tok, dec_pos, dec_count, decoder, dec_norm, out };
        (net, l)
    }
}

/// Encoder output: one vector per source position read so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMemory<T> {
    pub states: Mat<T>,
}

impl<T: Real> EncoderMemory<T> {
    /// Memory of the state before any read; cross-attention contributes only its bias.
    pub fn empty(d_model: usize) -> Self {
        EncoderMemory { states: Mat::zeros(0, d_model) }
    }

    pub fn len(&self) -> usize {
        self.states.rows
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows == 0
    }
}

/// Scores for every action of the extended vocabulary, indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub mode: Scoring,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl ScoreVector {
    pub fn from_logits(mode: Scoring, logits: Vec<f64>) -> Self {
        let scores = match mode {
            Scoring::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
            Scoring::Softmax => softmax(&logits),
        };
        ScoreVector { mode, logits, scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// A monotone transform of the score of `id` that stays finite when the
    /// score saturates. Adding `ln(c)` multiplies the score by `c`.
    pub fn log_score(&self, id: usize) -> f64 {
        match self.mode {
            Scoring::Sigmoid => -softplus(-self.logits[id]),
            // Normalization is shared by every entry, so the logit orders
            // exactly like the log-probability.
            Scoring::Softmax => self.logits[id],
        }
    }
}

/// Decoder input rows for one encoder memory, plus per-row attention lists.
#[derive(Debug, Clone, PartialEq, Eq)]
struct DecoderPlan {
    tokens: Vec<usize>,
    positions: Vec<usize>,
    visible: Vec<Vec<usize>>,
    count: usize,
}

impl DecoderPlan {
    fn push(&mut self, token: usize, position: usize, visible: Vec<usize>) -> usize {
        self.tokens.push(token);
        self.positions.push(position);
        self.visible.push(visible);
        self.tokens.len() - 1
    }
}

/// One training path with its per-step label sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedPath {
    pub actions: ActionSequence,
    /// `labels[i]`: actions rewarded in the state reached by `actions[..i]`.
    pub labels: Vec<Vec<Action>>,
    pub weight: f64,
}

/// All supervised paths of one sentence pair; they share encoder runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedPair {
    pub source: Vec<usize>,
    /// Gold target, eos included. Words of every path must follow it.
    pub target: Vec<usize>,
    pub paths: Vec<SupervisedPath>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Adds `-ln(1 - p)` for the delay token (when not a label) and for the
    /// best-scoring non-label word other than the gold next word.
    pub negative_term: bool,
}

/// Floor inside `ln` for the averaged oracle probability.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    /// Weighted sum over pairs, paths and steps.
    pub loss: f64,
    pub grads: Option<Vec<T>>,
    /// Steps whose averaged probability fell below [`LOG_FLOOR`].
    pub floor_hits: usize,
    pub steps: usize,
}

/// Per-step loss value and its gradient with respect to the logits.
pub struct StepLoss {
    pub loss: f64,
    pub dlogits: Vec<f64>,
    pub floored: bool,
}

/// `-ln mean_{a in labels} p(a)`, optionally with the negative term.
pub fn step_loss(
    mode: Scoring,
    logits: &[f64],
    labels: &[usize],
    negatives: &[usize],
    want_grad: bool,
) -> StepLoss {
    let n = logits.len();
    let mut dlogits = vec![0.0; if want_grad { n } else { 0 }];
    let k = labels.len() as f64;
    let mut loss;
    let mut floored = false;
    match mode {
        Scoring::Sigmoid => {
            let f: f64 = labels.iter().map(|&a| sigmoid(logits[a])).sum::<f64>() / k;
            if f < LOG_FLOOR {
                loss = -LOG_FLOOR.ln();
                floored = true;
            } else {
                loss = -f.ln();
                if want_grad {
                    for &a in labels {
                        let s = sigmoid(logits[a]);
                        dlogits[a] -= s * (1.0 - s) / (f * k);
                    }
                }
            }
            for &b in negatives {
                loss += softplus(logits[b]);
                if want_grad {
                    dlogits[b] += sigmoid(logits[b]);
                }
            }
        }
        Scoring::Softmax => {
            let p = softmax(logits);
            let mass: f64 = labels.iter().map(|&a| p[a]).sum();
            let f = mass / k;
            if f < LOG_FLOOR {
                loss = -LOG_FLOOR.ln();
                floored = true;
            } else {
                loss = -f.ln();
                if want_grad {
                    for j in 0..n {
                        dlogits[j] += p[j];
                    }
                    for &a in labels {
                        dlogits[a] -= p[a] / mass;
                    }
                }
            }
            for &b in negatives {
                let rest = (1.0 - p[b]).max(LOG_FLOOR);
                loss -= rest.ln();
                if want_grad {
                    for j in 0..n {
                        let dp = p[b] * (f64::from(u8::from(j == b)) - p[j]);
                        dlogits[j] += dp / rest;
                    }
                }
            }
        }
    }
    StepLoss { loss, dlogits, floored }
}

struct EncoderLayerCache<T> {
    norm1: NormCache<T>,
    attn: AttentionCache<T>,
    norm2: NormCache<T>,
    ffn: FeedForwardCache<T>,
}

struct EncoderCache<T> {
    ids: Vec<usize>,
    layers: Vec<EncoderLayerCache<T>>,
    visible: Vec<Vec<usize>>,
    norm: NormCache<T>,
}

struct DecoderLayerCache<T> {
    norm1: NormCache<T>,
    self_attn: AttentionCache<T>,
    norm2: NormCache<T>,
    cross_attn: AttentionCache<T>,
    norm3: NormCache<T>,
    ffn: FeedForwardCache<T>,
}

struct DecoderCache<T> {
    layers: Vec<DecoderLayerCache<T>>,
    cross_visible: Vec<Vec<usize>>,
    norm: NormCache<T>,
}

/// Action scorer with its parameters in one flat buffer.
#[derive(Debug, Clone)]
pub struct ScorerModel<T> {
    config: ModelConfig,
    vocab: Vocab,
    layout: Layout,
    net: Network,
    params: Vec<T>,
}

impl<T: Real> PartialEq for ScorerModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

impl<T: Real> ScorerModel<T> {
    /// Fan-in scaled uniform initialization from the config seed.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config, vocab)?;
        let mut rng = substream(model.config.seed, "init");
        for e in &model.layout.entries {
            let bound = match e.init {
                Init::FanIn => 1.0 / (e.tensor.rows as f64).sqrt(),
                Init::Embedding => 1.0 / (e.tensor.cols as f64).sqrt(),
                Init::Zeros | Init::Ones => 0.0,
            };
            for v in e.tensor.slice_mut(&mut model.params) {
                *v = match e.init {
                    Init::Ones => T::one(),
                    Init::Zeros => T::zero(),
                    _ => T::of(rng.gen_range(-bound..bound)),
                };
            }
        }
        Ok(model)
    }

    /// Every parameter set to zero (layer-norm gains included).
    pub fn zeros(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(ModelError::Config(v.join("; ")));
        }
        let (net, layout) = Network::build(&config, vocab.len());
        let params = vec![T::zero(); layout.total];
        Ok(ScorerModel { config, vocab, layout, net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> ScorerModel<U> {
        ScorerModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            layout: self.layout.clone(),
            net: self.net.clone(),
            params: self.params.iter().map(|&p| U::of(p.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_position(&self, position: usize) -> Result<(), ModelError> {
        if position >= self.config.max_positions {
            Err(ModelError::PositionOverflow { position, max: self.config.max_positions })
        } else {
            Ok(())
        }
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<(), ModelError> {
        match ids.iter().find(|&&i| i >= self.vocab.len()) {
            Some(&i) => Err(ModelError::UnknownToken(i)),
            None => Ok(()),
        }
    }

    fn encode_cached(&self, source: &[usize]) -> Result<(EncoderMemory<T>, EncoderCache<T>), ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptyPrefix);
        }
        self.check_tokens(source)?;
        self.check_position(source.len() - 1)?;
        let p = &self.params;
        let net = &self.net;
        let n = source.len();
        let d = self.config.d_model;
        let mut x = Mat::zeros(n, d);
        for (i, &id) in source.iter().enumerate() {
            let row = x.row_mut(i);
            row.copy_from_slice(net.enc_tok.row(p, id));
            ops::axpy(T::one(), net.enc_pos.row(p, i), row);
        }
        let visible: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
        let mut layers = Vec::with_capacity(net.encoder.len());
        for layer in &net.encoder {
            let (a, norm1) = layer.norm1.forward(p, &x);
            let (att, attn) = layer.attn.forward(p, &a, &a, &visible);
            x.add_assign(&att);
            let (b, norm2) = layer.norm2.forward(p, &x);
            let (f, ffn) = layer.ffn.forward(p, &b);
            x.add_assign(&f);
            layers.push(EncoderLayerCache { norm1, attn, norm2, ffn });
        }
        let (out, norm) = net.enc_norm.forward(p, &x);
        Ok((EncoderMemory { states: out }, EncoderCache { ids: source.to_vec(), layers, visible, norm }))
    }

    /// Encodes a non-empty source prefix from scratch.
    pub fn encode(&self, source_prefix: &[usize]) -> Result<EncoderMemory<T>, ModelError> {
        self.encode_cached(source_prefix).map(|(m, _)| m)
    }

    fn encoder_backward(&self, g: &mut [T], cache: &EncoderCache<T>, dmem: &Mat<T>) {
        let p = &self.params;
        let net = &self.net;
        let mut dx = net.enc_norm.backward(p, g, &cache.norm, dmem);
        for (layer, c) in net.encoder.iter().zip(&cache.layers).rev() {
            let db = layer.ffn.backward(p, g, &c.ffn, &dx);
            dx.add_assign(&layer.norm2.backward(p, g, &c.norm2, &db));
            let (dq, dkv) = layer.attn.backward(p, g, &c.attn, &cache.visible, &dx);
            dx.add_assign(&layer.norm1.backward(p, g, &c.norm1, &dq.added(&dkv)));
        }
        for (i, &id) in cache.ids.iter().enumerate() {
            ops::axpy(T::one(), dx.row(i), net.enc_tok.row_mut(g, id));
            ops::axpy(T::one(), dx.row(i), net.enc_pos.row_mut(g, i));
        }
    }

    fn bos(&self) -> usize {
        self.vocab.len()
    }

    fn count_row(&self, delays: usize) -> usize {
        delays.min(self.config.max_delay_count)
    }

    fn decoder_forward(
        &self,
        plan: &DecoderPlan,
        memory: &EncoderMemory<T>,
    ) -> Result<(Mat<T>, DecoderCache<T>), ModelError> {
        let p = &self.params;
        let net = &self.net;
        let d = self.config.d_model;
        let rows = plan.tokens.len();
        let mut x = Mat::zeros(rows, d);
        for r in 0..rows {
            self.check_position(plan.positions[r])?;
            let row = x.row_mut(r);
            row.copy_from_slice(net.dec_tok.row(p, plan.tokens[r]));
            ops::axpy(T::one(), net.dec_pos.row(p, plan.positions[r]), row);
            if self.config.use_count_embedding {
                ops::axpy(T::one(), net.dec_count.row(p, plan.count), row);
            }
        }
        let cross_visible: Vec<Vec<usize>> = (0..rows).map(|_| (0..memory.len()).collect()).collect();
        let mut layers = Vec::with_capacity(net.decoder.len());
        for layer in &net.decoder {
            let (a, norm1) = layer.norm1.forward(p, &x);
            let (att, self_attn) = layer.self_attn.forward(p, &a, &a, &plan.visible);
            x.add_assign(&att);
            let (b, norm2) = layer.norm2.forward(p, &x);
            let (cross, cross_attn) = layer.cross_attn.forward(p, &b, &memory.states, &cross_visible);
            x.add_assign(&cross);
            let (c, norm3) = layer.norm3.forward(p, &x);
            let (f, ffn) = layer.ffn.forward(p, &c);
            x.add_assign(&f);
            layers.push(DecoderLayerCache { norm1, self_attn, norm2, cross_attn, norm3, ffn });
        }
        let (out, norm) = net.dec_norm.forward(p, &x);
        Ok((out, DecoderCache { layers, cross_visible, norm }))
    }

    /// Backpropagates `dout` (one row per plan row); returns the memory gradient.
    fn decoder_backward(&self, g: &mut [T], plan: &DecoderPlan, cache: &DecoderCache<T>, dout: &Mat<T>, mem_rows: usize) -> Mat<T> {
        let p = &self.params;
        let net = &self.net;
        let d = self.config.d_model;
        let mut dmem = Mat::zeros(mem_rows, d);
        let mut dx = net.dec_norm.backward(p, g, &cache.norm, dout);
        for (layer, c) in net.decoder.iter().zip(&cache.layers).rev() {
            let dc = layer.ffn.backward(p, g, &c.ffn, &dx);
            dx.add_assign(&layer.norm3.backward(p, g, &c.norm3, &dc));
            let (dq, dkv) = layer.cross_attn.backward(p, g, &c.cross_attn, &cache.cross_visible, &dx);
            dmem.add_assign(&dkv);
            dx.add_assign(&layer.norm2.backward(p, g, &c.norm2, &dq));
            let (dq, dkv) = layer.self_attn.backward(p, g, &c.self_attn, &plan.visible, &dx);
            dx.add_assign(&layer.norm1.backward(p, g, &c.norm1, &dq.added(&dkv)));
        }
        for r in 0..plan.tokens.len() {
            ops::axpy(T::one(), dx.row(r), net.dec_tok.row_mut(g, plan.tokens[r]));
            ops::axpy(T::one(), dx.row(r), net.dec_pos.row_mut(g, plan.positions[r]));
            if self.config.use_count_embedding {
                ops::axpy(T::one(), dx.row(r), net.dec_count.row_mut(g, plan.count));
            }
        }
        dmem
    }

    fn logits(&self, hidden: &Mat<T>, rows: &[usize]) -> (Mat<T>, Mat<T>) {
        let d = self.config.d_model;
        let mut gathered = Mat::zeros(rows.len(), d);
        for (q, &r) in rows.iter().enumerate() {
            gathered.row_mut(q).copy_from_slice(hidden.row(r));
        }
        let logits = self.net.out.forward(&self.params, &gathered);
        (gathered, logits)
    }

    /// Plan holding the whole `history` with the final row as query.
    fn history_plan(&self, history: &ActionSequence) -> (DecoderPlan, usize) {
        let count = self.count_row(history.delays());
        let mut plan = DecoderPlan { tokens: vec![], positions: vec![], visible: vec![], count };
        plan.push(self.bos(), 0, vec![0]);
        if self.config.keep_delay_in_attention {
            for (i, &a) in history.iter().enumerate() {
                let r = i + 1;
                plan.push(self.vocab.action_id(a), r, (0..=r).collect());
            }
        } else {
            for w in history.words() {
                let r = plan.tokens.len();
                plan.push(w, r, (0..=r).collect());
            }
            if history.0.last() == Some(&Action::Delay) {
                let words = plan.tokens.len();
                let r = words;
                let mut vis: Vec<usize> = (0..words).collect();
                vis.push(r);
                plan.push(self.vocab.delay_id(), words, vis);
            }
        }
        let last = plan.tokens.len() - 1;
        (plan, last)
    }

    /// Scores every next action after `history` given the current memory.
    pub fn score_actions(&self, memory: &EncoderMemory<T>, history: &ActionSequence) -> Result<ScoreVector, ModelError> {
        let (plan, query) = self.history_plan(history);
        let (hidden, _) = self.decoder_forward(&plan, memory)?;
        let (_, logits) = self.logits(&hidden, &[query]);
        Ok(ScoreVector::from_logits(self.config.scoring, logits.row(0).iter().map(|v| v.f64()).collect()))
    }

    /// Weighted loss over `pairs` without gradients.
    pub fn loss(&self, pairs: &[SupervisedPair], opts: LossOptions) -> Result<LossReport<T>, ModelError> {
        self.evaluate(pairs, opts, false)
    }

    /// Weighted loss over `pairs` (summed) and its exact parameter gradient.
    pub fn loss_and_gradients(&self, pairs: &[SupervisedPair], opts: LossOptions) -> Result<LossReport<T>, ModelError> {
        self.evaluate(pairs, opts, true)
    }

    fn evaluate(&self, pairs: &[SupervisedPair], opts: LossOptions, want_grad: bool) -> Result<LossReport<T>, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut grads = want_grad.then(|| vec![T::zero(); self.params.len()]);
        let mut report = LossReport { loss: 0.0, grads: None, floor_hits: 0, steps: 0 };
        for (example, pair) in pairs.iter().enumerate() {
            let before = report.loss;
            self.pair_loss(example, pair, opts, grads.as_deref_mut(), &mut report)?;
            if !(report.loss - before).is_finite() {
                return Err(ModelError::NonFiniteLoss { example });
            }
        }
        report.grads = grads;
        Ok(report)
    }

    fn pair_loss(
        &self,
        example: usize,
        pair: &SupervisedPair,
        opts: LossOptions,
        mut grads: Option<&mut [T]>,
        report: &mut LossReport<T>,
    ) -> Result<(), ModelError> {
        let invalid = |msg: String| ModelError::InvalidExample { example, msg };
        self.check_tokens(&pair.source)?;
        self.check_tokens(&pair.target)?;

        // (path, step, src_len, tgt_len, last action was a read)
        let mut queries: BTreeMap<usize, Vec<(usize, usize, usize, bool)>> = BTreeMap::new();
        for (pi, path) in pair.paths.iter().enumerate() {
            if path.labels.len() != path.actions.len() {
                return Err(invalid(format!("path {pi}: {} label sets for {} actions", path.labels.len(), path.actions.len())));
            }
            let (mut s, mut t, mut last_delay) = (0usize, 0usize, false);
            for (i, &a) in path.actions.iter().enumerate() {
                if path.labels[i].is_empty() {
                    return Err(invalid(format!("path {pi}: empty label set at step {i}")));
                }
                queries.entry(s).or_default().push((pi, i, t, last_delay));
                match a {
                    Action::Delay => {
                        s += 1;
                        if s > pair.source.len() {
                            return Err(invalid(format!("path {pi}: reads past the source at step {i}")));
                        }
                        last_delay = true;
                    }
                    Action::Word(w) => {
                        if pair.target.get(t) != Some(&w) {
                            return Err(invalid(format!("path {pi}: word at step {i} does not follow the target")));
                        }
                        t += 1;
                        last_delay = false;
                    }
                }
            }
        }

        for (&k, qs) in &queries {
            let (memory, enc_cache) = if k == 0 {
                (EncoderMemory::empty(self.config.d_model), None)
            } else {
                let (m, c) = self.encode_cached(&pair.source[..k])?;
                (m, Some(c))
            };
            let mut dmem = Mat::zeros(memory.len(), self.config.d_model);
            for (plan, rows, members) in self.plans_for(pair, k, qs) {
                let (hidden, cache) = self.decoder_forward(&plan, &memory)?;
                let (gathered, logits) = self.logits(&hidden, &rows);
                let mut dlogits = Mat::zeros(logits.rows, logits.cols);
                for (qi, &(pi, step, t, _)) in members.iter().enumerate() {
                    let path = &pair.paths[pi];
                    let z: Vec<f64> = logits.row(qi).iter().map(|v| v.f64()).collect();
                    let labels: Vec<usize> = path.labels[step].iter().map(|&a| self.vocab.action_id(a)).collect();
                    let negatives = if opts.negative_term { self.negatives(&z, &labels, pair.target.get(t).copied()) } else { vec![] };
                    let sl = step_loss(self.config.scoring, &z, &labels, &negatives, grads.is_some());
                    report.loss += path.weight * sl.loss;
                    report.steps += 1;
                    report.floor_hits += usize::from(sl.floored);
                    if grads.is_some() {
                        for (dst, &v) in dlogits.row_mut(qi).iter_mut().zip(&sl.dlogits) {
                            *dst = T::of(path.weight * v);
                        }
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    let dgathered = self.net.out.backward(&self.params, g, &gathered, &dlogits);
                    let mut dhidden = Mat::zeros(hidden.rows, hidden.cols);
                    for (qi, &r) in rows.iter().enumerate() {
                        ops::axpy(T::one(), dgathered.row(qi), dhidden.row_mut(r));
                    }
                    dmem.add_assign(&self.decoder_backward(g, &plan, &cache, &dhidden, memory.len()));
                }
            }
            if let (Some(g), Some(c)) = (grads.as_deref_mut(), enc_cache.as_ref()) {
                self.encoder_backward(g, c, &dmem);
            }
        }
        Ok(())
    }

    /// Delay (unless labelled) and the strongest word that is neither labelled
    /// nor the gold next word.
    fn negatives(&self, logits: &[f64], labels: &[usize], gold_next: Option<usize>) -> Vec<usize> {
        let delay = self.vocab.delay_id();
        let mut out = Vec::new();
        if !labels.contains(&delay) {
            out.push(delay);
        }
        let competitor = self
            .vocab
            .word_ids()
            .filter(|w| !labels.contains(w) && Some(*w) != gold_next)
            .fold(None, |best: Option<usize>, w| match best {
                Some(b) if logits[b] >= logits[w] => Some(b),
                _ => Some(w),
            });
        out.extend(competitor);
        out
    }

    /// Decoder plans covering every query made with `k` source words read.
    /// Each entry carries the query rows and the matching query records.
    #[allow(clippy::type_complexity)]
    fn plans_for(
        &self,
        pair: &SupervisedPair,
        k: usize,
        qs: &[(usize, usize, usize, bool)],
    ) -> Vec<(DecoderPlan, Vec<usize>, Vec<(usize, usize, usize, bool)>)> {
        let count = self.count_row(k);
        let new_plan = || DecoderPlan { tokens: vec![], positions: vec![], visible: vec![], count };
        if self.config.keep_delay_in_attention {
            let mut by_path: BTreeMap<usize, Vec<(usize, usize, usize, bool)>> = BTreeMap::new();
            for &q in qs {
                by_path.entry(q.0).or_default().push(q);
            }
            by_path
                .into_iter()
                .map(|(pi, members)| {
                    let actions = &pair.paths[pi].actions;
                    let n = members.iter().map(|q| q.1).max().unwrap();
                    let mut plan = new_plan();
                    plan.push(self.bos(), 0, vec![0]);
                    for r in 1..=n {
                        plan.push(self.vocab.action_id(actions.0[r - 1]), r, (0..=r).collect());
                    }
                    let rows = members.iter().map(|q| q.1).collect();
                    (plan, rows, members)
                })
                .collect()
        } else {
            let words = qs.iter().map(|q| q.2).max().unwrap();
            let mut plan = new_plan();
            plan.push(self.bos(), 0, vec![0]);
            for r in 1..=words {
                plan.push(pair.target[r - 1], r, (0..=r).collect());
            }
            let mut delay_rows: BTreeMap<usize, usize> = BTreeMap::new();
            for q in qs.iter().filter(|q| q.3) {
                let m = q.2;
                if let std::collections::btree_map::Entry::Vacant(e) = delay_rows.entry(m) {
                    let r = plan.tokens.len();
                    let mut vis: Vec<usize> = (0..=m).collect();
                    vis.push(r);
                    plan.push(self.vocab.delay_id(), m + 1, vis);
                    e.insert(r);
                }
            }
            let rows = qs.iter().map(|q| if q.3 { delay_rows[&q.2] } else { q.2 }).collect();
            vec![(plan, rows, qs.to_vec())]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::with_words((0..6).map(|i| format!("w{i}"))).unwrap()
    }

    fn tiny(keep: bool) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_width: 16,
            max_positions: 32,
            max_delay_count: 8,
            keep_delay_in_attention: keep,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn config_violations_are_collected() {
        let c = ModelConfig { d_model: 10, n_heads: 3, max_delay_count: 0, ..Default::default() };
        assert_eq!(c.violations().len(), 2);
        assert!(ScorerModel::<f32>::new(c, vocab()).is_err());
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = ScorerModel::<f64>::zeros(tiny(false), vocab()).unwrap();
        let mem = m.encode(&[2, 3]).unwrap();
        let s = m.score_actions(&mem, &ActionSequence(vec![Action::Delay, Action::Delay])).unwrap();
        assert_eq!(s.len(), vocab().len());
        assert!(s.scores.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn encoding_shape_determinism_and_reencoding() {
        let m = ScorerModel::<f64>::new(tiny(false), vocab()).unwrap();
        assert_eq!(m.encode(&[]), Err(ModelError::EmptyPrefix));
        let a = m.encode(&[2, 3]).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, m.encode(&[2, 3]).unwrap());
        let b = m.encode(&[2, 3, 4]).unwrap();
        assert_ne!(a.states.row(0), b.states.row(0));
    }

    #[test]
    fn softmax_scores_sum_to_one() {
        let cfg = ModelConfig { scoring: Scoring::Softmax, ..tiny(false) };
        let m = ScorerModel::<f64>::new(cfg, vocab()).unwrap();
        let mem = m.encode(&[2]).unwrap();
        let s = m.score_actions(&mem, &ActionSequence(vec![Action::Delay])).unwrap();
        assert!((s.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn earlier_delays_do_not_change_scores() {
        let m = ScorerModel::<f64>::new(tiny(false), vocab()).unwrap();
        let mem = m.encode(&[2, 3, 4]).unwrap();
        let d = Action::Delay;
        let w = Action::Word(5);
        let a = m.score_actions(&mem, &ActionSequence(vec![d, d, w, d])).unwrap();
        let b = m.score_actions(&mem, &ActionSequence(vec![d, w, d, d])).unwrap();
        assert_eq!(a, b);
        let keep = ScorerModel::<f64>::new(tiny(true), vocab()).unwrap();
        let a = keep.score_actions(&mem, &ActionSequence(vec![d, d, w, d])).unwrap();
        let b = keep.score_actions(&mem, &ActionSequence(vec![d, w, d, d])).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_model_step_loss_is_ln_two() {
        let m = ScorerModel::<f64>::zeros(tiny(false), vocab()).unwrap();
        let pair = SupervisedPair {
            source: vec![2],
            target: vec![2, 1],
            paths: vec![SupervisedPath {
                actions: ActionSequence(vec![Action::Delay, Action::Word(2), Action::Word(1)]),
                labels: vec![vec![Action::Delay], vec![Action::Word(2)], vec![Action::Delay, Action::Word(1)]],
                weight: 1.0,
            }],
        };
        let r = m.loss(&[pair], LossOptions::default()).unwrap();
        assert!((r.loss - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.steps, 3);
    }

    #[test]
    fn batched_loss_matches_per_history_scoring() {
        // The shared-plan loss must equal the sum over steps of scoring each
        // history on its own.
        for keep in [false, true] {
            let m = ScorerModel::<f64>::new(tiny(keep), vocab()).unwrap();
            let d = Action::Delay;
            let source = vec![2, 3, 4];
            let target = vec![5, 6, 1];
            let actions = ActionSequence(vec![d, d, Action::Word(5), d, Action::Word(6), Action::Word(1)]);
            let labels: Vec<Vec<Action>> = actions.iter().map(|&a| vec![a]).collect();
            let pair = SupervisedPair {
                source: source.clone(),
                target,
                paths: vec![SupervisedPath { actions: actions.clone(), labels: labels.clone(), weight: 1.0 }],
            };
            let batched = m.loss(&[pair], LossOptions::default()).unwrap().loss;
            let mut direct = 0.0;
            for i in 0..actions.len() {
                let hist = ActionSequence(actions.0[..i].to_vec());
                let k = hist.delays();
                let mem = if k == 0 { EncoderMemory::empty(8) } else { m.encode(&source[..k]).unwrap() };
                let s = m.score_actions(&mem, &hist).unwrap();
                direct -= s.scores[m.vocab().action_id(actions.0[i])].ln();
            }
            assert!((batched - direct).abs() < 1e-10, "keep={keep}: {batched} vs {direct}");
        }
    }

    #[test]
    fn invalid_examples_are_rejected() {
        let m = ScorerModel::<f64>::new(tiny(false), vocab()).unwrap();
        let pair = SupervisedPair {
            source: vec![2],
            target: vec![3, 1],
            paths: vec![SupervisedPath {
                actions: ActionSequence(vec![Action::Delay, Action::Word(4)]),
                labels: vec![vec![Action::Delay], vec![Action::Word(4)]],
                weight: 1.0,
            }],
        };
        assert!(matches!(m.loss(&[pair], LossOptions::default()), Err(ModelError::InvalidExample { .. })));
        assert_eq!(m.loss(&[], LossOptions::default()), Err(ModelError::EmptyBatch));
    }

    #[test]
    fn step_loss_gradients_match_differences() {
        let z = [0.3, -1.2, 2.0, 0.1, -0.4];
        for mode in [Scoring::Sigmoid, Scoring::Softmax] {
            for (labels, negs) in [(vec![1usize], vec![]), (vec![0, 2], vec![3]), (vec![4], vec![0, 1])] {
                let sl = step_loss(mode, &z, &labels, &negs, true);
                for j in 0..z.len() {
                    let h = 1e-6;
                    let mut zp = z;
                    zp[j] += h;
                    let mut zm = z;
                    zm[j] -= h;
                    let fd = (step_loss(mode, &zp, &labels, &negs, false).loss
                        - step_loss(mode, &zm, &labels, &negs, false).loss)
                        / (2.0 * h);
                    assert!((fd - sl.dlogits[j]).abs() < 1e-7, "{mode:?} {labels:?} {j}: {fd} vs {}", sl.dlogits[j]);
                }
            }
        }
    }

    #[test]
    fn step_loss_floor() {
        let sl = step_loss(Scoring::Sigmoid, &[-60.0, 0.0], &[0], &[], true);
        assert!(sl.floored);
        assert_eq!(sl.loss, -LOG_FLOOR.ln());
        assert!(sl.dlogits.iter().all(|&d| d == 0.0));
    }
}

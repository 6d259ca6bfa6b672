//! Greedy decoders: adaptive with a delay temperature, wait-k and full sentence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SentencePair;
use crate::metrics::{corpus_bleu, latency, MetricError, SweepRow};
use crate::model::{EncoderMemory, ModelError, Real, ScoreVector, ScorerModel};
use crate::oracle::{Gamma, OracleConfig, Policy};
use crate::transition::{Action, ActionSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub oracle: OracleConfig,
    /// Exponent of the multiplier `e^t` applied to the delay score.
    pub temperature: f64,
    /// Cap on emitted tokens, eos included.
    pub max_len: usize,
    pub mode: Policy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            oracle: OracleConfig { alpha: 1, beta: 5, gamma: Gamma::ONE },
            temperature: 0.0,
            max_len: 64,
            mode: Policy::Adaptive,
        }
    }
}

impl DecodeConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.oracle.validate() {
            v.push(format!("decode.oracle: {e}"));
        }
        if self.max_len == 0 {
            v.push("decode.max_len must be >= 1".to_string());
        }
        if !self.temperature.is_finite() {
            v.push("decode.temperature must be finite".to_string());
        }
        v
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("empty source sentence")]
    EmptySource,
    #[error("wait-k needs k >= 1")]
    ZeroK,
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeTrace {
    pub actions: ActionSequence,
    /// Source words read when each non-eos word was written.
    pub g: Vec<usize>,
    /// Emitted words without eos.
    pub words: Vec<usize>,
    pub eos_emitted: bool,
    /// Stopped at the length cap before eos.
    pub truncated: bool,
}

impl DecodeTrace {
    /// `words<TAB>g<TAB>actions`, the line format of the `decode` command.
    pub fn render(&self, vocab: &Vocab) -> String {
        let g: Vec<String> = self.g.iter().map(|v| v.to_string()).collect();
        format!("{}\t{}\t{}", vocab.decode(&self.words), g.join(","), self.actions.render(vocab))
    }
}

/// What the band allows in a decoding state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    MustRead,
    MustWrite,
    Free,
}

pub fn constraint_at(src_len: usize, tgt_len: usize, source_len: usize, band: &OracleConfig) -> Constraint {
    let source_left = src_len < source_len;
    if source_left && (src_len == 0 || band.at_aggressive_bound(src_len, tgt_len)) {
        Constraint::MustRead
    } else if !source_left || band.at_conservative_bound(src_len, tgt_len) {
        Constraint::MustWrite
    } else {
        Constraint::Free
    }
}

/// Highest-scoring non-delay token; ties go to the lowest id.
pub fn best_word(scores: &ScoreVector, vocab: &Vocab) -> usize {
    vocab
        .word_ids()
        .fold(None, |best: Option<usize>, w| match best {
            Some(b) if scores.logits[b] >= scores.logits[w] => Some(b),
            _ => Some(w),
        })
        .expect("vocabulary has eos")
}

/// Read vs. write in an unconstrained state: the delay score times `e^t`
/// against the best word score. The delay id is lowest, so ties read.
pub fn prefers_delay(scores: &ScoreVector, vocab: &Vocab, temperature: f64) -> bool {
    let w = best_word(scores, vocab);
    scores.log_score(vocab.delay_id()) + temperature >= scores.log_score(w)
}

pub fn select_action(scores: &ScoreVector, vocab: &Vocab, constraint: Constraint, temperature: f64) -> Action {
    match constraint {
        Constraint::MustRead => Action::Delay,
        Constraint::MustWrite => Action::Word(best_word(scores, vocab)),
        Constraint::Free if prefers_delay(scores, vocab, temperature) => Action::Delay,
        Constraint::Free => Action::Word(best_word(scores, vocab)),
    }
}

struct Run<'m, T> {
    model: &'m ScorerModel<T>,
    source: &'m [usize],
    memory: EncoderMemory<T>,
    trace: DecodeTrace,
    src_len: usize,
}

impl<'m, T: Real> Run<'m, T> {
    fn new(model: &'m ScorerModel<T>, source: &'m [usize]) -> Result<Self, DecodeError> {
        if source.is_empty() {
            return Err(DecodeError::EmptySource);
        }
        let trace = DecodeTrace { actions: ActionSequence::new(), g: vec![], words: vec![], eos_emitted: false, truncated: false };
        Ok(Run { model, source, memory: EncoderMemory::empty(model.config().d_model), trace, src_len: 0 })
    }

    fn emitted(&self) -> usize {
        self.trace.words.len() + usize::from(self.trace.eos_emitted)
    }

    fn scores(&self) -> Result<ScoreVector, DecodeError> {
        Ok(self.model.score_actions(&self.memory, &self.trace.actions)?)
    }

    fn read(&mut self) -> Result<(), DecodeError> {
        self.src_len += 1;
        self.memory = self.model.encode(&self.source[..self.src_len])?;
        self.trace.actions.push(Action::Delay);
        Ok(())
    }

    /// Returns true once decoding should stop.
    fn write(&mut self, w: usize, max_len: usize) -> bool {
        self.trace.actions.push(Action::Word(w));
        if w == self.model.vocab().eos_id() {
            self.trace.eos_emitted = true;
            return true;
        }
        self.trace.words.push(w);
        self.trace.g.push(self.src_len);
        if self.emitted() >= max_len {
            self.trace.truncated = true;
            return true;
        }
        false
    }

    fn apply(&mut self, a: Action, max_len: usize) -> Result<bool, DecodeError> {
        match a {
            Action::Delay => self.read().map(|_| false),
            Action::Word(w) => Ok(self.write(w, max_len)),
        }
    }
}

/// Greedy adaptive decoding that never leaves the lag band.
pub fn adaptive_decode<T: Real>(model: &ScorerModel<T>, source: &[usize], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    let mut run = Run::new(model, source)?;
    let vocab = model.vocab();
    loop {
        let c = constraint_at(run.src_len, run.emitted(), source.len(), &cfg.oracle);
        let a = if c == Constraint::MustRead {
            Action::Delay
        } else {
            select_action(&run.scores()?, vocab, c, cfg.temperature)
        };
        if run.apply(a, cfg.max_len)? {
            return Ok(run.trace);
        }
    }
}

/// Reads `min(k + j - 1, |x|)` words before writing word `j`; the delay score is ignored.
pub fn waitk_decode<T: Real>(model: &ScorerModel<T>, source: &[usize], k: usize, max_len: usize) -> Result<DecodeTrace, DecodeError> {
    if k == 0 {
        return Err(DecodeError::ZeroK);
    }
    let mut run = Run::new(model, source)?;
    loop {
        let need = (k + run.emitted()).min(source.len());
        while run.src_len < need {
            run.read()?;
        }
        let w = best_word(&run.scores()?, model.vocab());
        if run.write(w, max_len.max(1)) {
            return Ok(run.trace);
        }
    }
}

/// Conventional greedy decoding after reading the whole source.
pub fn full_sentence_decode<T: Real>(model: &ScorerModel<T>, source: &[usize], max_len: usize) -> Result<DecodeTrace, DecodeError> {
    waitk_decode(model, source, source.len().max(1), max_len)
}

/// Dispatches on `cfg.mode`.
pub fn decode<T: Real>(model: &ScorerModel<T>, source: &[usize], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    match cfg.mode {
        Policy::Adaptive => adaptive_decode(model, source, cfg),
        Policy::WaitK(k) => waitk_decode(model, source, k, cfg.max_len),
        Policy::FullSentence => full_sentence_decode(model, source, cfg.max_len),
    }
}

/// Corpus-level results of decoding one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEval {
    pub traces: Vec<DecodeTrace>,
    /// Mean sentence AL, AP and CW (CW over sentences where it is defined).
    pub al: f64,
    pub ap: f64,
    pub cw: f64,
    pub bleu: f64,
    pub token_accuracy: f64,
    pub truncated: usize,
}

impl CorpusEval {
    pub fn row(&self, t: f64) -> SweepRow {
        SweepRow { t, al: self.al, ap: self.ap, cw: self.cw, bleu: self.bleu }
    }
}

/// Decodes every pair and aggregates latency and quality.
pub fn evaluate<T: Real>(model: &ScorerModel<T>, pairs: &[SentencePair], cfg: &DecodeConfig) -> Result<CorpusEval, DecodeError> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(DecodeError::Config(v.join("; ")));
    }
    let traces = pairs.iter().map(|p| decode(model, &p.source, cfg)).collect::<Result<Vec<_>, _>>()?;
    let (mut al, mut ap, mut cw, mut cw_n) = (0.0, 0.0, 0.0, 0usize);
    let mut scored = 0usize;
    for (t, p) in traces.iter().zip(pairs) {
        if t.g.is_empty() {
            // Nothing but eos was written: no latency to report.
            continue;
        }
        let r = latency(&t.g, p.source.len())?;
        al += r.al;
        ap += r.ap;
        if r.cw_defined {
            cw += r.cw;
            cw_n += 1;
        }
        scored += 1;
    }
    let n = scored.max(1) as f64;
    let hyps: Vec<Vec<usize>> = traces.iter().map(|t| t.words.clone()).collect();
    let refs: Vec<Vec<usize>> = pairs.iter().map(|p| p.target_words().to_vec()).collect();
    let bleu = corpus_bleu(&hyps, &refs)?.bleu;
    Ok(CorpusEval {
        al: al / n,
        ap: ap / n,
        cw: if cw_n == 0 { 0.0 } else { cw / cw_n as f64 },
        bleu,
        token_accuracy: crate::metrics::token_accuracy(&hyps, &refs),
        truncated: traces.iter().filter(|t| t.truncated).count(),
        traces,
    })
}

/// One [`SweepRow`] per temperature, sorted by temperature.
pub fn sweep<T: Real>(
    model: &ScorerModel<T>,
    pairs: &[SentencePair],
    temperatures: &[f64],
    cfg: &DecodeConfig,
) -> Result<Vec<SweepRow>, DecodeError> {
    let mut temps = temperatures.to_vec();
    temps.sort_by(f64::total_cmp);
    temps
        .into_iter()
        .map(|t| {
            let c = DecodeConfig { temperature: t, mode: Policy::Adaptive, ..*cfg };
            Ok(evaluate(model, pairs, &c)?.row(t))
        })
        .collect()
}

/// Picks the temperature whose corpus AL is largest without exceeding
/// `max_al`. Ties go to the higher temperature. `None` when no candidate fits.
pub fn temperature_for_latency<T: Real>(
    model: &ScorerModel<T>,
    pairs: &[SentencePair],
    temperatures: &[f64],
    max_al: f64,
    cfg: &DecodeConfig,
) -> Result<Option<SweepRow>, DecodeError> {
    let rows = sweep(model, pairs, temperatures, cfg)?;
    Ok(rows.into_iter().filter(|r| r.al <= max_al).fold(None, |best: Option<SweepRow>, r| match best {
        Some(b) if b.al > r.al => Some(b),
        _ => Some(r),
    }))
}

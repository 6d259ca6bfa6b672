//! Seeded synthetic parallel corpora and their text file format.
//!
//! Three tasks:
//! - `copy`: the target repeats the source.
//! - `reorder`: the last source token (the payload) moves to target position 2,
//!   so writing it correctly needs the complete source.
//! - `ratio`: the target is a monotone resampling of the source to
//!   `round(|x| / gamma)` tokens.
//!
//! Every target carries a trailing `</s>` in memory; files store it implicitly.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::Gamma;
use crate::rng::{derive_seed, indexed_stream};
use crate::transition::{Vocab, VocabError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Token {
        path: String,
        line: usize,
        #[source]
        source: VocabError,
    },
    #[error("{src} has {src_lines} lines but {tgt} has {tgt_lines}")]
    LineMismatch { src: String, src_lines: usize, tgt: String, tgt_lines: usize },
    #[error("{path}:{line}: empty sentence")]
    EmptySentence { path: String, line: usize },
    #[error("bad vocab file {path}: {msg}")]
    Vocab { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Reorder,
    Ratio,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reorder" => Ok(TaskKind::Reorder),
            "ratio" => Ok(TaskKind::Ratio),
            other => Err(format!("unknown task {other:?} (copy, reorder, ratio)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub task: TaskKind,
    /// Used by the `ratio` task only.
    pub gamma_target: f64,
    /// Number of content token types (specials excluded).
    pub vocab_size: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            task: TaskKind::Copy,
            gamma_target: 1.0,
            vocab_size: 20,
            sentences: 2000,
            min_len: 5,
            max_len: 15,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.vocab_size < 8 {
            v.push(format!("corpus.vocab_size must be >= 8 (got {})", self.vocab_size));
        }
        let min_allowed = if self.task == TaskKind::Reorder { 3 } else { 2 };
        if self.min_len < min_allowed {
            v.push(format!("corpus.min_len must be >= {min_allowed} (got {})", self.min_len));
        }
        if self.max_len < self.min_len {
            v.push(format!("corpus.max_len ({}) must be >= min_len ({})", self.max_len, self.min_len));
        }
        if self.task == TaskKind::Ratio && !(self.gamma_target > 0.0 && self.gamma_target.is_finite()) {
            v.push(format!("corpus.gamma_target must be positive (got {})", self.gamma_target));
        }
        v
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(DataError::InvalidSpec(v.join("; ")))
        }
    }

    fn payload_types(&self) -> usize {
        (self.vocab_size / 4).max(2)
    }

    /// Vocabulary shared by source and target for this task.
    pub fn vocab(&self) -> Vocab {
        let words: Vec<String> = match self.task {
            TaskKind::Copy | TaskKind::Ratio => (0..self.vocab_size).map(|i| format!("w{i}")).collect(),
            TaskKind::Reorder => {
                let p = self.payload_types();
                let mut w = vec!["M".to_string()];
                w.extend((0..p).map(|i| format!("p{i}")));
                w.extend((0..self.vocab_size - 1 - p).map(|i| format!("w{i}")));
                w
            }
        };
        Vocab::with_words(words).expect("generated tokens are unique")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: Vec<usize>,
    /// Ends with the eos id.
    pub target: Vec<usize>,
}

impl SentencePair {
    /// Target words without the trailing eos.
    pub fn target_words(&self) -> &[usize] {
        &self.target[..self.target.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub vocab: Vocab,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean `|x| / |y|` with eos excluded, kept exact.
    pub fn measured_gamma(&self) -> Option<Gamma> {
        Gamma::mean_ratio(self.pairs.iter().map(|p| (p.source.len(), p.target.len() - 1)))
    }

    pub fn max_source_len(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).max().unwrap_or(0)
    }

    pub fn max_target_len(&self) -> usize {
        self.pairs.iter().map(|p| p.target.len()).max().unwrap_or(0)
    }
}

/// Pair number `index` of the corpus described by `spec`.
pub fn generate_pair(spec: &CorpusSpec, vocab: &Vocab, index: u64) -> SentencePair {
    let mut rng = indexed_stream(spec.seed, "data", index);
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let eos = vocab.eos_id();
    match spec.task {
        TaskKind::Copy => {
            let source: Vec<usize> = (0..len).map(|_| vocab.id(&format!("w{}", rng.gen_range(0..spec.vocab_size))).unwrap()).collect();
            let mut target = source.clone();
            target.push(eos);
            SentencePair { source, target }
        }
        TaskKind::Ratio => {
            let source: Vec<usize> = (0..len).map(|_| vocab.id(&format!("w{}", rng.gen_range(0..spec.vocab_size))).unwrap()).collect();
            let mut target = resample(&source, spec.gamma_target);
            target.push(eos);
            SentencePair { source, target }
        }
        TaskKind::Reorder => {
            let p = spec.payload_types();
            let prefix_types = spec.vocab_size - 1 - p;
            let prefix: Vec<usize> =
                (0..len - 2).map(|_| vocab.id(&format!("w{}", rng.gen_range(0..prefix_types))).unwrap()).collect();
            let payload = vocab.id(&format!("p{}", rng.gen_range(0..p))).unwrap();
            let mut source = prefix.clone();
            source.push(vocab.id("M").unwrap());
            source.push(payload);
            let mut target = vec![prefix[0], payload];
            target.extend_from_slice(&prefix[1..]);
            target.push(eos);
            SentencePair { source, target }
        }
    }
}

/// Monotone resampling to `round(|x| / gamma)` tokens: target slot `j` copies
/// source token `floor(j * |x| / m)`, which drops tokens when shrinking and
/// repeats them when stretching.
pub fn resample(source: &[usize], gamma: f64) -> Vec<usize> {
    let n = source.len();
    let m = ((n as f64 / gamma).round() as usize).max(1);
    (0..m).map(|j| source[j * n / m]).collect()
}

/// The corpus of `spec.sentences` pairs, indices `0..sentences`.
pub fn generate(spec: &CorpusSpec) -> Result<ParallelCorpus, DataError> {
    spec.validate()?;
    let vocab = spec.vocab();
    let pairs = (0..spec.sentences as u64).map(|i| generate_pair(spec, &vocab, i)).collect();
    Ok(ParallelCorpus { vocab, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Split a sentence index belongs to: 80/10/10 by a seeded hash.
pub fn split_of(seed: u64, index: u64) -> Split {
    match derive_seed(seed, "split", index) % 10 {
        8 => Split::Dev,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Fills each split from the indices hashed into it until its quota is met,
/// so splits never share an index.
pub fn generate_splits(spec: &CorpusSpec, sizes: SplitSizes) -> Result<CorpusSplits, DataError> {
    spec.validate()?;
    let vocab = spec.vocab();
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut index = 0u64;
    while train.len() < sizes.train || dev.len() < sizes.dev || test.len() < sizes.test {
        let (bucket, quota) = match split_of(spec.seed, index) {
            Split::Train => (&mut train, sizes.train),
            Split::Dev => (&mut dev, sizes.dev),
            Split::Test => (&mut test, sizes.test),
        };
        if bucket.len() < quota {
            bucket.push(generate_pair(spec, &vocab, index));
        }
        index += 1;
    }
    let wrap = |pairs| ParallelCorpus { vocab: vocab.clone(), pairs };
    Ok(CorpusSplits { train: wrap(train), dev: wrap(dev), test: wrap(test) })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(vocab).expect("vocab serializes");
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_vocab(path: &Path) -> Result<Vocab, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Vocab { path: path.display().to_string(), msg: e.to_string() })
}

/// Writes `<stem>.src` and `<stem>.tgt` (targets without the eos marker).
pub fn write_parallel(dir: &Path, stem: &str, corpus: &ParallelCorpus) -> Result<(), DataError> {
    let mut src = String::new();
    let mut tgt = String::new();
    for p in &corpus.pairs {
        src.push_str(&corpus.vocab.decode(&p.source));
        src.push('\n');
        tgt.push_str(&corpus.vocab.decode(p.target_words()));
        tgt.push('\n');
    }
    let sp = dir.join(format!("{stem}.src"));
    let tp = dir.join(format!("{stem}.tgt"));
    fs::write(&sp, src).map_err(io_err(&sp))?;
    fs::write(&tp, tgt).map_err(io_err(&tp))?;
    Ok(())
}

pub fn read_lines(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<usize>>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let ids = vocab.encode(line).map_err(|source| DataError::Token {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?;
            if ids.is_empty() {
                return Err(DataError::EmptySentence { path: path.display().to_string(), line: i + 1 });
            }
            Ok(ids)
        })
        .collect()
}

pub fn read_parallel(dir: &Path, stem: &str, vocab: &Vocab) -> Result<ParallelCorpus, DataError> {
    let sp = dir.join(format!("{stem}.src"));
    let tp = dir.join(format!("{stem}.tgt"));
    let src = read_lines(&sp, vocab)?;
    let tgt = read_lines(&tp, vocab)?;
    if src.len() != tgt.len() {
        return Err(DataError::LineMismatch {
            src: sp.display().to_string(),
            src_lines: src.len(),
            tgt: tp.display().to_string(),
            tgt_lines: tgt.len(),
        });
    }
    let pairs = src
        .into_iter()
        .zip(tgt)
        .map(|(source, mut target)| {
            target.push(vocab.eos_id());
            SentencePair { source, target }
        })
        .collect();
    Ok(ParallelCorpus { vocab: vocab.clone(), pairs })
}

//! Command-line harness: corpus generation, training, decoding, evaluation,
//! temperature sweeps and oracle walks.
//!
//! Configuration precedence is flags over `--config` TOML over defaults. Every
//! command writes the fully resolved configuration to
//! `<out>/resolved_config.json`; passing that file back through `--config`
//! reproduces the run.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, generate_splits, CorpusSpec, ParallelCorpus, SplitSizes, TaskKind};
use crate::decoding::{decode, evaluate, sweep, DecodeConfig, DecodeError};
use crate::metrics::{rows_to_csv, SweepRow};
use crate::model::{load_checkpoint, AnyModel, ModelConfig, Precision, Real, ScorerModel, Scoring};
use crate::oracle::{extreme_path, grid_walk, Gamma, OracleConfig, PathSide, Policy};
use crate::training::{train, TrainConfig, TrainError};
use crate::transition::{ActionSequence, Vocab};

/// Sweep grid used when `--temps` is not given.
pub const DEFAULT_TEMPS: [f64; 5] = [-2.0, -0.5, 0.0, 4.5, 9.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSizes {
    pub dev: usize,
    pub test: usize,
}

impl Default for EvalSizes {
    fn default() -> Self {
        EvalSizes { dev: 200, test: 200 }
    }
}

/// Decoding settings; a missing band is taken from the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeSection {
    pub oracle: Option<OracleConfig>,
    pub temperature: f64,
    pub max_len: usize,
    pub mode: Policy,
    pub temps: Vec<f64>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        DecodeSection { oracle: None, temperature: d.temperature, max_len: d.max_len, mode: d.mode, temps: DEFAULT_TEMPS.to_vec() }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Source of all randomness; copied into the corpus, model and trainer seeds.
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusSpec,
    pub eval_sizes: EvalSizes,
    /// Use the measured corpus length ratio instead of `train.oracle.gamma`.
    pub measured_gamma: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            corpus: CorpusSpec::default(),
            eval_sizes: EvalSizes::default(),
            measured_gamma: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeSection::default(),
        }
    }
}

impl RunConfig {
    /// Every violated field across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.corpus.violations();
        v.extend(self.model.violations());
        v.extend(self.train.violations());
        if let Some(o) = &self.decode.oracle {
            if let Err(e) = o.validate() {
                v.push(format!("decode.oracle: {e}"));
            }
        }
        if self.decode.max_len == 0 {
            v.push("decode.max_len must be >= 1".to_string());
        }
        if self.decode.temps.iter().any(|t| !t.is_finite()) {
            v.push("decode.temps must be finite".to_string());
        }
        v
    }

    fn sync_seeds(&mut self) {
        self.corpus.seed = self.seed;
        self.model.seed = self.seed;
        self.train.seed = self.seed;
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(#[from] data::DataError),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Decode(#[from] DecodeError),
    #[error("{0}")]
    Checkpoint(#[from] crate::model::CheckpointError),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Train(_) => "train",
            CliError::Decode(_) => "decode",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io(_) => "io",
            CliError::Input(_) => "input",
            CliError::Usage(_) => "usage",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "simtrans", version, about = "Simultaneous translation with a delay token")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/dev/test corpora and vocab.json.
    Gen(CorpusArgs),
    /// Train a model and write checkpoint.bin and train_log.jsonl.
    Train(TrainArgs),
    /// Decode source lines: words, g-vector and action string per line.
    Decode(DecodeArgs),
    /// Decode an evaluation split and write metrics CSV.
    Eval(EvalArgs),
    /// Evaluate over a temperature grid.
    Sweep(EvalArgs),
    /// Print the extreme oracle walks on the prefix grid.
    OracleTrace(OracleTraceArgs),
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Training sentences.
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub gamma_target: Option<f64>,
    #[arg(long)]
    pub dev_sentences: Option<usize>,
    #[arg(long)]
    pub test_sentences: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct BandArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<i64>,
    /// Length ratio: a number, a fraction like 5/4, or `measured`.
    #[arg(long)]
    pub gamma: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Directory with train.src/train.tgt/vocab.json; generated from the corpus config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub band: BandArgs,
    /// adaptive, wait-K or full_sentence.
    #[arg(long)]
    pub mode: Option<Policy>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub negative_term: bool,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_width: Option<usize>,
    #[arg(long)]
    pub softmax: bool,
    #[arg(long)]
    pub keep_delay_in_attention: bool,
    #[arg(long)]
    pub no_count_embedding: bool,
    #[arg(long)]
    pub f64: bool,
}

#[derive(Debug, Args, Default)]
pub struct DecodeFlags {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub band: BandArgs,
    #[arg(long)]
    pub mode: Option<Policy>,
    #[arg(long, allow_hyphen_values = true)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub flags: DecodeFlags,
    /// Source file, one sentence per line; standard input when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub flags: DecodeFlags,
    /// Corpus directory (defaults to `--out`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// File stem of the evaluation split.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub temps: Option<Vec<f64>>,
}

#[derive(Debug, Args, Default)]
pub struct OracleTraceArgs {
    /// Source tokens (whitespace separated).
    #[arg(long)]
    pub source: Option<String>,
    /// Target tokens, without eos.
    #[arg(long)]
    pub target: Option<String>,
    /// Lengths to use instead of explicit tokens.
    #[arg(long)]
    pub src_len: Option<usize>,
    #[arg(long)]
    pub tgt_len: Option<usize>,
    #[command(flatten)]
    pub band: BandArgs,
    /// aggressive, conservative or both.
    #[arg(long, default_value = "both")]
    pub side: String,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let parsed = if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_corpus(cfg: &mut RunConfig, a: &CorpusArgs) {
    set(&mut cfg.corpus.task, a.task);
    set(&mut cfg.corpus.vocab_size, a.vocab_size);
    set(&mut cfg.corpus.sentences, a.sentences);
    set(&mut cfg.corpus.min_len, a.min_len);
    set(&mut cfg.corpus.max_len, a.max_len);
    set(&mut cfg.corpus.gamma_target, a.gamma_target);
    set(&mut cfg.eval_sizes.dev, a.dev_sentences);
    set(&mut cfg.eval_sizes.test, a.test_sentences);
}

/// Applies band flags; returns true when `--gamma measured` was requested.
fn apply_band(oracle: &mut OracleConfig, a: &BandArgs) -> Result<bool, CliError> {
    set(&mut oracle.alpha, a.alpha);
    set(&mut oracle.beta, a.beta);
    match a.gamma.as_deref() {
        None => Ok(false),
        Some("measured") => Ok(true),
        Some(g) => {
            oracle.gamma = g.parse().map_err(|e: crate::oracle::GammaParseError| CliError::Config(e.to_string()))?;
            Ok(false)
        }
    }
}

fn band_given(a: &BandArgs) -> bool {
    a.alpha.is_some() || a.beta.is_some() || a.gamma.is_some()
}

fn write_resolved(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)?;
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(cfg.out.join("resolved_config.json"), json + "\n")?;
    Ok(())
}

fn validated(cfg: RunConfig) -> Result<RunConfig, CliError> {
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(v.join("; ")))
    }
}

/// Parses the arguments and runs the command, writing its report to `stdout`.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(stdout, "{e}")?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return Err(CliError::Usage(first.to_string()));
        }
    };
    execute(cli, stdout)
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.out, cli.out);
    cfg.sync_seeds();
    match cli.command {
        Command::Gen(a) => cmd_gen(cfg, &a, stdout),
        Command::Train(a) => cmd_train(cfg, &a, stdout),
        Command::Decode(a) => cmd_decode(cfg, &a, stdout),
        Command::Eval(a) => cmd_eval(cfg, &a, false, stdout),
        Command::Sweep(a) => cmd_eval(cfg, &a, true, stdout),
        Command::OracleTrace(a) => cmd_oracle_trace(cfg, &a, stdout),
    }
}

fn sizes(cfg: &RunConfig) -> SplitSizes {
    SplitSizes { train: cfg.corpus.sentences, dev: cfg.eval_sizes.dev, test: cfg.eval_sizes.test }
}

fn cmd_gen(mut cfg: RunConfig, a: &CorpusArgs, out: &mut dyn Write) -> Result<(), CliError> {
    apply_corpus(&mut cfg, a);
    let cfg = validated(cfg)?;
    let splits = generate_splits(&cfg.corpus, sizes(&cfg))?;
    fs::create_dir_all(&cfg.out)?;
    data::write_vocab(&cfg.out.join("vocab.json"), &splits.train.vocab)?;
    for (stem, c) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        data::write_parallel(&cfg.out, stem, c)?;
    }
    write_resolved(&cfg)?;
    let gamma = splits.train.measured_gamma().map(|g| g.to_string()).unwrap_or_else(|| "-".into());
    writeln!(
        out,
        "wrote {} train / {} dev / {} test pairs to {} (measured gamma {gamma})",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        cfg.out.display()
    )?;
    Ok(())
}

fn load_split(dir: &Path, stem: &str) -> Result<ParallelCorpus, CliError> {
    let vocab = data::read_vocab(&dir.join("vocab.json"))?;
    Ok(data::read_parallel(dir, stem, &vocab)?)
}

fn cmd_train(mut cfg: RunConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    apply_corpus(&mut cfg, &a.corpus);
    if apply_band(&mut cfg.train.oracle, &a.band)? {
        cfg.measured_gamma = true;
    }
    set(&mut cfg.train.mode, a.mode);
    set(&mut cfg.train.max_steps, a.steps);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.optimizer.lr, a.lr);
    set(&mut cfg.train.checkpoint_every, a.checkpoint_every);
    if a.clip_norm.is_some() {
        cfg.train.clip_norm = a.clip_norm;
    }
    cfg.train.negative_term |= a.negative_term;
    set(&mut cfg.model.d_model, a.d_model);
    set(&mut cfg.model.n_layers, a.layers);
    set(&mut cfg.model.n_heads, a.heads);
    set(&mut cfg.model.ffn_width, a.ffn_width);
    if a.softmax {
        cfg.model.scoring = Scoring::Softmax;
    }
    cfg.model.keep_delay_in_attention |= a.keep_delay_in_attention;
    if a.no_count_embedding {
        cfg.model.use_count_embedding = false;
    }
    if a.f64 {
        cfg.model.precision = Precision::F64;
    }
    let corpus = match &a.data {
        Some(dir) => load_split(dir, "train")?,
        None => {
            let cfg = validated(cfg.clone())?;
            generate_splits(&cfg.corpus, sizes(&cfg))?.train
        }
    };
    if cfg.measured_gamma {
        cfg.train.oracle.gamma = corpus.measured_gamma().ok_or_else(|| CliError::Input("empty training corpus".into()))?;
    }
    let cfg = validated(cfg)?;
    write_resolved(&cfg)?;
    let mut log = io::BufWriter::new(fs::File::create(cfg.out.join("train_log.jsonl"))?);
    let mut log_err = None;
    let mut last = None;
    let mut on_step = |r: &crate::training::TrainStepReport| {
        let line = serde_json::json!({ "step": r.step, "loss": r.loss, "grad_norm": r.grad_norm, "wall_ms": r.wall_ms });
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        last = Some(r.clone());
    };
    let result = match cfg.model.precision {
        Precision::F32 => {
            let m = ScorerModel::<f32>::new(cfg.model.clone(), corpus.vocab.clone()).map_err(TrainError::from)?;
            train(m, &corpus, &cfg.train, Some(&cfg.out), &mut on_step).map(|_| ())
        }
        Precision::F64 => {
            let m = ScorerModel::<f64>::new(cfg.model.clone(), corpus.vocab.clone()).map_err(TrainError::from)?;
            train(m, &corpus, &cfg.train, Some(&cfg.out), &mut on_step).map(|_| ())
        }
    };
    log.flush()?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    result?;
    match last {
        Some(r) => writeln!(out, "trained {} steps, final loss {:.4}, checkpoint {}", r.step, r.loss, cfg.out.join("checkpoint.bin").display())?,
        None => writeln!(out, "trained 0 steps, checkpoint {}", cfg.out.join("checkpoint.bin").display())?,
    }
    Ok(())
}

/// Loads the checkpoint and builds the decode config. Band precedence:
/// flags, then the config file, then the band the checkpoint was trained with.
fn decode_setup(cfg: &mut RunConfig, f: &DecodeFlags) -> Result<(AnyModel, DecodeConfig), CliError> {
    let path = f.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.bin"));
    let (model, meta) = load_checkpoint(&path)?;
    let trained: Option<OracleConfig> = meta.get("oracle").and_then(|o| serde_json::from_value(o.clone()).ok());
    let mut oracle = cfg.decode.oracle.or(trained).unwrap_or(DecodeConfig::default().oracle);
    if apply_band(&mut oracle, &f.band)? {
        return Err(CliError::Config("--gamma measured is only available for train".into()));
    }
    if band_given(&f.band) || cfg.decode.oracle.is_none() {
        cfg.decode.oracle = Some(oracle);
    }
    set(&mut cfg.decode.mode, f.mode);
    set(&mut cfg.decode.temperature, f.temperature);
    set(&mut cfg.decode.max_len, f.max_len);
    let dc = DecodeConfig { oracle, temperature: cfg.decode.temperature, max_len: cfg.decode.max_len, mode: cfg.decode.mode };
    let v = dc.violations();
    if !v.is_empty() {
        return Err(CliError::Config(v.join("; ")));
    }
    Ok((model, dc))
}

fn decode_lines<T: Real>(model: &ScorerModel<T>, lines: &[Vec<usize>], cfg: &DecodeConfig, out: &mut dyn Write) -> Result<(), CliError> {
    for src in lines {
        let trace = decode(model, src, cfg)?;
        writeln!(out, "{}", trace.render(model.vocab()))?;
    }
    Ok(())
}

fn read_sources(input: Option<&Path>, vocab: &Vocab) -> Result<Vec<Vec<usize>>, CliError> {
    let text = match input {
        Some(p) => fs::read_to_string(p)?,
        None => io::stdin().lock().lines().collect::<Result<Vec<_>, _>>()?.join("\n"),
    };
    text.lines()
        .enumerate()
        .map(|(i, l)| vocab.encode(l).map_err(|e| CliError::Input(format!("line {}: {e}", i + 1))))
        .collect()
}

fn cmd_decode(mut cfg: RunConfig, a: &DecodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, dc) = decode_setup(&mut cfg, &a.flags)?;
    let cfg = validated(cfg)?;
    let lines = read_sources(a.input.as_deref(), model.vocab())?;
    write_resolved(&cfg)?;
    let mut buf = Vec::new();
    match &model {
        AnyModel::F32(m) => decode_lines(m, &lines, &dc, &mut buf)?,
        AnyModel::F64(m) => decode_lines(m, &lines, &dc, &mut buf)?,
    }
    match &a.output {
        Some(p) => fs::write(p, &buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

fn eval_rows<T: Real>(
    model: &ScorerModel<T>,
    corpus: &ParallelCorpus,
    temps: &[f64],
    dc: &DecodeConfig,
    grid: bool,
) -> Result<Vec<SweepRow>, CliError> {
    if grid {
        return Ok(sweep(model, &corpus.pairs, temps, dc)?);
    }
    let mut temps = temps.to_vec();
    temps.sort_by(f64::total_cmp);
    temps
        .iter()
        .map(|&t| Ok(evaluate(model, &corpus.pairs, &DecodeConfig { temperature: t, ..*dc })?.row(t)))
        .collect()
}

fn cmd_eval(mut cfg: RunConfig, a: &EvalArgs, grid: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, dc) = decode_setup(&mut cfg, &a.flags)?;
    let temps = match (&a.temps, grid) {
        (Some(t), _) => t.clone(),
        (None, true) => cfg.decode.temps.clone(),
        (None, false) => vec![dc.temperature],
    };
    if grid {
        cfg.decode.temps = temps.clone();
    }
    let cfg = validated(cfg)?;
    let dir = a.data.clone().unwrap_or_else(|| cfg.out.clone());
    let corpus = load_split(&dir, &a.split)?;
    if corpus.vocab != *model.vocab() {
        return Err(CliError::Input("corpus vocabulary does not match the checkpoint".into()));
    }
    write_resolved(&cfg)?;
    let rows = match &model {
        AnyModel::F32(m) => eval_rows(m, &corpus, &temps, &dc, grid)?,
        AnyModel::F64(m) => eval_rows(m, &corpus, &temps, &dc, grid)?,
    };
    let csv = rows_to_csv(&rows);
    fs::write(cfg.out.join(if grid { "sweep.csv" } else { "eval.csv" }), &csv)?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}

fn oracle_pair(a: &OracleTraceArgs) -> Result<(Vec<String>, Vec<String>), CliError> {
    let toks = |s: &Option<String>, n: Option<usize>, prefix: &str, default: usize| -> Vec<String> {
        match s {
            Some(s) => s.split_whitespace().map(str::to_string).collect(),
            None => (1..=n.unwrap_or(default)).map(|i| format!("{prefix}{i}")).collect(),
        }
    };
    let x = toks(&a.source, a.src_len, "x", 3);
    let y = toks(&a.target, a.tgt_len, "y", 3);
    if x.is_empty() || y.is_empty() {
        return Err(CliError::Input("source and target must be non-empty".into()));
    }
    Ok((x, y))
}

/// Text rendering of a walk: the action string, the step table and a grid
/// with source prefix length across and target prefix length down.
pub fn render_walk(vocab: &Vocab, path: &ActionSequence, gamma: Gamma, source_len: usize, target_len: usize) -> String {
    let steps = grid_walk(path, gamma);
    let mut s = format!("actions: {}\n", path.render(vocab));
    s.push_str("step  action  s  t  lag\n");
    for st in &steps {
        let a = vocab.token(vocab.action_id(st.action));
        s.push_str(&format!("{:>4}  {:<6}  {:>1}  {:>1}  {:.4}\n", st.step, a, st.src_len, st.tgt_len, st.lag));
    }
    let mut grid = vec![vec!['.'; source_len + 1]; target_len + 1];
    grid[0][0] = '*';
    for st in &steps {
        grid[st.tgt_len][st.src_len] = '*';
    }
    for row in grid {
        s.push_str(&row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
        s.push('\n');
    }
    s
}

fn cmd_oracle_trace(mut cfg: RunConfig, a: &OracleTraceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut oracle = cfg.train.oracle;
    if apply_band(&mut oracle, &a.band)? {
        return Err(CliError::Config("--gamma measured is only available for train".into()));
    }
    oracle.validate().map_err(|e| CliError::Config(format!("oracle: {e}")))?;
    cfg.train.oracle = oracle;
    let sides: Vec<PathSide> = match a.side.as_str() {
        "both" => vec![PathSide::Aggressive, PathSide::Conservative],
        "aggressive" => vec![PathSide::Aggressive],
        "conservative" => vec![PathSide::Conservative],
        other => return Err(CliError::Config(format!("unknown side {other:?} (aggressive, conservative, both)"))),
    };
    let (x, y) = oracle_pair(a)?;
    let mut words: Vec<String> = x.clone();
    words.extend(y.iter().cloned());
    words.sort();
    words.dedup();
    let vocab = Vocab::with_words(words).map_err(|e| CliError::Input(e.to_string()))?;
    let mut target: Vec<usize> = y.iter().map(|w| vocab.id(w).expect("word in vocab")).collect();
    target.push(vocab.eos_id());
    let cfg = validated(cfg)?;
    write_resolved(&cfg)?;
    writeln!(out, "source: {}\ntarget: {} {}\nband: alpha={} beta={} gamma={}", x.join(" "), y.join(" "), vocab.token(vocab.eos_id()), oracle.alpha, oracle.beta, oracle.gamma)?;
    for side in sides {
        let path = extreme_path(x.len(), &target, &oracle, side);
        let name = match side {
            PathSide::Aggressive => "aggressive",
            PathSide::Conservative => "conservative",
        };
        writeln!(out, "\n[{name}]")?;
        write!(out, "{}", render_walk(&vocab, &path, oracle.gamma, x.len(), target.len()))?;
    }
    Ok(())
}

//! Restricted dynamic oracle over the prefix grid.
//!
//! For a gold pair `(x, y)` and a lag band `(alpha, beta)` the oracle maps a
//! prefix pair `(s, t)` to the set of actions that keep the walk inside the
//! band and still reach the gold target. The lag is `|s| - gamma * |t|`.
//!
//! The functions here work on source *lengths* and target ids only: the
//! oracle never needs source content. Reaching `t = y` ends a walk, so a
//! target ending in `</s>` gives eos-terminated episodes for free.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transition::{Action, ActionSequence, PrefixState};

/// Tolerance for lag comparisons when the length ratio is a plain real.
pub const LAG_TOLERANCE: f64 = 1e-9;

/// Source/target length ratio used to correct the lag.
///
/// Ratios measured from a corpus are kept exact so band checks never depend
/// on float rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Exact(Ratio<i64>),
    Approx(f64),
}

impl Gamma {
    pub const ONE: Gamma = Gamma::Exact(Ratio::new_raw(1, 1));

    pub fn ratio(num: i64, den: i64) -> Gamma {
        Gamma::Exact(Ratio::new(num, den))
    }

    pub fn value(&self) -> f64 {
        match *self {
            Gamma::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Gamma::Approx(g) => g,
        }
    }

    pub fn is_positive(&self) -> bool {
        match *self {
            Gamma::Exact(r) => *r.numer() > 0 && *r.denom() > 0,
            Gamma::Approx(g) => g > 0.0 && g.is_finite(),
        }
    }

    /// Mean of `|x| / |y|` over the given length pairs, kept exact.
    pub fn mean_ratio<I: IntoIterator<Item = (usize, usize)>>(lengths: I) -> Option<Gamma> {
        let mut sum = Ratio::from_integer(0i64);
        let mut n = 0i64;
        for (xl, yl) in lengths {
            if yl == 0 {
                return None;
            }
            sum += Ratio::new(xl as i64, yl as i64);
            n += 1;
        }
        (n > 0).then(|| Gamma::Exact(sum / n))
    }

    /// Sign of `src - gamma * tgt - bound`.
    fn compare_lag(&self, src: usize, tgt: usize, bound: i64) -> Ordering {
        match *self {
            Gamma::Exact(r) => {
                let (num, den) = (*r.numer() as i128, *r.denom() as i128);
                let lhs = src as i128 * den - num * tgt as i128;
                lhs.cmp(&(bound as i128 * den))
            }
            Gamma::Approx(g) => {
                let diff = src as f64 - g * tgt as f64 - bound as f64;
                if diff.abs() <= LAG_TOLERANCE {
                    Ordering::Equal
                } else if diff < 0.0 {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
        }
    }
}

impl Default for Gamma {
    fn default() -> Self {
        Gamma::ONE
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Exact(r) if *r.denom() == 1 => write!(f, "{}", r.numer()),
            Gamma::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Gamma::Approx(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid length ratio {0:?}: expected a positive number or a fraction like 5/4")]
pub struct GammaParseError(String);

impl FromStr for Gamma {
    type Err = GammaParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GammaParseError(s.to_string());
        let g = if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Gamma::ratio(n, d)
        } else if let Ok(i) = s.trim().parse::<i64>() {
            Gamma::ratio(i, 1)
        } else {
            Gamma::Approx(s.trim().parse().map_err(|_| bad())?)
        };
        if g.is_positive() {
            Ok(g)
        } else {
            Err(bad())
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Number(f64),
    Text(String),
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Gamma::Approx(g) => GammaRepr::Number(*g),
            exact => GammaRepr::Text(exact.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match GammaRepr::deserialize(d)? {
            GammaRepr::Number(g) if g.fract() == 0.0 && g > 0.0 => Ok(Gamma::ratio(g as i64, 1)),
            GammaRepr::Number(g) if g > 0.0 && g.is_finite() => Ok(Gamma::Approx(g)),
            GammaRepr::Number(g) => Err(serde::de::Error::custom(GammaParseError(g.to_string()))),
            GammaRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Lag band `alpha < d' < beta` and the length ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub alpha: i64,
    pub beta: i64,
    #[serde(default)]
    pub gamma: Gamma,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("alpha ({alpha}) must be below beta ({beta})")]
    EmptyBand { alpha: i64, beta: i64 },
    #[error("length ratio must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("state is complete: the gold target has been fully emitted")]
    Complete,
    #[error("state {0} is not a prefix pair of the gold sentence pair")]
    NotAPrefix(String),
}

impl OracleConfig {
    pub fn new(alpha: i64, beta: i64, gamma: Gamma) -> Result<Self, OracleError> {
        let cfg = OracleConfig { alpha, beta, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.alpha >= self.beta {
            return Err(OracleError::EmptyBand { alpha: self.alpha, beta: self.beta });
        }
        if !self.gamma.is_positive() {
            return Err(OracleError::NonPositiveGamma(self.gamma.value()));
        }
        Ok(())
    }

    /// `d' <= alpha`: the walk is at or behind the aggressive bound.
    pub fn at_aggressive_bound(&self, src_len: usize, tgt_len: usize) -> bool {
        self.gamma.compare_lag(src_len, tgt_len, self.alpha) != Ordering::Greater
    }

    /// `d' >= beta`: the walk is at or beyond the conservative bound.
    pub fn at_conservative_bound(&self, src_len: usize, tgt_len: usize) -> bool {
        self.gamma.compare_lag(src_len, tgt_len, self.beta) != Ordering::Less
    }
}

/// `d' = |s| - gamma |t|`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LagValue(pub f64);

pub fn effective_lag(state: &PrefixState, cfg: &OracleConfig) -> LagValue {
    lag_at(state.src_len, state.tgt.len(), cfg.gamma)
}

pub fn lag_at(src_len: usize, tgt_len: usize, gamma: Gamma) -> LagValue {
    LagValue(src_len as f64 - gamma.value() * tgt_len as f64)
}

/// Actions the oracle allows from `(src_len, tgt_len)`, delay first.
///
/// Inapplicable members of the two-action branch are filtered out: once the
/// source is exhausted only the next gold word remains.
pub fn oracle_actions_at(
    src_len: usize,
    tgt_len: usize,
    source_len: usize,
    target: &[usize],
    cfg: &OracleConfig,
) -> Result<Vec<Action>, OracleError> {
    if src_len > source_len || tgt_len > target.len() {
        return Err(OracleError::NotAPrefix(format!("({src_len}, {tgt_len})")));
    }
    if tgt_len == target.len() {
        return Err(OracleError::Complete);
    }
    let source_left = src_len < source_len;
    let next = Action::Word(target[tgt_len]);
    if source_left && cfg.at_aggressive_bound(src_len, tgt_len) {
        return Ok(vec![Action::Delay]);
    }
    if cfg.at_conservative_bound(src_len, tgt_len) {
        return Ok(vec![next]);
    }
    Ok(if source_left { vec![Action::Delay, next] } else { vec![next] })
}

/// Oracle action set for a full state; checks the emitted words are a gold prefix.
pub fn oracle_actions(
    state: &PrefixState,
    source_len: usize,
    target: &[usize],
    cfg: &OracleConfig,
) -> Result<Vec<Action>, OracleError> {
    if state.tgt.len() > target.len() || state.tgt[..] != target[..state.tgt.len()] {
        return Err(OracleError::NotAPrefix(state.to_string()));
    }
    oracle_actions_at(state.src_len, state.tgt.len(), source_len, target, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathSide {
    /// Writes whenever the oracle allows it, hugging `alpha`.
    Aggressive,
    /// Reads whenever the oracle allows it, hugging `beta`.
    Conservative,
}

/// The oracle path that always breaks two-action ties toward `side`.
pub fn extreme_path(source_len: usize, target: &[usize], cfg: &OracleConfig, side: PathSide) -> ActionSequence {
    let (mut s, mut t) = (0usize, 0usize);
    let mut path = ActionSequence::new();
    while t < target.len() {
        let acts = oracle_actions_at(s, t, source_len, target, cfg).expect("walk stays on the oracle domain");
        let a = match (acts.as_slice(), side) {
            ([only], _) => *only,
            ([_, word], PathSide::Aggressive) => *word,
            ([delay, _], PathSide::Conservative) => *delay,
            _ => unreachable!("oracle returns one or two actions"),
        };
        match a {
            Action::Delay => s += 1,
            Action::Word(_) => t += 1,
        }
        path.push(a);
    }
    path
}

/// Read/write schedule family used for training targets and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Imitates the oracle band at training time; model-chosen at decode time.
    #[default]
    Adaptive,
    /// Fixed wait-k schedule, `k >= 1`.
    WaitK(usize),
    /// Reads the whole source before writing.
    FullSentence,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Adaptive => write!(f, "adaptive"),
            Policy::WaitK(k) => write!(f, "wait-{k}"),
            Policy::FullSentence => write!(f, "full_sentence"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid policy {0:?}: expected adaptive, full_sentence or wait-K with K >= 1")]
pub struct PolicyParseError(String);

impl FromStr for Policy {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "adaptive" => return Ok(Policy::Adaptive),
            "full" | "full_sentence" | "full-sentence" => return Ok(Policy::FullSentence),
            _ => {}
        }
        let k = ["wait-", "waitk:", "waitk", "wait"]
            .iter()
            .find_map(|p| t.strip_prefix(p))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1);
        k.map(Policy::WaitK).ok_or_else(|| PolicyParseError(s.to_string()))
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Wait-k schedule: word `j` (1-based) is written after `min(k + j - 1, |x|)` reads.
pub fn waitk_path(source_len: usize, target: &[usize], k: usize) -> ActionSequence {
    let mut path = ActionSequence::new();
    let mut s = 0;
    for (j, &w) in target.iter().enumerate() {
        let need = (k + j).min(source_len);
        while s < need {
            path.push(Action::Delay);
            s += 1;
        }
        path.push(Action::Word(w));
    }
    path
}

/// Result of exhaustive oracle path enumeration.
#[derive(Debug, Clone, Default)]
pub struct Enumeration {
    pub paths: Vec<ActionSequence>,
    pub truncated: bool,
}

/// Depth-first enumeration of every walk built from oracle choices, stopping
/// after `limit` paths.
pub fn enumerate_oracle_paths(source_len: usize, target: &[usize], cfg: &OracleConfig, limit: usize) -> Enumeration {
    struct Walk<'a> {
        source_len: usize,
        target: &'a [usize],
        cfg: &'a OracleConfig,
        limit: usize,
        prefix: Vec<Action>,
        out: Enumeration,
    }

    impl Walk<'_> {
        fn visit(&mut self, s: usize, t: usize) {
            if self.out.truncated {
                return;
            }
            if t == self.target.len() {
                if self.out.paths.len() >= self.limit {
                    self.out.truncated = true;
                } else {
                    self.out.paths.push(ActionSequence(self.prefix.clone()));
                }
                return;
            }
            let acts = oracle_actions_at(s, t, self.source_len, self.target, self.cfg).expect("walk stays on the oracle domain");
            for a in acts {
                self.prefix.push(a);
                match a {
                    Action::Delay => self.visit(s + 1, t),
                    Action::Word(_) => self.visit(s, t + 1),
                }
                self.prefix.pop();
            }
        }
    }

    let mut walk = Walk { source_len, target, cfg, limit, prefix: Vec::new(), out: Enumeration::default() };
    walk.visit(0, 0);
    walk.out
}

/// Sum of the lag `d'` at every state a word is written from.
pub fn cumulative_write_lag(path: &ActionSequence, gamma: Gamma) -> f64 {
    let (mut s, mut t) = (0usize, 0usize);
    let mut total = 0.0;
    for a in path {
        match a {
            Action::Delay => s += 1,
            Action::Word(_) => {
                total += lag_at(s, t, gamma).0;
                t += 1;
            }
        }
    }
    total
}

/// Exact counterpart of [`cumulative_write_lag`]: the per-word read counts.
pub fn reads_before_words(path: &ActionSequence) -> Vec<usize> {
    let mut s = 0;
    let mut g = Vec::new();
    for a in path {
        match a {
            Action::Delay => s += 1,
            Action::Word(_) => g.push(s),
        }
    }
    g
}

/// One row of a prefix-grid walk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStep {
    pub step: usize,
    pub action: Action,
    pub src_len: usize,
    pub tgt_len: usize,
    pub lag: f64,
}

/// States reached after each action of `path`.
pub fn grid_walk(path: &ActionSequence, gamma: Gamma) -> Vec<GridStep> {
    let (mut s, mut t) = (0usize, 0usize);
    path.iter()
        .enumerate()
        .map(|(i, &a)| {
            match a {
                Action::Delay => s += 1,
                Action::Word(_) => t += 1,
            }
            GridStep { step: i + 1, action: a, src_len: s, tgt_len: t, lag: lag_at(s, t, gamma).0 }
        })
        .collect()
}

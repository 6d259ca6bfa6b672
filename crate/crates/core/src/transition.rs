//! Delay-token action vocabulary, prefix-pair states and the transition function.
//!
//! A translation episode is a walk on the prefix grid: every [`Action::Delay`]
//! consumes one more source word, every [`Action::Word`] appends one target
//! word. Emitting the end-of-sequence word terminates the episode.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Surface form of the delay token in serialized action strings.
pub const DELAY_TOKEN: &str = "<eps>";
/// Surface form of the end-of-sequence marker.
pub const EOS_TOKEN: &str = "</s>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("token {0:?} appears more than once")]
    Duplicate(String),
    #[error("delay id {delay} and eos id {eos} must be distinct indices below {len}")]
    BadSpecialIds { delay: usize, eos: usize, len: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    delay_id: usize,
    eos_id: usize,
}

/// The extended vocabulary: every target word, the end marker and the delay token
/// share one dense index space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    delay_id: usize,
    eos_id: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.delay_id == other.delay_id && self.eos_id == other.eos_id
    }
}

impl Eq for Vocab {}

impl TryFrom<VocabRepr> for Vocab {
    type Error = VocabError;

    fn try_from(repr: VocabRepr) -> Result<Self, Self::Error> {
        Vocab::from_parts(repr.tokens, repr.delay_id, repr.eos_id)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens, delay_id: v.delay_id, eos_id: v.eos_id }
    }
}

impl Vocab {
    /// Builds a vocabulary with `<eps>` at index 0, `</s>` at index 1 and the
    /// given words after them.
    pub fn with_words<I, S>(words: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![DELAY_TOKEN.to_string(), EOS_TOKEN.to_string()];
        tokens.extend(words.into_iter().map(Into::into));
        Self::from_parts(tokens, 0, 1)
    }

    pub fn from_parts(tokens: Vec<String>, delay_id: usize, eos_id: usize) -> Result<Self, VocabError> {
        if delay_id == eos_id || delay_id >= tokens.len() || eos_id >= tokens.len() {
            return Err(VocabError::BadSpecialIds { delay: delay_id, eos: eos_id, len: tokens.len() });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Vocab { tokens, delay_id, eos_id, index })
    }

    /// Size of the extended vocabulary (words, eos and the delay token).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn delay_id(&self) -> usize {
        self.delay_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Ids of every action that writes a word, eos included.
    pub fn word_ids(&self) -> impl Iterator<Item = usize> + '_ {
        let delay = self.delay_id;
        (0..self.tokens.len()).filter(move |&i| i != delay)
    }

    /// Whitespace-tokenizes `line` into ids.
    pub fn encode(&self, line: &str) -> Result<Vec<usize>, VocabError> {
        line.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| VocabError::UnknownToken(t.to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn action(&self, id: usize) -> Action {
        if id == self.delay_id {
            Action::Delay
        } else {
            Action::Word(id)
        }
    }

    pub fn action_id(&self, action: Action) -> usize {
        match action {
            Action::Delay => self.delay_id,
            Action::Word(id) => id,
        }
    }
}

/// One step of a policy: read a source word or write a target word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Delay,
    Word(usize),
}

impl Action {
    pub fn is_delay(self) -> bool {
        matches!(self, Action::Delay)
    }
}

/// A cell of the prefix grid plus the bookkeeping the scorer needs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PrefixState {
    pub src_len: usize,
    pub tgt: Vec<usize>,
    pub delay_count: usize,
    pub last_action: Option<Action>,
}

impl PrefixState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt.len()
    }

    pub fn source_prefix<'a>(&self, source: &'a [usize]) -> &'a [usize] {
        &source[..self.src_len]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("source exhausted: cannot read past {src_len} words")]
    SourceExhausted { src_len: usize },
    #[error("episode already ended with eos")]
    AfterEos,
    #[error("word id {0} is not a target word")]
    NotAWord(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("action {index} is inapplicable: {source}")]
pub struct ReplayError {
    pub index: usize,
    #[source]
    pub source: TransitionError,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseActionsError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// An ordered list of actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ActionSequence(pub Vec<Action>);

impl ActionSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, a: Action) {
        self.0.push(a);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.0.iter()
    }

    pub fn delays(&self) -> usize {
        self.0.iter().filter(|a| a.is_delay()).count()
    }

    pub fn words(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().filter_map(|a| match a {
            Action::Word(w) => Some(*w),
            Action::Delay => None,
        })
    }

    /// Renders as space-separated tokens with `<eps>` for reads.
    pub fn render(&self, vocab: &Vocab) -> String {
        self.0.iter().map(|&a| vocab.token(vocab.action_id(a))).collect::<Vec<_>>().join(" ")
    }

    pub fn parse(line: &str, vocab: &Vocab) -> Result<Self, ParseActionsError> {
        let ids = vocab.encode(line)?;
        Ok(ActionSequence(ids.into_iter().map(|i| vocab.action(i)).collect()))
    }
}

impl From<Vec<Action>> for ActionSequence {
    fn from(v: Vec<Action>) -> Self {
        ActionSequence(v)
    }
}

impl<'a> IntoIterator for &'a ActionSequence {
    type Item = &'a Action;
    type IntoIter = std::slice::Iter<'a, Action>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Every state visited while replaying an action sequence; `states[i]` is the
/// state before action `i`, the last entry is the final state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<PrefixState>,
}

impl Trajectory {
    pub fn final_state(&self) -> &PrefixState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Transition system for one source sentence.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub source: &'a [usize],
    pub vocab: &'a Vocab,
}

impl<'a> Episode<'a> {
    pub fn new(source: &'a [usize], vocab: &'a Vocab) -> Self {
        Episode { source, vocab }
    }

    pub fn is_finished(&self, state: &PrefixState) -> bool {
        state.tgt.last() == Some(&self.vocab.eos_id())
    }

    pub fn apply(&self, state: &PrefixState, action: Action) -> Result<PrefixState, TransitionError> {
        if self.is_finished(state) {
            return Err(TransitionError::AfterEos);
        }
        let mut next = state.clone();
        match action {
            Action::Delay => {
                if state.src_len >= self.source.len() {
                    return Err(TransitionError::SourceExhausted { src_len: state.src_len });
                }
                next.src_len += 1;
                next.delay_count += 1;
            }
            Action::Word(w) => {
                if w == self.vocab.delay_id() || w >= self.vocab.len() {
                    return Err(TransitionError::NotAWord(w));
                }
                next.tgt.push(w);
            }
        }
        next.last_action = Some(action);
        Ok(next)
    }

    /// Actions that `apply` accepts in `state`, delay first then words by id.
    pub fn applicable_actions(&self, state: &PrefixState) -> Vec<Action> {
        if self.is_finished(state) {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.vocab.len());
        if state.src_len < self.source.len() {
            out.push(Action::Delay);
        }
        out.extend(self.vocab.word_ids().map(Action::Word));
        out
    }

    pub fn replay(&self, actions: &ActionSequence) -> Result<Trajectory, ReplayError> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(PrefixState::empty());
        for (index, &a) in actions.iter().enumerate() {
            let next = self
                .apply(states.last().unwrap(), a)
                .map_err(|source| ReplayError { index, source })?;
            states.push(next);
        }
        Ok(Trajectory { states })
    }
}

impl fmt::Display for PrefixState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(src_len={}, tgt_len={}, delays={})", self.src_len, self.tgt.len(), self.delay_count)
    }
}

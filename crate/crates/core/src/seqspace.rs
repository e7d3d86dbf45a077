//! Finite spaces of EOS-terminated token sequences.
//!
//! A [`SequenceSpace`] holds every string of content tokens with length at
//! most `max_len`. Each string is implicitly terminated by the EOS token; at
//! depth `max_len` the EOS is forced. Sequences are indexed in canonical
//! order: shorter first, then lexicographic by token index.
//!
//! Because all strings shorter than `max_len` come first in that order, the
//! index of a decision prefix coincides with the index of the same string
//! viewed as a sequence. Policies use this to address their logit rows.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Largest space the exact oracles will enumerate.
pub const MAX_SPACE_SIZE: u64 = 1_000_000;

/// Serialized form of a [`Vocab`]: symbols plus the EOS symbol by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub symbols: Vec<String>,
    pub eos: String,
}

/// An ordered token vocabulary with one distinguished end-of-sequence token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabSpec", into = "VocabSpec")]
pub struct Vocab {
    symbols: Vec<String>,
    eos: usize,
}

impl Vocab {
    pub fn new(symbols: Vec<String>, eos: usize) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidVocab(format!(
                "need at least one content token plus EOS, got {} symbols",
                symbols.len()
            )));
        }
        if eos >= symbols.len() {
            return Err(Error::InvalidVocab(format!(
                "eos index {eos} out of range for {} symbols",
                symbols.len()
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidVocab("empty symbol".into()));
            }
            if s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocab(format!(
                    "symbol {s:?} contains whitespace"
                )));
            }
            if symbols[..i].contains(s) {
                return Err(Error::InvalidVocab(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, eos })
    }

    /// Builds a vocabulary, locating the EOS token by its symbol.
    pub fn with_eos_symbol<S: Into<String>>(symbols: Vec<S>, eos: &str) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let eos_index = symbols
            .iter()
            .position(|s| s == eos)
            .ok_or_else(|| Error::InvalidVocab(format!("eos symbol {eos:?} not in symbols")))?;
        Self::new(symbols, eos_index)
    }

    /// Total number of tokens, EOS included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, token: usize) -> &str {
        &self.symbols[token]
    }

    /// Number of content (non-EOS) tokens.
    pub fn n_content(&self) -> usize {
        self.symbols.len() - 1
    }

    /// Vocabulary index of the content token with the given rank.
    pub fn content_token(&self, rank: usize) -> usize {
        if rank < self.eos {
            rank
        } else {
            rank + 1
        }
    }

    /// Rank of a content token among content tokens; `None` for EOS.
    pub fn content_rank(&self, token: usize) -> Option<usize> {
        match token.cmp(&self.eos) {
            std::cmp::Ordering::Less => Some(token),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(token - 1),
        }
    }

    pub fn token(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

impl TryFrom<VocabSpec> for Vocab {
    type Error = Error;

    fn try_from(spec: VocabSpec) -> Result<Self> {
        Vocab::with_eos_symbol(spec.symbols, &spec.eos)
    }
}

impl From<Vocab> for VocabSpec {
    fn from(v: Vocab) -> Self {
        let eos = v.symbols[v.eos].clone();
        VocabSpec {
            symbols: v.symbols,
            eos,
        }
    }
}

/// Content tokens of a sequence (vocabulary indices, EOS excluded).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Sequence(Vec<usize>);

impl Sequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for Sequence {
    fn from(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }
}

/// Number of sequences with content length at most `max_len` over `n_content`
/// content tokens: `sum_{k=0}^{max_len} n_content^k`.
pub fn space_size(n_content: usize, max_len: usize) -> Result<u64> {
    let m = n_content as u64;
    let mut total: u64 = 0;
    let mut level: u64 = 1;
    for k in 0..=max_len {
        total = total.checked_add(level).ok_or(Error::SpaceOverflow)?;
        if k < max_len {
            level = level.checked_mul(m).ok_or(Error::SpaceOverflow)?;
        }
    }
    usize::try_from(total).map_err(|_| Error::SpaceOverflow)?;
    Ok(total)
}

/// The finite set of sequences with content length `<= max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSpace {
    vocab: Vocab,
    max_len: usize,
    /// `offsets[k]` = number of sequences shorter than `k`; length `max_len + 2`.
    offsets: Vec<usize>,
}

impl SequenceSpace {
    pub fn new(vocab: Vocab, max_len: usize) -> Result<Self> {
        let size = space_size(vocab.n_content(), max_len)?;
        if size > MAX_SPACE_SIZE {
            return Err(Error::SpaceTooLarge {
                size,
                limit: MAX_SPACE_SIZE,
            });
        }
        let m = vocab.n_content();
        let mut offsets = Vec::with_capacity(max_len + 2);
        offsets.push(0);
        let mut level = 1usize;
        for _ in 0..=max_len {
            let last = *offsets.last().unwrap();
            offsets.push(last + level);
            level = level.saturating_mul(m);
        }
        Ok(Self {
            vocab,
            max_len,
            offsets,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// |𝒳|.
    pub fn size(&self) -> usize {
        self.offsets[self.max_len + 1]
    }

    /// Number of decision prefixes (strings shorter than `max_len`).
    pub fn n_prefixes(&self) -> usize {
        self.offsets[self.max_len]
    }

    /// Content length of the sequence at `index`.
    pub fn len_at(&self, index: usize) -> usize {
        debug_assert!(index < self.size());
        // offsets is short (max_len + 2), a linear scan is fine
        let mut k = 0;
        while self.offsets[k + 1] <= index {
            k += 1;
        }
        k
    }

    /// Parent prefix index and the content token appended to reach `index`,
    /// or `None` for the empty sequence.
    pub fn parent(&self, index: usize) -> Option<(usize, usize)> {
        let k = self.len_at(index);
        if k == 0 {
            return None;
        }
        let m = self.vocab.n_content();
        let pos = index - self.offsets[k];
        let parent = self.offsets[k - 1] + pos / m;
        Some((parent, self.vocab.content_token(pos % m)))
    }

    /// Index of `prefix` extended by content token `token`.
    ///
    /// `prefix` must be shorter than `max_len` and `token` must not be EOS.
    pub fn child(&self, prefix: usize, token: usize) -> usize {
        let k = self.len_at(prefix);
        debug_assert!(k < self.max_len);
        let rank = self
            .vocab
            .content_rank(token)
            .expect("child token must not be EOS");
        let m = self.vocab.n_content();
        self.offsets[k + 1] + (prefix - self.offsets[k]) * m + rank
    }

    /// Number of sequences shorter than `k`, i.e. the index of the first
    /// sequence of length `k`.
    pub fn level_offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Visits every decision made while generating the sequence at `index`
    /// as `(prefix_row, token)` pairs, leaf first. The EOS decision is
    /// included unless the sequence has length `max_len`, where it is forced.
    pub fn for_each_step(&self, index: usize, mut f: impl FnMut(usize, usize)) {
        let mut k = self.len_at(index);
        if k < self.max_len {
            f(index, self.vocab.eos);
        }
        let m = self.vocab.n_content();
        let mut pos = index - self.offsets[k];
        while k > 0 {
            let token = self.vocab.content_token(pos % m);
            pos /= m;
            k -= 1;
            f(self.offsets[k] + pos, token);
        }
    }

    pub fn index_of(&self, x: &Sequence) -> Result<usize> {
        let k = x.len();
        if k > self.max_len {
            return Err(Error::InvalidSequence(format!(
                "length {k} exceeds max_len {}",
                self.max_len
            )));
        }
        let m = self.vocab.n_content();
        let mut pos = 0usize;
        for &t in x.tokens() {
            if t >= self.vocab.len() {
                return Err(Error::InvalidSequence(format!("unknown token index {t}")));
            }
            let rank = self
                .vocab
                .content_rank(t)
                .ok_or_else(|| Error::InvalidSequence("EOS inside content".into()))?;
            pos = pos * m + rank;
        }
        Ok(self.offsets[k] + pos)
    }

    pub fn sequence_at(&self, index: usize) -> Result<Sequence> {
        if index >= self.size() {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.size(),
            });
        }
        let k = self.len_at(index);
        let m = self.vocab.n_content();
        let mut pos = index - self.offsets[k];
        let mut tokens = vec![0; k];
        for slot in tokens.iter_mut().rev() {
            *slot = self.vocab.content_token(pos % m);
            pos /= m;
        }
        Ok(Sequence(tokens))
    }

    /// All sequences in canonical index order.
    pub fn enumerate(&self) -> impl Iterator<Item = Sequence> + '_ {
        (0..self.size()).map(move |i| self.sequence_at(i).expect("index in range"))
    }

    /// All decision prefixes (strings shorter than `max_len`) in row order.
    pub fn prefixes(&self) -> impl Iterator<Item = Sequence> + '_ {
        (0..self.n_prefixes()).map(move |i| self.sequence_at(i).expect("index in range"))
    }

    /// Parses a sequence written as concatenated symbols (`"aab"`) or as
    /// whitespace-separated symbols (`"the cat"`).
    pub fn parse(&self, text: &str) -> Result<Sequence> {
        let x = Sequence(self.tokenize(text)?);
        if x.len() > self.max_len {
            return Err(Error::InvalidSequence(format!(
                "{text:?} has length {} > max_len {}",
                x.len(),
                self.max_len
            )));
        }
        Ok(x)
    }

    /// Splits text into content tokens without checking `max_len`.
    ///
    /// Concatenated input is tokenized greedily by longest matching symbol.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let content: Vec<(usize, &str)> = (0..self.vocab.n_content())
            .map(|r| {
                let t = self.vocab.content_token(r);
                (t, self.vocab.symbol(t))
            })
            .collect();
        let lookup = |s: &str| {
            content
                .iter()
                .find(|(_, sym)| *sym == s)
                .map(|(t, _)| *t)
                .ok_or_else(|| Error::InvalidSequence(format!("unknown symbol {s:?} in {text:?}")))
        };
        let tokens = if text.chars().any(char::is_whitespace) {
            text.split_whitespace()
                .map(lookup)
                .collect::<Result<Vec<_>>>()?
        } else {
            let mut tokens = Vec::new();
            let mut rest = text;
            while !rest.is_empty() {
                let (t, sym) = content
                    .iter()
                    .filter(|(_, sym)| rest.starts_with(*sym))
                    .max_by_key(|(_, sym)| sym.len())
                    .ok_or_else(|| {
                        Error::InvalidSequence(format!("cannot tokenize {rest:?} in {text:?}"))
                    })?;
                tokens.push(*t);
                rest = &rest[sym.len()..];
            }
            tokens
        };
        Ok(tokens)
    }

    /// Renders a sequence; symbols are concatenated when every content symbol
    /// is a single character, space-separated otherwise.
    pub fn display(&self, x: &Sequence) -> String {
        let eos = self.vocab.eos();
        let single = self
            .vocab
            .symbols()
            .iter()
            .enumerate()
            .all(|(t, s)| t == eos || s.chars().count() == 1);
        let parts = x.tokens().iter().map(|&t| self.vocab.symbol(t));
        if single {
            parts.collect()
        } else {
            parts.collect::<Vec<_>>().join(" ")
        }
    }
}

impl fmt::Display for SequenceSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} content tokens, max_len {}, {} sequences",
            self.vocab.n_content(),
            self.max_len,
            self.size()
        )
    }
}

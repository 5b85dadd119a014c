//! Token-level view of the structured output language and the automaton that
//! drives grammar-constrained decoding.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grammar::{self, Polarity, StructuredOutput};
use crate::profile::DatasetProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const BOS: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const POLARITY_OPEN: TokenId = TokenId(2);
    pub const POLARITY_CLOSE: TokenId = TokenId(3);
    pub const THINK_OPEN: TokenId = TokenId(4);
    pub const THINK_CLOSE: TokenId = TokenId(5);
    pub const SCORE_OPEN: TokenId = TokenId(6);
    pub const SCORE_CLOSE: TokenId = TokenId(7);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

const FIRST_POLARITY: u32 = 8;
const FIRST_THINK: u32 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Bos,
    Eos,
    Tag,
    Polarity(Polarity),
    Think(usize),
    Score(usize),
}

/// Dense token table: 6 tag delimiters plus BOS/EOS, 3 polarity words,
/// `n_think` opaque reasoning tokens, and one token per score grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    profile: DatasetProfile,
    n_think: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(profile: &DatasetProfile, n_think: usize) -> Result<Self> {
        profile.validate()?;
        let mut tokens: Vec<String> = vec![
            "<bos>".into(),
            "<eos>".into(),
            grammar::POLARITY_OPEN.into(),
            grammar::POLARITY_CLOSE.into(),
            grammar::THINK_OPEN.into(),
            grammar::THINK_CLOSE.into(),
            grammar::SCORE_OPEN.into(),
            grammar::SCORE_CLOSE.into(),
        ];
        tokens.extend(Polarity::ALL.iter().map(|p| p.as_str().to_string()));
        tokens.extend((0..n_think).map(|i| format!("t{i}")));
        tokens.extend((0..profile.grid_len()).map(|g| format!("{:.2}", profile.grid_value(g))));
        Ok(Self {
            profile: profile.clone(),
            n_think,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_think(&self) -> usize {
        self.n_think
    }

    pub fn n_score(&self) -> usize {
        self.profile.grid_len()
    }

    pub fn profile(&self) -> &DatasetProfile {
        &self.profile
    }

    pub fn text(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        let i = id.0;
        let first_score = FIRST_THINK + self.n_think as u32;
        match i {
            0 => TokenKind::Bos,
            1 => TokenKind::Eos,
            2..=7 => TokenKind::Tag,
            _ if i < FIRST_THINK => TokenKind::Polarity(Polarity::ALL[(i - FIRST_POLARITY) as usize]),
            _ if i < first_score => TokenKind::Think((i - FIRST_THINK) as usize),
            _ => TokenKind::Score((i - first_score) as usize),
        }
    }

    pub fn polarity_token(&self, p: Polarity) -> TokenId {
        let offset = Polarity::ALL.iter().position(|&q| q == p).unwrap() as u32;
        TokenId(FIRST_POLARITY + offset)
    }

    pub fn think_token(&self, i: usize) -> TokenId {
        assert!(i < self.n_think, "think token {i} out of range");
        TokenId(FIRST_THINK + i as u32)
    }

    pub fn score_token(&self, grid_index: usize) -> TokenId {
        assert!(grid_index < self.n_score(), "score grid index out of range");
        TokenId(FIRST_THINK + self.n_think as u32 + grid_index as u32)
    }

    pub fn polarity_range(&self) -> std::ops::Range<usize> {
        FIRST_POLARITY as usize..FIRST_THINK as usize
    }

    pub fn think_range(&self) -> std::ops::Range<usize> {
        FIRST_THINK as usize..FIRST_THINK as usize + self.n_think
    }

    pub fn score_range(&self) -> std::ops::Range<usize> {
        let start = FIRST_THINK as usize + self.n_think;
        start..start + self.n_score()
    }

    pub fn lookup(&self, text: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == text).map(|i| TokenId(i as u32))
    }

    /// Stable fingerprint of the token table, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Token sequence of a structured output, terminated by EOS. The score is
    /// snapped to the nearest grid token.
    pub fn encode(&self, out: &StructuredOutput) -> Result<Vec<TokenId>> {
        let mut seq = Vec::with_capacity(10 + out.think.len());
        seq.push(TokenId::POLARITY_OPEN);
        seq.push(self.polarity_token(out.polarity));
        seq.push(TokenId::POLARITY_CLOSE);
        seq.push(TokenId::THINK_OPEN);
        for word in &out.think {
            match self.lookup(word).map(|id| (id, self.kind(id))) {
                Some((id, TokenKind::Think(_))) => seq.push(id),
                _ => return Err(Error::Vocab(word.clone())),
            }
        }
        seq.push(TokenId::THINK_CLOSE);
        seq.push(TokenId::SCORE_OPEN);
        if !self.profile.contains(out.score) {
            return Err(grammar::FormatError::ScoreOutOfRange(out.score).into());
        }
        seq.push(self.score_token(self.profile.nearest_grid_index(out.score)));
        seq.push(TokenId::SCORE_CLOSE);
        seq.push(TokenId::EOS);
        Ok(seq)
    }

    /// Renders a token sequence to text. Generation stops at the first EOS;
    /// adjacent word tokens are separated by a space.
    pub fn decode_text(&self, tokens: &[TokenId]) -> String {
        let mut text = String::new();
        let mut prev_word = false;
        for &t in tokens {
            if t == TokenId::EOS {
                break;
            }
            let word = !matches!(self.kind(t), TokenKind::Tag | TokenKind::Bos);
            if word && prev_word {
                text.push(' ');
            }
            text.push_str(self.text(t));
            prev_word = word;
        }
        text
    }

    pub fn check(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|t| t.index() >= self.len()) {
            Some(t) => Err(Error::Vocab(format!("id {}", t.0))),
            None => Ok(()),
        }
    }
}

/// Position of the decoder within the output grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PolarityOpen,
    PolarityWord,
    PolarityClose,
    ThinkOpen,
    Think(usize),
    ScoreOpen,
    ScoreValue,
    ScoreClose,
    End,
    Done,
}

/// Whether decoding is restricted to grammatical continuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Grammar,
    Free,
}

/// Legal-token masks for grammar-constrained decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grammar {
    pub max_think: usize,
}

impl Grammar {
    pub fn new(max_think: usize) -> Self {
        Self { max_think }
    }

    /// Longest sequence the grammar admits, including EOS.
    pub fn max_len(&self) -> usize {
        9 + self.max_think
    }

    pub fn start(&self) -> Phase {
        Phase::PolarityOpen
    }

    /// Writes the legal-token mask for `phase` into `mask`.
    pub fn legal(&self, vocab: &Vocabulary, phase: Phase, mask: &mut [bool]) {
        mask.iter_mut().for_each(|m| *m = false);
        let mut allow = |id: TokenId| mask[id.index()] = true;
        match phase {
            Phase::PolarityOpen => allow(TokenId::POLARITY_OPEN),
            Phase::PolarityWord => vocab.polarity_range().for_each(|i| allow(TokenId(i as u32))),
            Phase::PolarityClose => allow(TokenId::POLARITY_CLOSE),
            Phase::ThinkOpen => allow(TokenId::THINK_OPEN),
            Phase::Think(n) => {
                allow(TokenId::THINK_CLOSE);
                if n < self.max_think {
                    vocab.think_range().for_each(|i| allow(TokenId(i as u32)));
                }
            }
            Phase::ScoreOpen => allow(TokenId::SCORE_OPEN),
            Phase::ScoreValue => vocab.score_range().for_each(|i| allow(TokenId(i as u32))),
            Phase::ScoreClose => allow(TokenId::SCORE_CLOSE),
            Phase::End => allow(TokenId::EOS),
            Phase::Done => {}
        }
    }

    /// Next phase after emitting `token`, or `None` if the token is illegal.
    pub fn advance(&self, vocab: &Vocabulary, phase: Phase, token: TokenId) -> Option<Phase> {
        let kind = vocab.kind(token);
        let next = match (phase, kind) {
            (Phase::PolarityOpen, _) if token == TokenId::POLARITY_OPEN => Phase::PolarityWord,
            (Phase::PolarityWord, TokenKind::Polarity(_)) => Phase::PolarityClose,
            (Phase::PolarityClose, _) if token == TokenId::POLARITY_CLOSE => Phase::ThinkOpen,
            (Phase::ThinkOpen, _) if token == TokenId::THINK_OPEN => Phase::Think(0),
            (Phase::Think(_), _) if token == TokenId::THINK_CLOSE => Phase::ScoreOpen,
            (Phase::Think(n), TokenKind::Think(_)) if n < self.max_think => Phase::Think(n + 1),
            (Phase::ScoreOpen, _) if token == TokenId::SCORE_OPEN => Phase::ScoreValue,
            (Phase::ScoreValue, TokenKind::Score(_)) => Phase::ScoreClose,
            (Phase::ScoreClose, _) if token == TokenId::SCORE_CLOSE => Phase::End,
            (Phase::End, _) if token == TokenId::EOS => Phase::Done,
            _ => return None,
        };
        Some(next)
    }

    /// Phase reached after `prefix`, or `None` if the prefix is ungrammatical.
    pub fn walk(&self, vocab: &Vocabulary, prefix: &[TokenId]) -> Option<Phase> {
        prefix
            .iter()
            .try_fold(self.start(), |phase, &t| self.advance(vocab, phase, t))
    }
}

/// Legal-token mask for free decoding: everything but BOS.
pub fn free_mask(mask: &mut [bool]) {
    mask.iter_mut().for_each(|m| *m = true);
    mask[TokenId::BOS.index()] = false;
}

/// Token sequence of the polarity block used as a hint.
pub fn polarity_block(vocab: &Vocabulary, p: Polarity) -> Vec<TokenId> {
    vec![TokenId::POLARITY_OPEN, vocab.polarity_token(p), TokenId::POLARITY_CLOSE]
}

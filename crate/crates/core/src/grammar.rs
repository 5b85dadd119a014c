//! The coarse-to-fine output language:
//! `<polarity>P</polarity><think>T</think><score>S</score>`.
//!
//! Text-level rendering and parsing live here; the token-level view and the
//! decoding automaton are in [`crate::vocab`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::DatasetProfile;

pub const POLARITY_OPEN: &str = "<polarity>";
pub const POLARITY_CLOSE: &str = "</polarity>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const SCORE_OPEN: &str = "<score>";
pub const SCORE_CLOSE: &str = "</score>";

const TAGS: [&str; 6] = [
    POLARITY_OPEN,
    POLARITY_CLOSE,
    THINK_OPEN,
    THINK_CLOSE,
    SCORE_OPEN,
    SCORE_CLOSE,
];

/// Maximum number of fractional digits accepted in a `<score>` span.
pub const MAX_SCORE_DECIMALS: usize = 6;

/// Ordered Negative < Neutral < Positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(FormatError::BadPolarity(other.to_string())),
        }
    }
}

/// Why a piece of text is not a valid structured output.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("missing tag {0}")]
    MissingTag(&'static str),
    #[error("tags are duplicated or out of order")]
    WrongOrder,
    #[error("unrecognized polarity '{0}'")]
    BadPolarity(String),
    #[error("unparseable score '{0}'")]
    BadScore(String),
    #[error("score {0} outside profile bounds")]
    ScoreOutOfRange(f64),
    #[error("content outside the tag blocks")]
    TrailingContent,
}

/// A parsed polarity / reasoning / score sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub polarity: Polarity,
    pub think: Vec<String>,
    pub score: f64,
}

impl StructuredOutput {
    pub fn new(polarity: Polarity, think: Vec<String>, score: f64) -> Self {
        Self { polarity, think, score }
    }

    /// Canonical wire form; the score always carries two decimals.
    pub fn render(&self) -> String {
        format!(
            "{POLARITY_OPEN}{}{POLARITY_CLOSE}{THINK_OPEN}{}{THINK_CLOSE}{SCORE_OPEN}{:.2}{SCORE_CLOSE}",
            self.polarity,
            self.think.join(" "),
            self.score
        )
    }
}

impl fmt::Display for StructuredOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn is_valid_decimal(s: &str) -> bool {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    match frac {
        None => true,
        Some(f) => !f.is_empty() && f.len() <= MAX_SCORE_DECIMALS && f.bytes().all(|b| b.is_ascii_digit()),
    }
}

/// Parses one structured output. Surrounding whitespace and whitespace between
/// blocks are tolerated; anything else outside the three blocks is rejected.
/// Errors are reported in rule order: missing tag, order, stray content,
/// polarity, score syntax, score range.
pub fn parse(text: &str, profile: &DatasetProfile) -> Result<StructuredOutput, FormatError> {
    let body = text.trim();

    let mut pos = [0usize; 6];
    for (slot, tag) in TAGS.iter().enumerate() {
        let mut hits = body.match_indices(tag);
        match hits.next() {
            None => return Err(FormatError::MissingTag(tag)),
            Some((at, _)) => pos[slot] = at,
        }
        if hits.next().is_some() {
            return Err(FormatError::WrongOrder);
        }
    }
    if pos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FormatError::WrongOrder);
    }

    let span = |open: usize| {
        let start = pos[open] + TAGS[open].len();
        let end = pos[open + 1];
        if start > end {
            None
        } else {
            Some(&body[start..end])
        }
    };
    let gap = |close: usize| {
        let start = pos[close] + TAGS[close].len();
        let end = pos.get(close + 1).copied().unwrap_or(body.len());
        if start > end {
            None
        } else {
            Some(&body[start..end])
        }
    };

    if pos[0] != 0 {
        return Err(FormatError::TrailingContent);
    }
    for close in [1, 3, 5] {
        match gap(close) {
            Some(g) if g.trim().is_empty() => {}
            Some(_) => return Err(FormatError::TrailingContent),
            None => return Err(FormatError::WrongOrder),
        }
    }

    let polarity_text = span(0).ok_or(FormatError::WrongOrder)?.trim();
    let think_text = span(2).ok_or(FormatError::WrongOrder)?;
    let score_text = span(4).ok_or(FormatError::WrongOrder)?.trim();

    let polarity: Polarity = polarity_text.parse()?;
    if !is_valid_decimal(score_text) {
        return Err(FormatError::BadScore(score_text.to_string()));
    }
    let score: f64 = score_text
        .parse()
        .map_err(|_| FormatError::BadScore(score_text.to_string()))?;
    if !profile.contains(score) {
        return Err(FormatError::ScoreOutOfRange(score));
    }
    let think = think_text.split_whitespace().map(str::to_string).collect();

    Ok(StructuredOutput { polarity, think, score })
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error categories reported in per-type breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    Det,
    Prep,
    Verb,
    Tense,
    NNum,
    Noun,
    Pron,
    Other,
}

impl ErrorType {
    pub const ALL: [ErrorType; 8] = [
        ErrorType::Det,
        ErrorType::Prep,
        ErrorType::Verb,
        ErrorType::Tense,
        ErrorType::NNum,
        ErrorType::Noun,
        ErrorType::Pron,
        ErrorType::Other,
    ];

    /// The seven categories shown in error-type tables (everything but `Other`).
    pub const REPORTED: [ErrorType; 7] = [
        ErrorType::Det,
        ErrorType::Prep,
        ErrorType::Verb,
        ErrorType::Tense,
        ErrorType::NNum,
        ErrorType::Noun,
        ErrorType::Pron,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::Det => "Det",
            ErrorType::Prep => "Prep",
            ErrorType::Verb => "Verb",
            ErrorType::Tense => "Tense",
            ErrorType::NNum => "NNum",
            ErrorType::Noun => "Noun",
            ErrorType::Pron => "Pron",
            ErrorType::Other => "Other",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ErrorType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown error type `{s}`")))
    }
}

/// CEFR proficiency level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    A1,
    A2,
    B1,
    B2,
    C1,
    C2,
}

impl Level {
    pub const ALL: [Level; 6] = [Level::A1, Level::A2, Level::B1, Level::B2, Level::C1, Level::C2];
    /// Levels that appear in generated learner data.
    pub const STUDIED: [Level; 5] = [Level::A2, Level::B1, Level::B2, Level::C1, Level::C2];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::A1 => "A1",
            Level::A2 => "A2",
            Level::B1 => "B1",
            Level::B2 => "B2",
            Level::C1 => "C1",
            Level::C2 => "C2",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown CEFR level `{s}`")))
    }
}

/// First language of the writer, by two-letter code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum L1 {
    #[serde(rename = "AR")]
    Arabic,
    #[serde(rename = "CN")]
    Chinese,
    #[serde(rename = "FR")]
    French,
    #[serde(rename = "DE")]
    German,
    #[serde(rename = "GR")]
    Greek,
    #[serde(rename = "IT")]
    Italian,
    #[serde(rename = "PL")]
    Polish,
    #[serde(rename = "PT")]
    Portuguese,
    #[serde(rename = "RU")]
    Russian,
    #[serde(rename = "ES")]
    Spanish,
    #[serde(rename = "CH")]
    SwissGerman,
    #[serde(rename = "TR")]
    Turkish,
    #[serde(rename = "OT")]
    Other,
}

impl L1 {
    pub const ALL: [L1; 13] = [
        L1::Arabic,
        L1::Chinese,
        L1::French,
        L1::German,
        L1::Greek,
        L1::Italian,
        L1::Polish,
        L1::Portuguese,
        L1::Russian,
        L1::Spanish,
        L1::SwissGerman,
        L1::Turkish,
        L1::Other,
    ];

    pub fn code(self) -> &'static str {
        match self {
            L1::Arabic => "AR",
            L1::Chinese => "CN",
            L1::French => "FR",
            L1::German => "DE",
            L1::Greek => "GR",
            L1::Italian => "IT",
            L1::Polish => "PL",
            L1::Portuguese => "PT",
            L1::Russian => "RU",
            L1::Spanish => "ES",
            L1::SwissGerman => "CH",
            L1::Turkish => "TR",
            L1::Other => "OT",
        }
    }
}

impl fmt::Display for L1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for L1 {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        L1::ALL
            .iter()
            .copied()
            .find(|l| l.code() == s)
            .ok_or_else(|| Error::Validation(format!("unknown L1 code `{s}`")))
    }
}

/// A source-anchored correction: replace `source[start..end]` with `replacement`.
///
/// `start == end` is an insertion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
    #[serde(rename = "type")]
    pub etype: ErrorType,
}

impl Edit {
    pub fn new(start: usize, end: usize, replacement: Vec<String>, etype: ErrorType) -> Self {
        Edit {
            start,
            end,
            replacement,
            etype,
        }
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }

    /// Same span and replacement, ignoring the type label.
    pub fn same_correction(&self, other: &Edit) -> bool {
        self.start == other.start && self.end == other.end && self.replacement == other.replacement
    }
}

/// Checks that edits are in bounds, sorted by `(start, end)` and non-overlapping.
/// Two insertions at the same position count as overlapping.
pub fn validate_edits(source_len: usize, edits: &[Edit]) -> Result<()> {
    for e in edits {
        if e.start > e.end || e.end > source_len {
            return Err(Error::Validation(format!(
                "edit span {}..{} out of bounds for source of length {source_len}",
                e.start, e.end
            )));
        }
    }
    for pair in edits.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.start < a.end || (b.start, b.end) <= (a.start, a.end) {
            return Err(Error::Validation(format!(
                "edits {}..{} and {}..{} overlap or are out of order",
                a.start, a.end, b.start, b.end
            )));
        }
    }
    Ok(())
}

/// Applies validated edits left to right.
pub fn apply_edits(source: &[String], edits: &[Edit]) -> Result<Vec<String>> {
    validate_edits(source.len(), edits)?;
    let mut out = Vec::with_capacity(source.len() + edits.len());
    let mut cursor = 0;
    for e in edits {
        out.extend_from_slice(&source[cursor..e.start]);
        out.extend(e.replacement.iter().cloned());
        cursor = e.end;
    }
    out.extend_from_slice(&source[cursor..]);
    Ok(out)
}

/// One learner sentence with its correction and writer metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub edits: Vec<Edit>,
    pub l1: L1,
    pub level: Level,
}

impl AnnotatedSentence {
    /// Verifies the edit invariants and that the edits turn source into target.
    pub fn validate(&self) -> Result<()> {
        let applied = apply_edits(&self.source, &self.edits)?;
        if applied != self.target {
            return Err(Error::Validation(format!(
                "edits do not reproduce the target: `{}` vs `{}`",
                applied.join(" "),
                self.target.join(" ")
            )));
        }
        Ok(())
    }

    pub fn matches(&self, key: &SubsetKey) -> bool {
        key.level.map_or(true, |l| l == self.level) && key.l1.map_or(true, |l| l == self.l1)
    }
}

/// Metadata filter selecting a Level, L1 or L1-Level subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetKey {
    pub level: Option<Level>,
    pub l1: Option<L1>,
}

impl SubsetKey {
    pub fn new(level: Option<Level>, l1: Option<L1>) -> Result<Self> {
        if level.is_none() && l1.is_none() {
            return Err(Error::Validation(
                "subset key needs a level, an L1, or both".into(),
            ));
        }
        Ok(SubsetKey { level, l1 })
    }

    pub fn level(level: Level) -> Self {
        SubsetKey {
            level: Some(level),
            l1: None,
        }
    }

    pub fn l1(l1: L1) -> Self {
        SubsetKey {
            level: None,
            l1: Some(l1),
        }
    }

    pub fn l1_level(l1: L1, level: Level) -> Self {
        SubsetKey {
            level: Some(level),
            l1: Some(l1),
        }
    }
}

impl fmt::Display for SubsetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.l1, self.level) {
            (Some(l1), Some(level)) => write!(f, "{l1}-{level}"),
            (Some(l1), None) => write!(f, "{l1}"),
            (None, Some(level)) => write!(f, "{level}"),
            (None, None) => f.write_str("?"),
        }
    }
}

impl FromStr for SubsetKey {
    type Err = Error;
    /// Accepts `ES`, `B1` or `ES-B1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once('-') {
            return SubsetKey::new(Some(b.parse()?), Some(a.parse()?));
        }
        if let Ok(level) = s.parse::<Level>() {
            return Ok(SubsetKey::level(level));
        }
        s.parse::<L1>().map(SubsetKey::l1)
    }
}

impl Serialize for SubsetKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SubsetKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

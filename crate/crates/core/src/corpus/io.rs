//! Corpus JSON Lines files and M2 gold annotations.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{validate_edits, AnnotatedSentence, Edit, ErrorType};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdit {
    start: usize,
    end: usize,
    replacement: Vec<String>,
    #[serde(rename = "type")]
    etype: String,
}

#[derive(Deserialize)]
struct RawSentence {
    source: Vec<String>,
    target: Vec<String>,
    edits: Vec<RawEdit>,
    l1: String,
    level: String,
}

#[derive(Serialize)]
struct OutSentence<'a> {
    source: &'a [String],
    target: &'a [String],
    edits: &'a [Edit],
    l1: &'a str,
    level: &'a str,
}

pub fn write_corpus<W: Write>(corpus: &[AnnotatedSentence], mut w: W) -> Result<()> {
    for s in corpus {
        let out = OutSentence {
            source: &s.source,
            target: &s.target,
            edits: &s.edits,
            l1: s.l1.code(),
            level: s.level.as_str(),
        };
        serde_json::to_writer(&mut w, &out)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &[AnnotatedSentence], path: impl AsRef<Path>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_corpus(corpus, BufWriter::new(f))
}

/// Reads a JSONL corpus. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn read_corpus<R: Read>(r: R) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSentence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let at_line = |e: Error| Error::Validation(format!("line {lineno}: {e}"));
        let edits = raw
            .edits
            .into_iter()
            .map(|e| Ok(Edit::new(e.start, e.end, e.replacement, e.etype.parse()?)))
            .collect::<Result<Vec<_>>>()
            .map_err(at_line)?;
        let sentence = AnnotatedSentence {
            source: raw.source,
            target: raw.target,
            edits,
            l1: raw.l1.parse().map_err(at_line)?,
            level: raw.level.parse().map_err(at_line)?,
        };
        sentence.validate().map_err(at_line)?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>> {
    read_corpus(fs::File::open(path)?)
}

/// A source sentence with its gold edits, as read from an M2 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSentence {
    pub source: Vec<String>,
    pub edits: Vec<Edit>,
}

impl From<&AnnotatedSentence> for GoldSentence {
    fn from(s: &AnnotatedSentence) -> Self {
        GoldSentence {
            source: s.source.clone(),
            edits: s.edits.clone(),
        }
    }
}

/// Maps an M2 type label onto our categories. Accepts our own names and
/// Errant-style labels such as `R:VERB:SVA`.
fn m2_type(label: &str) -> ErrorType {
    if let Ok(t) = label.parse::<ErrorType>() {
        return t;
    }
    let upper = label.to_ascii_uppercase();
    let body = upper.split_once(':').map_or(upper.as_str(), |(_, rest)| rest);
    match body {
        "DET" => ErrorType::Det,
        "PREP" => ErrorType::Prep,
        "VERB:TENSE" => ErrorType::Tense,
        "VERB:SVA" | "VERB:FORM" | "VERB:INFL" | "VERB" => ErrorType::Verb,
        "NOUN:NUM" => ErrorType::NNum,
        "NOUN" | "NOUN:INFL" | "NOUN:POSS" => ErrorType::Noun,
        "PRON" => ErrorType::Pron,
        _ => ErrorType::Other,
    }
}

/// Parses M2 text: `S` lines followed by `A start end|||type|||correction|||REQUIRED|||-NONE-|||annotator`.
/// Only annotator 0 is accepted; `noop` annotations are skipped.
pub fn parse_m2(text: &str) -> Result<Vec<GoldSentence>> {
    let mut out: Vec<GoldSentence> = Vec::new();
    let mut current: Option<(GoldSentence, usize)> = None;
    let finish = |cur: Option<(GoldSentence, usize)>, out: &mut Vec<GoldSentence>| -> Result<()> {
        if let Some((mut g, line)) = cur {
            g.edits.sort_by_key(|e| (e.start, e.end));
            validate_edits(g.source.len(), &g.edits).map_err(|e| Error::Validation(format!("sentence at line {line}: {e}")))?;
            out.push(g);
        }
        Ok(())
    };
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end();
        if line.is_empty() {
            finish(current.take(), &mut out)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("S") {
            finish(current.take(), &mut out)?;
            let source = rest.split_whitespace().map(str::to_string).collect();
            current = Some((GoldSentence { source, edits: Vec::new() }, lineno));
        } else if let Some(rest) = line.strip_prefix("A ") {
            let parse_err = |message: String| Error::Parse { line: lineno, message };
            let (gold, _) = current
                .as_mut()
                .ok_or_else(|| parse_err("annotation before any S line".into()))?;
            let fields: Vec<&str> = rest.split("|||").collect();
            if fields.len() != 6 {
                return Err(parse_err(format!("expected 6 `|||` fields, found {}", fields.len())));
            }
            let annotator: usize = fields[5]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad annotator id `{}`", fields[5])))?;
            if annotator != 0 {
                return Err(Error::Validation(format!(
                    "line {lineno}: annotator {annotator} found; only single-annotator (id 0) gold is supported"
                )));
            }
            if fields[1].eq_ignore_ascii_case("noop") {
                continue;
            }
            let mut span = fields[0].split_whitespace();
            let mut num = || -> Result<usize> {
                span.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(format!("bad span `{}`", fields[0])))
            };
            let (start, end) = (num()?, num()?);
            let correction = fields[2].trim();
            let replacement = if correction == "-NONE-" || correction.is_empty() {
                Vec::new()
            } else {
                correction.split_whitespace().map(str::to_string).collect()
            };
            gold.edits.push(Edit::new(start, end, replacement, m2_type(fields[1])));
        } else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("unrecognised line `{line}`"),
            });
        }
    }
    finish(current.take(), &mut out)?;
    Ok(out)
}

pub fn write_m2<W: Write>(golds: &[GoldSentence], mut w: W) -> Result<()> {
    for g in golds {
        writeln!(w, "S {}", g.source.join(" "))?;
        if g.edits.is_empty() {
            writeln!(w, "A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||0")?;
        }
        for e in &g.edits {
            let corr = if e.replacement.is_empty() {
                "-NONE-".to_string()
            } else {
                e.replacement.join(" ")
            };
            writeln!(w, "A {} {}|||{}|||{}|||REQUIRED|||-NONE-|||0", e.start, e.end, e.etype, corr)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

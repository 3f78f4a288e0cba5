//! MaxMatch (M2) scoring, F-beta, error typing and per-type reports.

mod classify;
mod lattice;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use classify::classify_edit;
pub use lattice::{build_lattice, max_match, EdgeKind, EditLattice, LatticeEdge, MatchResult};

use crate::corpus::{tokenize, Edit, ErrorType};
use crate::error::{Error, Result};

/// Unchanged tokens allowed between the parts of a merged edit.
pub const DEFAULT_MERGE_WINDOW: usize = 2;
pub const DEFAULT_BETA: f64 = 0.5;

/// `(1+b^2) P R / (b^2 P + R)`, or 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Result<f64> {
    for (name, v) in [("precision", precision), ("recall", recall)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} {v} is outside [0, 1]")));
        }
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::OutOfRange(format!("beta {beta} must be positive")));
    }
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * precision * recall / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub beta: f64,
}

impl MetricReport {
    /// Precision is 1 when nothing was proposed, recall is 1 when nothing
    /// was to be found.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, beta: f64) -> Result<Self> {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Ok(MetricReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_beta: f_beta(precision, recall, beta)?,
            beta,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table; ratios in percent.
    pub fn to_table(&self) -> String {
        let label = format!("F{}", self.beta);
        format!(
            "{:>6} {:>6} {:>6} {:>7} {:>7} {:>7}\n{:>6} {:>6} {:>6} {:>7.2} {:>7.2} {:>7.2}\n",
            "TP",
            "FP",
            "FN",
            "Prec",
            "Rec",
            label,
            self.tp,
            self.fp,
            self.fn_,
            self.precision * 100.0,
            self.recall * 100.0,
            self.f_beta * 100.0
        )
    }
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b} sentences")));
    }
    Ok(())
}

/// Matches every hypothesis against its gold edits.
pub fn match_corpus(sources: &[Vec<String>], hypotheses: &[Vec<String>], golds: &[Vec<Edit>], merge_window: usize) -> Result<Vec<MatchResult>> {
    check_lengths("sources/hypotheses", sources.len(), hypotheses.len())?;
    check_lengths("sources/golds", sources.len(), golds.len())?;
    sources
        .iter()
        .zip(hypotheses)
        .zip(golds)
        .enumerate()
        .map(|(k, ((s, h), g))| {
            max_match(&build_lattice(s, h, merge_window), g).map_err(|e| Error::Validation(format!("sentence {k}: {e}")))
        })
        .collect()
}

/// Micro-averaged corpus score: counts are summed before ratios.
pub fn score_corpus(
    sources: &[Vec<String>],
    hypotheses: &[Vec<String>],
    golds: &[Vec<Edit>],
    beta: f64,
    merge_window: usize,
) -> Result<MetricReport> {
    let matches = match_corpus(sources, hypotheses, golds, merge_window)?;
    let (tp, fp, fn_) = matches.iter().fold((0, 0, 0), |(a, b, c), m| (a + m.tp, b + m.fp, c + m.fn_));
    MetricReport::from_counts(tp, fp, fn_, beta)
}

/// Per-type counts from one matching pass: a matched edit counts for its
/// gold type, an unmatched proposal for its classified type, an unmatched
/// gold edit for its own type.
pub fn per_type_counts(matches: &[MatchResult], golds: &[Vec<Edit>]) -> BTreeMap<ErrorType, (usize, usize, usize)> {
    let mut out: BTreeMap<ErrorType, (usize, usize, usize)> = BTreeMap::new();
    for (m, gold) in matches.iter().zip(golds) {
        for (e, g) in m.chosen.iter().zip(&m.chosen_gold) {
            let entry = out.entry(e.etype).or_default();
            if g.is_some() {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
        for (g, hit) in gold.iter().zip(&m.gold_matched) {
            if !hit {
                out.entry(g.etype).or_default().2 += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDelta {
    pub etype: ErrorType,
    pub gold_count: usize,
    pub system: MetricReport,
    pub baseline: MetricReport,
    /// `100 * (F(system) - F(baseline))`
    pub delta_points: f64,
}

/// Per-type F-beta difference between two systems on the same gold. Types
/// without gold edits are left out.
pub fn per_type_report(
    sources: &[Vec<String>],
    system: &[Vec<String>],
    baseline: &[Vec<String>],
    golds: &[Vec<Edit>],
    beta: f64,
    merge_window: usize,
) -> Result<Vec<TypeDelta>> {
    check_lengths("system/baseline", system.len(), baseline.len())?;
    let sys = per_type_counts(&match_corpus(sources, system, golds, merge_window)?, golds);
    let base = per_type_counts(&match_corpus(sources, baseline, golds, merge_window)?, golds);
    let mut gold_counts: BTreeMap<ErrorType, usize> = BTreeMap::new();
    for e in golds.iter().flatten() {
        *gold_counts.entry(e.etype).or_default() += 1;
    }
    gold_counts
        .into_iter()
        .map(|(t, n)| {
            let (a, b, c) = sys.get(&t).copied().unwrap_or_default();
            let s = MetricReport::from_counts(a, b, c, beta)?;
            let (a, b, c) = base.get(&t).copied().unwrap_or_default();
            let r = MetricReport::from_counts(a, b, c, beta)?;
            Ok(TypeDelta {
                etype: t,
                gold_count: n,
                delta_points: 100.0 * (s.f_beta - r.f_beta),
                system: s,
                baseline: r,
            })
        })
        .collect()
}

/// One sentence per line. In tokenized mode lines are split on whitespace;
/// otherwise punctuation is split off as well.
pub fn read_hypotheses(text: &str, tokenized: bool) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| {
            if tokenized {
                l.split_whitespace().map(str::to_string).collect()
            } else {
                tokenize(l)
            }
        })
        .collect()
}

/// Renders per-type deltas as an aligned table.
pub fn type_table(rows: &[TypeDelta]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:>5} {:>8} {:>8} {:>8}", "type", "gold", "system", "base", "delta");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} {:>5} {:>8.1} {:>8.1} {:>+8.1}",
            r.etype.as_str(),
            r.gold_count,
            r.system.f_beta * 100.0,
            r.baseline.f_beta * 100.0,
            r.delta_points
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn f_beta_examples() {
        assert!((f_beta(0.604, 0.370, 0.5).unwrap() - 0.536).abs() < 0.0005);
        assert!((f_beta(0.573, 0.299, 0.5).unwrap() - 0.484).abs() < 0.0005);
        for x in [0.0, 0.3, 1.0] {
            for b in [0.5, 1.0, 2.0] {
                assert!((f_beta(x, x, b).unwrap() - x).abs() < 1e-12);
            }
        }
        assert!(f_beta(1.2, 0.5, 0.5).is_err());
        assert!(f_beta(0.5, -0.1, 0.5).is_err());
    }

    #[test]
    fn empty_corpus_is_perfect() {
        let r = score_corpus(&[], &[], &[], 0.5, 2).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 0));
        assert_eq!((r.precision, r.recall, r.f_beta), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_aggregation() {
        let r = MetricReport::from_counts(1, 1, 1, 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (0.5, 0.5));
        assert!((r.f_beta - 0.5).abs() < 1e-12);
        let sources = vec![toks("he go home"), toks("I saw dog")];
        let hyps = vec![toks("he goes home"), toks("I seen dog")];
        let golds = vec![
            vec![Edit::new(1, 2, toks("goes"), ErrorType::Verb)],
            vec![Edit::new(2, 2, toks("a"), ErrorType::Det)],
        ];
        let r = score_corpus(&sources, &hyps, &golds, 0.5, 2).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
        assert!((r.f_beta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noop_system_conventions() {
        let sources = vec![toks("he go home")];
        let golds = vec![vec![Edit::new(1, 2, toks("goes"), ErrorType::Verb)]];
        let r = score_corpus(&sources, &sources, &golds, 0.5, 2).unwrap();
        assert_eq!((r.precision, r.recall, r.f_beta), (1.0, 0.0, 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(score_corpus(&[toks("a")], &[], &[vec![]], 0.5, 2).is_err());
    }

    #[test]
    fn type_report_examples() {
        let sources = vec![toks("I like music"), toks("she has cat")];
        let golds = vec![
            vec![Edit::new(2, 2, toks("the"), ErrorType::Det)],
            vec![Edit::new(2, 2, toks("a"), ErrorType::Det)],
        ];
        let fixed = vec![toks("I like the music"), toks("she has a cat")];
        let rows = per_type_report(&sources, &fixed, &sources, &golds, 0.5, 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].etype, ErrorType::Det);
        assert!((rows[0].delta_points - 100.0).abs() < 1e-9);
        let same = per_type_report(&sources, &fixed, &fixed, &golds, 0.5, 2).unwrap();
        assert!(same.iter().all(|r| r.delta_points == 0.0));
        assert!(!rows.iter().any(|r| r.etype == ErrorType::Prep));
    }

    #[test]
    fn report_renderings() {
        let r = MetricReport::from_counts(3, 1, 2, 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["fn"], 2);
        let t = r.to_table();
        assert!(t.contains("F0.5") && t.contains("75.00"));
    }

    #[test]
    fn hypotheses_modes() {
        assert_eq!(read_hypotheses("a b.\nc", true), vec![toks("a b."), toks("c")]);
        assert_eq!(read_hypotheses("a b.", false), vec![toks("a b .")]);
    }
}

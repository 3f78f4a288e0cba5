//! Learner-corpus data model, synthetic generation, subset selection and
//! corpus statistics.

pub mod generator;
pub mod io;
pub mod select;
pub mod templates;
pub mod types;

pub use generator::{
    default_level_rate, generate_corpus, l1_tendencies, level_multipliers, level_plural_to_singular, ErrorOp, GeneratorProfile, OpWeights,
    ProfileEntry, TransferHabits,
};
pub use io::{load_corpus, parse_m2, read_corpus, save_corpus, write_corpus, write_m2, GoldSentence};
pub use select::{default_random_weights, sample_random, select_indices, select_subset, split, RandomWeights};
pub use templates::TemplateBank;
pub use types::{apply_edits, validate_edits, AnnotatedSentence, Edit, ErrorType, Level, SubsetKey, L1};

use crate::error::{Error, Result};

/// Errors per 100 source words: `100 * edits / source tokens`.
pub fn error_rate(sentences: &[AnnotatedSentence]) -> Result<f64> {
    let tokens: usize = sentences.iter().map(|s| s.source.len()).sum();
    if tokens == 0 {
        return Err(Error::UndefinedStatistic(
            "error rate of a corpus with no source tokens".into(),
        ));
    }
    let edits: usize = sentences.iter().map(|s| s.edits.len()).sum();
    Ok(100.0 * edits as f64 / tokens as f64)
}

/// Whitespace tokenization with ASCII punctuation split off into separate
/// tokens. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.push(c);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(src_len: usize, n_edits: usize) -> AnnotatedSentence {
        let source: Vec<String> = (0..src_len).map(|i| format!("w{i}")).collect();
        let edits: Vec<Edit> = (0..n_edits)
            .map(|i| Edit::new(2 * i, 2 * i + 1, vec!["x".into()], ErrorType::Other))
            .collect();
        let target = apply_edits(&source, &edits).unwrap();
        AnnotatedSentence {
            source,
            target,
            edits,
            l1: L1::Spanish,
            level: Level::B1,
        }
    }

    #[test]
    fn error_rate_hand_counts() {
        assert_eq!(error_rate(&[sentence(10, 0)]).unwrap(), 0.0);
        assert_eq!(error_rate(&[sentence(40, 2)]).unwrap(), 5.0);
        let three = [sentence(10, 1), sentence(20, 2), sentence(10, 0)];
        assert_eq!(error_rate(&three).unwrap(), 7.5);
    }

    #[test]
    fn error_rate_without_tokens_is_undefined() {
        assert!(matches!(error_rate(&[]), Err(Error::UndefinedStatistic(_))));
        assert!(matches!(error_rate(&[sentence(0, 0)]), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn tokenizer_detaches_punctuation() {
        assert_eq!(tokenize("Hello, world!  It's"), vec!["Hello", ",", "world", "!", "It", "'", "s"]);
        assert!(tokenize("   ").is_empty());
    }
}

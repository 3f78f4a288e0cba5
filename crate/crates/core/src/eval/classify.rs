//! Rule-based error typing without a part-of-speech tagger.
//!
//! Rules, applied in order to the lowercased original span `o` and
//! correction `c`:
//!
//! | # | condition | type |
//! |---|---|---|
//! | 1 | every token of `o` and `c` is a determiner | Det |
//! | 2 | every token is a preposition | Prep |
//! | 3 | every token is a pronoun | Pron |
//! | 4 | one-for-one word, both forms of one known verb, and the previous word is not a determiner or adjective; past vs non-past | Tense |
//! | 5 | as 4, same tense, different agreement (`go`/`goes`, `is`/`are`) | Verb |
//! | 6 | one-for-one word, singular/plural of one noun (lexicon, or `+s`, `+es`, `y/ies`) | NNum |
//! | 7 | one-for-one word, unknown stem `x` vs `x+ed`/`x+d` | Tense |
//! | 8 | one-for-one word, two different known nouns | Noun |
//! | 9 | anything else | Other |

use crate::corpus::templates::{MASS_NOUNS, OBJECT_NOUNS, PLACE_NOUNS, SUBJECT_NOUNS, VERBS};
use crate::corpus::{Edit, ErrorType};

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our", "their", "some",
    "any", "no", "every", "each",
];

const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "to", "for", "of", "with", "from", "by", "about", "into", "onto", "under", "over", "during",
    "since", "until", "between", "among", "through", "after", "before", "near", "across", "without",
];

const PRONOUNS: &[&str] = &[
    "i", "me", "you", "he", "him", "she", "it", "we", "us", "they", "them", "myself", "yourself", "himself",
    "herself", "itself", "ourselves", "themselves", "mine", "yours", "hers", "ours", "theirs",
];

const ADJECTIVES: &[&str] = &["big", "small", "red", "old", "new", "nice", "cheap", "beautiful"];

/// `(lemma, form, past, third-person-singular)` for verbs outside the
/// template lexicon.
const EXTRA_VERB_FORMS: &[(&str, &str, bool, Option<bool>)] = &[
    ("be", "am", false, Some(false)),
    ("be", "is", false, Some(true)),
    ("be", "are", false, Some(false)),
    ("be", "was", true, Some(true)),
    ("be", "were", true, Some(false)),
    ("have", "have", false, Some(false)),
    ("have", "has", false, Some(true)),
    ("have", "had", true, None),
    ("do", "do", false, Some(false)),
    ("do", "does", false, Some(true)),
    ("do", "did", true, None),
    ("go", "go", false, Some(false)),
    ("go", "goes", false, Some(true)),
    ("go", "went", true, None),
    ("play", "play", false, Some(false)),
    ("play", "plays", false, Some(true)),
    ("play", "played", true, None),
    ("live", "live", false, Some(false)),
    ("live", "lives", false, Some(true)),
    ("live", "lived", true, None),
    ("work", "work", false, Some(false)),
    ("work", "works", false, Some(true)),
    ("work", "worked", true, None),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct VerbForm {
    past: bool,
    /// `None` for past forms shared by all persons.
    third_singular: Option<bool>,
}

fn verb_forms(word: &str) -> Vec<(String, VerbForm)> {
    let mut out = Vec::new();
    for &(base, s3, past) in VERBS {
        if word == base {
            out.push((base.to_string(), VerbForm { past: false, third_singular: Some(false) }));
        }
        if word == s3 {
            out.push((base.to_string(), VerbForm { past: false, third_singular: Some(true) }));
        }
        if word == past {
            out.push((base.to_string(), VerbForm { past: true, third_singular: None }));
        }
    }
    for &(lemma, form, past, s3) in EXTRA_VERB_FORMS {
        if word == form {
            out.push((lemma.to_string(), VerbForm { past, third_singular: s3 }));
        }
    }
    out
}

fn noun_number(word: &str) -> Option<(&'static str, bool)> {
    for &(sg, pl) in OBJECT_NOUNS.iter().chain(SUBJECT_NOUNS) {
        if word == sg {
            return Some((sg, false));
        }
        if word == pl {
            return Some((sg, true));
        }
    }
    None
}

fn is_known_noun(word: &str) -> bool {
    noun_number(word).is_some() || MASS_NOUNS.contains(&word) || PLACE_NOUNS.contains(&word)
}

/// `a` and `b` are singular/plural spellings of one stem by suffix rules.
fn plural_pair(a: &str, b: &str) -> bool {
    let one_way = |sg: &str, pl: &str| {
        pl == format!("{sg}s")
            || pl == format!("{sg}es")
            || (sg.ends_with('y') && sg.len() > 1 && pl == format!("{}ies", &sg[..sg.len() - 1]))
    };
    one_way(a, b) || one_way(b, a)
}

fn past_pair(a: &str, b: &str) -> bool {
    let one_way = |base: &str, past: &str| past == format!("{base}ed") || past == format!("{base}d");
    one_way(a, b) || one_way(b, a)
}

fn all_in(words: &[String], lexicon: &[&str]) -> bool {
    words.iter().all(|w| lexicon.contains(&w.as_str()))
}

/// Assigns one of the reported categories (or `Other`) to an edit using
/// lexicons, suffix rules and the preceding source word.
pub fn classify_edit(edit: &Edit, source: &[String]) -> ErrorType {
    let lower = |ws: &[String]| ws.iter().map(|w| w.to_lowercase()).collect::<Vec<String>>();
    let start = edit.start.min(source.len());
    let end = edit.end.clamp(start, source.len());
    let orig = lower(&source[start..end]);
    let corr = lower(&edit.replacement);
    let both: Vec<String> = orig.iter().chain(corr.iter()).cloned().collect();
    if both.is_empty() {
        return ErrorType::Other;
    }
    if all_in(&both, DETERMINERS) {
        return ErrorType::Det;
    }
    if all_in(&both, PREPOSITIONS) {
        return ErrorType::Prep;
    }
    if all_in(&both, PRONOUNS) {
        return ErrorType::Pron;
    }
    if orig.len() != 1 || corr.len() != 1 {
        return ErrorType::Other;
    }
    let (o, c) = (orig[0].as_str(), corr[0].as_str());
    if o == c {
        return ErrorType::Other;
    }
    let prev = start.checked_sub(1).map(|i| source[i].to_lowercase());
    let nominal_context = prev
        .as_deref()
        .is_some_and(|p| DETERMINERS.contains(&p) || ADJECTIVES.contains(&p));
    if !nominal_context {
        let (vo, vc) = (verb_forms(o), verb_forms(c));
        for (lo, fo) in &vo {
            for (lc, fc) in &vc {
                if lo == lc {
                    return if fo.past != fc.past { ErrorType::Tense } else { ErrorType::Verb };
                }
            }
        }
    }
    match (noun_number(o), noun_number(c)) {
        (Some((a, pa)), Some((b, pb))) if a == b && pa != pb => return ErrorType::NNum,
        _ => {}
    }
    if !nominal_context && past_pair(o, c) {
        return ErrorType::Tense;
    }
    if plural_pair(o, c) {
        return ErrorType::NNum;
    }
    if is_known_noun(o) && is_known_noun(c) {
        return ErrorType::Noun;
    }
    ErrorType::Other
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn classify(src: &str, start: usize, end: usize, repl: &str) -> ErrorType {
        classify_edit(&Edit::new(start, end, toks(repl), ErrorType::Other), &toks(src))
    }

    #[test]
    fn documented_examples() {
        assert_eq!(classify("I saw a dog", 2, 3, "the"), ErrorType::Det);
        assert_eq!(classify("he go home", 1, 2, "goes"), ErrorType::Verb);
        assert_eq!(classify("two dog bark", 1, 2, "dogs"), ErrorType::NNum);
    }

    #[test]
    fn insertions_and_deletions() {
        assert_eq!(classify("I like music", 2, 2, "the"), ErrorType::Det);
        assert_eq!(classify("I like the music", 2, 3, ""), ErrorType::Det);
        assert_eq!(classify("is cold", 0, 0, "it"), ErrorType::Pron);
        assert_eq!(classify("we met in monday", 2, 3, "on"), ErrorType::Prep);
    }

    #[test]
    fn tense_versus_agreement() {
        assert_eq!(classify("she like tea", 1, 2, "likes"), ErrorType::Verb);
        assert_eq!(classify("she likes tea", 1, 2, "liked"), ErrorType::Tense);
        assert_eq!(classify("they was here", 1, 2, "were"), ErrorType::Verb);
        assert_eq!(classify("it is cold", 1, 2, "was"), ErrorType::Tense);
        assert_eq!(classify("they jump", 1, 2, "jumped"), ErrorType::Tense);
    }

    #[test]
    fn context_separates_noun_from_verb() {
        assert_eq!(classify("he watch tv", 1, 2, "watches"), ErrorType::Verb);
        assert_eq!(classify("the watch", 1, 2, "watches"), ErrorType::NNum);
        assert_eq!(classify("the city", 1, 2, "cities"), ErrorType::NNum);
    }

    #[test]
    fn nouns_and_fallback() {
        assert_eq!(classify("I read a book", 3, 4, "letter"), ErrorType::Noun);
        assert_eq!(classify("very hot", 1, 2, "cold"), ErrorType::Other);
        assert_eq!(classify("a b c", 0, 2, "x y z"), ErrorType::Other);
    }
}

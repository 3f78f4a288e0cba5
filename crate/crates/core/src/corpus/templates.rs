//! Clean English sentences with the word-level annotations the error
//! injector needs (which token is an article, which verb agrees with which
//! subject, and so on).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `(singular, plural)` countable nouns used as objects.
pub(crate) const OBJECT_NOUNS: &[(&str, &str)] = &[
    ("book", "books"),
    ("apple", "apples"),
    ("car", "cars"),
    ("letter", "letters"),
    ("picture", "pictures"),
    ("dog", "dogs"),
    ("cat", "cats"),
    ("bag", "bags"),
    ("phone", "phones"),
    ("key", "keys"),
    ("ticket", "tickets"),
    ("flower", "flowers"),
    ("song", "songs"),
    ("game", "games"),
    ("shirt", "shirts"),
    ("cake", "cakes"),
    ("bike", "bikes"),
    ("box", "boxes"),
    ("dress", "dresses"),
    ("watch", "watches"),
    ("city", "cities"),
    ("story", "stories"),
    ("party", "parties"),
    ("computer", "computers"),
];

/// `(singular, plural)` nouns used as sentence subjects.
pub(crate) const SUBJECT_NOUNS: &[(&str, &str)] = &[
    ("teacher", "teachers"),
    ("student", "students"),
    ("friend", "friends"),
    ("neighbour", "neighbours"),
    ("doctor", "doctors"),
    ("girl", "girls"),
    ("boy", "boys"),
    ("brother", "brothers"),
    ("sister", "sisters"),
    ("cousin", "cousins"),
];

pub(crate) const MASS_NOUNS: &[&str] = &[
    "music",
    "water",
    "money",
    "information",
    "advice",
    "coffee",
    "bread",
    "furniture",
    "homework",
    "rice",
];

pub(crate) const PLACE_NOUNS: &[&str] = &[
    "park",
    "kitchen",
    "garden",
    "library",
    "station",
    "school",
    "office",
    "airport",
    "bus",
    "train",
    "beach",
    "street",
];

/// Usual preposition for each entry of [`PLACE_NOUNS`].
pub(crate) const PLACE_PREPOSITIONS: &[&str] = &[
    "in", "in", "in", "in", "at", "at", "at", "at", "on", "on", "on", "on",
];

/// Probability that a place phrase uses its noun's usual preposition.
const USUAL_PREPOSITION_P: f64 = 0.9;

/// `(base, third person singular, past)`.
pub(crate) const VERBS: &[(&str, &str, &str)] = &[
    ("like", "likes", "liked"),
    ("want", "wants", "wanted"),
    ("need", "needs", "needed"),
    ("visit", "visits", "visited"),
    ("watch", "watches", "watched"),
    ("clean", "cleans", "cleaned"),
    ("paint", "paints", "painted"),
    ("open", "opens", "opened"),
    ("carry", "carries", "carried"),
    ("wash", "washes", "washed"),
    ("love", "loves", "loved"),
    ("enjoy", "enjoys", "enjoyed"),
    ("use", "uses", "used"),
    ("cook", "cooks", "cooked"),
    ("buy", "buys", "bought"),
    ("see", "sees", "saw"),
    ("take", "takes", "took"),
    ("make", "makes", "made"),
    ("find", "finds", "found"),
    ("bring", "brings", "brought"),
    ("sell", "sells", "sold"),
];

pub(crate) const ADJECTIVES: &[&str] = &["big", "small", "red", "old", "new", "nice", "cheap", "beautiful"];

pub(crate) const STATE_PHRASES: &[&[&str]] = &[
    &["very", "hot"],
    &["very", "cold"],
    &["quiet"],
    &["busy"],
    &["noisy"],
    &["very", "nice"],
    &["warm"],
    &["dark"],
];

pub(crate) const PREPOSITIONS: &[&str] = &["in", "on", "at"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerbForm {
    Base,
    ThirdSingular,
    Past,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NounKind {
    Count,
    Mass,
    Place,
    Subject,
}

/// Annotation carried by each clean token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Word,
    Punct,
    Article,
    Possessive,
    Preposition,
    /// Expletive subject `it` in `it is ...` sentences.
    ExpletiveIt,
    Noun {
        lemma: usize,
        kind: NounKind,
        plural: bool,
        /// Index of the determiner in front of this noun phrase, if any.
        determiner: Option<usize>,
    },
    Verb {
        lemma: usize,
        form: VerbForm,
        subject_singular: bool,
    },
    Copula {
        past: bool,
        plural: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    /// Token indices where a bare noun phrase starts (an article could be
    /// inserted in front of them).
    pub bare_np_starts: Vec<usize>,
}

impl CleanSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A bank of clean sentences that corrupted learner sentences are drawn from.
#[derive(Debug, Clone, Default)]
pub struct TemplateBank {
    sentences: Vec<CleanSentence>,
}

impl TemplateBank {
    pub fn new(sentences: Vec<CleanSentence>) -> Self {
        TemplateBank { sentences }
    }

    /// Samples `size` sentences from the built-in grammar.
    pub fn from_grammar(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3a_11b2_9c4d_0f55);
        let sentences = (0..size).map(|_| sample_sentence(&mut rng)).collect();
        TemplateBank { sentences }
    }

    pub fn sentences(&self) -> &[CleanSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

struct Builder {
    tokens: Vec<String>,
    tags: Vec<Tag>,
    bare: Vec<usize>,
}

impl Builder {
    fn push(&mut self, word: &str, tag: Tag) -> usize {
        self.tokens.push(word.to_string());
        self.tags.push(tag);
        self.tokens.len() - 1
    }

    fn object_np<R: Rng>(&mut self, rng: &mut R) {
        let mass = rng.gen_bool(0.25);
        let plural = !mass && rng.gen_bool(0.5);
        let adjective = (!mass && rng.gen_bool(0.3)).then(|| *ADJECTIVES.choose(rng).unwrap());
        let (noun, lemma, kind) = if mass {
            let lemma = rng.gen_range(0..MASS_NOUNS.len());
            (MASS_NOUNS[lemma], lemma, NounKind::Mass)
        } else {
            let lemma = rng.gen_range(0..OBJECT_NOUNS.len());
            let (sg, pl) = OBJECT_NOUNS[lemma];
            (if plural { pl } else { sg }, lemma, NounKind::Count)
        };
        let first = adjective.unwrap_or(noun);
        let determiner = if mass || plural {
            rng.gen_bool(0.1).then(|| self.push("the", Tag::Article))
        } else {
            Some(match rng.gen_range(0..10) {
                0..=4 if !first.starts_with(['a', 'e', 'i', 'o', 'u']) => self.push("a", Tag::Article),
                0..=8 => self.push("the", Tag::Article),
                _ => self.push("my", Tag::Possessive),
            })
        };
        if determiner.is_none() {
            self.bare.push(self.tokens.len());
        }
        if let Some(adj) = adjective {
            self.push(adj, Tag::Word);
        }
        self.push(
            noun,
            Tag::Noun {
                lemma,
                kind,
                plural,
                determiner,
            },
        );
    }

    fn place_pp<R: Rng>(&mut self, rng: &mut R) {
        let lemma = rng.gen_range(0..PLACE_NOUNS.len());
        let usual = PLACE_PREPOSITIONS[lemma];
        let prep = if rng.gen_bool(USUAL_PREPOSITION_P) {
            usual
        } else {
            PREPOSITIONS.iter().copied().filter(|p| *p != usual).collect::<Vec<_>>().choose(rng).copied().unwrap()
        };
        self.push(prep, Tag::Preposition);
        let det = self.push("the", Tag::Article);
        self.push(
            PLACE_NOUNS[lemma],
            Tag::Noun {
                lemma,
                kind: NounKind::Place,
                plural: false,
                determiner: Some(det),
            },
        );
    }
}

fn sample_sentence<R: Rng>(rng: &mut R) -> CleanSentence {
    let mut b = Builder {
        tokens: Vec::new(),
        tags: Vec::new(),
        bare: Vec::new(),
    };
    let roll: f64 = rng.gen();
    if roll < 0.7 {
        // subject verb object [pp] .
        let singular = match rng.gen_range(0..10) {
            0..=5 => {
                let pronouns = [("he", true), ("she", true), ("i", false), ("you", false), ("we", false), ("they", false)];
                let (p, sg) = *pronouns.choose(rng).unwrap();
                b.push(p, Tag::Word);
                sg
            }
            _ => {
                let plural = rng.gen_bool(0.5);
                let det = if rng.gen_bool(0.7) {
                    b.push("the", Tag::Article)
                } else {
                    b.push("my", Tag::Possessive)
                };
                let lemma = rng.gen_range(0..SUBJECT_NOUNS.len());
                let (sg, pl) = SUBJECT_NOUNS[lemma];
                b.push(
                    if plural { pl } else { sg },
                    Tag::Noun {
                        lemma,
                        kind: NounKind::Subject,
                        plural,
                        determiner: Some(det),
                    },
                );
                !plural
            }
        };
        let lemma = rng.gen_range(0..VERBS.len());
        let (base, third, past) = VERBS[lemma];
        let (word, form) = if rng.gen_bool(0.5) {
            (past, VerbForm::Past)
        } else if singular {
            (third, VerbForm::ThirdSingular)
        } else {
            (base, VerbForm::Base)
        };
        b.push(
            word,
            Tag::Verb {
                lemma,
                form,
                subject_singular: singular,
            },
        );
        b.object_np(rng);
        if rng.gen_bool(0.6) {
            b.place_pp(rng);
        }
    } else if roll < 0.88 {
        // it is <state> [pp] .
        b.push("it", Tag::ExpletiveIt);
        let past = rng.gen_bool(0.5);
        b.push(if past { "was" } else { "is" }, Tag::Copula { past, plural: false });
        for w in *STATE_PHRASES.choose(rng).unwrap() {
            b.push(w, Tag::Word);
        }
        if rng.gen_bool(0.7) {
            b.place_pp(rng);
        }
    } else {
        // there is/are <np> <pp> .
        b.push("there", Tag::Word);
        let copula = b.push("is", Tag::Copula { past: false, plural: false });
        b.object_np(rng);
        let plural = matches!(b.tags.last(), Some(Tag::Noun { plural: true, .. }));
        let past = rng.gen_bool(0.5);
        b.tokens[copula] = match (past, plural) {
            (false, false) => "is",
            (false, true) => "are",
            (true, false) => "was",
            (true, true) => "were",
        }
        .into();
        b.tags[copula] = Tag::Copula { past, plural };
        b.place_pp(rng);
    }
    b.push(".", Tag::Punct);
    CleanSentence {
        tokens: b.tokens,
        tags: b.tags,
        bare_np_starts: b.bare,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_is_deterministic() {
        let a = TemplateBank::from_grammar(200, 5);
        let b = TemplateBank::from_grammar(200, 5);
        assert_eq!(a.sentences(), b.sentences());
        let c = TemplateBank::from_grammar(200, 6);
        assert_ne!(a.sentences(), c.sentences());
    }

    #[test]
    fn no_indefinite_article_before_vowel() {
        let bank = TemplateBank::from_grammar(3000, 1);
        for s in bank.sentences() {
            for w in s.tokens.windows(2) {
                if w[0] == "a" {
                    assert!(!w[1].starts_with(['a', 'e', 'i', 'o', 'u']), "{:?}", s.tokens);
                }
            }
            assert_eq!(s.tokens.len(), s.tags.len());
            assert_eq!(s.tokens.last().map(String::as_str), Some("."));
        }
    }

    #[test]
    fn place_phrases_prefer_the_usual_preposition() {
        assert_eq!(PLACE_NOUNS.len(), PLACE_PREPOSITIONS.len());
        let bank = TemplateBank::from_grammar(4000, 9);
        let (mut usual, mut total) = (0usize, 0usize);
        for s in bank.sentences() {
            for (i, tag) in s.tags.iter().enumerate() {
                if *tag == Tag::Preposition {
                    let lemma = PLACE_NOUNS.iter().position(|n| *n == s.tokens[i + 2]).unwrap();
                    total += 1;
                    usual += (PLACE_PREPOSITIONS[lemma] == s.tokens[i]) as usize;
                }
            }
        }
        let share = usual as f64 / total as f64;
        assert!((share - USUAL_PREPOSITION_P).abs() < 0.03, "{share}");
    }

    #[test]
    fn determiner_links_point_at_determiners() {
        let bank = TemplateBank::from_grammar(1000, 2);
        for s in bank.sentences() {
            for tag in &s.tags {
                if let Tag::Noun { determiner: Some(d), .. } = tag {
                    assert!(matches!(s.tags[*d], Tag::Article | Tag::Possessive));
                }
            }
            for &i in &s.bare_np_starts {
                assert!(i == 0 || !matches!(s.tags[i - 1], Tag::Article | Tag::Possessive));
            }
        }
    }
}

//! Synthetic learner corpus: clean template sentences corrupted with
//! L1- and level-dependent error operations. Every corruption is recorded as
//! a source-anchored gold edit, so applying the edits restores the template.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::templates::{CleanSentence, NounKind, Tag, TemplateBank, VerbForm, OBJECT_NOUNS, PREPOSITIONS, SUBJECT_NOUNS, VERBS};
use super::types::{AnnotatedSentence, Edit, ErrorType, Level, L1};
use crate::error::{Error, Result};

/// The corruption operations the generator can apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorOp {
    ArticleDrop,
    ArticleInsert,
    PrepositionSwap,
    VerbAgreement,
    TenseShift,
    NounNumber,
    PronounDrop,
}

impl ErrorOp {
    pub const ALL: [ErrorOp; 7] = [
        ErrorOp::ArticleDrop,
        ErrorOp::ArticleInsert,
        ErrorOp::PrepositionSwap,
        ErrorOp::VerbAgreement,
        ErrorOp::TenseShift,
        ErrorOp::NounNumber,
        ErrorOp::PronounDrop,
    ];

    pub fn error_type(self) -> ErrorType {
        match self {
            ErrorOp::ArticleDrop | ErrorOp::ArticleInsert => ErrorType::Det,
            ErrorOp::PrepositionSwap => ErrorType::Prep,
            ErrorOp::VerbAgreement => ErrorType::Verb,
            ErrorOp::TenseShift => ErrorType::Tense,
            ErrorOp::NounNumber => ErrorType::NNum,
            ErrorOp::PronounDrop => ErrorType::Pron,
        }
    }
}

/// Relative weights of the error operations for one profile entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpWeights {
    pub article_drop: f64,
    pub article_insert: f64,
    pub preposition_swap: f64,
    pub verb_agreement: f64,
    pub tense_shift: f64,
    pub noun_number: f64,
    pub pronoun_drop: f64,
}

impl OpWeights {
    pub const fn uniform() -> Self {
        OpWeights {
            article_drop: 1.0,
            article_insert: 1.0,
            preposition_swap: 1.0,
            verb_agreement: 1.0,
            tense_shift: 1.0,
            noun_number: 1.0,
            pronoun_drop: 1.0,
        }
    }

    /// Weights that only ever produce the given operations.
    pub fn only(ops: &[ErrorOp]) -> Self {
        let mut w = OpWeights {
            article_drop: 0.0,
            article_insert: 0.0,
            preposition_swap: 0.0,
            verb_agreement: 0.0,
            tense_shift: 0.0,
            noun_number: 0.0,
            pronoun_drop: 0.0,
        };
        for &op in ops {
            *w.get_mut(op) = 1.0;
        }
        w
    }

    pub fn get(&self, op: ErrorOp) -> f64 {
        match op {
            ErrorOp::ArticleDrop => self.article_drop,
            ErrorOp::ArticleInsert => self.article_insert,
            ErrorOp::PrepositionSwap => self.preposition_swap,
            ErrorOp::VerbAgreement => self.verb_agreement,
            ErrorOp::TenseShift => self.tense_shift,
            ErrorOp::NounNumber => self.noun_number,
            ErrorOp::PronounDrop => self.pronoun_drop,
        }
    }

    pub fn get_mut(&mut self, op: ErrorOp) -> &mut f64 {
        match op {
            ErrorOp::ArticleDrop => &mut self.article_drop,
            ErrorOp::ArticleInsert => &mut self.article_insert,
            ErrorOp::PrepositionSwap => &mut self.preposition_swap,
            ErrorOp::VerbAgreement => &mut self.verb_agreement,
            ErrorOp::TenseShift => &mut self.tense_shift,
            ErrorOp::NounNumber => &mut self.noun_number,
            ErrorOp::PronounDrop => &mut self.pronoun_drop,
        }
    }

    /// Element-wise product.
    pub fn scaled_by(&self, other: &OpWeights) -> OpWeights {
        let mut out = *self;
        for op in ErrorOp::ALL {
            *out.get_mut(op) *= other.get(op);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let mut total = 0.0;
        for op in ErrorOp::ALL {
            let w = self.get(op);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("weight for {op:?} must be finite and non-negative, got {w}")));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::Config("error-operation weights are all zero".into()));
        }
        Ok(())
    }
}

/// Directional preferences of a learner group: which variant of an
/// operation they tend to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferHabits {
    /// Preference for dropping `a` over `the` (0 = only `the`, 1 = only `a`).
    pub indefinite_drop: f64,
    /// Preposition overused in place of the others; `None` swaps at random.
    pub overused_preposition: Option<String>,
    /// Preference for replacing past forms with present ones (vs. the reverse).
    pub past_to_present: f64,
    /// Preference for replacing plural nouns with singular ones (vs. the reverse).
    pub plural_to_singular: f64,
}

impl TransferHabits {
    pub fn neutral() -> Self {
        TransferHabits {
            indefinite_drop: 0.5,
            overused_preposition: None,
            past_to_present: 0.5,
            plural_to_singular: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("indefinite_drop", self.indefinite_drop),
            ("past_to_present", self.past_to_present),
            ("plural_to_singular", self.plural_to_singular),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if let Some(p) = &self.overused_preposition {
            if !PREPOSITIONS.contains(&p.as_str()) {
                return Err(Error::Config(format!("unknown preposition `{p}`")));
            }
        }
        Ok(())
    }
}

/// Generation settings for one (L1, level) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub l1: L1,
    pub level: Level,
    pub weights: OpWeights,
    pub habits: TransferHabits,
    /// Target errors per 100 source words.
    pub errors_per_100: f64,
    /// Relative share of generated sentences.
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorProfile {
    pub entries: Vec<ProfileEntry>,
    pub bank: TemplateBank,
    pub seed: u64,
}

/// Default errors per 100 words by level. A2..C1 follow measured learner
/// test sets; C2 is extrapolated below C1.
pub fn default_level_rate(level: Level) -> f64 {
    match level {
        Level::A1 => 17.3,
        Level::A2 => 17.3,
        Level::B1 => 13.0,
        Level::B2 => 12.5,
        Level::C1 => 12.1,
        Level::C2 => 10.0,
    }
}

/// Level-dependent shift of the error mix. Lower levels make more
/// morphological errors; higher levels overuse the definite article.
/// Preposition errors are equally likely at every level.
pub fn level_multipliers(level: Level) -> OpWeights {
    let (morph, drop, insert) = match level {
        Level::A1 | Level::A2 => (2.5, 0.9, 0.15),
        Level::B1 => (1.2, 1.0, 0.8),
        Level::B2 => (0.8, 1.0, 1.6),
        Level::C1 => (0.4, 0.8, 3.0),
        Level::C2 => (0.3, 0.7, 3.5),
    };
    OpWeights {
        article_drop: drop,
        article_insert: insert,
        preposition_swap: 1.0,
        verb_agreement: morph,
        tense_shift: 0.4 * morph,
        noun_number: morph,
        pronoun_drop: morph,
    }
}

/// Preference for dropping plural endings (vs. adding them) by level;
/// averaged with the L1 habit.
pub fn level_plural_to_singular(level: Level) -> f64 {
    match level {
        Level::A1 | Level::A2 => 0.95,
        Level::B1 => 0.6,
        Level::B2 => 0.5,
        Level::C1 | Level::C2 => 0.4,
    }
}

/// Transfer-error tendencies per first language.
pub fn l1_tendencies(l1: L1) -> (OpWeights, TransferHabits) {
    let w = |ad, ai, ps, va, ts, nn, pd| OpWeights {
        article_drop: ad,
        article_insert: ai,
        preposition_swap: ps,
        verb_agreement: va,
        tense_shift: ts,
        noun_number: nn,
        pronoun_drop: pd,
    };
    let h = |ind: f64, prep: Option<&str>, p2p: f64, p2s: f64| TransferHabits {
        indefinite_drop: ind,
        overused_preposition: prep.map(str::to_string),
        past_to_present: p2p,
        plural_to_singular: p2s,
    };
    match l1 {
        // Article-less languages: drop articles, lose inflection.
        L1::Chinese => (w(2.5, 0.2, 1.0, 2.0, 1.8, 2.0, 0.3), h(0.5, Some("at"), 0.9, 0.9)),
        L1::Russian | L1::Polish => (w(2.5, 0.3, 1.2, 0.6, 1.0, 1.2, 0.3), h(0.15, Some("on"), 0.3, 0.7)),
        // Definite article with generic nouns; indefinite article omitted.
        L1::German | L1::SwissGerman => (w(1.5, 1.8, 1.0, 0.3, 0.4, 0.4, 0.2), h(0.95, Some("on"), 0.5, 0.3)),
        // Pro-drop Romance languages.
        L1::Spanish | L1::Italian | L1::Portuguese => {
            (w(0.3, 2.2, 1.6, 0.5, 0.5, 0.3, 2.2), h(0.5, Some("in"), 0.3, 0.3))
        }
        L1::French => (w(0.3, 2.0, 1.4, 0.5, 0.8, 0.4, 0.4), h(0.5, Some("at"), 0.3, 0.3)),
        L1::Arabic | L1::Turkish => (w(1.6, 1.0, 1.4, 1.2, 0.8, 1.0, 1.0), h(0.5, Some("on"), 0.6, 0.6)),
        L1::Greek => (w(0.6, 1.6, 1.2, 0.6, 0.6, 0.6, 1.6), h(0.5, Some("in"), 0.4, 0.5)),
        L1::Other => (OpWeights::uniform(), TransferHabits::neutral()),
    }
}

impl GeneratorProfile {
    /// Learner profile over the given L1 x level grid, one equal share per cell.
    pub fn learner(l1s: &[L1], levels: &[Level], bank: TemplateBank, seed: u64) -> Self {
        let mut entries = Vec::new();
        for &l1 in l1s {
            let (weights, habits) = l1_tendencies(l1);
            for &level in levels {
                entries.push(ProfileEntry {
                    l1,
                    level,
                    weights: weights.scaled_by(&level_multipliers(level)),
                    habits: TransferHabits {
                        plural_to_singular: 0.5 * (habits.plural_to_singular + level_plural_to_singular(level)),
                        ..habits.clone()
                    },
                    errors_per_100: default_level_rate(level),
                    share: 1.0,
                });
            }
        }
        GeneratorProfile { entries, bank, seed }
    }

    /// Broad-coverage pool for pre-training the general model: mixed
    /// writers, a low error rate and no directional habits.
    pub fn general(errors_per_100: f64, bank: TemplateBank, seed: u64) -> Self {
        GeneratorProfile {
            entries: vec![ProfileEntry {
                l1: L1::Other,
                level: Level::C2,
                weights: OpWeights::uniform(),
                habits: TransferHabits::neutral(),
                errors_per_100,
                share: 1.0,
            }],
            bank,
            seed,
        }
    }

    pub fn entry_mut(&mut self, l1: L1, level: Level) -> Option<&mut ProfileEntry> {
        self.entries.iter_mut().find(|e| e.l1 == l1 && e.level == level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bank.is_empty() {
            return Err(Error::Config("template bank is empty".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Config("profile has no entries".into()));
        }
        for e in &self.entries {
            e.weights.validate()?;
            e.habits.validate()?;
            if !(e.errors_per_100 >= 0.0 && e.errors_per_100 < 100.0) {
                return Err(Error::Config(format!("error rate {} out of range", e.errors_per_100)));
            }
            if !(e.share >= 0.0) || !e.share.is_finite() {
                return Err(Error::Config(format!("share {} must be non-negative", e.share)));
            }
        }
        if self.entries.iter().map(|e| e.share).sum::<f64>() <= 0.0 {
            return Err(Error::Config("profile shares are all zero".into()));
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `n` items over `shares`.
pub(crate) fn allocate(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    if n == 0 || total <= 0.0 {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if shares[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    counts
}

/// Generates `n` annotated sentences from `profile`.
pub fn generate_corpus(profile: &GeneratorProfile, n: usize) -> Result<Vec<AnnotatedSentence>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let shares: Vec<f64> = profile.entries.iter().map(|e| e.share).collect();
    let counts = allocate(n, &shares);
    let mut out = Vec::with_capacity(n);
    for (entry, &count) in profile.entries.iter().zip(&counts) {
        let mut tracker = RateTracker::new(entry.errors_per_100 / 100.0);
        for _ in 0..count {
            let clean = profile.bank.sentences().choose(&mut rng).unwrap();
            out.push(corrupt(clean, entry, &mut tracker, &mut rng));
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Keeps the realised edits-per-source-token ratio on target. Edits that
/// drop or add tokens change the denominator, and some sentences cannot host
/// the drawn number of errors, so the expected count is corrected with the
/// running shortfall.
struct RateTracker {
    rate: f64,
    edits: f64,
    source_tokens: f64,
    length_delta: f64,
}

impl RateTracker {
    fn new(rate: f64) -> Self {
        RateTracker {
            rate,
            edits: 0.0,
            source_tokens: 0.0,
            length_delta: 0.0,
        }
    }

    fn expected(&self, clean_len: usize) -> f64 {
        if self.rate == 0.0 {
            return 0.0;
        }
        let delta = if self.edits > 0.0 { self.length_delta / self.edits } else { 0.0 };
        let base = self.rate * clean_len as f64 / (1.0 - self.rate * delta).max(0.1);
        let shortfall = self.rate * self.source_tokens - self.edits;
        (base + 0.25 * shortfall).max(0.0)
    }

    fn record(&mut self, edits: usize, source_len: usize, clean_len: usize) {
        self.edits += edits as f64;
        self.source_tokens += source_len as f64;
        self.length_delta += source_len as f64 - clean_len as f64;
    }
}

/// One corruption, expressed against clean token positions.
#[derive(Debug, Clone)]
enum Action {
    /// The learner omitted clean token `at`.
    Drop { at: usize, op: ErrorOp },
    /// The learner wrote `word` before clean token `at`.
    InsertBefore { at: usize, word: String, op: ErrorOp },
    /// The learner wrote `word` instead of clean token `at`.
    Replace { at: usize, word: String, op: ErrorOp },
}

impl Action {
    fn position(&self) -> usize {
        match self {
            Action::Drop { at, .. } | Action::InsertBefore { at, .. } | Action::Replace { at, .. } => *at,
        }
    }
}

fn corrupt<R: Rng>(clean: &CleanSentence, entry: &ProfileEntry, tracker: &mut RateTracker, rng: &mut R) -> AnnotatedSentence {
    let lambda = tracker.expected(clean.len());
    let k = if lambda > 0.0 {
        Poisson::new(lambda).map(|p| p.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let mut actions: Vec<Action> = Vec::new();
    for _ in 0..k {
        let options: Vec<(ErrorOp, Vec<(Action, f64)>)> = ErrorOp::ALL
            .iter()
            .filter(|&&op| entry.weights.get(op) > 0.0)
            .map(|&op| (op, candidates(clean, op, &entry.habits, &actions)))
            .filter(|(_, c)| !c.is_empty())
            .collect();
        if options.is_empty() {
            break;
        }
        let op_idx = weighted_index(rng, options.iter().map(|(op, c)| entry.weights.get(*op) * availability(*op, c, &entry.habits)));
        let cands = &options[op_idx].1;
        let pick = weighted_index(rng, cands.iter().map(|(_, w)| *w));
        actions.push(cands[pick].0.clone());
    }
    actions.sort_by_key(Action::position);
    let sentence = realise(clean, &actions, entry);
    tracker.record(sentence.edits.len(), sentence.source.len(), clean.len());
    sentence
}

/// Article drops are as likely as the most droppable article in the
/// sentence allows, relative to the learner's preferred article.
fn availability(op: ErrorOp, cands: &[(Action, f64)], habits: &TransferHabits) -> f64 {
    match op {
        ErrorOp::ArticleDrop => {
            let best = cands.iter().map(|(_, w)| *w).fold(0.0, f64::max);
            best / habits.indefinite_drop.max(1.0 - habits.indefinite_drop)
        }
        _ => 1.0,
    }
}

fn weighted_index<R: Rng>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
    let weights: Vec<f64> = weights.collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Corruptions keep at least one untouched token between each other so the
/// resulting edits never touch.
fn is_free(pos: usize, taken: &[Action]) -> bool {
    taken.iter().all(|a| a.position().abs_diff(pos) >= 2)
}

fn candidates(clean: &CleanSentence, op: ErrorOp, habits: &TransferHabits, taken: &[Action]) -> Vec<(Action, f64)> {
    let mut out = Vec::new();
    let toks = &clean.tokens;
    match op {
        ErrorOp::ArticleDrop => {
            for (i, tag) in clean.tags.iter().enumerate() {
                if *tag == Tag::Article && is_free(i, taken) {
                    let w = if toks[i] == "a" { habits.indefinite_drop } else { 1.0 - habits.indefinite_drop };
                    if w > 0.0 {
                        out.push((Action::Drop { at: i, op }, w));
                    }
                }
            }
        }
        ErrorOp::ArticleInsert => {
            for &i in &clean.bare_np_starts {
                if is_free(i, taken) {
                    out.push((
                        Action::InsertBefore {
                            at: i,
                            word: "the".into(),
                            op,
                        },
                        1.0,
                    ));
                }
            }
        }
        ErrorOp::PrepositionSwap => {
            for (i, tag) in clean.tags.iter().enumerate() {
                if *tag != Tag::Preposition || !is_free(i, taken) {
                    continue;
                }
                match &habits.overused_preposition {
                    Some(p) if *p != toks[i] => out.push((
                        Action::Replace {
                            at: i,
                            word: p.clone(),
                            op,
                        },
                        1.0,
                    )),
                    Some(_) => {}
                    None => {
                        let others: Vec<&str> = PREPOSITIONS.iter().copied().filter(|p| *p != toks[i]).collect();
                        for p in others.iter() {
                            out.push((
                                Action::Replace {
                                    at: i,
                                    word: p.to_string(),
                                    op,
                                },
                                1.0 / others.len() as f64,
                            ));
                        }
                    }
                }
            }
        }
        ErrorOp::VerbAgreement => {
            for (i, tag) in clean.tags.iter().enumerate() {
                if !is_free(i, taken) {
                    continue;
                }
                let word = match *tag {
                    Tag::Verb { lemma, form: VerbForm::ThirdSingular, .. } => VERBS[lemma].0,
                    Tag::Verb { lemma, form: VerbForm::Base, .. } => VERBS[lemma].1,
                    Tag::Copula { past, plural } => copula(past, !plural),
                    _ => continue,
                };
                out.push((
                    Action::Replace {
                        at: i,
                        word: word.into(),
                        op,
                    },
                    1.0,
                ));
            }
        }
        ErrorOp::TenseShift => {
            for (i, tag) in clean.tags.iter().enumerate() {
                if !is_free(i, taken) {
                    continue;
                }
                let (word, to_present) = match *tag {
                    Tag::Verb { lemma, form: VerbForm::Past, subject_singular } => {
                        (if subject_singular { VERBS[lemma].1 } else { VERBS[lemma].0 }, true)
                    }
                    Tag::Verb { lemma, .. } => (VERBS[lemma].2, false),
                    Tag::Copula { past, plural } => (copula(!past, plural), past),
                    _ => continue,
                };
                let w = if to_present { habits.past_to_present } else { 1.0 - habits.past_to_present };
                if w > 0.0 {
                    out.push((
                        Action::Replace {
                            at: i,
                            word: word.into(),
                            op,
                        },
                        w,
                    ));
                }
            }
        }
        ErrorOp::NounNumber => {
            for (i, tag) in clean.tags.iter().enumerate() {
                if !is_free(i, taken) {
                    continue;
                }
                let (word, to_singular) = match *tag {
                    Tag::Noun { lemma, kind: NounKind::Count, plural, .. } => {
                        let (sg, pl) = OBJECT_NOUNS[lemma];
                        if plural {
                            (sg, true)
                        } else {
                            (pl, false)
                        }
                    }
                    Tag::Noun { lemma, kind: NounKind::Subject, plural, .. } => {
                        let (sg, pl) = SUBJECT_NOUNS[lemma];
                        if plural {
                            (sg, true)
                        } else {
                            (pl, false)
                        }
                    }
                    _ => continue,
                };
                let w = if to_singular { habits.plural_to_singular } else { 1.0 - habits.plural_to_singular };
                if w > 0.0 {
                    out.push((
                        Action::Replace {
                            at: i,
                            word: word.into(),
                            op,
                        },
                        w,
                    ));
                }
            }
        }
        ErrorOp::PronounDrop => {
            for (i, tag) in clean.tags.iter().enumerate() {
                if *tag == Tag::ExpletiveIt && is_free(i, taken) {
                    out.push((Action::Drop { at: i, op }, 1.0));
                }
            }
        }
    }
    out
}

fn copula(past: bool, plural: bool) -> &'static str {
    match (past, plural) {
        (false, false) => "is",
        (false, true) => "are",
        (true, false) => "was",
        (true, true) => "were",
    }
}

/// Builds the learner source and the source-anchored edits that undo `actions`.
fn realise(clean: &CleanSentence, actions: &[Action], entry: &ProfileEntry) -> AnnotatedSentence {
    let by_pos: BTreeMap<usize, &Action> = actions.iter().map(|a| (a.position(), a)).collect();
    let mut source = Vec::with_capacity(clean.len() + 2);
    let mut edits = Vec::with_capacity(actions.len());
    for (i, tok) in clean.tokens.iter().enumerate() {
        match by_pos.get(&i) {
            None => source.push(tok.clone()),
            Some(Action::Drop { op, .. }) => {
                let at = source.len();
                edits.push(Edit::new(at, at, vec![tok.clone()], op.error_type()));
            }
            Some(Action::InsertBefore { word, op, .. }) => {
                let at = source.len();
                source.push(word.clone());
                edits.push(Edit::new(at, at + 1, vec![], op.error_type()));
                source.push(tok.clone());
            }
            Some(Action::Replace { word, op, .. }) => {
                let at = source.len();
                source.push(word.clone());
                edits.push(Edit::new(at, at + 1, vec![tok.clone()], op.error_type()));
            }
        }
    }
    AnnotatedSentence {
        source,
        target: clean.tokens.clone(),
        edits,
        l1: entry.l1,
        level: entry.level,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::error_rate;

    fn bank() -> TemplateBank {
        TemplateBank::from_grammar(2000, 11)
    }

    #[test]
    fn zero_sentences() {
        let p = GeneratorProfile::learner(&[L1::Spanish], &[Level::B1], bank(), 1);
        assert!(generate_corpus(&p, 0).unwrap().is_empty());
    }

    #[test]
    fn empty_bank_is_a_configuration_error() {
        let p = GeneratorProfile::learner(&[L1::Spanish], &[Level::B1], TemplateBank::default(), 1);
        assert!(matches!(generate_corpus(&p, 5), Err(Error::Config(_))));
    }

    #[test]
    fn all_zero_weights_rejected() {
        let mut p = GeneratorProfile::learner(&[L1::Spanish], &[Level::B1], bank(), 1);
        p.entries[0].weights = OpWeights::only(&[]);
        assert!(generate_corpus(&p, 5).is_err());
    }

    #[test]
    fn zero_rate_leaves_sentences_clean() {
        let mut p = GeneratorProfile::learner(&[L1::Chinese, L1::German], &[Level::A2], bank(), 3);
        for e in &mut p.entries {
            e.errors_per_100 = 0.0;
        }
        let corpus = generate_corpus(&p, 300).unwrap();
        assert!(corpus.iter().all(|s| s.source == s.target && s.edits.is_empty()));
    }

    #[test]
    fn edits_restore_targets_and_metadata_follows_entries() {
        let p = GeneratorProfile::learner(&[L1::Chinese, L1::Spanish], &[Level::A2, Level::C1], bank(), 9);
        let corpus = generate_corpus(&p, 2000).unwrap();
        assert_eq!(corpus.len(), 2000);
        for s in &corpus {
            s.validate().unwrap();
            assert!(matches!(s.l1, L1::Chinese | L1::Spanish));
            assert!(matches!(s.level, Level::A2 | Level::C1));
        }
        for l1 in [L1::Chinese, L1::Spanish] {
            for level in [Level::A2, Level::C1] {
                assert_eq!(corpus.iter().filter(|s| s.l1 == l1 && s.level == level).count(), 500);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = GeneratorProfile::learner(&[L1::German], &[Level::B1, Level::B2], bank(), 4);
        assert_eq!(generate_corpus(&p, 400).unwrap(), generate_corpus(&p, 400).unwrap());
        let q = GeneratorProfile { seed: 5, ..p.clone() };
        assert_ne!(generate_corpus(&p, 400).unwrap(), generate_corpus(&q, 400).unwrap());
    }

    #[test]
    fn measured_rate_tracks_target() {
        let mut p = GeneratorProfile::learner(&[L1::Spanish], &[Level::A2], bank(), 21);
        p.entries[0].errors_per_100 = 17.33;
        let corpus = generate_corpus(&p, 10_000).unwrap();
        // Count injected edits directly rather than through error_rate.
        let edits: usize = corpus.iter().map(|s| s.edits.len()).sum();
        let tokens: usize = corpus.iter().map(|s| s.source.len()).sum();
        let measured = 100.0 * edits as f64 / tokens as f64;
        assert!((measured - 17.33).abs() <= 0.5, "measured {measured}");
        assert!((error_rate(&corpus).unwrap() - measured).abs() < 1e-12);
    }

    #[test]
    fn det_only_profile_injects_only_det_edits() {
        let mut p = GeneratorProfile::learner(&[L1::German], &[Level::B1], bank(), 2);
        p.entries[0].weights = OpWeights::only(&[ErrorOp::ArticleDrop, ErrorOp::ArticleInsert]);
        let corpus = generate_corpus(&p, 500).unwrap();
        assert!(corpus.iter().flat_map(|s| &s.edits).all(|e| e.etype == ErrorType::Det));
        assert!(corpus.iter().map(|s| s.edits.len()).sum::<usize>() > 100);
    }

    #[test]
    fn allocation_sums_to_n() {
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(allocate(7, &[0.0, 2.0, 1.0]).iter().sum::<usize>(), 7);
        assert_eq!(allocate(7, &[0.0, 2.0, 1.0])[0], 0);
    }
}

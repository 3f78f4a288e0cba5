//! Byte-pair-encoding subword model shared by the encoder and decoder.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const END_OF_WORD: &str = "</w>";
const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
const FILE_HEADER: &str = "#version gec-adapt-bpe 1";
const ALPHABET_PREFIX: &str = "#alphabet";

/// Learned merges plus the vocabulary they induce.
///
/// Ids 0..=3 are PAD, BOS, EOS and UNK. Then come the base symbols (each
/// character, bare and with the end-of-word marker), then the merge
/// results in learning order.
#[derive(Debug, Clone)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    alphabet: BTreeSet<char>,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.alphabet == other.alphabet
    }
}

fn split_word(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Merges every left-to-right, non-overlapping occurrence of `(left, right)`.
fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    fn build(alphabet: BTreeSet<char>, merges: Vec<(String, String)>) -> Self {
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for c in &alphabet {
            vocab.push(c.to_string());
            vocab.push(format!("{c}{END_OF_WORD}"));
        }
        let mut index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        for (l, r) in &merges {
            let sym = format!("{l}{r}");
            if !index.contains_key(&sym) {
                index.insert(sym.clone(), vocab.len() as u32);
                vocab.push(sym);
            }
        }
        let ranks = merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        BpeModel {
            merges,
            alphabet,
            vocab,
            index,
            ranks,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Segments one word by applying merges in learning order.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = split_word(word);
        // Repeatedly merging the lowest-ranked adjacent pair is equivalent to
        // replaying the merge list in order: a merge can only create pairs
        // whose rank is higher than its own.
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            match best {
                Some((_, l, r)) => symbols = merge_pair(&symbols, &l, &r),
                None => return symbols,
            }
        }
    }

    /// Encodes tokens into subword ids, truncated to `max_units`.
    pub fn encode(&self, tokens: &[String], max_units: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for tok in tokens {
            for sym in self.segment(tok) {
                out.push(self.id(&sym).unwrap_or(UNK));
            }
            if out.len() >= max_units {
                break;
            }
        }
        out.truncate(max_units);
        out
    }

    /// Concatenates subwords back into words; PAD, BOS and EOS are dropped and
    /// UNK is rendered as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        let mut words = Vec::new();
        let mut current = String::new();
        for &id in ids {
            let sym = self
                .symbol(id)
                .ok_or_else(|| Error::OutOfRange(format!("subword id {id} >= vocabulary size {}", self.vocab.len())))?;
            match id {
                PAD | BOS | EOS => continue,
                _ => {}
            }
            if let Some(stem) = sym.strip_suffix(END_OF_WORD) {
                current.push_str(stem);
                words.push(std::mem::take(&mut current));
            } else {
                current.push_str(sym);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        Ok(words)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(FILE_HEADER);
        s.push('\n');
        s.push_str(ALPHABET_PREFIX);
        for c in &self.alphabet {
            s.push(' ');
            s.push(*c);
        }
        s.push('\n');
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == FILE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{FILE_HEADER}`"),
                })
            }
        }
        let mut alphabet = BTreeSet::new();
        let mut merges = Vec::new();
        for (idx, line) in lines {
            if let Some(rest) = line.strip_prefix(ALPHABET_PREFIX) {
                alphabet.extend(rest.split(' ').filter(|t| !t.is_empty()).filter_map(|t| t.chars().next()));
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push((l.to_string(), r.to_string())),
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("expected `left right`, got `{line}`"),
                    })
                }
            }
        }
        // Characters used by merges belong to the alphabet even if the line is absent.
        for (l, r) in &merges {
            for part in [l, r] {
                alphabet.extend(part.trim_end_matches(END_OF_WORD).chars());
            }
        }
        Ok(BpeModel::build(alphabet, merges))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        BpeModel::from_text(&fs::read_to_string(path)?)
    }
}

type Pair = (u32, u32);

/// Learns up to `num_merges` merges from a token stream.
///
/// Pair counts are weighted by word frequency. The most frequent pair wins;
/// equal counts go to the lexicographically smallest `(left, right)`.
/// Learning stops early once no pair occurs at least twice.
pub fn learn_bpe<S: AsRef<str>>(tokens: &[S], num_merges: usize) -> Result<BpeModel> {
    if tokens.is_empty() {
        return Err(Error::Validation("cannot learn BPE from an empty token stream".into()));
    }
    let mut freq: BTreeMap<&str, i64> = BTreeMap::new();
    let mut alphabet = BTreeSet::new();
    for t in tokens {
        let t = t.as_ref();
        if t.is_empty() {
            continue;
        }
        alphabet.extend(t.chars());
        *freq.entry(t).or_default() += 1;
    }

    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_id: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_id.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut words: Vec<(Vec<u32>, i64)> = Vec::with_capacity(freq.len());
    for (w, f) in &freq {
        let ids = split_word(w).into_iter().map(|s| intern(s, &mut symbols)).collect();
        words.push((ids, *f));
    }

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, (ids, f)) in words.iter().enumerate() {
        for p in ids.windows(2) {
            let pair = (p[0], p[1]);
            *counts.entry(pair).or_default() += f;
            where_.entry(pair).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let best = counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                    let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some((left, right)) = best else { break };
        let merged = format!("{}{}", symbols[left as usize], symbols[right as usize]);
        merges.push((symbols[left as usize].clone(), symbols[right as usize].clone()));
        let new_id = intern(merged, &mut symbols);

        let affected: Vec<usize> = where_.get(&(left, right)).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for wi in affected {
            let (ids, f) = &words[wi];
            let f = *f;
            for p in ids.windows(2) {
                let pair = (p[0], p[1]);
                if let Some(c) = counts.get_mut(&pair) {
                    *c -= f;
                    if *c == 0 {
                        counts.remove(&pair);
                    }
                }
                if let Some(set) = where_.get_mut(&pair) {
                    set.remove(&wi);
                }
            }
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == left && ids[i + 1] == right {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            for p in next.windows(2) {
                let pair = (p[0], p[1]);
                *counts.entry(pair).or_default() += f;
                where_.entry(pair).or_default().insert(wi);
            }
            words[wi].0 = next;
        }
    }
    Ok(BpeModel::build(alphabet, merges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn zero_merges_is_character_level() {
        let m = learn_bpe(&toks("ab ab cd"), 0).unwrap();
        assert!(m.merges().is_empty());
        let ids = m.encode(&toks("ab"), 60);
        let syms: Vec<&str> = ids.iter().map(|&i| m.symbol(i).unwrap()).collect();
        assert_eq!(syms, vec!["a", "b</w>"]);
    }

    #[test]
    fn most_frequent_pair_first() {
        let m = learn_bpe(&toks("aaab aaab aaab"), 1).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn ties_break_lexicographically() {
        let m = learn_bpe(&toks("ab ab cd cd"), 1).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b</w>".to_string()));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let m = learn_bpe(&toks("abc"), 10).unwrap();
        assert!(m.merges().is_empty());
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(learn_bpe::<String>(&[], 5).is_err());
    }

    #[test]
    fn specials_have_fixed_ids() {
        let m = learn_bpe(&toks("x"), 0).unwrap();
        assert_eq!(m.symbol(PAD), Some("<pad>"));
        assert_eq!(m.symbol(BOS), Some("<s>"));
        assert_eq!(m.symbol(EOS), Some("</s>"));
        assert_eq!(m.symbol(UNK), Some("<unk>"));
    }

    #[test]
    fn encode_empty_and_truncate() {
        let m = learn_bpe(&toks("a b c d e"), 0).unwrap();
        assert!(m.encode(&[], 60).is_empty());
        let long: Vec<String> = (0..100).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let ids = m.encode(&long, 60);
        assert_eq!(ids.len(), 60);
        assert_eq!(ids, m.encode(&long, 1000)[..60].to_vec());
    }

    #[test]
    fn decode_joins_at_markers() {
        let m = learn_bpe(&toks("goes goes go es"), 50).unwrap();
        let go = m.id("go").unwrap_or_else(|| panic!("vocab {:?}", m.vocab()));
        let es = m.id("es</w>").unwrap();
        assert_eq!(m.decode(&[go, es]).unwrap(), vec!["goes"]);
        assert!(m.decode(&[]).unwrap().is_empty());
        assert!(m.decode(&[PAD, EOS, PAD]).unwrap().is_empty());
        assert!(matches!(m.decode(&[9999]), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let m = learn_bpe(&toks("abc abc"), 5).unwrap();
        let ids = m.encode(&toks("abz"), 60);
        assert!(ids.contains(&UNK));
        assert!(!ids.is_empty());
    }

    #[test]
    fn text_format_round_trip() {
        let m = learn_bpe(&toks("the cat sat on the mat with the hat zq"), 20).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("#version gec-adapt-bpe 1\n"));
        let back = BpeModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.vocab(), m.vocab());
        assert!(BpeModel::from_text("a b\n").is_err());
        assert!(BpeModel::from_text("#version gec-adapt-bpe 1\na b c\n").is_err());
    }

    #[test]
    fn vocab_is_closure_of_alphabet_under_merges() {
        let m = learn_bpe(&toks("low lower lowest newer wider new"), 30).unwrap();
        let mut expected: BTreeSet<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for c in "lowernstid".chars() {
            expected.insert(c.to_string());
            expected.insert(format!("{c}</w>"));
        }
        for (l, r) in m.merges() {
            assert!(expected.contains(l) && expected.contains(r), "merge uses unknown symbol {l} {r}");
            expected.insert(format!("{l}{r}"));
        }
        let got: BTreeSet<String> = m.vocab().iter().cloned().collect();
        assert_eq!(got, expected);
    }
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generator::allocate;
use super::types::{AnnotatedSentence, Level, SubsetKey, L1};
use crate::error::{Error, Result};

/// Relative frequency of each (L1, level) group in a random learner sample.
pub type RandomWeights = BTreeMap<(L1, Level), f64>;

/// Indices of the sentences matching `key`, in corpus order.
pub fn select_indices(corpus: &[AnnotatedSentence], key: &SubsetKey) -> Vec<usize> {
    corpus
        .iter()
        .enumerate()
        .filter(|(_, s)| s.matches(key))
        .map(|(i, _)| i)
        .collect()
}

/// All sentences matching every field present in `key`, in corpus order.
pub fn select_subset(corpus: &[AnnotatedSentence], key: &SubsetKey, min_size: usize) -> Result<Vec<AnnotatedSentence>> {
    let subset: Vec<AnnotatedSentence> = corpus.iter().filter(|s| s.matches(key)).cloned().collect();
    if subset.len() < min_size {
        return Err(Error::SubsetTooSmall {
            key: key.to_string(),
            actual: subset.len(),
            required: min_size,
        });
    }
    Ok(subset)
}

/// Disjoint train/dev/test partitions of the requested sizes, drawn by a
/// seeded shuffle.
pub fn split<T: Clone>(items: &[T], train_n: usize, dev_n: usize, test_n: usize, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let needed = train_n + dev_n + test_n;
    if needed > items.len() {
        return Err(Error::InsufficientData {
            needed,
            available: items.len(),
            shortfall: needed - items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| order[range].iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        take(0..train_n),
        take(train_n..train_n + dev_n),
        take(train_n + dev_n..needed),
    ))
}

/// Learner-population shape for the random baseline: B1 is the most common
/// level with A2 half as frequent, Spanish dominates the L1s and Chinese has
/// half as many sentences.
pub fn default_random_weights() -> RandomWeights {
    let level_w = |l: Level| match l {
        Level::A1 => 0.2,
        Level::A2 => 1.0,
        Level::B1 => 2.0,
        Level::B2 => 1.7,
        Level::C1 => 0.9,
        Level::C2 => 0.6,
    };
    let l1_w = |l: L1| match l {
        L1::Spanish => 2.0,
        L1::Chinese => 1.0,
        L1::Italian | L1::Portuguese | L1::French => 0.8,
        L1::German | L1::Greek | L1::Russian => 0.7,
        L1::Polish | L1::Arabic | L1::Turkish | L1::SwissGerman => 0.6,
        L1::Other => 0.5,
    };
    let mut w = RandomWeights::new();
    for l1 in L1::ALL {
        for level in Level::ALL {
            w.insert((l1, level), l1_w(l1) * level_w(level));
        }
    }
    w
}

/// Samples `n` sentences without replacement so that group proportions
/// follow `weights` as closely as group sizes allow. Groups missing from
/// `weights` get weight zero and are never sampled. Returns corpus indices.
pub fn sample_random(corpus: &[AnnotatedSentence], n: usize, weights: &RandomWeights, seed: u64) -> Result<Vec<usize>> {
    if n > corpus.len() {
        return Err(Error::InsufficientData {
            needed: n,
            available: corpus.len(),
            shortfall: n - corpus.len(),
        });
    }
    for (group, w) in weights {
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::Validation(format!("weight for {group:?} must be non-negative, got {w}")));
        }
    }
    let mut groups: BTreeMap<(L1, Level), Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.iter().enumerate() {
        groups.entry((s.l1, s.level)).or_default().push(i);
    }
    let keys: Vec<(L1, Level)> = groups.keys().copied().collect();
    let capacity: Vec<usize> = keys.iter().map(|k| groups[k].len()).collect();
    let weight: Vec<f64> = keys.iter().map(|k| weights.get(k).copied().unwrap_or(0.0)).collect();
    let available: usize = capacity.iter().zip(&weight).filter(|(_, w)| **w > 0.0).map(|(c, _)| c).sum();
    if n > available {
        return Err(Error::InsufficientData {
            needed: n,
            available,
            shortfall: n - available,
        });
    }

    // Water-filling: proportional quotas, capped groups release their excess.
    let mut quota = vec![0usize; keys.len()];
    let mut remaining = n;
    while remaining > 0 {
        let open: Vec<usize> = (0..keys.len()).filter(|&g| weight[g] > 0.0 && quota[g] < capacity[g]).collect();
        let shares: Vec<f64> = open.iter().map(|&g| weight[g]).collect();
        let extra = allocate(remaining, &shares);
        let mut placed = 0;
        for (&g, &e) in open.iter().zip(&extra) {
            let add = e.min(capacity[g] - quota[g]);
            quota[g] += add;
            placed += add;
        }
        remaining -= placed;
        if placed == 0 {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    for (g, key) in keys.iter().enumerate() {
        let mut members = groups[key].clone();
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..quota[g]]);
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}

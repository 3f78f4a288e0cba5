use std::cmp::Ordering;

use ndarray::Axis;

use super::model::{bridge, decoder_step, encode, Batch};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subword::{BOS, EOS, PAD};

/// A decoded sequence with its model score.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output ids, without BOS/EOS.
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities, including EOS when `finished`.
    pub log_prob: f64,
    /// Whether the sequence ended with EOS rather than hitting the cap.
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability divided by the number of scored tokens.
    pub fn normalized_score(&self) -> f64 {
        let n = self.tokens.len() + usize::from(self.finished);
        if n == 0 {
            0.0
        } else {
            self.log_prob / n as f64
        }
    }
}

fn allowed(v: usize) -> bool {
    v != PAD as usize && v != BOS as usize
}

/// Highest-scoring admissible token; the lowest id wins ties.
fn argmax<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> usize {
    let mut best = usize::MAX;
    let mut best_v = T::neg_infinity();
    for (v, &x) in row.iter().enumerate() {
        if allowed(v) && (best == usize::MAX || x > best_v) {
            best = v;
            best_v = x;
        }
    }
    best
}

/// Greedy decoding of several sources at once.
pub fn greedy_hypotheses<T: Scalar>(params: &ModelParams<T>, srcs: &[Vec<u32>], max_len: usize) -> Result<Vec<Hypothesis>> {
    let batch = Batch::sources(srcs)?;
    check_src(params, &batch)?;
    let enc = encode(params, &batch, None, false);
    let mut state = bridge(params, &enc);
    let n = srcs.len();
    let mut hyps: Vec<Hypothesis> = (0..n)
        .map(|_| Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        })
        .collect();
    let mut prev = vec![BOS; n];
    for _ in 0..max_len {
        if hyps.iter().all(|h| h.finished) {
            break;
        }
        let st = decoder_step(params, &enc, &prev, &mut state, None);
        for (b, h) in hyps.iter_mut().enumerate() {
            if h.finished {
                continue;
            }
            let row = st.log_probs.row(b);
            let v = argmax(row);
            h.log_prob += row[v].to_f64().unwrap();
            if v == EOS as usize {
                h.finished = true;
            } else {
                h.tokens.push(v as u32);
            }
            prev[b] = v as u32;
        }
    }
    Ok(hyps)
}

pub fn decode_greedy_batch<T: Scalar>(params: &ModelParams<T>, srcs: &[Vec<u32>], max_len: usize) -> Result<Vec<Vec<u32>>> {
    Ok(greedy_hypotheses(params, srcs, max_len)?.into_iter().map(|h| h.tokens).collect())
}

/// Starts at BOS and stops at EOS or after `max_len` tokens.
pub fn decode_greedy<T: Scalar>(params: &ModelParams<T>, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
    Ok(greedy_hypotheses(params, &[src.to_vec()], max_len)?.remove(0).tokens)
}

fn check_src<T: Scalar>(params: &ModelParams<T>, batch: &Batch) -> Result<()> {
    let vocab = params.config.vocab_size;
    if let Some(&id) = batch.src.iter().flatten().find(|&&id| id as usize >= vocab) {
        return Err(Error::OutOfRange(format!("source id {id} >= vocab_size {vocab}")));
    }
    Ok(())
}

struct Candidate {
    parent: usize,
    token: usize,
    score: f64,
    step: f64,
}

/// Beam search over cumulative log-probability; the returned hypothesis is
/// the best finished one by length-normalised score (or the best live one
/// if none finished within `max_len`). The greedy path is always among the
/// final candidates, so a wider beam never scores below greedy decoding.
pub fn beam_hypothesis<T: Scalar>(params: &ModelParams<T>, src: &[u32], beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam < 1 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let batch = Batch::sources(&[src.to_vec()])?;
    check_src(params, &batch)?;
    let enc0 = encode(params, &batch, None, false);
    let mut live: Vec<Hypothesis> = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut state = bridge(params, &enc0);
    let mut enc = enc0.clone();
    for _ in 0..max_len {
        let prev: Vec<u32> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
        let st = decoder_step(params, &enc, &prev, &mut state, None);
        let mut cands: Vec<Candidate> = Vec::with_capacity(live.len() * params.config.vocab_size);
        for (i, h) in live.iter().enumerate() {
            for (v, lp) in st.log_probs.row(i).iter().enumerate() {
                if allowed(v) {
                    let step = lp.to_f64().unwrap();
                    cands.push(Candidate {
                        parent: i,
                        token: v,
                        score: h.log_prob + step,
                        step,
                    });
                }
            }
        }
        cands.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(b.step.partial_cmp(&a.step).unwrap_or(Ordering::Equal))
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        let mut next: Vec<Hypothesis> = Vec::with_capacity(beam);
        let mut parents: Vec<usize> = Vec::with_capacity(beam);
        for c in cands {
            if next.len() == beam {
                break;
            }
            let mut tokens = live[c.parent].tokens.clone();
            if c.token == EOS as usize {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: c.score,
                    finished: true,
                });
            } else {
                tokens.push(c.token as u32);
                next.push(Hypothesis {
                    tokens,
                    log_prob: c.score,
                    finished: false,
                });
                parents.push(c.parent);
            }
        }
        live = next;
        if finished.len() >= beam || live.is_empty() {
            break;
        }
        for l in 0..state.0.len() {
            state.0[l] = state.0[l].select(Axis(0), &parents);
            state.1[l] = state.1[l].select(Axis(0), &parents);
        }
        enc = enc0.select(&vec![0; parents.len()]);
    }
    let mut pool = if finished.is_empty() { live } else { finished };
    if beam > 1 {
        pool.extend(greedy_hypotheses(params, &[src.to_vec()], max_len)?);
    }
    let best = pool
        .into_iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.normalized_score()
                .partial_cmp(&b.normalized_score())
                .unwrap_or(Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(_, h)| h)
        .expect("beam search keeps at least one hypothesis");
    Ok(best)
}

/// `beam = 1` reproduces [`decode_greedy`].
pub fn decode_beam<T: Scalar>(params: &ModelParams<T>, src: &[u32], beam: usize, max_len: usize) -> Result<Vec<u32>> {
    Ok(beam_hypothesis(params, src, beam, max_len)?.tokens)
}

/// Log-probability the model assigns to `tokens` (plus EOS when
/// `with_eos`) given `src`.
pub fn sequence_log_prob<T: Scalar>(params: &ModelParams<T>, src: &[u32], tokens: &[u32], with_eos: bool) -> Result<f64> {
    let batch = Batch::sources(&[src.to_vec()])?;
    check_src(params, &batch)?;
    let enc = encode(params, &batch, None, false);
    let mut state = bridge(params, &enc);
    let mut prev = BOS;
    let mut total = 0.0;
    let targets = tokens.iter().copied().chain(with_eos.then_some(EOS));
    for y in targets {
        if y as usize >= params.config.vocab_size {
            return Err(Error::OutOfRange(format!("target id {y}")));
        }
        let st = decoder_step(params, &enc, &[prev], &mut state, None);
        total += st.log_probs[[0, y as usize]].to_f64().unwrap();
        prev = y;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 6,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size: 10,
            dropout_p: 0.0,
            word_dropout_p: 0.0,
            variational: false,
            max_decode_len: 6,
        }
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 0..100 {
            let p = init_params::<f32>(&cfg(), seed).unwrap();
            let src = vec![4 + (seed % 5) as u32, 5, 6];
            let g = greedy_hypotheses(&p, &[src.clone()], 6).unwrap().remove(0);
            let b = beam_hypothesis(&p, &src, 1, 6).unwrap();
            assert_eq!(g.tokens, b.tokens, "seed {seed}");
            assert_eq!(g.finished, b.finished);
        }
    }

    #[test]
    fn wider_beam_never_scores_below_greedy() {
        for seed in 0..100 {
            let p = init_params::<f64>(&cfg(), seed).unwrap();
            let src = vec![4 + (seed % 5) as u32, 5, 6];
            let g = greedy_hypotheses(&p, &[src.clone()], 6).unwrap().remove(0);
            let b = beam_hypothesis(&p, &src, 2, 6).unwrap();
            assert!(b.normalized_score() >= g.normalized_score(), "seed {seed}");
        }
    }

    #[test]
    fn max_len_one_caps_output() {
        let p = init_params::<f32>(&cfg(), 3).unwrap();
        assert!(decode_greedy(&p, &[4, 5], 1).unwrap().len() <= 1);
        assert!(decode_beam(&p, &[4, 5], 3, 1).unwrap().len() <= 1);
    }

    #[test]
    fn beam_zero_rejected() {
        let p = init_params::<f32>(&cfg(), 3).unwrap();
        assert!(decode_beam(&p, &[4], 0, 5).is_err());
    }

    #[test]
    fn reported_score_matches_rescoring() {
        let p = init_params::<f64>(&cfg(), 8).unwrap();
        let h = beam_hypothesis(&p, &[4, 7, 8], 3, 6).unwrap();
        let lp = sequence_log_prob(&p, &[4, 7, 8], &h.tokens, h.finished).unwrap();
        assert!((lp - h.log_prob).abs() < 1e-9);
    }

    #[test]
    fn batch_greedy_matches_single() {
        let p = init_params::<f64>(&cfg(), 5).unwrap();
        let srcs = vec![vec![4, 5, 6, 7], vec![8], vec![9, 9]];
        let all = decode_greedy_batch(&p, &srcs, 6).unwrap();
        for (s, out) in srcs.iter().zip(&all) {
            assert_eq!(&decode_greedy(&p, s, 6).unwrap(), out);
        }
    }
}

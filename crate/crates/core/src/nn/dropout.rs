use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::scalar::Scalar;

/// Padded batch dimensions the masks are drawn for. `src_len` counts the
/// end-of-sentence marker appended to every source; `tgt_len` counts the
/// decoder steps (target length plus one).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskShapes {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
}

/// Inverted-dropout keep masks: entries are `0` or `1/(1-p)`.
///
/// Time-indexed vectors hold one `batch x dim` mask per step. With
/// variational dropout every step of a sequence shares one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub shapes: MaskShapes,
    /// `batch x src_len`, one entry per source token.
    pub word: Array2<T>,
    /// `[layer][t]`, applied to each encoder layer's input.
    pub enc_input: Vec<Vec<Array2<T>>>,
    /// `[layer][direction][t]`, applied to the previous hidden state.
    pub enc_recurrent: Vec<[Vec<Array2<T>>; 2]>,
    /// `[layer][t]`, applied to each decoder layer's input.
    pub dec_input: Vec<Vec<Array2<T>>>,
    /// `[layer][t]`
    pub dec_recurrent: Vec<Vec<Array2<T>>>,
    /// `[t]`, applied to the attentional hidden state before the generator.
    pub output: Vec<Array2<T>>,
}

fn keep_mask<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Array2<T> {
    if p == 0.0 {
        return Array2::ones((rows, cols));
    }
    let scale = T::from_f64_lossy(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.gen::<f64>() < p {
            T::zero()
        } else {
            scale
        }
    })
}

fn over_time<T: Scalar, R: Rng>(rng: &mut R, steps: usize, rows: usize, cols: usize, p: f64, shared: bool) -> Vec<Array2<T>> {
    if shared {
        let m = keep_mask(rng, rows, cols, p);
        vec![m; steps]
    } else {
        (0..steps).map(|_| keep_mask(rng, rows, cols, p)).collect()
    }
}

/// Draws every mask for one batch. Without variational dropout the
/// recurrent masks are all ones and input masks are fresh per step.
pub fn apply_dropout_masks<T: Scalar>(config: &ModelConfig, seed: u64, shapes: MaskShapes) -> DropoutMasks<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, s, t) = (shapes.batch, shapes.src_len, shapes.tgt_len);
    let (e, h) = (config.embed_dim, config.hidden_dim);
    let p = config.dropout_p;
    let var = config.variational;
    let word = keep_mask(&mut rng, b, s, config.word_dropout_p);
    let mut enc_input = Vec::new();
    let mut enc_recurrent = Vec::new();
    for l in 0..config.enc_layers {
        let in_dim = if l == 0 { e } else { 2 * h };
        enc_input.push(over_time(&mut rng, s, b, in_dim, p, var));
        let rec_p = if var { p } else { 0.0 };
        enc_recurrent.push([
            over_time(&mut rng, s, b, h, rec_p, true),
            over_time(&mut rng, s, b, h, rec_p, true),
        ]);
    }
    let mut dec_input = Vec::new();
    let mut dec_recurrent = Vec::new();
    for l in 0..config.dec_layers {
        let in_dim = if l == 0 { e } else { h };
        dec_input.push(over_time(&mut rng, t, b, in_dim, p, var));
        let rec_p = if var { p } else { 0.0 };
        dec_recurrent.push(over_time(&mut rng, t, b, h, rec_p, true));
    }
    let output = over_time(&mut rng, t, b, h, p, var);
    DropoutMasks {
        shapes,
        word,
        enc_input,
        enc_recurrent,
        dec_input,
        dec_recurrent,
        output,
    }
}

impl<T: Scalar> DropoutMasks<T> {
    /// Every mask tensor, for inspection.
    pub fn all(&self) -> Vec<&Array2<T>> {
        let mut v = vec![&self.word];
        for l in &self.enc_input {
            v.extend(l.iter());
        }
        for [f, b] in &self.enc_recurrent {
            v.extend(f.iter());
            v.extend(b.iter());
        }
        for l in &self.dec_input {
            v.extend(l.iter());
        }
        for l in &self.dec_recurrent {
            v.extend(l.iter());
        }
        v.extend(self.output.iter());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: f64, variational: bool) -> ModelConfig {
        ModelConfig {
            embed_dim: 5,
            hidden_dim: 6,
            enc_layers: 2,
            dec_layers: 2,
            vocab_size: 10,
            dropout_p: p,
            word_dropout_p: p,
            variational,
            max_decode_len: 10,
        }
    }

    const SHAPES: MaskShapes = MaskShapes { batch: 3, src_len: 4, tgt_len: 5 };

    #[test]
    fn zero_p_gives_ones() {
        let m = apply_dropout_masks::<f64>(&cfg(0.0, true), 1, SHAPES);
        assert!(m.all().iter().all(|a| a.iter().all(|v| *v == 1.0)));
    }

    #[test]
    fn inverted_scaling_mean_is_one() {
        let shapes = MaskShapes { batch: 100, src_len: 1000, tgt_len: 1 };
        let m = apply_dropout_masks::<f64>(&cfg(0.1, true), 9, shapes);
        assert_eq!(m.word.len(), 100_000);
        let mean = m.word.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(m.word.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.9).abs() < 1e-12));
    }

    #[test]
    fn variational_recurrent_masks_shared() {
        let m = apply_dropout_masks::<f32>(&cfg(0.5, true), 2, SHAPES);
        for [f, b] in &m.enc_recurrent {
            assert_eq!(f[0], f[SHAPES.src_len - 1]);
            assert_eq!(b[0], b[SHAPES.src_len - 1]);
        }
        for l in &m.dec_recurrent {
            assert_eq!(l[0], l[SHAPES.tgt_len - 1]);
        }
        assert!(m.dec_recurrent[0][0].iter().any(|v| *v == 0.0));
    }

    #[test]
    fn non_variational_has_no_recurrent_dropout() {
        let m = apply_dropout_masks::<f32>(&cfg(0.5, false), 2, SHAPES);
        assert!(m.dec_recurrent.iter().flatten().all(|a| a.iter().all(|v| *v == 1.0)));
        assert_ne!(m.output[0], m.output[1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = apply_dropout_masks::<f32>(&cfg(0.3, true), 5, SHAPES);
        let b = apply_dropout_masks::<f32>(&cfg(0.3, true), 5, SHAPES);
        assert_eq!(a, b);
    }
}

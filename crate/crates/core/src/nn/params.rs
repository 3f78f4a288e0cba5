use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::LstmWeights;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named parameter groups; the unit of freezing during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    SrcEmbed,
    TgtEmbed,
    Encoder,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::SrcEmbed,
        ParamGroup::TgtEmbed,
        ParamGroup::Encoder,
        ParamGroup::Decoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::SrcEmbed => "src_embed",
            ParamGroup::TgtEmbed => "tgt_embed",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .iter()
            .copied()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group `{s}`")))
    }
}

/// Bidirectional LSTM stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    /// `(forward, backward)` per layer. Layer 0 reads embeddings, later
    /// layers read the `2H` concatenation of the layer below.
    pub layers: Vec<(LstmWeights<T>, LstmWeights<T>)>,
}

/// Decoder LSTM stack, bridge from encoder final states, additive
/// attention, attentional output layer and generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    /// `2H x H`: encoder final hidden state to decoder initial hidden state.
    pub bridge_h: Array2<T>,
    pub bridge_h_b: Array2<T>,
    /// `2H x H`: encoder final cell state to decoder initial cell state.
    pub bridge_c: Array2<T>,
    pub bridge_c_b: Array2<T>,
    pub layers: Vec<LstmWeights<T>>,
    /// `H x H`: decoder state to attention space.
    pub att_query: Array2<T>,
    /// `2H x H`: encoder states to attention space.
    pub att_key: Array2<T>,
    pub att_bias: Array2<T>,
    /// `1 x H` scoring vector.
    pub att_v: Array2<T>,
    /// `3H x H`: `[decoder state; context]` to attentional hidden state.
    pub out_w: Array2<T>,
    pub out_b: Array2<T>,
    /// `H x V`
    pub gen_w: Array2<T>,
    pub gen_b: Array2<T>,
}

/// All trainable tensors. Gradients and optimizer moments use the same type.
///
/// | tensor | shape |
/// |---|---|
/// | `src_embed`, `tgt_embed` | `V x E` |
/// | `encoder.l0.{fwd,bwd}` | `w_ih: E x 4H`, `w_hh: H x 4H`, `bias: 1 x 4H` |
/// | `encoder.lK.{fwd,bwd}` (K>0) | `w_ih: 2H x 4H`, `w_hh: H x 4H`, `bias: 1 x 4H` |
/// | `decoder.bridge_{h,c}` | `2H x H` (+ `1 x H` bias) |
/// | `decoder.l0` | `w_ih: E x 4H`, `w_hh: H x 4H`, `bias: 1 x 4H` |
/// | `decoder.lK` (K>0) | `w_ih: H x 4H`, `w_hh: H x 4H`, `bias: 1 x 4H` |
/// | `decoder.att_query` | `H x H` |
/// | `decoder.att_key` | `2H x H` |
/// | `decoder.att_bias`, `decoder.att_v` | `1 x H` |
/// | `decoder.out_w` / `out_b` | `3H x H` / `1 x H` |
/// | `decoder.gen_w` / `gen_b` | `H x V` / `1 x V` |
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub src_embed: Array2<T>,
    pub tgt_embed: Array2<T>,
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
    pub(crate) version: u64,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (e, h, v) = (config.embed_dim, config.hidden_dim, config.vocab_size);
        let z = |r, c| Array2::<T>::zeros((r, c));
        let encoder = EncoderParams {
            layers: (0..config.enc_layers)
                .map(|l| {
                    let in_dim = if l == 0 { e } else { 2 * h };
                    (LstmWeights::zeros(in_dim, h), LstmWeights::zeros(in_dim, h))
                })
                .collect(),
        };
        let decoder = DecoderParams {
            bridge_h: z(2 * h, h),
            bridge_h_b: z(1, h),
            bridge_c: z(2 * h, h),
            bridge_c_b: z(1, h),
            layers: (0..config.dec_layers)
                .map(|l| LstmWeights::zeros(if l == 0 { e } else { h }, h))
                .collect(),
            att_query: z(h, h),
            att_key: z(2 * h, h),
            att_bias: z(1, h),
            att_v: z(1, h),
            out_w: z(3 * h, h),
            out_b: z(1, h),
            gen_w: z(h, v),
            gen_b: z(1, v),
        };
        ModelParams {
            config: config.clone(),
            src_embed: z(v, e),
            tgt_embed: z(v, e),
            encoder,
            decoder,
            version: 0,
        }
    }

    /// Every tensor with its group and dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(ParamGroup, String, &Array2<T>)> {
        let mut out: Vec<(ParamGroup, String, &Array2<T>)> = vec![
            (ParamGroup::SrcEmbed, "src_embed".into(), &self.src_embed),
            (ParamGroup::TgtEmbed, "tgt_embed".into(), &self.tgt_embed),
        ];
        for (l, (fw, bw)) in self.encoder.layers.iter().enumerate() {
            for (dir, w) in [("fwd", fw), ("bwd", bw)] {
                out.push((ParamGroup::Encoder, format!("encoder.l{l}.{dir}.w_ih"), &w.w_ih));
                out.push((ParamGroup::Encoder, format!("encoder.l{l}.{dir}.w_hh"), &w.w_hh));
                out.push((ParamGroup::Encoder, format!("encoder.l{l}.{dir}.bias"), &w.bias));
            }
        }
        let d = &self.decoder;
        out.push((ParamGroup::Decoder, "decoder.bridge_h".into(), &d.bridge_h));
        out.push((ParamGroup::Decoder, "decoder.bridge_h_b".into(), &d.bridge_h_b));
        out.push((ParamGroup::Decoder, "decoder.bridge_c".into(), &d.bridge_c));
        out.push((ParamGroup::Decoder, "decoder.bridge_c_b".into(), &d.bridge_c_b));
        for (l, w) in d.layers.iter().enumerate() {
            out.push((ParamGroup::Decoder, format!("decoder.l{l}.w_ih"), &w.w_ih));
            out.push((ParamGroup::Decoder, format!("decoder.l{l}.w_hh"), &w.w_hh));
            out.push((ParamGroup::Decoder, format!("decoder.l{l}.bias"), &w.bias));
        }
        out.push((ParamGroup::Decoder, "decoder.att_query".into(), &d.att_query));
        out.push((ParamGroup::Decoder, "decoder.att_key".into(), &d.att_key));
        out.push((ParamGroup::Decoder, "decoder.att_bias".into(), &d.att_bias));
        out.push((ParamGroup::Decoder, "decoder.att_v".into(), &d.att_v));
        out.push((ParamGroup::Decoder, "decoder.out_w".into(), &d.out_w));
        out.push((ParamGroup::Decoder, "decoder.out_b".into(), &d.out_b));
        out.push((ParamGroup::Decoder, "decoder.gen_w".into(), &d.gen_w));
        out.push((ParamGroup::Decoder, "decoder.gen_b".into(), &d.gen_b));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Array2<T>)> {
        let mut out: Vec<(ParamGroup, &mut Array2<T>)> = vec![
            (ParamGroup::SrcEmbed, &mut self.src_embed),
            (ParamGroup::TgtEmbed, &mut self.tgt_embed),
        ];
        for (fw, bw) in self.encoder.layers.iter_mut() {
            for w in [fw, bw] {
                out.push((ParamGroup::Encoder, &mut w.w_ih));
                out.push((ParamGroup::Encoder, &mut w.w_hh));
                out.push((ParamGroup::Encoder, &mut w.bias));
            }
        }
        let d = &mut self.decoder;
        out.push((ParamGroup::Decoder, &mut d.bridge_h));
        out.push((ParamGroup::Decoder, &mut d.bridge_h_b));
        out.push((ParamGroup::Decoder, &mut d.bridge_c));
        out.push((ParamGroup::Decoder, &mut d.bridge_c_b));
        for w in d.layers.iter_mut() {
            out.push((ParamGroup::Decoder, &mut w.w_ih));
            out.push((ParamGroup::Decoder, &mut w.w_hh));
            out.push((ParamGroup::Decoder, &mut w.bias));
        }
        out.push((ParamGroup::Decoder, &mut d.att_query));
        out.push((ParamGroup::Decoder, &mut d.att_key));
        out.push((ParamGroup::Decoder, &mut d.att_bias));
        out.push((ParamGroup::Decoder, &mut d.att_v));
        out.push((ParamGroup::Decoder, &mut d.out_w));
        out.push((ParamGroup::Decoder, &mut d.out_b));
        out.push((ParamGroup::Decoder, &mut d.gen_w));
        out.push((ParamGroup::Decoder, &mut d.gen_b));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Counter bumped by every in-place update made through this crate;
    /// forward caches remember it to detect stale use.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Fails with the first tensor holding NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (_, name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
        }
        Ok(())
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config);
        for ((_, _, src), (_, dst)) in self.tensors().into_iter().zip(out.tensors_mut()) {
            *dst = src.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap()));
        }
        out
    }

    pub fn same_shapes(&self, other: &ModelParams<T>) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .all(|(a, b)| a.2.dim() == b.2.dim())
            && self.tensors().len() == other.tensors().len()
    }

    /// Bit-level equality of every tensor in `group`.
    pub fn group_bits_equal(&self, other: &ModelParams<T>, group: ParamGroup) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .filter(|(a, _)| a.0 == group)
            .all(|(a, b)| {
                a.2.dim() == b.2.dim()
                    && a.2
                        .iter()
                        .zip(b.2.iter())
                        .all(|(x, y)| x.to_f64().unwrap().to_bits() == y.to_f64().unwrap().to_bits())
            })
    }
}

fn xavier<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64_lossy(rng.gen_range(-a..a)))
}

fn init_lstm<T: Scalar, R: Rng>(rng: &mut R, w: &mut LstmWeights<T>) {
    let h = w.hidden();
    w.w_ih = xavier(rng, w.w_ih.nrows(), w.w_ih.ncols());
    w.w_hh = xavier(rng, w.w_hh.nrows(), w.w_hh.ncols());
    w.bias.fill(T::zero());
    w.bias.slice_mut(ndarray::s![.., h..2 * h]).fill(T::one());
}

/// Xavier-uniform weights, zero biases except the LSTM forget-gate bias,
/// which is set to one. Values are drawn in double precision, so `f32` and
/// `f64` models from the same seed agree up to rounding.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<T>::zeros(config);
    p.src_embed = xavier(&mut rng, p.src_embed.nrows(), p.src_embed.ncols());
    p.tgt_embed = xavier(&mut rng, p.tgt_embed.nrows(), p.tgt_embed.ncols());
    for (fw, bw) in p.encoder.layers.iter_mut() {
        init_lstm(&mut rng, fw);
        init_lstm(&mut rng, bw);
    }
    let d = &mut p.decoder;
    d.bridge_h = xavier(&mut rng, d.bridge_h.nrows(), d.bridge_h.ncols());
    d.bridge_c = xavier(&mut rng, d.bridge_c.nrows(), d.bridge_c.ncols());
    for w in d.layers.iter_mut() {
        init_lstm(&mut rng, w);
    }
    d.att_query = xavier(&mut rng, d.att_query.nrows(), d.att_query.ncols());
    d.att_key = xavier(&mut rng, d.att_key.nrows(), d.att_key.ncols());
    d.att_v = xavier(&mut rng, d.att_v.nrows(), d.att_v.ncols());
    d.out_w = xavier(&mut rng, d.out_w.nrows(), d.out_w.ncols());
    d.gen_w = xavier(&mut rng, d.gen_w.nrows(), d.gen_w.ncols());
    Ok(p)
}

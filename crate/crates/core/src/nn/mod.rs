//! Attentional encoder-decoder corrector.
//!
//! A bidirectional LSTM encoder reads the source; the concatenated final
//! states of its top layer are linearly projected to initialise every
//! decoder layer. The decoder is a unidirectional LSTM stack with additive
//! attention over the encoder outputs, followed by a `tanh` attentional
//! layer and a softmax generator. Source and target embeddings are separate
//! tensors.
//!
//! Gradients are computed by a hand-written reverse pass
//! ([`backward`]), checked against finite differences in the test suite.

mod checkpoint;
mod decode;
mod dropout;
pub(crate) mod lstm;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint};
pub use decode::{beam_hypothesis, decode_beam, decode_greedy, decode_greedy_batch, greedy_hypotheses, sequence_log_prob, Hypothesis};
pub use dropout::{apply_dropout_masks, DropoutMasks, MaskShapes};
pub use lstm::LstmWeights;
pub use model::{backward, backward_masked, forward_loss, Batch, ForwardCache};
pub use params::{init_params, DecoderParams, EncoderParams, ModelParams, ParamGroup};

/// Architecture and regularisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_size: usize,
    pub dropout_p: f64,
    pub word_dropout_p: f64,
    pub variational: bool,
    pub max_decode_len: usize,
}

impl ModelConfig {
    /// Small model that trains on a laptop CPU in minutes.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden_dim: 64,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size,
            dropout_p: 0.1,
            word_dropout_p: 0.1,
            variational: true,
            max_decode_len: 64,
        }
    }

    /// Full-size architecture: 3+3 layers of 500 units.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim: 500,
            hidden_dim: 500,
            enc_layers: 3,
            dec_layers: 3,
            vocab_size,
            dropout_p: 0.1,
            word_dropout_p: 0.1,
            variational: true,
            max_decode_len: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("vocab_size", self.vocab_size),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size <= crate::subword::EOS as usize {
            return Err(Error::Config("vocab_size must cover the special symbols".into()));
        }
        for (name, p) in [("dropout_p", self.dropout_p), ("word_dropout_p", self.word_dropout_p)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is outside [0, 1)")));
            }
        }
        Ok(())
    }
}

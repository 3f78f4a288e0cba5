use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use super::dropout::{DropoutMasks, MaskShapes};
use super::lstm::{self, StepCache};
use super::params::{ModelParams, ParamGroup};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subword::{BOS, EOS, PAD};

/// A padded batch of source/target id sequences.
///
/// Every source gets an end-of-sentence marker appended. Decoder inputs are
/// `BOS y_1 .. y_n`, outputs are `y_1 .. y_n EOS`; padding positions carry
/// `PAD` and are excluded from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub(crate) src: Vec<Vec<u32>>,
    pub(crate) src_lens: Vec<usize>,
    pub(crate) tgt_in: Vec<Vec<u32>>,
    pub(crate) tgt_out: Vec<Vec<u32>>,
}

impl Batch {
    pub fn new(src: &[Vec<u32>], tgt: &[Vec<u32>]) -> Result<Batch> {
        if src.len() != tgt.len() {
            return Err(Error::Shape(format!("{} sources but {} targets", src.len(), tgt.len())));
        }
        let mut b = Batch::sources(src)?;
        let t_len = tgt.iter().map(Vec::len).max().unwrap_or(0) + 1;
        for y in tgt {
            let mut tin = Vec::with_capacity(t_len);
            tin.push(BOS);
            tin.extend_from_slice(y);
            tin.resize(t_len, PAD);
            let mut tout = y.clone();
            tout.push(EOS);
            tout.resize(t_len, PAD);
            b.tgt_in.push(tin);
            b.tgt_out.push(tout);
        }
        Ok(b)
    }

    /// Sources only, for decoding.
    pub fn sources(src: &[Vec<u32>]) -> Result<Batch> {
        if src.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let s_len = src.iter().map(Vec::len).max().unwrap_or(0) + 1;
        let mut out = Batch {
            src: Vec::with_capacity(src.len()),
            src_lens: Vec::with_capacity(src.len()),
            tgt_in: Vec::new(),
            tgt_out: Vec::new(),
        };
        for x in src {
            let mut row = x.clone();
            row.push(EOS);
            out.src_lens.push(row.len());
            row.resize(s_len, PAD);
            out.src.push(row);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src_len(&self) -> usize {
        self.src[0].len()
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_in.first().map_or(0, Vec::len)
    }

    pub fn shapes(&self) -> MaskShapes {
        MaskShapes {
            batch: self.len(),
            src_len: self.src_len(),
            tgt_len: self.tgt_len(),
        }
    }

    /// Target tokens that count toward the loss (including the final EOS).
    pub fn num_target_tokens(&self) -> usize {
        self.tgt_out.iter().flatten().filter(|&&y| y != PAD).count()
    }

    fn check_ids(&self, vocab: usize) -> Result<()> {
        for (side, rows) in [("source", &self.src), ("target", &self.tgt_in), ("target", &self.tgt_out)] {
            if let Some(&id) = rows.iter().flatten().find(|&&id| id as usize >= vocab) {
                return Err(Error::OutOfRange(format!("{side} id {id} >= vocab_size {vocab}")));
            }
        }
        Ok(())
    }
}

/// Encoder outputs shared by training and decoding.
#[derive(Debug, Clone)]
pub(crate) struct Encoded<T> {
    /// `B x S x 2H`
    pub memory: Array3<T>,
    /// `B x S x H`: projected memory plus attention bias.
    pub keys: Array3<T>,
    pub lens: Vec<usize>,
    /// `B x 2H` final states of the top layer, `[forward; backward]`.
    pub final_h: Array2<T>,
    pub final_c: Array2<T>,
    /// `[layer][direction][t]`
    pub caches: Vec<[Vec<StepCache<T>>; 2]>,
}

impl<T: Scalar> Encoded<T> {
    /// Rows `idx` of every per-sentence tensor, for beam expansion.
    pub fn select(&self, idx: &[usize]) -> Encoded<T> {
        Encoded {
            memory: self.memory.select(Axis(0), idx),
            keys: self.keys.select(Axis(0), idx),
            lens: idx.iter().map(|&i| self.lens[i]).collect(),
            final_h: self.final_h.select(Axis(0), idx),
            final_c: self.final_c.select(Axis(0), idx),
            caches: Vec::new(),
        }
    }
}

fn keep_column<T: Scalar>(lens: &[usize], t: usize) -> Array2<T> {
    Array2::from_shape_fn((lens.len(), 1), |(b, _)| if t < lens[b] { T::one() } else { T::zero() })
}

fn gather_rows<T: Scalar>(table: &Array2<T>, ids: impl Iterator<Item = u32>) -> Array2<T> {
    let ids: Vec<usize> = ids.map(|i| i as usize).collect();
    table.select(Axis(0), &ids)
}

pub(crate) fn encode<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch,
    masks: Option<&DropoutMasks<T>>,
    keep_cache: bool,
) -> Encoded<T> {
    let cfg = &params.config;
    let (bsz, s_len, h) = (batch.len(), batch.src_len(), cfg.hidden_dim);
    let mut inputs: Vec<Array2<T>> = (0..s_len)
        .map(|t| {
            let mut x = gather_rows(&params.src_embed, batch.src.iter().map(|r| r[t]));
            if let Some(m) = masks {
                x *= &m.word.slice(s![.., t..t + 1]);
            }
            x
        })
        .collect();
    let mut caches = Vec::new();
    let mut finals = (Array2::zeros((bsz, 0)), Array2::zeros((bsz, 0)));
    for (l, (fw, bw)) in params.encoder.layers.iter().enumerate() {
        if let Some(m) = masks {
            for (t, x) in inputs.iter_mut().enumerate() {
                *x *= &m.enc_input[l][t];
            }
        }
        let mut outs: [Vec<Array2<T>>; 2] = [vec![Array2::zeros((0, 0)); s_len], vec![Array2::zeros((0, 0)); s_len]];
        let mut dir_caches: [Vec<Option<StepCache<T>>>; 2] = [vec![None; s_len], vec![None; s_len]];
        let mut dir_finals = Vec::new();
        for (dir, w) in [fw, bw].into_iter().enumerate() {
            let mut hs = Array2::<T>::zeros((bsz, h));
            let mut cs = Array2::<T>::zeros((bsz, h));
            let order: Vec<usize> = if dir == 0 { (0..s_len).collect() } else { (0..s_len).rev().collect() };
            for t in order {
                let rec = masks.map(|m| &m.enc_recurrent[l][dir][t]);
                let (hn, cn, cache) = lstm::step(w, inputs[t].clone(), &hs, &cs, rec, Some(keep_column(&batch.src_lens, t)));
                hs = hn;
                cs = cn;
                outs[dir][t] = hs.clone();
                if keep_cache {
                    dir_caches[dir][t] = Some(cache);
                }
            }
            dir_finals.push((hs, cs));
        }
        if keep_cache {
            let [a, b] = dir_caches;
            caches.push([a.into_iter().flatten().collect(), b.into_iter().flatten().collect()]);
        }
        inputs = (0..s_len)
            .map(|t| ndarray::concatenate(Axis(1), &[outs[0][t].view(), outs[1][t].view()]).unwrap())
            .collect();
        let (f, b) = (&dir_finals[0], &dir_finals[1]);
        finals = (
            ndarray::concatenate(Axis(1), &[f.0.view(), b.0.view()]).unwrap(),
            ndarray::concatenate(Axis(1), &[f.1.view(), b.1.view()]).unwrap(),
        );
    }
    let mut memory = Array3::<T>::zeros((bsz, s_len, 2 * h));
    for (t, x) in inputs.iter().enumerate() {
        memory.slice_mut(s![.., t, ..]).assign(x);
    }
    let flat = memory.view().into_shape_with_order((bsz * s_len, 2 * h)).unwrap();
    let mut keys2 = flat.dot(&params.decoder.att_key);
    keys2 += &params.decoder.att_bias;
    let keys = keys2.into_shape_with_order((bsz, s_len, h)).unwrap();
    Encoded {
        memory,
        keys,
        lens: batch.src_lens.clone(),
        final_h: finals.0,
        final_c: finals.1,
        caches,
    }
}

/// Decoder initial state: the same projection seeds every layer.
pub(crate) fn bridge<T: Scalar>(params: &ModelParams<T>, enc: &Encoded<T>) -> (Vec<Array2<T>>, Vec<Array2<T>>) {
    let d = &params.decoder;
    let h0 = enc.final_h.dot(&d.bridge_h) + &d.bridge_h_b;
    let c0 = enc.final_c.dot(&d.bridge_c) + &d.bridge_c_b;
    let n = params.config.dec_layers;
    (vec![h0; n], vec![c0; n])
}

#[derive(Debug, Clone)]
pub(crate) struct DecStep<T> {
    pub lstm: Vec<StepCache<T>>,
    pub query: Array2<T>,
    pub tanh_att: Array3<T>,
    pub alpha: Array2<T>,
    pub cat: Array2<T>,
    pub out: Array2<T>,
    pub out_drop: Array2<T>,
    /// Row-wise log-softmax of the generator logits.
    pub log_probs: Array2<T>,
}

pub(crate) struct StepMasks<'a, T> {
    pub input: Vec<&'a Array2<T>>,
    pub recurrent: Vec<&'a Array2<T>>,
    pub output: &'a Array2<T>,
}

fn step_masks<T>(m: Option<&DropoutMasks<T>>, t: usize) -> Option<StepMasks<'_, T>> {
    m.map(|m| StepMasks {
        input: m.dec_input.iter().map(|l| &l[t]).collect(),
        recurrent: m.dec_recurrent.iter().map(|l| &l[t]).collect(),
        output: &m.output[t],
    })
}

fn log_softmax_rows<T: Scalar>(logits: &mut Array2<T>) {
    for mut row in logits.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

/// One decoder step for every row of the batch. Updates `state` in place.
pub(crate) fn decoder_step<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    tokens: &[u32],
    state: &mut (Vec<Array2<T>>, Vec<Array2<T>>),
    masks: Option<StepMasks<'_, T>>,
) -> DecStep<T> {
    let d = &params.decoder;
    let h = params.config.hidden_dim;
    let bsz = tokens.len();
    let mut x = gather_rows(&params.tgt_embed, tokens.iter().copied());
    let mut lstm_caches = Vec::with_capacity(d.layers.len());
    for (l, w) in d.layers.iter().enumerate() {
        if let Some(m) = &masks {
            x *= m.input[l];
        }
        let rec = masks.as_ref().map(|m| m.recurrent[l]);
        let (hn, cn, cache) = lstm::step(w, x, &state.0[l], &state.1[l], rec, None);
        state.0[l] = hn;
        state.1[l] = cn;
        lstm_caches.push(cache);
        x = state.0[l].clone();
    }
    let s_top = x;
    let q = s_top.dot(&d.att_query);
    let mut tanh_att = enc.keys.clone();
    for (b, mut plane) in tanh_att.outer_iter_mut().enumerate() {
        plane += &q.row(b);
    }
    tanh_att.mapv_inplace(|v| v.tanh());
    let v = d.att_v.row(0);
    let s_len = enc.memory.shape()[1];
    let mut alpha = Array2::<T>::zeros((bsz, s_len));
    let mut ctx = Array2::<T>::zeros((bsz, 2 * h));
    for b in 0..bsz {
        let len = enc.lens[b];
        let scores = tanh_att.index_axis(Axis(0), b).dot(&v);
        let m = scores.iter().take(len).fold(T::neg_infinity(), |a, &c| a.max(c));
        let mut z = T::zero();
        for s in 0..len {
            let e = (scores[s] - m).exp();
            alpha[[b, s]] = e;
            z += e;
        }
        for s in 0..len {
            alpha[[b, s]] = alpha[[b, s]] / z;
        }
        ctx.row_mut(b).assign(&alpha.row(b).dot(&enc.memory.index_axis(Axis(0), b)));
    }
    let cat = ndarray::concatenate(Axis(1), &[s_top.view(), ctx.view()]).unwrap();
    let out = (cat.dot(&d.out_w) + &d.out_b).mapv(|v| v.tanh());
    let out_drop = match &masks {
        Some(m) => &out * m.output,
        None => out.clone(),
    };
    let mut log_probs = out_drop.dot(&d.gen_w) + &d.gen_b;
    log_softmax_rows(&mut log_probs);
    DecStep {
        lstm: lstm_caches,
        query: s_top,
        tanh_att,
        alpha,
        cat,
        out,
        out_drop,
        log_probs,
    }
}

/// Everything the reverse pass needs. Consumed by [`backward`].
#[derive(Debug)]
pub struct ForwardCache<T> {
    version: u64,
    batch: Batch,
    masks: Option<DropoutMasks<T>>,
    enc: Encoded<T>,
    steps: Vec<DecStep<T>>,
    num_tokens: usize,
    loss: T,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn loss(&self) -> T {
        self.loss
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }
}

/// Teacher-forced mean negative log-likelihood per non-PAD target token.
pub fn forward_loss<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch,
    masks: Option<&DropoutMasks<T>>,
) -> Result<(T, ForwardCache<T>)> {
    batch.check_ids(params.config.vocab_size)?;
    if batch.tgt_in.is_empty() {
        return Err(Error::Shape("batch has no targets".into()));
    }
    if let Some(m) = masks {
        if m.shapes != batch.shapes() {
            return Err(Error::Shape(format!("dropout masks drawn for {:?}, batch is {:?}", m.shapes, batch.shapes())));
        }
    }
    let enc = encode(params, batch, masks, true);
    let mut state = bridge(params, &enc);
    let num_tokens = batch.num_target_tokens();
    let mut total = T::zero();
    let mut steps = Vec::with_capacity(batch.tgt_len());
    for t in 0..batch.tgt_len() {
        let tokens: Vec<u32> = batch.tgt_in.iter().map(|r| r[t]).collect();
        let st = decoder_step(params, &enc, &tokens, &mut state, step_masks(masks, t));
        for (b, row) in batch.tgt_out.iter().enumerate() {
            let y = row[t];
            if y != PAD {
                total -= st.log_probs[[b, y as usize]];
            }
        }
        steps.push(st);
    }
    let loss = total / T::from_usize(num_tokens).unwrap();
    let cache = ForwardCache {
        version: params.version,
        batch: batch.clone(),
        masks: masks.cloned(),
        enc,
        steps,
        num_tokens,
        loss,
    };
    Ok((loss, cache))
}

/// Exact gradients of the cached loss with respect to every parameter.
pub fn backward<T: Scalar>(params: &ModelParams<T>, cache: ForwardCache<T>) -> Result<ModelParams<T>> {
    backward_masked(params, cache, &ParamGroup::ALL)
}

fn add_rows<T: Scalar>(table: &mut Array2<T>, ids: impl Iterator<Item = u32>, rows: ArrayView2<'_, T>) {
    for (id, row) in ids.zip(rows.rows()) {
        let mut dst = table.row_mut(id as usize);
        dst += &row;
    }
}

/// Like [`backward`], but only groups listed in `wanted` receive weight
/// gradients; the others are left at zero. Gradients flowing *through*
/// skipped groups are still propagated.
pub fn backward_masked<T: Scalar>(
    params: &ModelParams<T>,
    cache: ForwardCache<T>,
    wanted: &[ParamGroup],
) -> Result<ModelParams<T>> {
    if cache.version != params.version {
        return Err(Error::StaleCache);
    }
    let want = |g: ParamGroup| wanted.contains(&g);
    let (want_src, want_tgt, want_enc, want_dec) = (
        want(ParamGroup::SrcEmbed),
        want(ParamGroup::TgtEmbed),
        want(ParamGroup::Encoder),
        want(ParamGroup::Decoder),
    );
    let ForwardCache {
        batch,
        masks,
        enc,
        steps,
        num_tokens,
        ..
    } = cache;
    let cfg = &params.config;
    let (bsz, s_len, h) = (batch.len(), batch.src_len(), cfg.hidden_dim);
    let d = &params.decoder;
    let mut grads = ModelParams::<T>::zeros(cfg);
    let inv_n = T::one() / T::from_usize(num_tokens).unwrap();
    let n_dec = d.layers.len();

    let mut d_memory = Array3::<T>::zeros((bsz, s_len, 2 * h));
    let mut d_keys = Array3::<T>::zeros((bsz, s_len, h));
    let mut dh_next: Vec<Array2<T>> = vec![Array2::zeros((bsz, h)); n_dec];
    let mut dc_next: Vec<Array2<T>> = vec![Array2::zeros((bsz, h)); n_dec];
    let v = d.att_v.row(0).to_owned();

    for (t, st) in steps.iter().enumerate().rev() {
        let mut dlogits = st.log_probs.mapv(|v| v.exp());
        for b in 0..bsz {
            let y = batch.tgt_out[b][t];
            if y == PAD {
                dlogits.row_mut(b).fill(T::zero());
            } else {
                dlogits[[b, y as usize]] -= T::one();
            }
        }
        dlogits *= inv_n;
        if want_dec {
            grads.decoder.gen_w += &st.out_drop.t().dot(&dlogits);
            grads.decoder.gen_b += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let mut d_out = dlogits.dot(&d.gen_w.t());
        if let Some(m) = &masks {
            d_out *= &m.output[t];
        }
        let d_pre = d_out * &st.out.mapv(|o| T::one() - o * o);
        if want_dec {
            grads.decoder.out_w += &st.cat.t().dot(&d_pre);
            grads.decoder.out_b += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let d_cat = d_pre.dot(&d.out_w.t());
        let mut ds_top = d_cat.slice(s![.., 0..h]).to_owned();
        let d_ctx = d_cat.slice(s![.., h..3 * h]);

        let mut dq = Array2::<T>::zeros((bsz, h));
        let mut dv = Array1::<T>::zeros(h);
        for b in 0..bsz {
            let mem_b = enc.memory.index_axis(Axis(0), b);
            let alpha_b = st.alpha.row(b);
            let dctx_b = d_ctx.row(b);
            let dalpha = mem_b.dot(&dctx_b);
            {
                let mut dm = d_memory.index_axis_mut(Axis(0), b);
                dm += &(&alpha_b.insert_axis(Axis(1)) * &dctx_b.insert_axis(Axis(0)));
            }
            let dot = alpha_b.dot(&dalpha);
            let de = &alpha_b * &dalpha.mapv(|x| x - dot);
            let ta = st.tanh_att.index_axis(Axis(0), b);
            dv += &ta.t().dot(&de);
            let dpre = (&de.insert_axis(Axis(1)) * &v.view().insert_axis(Axis(0))) * &ta.mapv(|x| T::one() - x * x);
            dq.row_mut(b).assign(&dpre.sum_axis(Axis(0)));
            let mut dk = d_keys.index_axis_mut(Axis(0), b);
            dk += &dpre;
        }
        if want_dec {
            grads.decoder.att_v += &dv.insert_axis(Axis(0));
            grads.decoder.att_query += &st.query.t().dot(&dq);
        }
        ds_top += &dq.dot(&d.att_query.t());

        let mut d_from_above = ds_top;
        for l in (0..n_dec).rev() {
            let dh = &d_from_above + &dh_next[l];
            let rec = masks.as_ref().map(|m| &m.dec_recurrent[l][t]);
            let gw = if want_dec { Some(&mut grads.decoder.layers[l]) } else { None };
            let (mut dx, dhp, dcp) = lstm::step_backward(&d.layers[l], gw, &st.lstm[l], rec, &dh, &dc_next[l]);
            dh_next[l] = dhp;
            dc_next[l] = dcp;
            if let Some(m) = &masks {
                dx *= &m.dec_input[l][t];
            }
            if l == 0 {
                if want_tgt {
                    add_rows(&mut grads.tgt_embed, batch.tgt_in.iter().map(|r| r[t]), dx.view());
                }
            } else {
                d_from_above = dx;
            }
        }
    }

    let dh0 = dh_next.iter().fold(Array2::<T>::zeros((bsz, h)), |a, b| a + b);
    let dc0 = dc_next.iter().fold(Array2::<T>::zeros((bsz, h)), |a, b| a + b);
    if want_dec {
        grads.decoder.bridge_h += &enc.final_h.t().dot(&dh0);
        grads.decoder.bridge_h_b += &dh0.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.decoder.bridge_c += &enc.final_c.t().dot(&dc0);
        grads.decoder.bridge_c_b += &dc0.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let d_final_h = dh0.dot(&d.bridge_h.t());
    let d_final_c = dc0.dot(&d.bridge_c.t());

    let dk_flat = d_keys.into_shape_with_order((bsz * s_len, h)).unwrap();
    if want_dec {
        let mem_flat = enc.memory.view().into_shape_with_order((bsz * s_len, 2 * h)).unwrap();
        grads.decoder.att_key += &mem_flat.t().dot(&dk_flat);
        grads.decoder.att_bias += &dk_flat.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let mut d_memory = d_memory.into_shape_with_order((bsz * s_len, 2 * h)).unwrap();
    d_memory += &dk_flat.dot(&d.att_key.t());
    let d_memory = d_memory.into_shape_with_order((bsz, s_len, 2 * h)).unwrap();

    // Gradients w.r.t. each layer's per-step outputs, `[t] -> B x 2H`.
    let mut d_outputs: Vec<Array2<T>> = (0..s_len).map(|t| d_memory.slice(s![.., t, ..]).to_owned()).collect();
    let n_enc = params.encoder.layers.len();
    for l in (0..n_enc).rev() {
        let (fw, bw) = &params.encoder.layers[l];
        let in_dim = fw.w_ih.nrows();
        let mut d_inputs: Vec<Array2<T>> = vec![Array2::zeros((bsz, in_dim)); s_len];
        for (dir, w) in [fw, bw].into_iter().enumerate() {
            let cols = if dir == 0 { 0..h } else { h..2 * h };
            let (mut dh, mut dc) = if l == n_enc - 1 {
                (
                    d_final_h.slice(s![.., cols.clone()]).to_owned(),
                    d_final_c.slice(s![.., cols.clone()]).to_owned(),
                )
            } else {
                (Array2::zeros((bsz, h)), Array2::zeros((bsz, h)))
            };
            let order: Vec<usize> = if dir == 0 { (0..s_len).rev().collect() } else { (0..s_len).collect() };
            for t in order {
                dh += &d_outputs[t].slice(s![.., cols.clone()]);
                let rec = masks.as_ref().map(|m| &m.enc_recurrent[l][dir][t]);
                let gw = if want_enc {
                    let (gf, gb) = &mut grads.encoder.layers[l];
                    Some(if dir == 0 { gf } else { gb })
                } else {
                    None
                };
                let (dx, dhp, dcp) = lstm::step_backward(w, gw, &enc.caches[l][dir][t], rec, &dh, &dc);
                dh = dhp;
                dc = dcp;
                d_inputs[t] += &dx;
            }
        }
        if let Some(m) = &masks {
            for (t, dx) in d_inputs.iter_mut().enumerate() {
                *dx *= &m.enc_input[l][t];
            }
        }
        d_outputs = d_inputs;
    }
    if want_src {
        for (t, dx) in d_outputs.iter_mut().enumerate() {
            if let Some(m) = &masks {
                *dx *= &m.word.slice(s![.., t..t + 1]);
            }
            add_rows(&mut grads.src_embed, batch.src.iter().map(|r| r[t]), dx.view());
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{apply_dropout_masks, init_params, ModelConfig};

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 5,
            enc_layers: 2,
            dec_layers: 2,
            vocab_size: 9,
            dropout_p: 0.2,
            word_dropout_p: 0.2,
            variational: true,
            max_decode_len: 8,
        }
    }

    fn batch() -> Batch {
        Batch::new(&[vec![4, 5, 6], vec![7]], &[vec![4, 6], vec![8, 7, 5]]).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let cfg = ModelConfig {
            vocab_size: 23,
            ..tiny_config()
        };
        let p = ModelParams::<f64>::zeros(&cfg);
        let (loss, _) = forward_loss(&p, &batch(), None).unwrap();
        assert!((loss - (23f64).ln()).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn duplicate_sentence_keeps_mean() {
        let p = init_params::<f64>(&tiny_config(), 3).unwrap();
        let one = Batch::new(&[vec![4, 5, 6]], &[vec![4, 6]]).unwrap();
        let two = Batch::new(&[vec![4, 5, 6], vec![4, 5, 6]], &[vec![4, 6], vec![4, 6]]).unwrap();
        let (a, _) = forward_loss(&p, &one, None).unwrap();
        let (b, _) = forward_loss(&p, &two, None).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_token_weighted_mean_of_rows() {
        let p = init_params::<f64>(&tiny_config(), 4).unwrap();
        let (a, ca) = forward_loss(&p, &Batch::new(&[vec![4, 5, 6]], &[vec![4, 6]]).unwrap(), None).unwrap();
        let (b, cb) = forward_loss(&p, &Batch::new(&[vec![7]], &[vec![8, 7, 5]]).unwrap(), None).unwrap();
        let (both, c) = forward_loss(&p, &batch(), None).unwrap();
        assert_eq!(c.num_tokens(), ca.num_tokens() + cb.num_tokens());
        let expected = (a * 3.0 + b * 4.0) / 7.0;
        assert!((both - expected).abs() < 1e-12, "{both} vs {expected}");
    }

    #[test]
    fn rejects_out_of_vocab() {
        let p = init_params::<f32>(&tiny_config(), 1).unwrap();
        let b = Batch::new(&[vec![4, 99]], &[vec![4]]).unwrap();
        assert!(matches!(forward_loss(&p, &b, None), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = init_params::<f64>(&tiny_config(), 1).unwrap();
        let (_, cache) = forward_loss(&p, &batch(), None).unwrap();
        p.bump_version();
        assert!(matches!(backward(&p, cache), Err(Error::StaleCache)));
    }

    #[test]
    fn inference_is_deterministic() {
        let p = init_params::<f32>(&tiny_config(), 2).unwrap();
        let (a, _) = forward_loss(&p, &batch(), None).unwrap();
        let (b, _) = forward_loss(&p, &batch(), None).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn unused_target_rows_get_zero_gradient() {
        let p = init_params::<f64>(&tiny_config(), 5).unwrap();
        let b = batch();
        let m = apply_dropout_masks(&p.config, 1, b.shapes());
        let (_, cache) = forward_loss(&p, &b, Some(&m)).unwrap();
        let g = backward(&p, cache).unwrap();
        let used: Vec<usize> = b.tgt_in.iter().flatten().map(|&i| i as usize).collect();
        for r in 0..p.config.vocab_size {
            if !used.contains(&r) {
                assert!(g.tgt_embed.row(r).iter().all(|v| *v == 0.0), "row {r}");
            }
        }
        assert!(g.tgt_embed.row(4).iter().any(|v| *v != 0.0));
    }

    fn finite_difference_check(masked: bool) {
        let cfg = tiny_config();
        let p = init_params::<f64>(&cfg, 11).unwrap();
        let b = batch();
        let masks = masked.then(|| apply_dropout_masks::<f64>(&cfg, 3, b.shapes()));
        let (_, cache) = forward_loss(&p, &b, masks.as_ref()).unwrap();
        let g = backward(&p, cache).unwrap();
        let eps = 1e-5;
        let names: Vec<String> = p.tensors().into_iter().map(|(_, n, _)| n).collect();
        let analytic: Vec<Array2<f64>> = g.tensors().into_iter().map(|(_, _, t)| t.clone()).collect();
        let mut worst = 0.0f64;
        for (k, name) in names.iter().enumerate() {
            let shape = analytic[k].dim();
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let mut plus = p.clone();
                    plus.tensors_mut()[k].1[[i, j]] += eps;
                    let mut minus = p.clone();
                    minus.tensors_mut()[k].1[[i, j]] -= eps;
                    let (lp, _) = forward_loss(&plus, &b, masks.as_ref()).unwrap();
                    let (lm, _) = forward_loss(&minus, &b, masks.as_ref()).unwrap();
                    let numeric = (lp - lm) / (2.0 * eps);
                    let a = analytic[k][[i, j]];
                    let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                    if (a - numeric).abs() > 1e-9 {
                        worst = worst.max(rel);
                    }
                    assert!(rel < 1e-4 || (a - numeric).abs() < 1e-9, "{name}[{i},{j}]: analytic {a} numeric {numeric}");
                }
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(false);
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout() {
        finite_difference_check(true);
    }

    #[test]
    fn masked_backward_matches_full_on_wanted_groups() {
        let p = init_params::<f64>(&tiny_config(), 6).unwrap();
        let b = batch();
        let (_, c1) = forward_loss(&p, &b, None).unwrap();
        let (_, c2) = forward_loss(&p, &b, None).unwrap();
        let full = backward(&p, c1).unwrap();
        let part = backward_masked(&p, c2, &[ParamGroup::SrcEmbed, ParamGroup::Encoder]).unwrap();
        assert!(part.group_bits_equal(&full, ParamGroup::SrcEmbed));
        assert!(part.group_bits_equal(&full, ParamGroup::Encoder));
        assert!(part.decoder.gen_w.iter().all(|v| *v == 0.0));
    }
}

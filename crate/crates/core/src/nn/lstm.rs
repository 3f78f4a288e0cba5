use ndarray::{s, Array2, Axis};

use crate::scalar::Scalar;

/// One LSTM layer (one direction). Gate column order: input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights<T> {
    /// `in_dim x 4H`
    pub w_ih: Array2<T>,
    /// `H x 4H`
    pub w_hh: Array2<T>,
    /// `1 x 4H`
    pub bias: Array2<T>,
}

impl<T: Scalar> LstmWeights<T> {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        LstmWeights {
            w_ih: Array2::zeros((in_dim, 4 * hidden)),
            w_hh: Array2::zeros((hidden, 4 * hidden)),
            bias: Array2::zeros((1, 4 * hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Activations kept for the backward pass of one time step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache<T> {
    pub x: Array2<T>,
    /// Previous hidden state after the recurrent dropout mask.
    pub h_in: Array2<T>,
    pub c_prev: Array2<T>,
    pub i: Array2<T>,
    pub f: Array2<T>,
    pub g: Array2<T>,
    pub o: Array2<T>,
    pub tanh_c: Array2<T>,
    /// `B x 1` mask: 1 where the step is real, 0 where the state is carried.
    pub keep: Option<Array2<T>>,
}

/// Runs one step. Rows whose `keep` entry is 0 carry their previous state
/// through unchanged.
pub(crate) fn step<T: Scalar>(
    w: &LstmWeights<T>,
    x: Array2<T>,
    h_prev: &Array2<T>,
    c_prev: &Array2<T>,
    recurrent_mask: Option<&Array2<T>>,
    keep: Option<Array2<T>>,
) -> (Array2<T>, Array2<T>, StepCache<T>) {
    let hsz = w.hidden();
    let h_in = match recurrent_mask {
        Some(m) => h_prev * m,
        None => h_prev.clone(),
    };
    let mut z = x.dot(&w.w_ih);
    z += &h_in.dot(&w.w_hh);
    z += &w.bias;
    let i = z.slice(s![.., 0..hsz]).mapv(sigmoid);
    let f = z.slice(s![.., hsz..2 * hsz]).mapv(sigmoid);
    let g = z.slice(s![.., 2 * hsz..3 * hsz]).mapv(|v| v.tanh());
    let o = z.slice(s![.., 3 * hsz..4 * hsz]).mapv(sigmoid);
    let c_new = &f * c_prev + &i * &g;
    let tanh_c = c_new.mapv(|v| v.tanh());
    let h_new = &o * &tanh_c;
    let (h, c) = match &keep {
        Some(m) => {
            let inv = m.mapv(|v| T::one() - v);
            (&h_new * m + h_prev * &inv, &c_new * m + c_prev * &inv)
        }
        None => (h_new, c_new),
    };
    let cache = StepCache {
        x,
        h_in,
        c_prev: c_prev.clone(),
        i,
        f,
        g,
        o,
        tanh_c,
        keep,
    };
    (h, c, cache)
}

/// Backward through one step. `dh`/`dc` are gradients w.r.t. the step's
/// output state. Returns `(dx, dh_prev, dc_prev)`; weight gradients are
/// accumulated into `grad` when given.
pub(crate) fn step_backward<T: Scalar>(
    w: &LstmWeights<T>,
    grad: Option<&mut LstmWeights<T>>,
    cache: &StepCache<T>,
    recurrent_mask: Option<&Array2<T>>,
    dh: &Array2<T>,
    dc: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let hsz = w.hidden();
    let one = T::one();
    let (dh_new, dc_out, dh_carry, dc_carry) = match &cache.keep {
        Some(m) => {
            let inv = m.mapv(|v| one - v);
            (dh * m, dc * m, Some(dh * &inv), Some(dc * &inv))
        }
        None => (dh.clone(), dc.clone(), None, None),
    };
    let dtanh = cache.tanh_c.mapv(|t| one - t * t);
    let dc_new = dc_out + &(&dh_new * &cache.o * &dtanh);
    let d_o = &dh_new * &cache.tanh_c;
    let d_i = &dc_new * &cache.g;
    let d_g = &dc_new * &cache.i;
    let d_f = &dc_new * &cache.c_prev;

    let batch = dh.nrows();
    let mut dz = Array2::<T>::zeros((batch, 4 * hsz));
    dz.slice_mut(s![.., 0..hsz])
        .assign(&(&d_i * &cache.i.mapv(|v| v * (one - v))));
    dz.slice_mut(s![.., hsz..2 * hsz])
        .assign(&(&d_f * &cache.f.mapv(|v| v * (one - v))));
    dz.slice_mut(s![.., 2 * hsz..3 * hsz])
        .assign(&(&d_g * &cache.g.mapv(|v| one - v * v)));
    dz.slice_mut(s![.., 3 * hsz..4 * hsz])
        .assign(&(&d_o * &cache.o.mapv(|v| v * (one - v))));

    if let Some(gw) = grad {
        gw.w_ih += &cache.x.t().dot(&dz);
        gw.w_hh += &cache.h_in.t().dot(&dz);
        gw.bias += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let dx = dz.dot(&w.w_ih.t());
    let mut dh_prev = dz.dot(&w.w_hh.t());
    if let Some(m) = recurrent_mask {
        dh_prev *= m;
    }
    let mut dc_prev = &dc_new * &cache.f;
    if let Some(c) = dh_carry {
        dh_prev += &c;
    }
    if let Some(c) = dc_carry {
        dc_prev += &c;
    }
    (dx, dh_prev, dc_prev)
}

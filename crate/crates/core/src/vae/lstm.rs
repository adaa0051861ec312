//! Single-layer LSTM recurrence with hand-written backpropagation through
//! time. Gate order within the `4H` pre-activation vector is input, forget,
//! cell candidate, output.
//!
//! Input projections (`W_x·x_t + b`) are supplied by the caller, so the same
//! recurrence serves the encoder (one input per step) and the decoder (one
//! constant input broadcast over all steps).

use crate::scalar::Scalar;

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out += W·x` for row-major `W` of shape `out.len() × x.len()`.
#[inline]
pub(crate) fn matvec_acc<T: Scalar>(out: &mut [T], w: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = T::zero();
        for (&a, &b) in row.iter().zip(x) {
            s = s + a * b;
        }
        *o = *o + s;
    }
}

/// `out += Wᵀ·y` for row-major `W` of shape `y.len() × out.len()`.
#[inline]
pub(crate) fn matvec_t_acc<T: Scalar>(out: &mut [T], w: &[T], y: &[T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yi == T::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + a * yi;
        }
    }
}

/// `g += y ⊗ x` for row-major `g` of shape `y.len() × x.len()`.
#[inline]
pub(crate) fn outer_acc<T: Scalar>(g: &mut [T], y: &[T], x: &[T]) {
    let cols = x.len();
    for (&yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if yi == T::zero() {
            continue;
        }
        for (gi, &xj) in row.iter_mut().zip(x) {
            *gi = *gi + yi * xj;
        }
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace<T> {
    pub hidden: usize,
    pub steps: usize,
    /// Post-activation gates per step, `steps × 4H`.
    pub gates: Vec<T>,
    /// Cell states `c_0..c_T`, `(steps + 1) × H`.
    pub cells: Vec<T>,
    /// Hidden states `h_0..h_T`, `(steps + 1) × H`.
    pub hiddens: Vec<T>,
}

impl<T: Scalar> LstmTrace<T> {
    pub fn h(&self, t: usize) -> &[T] {
        &self.hiddens[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn last_h(&self) -> &[T] {
        self.h(self.steps)
    }
}

/// Runs the recurrence. `proj(t)` yields the input projection for step `t`.
pub(crate) fn forward<'a, T: Scalar>(
    w_h: &[T],
    hidden: usize,
    steps: usize,
    h0: &[T],
    c0: &[T],
    proj: impl Fn(usize) -> &'a [T],
) -> LstmTrace<T> {
    let h4 = 4 * hidden;
    let mut gates = vec![T::zero(); steps * h4];
    let mut cells = vec![T::zero(); (steps + 1) * hidden];
    let mut hiddens = vec![T::zero(); (steps + 1) * hidden];
    cells[..hidden].copy_from_slice(c0);
    hiddens[..hidden].copy_from_slice(h0);
    let mut a = vec![T::zero(); h4];
    for t in 0..steps {
        a.copy_from_slice(proj(t));
        matvec_acc(&mut a, w_h, &hiddens[t * hidden..(t + 1) * hidden]);
        let g = &mut gates[t * h4..(t + 1) * h4];
        for j in 0..hidden {
            g[j] = sigmoid(a[j]);
            g[hidden + j] = sigmoid(a[hidden + j]);
            g[2 * hidden + j] = a[2 * hidden + j].tanh();
            g[3 * hidden + j] = sigmoid(a[3 * hidden + j]);
        }
        let (prev, next) = cells.split_at_mut((t + 1) * hidden);
        let c_prev = &prev[t * hidden..];
        let c_next = &mut next[..hidden];
        let h_next = &mut hiddens[(t + 1) * hidden..(t + 2) * hidden];
        for j in 0..hidden {
            let c = g[hidden + j] * c_prev[j] + g[j] * g[2 * hidden + j];
            c_next[j] = c;
            h_next[j] = g[3 * hidden + j] * c.tanh();
        }
    }
    LstmTrace {
        hidden,
        steps,
        gates,
        cells,
        hiddens,
    }
}

/// Gradients produced by [`backward`].
pub(crate) struct LstmGrads<T> {
    /// Pre-activation gradients per step, `steps × 4H`; the caller turns
    /// these into input-projection and bias gradients.
    pub d_pre: Vec<T>,
    pub d_h0: Vec<T>,
}

/// Backpropagation through time. `d_h_ext(t, buf)` adds the external
/// gradient of the loss w.r.t. `h_{t+1}` (the output of step `t`) into
/// `buf`. Recurrent-weight gradients accumulate into `g_w_h`.
pub(crate) fn backward<T: Scalar>(
    w_h: &[T],
    g_w_h: &mut [T],
    trace: &LstmTrace<T>,
    mut d_h_ext: impl FnMut(usize, &mut [T]),
) -> LstmGrads<T> {
    let hidden = trace.hidden;
    let h4 = 4 * hidden;
    let steps = trace.steps;
    let mut d_pre = vec![T::zero(); steps * h4];
    let mut dh = vec![T::zero(); hidden];
    let mut dc = vec![T::zero(); hidden];
    for t in (0..steps).rev() {
        d_h_ext(t, &mut dh);
        let g = &trace.gates[t * h4..(t + 1) * h4];
        let c_prev = &trace.cells[t * hidden..(t + 1) * hidden];
        let c = &trace.cells[(t + 1) * hidden..(t + 2) * hidden];
        let da = &mut d_pre[t * h4..(t + 1) * h4];
        for j in 0..hidden {
            let (i, f, gg, o) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * o * (T::one() - tc * tc);
            da[j] = dcj * gg * i * (T::one() - i);
            da[hidden + j] = dcj * c_prev[j] * f * (T::one() - f);
            da[2 * hidden + j] = dcj * i * (T::one() - gg * gg);
            da[3 * hidden + j] = d_o * o * (T::one() - o);
            dc[j] = dcj * f;
        }
        outer_acc(g_w_h, da, trace.h(t));
        dh.iter_mut().for_each(|v| *v = T::zero());
        matvec_t_acc(&mut dh, w_h, da);
    }
    LstmGrads {
        d_pre,
        d_h0: dh,
    }
}

//! Single-layer bidirectional LSTM with hand-written backpropagation.
//!
//! Gate order inside the stacked `4H` dimension is input, forget, cell,
//! output (`i, f, g, o`):
//!
//! ```text
//! z   = W_ih x_t + W_hh h_prev + b
//! i   = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c_t = f ⊙ c_prev + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! The forward direction runs left to right, the backward direction right to
//! left, both from zero state. Output row `t` is `[h_fwd_t, h_bwd_t]`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::linear::glorot;
use crate::error::{Error, Result};
use crate::params::{join, Params};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    /// `[4H, D]`
    pub w_ih: Array2<T>,
    /// `[4H, H]`
    pub w_hh: Array2<T>,
    /// `[4H]`
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams<T> {
    pub fwd: LstmCell<T>,
    pub bwd: LstmCell<T>,
}

/// Cached activations of one direction, indexed by token position.
#[derive(Debug, Clone)]
pub struct LstmRun<T> {
    /// Post-activation gates `[T, 4H]`.
    pub gates: Array2<T>,
    pub c: Array2<T>,
    pub h: Array2<T>,
    reverse: bool,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace<T> {
    pub input: Array2<T>,
    pub fwd: LstmRun<T>,
    pub bwd: LstmRun<T>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    /// Glorot-uniform matrices, zero bias except forget gate bias 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(T::one());
        Self {
            w_ih: glorot(4 * hidden, input, input, 4 * hidden, rng),
            w_hh: glorot(4 * hidden, hidden, hidden, 4 * hidden, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input_width(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn run(&self, x: ArrayView2<'_, T>, reverse: bool) -> LstmRun<T> {
        let n = x.nrows();
        let h_dim = self.hidden();
        let mut gates = Array2::zeros((n, 4 * h_dim));
        let mut c = Array2::zeros((n, h_dim));
        let mut h = Array2::zeros((n, h_dim));
        let mut h_prev = Array1::zeros(h_dim);
        let mut c_prev = Array1::zeros(h_dim);
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let xw = x.dot(&self.w_ih.t()) + &self.bias;
        for &t in &order {
            let z = &xw.row(t) + &self.w_hh.dot(&h_prev);
            let mut g_row = gates.row_mut(t);
            for k in 0..h_dim {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h_dim + k]);
                let g = z[2 * h_dim + k].tanh();
                let o = sigmoid(z[3 * h_dim + k]);
                g_row[k] = i;
                g_row[h_dim + k] = f;
                g_row[2 * h_dim + k] = g;
                g_row[3 * h_dim + k] = o;
                let ct = f * c_prev[k] + i * g;
                c[[t, k]] = ct;
                h[[t, k]] = o * ct.tanh();
            }
            h_prev = h.row(t).to_owned();
            c_prev = c.row(t).to_owned();
        }
        LstmRun { gates, c, h, reverse }
    }

    /// Backpropagation through time. `dh` is the upstream gradient on every
    /// output state; parameter gradients accumulate into `grad`, the input
    /// gradient is returned.
    pub fn backward(&self, x: ArrayView2<'_, T>, run: &LstmRun<T>, dh: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let n = x.nrows();
        let h_dim = self.hidden();
        let mut dz_all = Array2::<T>::zeros((n, 4 * h_dim));
        let mut h_prev_all = Array2::<T>::zeros((n, h_dim));
        let mut dh_next = Array1::<T>::zeros(h_dim);
        let mut dc_next = Array1::<T>::zeros(h_dim);
        let zeros = Array1::<T>::zeros(h_dim);
        let order: Vec<usize> = if run.reverse { (0..n).collect() } else { (0..n).rev().collect() };
        for &t in &order {
            // Position processed just before t in the forward pass.
            let prev = if run.reverse { (t + 1 < n).then_some(t + 1) } else { t.checked_sub(1) };
            let (h_prev, c_prev): (ArrayView1<'_, T>, ArrayView1<'_, T>) = match prev {
                Some(p) => (run.h.row(p), run.c.row(p)),
                None => (zeros.view(), zeros.view()),
            };
            h_prev_all.row_mut(t).assign(&h_prev);
            let gates = run.gates.row(t);
            let mut dz = dz_all.row_mut(t);
            for k in 0..h_dim {
                let (i, f, g, o) = (gates[k], gates[h_dim + k], gates[2 * h_dim + k], gates[3 * h_dim + k]);
                let tc = run.c[[t, k]].tanh();
                let dht = dh[[t, k]] + dh_next[k];
                let d_o = dht * tc;
                let dc = dht * o * (T::one() - tc * tc) + dc_next[k];
                dz[k] = dc * g * i * (T::one() - i);
                dz[h_dim + k] = dc * c_prev[k] * f * (T::one() - f);
                dz[2 * h_dim + k] = dc * i * (T::one() - g * g);
                dz[3 * h_dim + k] = d_o * o * (T::one() - o);
                dc_next[k] = dc * f;
            }
            dh_next = dz.dot(&self.w_hh);
        }
        grad.w_ih += &dz_all.t().dot(&x);
        grad.w_hh += &dz_all.t().dot(&h_prev_all);
        grad.bias += &dz_all.sum_axis(ndarray::Axis(0));
        dz_all.dot(&self.w_ih)
    }
}

impl<T: Scalar> BiLstmParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            fwd: LstmCell::zeros(input, hidden),
            bwd: LstmCell::zeros(input, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = LstmCell::init(input, hidden, rng);
        let bwd = LstmCell::init(input, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn input_width(&self) -> usize {
        self.fwd.input_width()
    }

    /// Output `[T, 2H]`.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, BiLstmTrace<T>)> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape(format!(
                "BiLSTM expects width {}, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        let fwd = self.fwd.run(x, false);
        let bwd = self.bwd.run(x, true);
        let h = self.hidden();
        let mut out = Array2::zeros((x.nrows(), 2 * h));
        out.slice_mut(s![.., 0..h]).assign(&fwd.h);
        out.slice_mut(s![.., h..2 * h]).assign(&bwd.h);
        Ok((
            out,
            BiLstmTrace {
                input: x.to_owned(),
                fwd,
                bwd,
            },
        ))
    }

    pub fn backward(&self, trace: &BiLstmTrace<T>, grad_out: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let h = self.hidden();
        let x = trace.input.view();
        let dx_f = self.fwd.backward(x, &trace.fwd, grad_out.slice(s![.., 0..h]), &mut grad.fwd);
        let dx_b = self.bwd.backward(x, &trace.bwd, grad_out.slice(s![.., h..2 * h]), &mut grad.bwd);
        dx_f + dx_b
    }
}

pub fn bilstm_forward<T: Scalar>(x: ArrayView2<'_, T>, p: &BiLstmParams<T>) -> Result<(Array2<T>, BiLstmTrace<T>)> {
    p.forward(x)
}

impl<T: Scalar> Params<T> for LstmCell<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.w_ih.visit(&join(prefix, "w_ih"), f);
        self.w_hh.visit(&join(prefix, "w_hh"), f);
        self.bias.visit(&join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.w_ih.visit_mut(&join(prefix, "w_ih"), f);
        self.w_hh.visit_mut(&join(prefix, "w_hh"), f);
        self.bias.visit_mut(&join(prefix, "bias"), f);
    }
}

impl<T: Scalar> Params<T> for BiLstmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_mut(&join(prefix, "bwd"), f);
    }
}

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Params};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    /// `[out, in]`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

pub(crate) fn glorot<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.gen_range(-limit..=limit)))
}

impl<T: Scalar> LinearParams<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weight, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot(output, input, input, output, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.nrows()
    }

    /// `x W^T + b`, one row per token.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape(format!(
                "linear layer expects width {}, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, T>, grad_out: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        grad.weight += &grad_out.t().dot(&x);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

pub fn linear_forward<T: Scalar>(x: ArrayView2<'_, T>, p: &LinearParams<T>) -> Result<Array2<T>> {
    p.forward(x)
}

impl<T: Scalar> Params<T> for LinearParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.weight.visit(&join(prefix, "weight"), f);
        self.bias.visit(&join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.weight.visit_mut(&join(prefix, "weight"), f);
        self.bias.visit_mut(&join(prefix, "bias"), f);
    }
}

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// How each token is combined with its immediate neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    #[default]
    None,
    /// `[prev, self, next]`, width `3d`.
    Concat,
    /// Mean of the three slots, width `d`.
    Avg,
}

impl Blend {
    pub fn output_width(self, d: usize) -> usize {
        match self {
            Blend::Concat => 3 * d,
            Blend::None | Blend::Avg => d,
        }
    }
}

/// Missing neighbours at the sentence edges count as zero vectors (also in
/// the average, which always divides by three).
pub fn blend_triplet<T: Scalar>(x: ArrayView2<'_, T>, mode: Blend) -> Array2<T> {
    let (n, d) = x.dim();
    match mode {
        Blend::None => x.to_owned(),
        Blend::Concat => {
            let mut out = Array2::zeros((n, 3 * d));
            for t in 0..n {
                if t > 0 {
                    out.slice_mut(s![t, 0..d]).assign(&x.row(t - 1));
                }
                out.slice_mut(s![t, d..2 * d]).assign(&x.row(t));
                if t + 1 < n {
                    out.slice_mut(s![t, 2 * d..3 * d]).assign(&x.row(t + 1));
                }
            }
            out
        }
        Blend::Avg => {
            let third = T::one() / T::of(3.0);
            let mut out = Array2::zeros((n, d));
            for t in 0..n {
                let mut row = out.row_mut(t);
                row += &x.row(t);
                if t > 0 {
                    row += &x.row(t - 1);
                }
                if t + 1 < n {
                    row += &x.row(t + 1);
                }
                row *= third;
            }
            out
        }
    }
}

/// Gradient of [`blend_triplet`] with respect to its input.
pub fn blend_backward<T: Scalar>(grad_out: ArrayView2<'_, T>, mode: Blend, d: usize) -> Array2<T> {
    let n = grad_out.nrows();
    match mode {
        Blend::None => grad_out.to_owned(),
        Blend::Concat => {
            let mut dx = Array2::zeros((n, d));
            for t in 0..n {
                let mut row = dx.row_mut(t);
                row += &grad_out.slice(s![t, d..2 * d]);
                if t + 1 < n {
                    row += &grad_out.slice(s![t + 1, 0..d]);
                }
                if t > 0 {
                    row += &grad_out.slice(s![t - 1, 2 * d..3 * d]);
                }
            }
            dx
        }
        Blend::Avg => {
            let g = blend_triplet(grad_out, Blend::Avg);
            debug_assert_eq!(g.ncols(), d);
            g
        }
    }
}

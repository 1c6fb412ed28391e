//! Uniform access to named parameter tensors.
//!
//! Every trainable structure exposes its tensors as flat slices under a dotted
//! name (`projection.fg.weight`, `crf.cg.transitions`, ...). The first segment
//! of the name is the parameter group used for per-group learning rates.

use ndarray::{Array1, Array2};

use crate::crf::CrfParams;
use crate::scalar::Scalar;

pub trait Params<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T]));
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

pub(crate) fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

impl<T: Scalar> Params<T> for Array1<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(prefix, self.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(prefix, self.as_slice_mut().expect("standard layout"));
    }
}

impl<T: Scalar> Params<T> for Array2<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(prefix, self.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(prefix, self.as_slice_mut().expect("standard layout"));
    }
}

impl<T: Scalar> Params<T> for CrfParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.transitions.visit(&join(prefix, "transitions"), f);
        self.start.visit(&join(prefix, "start"), f);
        self.end.visit(&join(prefix, "end"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.transitions.visit_mut(&join(prefix, "transitions"), f);
        self.start.visit_mut(&join(prefix, "start"), f);
        self.end.visit_mut(&join(prefix, "end"), f);
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Option<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

/// `(name, length)` for every tensor, in visiting order.
pub fn layout<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, xs| out.push((name.to_string(), xs.len())));
    out
}

pub fn num_params<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, xs| n += xs.len());
    n
}

pub fn flatten<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> Vec<T> {
    let mut out = Vec::new();
    p.visit("", &mut |_, xs| out.extend_from_slice(xs));
    out
}

/// Overwrite all tensors from a flat vector in visiting order.
pub fn assign<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, values: &[T]) {
    let mut pos = 0;
    p.visit_mut("", &mut |_, xs| {
        xs.copy_from_slice(&values[pos..pos + xs.len()]);
        pos += xs.len();
    });
    assert_eq!(pos, values.len(), "flat vector length does not match parameter layout");
}

pub fn fill<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, value: T) {
    p.visit_mut("", &mut |_, xs| xs.iter_mut().for_each(|x| *x = value));
}

/// `acc += scale * other`, tensor by tensor.
pub fn add_scaled<T: Scalar, P: Params<T> + ?Sized>(acc: &mut P, other: &P, scale: T) {
    let src = flatten(other);
    let mut pos = 0;
    acc.visit_mut("", &mut |_, xs| {
        for x in xs.iter_mut() {
            *x += scale * src[pos];
            pos += 1;
        }
    });
}

pub fn l2_norm_sq<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> T {
    let mut s = T::zero();
    p.visit("", &mut |_, xs| s += xs.iter().map(|&x| x * x).sum::<T>());
    s
}

pub fn max_abs<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> T {
    let mut m = T::zero();
    p.visit("", &mut |_, xs| {
        for &x in xs {
            m = m.max(x.abs());
        }
    });
    m
}

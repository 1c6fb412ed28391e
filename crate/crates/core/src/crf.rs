//! Linear-chain CRF: path scores, the log-partition function, forward-backward
//! gradients and (optionally constrained) Viterbi decoding.
//!
//! All dynamic programming runs in log space. Hard constraints only enter
//! through a [`TransitionMask`] at decode time; stored parameters are always
//! finite.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::data::{BioTag, LabelSchema, LabelSpace};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams<T> {
    /// `transitions[[i, j]]` scores label `i` followed by label `j`.
    pub transitions: Array2<T>,
    pub start: Array1<T>,
    pub end: Array1<T>,
}

impl<T: Scalar> CrfParams<T> {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Array2::zeros((num_labels, num_labels)),
            start: Array1::zeros(num_labels),
            end: Array1::zeros(num_labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &ArrayView2<'_, T>) -> Result<()> {
        let l = self.num_labels();
        if self.transitions.dim() != (l, l) || self.end.len() != l {
            return Err(Error::shape("inconsistent CRF parameter shapes"));
        }
        if emissions.nrows() == 0 {
            return Err(Error::shape("emission matrix has no rows"));
        }
        if emissions.ncols() != l {
            return Err(Error::shape(format!(
                "emissions have {} columns, CRF has {l} labels",
                emissions.ncols()
            )));
        }
        Ok(())
    }

    fn check_tags(&self, emissions: &ArrayView2<'_, T>, tags: &[usize]) -> Result<()> {
        self.check(emissions)?;
        if tags.len() != emissions.nrows() {
            return Err(Error::shape(format!(
                "{} tags for {} positions",
                tags.len(),
                emissions.nrows()
            )));
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= self.num_labels()) {
            return Err(Error::shape(format!("label index {bad} out of range")));
        }
        Ok(())
    }
}

/// Gradients with the same layout as the inputs they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGrad<T> {
    pub emissions: Array2<T>,
    pub params: CrfParams<T>,
}

/// Unnormalized log score of one label path.
pub fn path_score<T: Scalar>(emissions: ArrayView2<'_, T>, tags: &[usize], params: &CrfParams<T>) -> Result<T> {
    params.check_tags(&emissions, tags)?;
    let mut s = params.start[tags[0]] + params.end[tags[tags.len() - 1]];
    for (t, &y) in tags.iter().enumerate() {
        s += emissions[[t, y]];
        if t > 0 {
            s += params.transitions[[tags[t - 1], y]];
        }
    }
    Ok(s)
}

/// `exp(transitions - max)`, shared by the fast recursions below. `None` when
/// the transitions are not all finite.
struct ExpTransitions<T> {
    max: T,
    exp: Array2<T>,
}

impl<T: Scalar> ExpTransitions<T> {
    fn new(params: &CrfParams<T>) -> Option<Self> {
        if !params.transitions.iter().all(|v| v.is_finite()) {
            return None;
        }
        let max = params
            .transitions
            .iter()
            .fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
        Some(Self {
            max,
            exp: params.transitions.mapv(|v| (v - max).exp()),
        })
    }
}

/// Sums below this are recomputed in log space to avoid precision loss.
fn tiny<T: Scalar>() -> T {
    T::min_positive_value().sqrt()
}

/// Row max and `exp(row - max)`.
fn shifted_exp<T: Scalar>(row: ArrayView1<'_, T>) -> (T, Array1<T>) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    (max, row.mapv(|v| (v - max).exp()))
}

/// `alpha[[t, j]]`: log-sum of scores of all prefixes ending at label `j`.
fn forward<T: Scalar>(emissions: &ArrayView2<'_, T>, params: &CrfParams<T>, et: Option<&ExpTransitions<T>>) -> Array2<T> {
    let (n, l) = emissions.dim();
    let mut alpha = Array2::zeros((n, l));
    for j in 0..l {
        alpha[[0, j]] = params.start[j] + emissions[[0, j]];
    }
    for t in 1..n {
        let fast = et.and_then(|et| {
            let (c, a) = shifted_exp(alpha.row(t - 1));
            c.is_finite().then(|| (c + et.max, a.dot(&et.exp)))
        });
        for j in 0..l {
            alpha[[t, j]] = match &fast {
                Some((shift, sums)) if sums[j] > tiny() => *shift + sums[j].ln(),
                _ => log_sum_exp((0..l).map(|i| alpha[[t - 1, i]] + params.transitions[[i, j]])),
            } + emissions[[t, j]];
        }
    }
    alpha
}

/// `beta[[t, i]]`: log-sum of scores of all suffixes after position `t` given label `i` there.
fn backward<T: Scalar>(emissions: &ArrayView2<'_, T>, params: &CrfParams<T>, et: Option<&ExpTransitions<T>>) -> Array2<T> {
    let (n, l) = emissions.dim();
    let mut beta = Array2::zeros((n, l));
    for i in 0..l {
        beta[[n - 1, i]] = params.end[i];
    }
    for t in (0..n - 1).rev() {
        let next = &emissions.row(t + 1) + &beta.row(t + 1);
        let fast = et.and_then(|et| {
            let (d, s) = shifted_exp(next.view());
            d.is_finite().then(|| (d + et.max, et.exp.dot(&s)))
        });
        for i in 0..l {
            beta[[t, i]] = match &fast {
                Some((shift, sums)) if sums[i] > tiny() => *shift + sums[i].ln(),
                _ => log_sum_exp((0..l).map(|j| params.transitions[[i, j]] + next[j])),
            };
        }
    }
    beta
}

fn log_z_from_alpha<T: Scalar>(alpha: &Array2<T>, params: &CrfParams<T>) -> T {
    let last = alpha.nrows() - 1;
    log_sum_exp((0..params.num_labels()).map(|j| alpha[[last, j]] + params.end[j]))
}

pub fn log_partition<T: Scalar>(emissions: ArrayView2<'_, T>, params: &CrfParams<T>) -> Result<T> {
    params.check(&emissions)?;
    let et = ExpTransitions::new(params);
    Ok(log_z_from_alpha(&forward(&emissions, params, et.as_ref()), params))
}

/// Negative log-likelihood of the gold path.
pub fn nll<T: Scalar>(emissions: ArrayView2<'_, T>, tags: &[usize], params: &CrfParams<T>) -> Result<T> {
    let gold = path_score(emissions, tags, params)?;
    Ok(log_partition(emissions, params)? - gold)
}

/// Per-position label marginals `p(y_t = j)`, shape `[T, L]`.
pub fn marginals<T: Scalar>(emissions: ArrayView2<'_, T>, params: &CrfParams<T>) -> Result<Array2<T>> {
    params.check(&emissions)?;
    let et = ExpTransitions::new(params);
    let alpha = forward(&emissions, params, et.as_ref());
    let beta = backward(&emissions, params, et.as_ref());
    let log_z = log_z_from_alpha(&alpha, params);
    let mut m = alpha + &beta;
    m.mapv_inplace(|v| (v - log_z).exp());
    Ok(m)
}

/// NLL and its gradient: model expectations minus gold counts.
pub fn nll_grad<T: Scalar>(
    emissions: ArrayView2<'_, T>,
    tags: &[usize],
    params: &CrfParams<T>,
) -> Result<(T, CrfGrad<T>)> {
    params.check_tags(&emissions, tags)?;
    let (n, l) = emissions.dim();
    let et = ExpTransitions::new(params);
    let alpha = forward(&emissions, params, et.as_ref());
    let beta = backward(&emissions, params, et.as_ref());
    let log_z = log_z_from_alpha(&alpha, params);

    let mut g_em = Array2::zeros((n, l));
    Zip::from(&mut g_em)
        .and(&alpha)
        .and(&beta)
        .for_each(|g, &a, &b| *g = (a + b - log_z).exp());
    let mut g_start = Array1::zeros(l);
    let mut g_end = Array1::zeros(l);
    for j in 0..l {
        g_start[j] = g_em[[0, j]];
        g_end[j] = g_em[[n - 1, j]];
    }
    // Pairwise marginals summed over positions. On the fast path each term
    // factors as k_t · a_t[i] · exp(T_ij - max) · s_t[j], so the sum over t
    // is one matrix product followed by an elementwise scale.
    let mut g_trans = Array2::zeros((l, l));
    let mut factored: Vec<(Array1<T>, Array1<T>)> = Vec::new();
    for t in 0..n.saturating_sub(1) {
        let next = &emissions.row(t + 1) + &beta.row(t + 1);
        let (c, a) = shifted_exp(alpha.row(t));
        let (d, s) = shifted_exp(next.view());
        let k = et.as_ref().map(|et| (c + d + et.max - log_z).exp());
        match k {
            Some(k) if c.is_finite() && d.is_finite() && k.is_finite() => factored.push((a * k, s)),
            _ => {
                for i in 0..l {
                    let a = alpha[[t, i]] - log_z;
                    for j in 0..l {
                        g_trans[[i, j]] += (a + params.transitions[[i, j]] + next[j]).exp();
                    }
                }
            }
        }
    }
    if let (Some(et), false) = (&et, factored.is_empty()) {
        let m = factored.len();
        let mut left = Array2::zeros((m, l));
        let mut right = Array2::zeros((m, l));
        for (r, (a, s)) in factored.iter().enumerate() {
            left.row_mut(r).assign(a);
            right.row_mut(r).assign(s);
        }
        g_trans += &(left.t().dot(&right) * &et.exp);
    }

    let mut gold = params.start[tags[0]] + params.end[tags[n - 1]];
    g_start[tags[0]] -= T::one();
    g_end[tags[n - 1]] -= T::one();
    for (t, &y) in tags.iter().enumerate() {
        gold += emissions[[t, y]];
        g_em[[t, y]] -= T::one();
        if t > 0 {
            gold += params.transitions[[tags[t - 1], y]];
            g_trans[[tags[t - 1], y]] -= T::one();
        }
    }
    Ok((
        log_z - gold,
        CrfGrad {
            emissions: g_em,
            params: CrfParams {
                transitions: g_trans,
                start: g_start,
                end: g_end,
            },
        },
    ))
}

/// Allowed transitions for constrained decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    pub allowed: Array2<bool>,
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

impl TransitionMask {
    pub fn allow_all(num_labels: usize) -> Self {
        Self {
            allowed: Array2::from_elem((num_labels, num_labels), true),
            start: vec![true; num_labels],
            end: vec![true; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    /// Every label needs an allowed successor and an allowed predecessor.
    pub fn validate(&self) -> Result<()> {
        let l = self.num_labels();
        if self.allowed.dim() != (l, l) || self.end.len() != l {
            return Err(Error::shape("inconsistent mask shapes"));
        }
        for k in 0..l {
            if !self.allowed.row(k).iter().any(|&a| a) {
                return Err(Error::config(format!("label {k} has no allowed successor")));
            }
            if !self.allowed.column(k).iter().any(|&a| a) {
                return Err(Error::config(format!("label {k} has no allowed predecessor")));
            }
        }
        Ok(())
    }

    /// BIO validity over a list of label strings: forbids `start → I-X`,
    /// `O → I-X`, and `B-X/I-X → I-Y` for `X ≠ Y`.
    pub fn bio<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let parsed: Vec<BioTag<'_>> = labels
            .iter()
            .map(|l| BioTag::parse(l.as_ref()))
            .collect::<Result<_>>()?;
        let l = parsed.len();
        let mut mask = Self::allow_all(l);
        for (j, to) in parsed.iter().enumerate() {
            if let BioTag::Inside(ty) = to {
                mask.start[j] = false;
                for (i, from) in parsed.iter().enumerate() {
                    mask.allowed[[i, j]] = from.etype() == Some(*ty);
                }
            }
        }
        Ok(mask)
    }
}

pub fn bio_mask(schema: &LabelSchema, space: LabelSpace) -> TransitionMask {
    TransitionMask::bio(schema.labels(space)).expect("schema labels are valid BIO tags")
}

/// Highest-scoring path and its score. Ties go to the lowest label index.
pub fn viterbi<T: Scalar>(
    emissions: ArrayView2<'_, T>,
    params: &CrfParams<T>,
    mask: Option<&TransitionMask>,
) -> Result<(Vec<usize>, T)> {
    params.check(&emissions)?;
    let (n, l) = emissions.dim();
    if let Some(m) = mask {
        if m.num_labels() != l {
            return Err(Error::shape("mask size differs from label count"));
        }
        m.validate()?;
    }
    let neg_inf = T::neg_infinity();
    let trans = |i: usize, j: usize| match mask {
        Some(m) if !m.allowed[[i, j]] => neg_inf,
        _ => params.transitions[[i, j]],
    };

    let mut score = Array2::from_elem((n, l), neg_inf);
    let mut back = Array2::<usize>::zeros((n, l));
    for j in 0..l {
        if mask.is_none_or(|m| m.start[j]) {
            score[[0, j]] = params.start[j] + emissions[[0, j]];
        }
    }
    for t in 1..n {
        for j in 0..l {
            let mut best = neg_inf;
            let mut arg = 0;
            for i in 0..l {
                let s = score[[t - 1, i]] + trans(i, j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            score[[t, j]] = best + emissions[[t, j]];
            back[[t, j]] = arg;
        }
    }
    let mut best = neg_inf;
    let mut last = 0;
    for j in 0..l {
        if mask.is_none_or(|m| m.end[j]) {
            let s = score[[n - 1, j]] + params.end[j];
            if s > best {
                best = s;
                last = j;
            }
        }
    }
    if best == neg_inf {
        return Err(Error::Numeric("every path is excluded by the transition mask".into()));
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    // Recompute so the returned score is exactly path_score of the path.
    let exact = path_score(emissions, &path, params)?;
    Ok((path, exact))
}

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

fn check<T: Scalar>(logits: &ArrayView2<'_, T>, gold: &[usize], mask: &[bool]) -> Result<usize> {
    let (n, l) = logits.dim();
    if gold.len() != n || mask.len() != n {
        return Err(Error::shape(format!(
            "masked CE: {n} positions, {} gold labels, {} mask entries",
            gold.len(),
            mask.len()
        )));
    }
    if let Some(&g) = gold.iter().zip(mask).find(|(&g, &m)| m && g >= l).map(|(g, _)| g) {
        return Err(Error::shape(format!("gold label {g} out of range")));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::shape("masked CE: every position is masked"));
    }
    Ok(active)
}

/// Mean over unmasked positions of `-log softmax(logits_t)[gold_t]`.
pub fn masked_ce<T: Scalar>(logits: ArrayView2<'_, T>, gold: &[usize], mask: &[bool]) -> Result<T> {
    masked_ce_grad(logits, gold, mask).map(|(v, _)| v)
}

/// Loss and its gradient with respect to the logits (zero on masked rows).
pub fn masked_ce_grad<T: Scalar>(logits: ArrayView2<'_, T>, gold: &[usize], mask: &[bool]) -> Result<(T, Array2<T>)> {
    let active = check(&logits, gold, mask)?;
    let inv = T::one() / T::of(active as f64);
    let mut grad = Array2::zeros(logits.dim());
    let mut total = T::zero();
    for (t, row) in logits.rows().into_iter().enumerate() {
        if !mask[t] {
            continue;
        }
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[gold[t]];
        for (j, &v) in row.iter().enumerate() {
            grad[[t, j]] = (v - lse).exp() * inv;
        }
        grad[[t, gold[t]]] -= inv;
    }
    Ok((total * inv, grad))
}

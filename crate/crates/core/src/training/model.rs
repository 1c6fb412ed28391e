use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::crf::{self, CrfParams, TransitionMask};
use crate::error::{Error, Result};
use crate::heads::{head_backward, head_forward_dense, masked_ce_grad, AuxKind, HeadConfig, HeadParams, HeadKind};
use crate::params::Params;
use crate::scalar::{argmax, Scalar};

/// Every trainable tensor of a model: the head plus the CRF layers it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub head: HeadParams<T>,
    /// Present for CRF heads.
    pub fg_crf: Option<CrfParams<T>>,
    /// Present when the auxiliary task uses a CRF loss.
    pub cg_crf: Option<CrfParams<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(config: &HeadConfig, layer_dim: usize, fg_labels: usize, cg_labels: usize, seed: u64) -> Result<Self> {
        let head = HeadParams::init(config, layer_dim, fg_labels, cg_labels, seed)?;
        Ok(Self {
            head,
            fg_crf: config.head_kind.uses_crf().then(|| CrfParams::zeros(fg_labels)),
            cg_crf: (config.aux_kind == AuxKind::Crf).then(|| CrfParams::zeros(cg_labels)),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            head: self.head.zeros_like(),
            fg_crf: self.fg_crf.as_ref().map(|c| CrfParams::zeros(c.num_labels())),
            cg_crf: self.cg_crf.as_ref().map(|c| CrfParams::zeros(c.num_labels())),
        }
    }
}

impl<T: Scalar> Params<T> for ModelParams<T> {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.head.visit("", f);
        self.fg_crf.visit("crf.fg", f);
        self.cg_crf.visit("crf.cg", f);
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.head.visit_mut("", f);
        self.fg_crf.visit_mut("crf.fg", f);
        self.cg_crf.visit_mut("crf.cg", f);
    }
}

/// Gold label indices for one sentence in both label spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Targets {
    pub fg: Vec<usize>,
    pub cg: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub fg: T,
    /// `None` without an auxiliary task.
    pub cg: Option<T>,
    pub combined: T,
}

/// Loss of one score matrix under the given loss kind, with its gradient
/// with respect to the scores (and CRF parameters, if any).
fn task_loss<T: Scalar>(
    scores: ArrayView2<'_, T>,
    gold: &[usize],
    crf_params: Option<&CrfParams<T>>,
) -> Result<(T, Array2<T>, Option<CrfParams<T>>)> {
    match crf_params {
        Some(p) => {
            let (loss, g) = crf::nll_grad(scores, gold, p)?;
            Ok((loss, g.emissions, Some(g.params)))
        }
        None => {
            let mask = vec![true; gold.len()];
            let (loss, g) = masked_ce_grad(scores, gold, &mask)?;
            Ok((loss, g, None))
        }
    }
}

/// Combined per-sentence loss `W·cg + (1 − W)·scale·fg` and, when `want_grad`,
/// its exact gradient for every parameter. Without an auxiliary task the loss
/// is the fine loss alone.
#[allow(clippy::too_many_arguments)]
pub fn sentence_loss<T: Scalar, R: Rng + ?Sized>(
    config: &HeadConfig,
    params: &ModelParams<T>,
    input: Array2<T>,
    targets: &Targets,
    w: T,
    scale: T,
    train_mode: bool,
    rng: &mut R,
    want_grad: bool,
) -> Result<(LossParts<T>, Option<ModelParams<T>>)> {
    let out = head_forward_dense(input, config, &params.head, train_mode, rng)?;
    let (fg_loss, d_fg, g_fg_crf) = task_loss(out.fg_scores.view(), &targets.fg, params.fg_crf.as_ref())?;
    let aux = match &out.cg_scores {
        Some(cg) => Some(task_loss(cg.view(), &targets.cg, params.cg_crf.as_ref())?),
        None => None,
    };
    let (fg_weight, cg_weight) = match aux {
        Some(_) => ((T::one() - w) * scale, w),
        None => (T::one(), T::zero()),
    };
    let combined = match &aux {
        Some((cg_loss, _, _)) => super::combined_loss(*cg_loss, fg_loss, w, scale),
        None => fg_loss,
    };
    let parts = LossParts {
        fg: fg_loss,
        cg: aux.as_ref().map(|a| a.0),
        combined,
    };
    if !want_grad {
        return Ok((parts, None));
    }
    let d_fg = d_fg * fg_weight;
    let d_cg = aux.as_ref().map(|a| &a.1 * cg_weight);
    let head = head_backward(&out.trace, &params.head, d_fg.view(), d_cg.as_ref().map(|d| d.view()))?;
    let scale_crf = |mut p: CrfParams<T>, k: T| {
        p.transitions *= k;
        p.start *= k;
        p.end *= k;
        p
    };
    let grads = ModelParams {
        head: head.params,
        fg_crf: g_fg_crf.map(|p| scale_crf(p, fg_weight)),
        cg_crf: aux.and_then(|a| a.2).map(|p| scale_crf(p, cg_weight)),
    };
    Ok((parts, Some(grads)))
}

/// Fine-grained label indices for one sentence in eval mode.
pub fn decode<T: Scalar>(
    config: &HeadConfig,
    params: &ModelParams<T>,
    input: Array2<T>,
    mask: Option<&TransitionMask>,
) -> Result<Vec<usize>> {
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let out = head_forward_dense(input, config, &params.head, false, &mut unused)?;
    match (config.head_kind, &params.fg_crf) {
        (HeadKind::LinearCe, _) => Ok(out.fg_scores.rows().into_iter().map(|r| argmax(r.iter().copied()).unwrap_or(0)).collect()),
        (_, Some(p)) => crf::viterbi(out.fg_scores.view(), p, mask).map(|(path, _)| path),
        (_, None) => Err(Error::shape("CRF head without CRF parameters")),
    }
}

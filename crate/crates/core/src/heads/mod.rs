//! Prediction heads over frozen token embeddings.
//!
//! Pipeline for one sentence:
//!
//! ```text
//! concat last k layers → dropout (train only) → triplet blend
//!   → [BiLSTM] → fine projection (+ coarse projection when an aux task is set)
//! ```
//!
//! The coarse branch reads exactly the representation fed to the fine
//! projection.

mod blend;
mod linear;
mod loss;
mod lstm;

pub use blend::{blend_backward, blend_triplet, Blend};
pub use linear::{linear_forward, LinearParams};
pub use loss::{masked_ce, masked_ce_grad};
pub use lstm::{bilstm_forward, BiLstmParams, BiLstmTrace, LstmCell, LstmRun};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;
use crate::seeding::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear projection trained with masked cross-entropy.
    LinearCe,
    /// Linear projection feeding a CRF.
    LinearCrf,
    /// BiLSTM, linear projection, CRF.
    BilstmCrf,
}

impl HeadKind {
    pub fn uses_crf(self) -> bool {
        !matches!(self, HeadKind::LinearCe)
    }

    pub fn uses_bilstm(self) -> bool {
        matches!(self, HeadKind::BilstmCrf)
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::LinearCe => "linear_ce",
            HeadKind::LinearCrf => "linear_crf",
            HeadKind::BilstmCrf => "bilstm_crf",
        }
    }
}

/// Loss used by the coarse-grained auxiliary branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    #[default]
    None,
    LinearCe,
    Crf,
}

impl AuxKind {
    pub fn name(self) -> &'static str {
        match self {
            AuxKind::None => "none",
            AuxKind::LinearCe => "linear_ce",
            AuxKind::Crf => "crf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub head_kind: HeadKind,
    #[serde(default)]
    pub blend: Blend,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default = "default_hidden")]
    pub bilstm_hidden: usize,
    #[serde(default)]
    pub aux_kind: AuxKind,
    #[serde(default = "default_k")]
    pub input_layers_k: usize,
}

fn default_hidden() -> usize {
    64
}

fn default_k() -> usize {
    1
}

impl HeadConfig {
    pub fn new(head_kind: HeadKind) -> Self {
        Self {
            head_kind,
            blend: Blend::None,
            dropout_p: 0.0,
            bilstm_hidden: default_hidden(),
            aux_kind: AuxKind::None,
            input_layers_k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout_p {} is outside [0, 1)", self.dropout_p)));
        }
        if self.head_kind.uses_bilstm() && self.bilstm_hidden == 0 {
            return Err(Error::config("bilstm_hidden must be at least 1"));
        }
        if self.input_layers_k == 0 {
            return Err(Error::config("input_layers_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub bilstm: Option<BiLstmParams<T>>,
    pub fg_proj: LinearParams<T>,
    pub cg_proj: Option<LinearParams<T>>,
}

impl<T: Scalar> HeadParams<T> {
    /// Fresh parameters. `layer_dim` is the per-layer embedding width; each
    /// block draws from its own seeded stream.
    pub fn init(config: &HeadConfig, layer_dim: usize, fg_labels: usize, cg_labels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let input = config.blend.output_width(config.input_layers_k * layer_dim);
        let bilstm = config
            .head_kind
            .uses_bilstm()
            .then(|| BiLstmParams::init(input, config.bilstm_hidden, &mut derive_rng(seed, &["init", "bilstm"])));
        let feat = if bilstm.is_some() { 2 * config.bilstm_hidden } else { input };
        let fg_proj = LinearParams::init(feat, fg_labels, &mut derive_rng(seed, &["init", "projection.fg"]));
        let cg_proj = (config.aux_kind != AuxKind::None)
            .then(|| LinearParams::init(feat, cg_labels, &mut derive_rng(seed, &["init", "projection.cg"])));
        Ok(Self { bilstm, fg_proj, cg_proj })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            bilstm: self
                .bilstm
                .as_ref()
                .map(|b| BiLstmParams::zeros(b.input_width(), b.hidden())),
            fg_proj: LinearParams::zeros(self.fg_proj.input_width(), self.fg_proj.output_width()),
            cg_proj: self
                .cg_proj
                .as_ref()
                .map(|p| LinearParams::zeros(p.input_width(), p.output_width())),
        }
    }

    /// Width of the concatenated-layer input these parameters expect.
    pub fn check_config(&self, config: &HeadConfig) -> Result<()> {
        if config.head_kind.uses_bilstm() != self.bilstm.is_some() {
            return Err(Error::shape("BiLSTM presence does not match the head kind"));
        }
        if (config.aux_kind != AuxKind::None) != self.cg_proj.is_some() {
            return Err(Error::shape("coarse projection presence does not match the aux kind"));
        }
        if let Some(b) = &self.bilstm {
            if b.hidden() != config.bilstm_hidden || self.fg_proj.input_width() != 2 * b.hidden() {
                return Err(Error::shape("BiLSTM width does not match the projection"));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Params<T> for HeadParams<T> {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.bilstm.visit("bilstm", f);
        self.fg_proj.visit("projection.fg", f);
        self.cg_proj.visit("projection.cg", f);
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.bilstm.visit_mut("bilstm", f);
        self.fg_proj.visit_mut("projection.fg", f);
        self.cg_proj.visit_mut("projection.cg", f);
    }
}

/// Activations cached by [`head_forward`] for [`head_backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    input_width: usize,
    blend: Blend,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`); `None` when inactive.
    dropout: Option<Array2<T>>,
    lstm: Option<BiLstmTrace<T>>,
    /// Representation fed to both projections.
    features: Array2<T>,
    has_cg: bool,
}

impl<T> ForwardTrace<T> {
    pub fn features(&self) -> &Array2<T> {
        &self.features
    }
}

#[derive(Debug, Clone)]
pub struct HeadOutput<T> {
    pub fg_scores: Array2<T>,
    pub cg_scores: Option<Array2<T>>,
    pub trace: ForwardTrace<T>,
}

#[derive(Debug, Clone)]
pub struct HeadGrads<T> {
    pub params: HeadParams<T>,
    /// Gradient with respect to the concatenated-layer input.
    pub input: Array2<T>,
}

/// Inverted dropout multipliers: each element survives with probability
/// `1 - p` and is scaled by `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<T> {
    let keep = T::of(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { T::zero() } else { keep })
}

pub fn head_forward<T: Scalar, R: Rng + ?Sized>(
    embeddings: &EmbeddingSequence,
    config: &HeadConfig,
    params: &HeadParams<T>,
    train_mode: bool,
    rng: &mut R,
) -> Result<HeadOutput<T>> {
    let x = embeddings.concat_layers(config.input_layers_k)?;
    head_forward_dense(x, config, params, train_mode, rng)
}

/// [`head_forward`] on an already layer-concatenated input `[T, k·dim]`.
pub fn head_forward_dense<T: Scalar, R: Rng + ?Sized>(
    x: Array2<T>,
    config: &HeadConfig,
    params: &HeadParams<T>,
    train_mode: bool,
    rng: &mut R,
) -> Result<HeadOutput<T>> {
    params.check_config(config)?;
    if x.nrows() == 0 {
        return Err(Error::shape("empty sentence"));
    }
    let input_width = x.ncols();
    let dropout = (train_mode && config.dropout_p > 0.0).then(|| dropout_mask(x.dim(), config.dropout_p, rng));
    let dropped = match &dropout {
        Some(m) => x * m,
        None => x,
    };
    let blended = blend_triplet(dropped.view(), config.blend);
    let (features, lstm) = match &params.bilstm {
        Some(b) => {
            let (h, trace) = b.forward(blended.view())?;
            (h, Some(trace))
        }
        None => (blended, None),
    };
    let fg_scores = params.fg_proj.forward(features.view())?;
    let cg_scores = params
        .cg_proj
        .as_ref()
        .map(|p| p.forward(features.view()))
        .transpose()?;
    Ok(HeadOutput {
        fg_scores,
        cg_scores,
        trace: ForwardTrace {
            input_width,
            blend: config.blend,
            dropout,
            lstm,
            has_cg: params.cg_proj.is_some(),
            features,
        },
    })
}

/// Exact reverse-mode gradients for every head parameter given upstream
/// gradients on the fine (and optional coarse) scores.
pub fn head_backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &HeadParams<T>,
    d_fg: ArrayView2<'_, T>,
    d_cg: Option<ArrayView2<'_, T>>,
) -> Result<HeadGrads<T>> {
    let n = trace.features.nrows();
    if trace.features.ncols() != params.fg_proj.input_width()
        || trace.lstm.is_some() != params.bilstm.is_some()
        || trace.has_cg != params.cg_proj.is_some()
    {
        return Err(Error::shape("forward trace does not match these parameters"));
    }
    if d_fg.dim() != (n, params.fg_proj.output_width()) {
        return Err(Error::shape("fine-score gradient has the wrong shape"));
    }
    let mut grads = params.zeros_like();
    let mut d_features = params.fg_proj.backward(trace.features.view(), d_fg, &mut grads.fg_proj);
    match (d_cg, &params.cg_proj, &mut grads.cg_proj) {
        (Some(d), Some(p), Some(g)) => {
            if d.dim() != (n, p.output_width()) {
                return Err(Error::shape("coarse-score gradient has the wrong shape"));
            }
            d_features += &p.backward(trace.features.view(), d, g);
        }
        (None, _, _) => {}
        _ => return Err(Error::shape("coarse gradient given without a coarse branch")),
    }
    let d_blended = match (&params.bilstm, &trace.lstm, &mut grads.bilstm) {
        (Some(b), Some(tr), Some(g)) => b.backward(tr, d_features.view(), g),
        _ => d_features,
    };
    let d_dropped = blend_backward(d_blended.view(), trace.blend, trace.input_width);
    let input = match &trace.dropout {
        Some(m) => d_dropped * m,
        None => d_dropped,
    };
    Ok(HeadGrads { params: grads, input })
}

//! Training loop, optimizer, loss schedule and checkpoints.

mod checkpoint;
mod model;
mod optim;
mod schedule;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{decode, sentence_loss, LossParts, ModelParams, Targets};
pub use optim::{Adam, BETA1, BETA2, EPSILON};
pub use schedule::{
    aux_weight, combined_loss, compute_scale, DecayShape, LossWeightSchedule, ScaleSetting, SCALE_MAX, SCALE_MIN,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::bio_mask;
use crate::data::{derive_cg_tags, Dataset, LabelSchema, LabelSpace, Sentence};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{score, MacroOver};
use crate::heads::{AuxKind, HeadConfig};
use crate::params::add_scaled;
use crate::scalar::Scalar;
use crate::seeding::derive_rng;

/// Parameter groups that accept a learning-rate multiplier.
pub const PARAM_GROUPS: [&str; 3] = ["bilstm", "projection", "crf"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    /// Group name (`bilstm`, `projection`, `crf`) → multiplier on `base_lr`.
    #[serde(default)]
    pub lr_multipliers: BTreeMap<String, f64>,
    #[serde(default = "default_residual")]
    pub residual: f64,
    #[serde(default)]
    pub scale: ScaleSetting,
    #[serde(default)]
    pub decay: DecayShape,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
    pub head: HeadConfig,
    /// Forbid invalid BIO transitions when decoding with a CRF head.
    #[serde(default)]
    pub constrained_decode: bool,
    /// Score the training set after every epoch.
    #[serde(default = "yes")]
    pub log_train_f1: bool,
}

fn default_lr() -> f64 {
    1e-3
}

fn default_residual() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(head: HeadConfig, epochs: usize, batch_size: usize) -> Self {
        Self {
            epochs,
            batch_size,
            base_lr: default_lr(),
            lr_multipliers: BTreeMap::new(),
            residual: default_residual(),
            scale: ScaleSetting::Auto,
            decay: DecayShape::Linear,
            seed: 0,
            shuffle: true,
            head,
            constrained_decode: false,
            log_train_f1: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.residual) {
            return Err(Error::config("residual must lie in [0, 1]"));
        }
        for (group, &m) in &self.lr_multipliers {
            if !PARAM_GROUPS.contains(&group.as_str()) {
                return Err(Error::config(format!(
                    "unknown parameter group {group:?}; expected one of {PARAM_GROUPS:?}"
                )));
            }
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::config(format!("multiplier for {group} must be positive")));
            }
        }
        match self.scale {
            ScaleSetting::Fixed(s) if !(s.is_finite() && s > 0.0) => {
                return Err(Error::config("fixed scale must be positive"));
            }
            _ => {}
        }
        if let DecayShape::Constant(w) = self.decay {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config("constant aux weight must lie in [0, 1]"));
            }
        }
        self.head.validate()
    }

    pub fn schedule(&self) -> LossWeightSchedule {
        LossWeightSchedule {
            total_epochs: self.epochs,
            residual: self.residual,
            shape: self.decay,
        }
    }

    pub fn has_aux(&self) -> bool {
        self.head.aux_kind != AuxKind::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub w: Option<f64>,
    pub scale: f64,
    pub cg_loss: Option<f64>,
    pub fg_loss: f64,
    pub combined_loss: f64,
    pub train_micro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub has_aux: bool,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with one row per epoch. `W` and `cg_loss` are omitted without an
    /// auxiliary task.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.has_aux {
            out.push_str("epoch,W,scale,cg_loss,fg_loss,combined_loss,train_micro_f1\n");
        } else {
            out.push_str("epoch,scale,fg_loss,combined_loss,train_micro_f1\n");
        }
        for r in &self.epochs {
            let f1 = r.train_micro_f1.map(|v| v.to_string()).unwrap_or_default();
            if self.has_aux {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.epoch,
                    r.w.unwrap_or(0.0),
                    r.scale,
                    r.cg_loss.unwrap_or(0.0),
                    r.fg_loss,
                    r.combined_loss,
                    f1
                );
            } else {
                let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.scale, r.fg_loss, r.combined_loss, f1);
            }
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: TrainLog,
}

/// Concatenated-layer inputs for every sentence, in dataset order.
fn gather_inputs<T: Scalar>(dataset: &Dataset, store: &EmbeddingStore, k: usize) -> Result<Vec<Array2<T>>> {
    store.alignment(dataset).into_result()?;
    if k > store.header.num_layers {
        return Err(Error::config(format!(
            "input_layers_k = {k} but the embeddings hold {} layers",
            store.header.num_layers
        )));
    }
    dataset
        .iter()
        .map(|s| {
            let seq = store
                .get(&s.id)
                .ok_or_else(|| Error::Alignment(format!("no embeddings for sentence {}", s.id)))?;
            seq.concat_layers(k)
        })
        .collect()
}

fn gather_targets(dataset: &Dataset, schema: &LabelSchema) -> Result<Vec<Targets>> {
    dataset
        .iter()
        .map(|s| {
            let tags = s
                .fg_tags
                .as_ref()
                .ok_or_else(|| Error::Tags(format!("sentence {} has no gold tags", s.id)))?;
            let cg = derive_cg_tags(tags, schema)?;
            Ok(Targets {
                fg: schema.encode(LabelSpace::Fine, tags)?,
                cg: schema.encode(LabelSpace::Coarse, &cg)?,
            })
        })
        .collect()
}

fn dropout_stream(seed: u64, epoch: usize, sentence: &str) -> rand_chacha::ChaCha8Rng {
    derive_rng(seed, &["dropout", &epoch.to_string(), sentence])
}

/// Train a model on a tagged dataset.
///
/// Per epoch: seeded shuffle, then for each batch the per-sentence losses and
/// gradients are computed in parallel, summed in sentence order, averaged, and
/// applied with one Adam step. Results depend only on (data, config).
pub fn train<T: Scalar>(
    dataset: &Dataset,
    store: &EmbeddingStore,
    schema: &LabelSchema,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let head = &config.head;
    let inputs: Vec<Array2<T>> = gather_inputs(dataset, store, head.input_layers_k)?;
    let targets = gather_targets(dataset, schema)?;
    let ids: Vec<&str> = dataset.iter().map(|s| s.id.as_str()).collect();
    let fg_labels = schema.num_labels(LabelSpace::Fine);
    let cg_labels = schema.num_labels(LabelSpace::Coarse);
    let layer_dim = store.header.dim;
    let mut params = ModelParams::<T>::init(head, layer_dim, fg_labels, cg_labels, config.seed)?;
    let mut opt = Adam::new(&params, config.base_lr, &config.lr_multipliers);
    let schedule = config.schedule();
    let has_aux = config.has_aux();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut scale: Option<f64> = (!has_aux).then_some(1.0);
    let mut log = TrainLog {
        has_aux,
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        let w = if has_aux { schedule.weight(epoch) } else { 0.0 };
        if config.shuffle {
            order.shuffle(&mut derive_rng(config.seed, &["shuffle", &epoch.to_string()]));
        }
        let (mut fg_sum, mut cg_sum, mut combined_sum) = (0.0, 0.0, 0.0);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let s = match scale {
                Some(s) => s,
                None => {
                    let first = first_batch_losses(head, &params, &inputs, &targets, batch)?;
                    let s = compute_scale(config.scale, first.0, first.1)?;
                    scale = Some(s);
                    s
                }
            };
            let results: Vec<Result<_>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = dropout_stream(config.seed, epoch, ids[i]);
                    sentence_loss(
                        head,
                        &params,
                        inputs[i].clone(),
                        &targets[i],
                        T::of(w),
                        T::of(s),
                        true,
                        &mut rng,
                        true,
                    )
                })
                .collect();
            let mut grad = params.zeros_like();
            let inv = T::one() / T::of(batch.len() as f64);
            for r in results {
                let (parts, g) = r?;
                if !parts.combined.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_idx}"
                    )));
                }
                fg_sum += parts.fg.as_f64();
                cg_sum += parts.cg.map_or(0.0, |c| c.as_f64());
                combined_sum += parts.combined.as_f64();
                add_scaled(&mut grad, &g.expect("gradient requested"), inv);
            }
            opt.step(&mut params, &grad);
        }
        let n = dataset.len() as f64;
        let train_micro_f1 = if config.log_train_f1 {
            let pred = decode_all(config, &params, schema, dataset, &inputs)?;
            Some(score(dataset, &pred, &MacroOver::Observed)?.micro.f1)
        } else {
            None
        };
        log.epochs.push(EpochRecord {
            epoch,
            w: has_aux.then_some(w),
            scale: scale.unwrap_or(1.0),
            cg_loss: has_aux.then_some(cg_sum / n),
            fg_loss: fg_sum / n,
            combined_loss: combined_sum / n,
            train_micro_f1,
        });
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            params,
            epoch: config.epochs - 1,
            schema_fingerprint: schema.fingerprint(),
            scale: scale.unwrap_or(1.0),
            layer_dim,
            fg_labels,
            cg_labels,
        },
        log,
    })
}

/// Mean eval-mode (cg, fg) losses of the untrained model on one batch.
fn first_batch_losses<T: Scalar>(
    head: &HeadConfig,
    params: &ModelParams<T>,
    inputs: &[Array2<T>],
    targets: &[Targets],
    batch: &[usize],
) -> Result<(f64, f64)> {
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let (mut cg, mut fg) = (0.0, 0.0);
    for &i in batch {
        let (parts, _) = sentence_loss(
            head,
            params,
            inputs[i].clone(),
            &targets[i],
            T::one(),
            T::one(),
            false,
            &mut unused,
            false,
        )?;
        fg += parts.fg.as_f64();
        cg += parts.cg.map_or(0.0, |c| c.as_f64());
    }
    let n = batch.len() as f64;
    Ok((cg / n, fg / n))
}

fn decode_all<T: Scalar>(
    config: &TrainConfig,
    params: &ModelParams<T>,
    schema: &LabelSchema,
    dataset: &Dataset,
    inputs: &[Array2<T>],
) -> Result<Dataset> {
    let mask = (config.constrained_decode && config.head.head_kind.uses_crf())
        .then(|| bio_mask(schema, LabelSpace::Fine));
    let sentences: Vec<Result<Sentence>> = dataset
        .iter()
        .zip(inputs)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(s, x)| {
            let path = decode(&config.head, params, x.clone(), mask.as_ref())?;
            let tags = schema.decode(LabelSpace::Fine, &path)?;
            Sentence::new(s.id.clone(), s.tokens.clone(), Some(tags))
        })
        .collect();
    Ok(Dataset::new(sentences.into_iter().collect::<Result<_>>()?))
}

/// Tag every sentence with the checkpoint's fine-grained labels.
pub fn predict<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    dataset: &Dataset,
    store: &EmbeddingStore,
    schema: &LabelSchema,
) -> Result<Dataset> {
    if checkpoint.schema_fingerprint != schema.fingerprint() {
        return Err(Error::Schema(
            "checkpoint was trained with a different label schema".into(),
        ));
    }
    if store.header.dim != checkpoint.layer_dim {
        return Err(Error::shape(format!(
            "embeddings have dim {} but the checkpoint expects {}",
            store.header.dim, checkpoint.layer_dim
        )));
    }
    let inputs: Vec<Array2<T>> = gather_inputs(dataset, store, checkpoint.config.head.input_layers_k)?;
    decode_all(&checkpoint.config, &checkpoint.params, schema, dataset, &inputs)
}

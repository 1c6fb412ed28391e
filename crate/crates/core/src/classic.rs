//! Feature-template CRF: sparse hand-written token features, linear
//! emissions and the shared linear-chain engine, trained by full-batch
//! gradient descent on L2-regularized NLL.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfParams};
use crate::data::{Dataset, LabelSchema, LabelSpace, Sentence};
use crate::error::{Error, Result};
use crate::params::{add_scaled, flatten, join, l2_norm_sq, Params};
use crate::scalar::Scalar;

pub const CLASSIC_FORMAT: &str = "nerlab-classic-crf";
pub const CLASSIC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default = "default_suffixes")]
    pub suffix_lengths: Vec<usize>,
    /// Emit `prev_pos=` features from the corpus POS column.
    #[serde(default = "yes")]
    pub use_pos: bool,
}

fn default_suffixes() -> Vec<usize> {
    vec![2, 3]
}

fn yes() -> bool {
    true
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            suffix_lengths: default_suffixes(),
            use_pos: true,
        }
    }
}

/// Sorted, duplicate-free `(key, value)` pairs.
pub type FeatureVector = Vec<(String, f64)>;

/// Last `n` characters; the whole word when shorter.
fn suffix(word: &str, n: usize) -> &str {
    match word.char_indices().rev().nth(n.saturating_sub(1)) {
        Some((i, _)) if n > 0 => &word[i..],
        _ if n == 0 => "",
        _ => word,
    }
}

fn is_digit(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| c.is_ascii_digit())
}

fn is_title(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_uppercase()) && chars.all(|c| !c.is_uppercase())
}

fn is_upper(word: &str) -> bool {
    word.chars().any(|c| c.is_alphabetic()) && word.chars().all(|c| !c.is_lowercase())
}

pub fn extract_features(sentence: &Sentence, i: usize, config: &FeatureConfig) -> FeatureVector {
    let mut keys = vec!["bias".to_string()];
    let word = &sentence.tokens[i].text;
    let lower = word.to_lowercase();
    keys.push(format!("word={lower}"));
    for &n in &config.suffix_lengths {
        keys.push(format!("suffix{n}={}", suffix(&lower, n)));
    }
    if is_digit(word) {
        keys.push("isdigit=true".into());
    }
    if is_title(word) {
        keys.push("istitle=true".into());
    }
    if is_upper(word) {
        keys.push("isupper=true".into());
    }
    if i == 0 {
        keys.push("bos=true".into());
    } else {
        let prev = &sentence.tokens[i - 1];
        let prev_lower = prev.text.to_lowercase();
        keys.push(format!("prev_word={prev_lower}"));
        if is_digit(&prev.text) {
            keys.push("prev_isdigit=true".into());
        }
        if config.use_pos {
            if let Some(pos) = &prev.pos {
                keys.push(format!("prev_pos={pos}"));
            }
        }
        for &n in &config.suffix_lengths {
            keys.push(format!("prev_suffix{n}={}", suffix(&prev_lower, n)));
        }
    }
    if i + 1 == sentence.len() {
        keys.push("eos=true".into());
    }
    keys.sort();
    keys.dedup();
    keys.into_iter().map(|k| (k, 1.0)).collect()
}

/// Trainable tensors: one weight row per known feature, plus the CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicParams<T> {
    /// `[num_features, num_labels]`
    pub weights: Array2<T>,
    pub crf: CrfParams<T>,
}

impl<T: Scalar> ClassicParams<T> {
    pub fn zeros(num_features: usize, num_labels: usize) -> Self {
        Self {
            weights: Array2::zeros((num_features, num_labels)),
            crf: CrfParams::zeros(num_labels),
        }
    }
}

impl<T: Scalar> Params<T> for ClassicParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.weights.visit(&join(prefix, "features.weights"), f);
        self.crf.visit(&join(prefix, "crf"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.weights.visit_mut(&join(prefix, "features.weights"), f);
        self.crf.visit_mut(&join(prefix, "crf"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicModel<T> {
    pub labels: Vec<String>,
    pub schema_fingerprint: String,
    pub features: FeatureConfig,
    pub lambda: f64,
    /// Row index of each feature key in `params.weights`.
    pub feature_index: BTreeMap<String, usize>,
    pub params: ClassicParams<T>,
}

/// Per-token features resolved to weight rows; unknown keys are dropped.
pub type IndexedFeatures = Vec<Vec<(usize, f64)>>;

impl<T: Scalar> ClassicModel<T> {
    pub fn index_sentence(&self, sentence: &Sentence) -> IndexedFeatures {
        (0..sentence.len())
            .map(|i| {
                extract_features(sentence, i, &self.features)
                    .into_iter()
                    .filter_map(|(k, v)| self.feature_index.get(&k).map(|&r| (r, v)))
                    .collect()
            })
            .collect()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }
}

/// `emissions[t][l] = Σ value · weight(feature, l)`; unseen features add 0.
pub fn emissions_from_features<T: Scalar>(features: &IndexedFeatures, weights: &Array2<T>) -> Array2<T> {
    let mut e = Array2::zeros((features.len(), weights.ncols()));
    for (t, feats) in features.iter().enumerate() {
        let mut row = e.row_mut(t);
        for &(f, v) in feats {
            row.scaled_add(T::of(v), &weights.row(f));
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_classic_lr")]
    pub lr: f64,
    #[serde(default)]
    pub features: FeatureConfig,
}

fn default_lambda() -> f64 {
    0.1
}

fn default_epochs() -> usize {
    100
}

fn default_classic_lr() -> f64 {
    0.05
}

impl Default for ClassicConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            epochs: default_epochs(),
            lr: default_classic_lr(),
            features: FeatureConfig::default(),
        }
    }
}

impl ClassicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        if self.features.suffix_lengths.contains(&0) {
            return Err(Error::config("suffix lengths must be at least 1"));
        }
        Ok(())
    }
}

/// Indexed features and gold label indices for a tagged corpus.
#[derive(Debug, Clone)]
pub struct ClassicData {
    pub features: Vec<IndexedFeatures>,
    pub gold: Vec<Vec<usize>>,
}

/// `Σ nll + λ·‖θ‖²` over every parameter, and its gradient.
pub fn objective_and_grad<T: Scalar>(params: &ClassicParams<T>, data: &ClassicData, lambda: f64) -> Result<(T, ClassicParams<T>)> {
    let per_sentence: Vec<Result<_>> = data
        .features
        .par_iter()
        .zip(data.gold.par_iter())
        .map(|(feats, gold)| {
            let em = emissions_from_features(feats, &params.weights);
            let (loss, g) = crf::nll_grad(em.view(), gold, &params.crf)?;
            Ok((loss, g.emissions, g.params))
        })
        .collect();
    let (f, l) = params.weights.dim();
    let mut grad = ClassicParams::zeros(f, l);
    let mut total = T::zero();
    for ((res, feats), _) in per_sentence.into_iter().zip(&data.features).zip(&data.gold) {
        let (loss, d_em, d_crf) = res?;
        total += loss;
        for (t, row) in feats.iter().enumerate() {
            for &(fi, v) in row {
                grad.weights.row_mut(fi).scaled_add(T::of(v), &d_em.row(t));
            }
        }
        add_scaled(&mut grad.crf, &d_crf, T::one());
    }
    let lam = T::of(lambda);
    total += lam * l2_norm_sq(params);
    add_scaled(&mut grad, params, T::of(2.0 * lambda));
    Ok((total, grad))
}

#[derive(Debug, Clone)]
pub struct ClassicOutcome<T> {
    pub model: ClassicModel<T>,
    /// Objective after each epoch, preceded by the initial value.
    pub objective: Vec<f64>,
    /// Step size in effect at the end of training.
    pub final_lr: f64,
}

/// Full-batch gradient descent from all-zero weights. A step that would
/// raise the objective is retried with half the step size, so the logged
/// objective never increases. Deterministic; no randomness is involved.
pub fn train_classic<T: Scalar>(dataset: &Dataset, schema: &LabelSchema, config: &ClassicConfig) -> Result<ClassicOutcome<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut feature_index = BTreeMap::new();
    let mut raw = Vec::with_capacity(dataset.len());
    let mut gold = Vec::with_capacity(dataset.len());
    for s in dataset {
        let tags = s
            .fg_tags
            .as_ref()
            .ok_or_else(|| Error::Tags(format!("sentence {} has no gold tags", s.id)))?;
        gold.push(schema.encode(LabelSpace::Fine, tags)?);
        let feats: Vec<FeatureVector> = (0..s.len()).map(|i| extract_features(s, i, &config.features)).collect();
        for fv in &feats {
            for (k, _) in fv {
                if !feature_index.contains_key(k) {
                    let next = feature_index.len();
                    feature_index.insert(k.clone(), next);
                }
            }
        }
        raw.push(feats);
    }
    // Renumber in key order so the model file does not depend on corpus order.
    for (i, v) in feature_index.values_mut().enumerate() {
        *v = i;
    }
    let features: Vec<IndexedFeatures> = raw
        .into_iter()
        .map(|sent| {
            sent.into_iter()
                .map(|fv| fv.into_iter().map(|(k, v)| (feature_index[&k], v)).collect())
                .collect()
        })
        .collect();
    let data = ClassicData { features, gold };
    let labels = schema.labels(LabelSpace::Fine).to_vec();
    let mut params = ClassicParams::<T>::zeros(feature_index.len(), labels.len());

    let (mut obj, mut grad) = objective_and_grad(&params, &data, config.lambda)?;
    let mut trace = vec![obj.as_f64()];
    let mut lr = config.lr;
    for _ in 0..config.epochs {
        let mut accepted = false;
        for _ in 0..60 {
            let mut candidate = params.clone();
            add_scaled(&mut candidate, &grad, T::of(-lr));
            let (c_obj, c_grad) = objective_and_grad(&candidate, &data, config.lambda)?;
            if c_obj.is_finite() && c_obj <= obj {
                params = candidate;
                obj = c_obj;
                grad = c_grad;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        trace.push(obj.as_f64());
        if !accepted {
            break;
        }
    }
    if !obj.is_finite() {
        return Err(Error::Numeric("classic objective became non-finite".into()));
    }
    Ok(ClassicOutcome {
        model: ClassicModel {
            labels,
            schema_fingerprint: schema.fingerprint(),
            features: config.features.clone(),
            lambda: config.lambda,
            feature_index,
            params,
        },
        objective: trace,
        final_lr: lr,
    })
}

/// Viterbi decode of every sentence.
pub fn predict_classic<T: Scalar>(model: &ClassicModel<T>, dataset: &Dataset) -> Result<Dataset> {
    let out: Vec<Result<Sentence>> = dataset
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|s| {
            if s.is_empty() {
                return Sentence::new(s.id.clone(), s.tokens.clone(), Some(Vec::new()));
            }
            let em = emissions_from_features(&model.index_sentence(s), &model.params.weights);
            let (path, _) = crf::viterbi(em.view(), &model.params.crf, None)?;
            let tags = path.into_iter().map(|i| model.labels[i].clone()).collect();
            Sentence::new(s.id.clone(), s.tokens.clone(), Some(tags))
        })
        .collect();
    Ok(Dataset::new(out.into_iter().collect::<Result<_>>()?))
}

/// On-disk model: JSON with the sparse weights as a string-keyed table of
/// non-zero `label → weight` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassicModelFile {
    format: String,
    version: u32,
    schema_fingerprint: String,
    labels: Vec<String>,
    features: FeatureConfig,
    lambda: f64,
    weights: BTreeMap<String, BTreeMap<String, f64>>,
    transitions: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
}

impl<T: Scalar> ClassicModel<T> {
    pub fn to_json(&self) -> String {
        let mut weights = BTreeMap::new();
        for (key, &row) in &self.feature_index {
            let entries: BTreeMap<String, f64> = self
                .params
                .weights
                .row(row)
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_zero())
                .map(|(l, w)| (self.labels[l].clone(), w.as_f64()))
                .collect();
            if !entries.is_empty() {
                weights.insert(key.clone(), entries);
            }
        }
        let crf = &self.params.crf;
        let file = ClassicModelFile {
            format: CLASSIC_FORMAT.into(),
            version: CLASSIC_VERSION,
            schema_fingerprint: self.schema_fingerprint.clone(),
            labels: self.labels.clone(),
            features: self.features.clone(),
            lambda: self.lambda,
            weights,
            transitions: crf.transitions.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
            start: crf.start.iter().map(|v| v.as_f64()).collect(),
            end: crf.end.iter().map(|v| v.as_f64()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ClassicModelFile = serde_json::from_str(text)?;
        if file.format != CLASSIC_FORMAT || file.version != CLASSIC_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CLASSIC_FORMAT} version {CLASSIC_VERSION}, found {} version {}",
                file.format, file.version
            )));
        }
        let l = file.labels.len();
        if file.transitions.len() != l
            || file.transitions.iter().any(|r| r.len() != l)
            || file.start.len() != l
            || file.end.len() != l
        {
            return Err(Error::Checkpoint("CRF tables do not match the label count".into()));
        }
        let label_pos: HashMap<&str, usize> = file.labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let feature_index: BTreeMap<String, usize> = file.weights.keys().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        let mut weights = Array2::zeros((feature_index.len(), l));
        for (row, entries) in file.weights.values().enumerate() {
            for (label, &w) in entries {
                let col = *label_pos
                    .get(label.as_str())
                    .ok_or_else(|| Error::Checkpoint(format!("unknown label {label} in weights")))?;
                weights[[row, col]] = T::of(w);
            }
        }
        let crf = CrfParams {
            transitions: Array2::from_shape_fn((l, l), |(i, j)| T::of(file.transitions[i][j])),
            start: Array1::from_iter(file.start.iter().map(|&v| T::of(v))),
            end: Array1::from_iter(file.end.iter().map(|&v| T::of(v))),
        };
        let model = Self {
            labels: file.labels,
            schema_fingerprint: file.schema_fingerprint,
            features: file.features,
            lambda: file.lambda,
            feature_index,
            params: ClassicParams { weights, crf },
        };
        if flatten(&model.params).iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(words: &[&str]) -> Sentence {
        Sentence::from_words("x", words, None).unwrap()
    }

    fn keys(fv: &FeatureVector) -> Vec<&str> {
        fv.iter().map(|(k, _)| k.as_str()).collect()
    }

    #[test]
    fn template_example() {
        let s = sentence(&["The", "1984", "novel"]);
        let fv = extract_features(&s, 2, &FeatureConfig::default());
        let k = keys(&fv);
        for want in ["word=novel", "suffix3=vel", "prev_word=1984", "prev_isdigit=true", "eos=true", "bias"] {
            assert!(k.contains(&want), "missing {want} in {k:?}");
        }
        assert!(!k.contains(&"bos=true"));
    }

    #[test]
    fn first_token_has_no_prev_features() {
        let s = sentence(&["The", "1984", "novel"]);
        let fv = extract_features(&s, 0, &FeatureConfig::default());
        let k = keys(&fv);
        assert!(k.contains(&"bos=true"));
        assert!(k.contains(&"istitle=true"));
        assert!(k.iter().all(|f| !f.starts_with("prev_")));
        assert_eq!(fv, extract_features(&s, 0, &FeatureConfig::default()));
    }

    #[test]
    fn flags_and_suffixes() {
        assert_eq!(suffix("ab", 3), "ab");
        assert_eq!(suffix("héllo", 2), "lo");
        assert_eq!(suffix("éa", 2), "éa");
        assert!(is_digit("2001") && !is_digit("20a1") && !is_digit(""));
        assert!(is_upper("NASA") && !is_upper("NaSA") && !is_upper("123"));
        assert!(is_title("Paris") && !is_title("paris") && !is_title("PAris"));
        let mut s = sentence(&["in", "Paris"]);
        s.tokens[0].pos = Some("ADP".into());
        let k = extract_features(&s, 1, &FeatureConfig::default());
        assert!(keys(&k).contains(&"prev_pos=ADP"));
        let cfg = FeatureConfig {
            use_pos: false,
            ..Default::default()
        };
        assert!(!keys(&extract_features(&s, 1, &cfg)).contains(&"prev_pos=ADP"));
    }

    #[test]
    fn emissions_examples() {
        let feats: IndexedFeatures = vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 1.0), (1, 1.0)]];
        let zero = Array2::<f64>::zeros((2, 4));
        assert!(emissions_from_features(&feats, &zero).iter().all(|&v| v == 0.0));
        let mut w = Array2::<f64>::zeros((2, 4));
        w[[1, 3]] = 2.0;
        let e = emissions_from_features(&feats, &w);
        assert_eq!(e.column(3).to_vec(), vec![0.0, 2.0, 2.0]);
        assert_eq!(e.sum(), 4.0);
    }

    #[test]
    fn emissions_match_dense_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (n, f, l) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..5));
            let w = Array2::from_shape_fn((f, l), |_| rng.gen_range(-1.0..1.0));
            let feats: IndexedFeatures = (0..n)
                .map(|_| {
                    let mut row = Vec::new();
                    for i in 0..f {
                        if rng.gen_bool(0.4) {
                            row.push((i, rng.gen_range(0.5..2.0)));
                        }
                    }
                    row
                })
                .collect();
            let mut dense = Array2::<f64>::zeros((n, f));
            for (t, row) in feats.iter().enumerate() {
                for &(i, v) in row {
                    dense[[t, i]] = v;
                }
            }
            let expect = dense.dot(&w);
            let got = emissions_from_features(&feats, &w);
            assert!((expect - got).iter().all(|d| d.abs() < 1e-12));
        }
    }
}

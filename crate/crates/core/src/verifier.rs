//! Per-field correctness confidence for candidate records.
//!
//! The reference verifier is one logistic unit per schema field over a small
//! fixed feature map. Anything that implements [`ConfidenceSource`] can stand
//! in for it, including precomputed scores from an external model.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::field_match;
use crate::normalize::{is_canonical, normalize_str, NormalizerId};
use crate::schema::{CanonicalRecord, FieldSpec, GoldRecord, Schema, Split};

/// Bumped whenever [`featurize`] changes meaning; stored in every model.
pub const FEATURE_SPEC_VERSION: u32 = 1;
pub const N_FEATURES: usize = 8;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "value_in_query",
    "token_overlap",
    "unit_pattern_match",
    "is_null",
    "query_mentions_field_cue",
    "value_length_norm",
    "strict_valid",
    "trace_repair_count_norm",
];

const VALUE_IN_QUERY: usize = 0;
const TOKEN_OVERLAP: usize = 1;
const FIELD_CUE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifierMode {
    Full,
    /// Sees only the query; every value- and record-derived feature is zero.
    QueryOnly,
    /// Sees only the candidate; every query-derived feature is zero.
    OutputOnly,
}

impl VerifierMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VerifierMode::Full => "full",
            VerifierMode::QueryOnly => "query-only",
            VerifierMode::OutputOnly => "output-only",
        }
    }

    fn keeps(self, feature: usize) -> bool {
        match self {
            VerifierMode::Full => true,
            VerifierMode::QueryOnly => feature == FIELD_CUE,
            VerifierMode::OutputOnly => !matches!(feature, VALUE_IN_QUERY | TOKEN_OVERLAP | FIELD_CUE),
        }
    }
}

impl fmt::Display for VerifierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    fn key(&self) -> [u64; N_FEATURES] {
        self.0.map(f64::to_bits)
    }
}

/// Lowercased alphanumeric runs.
fn word_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace/comma separated chunks with surrounding punctuation trimmed;
/// keeps unit notation like `f/2.8` or `1/500s` intact.
fn chunk_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .map(|t| t.trim_matches(|c: char| matches!(c, '.' | '!' | '?' | ';' | ':' | '(' | ')' | '"' | '\'')))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn value_in_query(query: &str, field: &FieldSpec, value: &str) -> bool {
    match field.normalizer_id {
        NormalizerId::FreeText => {
            let v = word_tokens(value);
            let q = word_tokens(query);
            !v.is_empty() && q.windows(v.len()).any(|w| w == v.as_slice())
        }
        id => {
            let chunks = chunk_tokens(query);
            let hit = |cand: &str| {
                let n = normalize_str(id, cand);
                !n.unparseable && n.value.as_deref() == Some(value)
            };
            chunks.iter().any(|c| hit(c))
                || chunks.windows(2).any(|w| {
                    hit(&alloc::format!("{} {}", w[0], w[1])) || hit(&alloc::format!("{}{}", w[0], w[1]))
                })
        }
    }
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: alloc::collections::BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let b: alloc::collections::BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

const CAMERA_CUES: [&str; 10] = [
    "camera", "canon", "nikon", "sony", "fujifilm", "panasonic", "olympus", "leica", "pentax", "ricoh",
];
const LENS_CUES: [&str; 9] = [
    "lens", "nikkor", "fujinon", "sigma", "tamron", "zeiss", "samyang", "tokina", "laowa",
];

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn mentions_cue(query: &str, field: &FieldSpec) -> bool {
    let chunks = chunk_tokens(query);
    let any = |pred: &dyn Fn(&str) -> bool| chunks.iter().any(|c| pred(c));
    match field.name.as_str() {
        "ISO" => any(&|c| c.starts_with("iso")),
        "APERTURE" => any(&|c| {
            c == "aperture"
                || c.starts_with("f/")
                || (c.starts_with('f') && c[1..].starts_with(|ch: char| ch.is_ascii_digit()))
        }),
        "SHUTTER_SPEED" => any(&|c| {
            c == "shutter"
                || c.split_once('/').is_some_and(|(a, b)| {
                    is_digits(a) && b.starts_with(|ch: char| ch.is_ascii_digit())
                })
                || c.strip_suffix('s').is_some_and(|n| is_digits(&n.replace('.', "")))
        }),
        "FOCAL_LENGTH" => any(&|c| c == "focal" || c.ends_with("mm")),
        "CAMERA" => any(&|c| CAMERA_CUES.contains(&c)),
        "LENS" => any(&|c| LENS_CUES.contains(&c)),
        other => {
            let words = word_tokens(&other.replace('_', " "));
            let q = word_tokens(query);
            words.iter().any(|w| q.contains(w))
        }
    }
}

/// Maps (query, field, candidate value, source record) to the fixed-order
/// feature vector, then zeroes the slots the mode hides.
pub fn featurize(
    query: &str,
    field: &FieldSpec,
    value: Option<&str>,
    record: &CanonicalRecord,
    mode: VerifierMode,
) -> FeatureVector {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut x = [0.0; N_FEATURES];
    if let Some(v) = value {
        x[0] = flag(value_in_query(query, field, v));
        x[1] = jaccard(&word_tokens(v), &word_tokens(query));
        x[2] = flag(is_canonical(field.normalizer_id, v));
        x[5] = (v.chars().count() as f64 / 32.0).min(1.0);
    } else {
        x[3] = 1.0;
    }
    x[4] = flag(mentions_cue(query, field));
    x[6] = flag(record.strict_valid);
    x[7] = (record.repair_count() as f64 / 4.0).min(1.0);
    for (i, slot) in x.iter_mut().enumerate() {
        if !mode.keeps(i) {
            *slot = 0.0;
        }
    }
    FeatureVector(x)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticUnit {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticUnit {
    pub fn zero() -> Self {
        Self {
            weights: alloc::vec![0.0; N_FEATURES],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        self.weights.iter().zip(&x.0).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn prob(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// A distinct feature vector with how many positive and negative examples
/// share it. Full-batch objectives over these rows equal those over the
/// expanded example list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRow {
    pub x: FeatureVector,
    pub pos: u64,
    pub neg: u64,
}

/// Mean binary cross-entropy plus `l2/2 * |w|^2` (bias unregularized).
pub fn objective(unit: &LogisticUnit, rows: &[WeightedRow], l2: f64) -> f64 {
    let n: u64 = rows.iter().map(|r| r.pos + r.neg).sum();
    let mut total = 0.0;
    for r in rows {
        let z = unit.logit(&r.x);
        total += r.pos as f64 * softplus(-z) + r.neg as f64 * softplus(z);
    }
    let reg: f64 = unit.weights.iter().map(|w| w * w).sum::<f64>() * l2 / 2.0;
    total / n.max(1) as f64 + reg
}

/// Analytic gradient of [`objective`]: (d/dw, d/db).
pub fn gradient(unit: &LogisticUnit, rows: &[WeightedRow], l2: f64) -> (Vec<f64>, f64) {
    let n: u64 = rows.iter().map(|r| r.pos + r.neg).sum();
    let n = n.max(1) as f64;
    let mut gw = alloc::vec![0.0; unit.weights.len()];
    let mut gb = 0.0;
    for r in rows {
        let p = unit.prob(&r.x);
        // sum over the row's examples of (p - y)
        let resid = (r.pos + r.neg) as f64 * p - r.pos as f64;
        for (g, v) in gw.iter_mut().zip(&r.x.0) {
            *g += resid * v;
        }
        gb += resid;
    }
    for (g, w) in gw.iter_mut().zip(&unit.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Recorded for provenance; training itself draws no randomness.
    pub seed: u64,
    pub epochs: u32,
    pub lr: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // lr stays under 1/L for features in [0,1]^8 plus bias, so the
        // objective decreases monotonically.
        Self {
            seed: 42,
            epochs: 600,
            lr: 0.4,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub field: String,
    pub unit: LogisticUnit,
    pub n_examples: u64,
    pub n_positive: u64,
    /// Single-class labels: the unit is a constant at the smoothed class prior.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierModel {
    pub feature_spec_version: u32,
    pub mode: VerifierMode,
    pub hyper: TrainConfig,
    pub trained_split: Split,
    /// Model ids whose candidates appeared in training.
    pub train_models: Vec<String>,
    pub fields: Vec<FieldModel>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrainError {
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("example {example_id:?} is from the {split} split; verifier training uses train only")]
    WrongSplit { example_id: String, split: Split },
    #[error("record {0:?} does not match its gold example id")]
    Misaligned(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("model feature spec v{found} does not match featurizer v{expected}")]
    FeatureSpecMismatch { found: u32, expected: u32 },
    #[error("model has no unit for field {0:?}")]
    MissingField(String),
    #[error("unit for field {0:?} has wrong dimension or non-finite weights")]
    BadWeights(String),
}

/// Compresses featurized examples into one weighted row per distinct vector.
pub fn training_rows<'a, I>(
    examples: I,
    field: &FieldSpec,
    mode: VerifierMode,
) -> Vec<WeightedRow>
where
    I: IntoIterator<Item = (&'a str, &'a CanonicalRecord, &'a GoldRecord)>,
{
    let mut acc: BTreeMap<[u64; N_FEATURES], WeightedRow> = BTreeMap::new();
    for (query, record, gold) in examples {
        let value = record.fields.get(&field.name);
        let x = featurize(query, field, value, record, mode);
        let label = field_match(value, gold.gold.get(&field.name)).is_correct();
        let row = acc.entry(x.key()).or_insert(WeightedRow { x, pos: 0, neg: 0 });
        if label {
            row.pos += 1;
        } else {
            row.neg += 1;
        }
    }
    acc.into_values().collect()
}

/// Plain gradient descent from zero weights; returns the unit and the
/// objective after each epoch.
pub fn fit_unit(rows: &[WeightedRow], cfg: &TrainConfig) -> (LogisticUnit, Vec<f64>) {
    let mut unit = LogisticUnit::zero();
    let mut losses = Vec::with_capacity(cfg.epochs as usize);
    for _ in 0..cfg.epochs {
        let (gw, gb) = gradient(&unit, rows, cfg.l2);
        for (w, g) in unit.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g;
        }
        unit.bias -= cfg.lr * gb;
        losses.push(objective(&unit, rows, cfg.l2));
    }
    (unit, losses)
}

/// Trains one logistic unit per schema field on train-split triples.
///
/// A field whose labels are all one class gets a constant unit at the
/// Laplace-smoothed prior and is flagged `degenerate`.
pub fn train<'a, I>(
    triples: I,
    schema: &Schema,
    mode: VerifierMode,
    cfg: &TrainConfig,
) -> Result<VerifierModel, TrainError>
where
    I: IntoIterator<Item = (&'a str, &'a CanonicalRecord, &'a GoldRecord)>,
{
    let triples: Vec<_> = triples.into_iter().collect();
    if triples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    for (_, record, gold) in &triples {
        if gold.split != Split::Train {
            return Err(TrainError::WrongSplit {
                example_id: gold.example_id.clone(),
                split: gold.split,
            });
        }
        if record.example_id != gold.example_id {
            return Err(TrainError::Misaligned(record.example_id.clone()));
        }
    }
    let mut train_models: Vec<String> = triples.iter().map(|(_, r, _)| r.model_id.clone()).collect();
    train_models.sort();
    train_models.dedup();

    let fields = schema
        .fields()
        .iter()
        .map(|spec| {
            let rows = training_rows(triples.iter().copied(), spec, mode);
            let n_positive: u64 = rows.iter().map(|r| r.pos).sum();
            let n_examples: u64 = rows.iter().map(|r| r.pos + r.neg).sum();
            let degenerate = n_positive == 0 || n_positive == n_examples;
            let unit = if degenerate {
                let prior = (n_positive as f64 + 1.0) / (n_examples as f64 + 2.0);
                LogisticUnit {
                    weights: alloc::vec![0.0; N_FEATURES],
                    bias: libm::log(prior / (1.0 - prior)),
                }
            } else {
                fit_unit(&rows, cfg).0
            };
            FieldModel {
                field: spec.name.clone(),
                unit,
                n_examples,
                n_positive,
                degenerate,
            }
        })
        .collect();

    Ok(VerifierModel {
        feature_spec_version: FEATURE_SPEC_VERSION,
        mode,
        hyper: *cfg,
        trained_split: Split::Train,
        train_models,
        fields,
    })
}

impl VerifierModel {
    /// Checks a (possibly deserialized) model against the current featurizer
    /// and the schema it will score.
    pub fn validate(&self, schema: &Schema) -> Result<(), ModelError> {
        if self.feature_spec_version != FEATURE_SPEC_VERSION {
            return Err(ModelError::FeatureSpecMismatch {
                found: self.feature_spec_version,
                expected: FEATURE_SPEC_VERSION,
            });
        }
        for name in schema.field_names() {
            let fm = self
                .field_model(name)
                .ok_or_else(|| ModelError::MissingField(name.into()))?;
            let ok = fm.unit.weights.len() == N_FEATURES
                && fm.unit.weights.iter().all(|w| w.is_finite())
                && fm.unit.bias.is_finite();
            if !ok {
                return Err(ModelError::BadWeights(name.into()));
            }
        }
        Ok(())
    }

    pub fn field_model(&self, field: &str) -> Option<&FieldModel> {
        self.fields.iter().find(|f| f.field == field)
    }

    /// A model with all-zero units: every confidence is 0.5.
    pub fn zero(schema: &Schema, mode: VerifierMode) -> Self {
        Self {
            feature_spec_version: FEATURE_SPEC_VERSION,
            mode,
            hyper: TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            trained_split: Split::Train,
            train_models: Vec::new(),
            fields: schema
                .fields()
                .iter()
                .map(|f| FieldModel {
                    field: f.name.clone(),
                    unit: LogisticUnit::zero(),
                    n_examples: 0,
                    n_positive: 0,
                    degenerate: false,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfidence {
    pub example_id: String,
    pub model_id: String,
    pub field: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no confidence for ({example_id:?}, {model_id:?}, {field:?})")]
pub struct MissingScore {
    pub example_id: String,
    pub model_id: String,
    pub field: String,
}

/// Anything that can say how likely a candidate's field value is correct.
pub trait ConfidenceSource {
    fn confidence(&self, query: &str, record: &CanonicalRecord, field: &FieldSpec) -> Result<f64, MissingScore>;
}

impl ConfidenceSource for VerifierModel {
    fn confidence(&self, query: &str, record: &CanonicalRecord, field: &FieldSpec) -> Result<f64, MissingScore> {
        let fm = self.field_model(&field.name).ok_or_else(|| MissingScore {
            example_id: record.example_id.clone(),
            model_id: record.model_id.clone(),
            field: field.name.clone(),
        })?;
        let x = featurize(query, field, record.fields.get(&field.name), record, self.mode);
        Ok(fm.unit.prob(&x))
    }
}

/// One confidence per schema field, in schema order.
pub fn score<S: ConfidenceSource + ?Sized>(
    source: &S,
    query: &str,
    record: &CanonicalRecord,
    schema: &Schema,
) -> Result<Vec<FieldConfidence>, MissingScore> {
    schema
        .fields()
        .iter()
        .map(|f| {
            Ok(FieldConfidence {
                example_id: record.example_id.clone(),
                model_id: record.model_id.clone(),
                field: f.name.clone(),
                p: source.confidence(query, record, f)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("confidence {0} is outside [0, 1]")]
    Range(f64),
    #[error("duplicate confidence for ({0:?}, {1:?}, {2:?})")]
    DuplicateKey(String, String, String),
}

/// Confidences computed elsewhere, keyed by (example, model, field).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores(BTreeMap<(String, String, String), f64>);

impl ExternalScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: FieldConfidence) -> Result<(), ScoreError> {
        if !(0.0..=1.0).contains(&c.p) {
            return Err(ScoreError::Range(c.p));
        }
        let key = (c.example_id, c.model_id, c.field);
        if self.0.contains_key(&key) {
            return Err(ScoreError::DuplicateKey(key.0, key.1, key.2));
        }
        self.0.insert(key, c.p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl ConfidenceSource for ExternalScores {
    fn confidence(&self, _query: &str, record: &CanonicalRecord, field: &FieldSpec) -> Result<f64, MissingScore> {
        let key = (record.example_id.clone(), record.model_id.clone(), field.name.clone());
        self.0.get(&key).copied().ok_or(MissingScore {
            example_id: key.0,
            model_id: key.1,
            field: key.2,
        })
    }
}

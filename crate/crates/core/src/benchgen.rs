//! Seeded synthetic corpus: gold records with natural-language queries, and
//! per-model raw outputs drawn from configurable error and formatting
//! profiles.
//!
//! Every random choice comes from a ChaCha8 stream seeded by hashing the run
//! seed with a stream tag, the example id and (for outputs) the model id, so
//! adding or removing a model never changes another model's outputs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::json::write_string;
use crate::normalize::{is_canonical, NormalizerId};
use crate::schema::{FieldValues, GoldRecord, PromptVariant, RawOutput, Schema, Split};
use crate::taxonomy::FailureCategory;

/// Deterministic RNG for one (seed, stream, parts...) tuple.
pub fn stream_rng(seed: u64, tag: &str, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in core::iter::once(&tag).chain(parts) {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn example_id(index: usize) -> String {
    format!("ex{index:06}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KeyCase {
    #[default]
    Exact,
    Lower,
    Title,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnitStyle {
    #[default]
    Canonical,
    /// Values like `ISO 400`, `F2.8`, `85 mm`.
    Verbose,
}

/// Cosmetic habits of a model. They only show up in outputs that are
/// already wrapped (fenced, prose, trailing), so they never change which
/// failure category an output falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StyleQuirks {
    pub key_case: KeyCase,
    pub unit_style: UnitStyle,
    pub pretty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    /// Per field: chance a present, non-omitted value is replaced by a wrong one.
    pub semantic_error: BTreeMap<String, f64>,
    /// Per field: chance a present value is emitted as null.
    pub omission: BTreeMap<String, f64>,
    /// Distribution over output formats, `NoFailure` included.
    pub taxonomy_mix: BTreeMap<FailureCategory, f64>,
    pub quirks: StyleQuirks,
}

/// Share of each failure category among failed outputs, used by the
/// builtin profiles. Each lies inside the commonly observed range for its
/// category; they sum to 1.
pub const DEFAULT_FAILURE_SHARES: [(FailureCategory, f64); 6] = [
    (FailureCategory::FencedJson, 0.40),
    (FailureCategory::ProseWrapper, 0.25),
    (FailureCategory::TrailingText, 0.15),
    (FailureCategory::MissingKeys, 0.08),
    (FailureCategory::ExtraKeys, 0.06),
    (FailureCategory::MalformedJson, 0.06),
];

impl ModelProfile {
    /// Same error rates on every field; `no_failure` of outputs are strict
    /// JSON and the rest split by `failure_shares`.
    pub fn uniform(
        model_id: &str,
        schema: &Schema,
        omission: f64,
        semantic_error: f64,
        no_failure: f64,
        failure_shares: &[(FailureCategory, f64)],
        quirks: StyleQuirks,
    ) -> Self {
        let per_field = |p: f64| schema.field_names().map(|n| (n.to_string(), p)).collect();
        let mut mix: BTreeMap<FailureCategory, f64> = failure_shares
            .iter()
            .map(|(c, s)| (*c, s * (1.0 - no_failure)))
            .collect();
        mix.insert(FailureCategory::NoFailure, no_failure);
        Self {
            model_id: model_id.into(),
            semantic_error: per_field(semantic_error),
            omission: per_field(omission),
            taxonomy_mix: mix,
            quirks,
        }
    }

    pub fn failure_probability(&self) -> f64 {
        1.0 - self.taxonomy_mix.get(&FailureCategory::NoFailure).copied().unwrap_or(0.0)
    }

    fn validate(&self, schema: &Schema) -> Result<(), ConfigError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        for name in schema.field_names() {
            for (what, map) in [("semantic_error", &self.semantic_error), ("omission", &self.omission)] {
                match map.get(name) {
                    Some(p) if prob(*p) => {}
                    _ => {
                        return Err(ConfigError::BadProbability {
                            model_id: self.model_id.clone(),
                            what: format!("{what}[{name}]"),
                        })
                    }
                }
            }
        }
        if let Some((c, _)) = self.taxonomy_mix.iter().find(|(_, p)| !prob(**p)) {
            return Err(ConfigError::BadProbability {
                model_id: self.model_id.clone(),
                what: format!("taxonomy_mix[{c}]"),
            });
        }
        let sum: f64 = self.taxonomy_mix.values().sum();
        if libm::fabs(sum - 1.0) > 1e-9 {
            return Err(ConfigError::BadMix {
                model_id: self.model_id.clone(),
                sum,
            });
        }
        Ok(())
    }
}

/// Builtin zero-shot profiles: (id, omission, semantic error, strict-valid share).
///
/// Error rates were solved so that ROS/CSS on a large corpus land near the
/// reference per-model scores; omission is a free choice per model.
const ZERO_SHOT: [(&str, f64, f64, f64); 6] = [
    ("gemma9b-like", 0.12, 0.200, 0.851),
    ("gemma2b-like", 0.40, 0.663, 0.346),
    ("qwen7b-like", 0.18, 0.337, 0.567),
    ("mistral7b-like", 0.15, 0.277, 0.665),
    ("phi3-like", 0.25, 0.528, 0.574),
    ("stablelm-like", 0.30, 0.612, 0.394),
];

/// Few-shot counterparts: fewer formatting failures, narrower spread.
const FEW_SHOT: [(&str, f64, f64, f64); 6] = [
    ("gemma9b-like", 0.12, 0.270, 0.791),
    ("gemma2b-like", 0.40, 0.706, 0.761),
    ("qwen7b-like", 0.18, 0.383, 0.700),
    ("mistral7b-like", 0.15, 0.342, 0.768),
    ("phi3-like", 0.25, 0.505, 0.729),
    ("stablelm-like", 0.30, 0.632, 0.734),
];

const QUIRKS: [StyleQuirks; 6] = [
    StyleQuirks { key_case: KeyCase::Exact, unit_style: UnitStyle::Canonical, pretty: true },
    StyleQuirks { key_case: KeyCase::Lower, unit_style: UnitStyle::Verbose, pretty: false },
    StyleQuirks { key_case: KeyCase::Exact, unit_style: UnitStyle::Verbose, pretty: true },
    StyleQuirks { key_case: KeyCase::Title, unit_style: UnitStyle::Canonical, pretty: true },
    StyleQuirks { key_case: KeyCase::Lower, unit_style: UnitStyle::Canonical, pretty: false },
    StyleQuirks { key_case: KeyCase::Title, unit_style: UnitStyle::Verbose, pretty: false },
];

fn profile_set(rows: &[(&str, f64, f64, f64); 6], schema: &Schema) -> Vec<ModelProfile> {
    rows.iter()
        .zip(QUIRKS)
        .map(|((id, o, e, s), q)| ModelProfile::uniform(id, schema, *o, *e, *s, &DEFAULT_FAILURE_SHARES, q))
        .collect()
}

pub fn builtin_profiles(schema: &Schema) -> Vec<ModelProfile> {
    profile_set(&ZERO_SHOT, schema)
}

pub fn builtin_few_shot_profiles(schema: &Schema) -> Vec<ModelProfile> {
    profile_set(&FEW_SHOT, schema)
}

/// Random profiles for property tests: error rates in [0, 0.5], strict-valid
/// share in [0.05, 0.9], and a random split across failure categories.
pub fn random_profiles(seed: u64, n: usize, schema: &Schema) -> Vec<ModelProfile> {
    (0..n)
        .map(|i| {
            let id = format!("random{i:02}");
            let mut rng = stream_rng(seed, "profile", &[&id]);
            let o = rng.random_range(0.0..0.5);
            let e = rng.random_range(0.0..0.5);
            let s = rng.random_range(0.05..0.9);
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let shares: Vec<(FailureCategory, f64)> = FailureCategory::FAILURES
                .iter()
                .zip(&raw)
                .map(|(c, r)| (*c, r / total))
                .collect();
            let quirks = QUIRKS[rng.random_range(0..QUIRKS.len())];
            let mut p = ModelProfile::uniform(&id, schema, o, e, s, &shares, quirks);
            // keep the mix summing to exactly 1 after float rounding
            let drift: f64 = 1.0 - p.taxonomy_mix.values().sum::<f64>();
            *p.taxonomy_mix.get_mut(&FailureCategory::NoFailure).unwrap() += drift;
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_examples: usize,
    pub schema: Schema,
    pub profiles: Vec<ModelProfile>,
    pub prompt_variant: PromptVariant,
    pub splits: SplitFractions,
    /// Canonical candidate values per field.
    pub pools: BTreeMap<String, Vec<String>>,
    /// Chance each field is mentioned in a query.
    pub field_presence: f64,
    /// Chance each eligible filler word in a query gets a typo.
    pub typo_prob: f64,
    /// Chance a unit value is rendered in a non-canonical form in the query.
    pub jitter_prob: f64,
}

impl GenConfig {
    /// Camera schema, builtin zero-shot profiles, 10,000 examples split 80/10/10.
    pub fn camera_default(seed: u64) -> Self {
        let schema = crate::schema::default_camera_schema();
        Self {
            seed,
            n_examples: 10_000,
            profiles: builtin_profiles(&schema),
            pools: camera_pools(),
            schema,
            prompt_variant: PromptVariant::ZeroShot,
            splits: SplitFractions::default(),
            field_presence: 0.7,
            typo_prob: 0.05,
            jitter_prob: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_examples == 0 {
            return Err(ConfigError::NoExamples);
        }
        let s = self.splits;
        let sum = s.train + s.dev + s.test;
        if [s.train, s.dev, s.test].iter().any(|f| *f < 0.0) || libm::fabs(sum - 1.0) > 1e-9 {
            return Err(ConfigError::BadSplits(sum));
        }
        for (what, p) in [
            ("field_presence", self.field_presence),
            ("typo_prob", self.typo_prob),
            ("jitter_prob", self.jitter_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::BadProbability {
                    model_id: String::new(),
                    what: what.into(),
                });
            }
        }
        for spec in self.schema.fields() {
            let pool = self
                .pools
                .get(&spec.name)
                .ok_or_else(|| ConfigError::MissingPool(spec.name.clone()))?;
            if pool.len() < 2 {
                return Err(ConfigError::EmptyPool(spec.name.clone()));
            }
            if let Some(v) = pool.iter().find(|v| !is_canonical(spec.normalizer_id, v)) {
                return Err(ConfigError::NonCanonicalPoolValue {
                    field: spec.name.clone(),
                    value: v.clone(),
                });
            }
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for p in &self.profiles {
            if !seen.insert(p.model_id.as_str()) {
                return Err(ConfigError::DuplicateModel(p.model_id.clone()));
            }
            p.validate(&self.schema)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("n_examples must be at least 1")]
    NoExamples,
    #[error("split fractions must be non-negative and sum to 1 (got {0})")]
    BadSplits(f64),
    #[error("no value pool for field {0:?}")]
    MissingPool(String),
    #[error("value pool for field {0:?} needs at least two values")]
    EmptyPool(String),
    #[error("pool value {value:?} for {field:?} is not in canonical form")]
    NonCanonicalPoolValue { field: String, value: String },
    #[error("{model_id}: {what} must be a probability")]
    BadProbability { model_id: String, what: String },
    #[error("{model_id}: taxonomy mix sums to {sum}, not 1")]
    BadMix { model_id: String, sum: f64 },
    #[error("model id {0:?} appears twice")]
    DuplicateModel(String),
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Value pools for the camera schema. Numbers are chosen so that no unit
/// value can be read as a different field's value in a query.
pub fn camera_pools() -> BTreeMap<String, Vec<String>> {
    let mut m = BTreeMap::new();
    m.insert(
        "CAMERA".into(),
        strings(&[
            "Canon EOS R5",
            "Canon EOS 5D Mark IV",
            "Nikon Z6 II",
            "Nikon D850",
            "Sony A7 IV",
            "Sony A6400",
            "Fujifilm X-T4",
            "Fujifilm X100V",
            "Panasonic Lumix GH5",
            "Olympus OM-D E-M1",
            "Leica Q2",
            "Pentax K-1",
            "Ricoh GR III",
        ]),
    );
    m.insert(
        "LENS".into(),
        strings(&[
            "Sigma Art",
            "Tamron SP",
            "Zeiss Batis",
            "Samyang AF",
            "Tokina Opera",
            "Laowa Argus",
            "Nikkor Z S-Line",
            "Fujinon XF",
            "Voigtlander Nokton",
            "Viltrox Pro",
        ]),
    );
    m.insert(
        "ISO".into(),
        strings(&[
            "100", "125", "160", "200", "250", "320", "400", "500", "640", "800", "1000", "1250", "1600", "3200",
            "6400", "12800",
        ]),
    );
    m.insert(
        "APERTURE".into(),
        strings(&["f/1.2", "f/1.4", "f/1.8", "f/2", "f/2.8", "f/4", "f/5.6", "f/8", "f/11", "f/16"]),
    );
    m.insert(
        "SHUTTER_SPEED".into(),
        strings(&[
            "1/8000", "1/4000", "1/2000", "1/1000", "1/500", "1/250", "1/125", "1/60", "1/30", "1/15", "1/8",
            "0.5", "1", "2", "4",
        ]),
    );
    m.insert(
        "FOCAL_LENGTH".into(),
        strings(&[
            "14mm", "18mm", "24mm", "28mm", "35mm", "50mm", "85mm", "105mm", "135mm", "300mm", "24-70mm",
            "70-200mm", "100-400mm",
        ]),
    );
    m
}

/// Query rendering of a value, with `jitter` selecting a non-canonical form.
fn render_query_value(id: NormalizerId, v: &str, rng: &mut ChaCha8Rng, jitter: bool) -> String {
    let pick = |rng: &mut ChaCha8Rng, forms: Vec<String>| -> String {
        if jitter && forms.len() > 1 {
            let i = rng.random_range(1..forms.len());
            forms[i].clone()
        } else {
            forms[0].clone()
        }
    };
    match id {
        NormalizerId::FreeText => v.into(),
        NormalizerId::Iso => pick(rng, vec![format!("ISO {v}"), format!("ISO{v}"), format!("iso {v}")]),
        NormalizerId::Aperture => {
            let n = v.trim_start_matches("f/");
            pick(rng, vec![format!("f/{n}"), format!("f{n}"), format!("F{n}")])
        }
        NormalizerId::Shutter if v.contains('/') => {
            pick(rng, vec![format!("{v}s"), format!("{v} sec"), v.into()])
        }
        NormalizerId::Shutter => format!("{v}s"),
        NormalizerId::FocalLength => {
            let n = v.trim_end_matches("mm");
            pick(rng, vec![format!("{n}mm"), format!("{n} mm")])
        }
    }
}

/// Output rendering of a value under a model's unit style.
fn render_output_value(id: NormalizerId, v: &str, style: UnitStyle) -> String {
    if style == UnitStyle::Canonical {
        return v.into();
    }
    match id {
        NormalizerId::FreeText => v.into(),
        NormalizerId::Iso => format!("ISO {v}"),
        NormalizerId::Aperture => format!("F{}", v.trim_start_matches("f/")),
        NormalizerId::Shutter if v.contains('/') => format!("{v}s"),
        NormalizerId::Shutter => format!("{v} sec"),
        NormalizerId::FocalLength => format!("{} mm", v.trim_end_matches("mm")),
    }
}

enum Piece {
    Filler(&'static str),
    Value(String),
}

/// Words a typo never touches: they carry the field cues.
const PROTECTED: [&str; 5] = ["lens", "aperture", "shutter", "focal", "iso"];

fn phrase(field: &str, rendered: String, rng: &mut ChaCha8Rng) -> Vec<Piece> {
    use Piece::*;
    let options: Vec<Vec<Piece>> = match field {
        "LENS" => vec![
            vec![Filler("using"), Filler("the"), Value(rendered.clone()), Filler("lens")],
            vec![Filler("with"), Filler("a"), Value(rendered.clone()), Filler("lens")],
            vec![Value(rendered.clone()), Filler("lens")],
        ],
        "ISO" => vec![vec![Value(rendered.clone())], vec![Filler("at"), Value(rendered.clone())]],
        "APERTURE" => vec![
            vec![Filler("at"), Value(rendered.clone())],
            vec![Value(rendered.clone())],
            vec![Filler("aperture"), Value(rendered.clone())],
        ],
        "SHUTTER_SPEED" => vec![
            vec![Value(rendered.clone())],
            vec![Filler("shutter"), Value(rendered.clone())],
            vec![Filler("exposed"), Filler("for"), Value(rendered.clone())],
        ],
        "FOCAL_LENGTH" => vec![
            vec![Filler("at"), Value(rendered.clone())],
            vec![Value(rendered.clone()), Filler("focal"), Filler("length")],
            vec![Filler("zoomed"), Filler("to"), Value(rendered.clone())],
        ],
        _ => return vec![Value(rendered)],
    };
    let i = rng.random_range(0..options.len());
    options.into_iter().nth(i).unwrap()
}

const OPENERS_WITH_CAMERA: [&[&str]; 4] = [
    &["Shot", "with"],
    &["Taken", "on", "a"],
    &["Captured", "with", "my"],
    &["Photographed", "using", "the"],
];
const OPENERS_NO_CAMERA: [&[&str]; 3] = [&["Photo"], &["Picture", "taken"], &["Image", "shot"]];

/// Swaps two adjacent interior letters.
fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() >= 4 {
        let i = rng.random_range(1..chars.len() - 2);
        chars.swap(i, i + 1);
    }
    chars.into_iter().collect()
}

fn render_query(cfg: &GenConfig, gold: &FieldValues, rng: &mut ChaCha8Rng) -> String {
    let mut parts: Vec<Vec<Piece>> = Vec::new();
    let mut opener: Vec<Piece> = Vec::new();
    for spec in cfg.schema.fields() {
        let Some(v) = gold.get(&spec.name) else { continue };
        let jitter = rng.random::<f64>() < cfg.jitter_prob;
        let rendered = render_query_value(spec.normalizer_id, v, rng, jitter);
        if spec.name == "CAMERA" {
            let words = OPENERS_WITH_CAMERA[rng.random_range(0..OPENERS_WITH_CAMERA.len())];
            opener = words.iter().map(|w| Piece::Filler(w)).collect();
            opener.push(Piece::Value(rendered));
        } else {
            parts.push(phrase(&spec.name, rendered, rng));
        }
    }
    if opener.is_empty() {
        let words = OPENERS_NO_CAMERA[rng.random_range(0..OPENERS_NO_CAMERA.len())];
        opener = words.iter().map(|w| Piece::Filler(w)).collect();
    }
    parts.shuffle(rng);

    let word = |p: &Piece, rng: &mut ChaCha8Rng| -> String {
        match p {
            Piece::Value(v) => v.clone(),
            Piece::Filler(w) => {
                let eligible = w.len() >= 4 && !PROTECTED.contains(&w.to_lowercase().as_str());
                if eligible && rng.random::<f64>() < cfg.typo_prob {
                    typo(w, rng)
                } else {
                    (*w).into()
                }
            }
        }
    };
    let mut out: Vec<String> = opener.iter().map(|p| word(p, rng)).collect();
    let rest: Vec<String> = parts
        .iter()
        .map(|ph| ph.iter().map(|p| word(p, rng)).collect::<Vec<_>>().join(" "))
        .collect();
    if !rest.is_empty() {
        let joined = rest.join(", ");
        if out.is_empty() {
            out.push(joined);
        } else {
            let last = out.pop().unwrap();
            out.push(format!("{last},"));
            out.push(joined);
        }
    }
    out.join(" ")
}

/// Exact split sizes from the fractions; the test split takes the remainder.
fn split_sizes(n: usize, f: SplitFractions) -> (usize, usize) {
    let train = libm::round(n as f64 * f.train) as usize;
    let dev = (libm::round(n as f64 * f.dev) as usize).min(n - train.min(n));
    (train.min(n), dev)
}

fn assign_splits(cfg: &GenConfig) -> Vec<Split> {
    let n = cfg.n_examples;
    let (n_train, n_dev) = split_sizes(n, cfg.splits);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, "split", &[]));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    out
}

/// Gold records in example order, each with its split tag.
pub fn generate_gold(cfg: &GenConfig) -> Result<Vec<GoldRecord>, ConfigError> {
    cfg.validate()?;
    let splits = assign_splits(cfg);
    let fields = cfg.schema.fields();
    Ok((0..cfg.n_examples)
        .map(|i| {
            let id = example_id(i);
            let mut rng = stream_rng(cfg.seed, "gold", &[&id]);
            let mut present: Vec<bool> = fields.iter().map(|_| rng.random::<f64>() < cfg.field_presence).collect();
            if !present.iter().any(|p| *p) {
                present[rng.random_range(0..fields.len())] = true;
            }
            let gold: FieldValues = fields
                .iter()
                .zip(&present)
                .map(|(spec, on)| {
                    let pool = &cfg.pools[&spec.name];
                    let v = pool[rng.random_range(0..pool.len())].clone();
                    (spec.name.clone(), on.then_some(v))
                })
                .collect();
            let query = render_query(cfg, &gold, &mut rng);
            GoldRecord {
                example_id: id,
                query,
                split: splits[i],
                gold,
            }
        })
        .collect())
}

/// What the model "understood": gold with omissions and wrong values.
///
/// Every field consumes the same number of draws whatever the outcome, so
/// changing one rate never shifts the stream for later fields.
pub fn simulate_semantics(gold: &GoldRecord, profile: &ModelProfile, cfg: &GenConfig, seed: u64) -> FieldValues {
    let mut rng = stream_rng(seed, "sem", &[&gold.example_id, &profile.model_id]);
    cfg.schema
        .fields()
        .iter()
        .map(|spec| {
            let r_omit: f64 = rng.random();
            let r_err: f64 = rng.random();
            let pick: usize = rng.random_range(0..usize::MAX);
            let value = gold.gold.get(&spec.name).and_then(|g| {
                if r_omit < profile.omission[&spec.name] {
                    return None;
                }
                if r_err < profile.semantic_error[&spec.name] {
                    let others: Vec<&String> = cfg.pools[&spec.name].iter().filter(|v| *v != g).collect();
                    if !others.is_empty() {
                        return Some(others[pick % others.len()].clone());
                    }
                }
                Some(g.into())
            });
            (spec.name.clone(), value)
        })
        .collect()
}

fn sample_category(mix: &BTreeMap<FailureCategory, f64>, rng: &mut ChaCha8Rng) -> FailureCategory {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = FailureCategory::NoFailure;
    for c in FailureCategory::ALL {
        let p = mix.get(&c).copied().unwrap_or(0.0);
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = c;
        if u < acc {
            return c;
        }
    }
    last
}

fn styled_key(name: &str, case: KeyCase) -> String {
    match case {
        KeyCase::Exact => name.into(),
        KeyCase::Lower => name.to_lowercase(),
        KeyCase::Title => name
            .split('_')
            .map(|w| {
                let mut cs = w.chars();
                match cs.next() {
                    Some(f) => f.to_uppercase().chain(cs.flat_map(|c| c.to_lowercase())).collect::<String>(),
                    None => String::new(),
                }
            })
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Serializes a flat object. `entries` hold already-encoded JSON values.
fn write_object(entries: &[(String, String)], pretty: bool) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if pretty {
            out.push_str("\n  ");
        }
        write_string(&mut out, k);
        out.push(':');
        if pretty {
            out.push(' ');
        }
        out.push_str(v);
    }
    if pretty {
        out.push('\n');
    }
    out.push('}');
    out
}

fn json_value(v: Option<&str>) -> String {
    match v {
        None => "null".into(),
        Some(s) => {
            let mut out = String::new();
            write_string(&mut out, s);
            out
        }
    }
}

const PREAMBLES: [&str; 5] = [
    "Sure! Here is the extracted metadata:",
    "Here's the JSON you asked for:",
    "Based on the description, the fields are:",
    "I found the following details in the query.",
    "Of course. Extraction result:",
];
const COMMENTARY: [&str; 4] = [
    "Let me know if you need anything else.",
    "Note: fields not mentioned in the query are set to null.",
    "I hope this helps!",
    "The values above were taken directly from the text.",
];
const EXTRA_KEYS: [(&str, &str); 5] = [
    ("confidence", "0.9"),
    ("notes", "\"extracted from query\""),
    ("white_balance", "\"auto\""),
    ("flash", "null"),
    ("location", "\"unknown\""),
];

fn render(
    values: &FieldValues,
    category: FailureCategory,
    profile: &ModelProfile,
    schema: &Schema,
    rng: &mut ChaCha8Rng,
) -> String {
    let strict_entries = || -> Vec<(String, String)> {
        schema
            .field_names()
            .map(|n| (n.to_string(), json_value(values.get(n))))
            .collect()
    };
    let styled = || -> String {
        let q = profile.quirks;
        let entries: Vec<(String, String)> = schema
            .fields()
            .iter()
            .map(|f| {
                let v = values.get(&f.name).map(|v| render_output_value(f.normalizer_id, v, q.unit_style));
                (styled_key(&f.name, q.key_case), json_value(v.as_deref()))
            })
            .collect();
        write_object(&entries, q.pretty)
    };
    match category {
        FailureCategory::NoFailure => write_object(&strict_entries(), profile.quirks.pretty),
        FailureCategory::FencedJson => {
            let tag = ["json", "", "JSON"][rng.random_range(0..3)];
            format!("```{tag}\n{}\n```", styled())
        }
        FailureCategory::ProseWrapper => {
            let pre = PREAMBLES[rng.random_range(0..PREAMBLES.len())];
            let sep = if rng.random::<bool>() { "\n\n" } else { " " };
            format!("{pre}{sep}{}", styled())
        }
        FailureCategory::TrailingText => {
            let post = COMMENTARY[rng.random_range(0..COMMENTARY.len())];
            format!("{}\n\n{post}", styled())
        }
        FailureCategory::MissingKeys => {
            let mut entries = strict_entries();
            let k = rng.random_range(1..=3usize).min(entries.len());
            let mut idx: Vec<usize> = (0..entries.len()).collect();
            idx.shuffle(rng);
            let mut drop = idx[..k].to_vec();
            drop.sort_unstable();
            for i in drop.into_iter().rev() {
                entries.remove(i);
            }
            write_object(&entries, false)
        }
        FailureCategory::ExtraKeys => {
            let mut entries = strict_entries();
            let k = rng.random_range(1..=2usize);
            let mut extras = EXTRA_KEYS.to_vec();
            extras.shuffle(rng);
            for (key, v) in extras.into_iter().take(k) {
                let at = rng.random_range(0..=entries.len());
                entries.insert(at, (key.into(), v.into()));
            }
            write_object(&entries, false)
        }
        FailureCategory::MalformedJson => {
            let text = write_object(&strict_entries(), false);
            match rng.random_range(0..3) {
                0 => drop_closing_brace(&text),
                1 => single_quote_everything(&text),
                _ => trailing_comma_and_broken_quote(&text),
            }
        }
    }
}

fn drop_closing_brace(text: &str) -> String {
    text.strip_suffix('}').unwrap_or(text).into()
}

fn single_quote_everything(text: &str) -> String {
    // values never contain quotes, so a plain swap is safe
    text.replace('"', "'")
}

/// Adds a trailing comma, then deletes the closing quote of the first string
/// value. Without any string value it falls back to dropping the brace.
fn trailing_comma_and_broken_quote(text: &str) -> String {
    let with_comma = match text.strip_suffix('}') {
        Some(body) => format!("{body},}}"),
        None => return text.into(),
    };
    // a string value starts with `:"` in compact output
    let Some(open) = with_comma.find(":\"") else {
        return drop_closing_brace(text);
    };
    let start = open + 2;
    match with_comma[start..].find('"') {
        Some(rel) => {
            let close = start + rel;
            format!("{}{}", &with_comma[..close], &with_comma[close + 1..])
        }
        None => drop_closing_brace(text),
    }
}

/// One model's raw output for one example.
pub fn simulate_output(gold: &GoldRecord, profile: &ModelProfile, cfg: &GenConfig) -> RawOutput {
    let values = simulate_semantics(gold, profile, cfg, cfg.seed);
    let mut rng = stream_rng(cfg.seed, "fmt", &[&gold.example_id, &profile.model_id]);
    let category = sample_category(&profile.taxonomy_mix, &mut rng);
    RawOutput {
        example_id: gold.example_id.clone(),
        model_id: profile.model_id.clone(),
        prompt_variant: cfg.prompt_variant,
        text: render(&values, category, profile, &cfg.schema, &mut rng),
    }
}

/// The format category an output was rendered with.
pub fn sampled_category(gold: &GoldRecord, profile: &ModelProfile, seed: u64) -> FailureCategory {
    let mut rng = stream_rng(seed, "fmt", &[&gold.example_id, &profile.model_id]);
    sample_category(&profile.taxonomy_mix, &mut rng)
}

/// Gold plus every profile's outputs, ordered by example then model id.
pub fn generate_corpus(cfg: &GenConfig) -> Result<(Vec<GoldRecord>, Vec<RawOutput>), ConfigError> {
    let gold = generate_gold(cfg)?;
    let mut profiles: Vec<&ModelProfile> = cfg.profiles.iter().collect();
    profiles.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let outputs = gold
        .iter()
        .flat_map(|g| profiles.iter().map(move |p| simulate_output(g, p, cfg)))
        .collect();
    Ok((gold, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::{canonicalize, CanonConfig};
    use crate::metrics::{css_score, ros_score};
    use crate::normalize::normalize_str;
    use crate::schema::validate_strict;
    use crate::taxonomy::classify_text;

    fn small(n: usize) -> GenConfig {
        GenConfig {
            n_examples: n,
            ..GenConfig::camera_default(42)
        }
    }

    #[test]
    fn gold_is_deterministic_and_split_exactly() {
        let cfg = small(100);
        let a = generate_gold(&cfg).unwrap();
        let b = generate_gold(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let count = |s| a.iter().filter(|g| g.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Dev), count(Split::Test)), (80, 10, 10));
        assert_eq!(a[7].example_id, "ex000007");
        let other = generate_gold(&GenConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn gold_values_are_normalization_fixed_points() {
        let cfg = small(300);
        for g in generate_gold(&cfg).unwrap() {
            assert!(g.gold.iter().any(|(_, v)| v.is_some()));
            for spec in cfg.schema.fields() {
                if let Some(v) = g.gold.get(&spec.name) {
                    let n = normalize_str(spec.normalizer_id, v);
                    assert_eq!(n.value.as_deref(), Some(v));
                    assert!(!n.unparseable);
                }
            }
        }
    }

    #[test]
    fn queries_mention_every_gold_value() {
        let cfg = GenConfig {
            jitter_prob: 1.0,
            typo_prob: 1.0,
            ..small(200)
        };
        let golds = generate_gold(&cfg).unwrap();
        let mut rec = crate::schema::CanonicalRecord {
            example_id: String::new(),
            model_id: String::new(),
            fields: cfg.schema.empty_values(),
            strict_valid: true,
            trace: Vec::new(),
        };
        for g in &golds {
            rec.example_id = g.example_id.clone();
            for spec in cfg.schema.fields() {
                if let Some(v) = g.gold.get(&spec.name) {
                    let x = crate::verifier::featurize(&g.query, spec, Some(v), &rec, crate::verifier::VerifierMode::Full);
                    assert_eq!(x.0[0], 1.0, "{} / {}: {:?}", g.query, spec.name, v);
                    assert_eq!(x.0[4], 1.0, "cue for {} in {}", spec.name, g.query);
                }
            }
        }
    }

    #[test]
    fn wrong_pool_values_never_appear_in_queries() {
        let cfg = small(200);
        let golds = generate_gold(&cfg).unwrap();
        let rec = crate::schema::CanonicalRecord {
            example_id: String::new(),
            model_id: String::new(),
            fields: cfg.schema.empty_values(),
            strict_valid: true,
            trace: Vec::new(),
        };
        for g in &golds {
            for spec in cfg.schema.fields() {
                for v in &cfg.pools[&spec.name] {
                    if g.gold.get(&spec.name) == Some(v.as_str()) {
                        continue;
                    }
                    let x = crate::verifier::featurize(&g.query, spec, Some(v), &rec, crate::verifier::VerifierMode::Full);
                    assert_eq!(x.0[0], 0.0, "{:?} found in {:?}", v, g.query);
                }
            }
        }
    }

    fn only(cat: FailureCategory, o: f64, e: f64) -> ModelProfile {
        let schema = crate::schema::default_camera_schema();
        let mut p = ModelProfile::uniform("m", &schema, o, e, 0.0, &[(cat, 1.0)], QUIRKS[5]);
        p.taxonomy_mix.retain(|_, v| *v > 0.0);
        if cat == FailureCategory::NoFailure {
            p.taxonomy_mix = [(FailureCategory::NoFailure, 1.0)].into_iter().collect();
        }
        p
    }

    #[test]
    fn identity_profile_is_strict_and_exact() {
        let cfg = small(50);
        let golds = generate_gold(&cfg).unwrap();
        let p = only(FailureCategory::NoFailure, 0.0, 0.0);
        for g in &golds {
            let raw = simulate_output(g, &p, &cfg);
            assert!(validate_strict(&raw.text, &cfg.schema).is_ok(), "{}", raw.text);
            let rec = canonicalize(&raw, &cfg.schema, &CanonConfig::default());
            assert_eq!(rec.fields, g.gold);
        }
    }

    #[test]
    fn each_category_renders_as_itself() {
        let cfg = small(120);
        let golds = generate_gold(&cfg).unwrap();
        for cat in FailureCategory::ALL {
            for (o, e) in [(0.0, 0.0), (0.5, 0.5)] {
                let p = only(cat, o, e);
                for g in &golds {
                    let raw = simulate_output(g, &p, &cfg);
                    assert_eq!(
                        classify_text(&raw.text, &cfg.schema, &CanonConfig::default()),
                        cat,
                        "{}",
                        raw.text
                    );
                }
            }
        }
    }

    #[test]
    fn wrapped_formats_score_zero_strict_and_full_canonical() {
        let cfg = small(100);
        let golds = generate_gold(&cfg).unwrap();
        for cat in [
            FailureCategory::FencedJson,
            FailureCategory::ProseWrapper,
            FailureCategory::TrailingText,
            FailureCategory::ExtraKeys,
        ] {
            let p = only(cat, 0.0, 0.0);
            let raws: Vec<_> = golds.iter().map(|g| simulate_output(g, &p, &cfg)).collect();
            assert_eq!(css_score(&raws, &golds, &cfg.schema, &CanonConfig::default()), Ok(1.0), "{cat}");
            assert_eq!(ros_score(&raws, &golds, &cfg.schema), Ok(0.0), "{cat}");
        }
    }

    #[test]
    fn malformed_corruptions() {
        let t = r#"{"A":"x","B":null}"#;
        assert_eq!(drop_closing_brace(t), r#"{"A":"x","B":null"#);
        assert_eq!(single_quote_everything(t), "{'A':'x','B':null}");
        assert_eq!(trailing_comma_and_broken_quote(t), r#"{"A":"x,"B":null,}"#);
        assert_eq!(trailing_comma_and_broken_quote(r#"{"A":null}"#), r#"{"A":null"#);
    }

    #[test]
    fn streams_are_per_model() {
        let mut cfg = small(30);
        let (_, with_all) = generate_corpus(&cfg).unwrap();
        cfg.profiles.retain(|p| p.model_id != "phi3-like");
        let (_, fewer) = generate_corpus(&cfg).unwrap();
        let keep: Vec<_> = with_all.into_iter().filter(|r| r.model_id != "phi3-like").collect();
        assert_eq!(keep, fewer);
    }

    #[test]
    fn builtin_profile_shape() {
        let s = crate::schema::default_camera_schema();
        let ps = builtin_profiles(&s);
        assert_eq!(ps.len(), 6);
        let worst = ps
            .iter()
            .max_by(|a, b| a.failure_probability().total_cmp(&b.failure_probability()))
            .unwrap();
        assert_eq!(worst.model_id, "gemma2b-like");
        for p in ps.iter().chain(&builtin_few_shot_profiles(&s)).chain(&random_profiles(7, 20, &s)) {
            p.validate(&s).unwrap();
            let fail = p.failure_probability();
            for (c, share) in DEFAULT_FAILURE_SHARES {
                if p.model_id.starts_with("random") {
                    break;
                }
                assert!((p.taxonomy_mix[&c] - share * fail).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let ok = small(10);
        assert!(ok.validate().is_ok());
        let bad = GenConfig { n_examples: 0, ..ok.clone() };
        assert_eq!(bad.validate(), Err(ConfigError::NoExamples));
        let bad = GenConfig {
            splits: SplitFractions { train: 0.5, dev: 0.1, test: 0.1 },
            ..ok.clone()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::BadSplits(_))));
        let mut bad = ok.clone();
        bad.pools.insert("ISO".into(), vec!["ISO 400".into(), "800".into()]);
        assert!(matches!(bad.validate(), Err(ConfigError::NonCanonicalPoolValue { .. })));
        let mut bad = ok.clone();
        bad.profiles[0].taxonomy_mix.insert(FailureCategory::NoFailure, 0.99);
        assert!(matches!(bad.validate(), Err(ConfigError::BadMix { .. })));
        let mut bad = ok;
        let dup = bad.profiles[0].clone();
        bad.profiles.push(dup);
        assert!(matches!(bad.validate(), Err(ConfigError::DuplicateModel(_))));
    }
}

//! Keep / override / abstain selection across candidate records, threshold
//! tuning on the dev split, and decision diagnostics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::metrics::{field_match, AlignmentError, FieldConfusion, Match};
use crate::schema::{CanonicalRecord, FieldValues, GoldRecord, Schema, Split};
use crate::verifier::{ConfidenceSource, MissingScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub tau_keep: f64,
    pub tau_take: f64,
    pub delta_margin: f64,
    pub base_model: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("thresholds must lie in [0, 1] with tau_take >= tau_keep")]
    InvalidConfig,
    #[error("base model {0:?} has no candidate")]
    MissingBase(String),
    #[error("no candidates for example {0:?}")]
    EmptyCandidates(String),
    #[error("candidate from {model_id:?} is for {found:?}, expected {expected:?}")]
    Misaligned {
        model_id: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    MissingScore(#[from] MissingScore),
    #[error("dev set is empty")]
    EmptyDevSet,
    #[error("example {example_id:?} is from the {split} split; tuning uses dev only")]
    WrongSplit { example_id: String, split: Split },
    #[error("grid step {0} must be in (0, 1] and divide 1 evenly")]
    BadGridStep(f64),
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if unit(self.tau_keep) && unit(self.tau_take) && unit(self.delta_margin) && self.tau_take >= self.tau_keep {
            Ok(())
        } else {
            Err(PolicyError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Keep,
    Override { source_model: String },
    Abstain,
}

/// One field's outcome plus the confidences that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub example_id: String,
    pub field: String,
    #[serde(flatten)]
    pub action: Action,
    pub value: Option<String>,
    pub base_value: Option<String>,
    pub p_base: f64,
    /// Best non-base candidate, if any.
    pub alt_model: Option<String>,
    pub p_alt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Keep,
    Override,
    Abstain,
}

fn choose(p_base: f64, p_alt: Option<f64>, cfg: &PolicyConfig) -> Choice {
    if let Some(p) = p_alt {
        if p >= cfg.tau_take && p - p_base >= cfg.delta_margin && p > p_base {
            return Choice::Override;
        }
    }
    if p_base >= cfg.tau_keep {
        return Choice::Keep;
    }
    if p_alt.is_some_and(|p| p >= cfg.tau_keep) {
        return Choice::Override;
    }
    Choice::Abstain
}

/// Highest-confidence non-base candidate; ties go to the smallest model id.
fn best_alternative<'a, V>(
    candidates: &'a BTreeMap<String, (V, f64)>,
    base: &str,
) -> Option<(&'a str, &'a V, f64)> {
    let mut best: Option<(&str, &V, f64)> = None;
    for (m, (v, p)) in candidates {
        if m == base {
            continue;
        }
        if best.is_none_or(|(_, _, bp)| *p > bp) {
            best = Some((m, v, *p));
        }
    }
    best
}

/// Applies the four rules in order: confident override, keep, fallback
/// override, abstain.
pub fn decide_field(
    example_id: &str,
    field: &str,
    candidates: &BTreeMap<String, (Option<String>, f64)>,
    cfg: &PolicyConfig,
) -> Result<Decision, PolicyError> {
    let (base_value, p_base) = candidates
        .get(&cfg.base_model)
        .ok_or_else(|| PolicyError::MissingBase(cfg.base_model.clone()))?;
    let alt = best_alternative(candidates, &cfg.base_model);
    let choice = choose(*p_base, alt.map(|a| a.2), cfg);
    let (action, value) = match (choice, alt) {
        (Choice::Override, Some((m, v, _))) => (
            Action::Override {
                source_model: m.into(),
            },
            v.clone(),
        ),
        (Choice::Keep, _) => (Action::Keep, base_value.clone()),
        _ => (Action::Abstain, None),
    };
    Ok(Decision {
        example_id: example_id.into(),
        field: field.into(),
        action,
        value,
        base_value: base_value.clone(),
        p_base: *p_base,
        alt_model: alt.map(|a| a.0.into()),
        p_alt: alt.map(|a| a.2),
    })
}

fn check_candidates(example_id: &str, candidates: &BTreeMap<String, CanonicalRecord>, base: &str) -> Result<(), PolicyError> {
    if candidates.is_empty() {
        return Err(PolicyError::EmptyCandidates(example_id.into()));
    }
    if let Some((m, r)) = candidates.iter().find(|(_, r)| r.example_id != example_id) {
        return Err(PolicyError::Misaligned {
            model_id: m.clone(),
            expected: example_id.into(),
            found: r.example_id.clone(),
        });
    }
    if !candidates.contains_key(base) {
        return Err(PolicyError::MissingBase(base.into()));
    }
    Ok(())
}

/// Scores every candidate, decides each schema field, and assembles the
/// final record (always schema-complete) with its decision log.
pub fn safe_override<S: ConfidenceSource + ?Sized>(
    example_id: &str,
    query: &str,
    candidates: &BTreeMap<String, CanonicalRecord>,
    verifier: &S,
    schema: &Schema,
    cfg: &PolicyConfig,
) -> Result<(FieldValues, Vec<Decision>), PolicyError> {
    check_candidates(example_id, candidates, &cfg.base_model)?;
    let mut out = FieldValues::new();
    let mut log = Vec::with_capacity(schema.len());
    for spec in schema.fields() {
        let mut per_field = BTreeMap::new();
        for (m, r) in candidates {
            let p = verifier.confidence(query, r, spec)?;
            per_field.insert(m.clone(), (r.fields.get(&spec.name).map(String::from), p));
        }
        let d = decide_field(example_id, &spec.name, &per_field, cfg)?;
        out.set(&spec.name, d.value.clone());
        log.push(d);
    }
    Ok((out, log))
}

/// One dev or test example: gold plus each model's canonical candidate.
#[derive(Debug, Clone, Copy)]
pub struct EvalExample<'a> {
    pub gold: &'a GoldRecord,
    pub candidates: &'a BTreeMap<String, CanonicalRecord>,
}

/// Model with the highest micro-F1 of its candidates against gold; ties go
/// to the smallest model id. Examples lacking a model's candidate count as
/// all-null predictions for it.
pub fn best_model(examples: &[EvalExample<'_>], schema: &Schema) -> Option<String> {
    let mut per_model: BTreeMap<&str, FieldConfusion> = BTreeMap::new();
    for ex in examples {
        for m in ex.candidates.keys() {
            per_model.entry(m).or_default();
        }
    }
    for ex in examples {
        for (m, conf) in per_model.iter_mut() {
            let pred = ex.candidates.get(*m).map(|r| &r.fields);
            for name in schema.field_names() {
                conf.add(field_match(pred.and_then(|p| p.get(name)), ex.gold.gold.get(name)));
            }
        }
    }
    let mut best: Option<(&str, FieldConfusion)> = None;
    for (m, c) in per_model {
        if best.is_none_or(|(_, b)| cmp_f1(&c, &b) == Ordering::Greater) {
            best = Some((m, c));
        }
    }
    best.map(|(m, _)| m.into())
}

/// Compares two fractions given as (numerator, denominator); a zero
/// denominator counts as zero.
fn cmp_frac(a: (u64, u64), b: (u64, u64)) -> Ordering {
    let norm = |(n, d): (u64, u64)| if d == 0 { (0u128, 1u128) } else { (n as u128, d as u128) };
    let (an, ad) = norm(a);
    let (bn, bd) = norm(b);
    (an * bd).cmp(&(bn * ad))
}

/// Exact comparison of F1 = 2tp / (2tp + fp + fn).
fn cmp_f1(a: &FieldConfusion, b: &FieldConfusion) -> Ordering {
    let f = |c: &FieldConfusion| (2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    cmp_frac(f(a), f(b))
}

fn cmp_precision(a: &FieldConfusion, b: &FieldConfusion) -> Ordering {
    cmp_frac((a.tp, a.tp + a.fp), (b.tp, b.tp + b.fp))
}

/// Grid points `0, step, 2*step, ..., 1`.
pub fn grid_points(step: f64) -> Result<Vec<f64>, PolicyError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(PolicyError::BadGridStep(step));
    }
    let n = libm::round(1.0 / step);
    if libm::fabs(n * step - 1.0) > 1e-9 {
        return Err(PolicyError::BadGridStep(step));
    }
    let n = n as u32;
    Ok((0..=n).map(|k| k as f64 / n as f64).collect())
}

/// Precomputed per-(example, field) inputs for the grid search.
struct FieldCase {
    p_base: f64,
    p_alt: Option<f64>,
    keep: Match,
    over: Match,
    abstain: Match,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub config: PolicyConfig,
    pub dev_f1: f64,
    pub dev_precision: f64,
    pub configs_evaluated: usize,
}

/// Exhaustive grid search for the thresholds that maximize dev micro-F1.
///
/// Ties prefer higher precision, then higher `tau_keep`, then the smallest
/// `(tau_take, delta_margin)`. The base model is the best dev model by
/// canonical F1.
pub fn tune_thresholds<S: ConfidenceSource + ?Sized>(
    dev: &[EvalExample<'_>],
    verifier: &S,
    schema: &Schema,
    step: f64,
) -> Result<TuneResult, PolicyError> {
    if dev.is_empty() {
        return Err(PolicyError::EmptyDevSet);
    }
    if let Some(ex) = dev.iter().find(|e| e.gold.split != Split::Dev) {
        return Err(PolicyError::WrongSplit {
            example_id: ex.gold.example_id.clone(),
            split: ex.gold.split,
        });
    }
    let grid = grid_points(step)?;
    let base = best_model(dev, schema).ok_or(PolicyError::EmptyCandidates(dev[0].gold.example_id.clone()))?;

    let mut cases = Vec::with_capacity(dev.len() * schema.len());
    for ex in dev {
        let id = ex.gold.example_id.as_str();
        check_candidates(id, ex.candidates, &base)?;
        for spec in schema.fields() {
            let mut per_field = BTreeMap::new();
            for (m, r) in ex.candidates {
                let p = verifier.confidence(&ex.gold.query, r, spec)?;
                per_field.insert(m.clone(), (r.fields.get(&spec.name), p));
            }
            let gold = ex.gold.gold.get(&spec.name);
            let (base_value, p_base) = per_field[&base];
            let alt = best_alternative(&per_field, &base);
            cases.push(FieldCase {
                p_base,
                p_alt: alt.map(|a| a.2),
                keep: field_match(base_value, gold),
                over: field_match(alt.and_then(|a| *a.1), gold),
                abstain: field_match(None, gold),
            });
        }
    }

    let mut best: Option<(PolicyConfig, FieldConfusion)> = None;
    let mut evaluated = 0;
    for &tau_keep in &grid {
        for &tau_take in grid.iter().filter(|t| **t >= tau_keep) {
            for &delta_margin in &grid {
                let cfg = PolicyConfig {
                    tau_keep,
                    tau_take,
                    delta_margin,
                    base_model: base.clone(),
                };
                let mut conf = FieldConfusion::default();
                for c in &cases {
                    conf.add(match choose(c.p_base, c.p_alt, &cfg) {
                        Choice::Keep => c.keep,
                        Choice::Override => c.over,
                        Choice::Abstain => c.abstain,
                    });
                }
                evaluated += 1;
                let better = match &best {
                    None => true,
                    Some((bc, bconf)) => cmp_f1(&conf, bconf)
                        .then_with(|| cmp_precision(&conf, bconf))
                        .then_with(|| cfg.tau_keep.total_cmp(&bc.tau_keep))
                        .then_with(|| bc.tau_take.total_cmp(&cfg.tau_take))
                        .then_with(|| bc.delta_margin.total_cmp(&cfg.delta_margin))
                        == Ordering::Greater,
                };
                if better {
                    best = Some((cfg, conf));
                }
            }
        }
    }
    let (config, conf) = best.expect("grid is never empty");
    Ok(TuneResult {
        config,
        dev_f1: conf.f1(),
        dev_precision: conf.precision(),
        configs_evaluated: evaluated,
    })
}

/// A rate or precision whose denominator may be zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    NotApplicable,
}

impl Ratio {
    fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Ratio::NotApplicable
        } else {
            Ratio::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(v),
            Ratio::NotApplicable => None,
        }
    }
}

const NOT_APPLICABLE: &str = "n/a";

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Value(v) => s.serialize_f64(*v),
            Ratio::NotApplicable => s.serialize_str(NOT_APPLICABLE),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ratio::Value(v)),
            Raw::Str(s) if s == NOT_APPLICABLE => Ok(Ratio::NotApplicable),
            Raw::Str(s) => Err(serde::de::Error::custom(alloc::format!("unexpected ratio {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyDiagnostics {
    pub override_rate: Ratio,
    pub abstain_rate: Ratio,
    /// Overrides whose chosen value is correct.
    pub override_precision: Ratio,
    /// Abstentions where the base value would have been wrong.
    pub abstain_precision: Ratio,
}

pub fn diagnostics(decisions: &[Decision], golds: &[GoldRecord]) -> Result<PolicyDiagnostics, AlignmentError> {
    let by_id: BTreeMap<&str, &GoldRecord> = golds.iter().map(|g| (g.example_id.as_str(), g)).collect();
    let (mut overrides, mut over_ok, mut abstains, mut abstain_ok) = (0, 0, 0, 0);
    for d in decisions {
        let g = by_id
            .get(d.example_id.as_str())
            .ok_or_else(|| AlignmentError::MissingGold(d.example_id.clone()))?;
        let gold = g.gold.get(&d.field);
        match d.action {
            Action::Keep => {}
            Action::Override { .. } => {
                overrides += 1;
                if field_match(d.value.as_deref(), gold).is_correct() {
                    over_ok += 1;
                }
            }
            Action::Abstain => {
                abstains += 1;
                if !field_match(d.base_value.as_deref(), gold).is_correct() {
                    abstain_ok += 1;
                }
            }
        }
    }
    Ok(PolicyDiagnostics {
        override_rate: Ratio::of(overrides, decisions.len()),
        abstain_rate: Ratio::of(abstains, decisions.len()),
        override_precision: Ratio::of(over_ok, overrides),
        abstain_precision: Ratio::of(abstain_ok, abstains),
    })
}

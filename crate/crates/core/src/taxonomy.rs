//! Six-way classification of strict-parse failures and per-model reports.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canon::{extract_json_span, strip_fences, CanonConfig};
use crate::json::JsonValue;
use crate::schema::{check_object, validate_strict, RawOutput, Schema, StrictFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    FencedJson,
    ProseWrapper,
    TrailingText,
    MissingKeys,
    ExtraKeys,
    MalformedJson,
    NoFailure,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 7] = [
        FailureCategory::FencedJson,
        FailureCategory::ProseWrapper,
        FailureCategory::TrailingText,
        FailureCategory::MissingKeys,
        FailureCategory::ExtraKeys,
        FailureCategory::MalformedJson,
        FailureCategory::NoFailure,
    ];

    /// The six failure categories, without `NoFailure`.
    pub const FAILURES: [FailureCategory; 6] = [
        FailureCategory::FencedJson,
        FailureCategory::ProseWrapper,
        FailureCategory::TrailingText,
        FailureCategory::MissingKeys,
        FailureCategory::ExtraKeys,
        FailureCategory::MalformedJson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::FencedJson => "fenced_json",
            FailureCategory::ProseWrapper => "prose_wrapper",
            FailureCategory::TrailingText => "trailing_text",
            FailureCategory::MissingKeys => "missing_keys",
            FailureCategory::ExtraKeys => "extra_keys",
            FailureCategory::MalformedJson => "malformed_json",
            FailureCategory::NoFailure => "no_failure",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Assigns exactly one category, checking in order: fenced, prose before the
/// span, trailing text after it, missing keys, extra keys. Anything left
/// over (including spans that only parse after repair and wrong value types)
/// is malformed.
pub fn classify_failure(raw: &RawOutput, schema: &Schema, cfg: &CanonConfig) -> FailureCategory {
    classify_text(&raw.text, schema, cfg)
}

pub fn classify_text(text: &str, schema: &Schema, cfg: &CanonConfig) -> FailureCategory {
    if validate_strict(text, schema).is_ok() {
        return FailureCategory::NoFailure;
    }
    let (body, fenced) = strip_fences(text, cfg);
    if fenced && matches!(JsonValue::parse(body), Ok(JsonValue::Object(_))) {
        return FailureCategory::FencedJson;
    }
    let Some(span) = extract_json_span(body, schema) else {
        return FailureCategory::MalformedJson;
    };
    if !body[..span.start].trim().is_empty() {
        return FailureCategory::ProseWrapper;
    }
    let Ok(JsonValue::Object(obj)) = JsonValue::parse(span.text) else {
        return FailureCategory::MalformedJson;
    };
    if !body[span.end..].trim().is_empty() {
        return FailureCategory::TrailingText;
    }
    match check_object(&obj, schema) {
        Err(StrictFailure::MissingKeys) => FailureCategory::MissingKeys,
        Err(StrictFailure::ExtraKeys) => FailureCategory::ExtraKeys,
        _ => FailureCategory::MalformedJson,
    }
}

/// Per-model failure distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTaxonomy {
    /// Share of each failure category among this model's strict failures.
    Shares(BTreeMap<FailureCategory, f64>),
    /// The model had no strict failures at all.
    EmptyFailureSet,
}

/// Counts per model and category, `NoFailure` included. Associative under
/// [`TaxonomyCounts::merge`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyCounts(pub BTreeMap<String, BTreeMap<FailureCategory, usize>>);

impl TaxonomyCounts {
    pub fn add(&mut self, model_id: &str, category: FailureCategory) {
        *self
            .0
            .entry(model_id.into())
            .or_default()
            .entry(category)
            .or_default() += 1;
    }

    pub fn merge(mut self, other: TaxonomyCounts) -> TaxonomyCounts {
        for (model, counts) in other.0 {
            let slot = self.0.entry(model).or_default();
            for (cat, n) in counts {
                *slot.entry(cat).or_default() += n;
            }
        }
        self
    }

    pub fn shares(&self) -> BTreeMap<String, ModelTaxonomy> {
        self.0
            .iter()
            .map(|(model, counts)| {
                let failures: usize = counts
                    .iter()
                    .filter(|(c, _)| **c != FailureCategory::NoFailure)
                    .map(|(_, n)| n)
                    .sum();
                let entry = if failures == 0 {
                    ModelTaxonomy::EmptyFailureSet
                } else {
                    ModelTaxonomy::Shares(
                        FailureCategory::FAILURES
                            .iter()
                            .map(|c| {
                                let n = counts.get(c).copied().unwrap_or(0);
                                (*c, n as f64 / failures as f64)
                            })
                            .collect(),
                    )
                };
                (model.clone(), entry)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("taxonomy report needs a non-empty corpus")]
pub struct EmptyCorpus;

pub fn taxonomy_counts(corpus: &[RawOutput], schema: &Schema, cfg: &CanonConfig) -> TaxonomyCounts {
    let mut counts = TaxonomyCounts::default();
    for raw in corpus {
        counts.add(&raw.model_id, classify_failure(raw, schema, cfg));
    }
    counts
}

pub fn taxonomy_report(
    corpus: &[RawOutput],
    schema: &Schema,
    cfg: &CanonConfig,
) -> Result<BTreeMap<String, ModelTaxonomy>, EmptyCorpus> {
    if corpus.is_empty() {
        return Err(EmptyCorpus);
    }
    Ok(taxonomy_counts(corpus, schema, cfg).shares())
}

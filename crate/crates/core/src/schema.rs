//! Extraction schema, record types, and strict (raw-output) validation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::json::{JsonObject, JsonValue};
use crate::normalize::NormalizerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    FreeString,
    NumericWithUnit,
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub value_kind: ValueKind,
    pub normalizer_id: NormalizerId,
}

impl FieldSpec {
    pub fn new(name: &str, value_kind: ValueKind, normalizer_id: NormalizerId) -> Self {
        Self {
            name: name.into(),
            value_kind,
            normalizer_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema has no fields")]
    NoFields,
    #[error("field name is empty")]
    EmptyFieldName,
    #[error("field {0:?} appears more than once (case-insensitive)")]
    DuplicateField(String),
}

/// An ordered, validated list of fields. Construct with [`Schema::new`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDef")]
pub struct Schema {
    name: String,
    fields: Vec<FieldSpec>,
}

#[derive(Deserialize)]
struct SchemaDef {
    name: String,
    fields: Vec<FieldSpec>,
}

impl TryFrom<SchemaDef> for Schema {
    type Error = SchemaError;

    fn try_from(def: SchemaDef) -> Result<Self, Self::Error> {
        Schema::new(def.name, def.fields)
    }
}

impl Schema {
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Result<Self, SchemaError> {
        if fields.is_empty() {
            return Err(SchemaError::NoFields);
        }
        let mut seen = BTreeSet::new();
        for f in &fields {
            if f.name.trim().is_empty() {
                return Err(SchemaError::EmptyFieldName);
            }
            if !seen.insert(f.name.to_lowercase()) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            fields,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    /// A record with every field set to null.
    pub fn empty_values(&self) -> FieldValues {
        FieldValues(self.fields.iter().map(|f| (f.name.clone(), None)).collect())
    }
}

/// The six-field camera metadata schema.
pub fn default_camera_schema() -> Schema {
    use NormalizerId as N;
    use ValueKind as K;
    Schema::new(
        "camera_metadata",
        alloc::vec![
            FieldSpec::new("CAMERA", K::FreeString, N::FreeText),
            FieldSpec::new("LENS", K::FreeString, N::FreeText),
            FieldSpec::new("ISO", K::NumericWithUnit, N::Iso),
            FieldSpec::new("APERTURE", K::NumericWithUnit, N::Aperture),
            FieldSpec::new("SHUTTER_SPEED", K::Fraction, N::Shutter),
            FieldSpec::new("FOCAL_LENGTH", K::NumericWithUnit, N::FocalLength),
        ],
    )
    .expect("camera schema is valid")
}

/// Field name to normalized value (or null), kept in schema order.
///
/// Serializes as a JSON object preserving entry order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FieldValues(Vec<(String, Option<String>)>);

impl FieldValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == field)
            .and_then(|(_, v)| v.as_deref())
    }

    pub fn contains(&self, field: &str) -> bool {
        self.0.iter().any(|(k, _)| k == field)
    }

    /// Sets a field, appending it if absent.
    pub fn set(&mut self, field: &str, value: Option<String>) {
        match self.0.iter_mut().find(|(k, _)| k == field) {
            Some(slot) => slot.1 = value,
            None => self.0.push((field.into(), value)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<&str>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_deref()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when the keys are exactly the schema's field names.
    pub fn is_complete_for(&self, schema: &Schema) -> bool {
        self.0.len() == schema.len() && schema.field_names().all(|n| self.contains(n))
    }

    /// Reorders into schema order; unknown keys are dropped, missing ones are null.
    pub fn conformed_to(&self, schema: &Schema) -> FieldValues {
        FieldValues(
            schema
                .field_names()
                .map(|n| (n.to_string(), self.get(n).map(String::from)))
                .collect(),
        )
    }

    pub fn to_json(&self) -> JsonValue {
        let mut obj = JsonObject::new();
        for (k, v) in &self.0 {
            let v = match v {
                Some(s) => JsonValue::Str(s.clone()),
                None => JsonValue::Null,
            };
            // keys are unique by construction
            let _ = obj.insert(k.clone(), v);
        }
        JsonValue::Object(obj)
    }

    pub fn to_json_string(&self) -> String {
        self.to_json().to_json_string()
    }
}

impl FromIterator<(String, Option<String>)> for FieldValues {
    fn from_iter<I: IntoIterator<Item = (String, Option<String>)>>(iter: I) -> Self {
        let mut out = FieldValues::new();
        for (k, v) in iter {
            out.set(&k, v);
        }
        out
    }
}

impl Serialize for FieldValues {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FieldValues {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = FieldValues;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object of field name to string or null")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<FieldValues, A::Error> {
                let mut out = FieldValues::new();
                while let Some((k, v)) = access.next_entry::<String, Option<String>>()? {
                    if out.contains(&k) {
                        return Err(serde::de::Error::custom(format!("duplicate field {k:?}")));
                    }
                    out.0.push((k, v));
                }
                Ok(out)
            }
        }
        deserializer.deserialize_map(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    ZeroShot,
    FewShotK3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawOutput {
    pub example_id: String,
    pub model_id: String,
    pub prompt_variant: PromptVariant,
    pub text: String,
}

/// Gold labels for one example; values are already in normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub example_id: String,
    pub query: String,
    pub split: Split,
    pub gold: FieldValues,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub example_id: String,
    pub model_id: String,
    pub fields: FieldValues,
    /// Whether the untouched raw text passed strict validation.
    pub strict_valid: bool,
    pub trace: Vec<crate::canon::Transform>,
}

impl CanonicalRecord {
    pub fn repair_count(&self) -> usize {
        self.trace
            .iter()
            .filter(|t| matches!(t, crate::canon::Transform::Repaired(_)))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrictFailure {
    NotJson,
    MissingKeys,
    ExtraKeys,
    BadValueType,
}

/// Strict parse plus exact schema validation.
///
/// The text must be one JSON object with nothing but whitespace around it,
/// carrying exactly the schema's keys (case-sensitive) with string or null values.
pub fn validate_strict(text: &str, schema: &Schema) -> Result<JsonObject, StrictFailure> {
    let Ok(JsonValue::Object(obj)) = JsonValue::parse(text) else {
        return Err(StrictFailure::NotJson);
    };
    check_object(&obj, schema)?;
    Ok(obj)
}

/// Schema checks on an already-parsed object, in failure-reason order.
pub fn check_object(obj: &JsonObject, schema: &Schema) -> Result<(), StrictFailure> {
    if schema.field_names().any(|n| !obj.contains_key(n)) {
        return Err(StrictFailure::MissingKeys);
    }
    if obj.len() != schema.len() {
        return Err(StrictFailure::ExtraKeys);
    }
    if obj
        .iter()
        .any(|(_, v)| !matches!(v, JsonValue::Str(_) | JsonValue::Null))
    {
        return Err(StrictFailure::BadValueType);
    }
    Ok(())
}

//! Deterministic canonicalization of raw LLM text into schema-complete records.
//!
//! The pipeline runs in a fixed order: fence stripping, JSON span extraction,
//! near-JSON repair, key normalization, value normalization, schema
//! completion. Every transform that changes the input is appended to the
//! record's trace.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::json::{JsonObject, JsonValue};
use crate::normalize::normalize_value;
use crate::schema::{validate_strict, CanonicalRecord, FieldValues, RawOutput, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FencePattern {
    /// Triple backticks with an optional language tag.
    Markdown,
    /// `<tag> ... </tag>`
    XmlTags,
}

/// Repair rules, declared in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairRule {
    TrailingComma,
    SingleQuotes,
    UnquotedKeys,
    UnescapedChars,
}

impl RepairRule {
    pub const ORDER: [RepairRule; 4] = [
        RepairRule::TrailingComma,
        RepairRule::SingleQuotes,
        RepairRule::UnquotedKeys,
        RepairRule::UnescapedChars,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            RepairRule::TrailingComma => "repaired_trailing_comma",
            RepairRule::SingleQuotes => "repaired_single_quotes",
            RepairRule::UnquotedKeys => "repaired_unquoted_keys",
            RepairRule::UnescapedChars => "repaired_unescaped_chars",
        }
    }

    fn apply(self, text: &str) -> String {
        match self {
            RepairRule::TrailingComma => drop_trailing_commas(text),
            RepairRule::SingleQuotes => convert_single_quotes(text),
            RepairRule::UnquotedKeys => quote_bare_keys(text),
            RepairRule::UnescapedChars => escape_string_contents(text),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanStrategy {
    #[default]
    MostSchemaKeys,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonConfig {
    pub fence_patterns: Vec<FencePattern>,
    pub repair_rules_enabled: BTreeSet<RepairRule>,
    pub span_strategy: SpanStrategy,
}

impl Default for CanonConfig {
    fn default() -> Self {
        Self {
            fence_patterns: alloc::vec![FencePattern::Markdown, FencePattern::XmlTags],
            repair_rules_enabled: RepairRule::ORDER.into_iter().collect(),
            span_strategy: SpanStrategy::MostSchemaKeys,
        }
    }
}

/// One entry of a canonicalization trace. Serialized as a stable string tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Transform {
    FenceStripped,
    SpanExtracted,
    NoJsonSpan,
    Repaired(RepairRule),
    Unrepairable,
    KeyCaseFolded { from: String, to: String },
    KeyDropped(String),
    ValueNormalized(String),
    ValueUnparseable(String),
    SchemaCompleted(String),
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::FenceStripped => f.write_str("fence_stripped"),
            Transform::SpanExtracted => f.write_str("span_extracted"),
            Transform::NoJsonSpan => f.write_str("no_json_span"),
            Transform::Repaired(rule) => f.write_str(rule.tag()),
            Transform::Unrepairable => f.write_str("unrepairable"),
            Transform::KeyCaseFolded { from, to } => write!(f, "key_case_folded:{from}->{to}"),
            Transform::KeyDropped(k) => write!(f, "key_dropped:{k}"),
            Transform::ValueNormalized(k) => write!(f, "value_normalized:{k}"),
            Transform::ValueUnparseable(k) => write!(f, "value_unparseable:{k}"),
            Transform::SchemaCompleted(k) => write!(f, "schema_completed:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown trace tag {0:?}")]
pub struct UnknownTag(pub String);

impl FromStr for Transform {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let simple = match s {
            "fence_stripped" => Some(Transform::FenceStripped),
            "span_extracted" => Some(Transform::SpanExtracted),
            "no_json_span" => Some(Transform::NoJsonSpan),
            "unrepairable" => Some(Transform::Unrepairable),
            _ => RepairRule::ORDER
                .into_iter()
                .find(|r| r.tag() == s)
                .map(Transform::Repaired),
        };
        if let Some(t) = simple {
            return Ok(t);
        }
        let (head, arg) = s.split_once(':').ok_or_else(|| UnknownTag(s.into()))?;
        let arg = String::from(arg);
        match head {
            "key_case_folded" => {
                let (from, to) = arg.rsplit_once("->").ok_or_else(|| UnknownTag(s.into()))?;
                Ok(Transform::KeyCaseFolded {
                    from: from.into(),
                    to: to.into(),
                })
            }
            "key_dropped" => Ok(Transform::KeyDropped(arg)),
            "value_normalized" => Ok(Transform::ValueNormalized(arg)),
            "value_unparseable" => Ok(Transform::ValueUnparseable(arg)),
            "schema_completed" => Ok(Transform::SchemaCompleted(arg)),
            _ => Err(UnknownTag(s.into())),
        }
    }
}

impl Serialize for Transform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Removes a surrounding fence when the text opens with one and a matching
/// closer exists. Anything after the closer is discarded.
pub fn strip_fences<'a>(text: &'a str, cfg: &CanonConfig) -> (&'a str, bool) {
    let body = text.trim_start();
    for pattern in &cfg.fence_patterns {
        let inner = match pattern {
            FencePattern::Markdown => markdown_fence(body),
            FencePattern::XmlTags => xml_fence(body),
        };
        if let Some(inner) = inner {
            return (inner.trim(), true);
        }
    }
    (text, false)
}

fn markdown_fence(body: &str) -> Option<&str> {
    let rest = body.strip_prefix("```")?;
    let tag_len = rest
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '+'))
        .unwrap_or(rest.len());
    let rest = &rest[tag_len..];
    let close = rest.find("```")?;
    Some(&rest[..close])
}

fn xml_fence(body: &str) -> Option<&str> {
    let rest = body.strip_prefix('<')?;
    let end = rest.find('>')?;
    let tag = &rest[..end];
    let mut chars = tag.chars();
    let first_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if !first_ok || !chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return None;
    }
    let rest = &rest[end + 1..];
    let closer = format!("</{tag}>");
    let close = rest.find(&closer)?;
    Some(&rest[..close])
}

/// A balanced `{...}` region of some text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// All balanced object spans, found by bracket matching that skips over
/// double-quoted string literals and their escapes.
pub fn balanced_object_spans(text: &str) -> Vec<Span<'_>> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    for (start, _) in bytes.iter().enumerate().filter(|(_, &b)| b == b'{') {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (j, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => {
                    depth -= 1;
                    if depth == 0 {
                        if b == b'}' {
                            spans.push(Span {
                                text: &text[start..=j],
                                start,
                                end: j + 1,
                            });
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    spans
}

/// Number of distinct schema fields that appear as quoted strings in `span`,
/// matched after key folding.
pub fn schema_key_hits(span: &str, schema: &Schema) -> usize {
    let quoted = quoted_tokens(span);
    schema
        .field_names()
        .filter(|name| {
            let folded = fold_key(name);
            quoted.iter().any(|q| fold_key(q) == folded)
        })
        .count()
}

fn quoted_tokens(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(open) = rest.find(['"', '\'']) {
        let quote = rest.as_bytes()[open] as char;
        let after = &rest[open + 1..];
        match after.find(quote) {
            Some(close) => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Picks the balanced span with the most schema keys; ties go to the
/// longest span, then the earliest.
pub fn extract_json_span<'a>(text: &'a str, schema: &Schema) -> Option<Span<'a>> {
    balanced_object_spans(text)
        .into_iter()
        .map(|s| (schema_key_hits(s.text, schema), s))
        .max_by(|(ka, a), (kb, b)| {
            ka.cmp(kb)
                .then(a.text.len().cmp(&b.text.len()))
                .then(b.start.cmp(&a.start))
        })
        .map(|(_, s)| s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repaired {
    pub value: JsonValue,
    /// The text that finally parsed.
    pub text: String,
    /// Rules whose application changed the text, in order.
    pub applied: Vec<RepairRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("span could not be repaired into valid JSON")]
pub struct Unrepairable;

/// Parses `text`, applying the enabled repair rules cumulatively in their
/// fixed order and re-parsing after each until one parse succeeds.
pub fn repair_near_json(text: &str, cfg: &CanonConfig) -> Result<Repaired, Unrepairable> {
    if let Ok(value) = JsonValue::parse(text) {
        return Ok(Repaired {
            value,
            text: text.into(),
            applied: Vec::new(),
        });
    }
    let mut current = String::from(text);
    let mut applied = Vec::new();
    for rule in RepairRule::ORDER {
        if !cfg.repair_rules_enabled.contains(&rule) {
            continue;
        }
        let next = rule.apply(&current);
        if next == current {
            continue;
        }
        current = next;
        applied.push(rule);
        if let Ok(value) = JsonValue::parse(&current) {
            return Ok(Repaired {
                value,
                text: current,
                applied,
            });
        }
    }
    Err(Unrepairable)
}

/// Walks `text` and hands every byte outside string literals to `outside`,
/// copying literals verbatim. Single-quoted literals count as strings when
/// `single_quoted` is set and a closing quote exists.
fn rewrite_outside_strings(
    text: &str,
    single_quoted: bool,
    mut outside: impl FnMut(&str, usize, &mut String) -> usize,
) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let quoted = match bytes[i] {
            b'"' => Some(string_end(text, i, b'"')),
            b'\'' if single_quoted => {
                let end = string_end(text, i, b'\'');
                (bytes[end - 1] == b'\'' && end - i >= 2).then_some(end)
            }
            _ => None,
        };
        if let Some(end) = quoted {
            out.push_str(&text[i..end]);
            i = end;
        } else {
            i = outside(text, i, &mut out);
        }
    }
    out
}

/// Byte index just past the literal opened by `quote` at `open`, or the end
/// of the text when it never closes.
fn string_end(text: &str, open: usize, quote: u8) -> usize {
    let bytes = text.as_bytes();
    let mut j = open + 1;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' => j += 2,
            b if b == quote => return j + 1,
            _ => j += 1,
        }
    }
    bytes.len()
}

fn push_char_at(text: &str, i: usize, out: &mut String) -> usize {
    let c = text[i..].chars().next().expect("in bounds");
    out.push(c);
    i + c.len_utf8()
}

fn drop_trailing_commas(text: &str) -> String {
    rewrite_outside_strings(text, true, |t, i, out| {
        if t.as_bytes()[i] == b',' {
            let next = t[i + 1..].trim_start().as_bytes().first().copied();
            if matches!(next, Some(b'}') | Some(b']')) {
                return i + 1;
            }
        }
        push_char_at(t, i, out)
    })
}

fn convert_single_quotes(text: &str) -> String {
    rewrite_outside_strings(text, false, |t, i, out| {
        if t.as_bytes()[i] != b'\'' {
            return push_char_at(t, i, out);
        }
        let body_start = i + 1;
        let bytes = t.as_bytes();
        let mut j = body_start;
        while j < bytes.len() {
            match bytes[j] {
                b'\\' => j += 2,
                b'\'' => break,
                _ => j += 1,
            }
        }
        if j >= bytes.len() {
            out.push('\'');
            return i + 1;
        }
        out.push('"');
        let body = &t[body_start..j];
        let mut chars = body.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '\\' if chars.peek() == Some(&'\'') => {
                    chars.next();
                    out.push('\'');
                }
                '\\' => {
                    out.push('\\');
                    if let Some(n) = chars.next() {
                        out.push(n);
                    }
                }
                '"' => out.push_str("\\\""),
                c => out.push(c),
            }
        }
        out.push('"');
        j + 1
    })
}

fn quote_bare_keys(text: &str) -> String {
    let mut expect_key = false;
    rewrite_outside_strings(text, true, |t, i, out| {
        let b = t.as_bytes()[i];
        if b == b'{' || b == b',' {
            expect_key = true;
            out.push(b as char);
            return i + 1;
        }
        if b.is_ascii_whitespace() {
            out.push(b as char);
            return i + 1;
        }
        if expect_key && (b.is_ascii_alphabetic() || b == b'_' || b == b'$') {
            expect_key = false;
            let rest = &t[i..];
            let len = rest
                .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '$' | '-' | ' ')))
                .unwrap_or(rest.len());
            let ident = rest[..len].trim_end();
            if rest[len..].starts_with(':') && !ident.is_empty() {
                crate::json::write_string(out, ident);
                out.push_str(&rest[ident.len()..len]);
                return i + len;
            }
        }
        expect_key = false;
        push_char_at(t, i, out)
    })
}

/// Escapes raw control characters, invalid escapes, and inner double quotes
/// that do not look like a string terminator.
fn escape_string_contents(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let mut chars = text.char_indices().peekable();
    let mut in_string = false;
    while let Some((i, c)) = chars.next() {
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
            continue;
        }
        match c {
            '\\' => match chars.peek() {
                Some(&(_, n)) if matches!(n, '"' | '\\' | '/' | 'b' | 'f' | 'n' | 'r' | 't' | 'u') => {
                    out.push('\\');
                    out.push(n);
                    chars.next();
                }
                _ => out.push_str("\\\\"),
            },
            '"' => {
                let next = text[i + 1..].trim_start().chars().next();
                if matches!(next, None | Some(':' | ',' | '}' | ']')) {
                    in_string = false;
                    out.push('"');
                } else {
                    out.push_str("\\\"");
                }
            }
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Key folding used for schema matching: trim, lowercase, and map `-` and
/// spaces to `_`.
pub fn fold_key(key: &str) -> String {
    key.trim()
        .chars()
        .map(|c| match c {
            '-' | ' ' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

/// Renames keys to the schema spelling and drops everything unmatched.
/// When several source keys fold to one field, the first wins.
pub fn normalize_keys(obj: JsonObject, schema: &Schema) -> (JsonObject, Vec<Transform>) {
    let mut out = JsonObject::new();
    let mut trace = Vec::new();
    for (key, value) in obj {
        let folded = fold_key(&key);
        let target = schema.field_names().find(|n| fold_key(n) == folded);
        match target {
            Some(name) if !out.contains_key(name) => {
                if key != name {
                    trace.push(Transform::KeyCaseFolded {
                        from: key,
                        to: name.into(),
                    });
                }
                let _ = out.insert(name.into(), value);
            }
            _ => trace.push(Transform::KeyDropped(key)),
        }
    }
    (out, trace)
}

/// Output of canonicalizing one piece of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonical {
    pub fields: FieldValues,
    pub strict_valid: bool,
    pub trace: Vec<Transform>,
}

pub fn canonicalize_text(text: &str, schema: &Schema, cfg: &CanonConfig) -> Canonical {
    let strict_valid = validate_strict(text, schema).is_ok();
    let mut trace = Vec::new();
    let failed = |trace: Vec<Transform>| Canonical {
        fields: schema.empty_values(),
        strict_valid,
        trace,
    };

    let (body, fenced) = strip_fences(text, cfg);
    if fenced {
        trace.push(Transform::FenceStripped);
    }
    let Some(span) = extract_json_span(body, schema) else {
        trace.push(Transform::NoJsonSpan);
        return failed(trace);
    };
    if span.text != body.trim() {
        trace.push(Transform::SpanExtracted);
    }
    let Ok(repaired) = repair_near_json(span.text, cfg) else {
        trace.push(Transform::Unrepairable);
        return failed(trace);
    };
    trace.extend(repaired.applied.iter().copied().map(Transform::Repaired));
    let JsonValue::Object(obj) = repaired.value else {
        trace.push(Transform::Unrepairable);
        return failed(trace);
    };

    let (obj, key_trace) = normalize_keys(obj, schema);
    trace.extend(key_trace);

    let mut fields = FieldValues::new();
    let mut completed = Vec::new();
    for spec in schema.fields() {
        let value = match obj.get(&spec.name) {
            Some(v) => {
                let n = normalize_value(spec, v);
                if n.unparseable {
                    trace.push(Transform::ValueUnparseable(spec.name.clone()));
                } else if v.as_str() != n.value.as_deref() && !(v.is_null() && n.value.is_none()) {
                    trace.push(Transform::ValueNormalized(spec.name.clone()));
                }
                n.value
            }
            None => {
                completed.push(Transform::SchemaCompleted(spec.name.clone()));
                None
            }
        };
        fields.set(&spec.name, value);
    }
    trace.extend(completed);
    Canonical {
        fields,
        strict_valid,
        trace,
    }
}

/// Total: always returns a record carrying exactly the schema's fields.
pub fn canonicalize(raw: &RawOutput, schema: &Schema, cfg: &CanonConfig) -> CanonicalRecord {
    let c = canonicalize_text(&raw.text, schema, cfg);
    CanonicalRecord {
        example_id: raw.example_id.clone(),
        model_id: raw.model_id.clone(),
        fields: c.fields,
        strict_valid: c.strict_valid,
        trace: c.trace,
    }
}

impl fmt::Display for RepairRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_camera_schema;
    use alloc::string::ToString;
    use alloc::vec;

    fn cfg() -> CanonConfig {
        CanonConfig::default()
    }

    const SIX: &str = r#"{"CAMERA":"Canon EOS R5","LENS":"RF 24-70 L","ISO":"ISO 400","APERTURE":"f2.8","SHUTTER_SPEED":"1/500s","FOCAL_LENGTH":"50 mm"}"#;

    #[test]
    fn strip_markdown_fence() {
        assert_eq!(
            strip_fences("```json\n{\"a\":1}\n```", &cfg()),
            ("{\"a\":1}", true)
        );
        assert_eq!(strip_fences("{\"a\":1}", &cfg()), ("{\"a\":1}", false));
        assert_eq!(
            strip_fences("```\n{\"a\":1}\n``` trailing note", &cfg()),
            ("{\"a\":1}", true)
        );
        assert_eq!(strip_fences("  <json>{}</json>", &cfg()), ("{}", true));
        // opener without closer
        assert!(!strip_fences("```json\n{}", &cfg()).1);
        // fence not at the start
        assert!(!strip_fences("Here:\n```json\n{}\n```", &cfg()).1);
    }

    #[test]
    fn xml_fence_can_be_disabled() {
        let c = CanonConfig {
            fence_patterns: vec![FencePattern::Markdown],
            ..cfg()
        };
        assert!(!strip_fences("<json>{}</json>", &c).1);
    }

    #[test]
    fn trailing_prose_after_fence_reparses() {
        let (inner, fired) = strip_fences("```\n{\"a\":1}\n``` trailing note", &cfg());
        assert!(fired);
        assert!(JsonValue::parse(inner).is_ok());
    }

    #[test]
    fn span_from_prose() {
        let s = default_camera_schema();
        let span = extract_json_span(
            "Sure! Here is the result: {\"CAMERA\":\"X\"} hope that helps",
            &s,
        )
        .unwrap();
        assert_eq!(span.text, "{\"CAMERA\":\"X\"}");
        assert_eq!(extract_json_span("no braces here", &s), None);
    }

    #[test]
    fn span_prefers_schema_keys() {
        let s = default_camera_schema();
        let text = "{\"note\":1} then {\"CAMERA\":\"X\",\"ISO\":\"400\"}";
        let spans = balanced_object_spans(text);
        assert_eq!(spans.len(), 2);
        let hits: Vec<_> = spans.iter().map(|sp| schema_key_hits(sp.text, &s)).collect();
        assert_eq!(hits, [0, 2]);
        let span = extract_json_span(text, &s).unwrap();
        assert_eq!(span.text, "{\"CAMERA\":\"X\",\"ISO\":\"400\"}");
    }

    #[test]
    fn span_tie_breaks() {
        let s = default_camera_schema();
        // equal key counts: the longer span wins
        let text = "{\"ISO\":\"1\"} {\"ISO\":\"100\"}";
        assert_eq!(extract_json_span(text, &s).unwrap().text, "{\"ISO\":\"100\"}");
        // equal counts and lengths: the earlier span wins
        let text = "{\"ISO\":\"1\"} {\"ISO\":\"2\"}";
        assert_eq!(extract_json_span(text, &s).unwrap().start, 0);
        // nested: the enclosing object
        let text = "{\"CAMERA\":{\"ISO\":\"1\"}}";
        assert_eq!(extract_json_span(text, &s).unwrap().text, text);
    }

    #[test]
    fn span_ignores_braces_in_strings() {
        let s = default_camera_schema();
        let text = r#"{"CAMERA":"a}b","ISO":"\"{"}"#;
        assert_eq!(extract_json_span(text, &s).unwrap().text, text);
        assert_eq!(extract_json_span(r#"{"CAMERA":"X"#, &s), None);
    }

    #[test]
    fn repair_trailing_comma_and_single_quotes() {
        let r = repair_near_json("{'CAMERA': 'X',}", &cfg()).unwrap();
        assert_eq!(r.value, JsonValue::parse(r#"{"CAMERA":"X"}"#).unwrap());
        assert_eq!(r.applied, [RepairRule::TrailingComma, RepairRule::SingleQuotes]);
    }

    #[test]
    fn valid_input_needs_no_repair() {
        let r = repair_near_json("{\"a\": \"b\"}", &cfg()).unwrap();
        assert_eq!(r.value, JsonValue::parse(r#"{"a":"b"}"#).unwrap());
        assert!(r.applied.is_empty());
    }

    #[test]
    fn repair_unquoted_keys() {
        let r = repair_near_json("{CAMERA: \"X\"}", &cfg()).unwrap();
        assert_eq!(r.applied, [RepairRule::UnquotedKeys]);
        assert_eq!(r.text, "{\"CAMERA\": \"X\"}");
        let r = repair_near_json("{camera model: \"X\", iso: \"100\"}", &cfg()).unwrap();
        assert_eq!(r.text, "{\"camera model\": \"X\", \"iso\": \"100\"}");
    }

    #[test]
    fn repair_unescaped_chars() {
        let r = repair_near_json("{\"LENS\": \"say \"hi\" now\", \"ISO\": \"a\nb\"}", &cfg()).unwrap();
        assert_eq!(r.applied, [RepairRule::UnescapedChars]);
        let obj = r.value.as_object().unwrap();
        assert_eq!(obj.get("LENS").and_then(JsonValue::as_str), Some("say \"hi\" now"));
        assert_eq!(obj.get("ISO").and_then(JsonValue::as_str), Some("a\nb"));
        let r = repair_near_json(r#"{"a": "C:\path"}"#, &cfg()).unwrap();
        assert_eq!(r.value.as_object().unwrap().get("a").unwrap().as_str(), Some("C:\\path"));
    }

    #[test]
    fn repairs_leave_quoted_content_alone() {
        let r = repair_near_json(r#"{"a": "x, }", "b": 'it,}',}"#, &cfg()).unwrap();
        let obj = r.value.as_object().unwrap();
        assert_eq!(obj.get("a").unwrap().as_str(), Some("x, }"));
        assert_eq!(obj.get("b").unwrap().as_str(), Some("it,}"));
    }

    #[test]
    fn disabled_rules_are_skipped() {
        let c = CanonConfig {
            repair_rules_enabled: [RepairRule::TrailingComma].into_iter().collect(),
            ..cfg()
        };
        assert_eq!(repair_near_json("{'a': 1}", &c), Err(Unrepairable));
        assert!(repair_near_json("{\"a\": 1,}", &c).is_ok());
    }

    #[test]
    fn unrepairable_input() {
        assert_eq!(repair_near_json("{\"a\": [1, 2}", &cfg()), Err(Unrepairable));
    }

    #[test]
    fn key_normalization() {
        let s = default_camera_schema();
        let obj = |t: &str| JsonValue::parse(t).unwrap().as_object().unwrap().clone();
        let (o, tr) = normalize_keys(obj(r#"{"camera":"X"}"#), &s);
        assert_eq!(o.keys().collect::<Vec<_>>(), ["CAMERA"]);
        assert_eq!(
            tr,
            [Transform::KeyCaseFolded {
                from: "camera".into(),
                to: "CAMERA".into()
            }]
        );
        let (o, _) = normalize_keys(obj(r#"{"shutter-speed":"1/500"}"#), &s);
        assert_eq!(o.keys().collect::<Vec<_>>(), ["SHUTTER_SPEED"]);
        let (o, _) = normalize_keys(obj(r#"{" Focal Length ":"85mm"}"#), &s);
        assert_eq!(o.keys().collect::<Vec<_>>(), ["FOCAL_LENGTH"]);
        let (o, tr) = normalize_keys(obj(r#"{"CAMERA":"X","mood":"happy"}"#), &s);
        assert_eq!(o.keys().collect::<Vec<_>>(), ["CAMERA"]);
        assert_eq!(tr, [Transform::KeyDropped("mood".into())]);
        let (o, tr) = normalize_keys(obj(r#"{"iso":"100","ISO":"200"}"#), &s);
        assert_eq!(o.get("ISO").unwrap().as_str(), Some("100"));
        assert_eq!(tr.last(), Some(&Transform::KeyDropped("ISO".into())));
    }

    #[test]
    fn canonicalize_fenced() {
        let s = default_camera_schema();
        let c = canonicalize_text(&format!("```json\n{SIX}\n```"), &s, &cfg());
        assert!(!c.strict_valid);
        assert_eq!(c.trace[0], Transform::FenceStripped);
        assert!(c.fields.iter().all(|(_, v)| v.is_some()));
        assert_eq!(c.fields.get("ISO"), Some("400"));
        assert_eq!(c.fields.get("APERTURE"), Some("f/2.8"));
        assert_eq!(c.fields.get("SHUTTER_SPEED"), Some("1/500"));
        assert_eq!(c.fields.get("FOCAL_LENGTH"), Some("50mm"));
    }

    #[test]
    fn canonicalize_strict() {
        let s = default_camera_schema();
        let c = canonicalize_text(SIX, &s, &cfg());
        assert!(c.strict_valid);
        assert!(c
            .trace
            .iter()
            .all(|t| matches!(t, Transform::ValueNormalized(_))));
        assert_eq!(c.fields.get("CAMERA"), Some("Canon EOS R5"));
    }

    #[test]
    fn canonicalize_total_failure() {
        let s = default_camera_schema();
        let c = canonicalize_text("I could not find any metadata.", &s, &cfg());
        assert_eq!(c.fields, s.empty_values());
        assert_eq!(c.trace, [Transform::NoJsonSpan]);
        let c = canonicalize_text("", &s, &cfg());
        assert_eq!(c.fields, s.empty_values());
    }

    #[test]
    fn canonicalize_completes_schema() {
        let s = default_camera_schema();
        let c = canonicalize_text("Result: {'camera': 'Sony A7 IV', 'iso': 800,}", &s, &cfg());
        assert_eq!(c.fields.get("CAMERA"), Some("Sony A7 IV"));
        assert_eq!(c.fields.get("ISO"), Some("800"));
        assert!(c.fields.is_complete_for(&s));
        let tags: Vec<_> = c.trace.iter().map(ToString::to_string).collect();
        assert_eq!(
            tags,
            [
                "span_extracted",
                "repaired_trailing_comma",
                "repaired_single_quotes",
                "key_case_folded:camera->CAMERA",
                "key_case_folded:iso->ISO",
                "value_normalized:ISO",
                "schema_completed:LENS",
                "schema_completed:APERTURE",
                "schema_completed:SHUTTER_SPEED",
                "schema_completed:FOCAL_LENGTH",
            ]
        );
    }

    #[test]
    fn nested_values_kept_raw() {
        let s = default_camera_schema();
        let c = canonicalize_text(r#"{"LENS":["a","b"],"ISO":{"v":1}}"#, &s, &cfg());
        assert_eq!(c.fields.get("LENS"), Some(r#"["a","b"]"#));
        assert_eq!(c.fields.get("ISO"), Some(r#"{"v":1}"#));
        assert!(c.trace.contains(&Transform::ValueUnparseable("LENS".into())));
    }

    #[test]
    fn trace_tags_roundtrip() {
        let tags = [
            Transform::FenceStripped,
            Transform::SpanExtracted,
            Transform::NoJsonSpan,
            Transform::Repaired(RepairRule::UnquotedKeys),
            Transform::Unrepairable,
            Transform::KeyCaseFolded {
                from: "a->b".into(),
                to: "C".into(),
            },
            Transform::KeyDropped("x:y".into()),
            Transform::ValueNormalized("ISO".into()),
            Transform::ValueUnparseable("ISO".into()),
            Transform::SchemaCompleted("LENS".into()),
        ];
        for t in &tags {
            assert_eq!(t.to_string().parse::<Transform>().as_ref(), Ok(t));
        }
        assert!("bogus".parse::<Transform>().is_err());
    }
}

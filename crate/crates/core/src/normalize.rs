//! Per-field value normalizers.
//!
//! Every normalizer is idempotent: feeding a normalized value back in yields
//! the same value. Unit-bearing values that cannot be parsed are kept as
//! trimmed raw text and flagged, never dropped to null.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::json::JsonValue;
use crate::schema::FieldSpec;

/// Registered value normalizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerId {
    FreeText,
    Iso,
    Aperture,
    Shutter,
    FocalLength,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub value: Option<String>,
    /// The normalizer could not parse the value; `value` holds the trimmed raw text.
    pub unparseable: bool,
}

impl Normalized {
    fn parsed(value: String) -> Self {
        Self {
            value: Some(value),
            unparseable: false,
        }
    }

    fn null() -> Self {
        Self {
            value: None,
            unparseable: false,
        }
    }

    fn raw(value: &str) -> Self {
        Self {
            value: Some(value.into()),
            unparseable: true,
        }
    }
}

const NULL_TOKENS: [&str; 3] = ["null", "n/a", "none"];

pub fn is_null_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || NULL_TOKENS.iter().any(|n| t.eq_ignore_ascii_case(n))
}

/// Normalizes a JSON value for a field. Numbers are stringified first;
/// arrays and objects are kept as their compact JSON text and flagged.
pub fn normalize_value(field: &FieldSpec, v: &JsonValue) -> Normalized {
    match v {
        JsonValue::Null => Normalized::null(),
        JsonValue::Str(s) => normalize_str(field.normalizer_id, s),
        JsonValue::Number(n) => normalize_str(field.normalizer_id, n),
        JsonValue::Bool(b) => normalize_str(field.normalizer_id, if *b { "true" } else { "false" }),
        JsonValue::Array(_) | JsonValue::Object(_) => Normalized::raw(&v.to_json_string()),
    }
}

pub fn normalize_str(id: NormalizerId, s: &str) -> Normalized {
    if is_null_token(s) {
        return Normalized::null();
    }
    let t = s.trim();
    let parsed = match id {
        NormalizerId::FreeText => Some(collapse_whitespace(t)),
        NormalizerId::Iso => iso(t),
        NormalizerId::Aperture => aperture(t),
        NormalizerId::Shutter => shutter(t),
        NormalizerId::FocalLength => focal(t),
    };
    match parsed {
        Some(v) => Normalized::parsed(v),
        None => Normalized::raw(t),
    }
}

/// True when `s` is already in the normalizer's canonical parsed form.
pub fn is_canonical(id: NormalizerId, s: &str) -> bool {
    let n = normalize_str(id, s);
    !n.unparseable && n.value.as_deref() == Some(s)
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical decimal text: no leading zeros in the integer part (except a
/// lone zero), no trailing fractional zeros, no trailing dot.
fn decimal(s: &str) -> Option<String> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let int_ok = int.bytes().all(|b| b.is_ascii_digit());
    let frac_ok = frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()));
    if !int_ok || !frac_ok || (int.is_empty() && frac.is_none()) {
        return None;
    }
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac = frac.map(|f| f.trim_end_matches('0')).unwrap_or("");
    if frac.is_empty() {
        Some(int.to_string())
    } else {
        Some(alloc::format!("{int}.{frac}"))
    }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn strip_suffix_ci<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    let cut = s.len().checked_sub(suffix.len())?;
    let tail = s.get(cut..)?;
    tail.eq_ignore_ascii_case(suffix).then(|| &s[..cut])
}

fn iso(s: &str) -> Option<String> {
    let rest = strip_prefix_ci(s, "iso").unwrap_or(s);
    let rest = rest.trim_start().trim_start_matches([':', '-']).trim();
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = rest.trim_start_matches('0');
    (!digits.is_empty()).then(|| digits.to_string())
}

fn aperture(s: &str) -> Option<String> {
    let rest = s
        .strip_prefix('f')
        .or_else(|| s.strip_prefix('F'))
        .unwrap_or(s)
        .trim_start();
    let rest = rest.strip_prefix('/').unwrap_or(rest).trim_start();
    let n = decimal(rest)?;
    (n != "0").then(|| alloc::format!("f/{n}"))
}

fn shutter(s: &str) -> Option<String> {
    let mut rest = s;
    for suffix in ["seconds", "second", "secs", "sec", "s", "\""] {
        if let Some(r) = strip_suffix_ci(rest, suffix) {
            rest = r;
            break;
        }
    }
    let rest = rest.trim();
    if let Some((num, den)) = rest.split_once('/') {
        let num = num.trim();
        let den = den.trim();
        let ok = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !ok(num) || !ok(den) {
            return None;
        }
        let num = decimal(num)?;
        let den = decimal(den)?;
        if den == "0" {
            return None;
        }
        return Some(alloc::format!("{num}/{den}"));
    }
    let n = decimal(rest)?;
    (n != "0").then_some(n)
}

fn focal(s: &str) -> Option<String> {
    let rest = strip_suffix_ci(s, "mm").unwrap_or(s).trim();
    if let Some((lo, hi)) = rest.split_once('-') {
        let lo = decimal(lo.trim())?;
        let hi = decimal(hi.trim())?;
        return Some(alloc::format!("{lo}-{hi}mm"));
    }
    let n = decimal(rest)?;
    (n != "0").then(|| alloc::format!("{n}mm"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_camera_schema;

    fn norm(field: &str, s: &str) -> Option<String> {
        let schema = default_camera_schema();
        normalize_value(schema.field(field).unwrap(), &JsonValue::Str(s.into())).value
    }

    #[test]
    fn aperture_forms() {
        for s in ["f/2.8", "f2.8", "F2.8", "2.8", " F/2.80 ", "f / 2.8"] {
            assert_eq!(norm("APERTURE", s).as_deref(), Some("f/2.8"), "{s}");
        }
        assert_eq!(norm("APERTURE", "f/2.0").as_deref(), Some("f/2"));
        assert_eq!(norm("APERTURE", "f/11").as_deref(), Some("f/11"));
    }

    #[test]
    fn iso_forms() {
        for s in ["ISO 400", "ISO400", "iso 400", "400", "ISO: 400", "ISO-400"] {
            assert_eq!(norm("ISO", s).as_deref(), Some("400"), "{s}");
        }
    }

    #[test]
    fn shutter_forms() {
        for s in ["1/500s", "1/500 s", "1/500", "1/500 sec"] {
            assert_eq!(norm("SHUTTER_SPEED", s).as_deref(), Some("1/500"), "{s}");
        }
        assert_eq!(norm("SHUTTER_SPEED", "2s").as_deref(), Some("2"));
        assert_eq!(norm("SHUTTER_SPEED", "0.5 seconds").as_deref(), Some("0.5"));
    }

    #[test]
    fn focal_forms() {
        for s in ["85mm", "85 mm", "85", "85MM"] {
            assert_eq!(norm("FOCAL_LENGTH", s).as_deref(), Some("85mm"), "{s}");
        }
        assert_eq!(norm("FOCAL_LENGTH", "24-70mm").as_deref(), Some("24-70mm"));
    }

    #[test]
    fn free_text_and_nulls() {
        assert_eq!(
            norm("CAMERA", "  Canon   EOS\tR5 ").as_deref(),
            Some("Canon EOS R5")
        );
        for s in ["  null ", "", "N/A", "None", "NULL"] {
            assert_eq!(norm("LENS", s), None, "{s:?}");
            assert_eq!(norm("ISO", s), None, "{s:?}");
        }
    }

    #[test]
    fn unparseable_unit_values_are_kept_raw() {
        let schema = default_camera_schema();
        let n = normalize_value(schema.field("ISO").unwrap(), &JsonValue::Str(" auto ".into()));
        assert_eq!(n.value.as_deref(), Some("auto"));
        assert!(n.unparseable);
        let arr = JsonValue::parse("[1,2]").unwrap();
        let n = normalize_value(schema.field("ISO").unwrap(), &arr);
        assert_eq!(n.value.as_deref(), Some("[1,2]"));
        assert!(n.unparseable);
    }

    #[test]
    fn numbers_are_stringified() {
        let schema = default_camera_schema();
        let n = normalize_value(schema.field("ISO").unwrap(), &JsonValue::Number("400".into()));
        assert_eq!(n.value.as_deref(), Some("400"));
        let n = normalize_value(
            schema.field("APERTURE").unwrap(),
            &JsonValue::Number("2.8".into()),
        );
        assert_eq!(n.value.as_deref(), Some("f/2.8"));
    }

    #[test]
    fn canonical_forms_are_fixed_points() {
        assert!(is_canonical(NormalizerId::Aperture, "f/2.8"));
        assert!(!is_canonical(NormalizerId::Aperture, "f2.8"));
        assert!(is_canonical(NormalizerId::Shutter, "1/500"));
        assert!(is_canonical(NormalizerId::FocalLength, "85mm"));
        assert!(!is_canonical(NormalizerId::Iso, "auto"));
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_idempotent(s in "[ fFisoISOmM0-9./s-]{0,12}", id in 0usize..5) {
            let id = [
                NormalizerId::FreeText,
                NormalizerId::Iso,
                NormalizerId::Aperture,
                NormalizerId::Shutter,
                NormalizerId::FocalLength,
            ][id];
            let once = normalize_str(id, &s);
            if let Some(v) = &once.value {
                let twice = normalize_str(id, v);
                proptest::prop_assert_eq!(&twice.value, &once.value);
                proptest::prop_assert_eq!(twice.unparseable, once.unparseable);
            }
        }
    }
}

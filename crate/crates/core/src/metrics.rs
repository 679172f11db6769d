//! Micro-F1 scoring under the strict (ROS) and canonicalized (CSS) protocols,
//! cross-model gaps, and the per-field oracle.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::{canonicalize, CanonConfig};
use crate::normalize::normalize_value;
use crate::schema::{validate_strict, FieldValues, GoldRecord, RawOutput, Schema};

/// Outcome of comparing one predicted field against gold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Match {
    Tp,
    /// A wrong non-null value: one false positive and one false negative.
    FpFn,
    Fp,
    Fn,
    /// Both null; excluded from micro-F1.
    Tn,
}

impl Match {
    /// TP and TN are the "correct" outcomes.
    pub fn is_correct(self) -> bool {
        matches!(self, Match::Tp | Match::Tn)
    }
}

/// Values are compared exactly; both sides must already be normalized.
pub fn field_match(pred: Option<&str>, gold: Option<&str>) -> Match {
    match (pred, gold) {
        (Some(p), Some(g)) if p == g => Match::Tp,
        (Some(_), Some(_)) => Match::FpFn,
        (None, Some(_)) => Match::Fn,
        (Some(_), None) => Match::Fp,
        (None, None) => Match::Tn,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl FieldConfusion {
    pub fn add(&mut self, m: Match) {
        match m {
            Match::Tp => self.tp += 1,
            Match::FpFn => {
                self.fp += 1;
                self.fn_ += 1;
            }
            Match::Fp => self.fp += 1,
            Match::Fn => self.fn_ += 1,
            Match::Tn => {}
        }
    }

    pub fn merge(self, other: FieldConfusion) -> FieldConfusion {
        FieldConfusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let p = self.precision();
        let r = self.recall();
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignmentError {
    #[error("prediction for {0:?} has no gold record")]
    MissingGold(String),
    #[error("gold record {0:?} has no prediction")]
    MissingPrediction(String),
    #[error("more than one prediction for {0:?}")]
    DuplicatePrediction(String),
}

/// Pools the confusion counts of predictions against gold over every schema field.
///
/// `preds` pairs an example id with its predicted fields; every gold record
/// must be matched by exactly one prediction.
pub fn confusion<'a, I>(
    preds: I,
    golds: &[GoldRecord],
    schema: &Schema,
) -> Result<FieldConfusion, AlignmentError>
where
    I: IntoIterator<Item = (&'a str, &'a FieldValues)>,
{
    let by_id: BTreeMap<&str, &GoldRecord> =
        golds.iter().map(|g| (g.example_id.as_str(), g)).collect();
    let mut seen = BTreeMap::new();
    let mut total = FieldConfusion::default();
    for (id, fields) in preds {
        let gold = by_id
            .get(id)
            .ok_or_else(|| AlignmentError::MissingGold(id.into()))?;
        if seen.insert(id, ()).is_some() {
            return Err(AlignmentError::DuplicatePrediction(id.into()));
        }
        for name in schema.field_names() {
            total.add(field_match(fields.get(name), gold.gold.get(name)));
        }
    }
    if let Some(g) = golds.iter().find(|g| !seen.contains_key(g.example_id.as_str())) {
        return Err(AlignmentError::MissingPrediction(g.example_id.clone()));
    }
    Ok(total)
}

pub fn micro_f1<'a, I>(preds: I, golds: &[GoldRecord], schema: &Schema) -> Result<f64, AlignmentError>
where
    I: IntoIterator<Item = (&'a str, &'a FieldValues)>,
{
    confusion(preds, golds, schema).map(|c| c.f1())
}

/// Prediction under the strict protocol: the normalized parsed values when
/// the text strict-validates, otherwise every field null.
pub fn strict_prediction(text: &str, schema: &Schema) -> FieldValues {
    match validate_strict(text, schema) {
        Ok(obj) => schema
            .fields()
            .iter()
            .map(|spec| {
                let v = obj.get(&spec.name).and_then(|v| normalize_value(spec, v).value);
                (spec.name.clone(), v)
            })
            .collect(),
        Err(_) => schema.empty_values(),
    }
}

pub fn ros_confusion(
    raws: &[RawOutput],
    golds: &[GoldRecord],
    schema: &Schema,
) -> Result<FieldConfusion, AlignmentError> {
    let preds: Vec<FieldValues> = raws.iter().map(|r| strict_prediction(&r.text, schema)).collect();
    confusion(
        raws.iter().map(|r| r.example_id.as_str()).zip(preds.iter()),
        golds,
        schema,
    )
}

pub fn css_confusion(
    raws: &[RawOutput],
    golds: &[GoldRecord],
    schema: &Schema,
    cfg: &CanonConfig,
) -> Result<FieldConfusion, AlignmentError> {
    let preds: Vec<FieldValues> = raws
        .iter()
        .map(|r| canonicalize(r, schema, cfg).fields)
        .collect();
    confusion(
        raws.iter().map(|r| r.example_id.as_str()).zip(preds.iter()),
        golds,
        schema,
    )
}

/// Raw Output Score: micro-F1 under strict parsing and exact schema validation.
pub fn ros_score(raws: &[RawOutput], golds: &[GoldRecord], schema: &Schema) -> Result<f64, AlignmentError> {
    ros_confusion(raws, golds, schema).map(|c| c.f1())
}

/// Canonical Semantic Score: micro-F1 after canonicalization.
pub fn css_score(
    raws: &[RawOutput],
    golds: &[GoldRecord],
    schema: &Schema,
    cfg: &CanonConfig,
) -> Result<f64, AlignmentError> {
    css_confusion(raws, golds, schema, cfg).map(|c| c.f1())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cross-model gap needs at least two models, got {0}")]
pub struct TooFewModels(pub usize);

/// Max minus min score across models.
pub fn cross_model_gap(scores: &BTreeMap<String, f64>) -> Result<f64, TooFewModels> {
    if scores.len() < 2 {
        return Err(TooFewModels(scores.len()));
    }
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.values().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Per-field selection with gold access: a candidate value equal to gold when
/// one exists, otherwise null.
///
/// Null is chosen whenever no candidate is correct because a wrong value can
/// only add a false positive; this makes the result an upper bound on any
/// policy that picks among the candidates or abstains.
pub fn oracle_select<'a, I>(candidates: I, gold: &GoldRecord, schema: &Schema) -> FieldValues
where
    I: IntoIterator<Item = &'a FieldValues> + Clone,
{
    schema
        .field_names()
        .map(|name| {
            let want = gold.gold.get(name);
            let hit = want.filter(|w| candidates.clone().into_iter().any(|c| c.get(name) == Some(*w)));
            (name.into(), hit.map(String::from))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub ros: f64,
    pub css: f64,
    pub delta: f64,
}

impl ModelScores {
    pub fn new(ros: f64, css: f64) -> Self {
        Self {
            ros,
            css,
            delta: css - ros,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub best_single_ros: f64,
    pub best_single_css: f64,
    pub safe_override_css: f64,
    pub oracle_css: f64,
}

impl Cascade {
    /// `best ROS <= best CSS <= safe-override <= oracle`.
    pub fn is_ordered(&self) -> bool {
        self.best_single_ros <= self.best_single_css
            && self.best_single_css <= self.safe_override_css
            && self.safe_override_css <= self.oracle_css
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub models: BTreeMap<String, ModelScores>,
    pub cross_model_gap_ros: f64,
    pub cross_model_gap_css: f64,
    pub cascade: Cascade,
}

impl MetricsReport {
    /// Builds the report from per-model scores and the policy/oracle results.
    pub fn new(
        models: BTreeMap<String, ModelScores>,
        safe_override_css: f64,
        oracle_css: f64,
    ) -> Result<Self, TooFewModels> {
        let ros: BTreeMap<String, f64> = models.iter().map(|(m, s)| (m.clone(), s.ros)).collect();
        let css: BTreeMap<String, f64> = models.iter().map(|(m, s)| (m.clone(), s.css)).collect();
        let best = |m: &BTreeMap<String, f64>| m.values().copied().fold(0.0, f64::max);
        Ok(Self {
            cross_model_gap_ros: cross_model_gap(&ros)?,
            cross_model_gap_css: cross_model_gap(&css)?,
            cascade: Cascade {
                best_single_ros: best(&ros),
                best_single_css: best(&css),
                safe_override_css,
                oracle_css,
            },
            models,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{default_camera_schema, PromptVariant, Split};
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn values(pairs: &[(&str, Option<&str>)]) -> FieldValues {
        let schema = default_camera_schema();
        let mut v = schema.empty_values();
        for (k, val) in pairs {
            v.set(k, val.map(String::from));
        }
        v
    }

    fn gold(id: &str, pairs: &[(&str, Option<&str>)]) -> GoldRecord {
        GoldRecord {
            example_id: id.into(),
            query: String::new(),
            split: Split::Test,
            gold: values(pairs),
        }
    }

    #[test]
    fn match_rules() {
        assert_eq!(field_match(Some("400"), Some("400")), Match::Tp);
        assert_eq!(field_match(Some("800"), Some("400")), Match::FpFn);
        assert_eq!(field_match(None, None), Match::Tn);
        assert_eq!(field_match(None, Some("x")), Match::Fn);
        assert_eq!(field_match(Some("x"), None), Match::Fp);
    }

    #[test]
    fn hand_computed_f1() {
        let s = default_camera_schema();
        let g = gold(
            "e1",
            &[
                ("CAMERA", Some("Canon EOS R5")),
                ("LENS", Some("RF 50")),
                ("ISO", Some("400")),
                ("APERTURE", Some("f/2.8")),
            ],
        );
        let p = values(&[
            ("CAMERA", Some("Canon EOS R5")),
            ("LENS", Some("RF 50")),
            ("ISO", Some("800")),
        ]);
        let c = confusion([("e1", &p)], &[g], &s).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 2));
        assert!((c.f1() - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let s = default_camera_schema();
        let g = gold("a", &[("ISO", Some("100")), ("LENS", Some("x"))]);
        assert_eq!(micro_f1([("a", &g.gold)], core::slice::from_ref(&g), &s), Ok(1.0));
        let empty = s.empty_values();
        assert_eq!(micro_f1([("a", &empty)], &[g], &s), Ok(0.0));
    }

    #[test]
    fn alignment_errors() {
        let s = default_camera_schema();
        let g = vec![gold("a", &[]), gold("b", &[])];
        let v = s.empty_values();
        assert_eq!(
            micro_f1([("a", &v)], &g, &s),
            Err(AlignmentError::MissingPrediction("b".into()))
        );
        assert_eq!(
            micro_f1([("a", &v), ("c", &v)], &g, &s),
            Err(AlignmentError::MissingGold("c".into()))
        );
        assert_eq!(
            micro_f1([("a", &v), ("a", &v)], &g, &s),
            Err(AlignmentError::DuplicatePrediction("a".into()))
        );
    }

    fn raw(id: &str, text: String) -> RawOutput {
        RawOutput {
            example_id: id.into(),
            model_id: "m".into(),
            prompt_variant: PromptVariant::ZeroShot,
            text,
        }
    }

    #[test]
    fn fenced_outputs_get_no_strict_credit() {
        let s = default_camera_schema();
        let golds: Vec<_> = (0..4)
            .map(|i| gold(&format!("e{i}"), &[("ISO", Some("400")), ("CAMERA", Some("Nikon Z6"))]))
            .collect();
        let raws: Vec<_> = golds
            .iter()
            .map(|g| raw(&g.example_id, format!("```json\n{}\n```", g.gold.to_json_string())))
            .collect();
        let c = ros_confusion(&raws, &golds, &s).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 8));
        assert_eq!(css_score(&raws, &golds, &s, &CanonConfig::default()), Ok(1.0));

        let bare: Vec<_> = golds
            .iter()
            .map(|g| raw(&g.example_id, g.gold.to_json_string()))
            .collect();
        assert_eq!(ros_score(&bare, &golds, &s), Ok(1.0));
    }

    #[test]
    fn prose_corpus_css_equals_semantic_accuracy() {
        let s = default_camera_schema();
        let golds = vec![
            gold("a", &[("ISO", Some("400")), ("CAMERA", Some("Nikon Z6"))]),
            gold("b", &[("ISO", Some("100"))]),
        ];
        // one wrong value in "a"
        let preds = [
            values(&[("ISO", Some("400")), ("CAMERA", Some("Nikon Z7"))]),
            values(&[("ISO", Some("100"))]),
        ];
        let raws: Vec<_> = golds
            .iter()
            .zip(&preds)
            .map(|(g, p)| raw(&g.example_id, format!("Sure, here it is: {}", p.to_json_string())))
            .collect();
        let semantic = micro_f1(
            golds.iter().map(|g| g.example_id.as_str()).zip(preds.iter()),
            &golds,
            &s,
        )
        .unwrap();
        assert_eq!(css_score(&raws, &golds, &s, &CanonConfig::default()), Ok(semantic));
        assert_eq!(ros_score(&raws, &golds, &s), Ok(0.0));
    }

    #[test]
    fn strict_prediction_normalizes_values() {
        let s = default_camera_schema();
        let text = values(&[("ISO", Some("ISO 400")), ("APERTURE", Some("f2.8"))]).to_json_string();
        let p = strict_prediction(&text, &s);
        assert_eq!(p.get("ISO"), Some("400"));
        assert_eq!(p.get("APERTURE"), Some("f/2.8"));
    }

    #[test]
    fn gaps() {
        let m = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
        };
        let table_ros = m(&[
            ("gemma9b", 0.685),
            ("gemma2b", 0.116),
            ("qwen7b", 0.421),
            ("mistral7b", 0.522),
            ("phi3", 0.284),
            ("stablelm", 0.168),
        ]);
        assert!((cross_model_gap(&table_ros).unwrap() - 0.569).abs() < 1e-12);
        assert_eq!(cross_model_gap(&m(&[("a", 0.3), ("b", 0.3)])), Ok(0.0));
        assert!((cross_model_gap(&m(&[("a", 0.2), ("b", 0.9), ("c", 0.5)])).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(cross_model_gap(&m(&[("a", 0.2)])), Err(TooFewModels(1)));
    }

    #[test]
    fn table_delta_arithmetic() {
        let s = ModelScores::new(0.421, 0.588);
        assert!((s.delta - 0.167).abs() < 1e-12);
    }

    #[test]
    fn oracle_picks_correct_or_null() {
        let s = default_camera_schema();
        let g = gold("e", &[("ISO", Some("400")), ("LENS", Some("RF 50")), ("CAMERA", Some("A"))]);
        let a = values(&[("ISO", Some("400")), ("LENS", Some("EF 85")), ("APERTURE", Some("f/4"))]);
        let b = values(&[("ISO", Some("200")), ("LENS", Some("RF 50"))]);
        let o = oracle_select([&a, &b], &g, &s);
        assert_eq!(o.get("ISO"), Some("400"));
        assert_eq!(o.get("LENS"), Some("RF 50"));
        assert_eq!(o.get("CAMERA"), None);
        assert_eq!(o.get("APERTURE"), None);
        let one_each = micro_f1([("e", &oracle_select([&g.gold], &g, &s))], core::slice::from_ref(&g), &s);
        assert_eq!(one_each, Ok(1.0));
    }

    /// Independent reference: a full 3x3 table over (gold state, pred state)
    /// with states null / equal-to-gold / other, reduced to F1 at the end.
    fn brute_force_f1(preds: &[FieldValues], golds: &[GoldRecord], schema: &Schema) -> f64 {
        let mut table = [[0u64; 3]; 3];
        for (p, g) in preds.iter().zip(golds) {
            for name in schema.field_names() {
                let gs = if g.gold.get(name).is_some() { 1 } else { 0 };
                let ps = match (p.get(name), g.gold.get(name)) {
                    (None, _) => 0,
                    (Some(a), Some(b)) if a == b => 1,
                    _ => 2,
                };
                table[gs][ps] += 1;
            }
        }
        let tp = table[1][1];
        let fp = table[0][1] + table[0][2] + table[1][2];
        let fn_ = table[1][0] + table[1][2];
        if tp == 0 {
            return 0.0;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        2.0 * p * r / (p + r)
    }

    fn arb_values() -> impl Strategy<Value = Vec<Option<u8>>> {
        proptest::collection::vec(proptest::option::of(0u8..3), 6)
    }

    fn to_values(raw: &[Option<u8>]) -> FieldValues {
        let schema = default_camera_schema();
        schema
            .field_names()
            .zip(raw)
            .map(|(n, v)| (n.to_string(), v.map(|x| format!("v{x}"))))
            .collect()
    }

    proptest! {
        #[test]
        fn micro_f1_matches_brute_force(rows in proptest::collection::vec((arb_values(), arb_values()), 1..20)) {
            let s = default_camera_schema();
            let golds: Vec<_> = rows.iter().enumerate().map(|(i, (g, _))| GoldRecord {
                example_id: format!("e{i}"),
                query: String::new(),
                split: Split::Test,
                gold: to_values(g),
            }).collect();
            let preds: Vec<_> = rows.iter().map(|(_, p)| to_values(p)).collect();
            let f1 = micro_f1(golds.iter().map(|g| g.example_id.as_str()).zip(preds.iter()), &golds, &s).unwrap();
            prop_assert_eq!(f1, brute_force_f1(&preds, &golds, &s));
            prop_assert!((0.0..=1.0).contains(&f1));

            // permutation invariance
            let mut order: Vec<usize> = (0..golds.len()).collect();
            order.reverse();
            let f1_rev = micro_f1(order.iter().map(|&i| (golds[i].example_id.as_str(), &preds[i])), &golds, &s).unwrap();
            prop_assert_eq!(f1, f1_rev);

            // the oracle dominates each candidate
            let oracle: Vec<_> = golds.iter().zip(&preds).map(|(g, p)| oracle_select([p], g, &s)).collect();
            let of1 = micro_f1(golds.iter().map(|g| g.example_id.as_str()).zip(oracle.iter()), &golds, &s).unwrap();
            prop_assert!(of1 >= f1);
        }
    }
}

//! Split protocol: each pipeline stage may read gold labels from one split
//! only, and every read is recorded.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use structguard_core::{GoldRecord, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    VerifierTraining,
    ThresholdTuning,
    FinalScoring,
}

impl Stage {
    pub fn allowed_split(self) -> Split {
        match self {
            Stage::VerifierTraining => Split::Train,
            Stage::ThresholdTuning => Split::Dev,
            Stage::FinalScoring => Split::Test,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::VerifierTraining => "verifier_training",
            Stage::ThresholdTuning => "threshold_tuning",
            Stage::FinalScoring => "final_scoring",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("protocol violation: stage {stage} requested {requested} labels (allowed: {allowed})")]
pub struct ProtocolViolation {
    pub stage: Stage,
    pub requested: Split,
    pub allowed: Split,
}

/// Which splits each stage actually consumed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub consumed: BTreeMap<Stage, BTreeSet<Split>>,
}

impl Attestation {
    pub fn record(&mut self, stage: Stage, split: Split) {
        self.consumed.entry(stage).or_default().insert(split);
    }

    pub fn test_consumers(&self) -> Vec<Stage> {
        self.consumed
            .iter()
            .filter(|(_, s)| s.contains(&Split::Test))
            .map(|(st, _)| *st)
            .collect()
    }

    /// True when the test split was read by final scoring and nothing else.
    pub fn is_clean(&self) -> bool {
        self.consumed
            .iter()
            .all(|(stage, splits)| splits.iter().all(|s| *s == stage.allowed_split()))
    }
}

/// Gold labels behind split-scoped access.
#[derive(Debug)]
pub struct GoldStore<'a> {
    gold: &'a [GoldRecord],
    log: RefCell<Attestation>,
}

impl<'a> GoldStore<'a> {
    pub fn new(gold: &'a [GoldRecord]) -> Self {
        Self {
            gold,
            log: RefCell::new(Attestation::default()),
        }
    }

    /// Gold records of `split`, if `stage` is allowed to read them.
    pub fn view(&self, stage: Stage, split: Split) -> Result<Vec<&'a GoldRecord>, ProtocolViolation> {
        if split != stage.allowed_split() {
            return Err(ProtocolViolation {
                stage,
                requested: split,
                allowed: stage.allowed_split(),
            });
        }
        self.log.borrow_mut().record(stage, split);
        Ok(self.gold.iter().filter(|g| g.split == split).collect())
    }

    pub fn attestation(&self) -> Attestation {
        self.log.borrow().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use structguard_core::default_camera_schema;

    fn gold(id: &str, split: Split) -> GoldRecord {
        GoldRecord {
            example_id: id.into(),
            query: String::new(),
            split,
            gold: default_camera_schema().empty_values(),
        }
    }

    #[test]
    fn stages_see_only_their_split() {
        let g = vec![gold("a", Split::Train), gold("b", Split::Dev), gold("c", Split::Test)];
        let store = GoldStore::new(&g);
        assert_eq!(store.view(Stage::VerifierTraining, Split::Train).unwrap().len(), 1);
        for stage in [Stage::VerifierTraining, Stage::ThresholdTuning] {
            let err = store.view(stage, Split::Test).unwrap_err();
            assert_eq!(err.requested, Split::Test);
        }
        store.view(Stage::ThresholdTuning, Split::Dev).unwrap();
        store.view(Stage::FinalScoring, Split::Test).unwrap();
        let att = store.attestation();
        assert_eq!(att.test_consumers(), vec![Stage::FinalScoring]);
        assert!(att.is_clean());
        let json = serde_json::to_string(&att).unwrap();
        assert!(json.contains("\"final_scoring\":[\"test\"]"));
    }
}

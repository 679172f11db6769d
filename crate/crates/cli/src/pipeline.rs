//! Train, tune and score stages, and the end-to-end runner.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use structguard_core::metrics::{
    css_confusion, micro_f1, oracle_select, ros_confusion, AlignmentError, MetricsReport, ModelScores, TooFewModels,
};
use structguard_core::policy::{
    diagnostics, safe_override, tune_thresholds, Decision, EvalExample, PolicyConfig, PolicyDiagnostics, PolicyError,
};
use structguard_core::taxonomy::{taxonomy_report, ModelTaxonomy};
use structguard_core::verifier::{
    train, ConfidenceSource, ModelError, TrainConfig, TrainError, VerifierMode, VerifierModel,
};
use structguard_core::{canonicalize, CanonConfig, CanonicalRecord, FieldValues, GoldRecord, PromptVariant, RawOutput, Split};

use crate::io::{Corpus, DataError, Provenance};
use crate::protocol::{Attestation, GoldStore, ProtocolViolation, Stage};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error("verifier training: {0}")]
    Train(#[from] TrainError),
    #[error("verifier model: {0}")]
    Model(#[from] ModelError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("scoring: {0}")]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    TooFewModels(#[from] TooFewModels),
    #[error("the {0} split has no examples")]
    EmptySplit(Split),
    #[error("model filter {0:?} matches no model in the corpus")]
    UnknownModel(String),
}

/// Canonical candidates by example id, then model id.
pub type Candidates = BTreeMap<String, BTreeMap<String, CanonicalRecord>>;

pub fn canonicalize_corpus(corpus: &Corpus, cfg: &CanonConfig) -> Candidates {
    let mut out: Candidates = BTreeMap::new();
    for raw in &corpus.outputs {
        out.entry(raw.example_id.clone())
            .or_default()
            .insert(raw.model_id.clone(), canonicalize(raw, &corpus.schema, cfg));
    }
    out
}

static NO_CANDIDATES: BTreeMap<String, CanonicalRecord> = BTreeMap::new();

fn candidates_for<'a>(cands: &'a Candidates, id: &str) -> &'a BTreeMap<String, CanonicalRecord> {
    cands.get(id).unwrap_or(&NO_CANDIDATES)
}

/// Trains the verifier on `split` (which must be train) using the candidates
/// of `train_models`, or of every model when `None`.
pub fn train_stage(
    corpus: &Corpus,
    cands: &Candidates,
    store: &GoldStore<'_>,
    split: Split,
    mode: VerifierMode,
    train_models: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<VerifierModel, PipelineError> {
    let gold = store.view(Stage::VerifierTraining, split)?;
    if gold.is_empty() {
        return Err(PipelineError::EmptySplit(split));
    }
    let known = corpus.model_ids();
    if let Some(m) = train_models.and_then(|ms| ms.iter().find(|m| !known.contains(m))) {
        return Err(PipelineError::UnknownModel(m.clone()));
    }
    let keep = |m: &str| train_models.is_none_or(|ms| ms.iter().any(|x| x == m));
    let triples: Vec<(&str, &CanonicalRecord, &GoldRecord)> = gold
        .iter()
        .flat_map(|g| {
            candidates_for(cands, &g.example_id)
                .iter()
                .filter(|(m, _)| keep(m))
                .map(move |(_, r)| (g.query.as_str(), r, *g))
        })
        .collect();
    Ok(train(triples, &corpus.schema, mode, cfg)?)
}

/// Tuned thresholds plus where and how they were tuned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub policy: PolicyConfig,
    pub tuned_split: Split,
    pub grid_step: f64,
    pub dev_f1: f64,
    pub dev_precision: f64,
    pub configs_evaluated: usize,
}

pub fn tune_stage(
    cands: &Candidates,
    store: &GoldStore<'_>,
    split: Split,
    verifier: &dyn ConfidenceSource,
    schema: &structguard_core::Schema,
    grid_step: f64,
) -> Result<PolicyFile, PipelineError> {
    let gold = store.view(Stage::ThresholdTuning, split)?;
    if gold.is_empty() {
        return Err(PipelineError::EmptySplit(split));
    }
    let dev: Vec<EvalExample<'_>> = gold
        .iter()
        .map(|g| EvalExample {
            gold: g,
            candidates: candidates_for(cands, &g.example_id),
        })
        .collect();
    let t = tune_thresholds(&dev, verifier, schema, grid_step)?;
    Ok(PolicyFile {
        policy: t.config,
        tuned_split: split,
        grid_step,
        dev_f1: t.dev_f1,
        dev_precision: t.dev_precision,
        configs_evaluated: t.configs_evaluated,
    })
}

/// What the final scorer measured on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScores {
    pub metrics: MetricsReport,
    pub diagnostics: PolicyDiagnostics,
    pub taxonomy: BTreeMap<String, ModelTaxonomy>,
}

pub fn final_stage(
    corpus: &Corpus,
    cands: &Candidates,
    store: &GoldStore<'_>,
    verifier: &dyn ConfidenceSource,
    policy: &PolicyConfig,
    canon: &CanonConfig,
) -> Result<(FinalScores, Vec<Decision>), PipelineError> {
    let test: Vec<GoldRecord> = store
        .view(Stage::FinalScoring, Split::Test)?
        .into_iter()
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Test));
    }
    let test_ids: BTreeSet<&str> = test.iter().map(|g| g.example_id.as_str()).collect();
    let test_outputs: Vec<RawOutput> = corpus
        .outputs
        .iter()
        .filter(|o| test_ids.contains(o.example_id.as_str()))
        .cloned()
        .collect();

    let mut models = BTreeMap::new();
    for m in corpus.model_ids() {
        let raws: Vec<RawOutput> = test_outputs.iter().filter(|o| o.model_id == m).cloned().collect();
        let ros = ros_confusion(&raws, &test, &corpus.schema)?.f1();
        let css = css_confusion(&raws, &test, &corpus.schema, canon)?.f1();
        models.insert(m, ModelScores::new(ros, css));
    }

    let mut decisions = Vec::new();
    let mut policy_preds: Vec<FieldValues> = Vec::with_capacity(test.len());
    let mut oracle_preds: Vec<FieldValues> = Vec::with_capacity(test.len());
    for g in &test {
        let c = candidates_for(cands, &g.example_id);
        let (rec, log) = safe_override(&g.example_id, &g.query, c, verifier, &corpus.schema, policy)?;
        policy_preds.push(rec);
        decisions.extend(log);
        oracle_preds.push(oracle_select(c.values().map(|r| &r.fields), g, &corpus.schema));
    }
    let ids = || test.iter().map(|g| g.example_id.as_str());
    let safe = micro_f1(ids().zip(policy_preds.iter()), &test, &corpus.schema)?;
    let oracle = micro_f1(ids().zip(oracle_preds.iter()), &test, &corpus.schema)?;

    Ok((
        FinalScores {
            metrics: MetricsReport::new(models, safe, oracle)?,
            diagnostics: diagnostics(&decisions, &test)?,
            taxonomy: taxonomy_report(&test_outputs, &corpus.schema, canon).map_err(|_| PipelineError::EmptySplit(Split::Test))?,
        },
        decisions,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierSummary {
    pub mode: VerifierMode,
    pub feature_spec_version: u32,
    pub hyper: TrainConfig,
    pub trained_split: Split,
    pub train_models: Vec<String>,
    pub degenerate_fields: Vec<String>,
}

impl VerifierSummary {
    pub fn of(v: &VerifierModel) -> Self {
        Self {
            mode: v.mode,
            feature_spec_version: v.feature_spec_version,
            hyper: v.hyper,
            trained_split: v.trained_split,
            train_models: v.train_models.clone(),
            degenerate_fields: v.fields.iter().filter(|f| f.degenerate).map(|f| f.field.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub provenance: Provenance,
    pub prompt_variants: Vec<PromptVariant>,
    pub split_sizes: BTreeMap<String, usize>,
    pub models: Vec<String>,
    /// Absent when confidences came from an external scores file.
    pub verifier: Option<VerifierSummary>,
    pub policy: PolicyFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: MetricsReport,
    pub diagnostics: PolicyDiagnostics,
    pub taxonomy: BTreeMap<String, ModelTaxonomy>,
    pub config: ConfigEcho,
    pub attestation: Attestation,
}

/// Builds the report for a final-scoring run from a confidence source and a
/// tuned policy. When the source is a trained verifier, its summary also
/// records the split it was trained on.
pub fn score_with(
    corpus: &Corpus,
    cands: &Candidates,
    source: &dyn ConfidenceSource,
    verifier: Option<VerifierSummary>,
    policy: &PolicyFile,
    canon: &CanonConfig,
) -> Result<(RunReport, Vec<Decision>), PipelineError> {
    let store = GoldStore::new(&corpus.gold);
    let (scores, decisions) = final_stage(corpus, cands, &store, source, &policy.policy, canon)?;
    let mut attestation = store.attestation();
    if let Some(v) = &verifier {
        attestation.record(Stage::VerifierTraining, v.trained_split);
    }
    attestation.record(Stage::ThresholdTuning, policy.tuned_split);
    Ok((assemble(corpus, scores, verifier, policy.clone(), attestation), decisions))
}

fn assemble(
    corpus: &Corpus,
    scores: FinalScores,
    verifier: Option<VerifierSummary>,
    policy: PolicyFile,
    attestation: Attestation,
) -> RunReport {
    let variants: BTreeSet<PromptVariant> = corpus.outputs.iter().map(|o| o.prompt_variant).collect();
    RunReport {
        metrics: scores.metrics,
        diagnostics: scores.diagnostics,
        taxonomy: scores.taxonomy,
        config: ConfigEcho {
            provenance: corpus.provenance.clone(),
            prompt_variants: variants.into_iter().collect(),
            split_sizes: corpus.split_counts(),
            models: corpus.model_ids(),
            verifier,
            policy,
        },
        attestation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub mode: VerifierMode,
    pub grid_step: f64,
    pub train: TrainConfig,
    /// Restrict verifier training to these models; the policy still sees all.
    pub train_models: Option<Vec<String>>,
    pub canon: CanonConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            mode: VerifierMode::Full,
            grid_step: 0.05,
            train: TrainConfig::default(),
            train_models: None,
            canon: CanonConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub decisions: Vec<Decision>,
    pub verifier: VerifierModel,
    pub policy: PolicyFile,
}

/// Train on train, tune on dev, score on test.
pub fn run_pipeline(corpus: &Corpus, opts: &PipelineOptions) -> Result<RunOutput, PipelineError> {
    let cands = canonicalize_corpus(corpus, &opts.canon);
    let store = GoldStore::new(&corpus.gold);
    let verifier = train_stage(
        corpus,
        &cands,
        &store,
        Split::Train,
        opts.mode,
        opts.train_models.as_deref(),
        &opts.train,
    )?;
    let policy = tune_stage(&cands, &store, Split::Dev, &verifier, &corpus.schema, opts.grid_step)?;
    let (scores, decisions) = final_stage(corpus, &cands, &store, &verifier, &policy.policy, &opts.canon)?;
    let report = assemble(corpus, scores, Some(VerifierSummary::of(&verifier)), policy.clone(), store.attestation());
    Ok(RunOutput {
        report,
        decisions,
        verifier,
        policy,
    })
}

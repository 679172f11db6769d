//! Command-line surface. Exit codes: 0 ok, 1 usage, 2 data, 3 protocol.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use structguard_core::benchgen::{builtin_few_shot_profiles, generate_corpus, GenConfig, ModelProfile};
use structguard_core::metrics::{ModelScores, css_confusion, ros_confusion};
use structguard_core::policy::{safe_override, Decision};
use structguard_core::taxonomy::taxonomy_report;
use structguard_core::verifier::{ConfidenceSource, VerifierMode, VerifierModel};
use structguard_core::{
    canonicalize, default_camera_schema, CanonicalRecord, FieldValues, PromptVariant, RawOutput, Schema, Split,
};

use crate::io::{
    load_corpus, load_external_scores, print, read_json, read_jsonl, read_text, save_corpus, sha256_hex,
    to_json_pretty, to_jsonl, write_json, write_jsonl, write_text, Corpus, DataError, Provenance, PROFILES_FILE,
};
use crate::pipeline::{
    canonicalize_corpus, score_with, train_stage, tune_stage, PipelineError, PipelineOptions, PolicyFile,
    VerifierSummary,
};
use crate::protocol::{GoldStore, ProtocolViolation, Stage};
use crate::report::render;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Protocol(_) => EXIT_PROTOCOL,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Protocol(v) => CliError::Protocol(v),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "structguard", version, about = "Canonicalize, score and repair structured LLM extractions")]
pub struct Cli {
    /// Seed for corpus generation and recorded in verifier metadata.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Schema JSON file; defaults to the built-in camera schema.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Pipeline options JSON (mode, grid_step, train, train_models, canon).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark corpus.
    Gen(GenArgs),
    /// Canonicalize raw model output (stdin or file) to schema-conformant JSON.
    Canonicalize(CanonArgs),
    /// Failure-category shares per model.
    Taxonomy(TaxonomyArgs),
    /// Per-model ROS and CSS.
    Score(ScoreArgs),
    /// Train the field verifier.
    TrainVerifier(TrainArgs),
    /// Tune safe-override thresholds.
    Tune(TuneArgs),
    /// Apply safe override to a corpus or to a single query.
    Run(RunArgs),
    /// Render a saved report as text tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// `builtin`, `few-shot`, or a JSON file with a list of profiles.
    #[arg(long, default_value = "builtin")]
    pub profiles: String,
}

#[derive(Debug, Args)]
pub struct CanonArgs {
    /// Input file; stdin when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Treat the input as outputs JSONL and emit canonical records as JSONL.
    #[arg(long)]
    pub jsonl: bool,
    /// For raw input, print the full canonical record with its trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    /// Corpus directory (its test split is used unless --all).
    #[arg(long, conflicts_with = "input")]
    pub corpus: Option<PathBuf>,
    /// Outputs JSONL file; no gold labels needed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    QueryOnly,
    OutputOnly,
}

impl From<ModeArg> for VerifierMode {
    fn from(m: ModeArg) -> VerifierMode {
        match m {
            ModeArg::Full => VerifierMode::Full,
            ModeArg::QueryOnly => VerifierMode::QueryOnly,
            ModeArg::OutputOnly => VerifierMode::OutputOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Train only on these models (comma-separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "exclude")]
    pub include: Vec<String>,
    /// Train on every model except these (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Trained verifier (verifier.json).
    #[arg(long, conflicts_with = "scores")]
    pub verifier: Option<PathBuf>,
    /// External per-field confidences (scores.jsonl).
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: SplitArg,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Corpus directory; scores the test split.
    #[arg(long, conflicts_with = "query")]
    pub corpus: Option<PathBuf>,
    /// Where corpus mode writes report.json, report.txt and decisions.jsonl.
    #[arg(long, requires = "corpus")]
    pub out_dir: Option<PathBuf>,
    /// Query text for single-query mode.
    #[arg(long)]
    pub query: Option<String>,
    /// Example id used to look up external scores in single-query mode.
    #[arg(long, default_value = "query")]
    pub example_id: String,
    /// Candidate output as MODEL=PATH; repeat per model.
    #[arg(long = "candidate", requires = "query")]
    pub candidates: Vec<String>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Tuned thresholds (policy.json).
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json written by `run`.
    #[arg(long)]
    pub input: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("structguard: {e}");
            e.exit_code()
        }
    }
}

fn load_schema(path: Option<&Path>) -> Result<Schema, CliError> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(default_camera_schema()),
    }
}

fn load_options(cli: &Cli) -> Result<PipelineOptions, CliError> {
    let mut opts: PipelineOptions = match &cli.config {
        Some(p) => read_json(p)?,
        None => PipelineOptions::default(),
    };
    opts.train.seed = cli.seed;
    Ok(opts)
}

/// Loads a corpus; an explicit --schema must agree with the corpus schema.
fn open_corpus(cli: &Cli, dir: &Path) -> Result<Corpus, CliError> {
    let corpus = load_corpus(dir)?;
    if let Some(p) = &cli.schema {
        let s: Schema = read_json(p)?;
        if s != corpus.schema {
            return Err(DataError::SchemaMismatch(format!("{} differs from the corpus schema", p.display())).into());
        }
    }
    Ok(corpus)
}

enum Source {
    Model(VerifierModel),
    External(structguard_core::verifier::ExternalScores),
}

impl Source {
    fn load(args: &SourceArgs, schema: &Schema) -> Result<Self, CliError> {
        match (&args.verifier, &args.scores) {
            (Some(v), None) => {
                let m: VerifierModel = read_json(v)?;
                m.validate(schema).map_err(data)?;
                Ok(Source::Model(m))
            }
            (None, Some(s)) => Ok(Source::External(load_external_scores(s)?)),
            _ => Err(CliError::Usage("one of --verifier or --scores is required".into())),
        }
    }

    fn as_dyn(&self) -> &dyn ConfidenceSource {
        match self {
            Source::Model(m) => m,
            Source::External(s) => s,
        }
    }

    fn summary(&self) -> Option<VerifierSummary> {
        match self {
            Source::Model(m) => Some(VerifierSummary::of(m)),
            Source::External(_) => None,
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Canonicalize(a) => cmd_canonicalize(cli, a),
        Command::Taxonomy(a) => cmd_taxonomy(cli, a),
        Command::Score(a) => cmd_score(cli, a),
        Command::TrainVerifier(a) => cmd_train(cli, a),
        Command::Tune(a) => cmd_tune(cli, a),
        Command::Run(a) => cmd_run(cli, a),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<(), CliError> {
    let mut cfg = GenConfig::camera_default(cli.seed);
    cfg.n_examples = a.n;
    cfg.schema = load_schema(cli.schema.as_deref())?;
    match a.profiles.as_str() {
        "builtin" => {}
        "few-shot" => {
            cfg.profiles = builtin_few_shot_profiles(&cfg.schema);
            cfg.prompt_variant = PromptVariant::FewShotK3;
        }
        path => cfg.profiles = read_json::<Vec<ModelProfile>>(Path::new(path))?,
    }
    let (gold, outputs) = generate_corpus(&cfg).map_err(data)?;
    let corpus = Corpus {
        gold,
        outputs,
        schema: cfg.schema.clone(),
        provenance: Provenance {
            source: "generator".into(),
            seed: Some(cli.seed),
            config_hash: sha256_hex(serde_json::to_string(&cfg).expect("serializable").as_bytes()),
        },
    };
    save_corpus(&corpus, &a.out_dir)?;
    write_json(&a.out_dir.join(PROFILES_FILE), &cfg.profiles)?;
    eprintln!(
        "wrote {} examples and {} outputs to {}",
        corpus.gold.len(),
        corpus.outputs.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn read_input(path: Option<&Path>) -> Result<String, CliError> {
    match path {
        Some(p) => Ok(read_text(p)?),
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Data(format!("stdin: {e}")))?;
            Ok(s)
        }
    }
}

fn cmd_canonicalize(cli: &Cli, a: &CanonArgs) -> Result<(), CliError> {
    let schema = load_schema(cli.schema.as_deref())?;
    let canon = load_options(cli)?.canon;
    if a.jsonl {
        let raws: Vec<RawOutput> = match &a.input {
            Some(p) => read_jsonl(p)?,
            None => {
                let text = read_input(None)?;
                text.lines()
                    .enumerate()
                    .filter(|(_, l)| !l.trim().is_empty())
                    .map(|(i, l)| {
                        serde_json::from_str(l).map_err(|e| CliError::Data(format!("stdin:{}: {e}", i + 1)))
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let recs: Vec<CanonicalRecord> = raws.iter().map(|r| canonicalize(r, &schema, &canon)).collect();
        print(&to_jsonl(&recs));
        return Ok(());
    }
    let raw = RawOutput {
        example_id: "input".into(),
        model_id: "input".into(),
        prompt_variant: PromptVariant::ZeroShot,
        text: read_input(a.input.as_deref())?,
    };
    let rec = canonicalize(&raw, &schema, &canon);
    if a.trace {
        print(&to_json_pretty(&rec));
    } else {
        print(&format!("{}\n", rec.fields.to_json_string()));
    }
    Ok(())
}

fn cmd_taxonomy(cli: &Cli, a: &TaxonomyArgs) -> Result<(), CliError> {
    let canon = load_options(cli)?.canon;
    let (outputs, schema) = match (&a.corpus, &a.input) {
        (Some(dir), None) => {
            let c = open_corpus(cli, dir)?;
            let outputs = if a.all {
                c.outputs
            } else {
                let test: std::collections::BTreeSet<&str> = c
                    .gold
                    .iter()
                    .filter(|g| g.split == Split::Test)
                    .map(|g| g.example_id.as_str())
                    .collect();
                c.outputs.iter().filter(|o| test.contains(o.example_id.as_str())).cloned().collect()
            };
            (outputs, c.schema)
        }
        (None, Some(p)) => (read_jsonl(p)?, load_schema(cli.schema.as_deref())?),
        _ => return Err(CliError::Usage("one of --corpus or --input is required".into())),
    };
    let report = taxonomy_report(&outputs, &schema, &canon).map_err(|_| CliError::Data("no outputs".into()))?;
    if a.json {
        print(&to_json_pretty(&report));
    } else {
        let mut s = String::new();
        for (m, t) in &report {
            s.push_str(&format!("{m}: {}\n", serde_json::to_string(t).expect("serializable")));
        }
        print(&s);
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreTable {
    split: Split,
    models: BTreeMap<String, ModelScores>,
}

fn cmd_score(cli: &Cli, a: &ScoreArgs) -> Result<(), CliError> {
    let corpus = open_corpus(cli, &a.corpus)?;
    let canon = load_options(cli)?.canon;
    let split: Split = a.split.into();
    let store = GoldStore::new(&corpus.gold);
    let gold: Vec<_> = store.view(Stage::FinalScoring, split)?.into_iter().cloned().collect();
    let ids: std::collections::BTreeSet<&str> = gold.iter().map(|g| g.example_id.as_str()).collect();
    let mut models = BTreeMap::new();
    for m in corpus.model_ids() {
        let raws: Vec<RawOutput> = corpus
            .outputs
            .iter()
            .filter(|o| o.model_id == m && ids.contains(o.example_id.as_str()))
            .cloned()
            .collect();
        let ros = ros_confusion(&raws, &gold, &corpus.schema).map_err(data)?.f1();
        let css = css_confusion(&raws, &gold, &corpus.schema, &canon).map_err(data)?.f1();
        models.insert(m, ModelScores::new(ros, css));
    }
    let table = ScoreTable { split, models };
    if a.json {
        print(&to_json_pretty(&table));
    } else {
        let mut s = format!("{:<18} {:>7} {:>7} {:>7}\n", "model", "ROS", "CSS", "delta");
        for (id, sc) in &table.models {
            s.push_str(&format!("{id:<18} {:>7.3} {:>7.3} {:>+7.3}\n", sc.ros, sc.css, sc.delta));
        }
        print(&s);
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let corpus = open_corpus(cli, &a.corpus)?;
    let opts = load_options(cli)?;
    let mode = a.mode.map(VerifierMode::from).unwrap_or(opts.mode);
    let models: Option<Vec<String>> = if !a.include.is_empty() {
        Some(a.include.clone())
    } else if !a.exclude.is_empty() {
        for m in &a.exclude {
            if !corpus.model_ids().contains(m) {
                return Err(PipelineError::UnknownModel(m.clone()).into());
            }
        }
        Some(corpus.model_ids().into_iter().filter(|m| !a.exclude.contains(m)).collect())
    } else {
        opts.train_models.clone()
    };
    let cands = canonicalize_corpus(&corpus, &opts.canon);
    let store = GoldStore::new(&corpus.gold);
    let model = train_stage(&corpus, &cands, &store, a.split.into(), mode, models.as_deref(), &opts.train)?;
    write_json(&a.out, &model)?;
    eprintln!("trained {} verifier on {:?}", mode, model.train_models);
    Ok(())
}

fn cmd_tune(cli: &Cli, a: &TuneArgs) -> Result<(), CliError> {
    let corpus = open_corpus(cli, &a.corpus)?;
    let opts = load_options(cli)?;
    let source = Source::load(&a.source, &corpus.schema)?;
    let cands = canonicalize_corpus(&corpus, &opts.canon);
    let store = GoldStore::new(&corpus.gold);
    let step = a.grid_step.unwrap_or(opts.grid_step);
    let policy = tune_stage(&cands, &store, a.split.into(), source.as_dyn(), &corpus.schema, step)?;
    write_json(&a.out, &policy)?;
    eprintln!(
        "base={} tau_keep={} tau_take={} delta={} dev_f1={:.4}",
        policy.policy.base_model, policy.policy.tau_keep, policy.policy.tau_take, policy.policy.delta_margin, policy.dev_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct QueryResult<'a> {
    record: &'a FieldValues,
    decisions: &'a [Decision],
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<(), CliError> {
    let Some(policy_path) = &a.policy else {
        return Err(CliError::Usage("run needs a tuned policy (--policy policy.json); see `tune`".into()));
    };
    let policy: PolicyFile = read_json(policy_path)?;
    policy.policy.validate().map_err(data)?;
    let opts = load_options(cli)?;

    if let Some(query) = &a.query {
        let schema = load_schema(cli.schema.as_deref())?;
        let source = Source::load(&a.source, &schema)?;
        if a.candidates.is_empty() {
            return Err(CliError::Usage("single-query mode needs at least one --candidate MODEL=PATH".into()));
        }
        let mut cands = BTreeMap::new();
        for c in &a.candidates {
            let Some((model, path)) = c.split_once('=') else {
                return Err(CliError::Usage(format!("--candidate {c:?} is not MODEL=PATH")));
            };
            let raw = RawOutput {
                example_id: a.example_id.clone(),
                model_id: model.into(),
                prompt_variant: PromptVariant::ZeroShot,
                text: read_text(Path::new(path))?,
            };
            cands.insert(model.to_string(), canonicalize(&raw, &schema, &opts.canon));
        }
        let (record, decisions) =
            safe_override(&a.example_id, query, &cands, source.as_dyn(), &schema, &policy.policy).map_err(data)?;
        print(&to_json_pretty(&QueryResult {
            record: &record,
            decisions: &decisions,
        }));
        return Ok(());
    }

    let Some(dir) = &a.corpus else {
        return Err(CliError::Usage("run needs --corpus DIR or --query TEXT".into()));
    };
    let corpus = open_corpus(cli, dir)?;
    let source = Source::load(&a.source, &corpus.schema)?;
    let cands = canonicalize_corpus(&corpus, &opts.canon);
    let (report, decisions) = score_with(&corpus, &cands, source.as_dyn(), source.summary(), &policy, &opts.canon)?;
    let text = render(&report);
    if let Some(out) = &a.out_dir {
        write_json(&out.join("report.json"), &report)?;
        write_text(&out.join("report.txt"), &text)?;
        write_jsonl(&out.join("decisions.jsonl"), &decisions)?;
    }
    print(&text);
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let report: crate::pipeline::RunReport = read_json(&a.input)?;
    print(&render(&report));
    Ok(())
}

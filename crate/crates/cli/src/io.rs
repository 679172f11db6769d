//! On-disk formats: JSONL corpora, schema and model files, external scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use structguard_core::verifier::{ExternalScores, FieldConfidence, ScoreError};
use structguard_core::{GoldRecord, RawOutput, Schema};

pub const GOLD_FILE: &str = "gold.jsonl";
pub const OUTPUTS_FILE: &str = "outputs.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const PROFILES_FILE: &str = "profiles.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{file}:{line}: {source}")]
    Score {
        file: PathBuf,
        line: usize,
        source: ScoreError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Parses one JSON value per non-empty line; errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DataError::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    write_text(path, &to_jsonl(items))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    write_text(path, &to_json_pretty(value))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `generator` or `external`.
    pub source: String,
    pub seed: Option<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub gold: Vec<GoldRecord>,
    pub outputs: Vec<RawOutput>,
    pub schema: Schema,
    pub provenance: Provenance,
}

impl Corpus {
    /// Checks referential integrity and that gold matches the schema.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids = BTreeSet::new();
        for g in &self.gold {
            if !ids.insert(g.example_id.as_str()) {
                return Err(DataError::Integrity(format!("duplicate gold example {:?}", g.example_id)));
            }
            let keys: Vec<&str> = g.gold.iter().map(|(k, _)| k).collect();
            let want: Vec<&str> = self.schema.field_names().collect();
            if keys.len() != want.len() || !want.iter().all(|k| keys.contains(k)) {
                return Err(DataError::SchemaMismatch(format!(
                    "gold {:?} has fields {keys:?}, schema has {want:?}",
                    g.example_id
                )));
            }
        }
        let mut pairs = BTreeSet::new();
        for o in &self.outputs {
            if !ids.contains(o.example_id.as_str()) {
                return Err(DataError::Integrity(format!(
                    "output from {:?} references unknown example {:?}",
                    o.model_id, o.example_id
                )));
            }
            if !pairs.insert((o.example_id.as_str(), o.model_id.as_str())) {
                return Err(DataError::Integrity(format!(
                    "duplicate output for ({:?}, {:?})",
                    o.example_id, o.model_id
                )));
            }
        }
        Ok(())
    }

    pub fn model_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.outputs.iter().map(|o| o.model_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn split_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for g in &self.gold {
            *m.entry(g.split.to_string()).or_insert(0) += 1;
        }
        m
    }
}

/// Loads `gold.jsonl`, `outputs.jsonl` and `schema.json` from `dir`.
/// `provenance.json` is optional; without it the corpus is marked external
/// and hashed.
pub fn load_corpus(dir: &Path) -> Result<Corpus, DataError> {
    let schema: Schema = read_json(&dir.join(SCHEMA_FILE))?;
    let gold: Vec<GoldRecord> = read_jsonl(&dir.join(GOLD_FILE))?;
    let outputs: Vec<RawOutput> = read_jsonl(&dir.join(OUTPUTS_FILE))?;
    let prov_path = dir.join(PROVENANCE_FILE);
    let provenance = if prov_path.exists() {
        read_json(&prov_path)?
    } else {
        let mut h = Vec::new();
        h.extend(to_jsonl(&gold).into_bytes());
        h.extend(to_jsonl(&outputs).into_bytes());
        Provenance {
            source: "external".into(),
            seed: None,
            config_hash: sha256_hex(&h),
        }
    };
    let corpus = Corpus {
        gold,
        outputs,
        schema,
        provenance,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(SCHEMA_FILE), &corpus.schema)?;
    write_jsonl(&dir.join(GOLD_FILE), &corpus.gold)?;
    write_jsonl(&dir.join(OUTPUTS_FILE), &corpus.outputs)?;
    write_json(&dir.join(PROVENANCE_FILE), &corpus.provenance)
}

/// Reads a `scores.jsonl` file of `{"example_id","model_id","field","p"}` lines.
pub fn load_external_scores(path: &Path) -> Result<ExternalScores, DataError> {
    let text = read_text(path)?;
    let mut scores = ExternalScores::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: FieldConfidence = serde_json::from_str(line).map_err(|e| DataError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        scores.insert(c).map_err(|source| DataError::Score {
            file: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
    }
    Ok(scores)
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

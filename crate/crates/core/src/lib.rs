//! Reliability layer for LLM structured extraction.
//!
//! Raw model text goes through a deterministic canonicalizer, is scored under
//! strict and lenient protocols, and multiple candidate records are merged by
//! a verifier-driven keep/override/abstain policy. A seeded synthetic corpus
//! generator ships alongside for reproducible experiments.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod benchgen;
pub mod canon;
pub mod json;
pub mod metrics;
pub mod normalize;
pub mod policy;
pub mod schema;
pub mod taxonomy;
pub mod verifier;

pub use canon::{canonicalize, CanonConfig, Transform};
pub use json::{JsonObject, JsonValue};
pub use schema::{
    default_camera_schema, validate_strict, CanonicalRecord, FieldSpec, FieldValues, GoldRecord,
    PromptVariant, RawOutput, Schema, Split, StrictFailure,
};

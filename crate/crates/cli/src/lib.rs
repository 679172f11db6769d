//! File formats, split protocol, pipeline runner and CLI for structguard.

pub mod cli;
pub mod io;
pub mod pipeline;
pub mod protocol;
pub mod report;

//! Detection and repair of deprecated library API usage in line-level code
//! completions for Python.

pub mod annotate;
pub mod corpus;
pub mod fix;
pub mod gateway;
pub mod mapping;
pub mod metrics;
pub mod prompt;
pub mod report;
pub mod resolve;
pub mod syntax;

pub use mapping::{load_mappings, ApiMapping, Fqn, MappingSet};

//! Generating instrumental accompaniment for a sung vocal over discrete
//! audio codes.

pub mod audio;
pub mod codecs;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod retrieval;
pub mod tokens;

#[cfg(test)]
mod testkit;

pub use error::{Error, Result};

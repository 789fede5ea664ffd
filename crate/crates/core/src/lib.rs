//! Cross-domain similarity measurement, domain transfer/adaptation
//! experiments and source-domain selection for text-similarity corpora.

pub mod adapt;
pub mod corpus;
pub mod downstream;
pub mod embed;
pub mod error;
pub mod meta;
pub mod ngram_lm;
pub mod pipeline;
pub mod report;
pub mod simfeat;
pub mod synth;

pub use error::{Error, Result};

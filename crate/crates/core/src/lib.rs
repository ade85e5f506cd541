pub mod baseline;
pub mod bench;
pub mod config;
pub mod corpus;
mod duration_secs;
pub mod embed;
pub mod error;
pub mod generation;
pub mod index;
pub mod ingest;
pub mod keywords;
pub mod pipeline;
pub mod provider;
pub mod service;
pub mod speech;

pub use error::{Error, ProviderError, Result, Stage};

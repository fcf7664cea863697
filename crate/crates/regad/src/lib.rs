//! Few-shot anomaly detection by feature registration.

pub mod cli;
pub mod config;
pub mod dataio;
mod error;
pub mod evalkit;
pub mod featnet;
pub mod geometry;
pub mod kv;
pub mod normest;
pub mod regtrain;
pub mod scoring;

pub use error::{RegadError, Result};

//! File formats, configuration and pipelines behind the `gmtaylor` binary.

pub mod config;
pub mod library;
pub mod output;
pub mod pipeline;

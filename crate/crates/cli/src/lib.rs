//! Problem files, instance generation and report artifacts for the `rumax` binary.

pub mod generate;
pub mod json;
pub mod problem;
pub mod report;

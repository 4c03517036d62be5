//! Command-line orchestration of the pose editing stages.
//!
//! Each command reads explicit input files, computes an [`output::OutputSet`]
//! and writes it under `--out-dir` together with `manifest.json`.
//!
//! Exit codes: 0 success, 2 usage, 3 malformed input or config, 4 a stage
//! rejected its inputs, 5 I/O failure.

pub mod answer;
pub mod cli;
pub mod config;
pub mod demos;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod report;

pub use answer::{parse_answer, AnswerRecord};
pub use config::PipelineConfig;
pub use error::{ErrorKind, PipelineError};
pub use output::OutputSet;

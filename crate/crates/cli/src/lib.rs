//! Workstation tooling around the core pipeline: experiment configs,
//! dataset files, checkpoints, provenance records, and the verbs the
//! `cmis` binary dispatches to. The core crate owns the math; this crate
//! owns everything that touches a filesystem or a terminal.

pub mod ablate;
pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod modality;
pub mod runmeta;
pub mod runner;
pub mod synthio;

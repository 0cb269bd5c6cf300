// Validation guards are written as `!(x > 0.0)` so NaN inputs fail them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Progressive multi-source domain adaptation on synthetic subject domains.
//!
//! The library personalizes a small classifier to one unlabeled target
//! subject by ranking labeled source subjects by similarity, adapting to them
//! in curriculum order, mixing in confident pseudo-labels for the target and
//! a kernel discrepancy alignment term, and retaining a density-selected
//! replay memory that guards against forgetting earlier sources.

pub mod alignment;
pub mod clustering;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pseudolabel;
pub mod replay;
pub mod seeding;
pub mod similarity;
pub mod stats;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ModelParams, SgdConfig};
pub use synthdata::{BenchmarkName, SubjectDomain, SubjectSpec};
pub use trainer::{CurriculumState, RunSummary, Strategy, TrainConfig};

//! Cooperative knowledge distillation between trained tabular classifiers.
//!
//! Every participating model acts as both teacher and student. A model that
//! classifies a training instance correctly, where another model fails, turns
//! that instance into a *quintessential* counterfactual: a nearby virtual
//! instance it finds even more typical of the true class. The counterfactuals
//! are appended to the struggling model's training set and all models are
//! retrained. Datasets may live at different sites with different columns;
//! only models and virtual instances ever cross a site boundary.
//!
//! Module map:
//!
//! - [`learners`]: the model contract and four built-in classifiers.
//! - [`features`]: schemas, CSV ingestion, encoding and cross-schema projection.
//! - [`optimize`]: box-constrained Adam and particle swarm minimizers.
//! - [`distill`]: expertise sets, teaching sets, counterfactual generation,
//!   feature masks and set-cover deduplication.
//! - [`pipeline`]: end-to-end runs in shared-data and multi-site modes.
//! - [`scenario`]: synthetic data and participant split generators.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distill;
pub mod error;
pub mod features;
pub mod io;
pub mod labels;
pub mod learners;
pub mod optimize;
pub mod pipeline;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use labels::{LabelSpace, ProbabilityVector};

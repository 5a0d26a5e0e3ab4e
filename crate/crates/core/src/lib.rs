//! Hot-deck imputation of categorical survey items that preserves the
//! relationship between items, with the estimators, balanced-selection
//! kernel, bootstrap and simulation harness needed to study it.
//!
//! Data flows as [`SurveyDataset`] values: [`popgen`] builds synthetic
//! populations, [`design`] samples and masks them, [`imputation`] fills the
//! holes and [`estimators`] turns either into proportions.

pub mod bootstrap;
pub mod cube;
pub mod design;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod imputation;
pub mod popgen;
pub mod survey;

pub use design::RngStream;
pub use error::{Error, Result};
pub use estimators::{Parameter, ProportionTable};
pub use imputation::{ImputationOutcome, Method};
pub use popgen::PopulationSpec;
pub use survey::{Categories, Schema, SurveyDataset, Unit};

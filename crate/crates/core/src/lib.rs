//! Privacy-risk audit toolkit for step-count data sampled every 15 seconds.
//!
//! Two attacks are provided: attribute inference ([`attrinf`]), which
//! predicts gender, age class or education class from a user's steps, and
//! linkability ([`linkage`]), which decides whether two days of data come
//! from the same person. [`synth`] generates cohorts with planted signals
//! for testing both.

pub mod attrinf;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod features;
pub mod learners;
pub mod linkage;
pub mod synth;

pub use cohort::{load_cohort, Attribute, Cohort, StepSeries, UserRecord};
pub use error::{Error, Result};
pub use features::FeatureConfig;
pub use learners::{ModelKind, ModelSpec, TrainedModel};

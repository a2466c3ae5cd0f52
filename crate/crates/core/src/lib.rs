//! Pretrial risk-assessment toolkit.
//!
//! * [`psa`]: configurable replica of the Public Safety Assessment.
//! * [`data`]: case records, CSV ingestion, synthetic populations.
//! * [`tree`] and [`forest`]: abstaining decision trees that label a case
//!   only when its training cluster is large and decisive enough, and hand
//!   it off to a human otherwise.
//! * [`fairness`]: per-group AUC, error-rate balance and calibration.
//! * [`evaluation`]: baselines, offense rates by score, policy comparison.
//! * [`scenarios`]: seeded synthetic populations used by tests and demos.

pub mod psa;
pub mod data;
pub mod stats;
pub mod tree;
pub mod scenarios;
pub mod forest;
pub mod fairness;
pub mod evaluation;

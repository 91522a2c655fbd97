//! Projected auditor-driven post-processing of predictors.
//!
//! A fit starts from a simple base predictor and repeatedly subtracts the
//! auditor that correlates most with a mapping `s(f, y)` of the current
//! prediction, projecting back onto an interval after every update. The
//! mapping decides what is calibrated: residuals give multicalibration,
//! the quantile mapping gives group-conditional coverage, composite
//! propensity auditors transfer guarantees across covariate shift.

pub mod auditors;
pub mod chain;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod fairness;
pub mod hexfloat;
pub mod mappings;
pub mod report;
pub mod shift;
pub mod synth;

pub use chain::{ChainStep, InitialPredictor, PredictorChain, ProjectionInterval, CHAIN_FORMAT};
pub use config::{FitConfig, FitMode, IterBudget, ResolvedParams, StepSize};
pub use data::{Dataset, Domain, GroupColumns};
pub use engine::{audit, fit, Engine, FitOutcome, FitState, UpdateOutcome};
pub use error::{Error, Result};
pub use mappings::{Mapping, MappingSpec};
pub use report::{AuditReport, FitStatus, IterationRecord, MemberViolation, RunReport};

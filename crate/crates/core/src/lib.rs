//! Governance core for tiered secure research environments.
//!
//! Work packages are classified into one of five tiers by each required
//! classifier, the per-tier control matrix is resolved into a declarative
//! environment blueprint, and every governance action lands in a
//! hash-chained audit log alongside a versioned entity store.

#![forbid(unsafe_code)]

pub mod audit;
pub mod blueprint;
pub mod canonical;
pub mod classification;
pub mod clock;
pub mod config;
pub mod domain;
pub mod error;
pub mod ids;
pub mod ingress;
pub mod lifecycle;
pub mod platform;
pub mod policy;
pub mod service;
pub mod store;

pub use classification::{decide_tier, resolve_consensus, QuestionnaireAnswers};
pub use domain::Tier;
pub use error::{HavenError, Result};
pub use policy::{resolve_policy, validate_blueprint, EnvironmentPolicy};
pub use service::Haven;

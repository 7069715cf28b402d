//! Cross-fitted doubly robust estimators for binary-instrument designs:
//! local and conditional complier effects, principal-strata profiles,
//! a monotonicity sensitivity surface, and a simulation harness.

pub mod clate;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod influence;
pub mod late;
pub mod learners;
mod linalg;
pub mod nuisance;
pub mod profiling;
pub mod sensitivity;
pub mod simulation;
pub mod stats;

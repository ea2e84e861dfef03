//! Exact response-surface designs optimal under compound criteria that
//! combine inference precision (DP/LP), lack-of-fit detectability and
//! mean-squared-error protection against polynomial model contamination,
//! with pure-error variance accounting, for completely randomized and
//! blocked experiments.
//!
//! The crate provides:
//! - polynomial model and candidate-set construction ([`model`]);
//! - replicate counting and pure-error / lack-of-fit degrees of freedom
//!   ([`design`]);
//! - every elementary and compound criterion, determinant- and trace-based,
//!   with Monte-Carlo and point-prior bias estimators ([`criteria`]);
//! - a restart-based point-exchange search honoring fixed runs and block
//!   structure ([`search`]);
//! - efficiency reports against persisted reference optima ([`report`]);
//! - a TOML experiment configuration with shipped presets ([`config`],
//!   [`presets`]).

pub mod config;
pub mod criteria;
pub mod design;
pub mod error;
pub mod model;
pub mod numerics;
pub mod presets;
pub mod report;
pub mod search;

pub use error::{Error, Result};

//! Equilibrium distributive platforms, two-stage election probabilities and
//! minority-welfare curvature for multi-district electoral competition,
//! plus a plan optimizer over the feasible simplex.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod competition;
pub mod electoral;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod group;
pub mod numdiff;
pub mod optimizer;
pub mod plan;
pub mod selection;
pub mod selftest;

pub use affinity::AffinityDistribution;
pub use error::{Error, Result};
pub use exec::Execution;
pub use group::{Electorate, GroupId, MatchupKey, PerGroup, PrimaryRule};

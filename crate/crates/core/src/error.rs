use thiserror::Error;

use crate::group::{GroupId, MatchupKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("utility diverges at b = 0 with epsilon = {epsilon} > 1")]
    UtilityDomain { epsilon: f64 },

    #[error("epsilon = 1 is not supported (log utility is excluded)")]
    UnitEpsilon,

    #[error("group {group} has no affinity distribution for matchup {key}")]
    MissingAffinity { group: GroupId, key: MatchupKey },

    #[error("affinity density of group {group} vanishes at {at} in matchup {key}")]
    ZeroDensity { group: GroupId, key: MatchupKey, at: f64 },

    #[error("electorate has no voters in this district")]
    EmptyElectorate,

    #[error("aggregate district power is zero")]
    ZeroPower,

    #[error("win probability argument {0} outside [0, 1]")]
    ProbabilityDomain(f64),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("{what} did not converge after {iterations} iterations{detail}")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("degenerate threshold: denominator {denominator:e} is numerically zero")]
    DegenerateThreshold { denominator: f64 },

    #[error("perturbation infeasible: step shrank below {min_step:e} at s = {s}")]
    InfeasiblePerturbation { s: f64, min_step: f64 },

    #[error("objective evaluation failed: {0}")]
    Objective(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::UtilityDomain { .. }
                | Error::ZeroDensity { .. }
                | Error::ZeroPower
                | Error::NonConvergence { .. }
                | Error::DegenerateThreshold { .. }
                | Error::InfeasiblePerturbation { .. }
                | Error::Objective(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

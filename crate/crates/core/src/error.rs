use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Constraint families of the energy minimization problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    Rate,
    EnergyHarvesting,
    LocalLatency,
    EdgeCapacity,
    TimeBudget,
    UserPowerCap,
    BsPowerCap,
    TaskBound,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Rate => "rate",
            Self::EnergyHarvesting => "energy-harvesting",
            Self::LocalLatency => "local-latency",
            Self::EdgeCapacity => "edge-capacity",
            Self::TimeBudget => "time-budget",
            Self::UserPowerCap => "user-power-cap",
            Self::BsPowerCap => "bs-power-cap",
            Self::TaskBound => "task-bound",
        };
        f.write_str(s)
    }
}

/// Evidence that an instance admits no strictly feasible allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub family: ConstraintFamily,
    /// Normalized violation of the worst constraint at the best point found.
    pub violation: f64,
    pub detail: String,
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated by {:.3e}: {}", self.family, self.violation, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("phase has zero duration but {bits} bits to offload")]
    InfeasibleDemand { bits: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("non-convex hand-off: {0}")]
    NotConvex(String),
    #[error("infeasible instance: {0}")]
    Infeasible(Certificate),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}

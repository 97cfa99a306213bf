use thiserror::Error;

use crate::model::MarketShare;

pub type Result<T, E = MarketError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate threshold denominator {name} = {value:e}")]
    DegenerateDenominator { name: &'static str, value: f64 },

    #[error("no sign change on [{lo}, {hi}]: residuals {f_lo:e} and {f_hi:e}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("thresholds inconsistent with the claimed equilibrium branch: {0}")]
    ThresholdOrdering(String),

    #[error("stage II best-response iteration did not converge after {rounds} rounds (last iterate {last:?}, oscillating: {oscillating})")]
    NotConverged {
        rounds: usize,
        last: MarketShare,
        oscillating: bool,
    },

    #[error("agent dynamics entered a cycle between {first:?} and {second:?}")]
    AgentCycle {
        first: MarketShare,
        second: MarketShare,
    },

    #[error("grid oracle found {} equilibrium candidates: {candidates:?}", candidates.len())]
    OracleCandidates { candidates: Vec<MarketShare> },

    #[error("sensing market ordering violated: {0}")]
    SensingOrdering(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MarketError>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl MarketError {
    pub(crate) fn domain(what: &'static str, value: f64, domain: &'static str) -> Self {
        MarketError::Domain {
            what,
            value,
            domain,
        }
    }

    /// Wraps the error with the name of the stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        MarketError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error, possibly wrapped in stage labels, is a solver
    /// non-convergence.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            MarketError::NotConverged { .. } | MarketError::AgentCycle { .. } => true,
            MarketError::Stage { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}

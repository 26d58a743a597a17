use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a flow was halted before convergence.
#[derive(Clone, Debug, PartialEq)]
pub enum GuardViolation {
    /// sup|grad f| exceeded the configured C1 bound.
    GradientBound { sup_gradient: f64, bound: f64 },
    /// Volume of the symmetric difference with the reference exceeded its bound.
    VolumeDistance { distance: f64, bound: f64 },
    /// Lyapunov energy exceeded its bound.
    EnergyBound { energy: f64, bound: f64 },
    /// det g fell below the degeneracy threshold.
    DegenerateMetric { det: f64 },
    /// Two curve nodes came closer than the collision threshold.
    NodeCollision { spacing: f64 },
    /// A NaN or infinity appeared in the state.
    NonFinite,
}

impl GuardViolation {
    pub fn label(&self) -> &'static str {
        match self {
            GuardViolation::GradientBound { .. } => "c1_bound",
            GuardViolation::VolumeDistance { .. } => "volume_distance_bound",
            GuardViolation::EnergyBound { .. } => "energy_bound",
            GuardViolation::DegenerateMetric { .. } => "degenerate_metric",
            GuardViolation::NodeCollision { .. } => "node_collision",
            GuardViolation::NonFinite => "nonfinite",
        }
    }
}

impl fmt::Display for GuardViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuardViolation::GradientBound { sup_gradient, bound } => {
                write!(f, "sup|grad f| = {sup_gradient:e} exceeds bound {bound:e}")
            }
            GuardViolation::VolumeDistance { distance, bound } => {
                write!(f, "Vol(F^E) = {distance:e} exceeds bound {bound:e}")
            }
            GuardViolation::EnergyBound { energy, bound } => {
                write!(f, "energy {energy:e} exceeds bound {bound:e}")
            }
            GuardViolation::DegenerateMetric { det } => write!(f, "det g = {det:e} below 1e-10"),
            GuardViolation::NodeCollision { spacing } => {
                write!(f, "node spacing {spacing:e} below 1e-8")
            }
            GuardViolation::NonFinite => write!(f, "nonfinite value in state"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("nonfinite values in {0}")]
    NonFinite(&'static str),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("guard violation: {0}")]
    Guard(GuardViolation),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("operator too large: {nodes} nodes exceeds {limit}; use a coarser grid")]
    TooLarge { nodes: usize, limit: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

use thiserror::Error;

/// Failure modes shared by every numerical module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("density is zero everywhere")]
    AllZeroDensity,
    #[error("negative density {value} at cell {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("map undefined at support point {index}")]
    MapUndefined { index: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("vector field is singular at ({x}, {y})")]
    SingularPoint { x: f64, y: f64 },
    #[error("trajectory from ({x}, {y}) enters the singular neighborhood")]
    SingularTrajectory { x: f64, y: f64 },
    #[error("non-finite state during integration")]
    NonfiniteState,
    #[error("time step {dt} exceeds the stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("problem size {size} exceeds the cap {cap}")]
    SizeExceeded { size: usize, cap: usize },
    #[error("measures must have equal size and uniform weights")]
    UnequalWeights,
    #[error("points are not collinear on a horizontal line")]
    NotCollinear,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("advected boundary is degenerate: {0}")]
    DegenerateBoundary(String),
    #[error("closed ball of radius {radius} around ({x}, {y}) is not interior to the shape")]
    BallNotInterior { x: f64, y: f64, radius: f64 },
    #[error("time step {dt:e} stalled below the minimum")]
    StalledStep { dt: f64 },
}

impl Error {
    /// Stable variant name, used for diagnostics on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            Error::AllZeroDensity => "AllZeroDensity",
            Error::NegativeDensity { .. } => "NegativeDensity",
            Error::MapUndefined { .. } => "MapUndefined",
            Error::InvalidInput(_) => "InvalidInput",
            Error::SingularPoint { .. } => "SingularPoint",
            Error::SingularTrajectory { .. } => "SingularTrajectory",
            Error::NonfiniteState => "NonfiniteState",
            Error::CflViolation { .. } => "CflViolation",
            Error::SizeExceeded { .. } => "SizeExceeded",
            Error::UnequalWeights => "UnequalWeights",
            Error::NotCollinear => "NotCollinear",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DegenerateBoundary(_) => "DegenerateBoundary",
            Error::BallNotInterior { .. } => "BallNotInterior",
            Error::StalledStep { .. } => "StalledStep",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

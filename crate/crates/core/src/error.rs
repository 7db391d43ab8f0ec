use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unknown spec `{0}`")]
    UnknownSpec(String),
    #[error("contraction ratios differ: {left} vs {right}")]
    RatioMismatch { left: Ratio<u32>, right: Ratio<u32> },
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("level {level} needs {cells} cells, over the cap of {cap}")]
    CapExceeded { level: u32, cells: u128, cap: u64 },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("target cell carries no mass")]
    ZeroMass,
    #[error("cell map expects level {expected}, got {got}")]
    LevelMismatch { expected: u32, got: u32 },
    #[error("cell address is not valid for this graph: {0}")]
    BadAddress(String),
    #[error("graph cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModulusError {
    #[error("exponent p = {0} must exceed 1")]
    BadExponent(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("no convergence after {max_iter} iterations (bounds {lower:.6e}..{upper:.6e})")]
    NonConvergence { max_iter: usize, lower: f64, upper: f64 },
    #[error("radius out of range: {0}")]
    RadiusOutOfRange(String),
    #[error("balls overlap: {0}")]
    BallsOverlap(String),
    #[error("family contains a curve that no admissible weight can charge")]
    Unbounded,
    #[error("invalid family: {0}")]
    InvalidFamily(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least {needed} levels, got {got}")]
    InsufficientLevels { needed: usize, got: usize },
    #[error("could not bracket the critical exponent: slope({p_low}) = {slope_low}, slope({p_high}) = {slope_high}")]
    BracketFailure { p_low: f64, p_high: f64, slope_low: f64, slope_high: f64 },
    #[error("annulus not representable: {0}")]
    BadAnnulus(String),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
    #[error("graph: {0}")]
    Graph(String),
}

impl From<GraphError> for ScalingError {
    fn from(e: GraphError) -> Self {
        ScalingError::Graph(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("function or cell set does not live on this graph: {0}")]
    GraphMismatch(String),
    #[error("function family is empty")]
    EmptyFamily,
    #[error("empty ball around cell {0}")]
    EmptyBall(usize),
    #[error("spec `{0}` is not finitely ramified")]
    NotFinitelyRamified(String),
    #[error("exponent p = {0} must exceed 1")]
    BadExponent(f64),
}

#[derive(Debug, Error)]
pub enum SingularityError {
    #[error("p-harmonic solve stalled after {iterations} sweeps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("boundary set is empty")]
    EmptyBoundary,
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

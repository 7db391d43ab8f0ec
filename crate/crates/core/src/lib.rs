//! Discrete conformal geometry on self-similar fractals.
//!
//! The crate builds level-n cell graphs of iterated function systems
//! ([`graph`]), solves discrete p-modulus problems on them ([`modulus`]),
//! fits modulus scaling exponents and estimates the conformal dimension as
//! the critical exponent ([`scaling`]), evaluates graph p-energies, energy
//! measures and product forms ([`energy`]), and tracks energy-measure
//! concentration across levels ([`singularity`]).

pub mod cache;
mod conic;
pub mod energy;
pub mod error;
pub mod graph;
pub mod modulus;
pub mod par;
pub mod report;
pub mod scaling;
pub mod singularity;
pub mod spec;

pub use error::{EnergyError, GraphError, ModulusError, ScalingError, SingularityError, SpecError};
pub use graph::{
    build_graph, build_graph_with, cell_pushforward, metric_ball, ApproximationGraph,
    BuildOptions, CellAddress, CellMap, CellNetwork, MeasureVector,
};
pub use par::Execution;
pub use spec::{product_spec, FractalSpec};

/// Version string embedded in every JSON artifact.
pub const TOOL_VERSION: &str = concat!("fraclab ", env!("CARGO_PKG_VERSION"));

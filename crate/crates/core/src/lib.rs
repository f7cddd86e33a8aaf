//! Capture–recapture hidden Markov models for population register coverage.

pub mod blb;
pub mod covariates;
pub mod data;
pub mod decoder;
pub mod emission;
pub mod error;
pub mod estimator;
pub mod gradient;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod params;
pub mod scalar;
pub mod seeds;
pub mod simulator;
pub mod state_space;

pub use covariates::{BaseCovariates, CovariateDimension, CovariateScheme, DimensionKind, Profile};
pub use emission::{
    EmissionCoefficients, EmissionLayout, EmissionTerm, EventFlag, EventRecording,
    FalsePositiveSpec, ObservationCategory,
};
pub use data::{Dataset, IndividualRecord, StudyWindow};
pub use decoder::{DecodedTrajectory, PopulationSeries, PresenceRule};
pub use error::{Error, Result};
pub use estimator::{fit_mle, FitOptions, FitResult};
pub use likelihood::Likelihood;
pub use model::Model;
pub use params::{ModelParams, ParameterLayout};
pub use scalar::Scalar;
pub use simulator::{simulate_population, GroundTruth, Simulation, SimulationConfig};
pub use state_space::{
    LifeEvent, LinearPredictor, StateRole, StateSpaceConfig, TransitionMatrix, TransitionTerm,
};

pub type TransitionMatrix64 = TransitionMatrix<f64>;
pub type TransitionMatrix32 = TransitionMatrix<f32>;

/// Version stamped on every file written by this crate.
pub const SCHEMA_VERSION: &str = "1.0";
/// Readers accept any minor revision of this major version.
pub const SCHEMA_MAJOR: &str = "1";

/// Refuses files written under an unknown major schema version.
pub fn check_schema_version(version: &str, source: &str) -> Result<()> {
    match version.split('.').next() {
        Some(SCHEMA_MAJOR) => Ok(()),
        _ => Err(Error::Data(format!("{source}: unsupported schema version {version} (expected {SCHEMA_MAJOR}.x)"))),
    }
}

//! Single-snapshot joint localization, orientation estimation and scatterer
//! mapping from NLOS mmWave path parameters.

pub mod baseline;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod particles;
pub mod seed;

pub use engine::{run, EngineConfig, EstimateTrace, RunOutput};
pub use error::{Error, Result};
pub use geometry::{
    sample_observations, true_path_parameters, wrap_angle, NoiseSpec, Observations, PathNoise, PathTriple, Point2,
    Pose, Scenario, StateVector,
};
pub use particles::ParticleSet;

//! Multi-target tracking by the finite-set-statistics recursion, carried out
//! over explicitly enumerated data-association hypotheses.
//!
//! The crate holds the models and priors ([`models`]), single-target
//! Gaussian beliefs and track labels ([`belief`]), enumeration of
//! associations, births and deaths ([`association`]), the hypothesis engine
//! ([`hypothesis`]), pruning ([`pruning`]), a grid-quadrature reference
//! implementation ([`oracle`]) and a scenario simulator ([`sim`]).

pub mod association;
pub mod belief;
pub mod error;
pub mod hypothesis;
pub mod logmath;
pub mod models;
pub mod oracle;
pub mod pruning;
pub mod sim;
pub mod verify;

pub use association::{BirthHypothesis, BirthPolicy, DataAssociation, EllipsoidalGate, SurvivalHypothesis};
pub use belief::{GaussianBelief, MeasIndex, Origin, TrackLabel};
pub use error::{Error, Result};
pub use hypothesis::{
    fisst_step, homht_step, step_traced, BirthPriorForm, EngineConfig, Hypothesis, HypothesisForest, Recursion, StepStats, Track,
    TrackDensity,
};
pub use models::{
    BirthModel, BirthPdfMode, ClutterModel, MeasurementModel, MotionModel, PixelBox, PixelGrid, ScenarioModels, SurvivalModel,
};
pub use pruning::PruningPolicy;

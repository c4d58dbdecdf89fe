//! Separating endogenous from exogenous posts in networked opinion streams.
//!
//! The pipeline: load a follower graph and a stream of sentiment-marked
//! posts, pick the posts most informative about the opinion dynamics
//! ([`demarcate`]), fit the model on those ([`estimate`]), and forecast
//! held-out sentiment ([`simulate`]). [`baselines`] holds robust-regression
//! competitors and [`harness`] the experiment runner behind the `demarc`
//! binary.

pub mod baselines;
pub mod demarcate;
pub mod dynamics;
pub mod error;
pub mod estimate;
pub mod events;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod scalar;
pub mod simulate;

pub use demarcate::{cherry_pick, Criterion, DemarcationConfig, DemarcationResult, GramState, Strategy};
pub use dynamics::{DecayState, FeatureVector, Kernels, ModelParams};
pub use error::{Error, Result};
pub use estimate::{estimate_all, EstimationConfig, SolverConfig};
pub use events::{Event, EventStream, Label};
pub use graph::SocialGraph;
pub use scalar::Scalar;

pub type GramState64 = GramState<f64>;
pub type GramState32 = GramState<f32>;
pub type DemarcationResult64 = DemarcationResult<f64>;
pub type DemarcationResult32 = DemarcationResult<f32>;

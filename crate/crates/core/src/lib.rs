//! Opinion-polarization moderation under Friedkin-Johnsen dynamics.
//!
//! The crate holds the graph substrate, the opinion dynamics and their
//! solvers, the polarization metrics, a synthetic instance generator, the
//! intervention environment, the baseline planners and the learned policy.

pub mod agent;
pub mod baselines;
pub mod dynamics;
pub mod encoder;
pub mod environment;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod synthgen;

pub use baselines::{Method, Plan, PlanningContext};
pub use dynamics::{BiasConfig, Dynamics, OpinionState};
pub use environment::{evaluate_plan, Env, Instance, StepResult, Variant};
pub use error::{Error, Result};
pub use graph::{Graph, GraphView, NodeId};
pub use metrics::{Camp, DatasetStats, Normalization, Trajectory};
pub use synthgen::GenConfig;

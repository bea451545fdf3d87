//! Hand-guided drone swarm simulation with impedance interlinks.
//!
//! The numeric kernels ([`impedance`], [`apf`], [`geom`] and the metric
//! helpers) are generic over [`Real`]; the world-level layers run on `f64`.
//! Concrete aliases for both widths are exported here.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apf;
pub mod error;
pub mod formation;
pub mod geom;
pub mod hand_trace;
pub mod impedance;
pub mod metrics;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod tactile;
pub mod trace;

pub use scalar::Real;

pub use apf::ApfError;
pub use error::Violation;
pub use formation::{FormationController, FormationSpec, HandState, Point};
pub use hand_trace::HandTrace;
pub use metrics::{compute_run_metrics, reaction_correctness, RunMetrics};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{run_scenario, SimError, World};
pub use tactile::{FormationLabel, PatternId, TactileEngine, TactilePattern};
pub use trace::{TraceEvent, TraceLog};

pub type Vec2 = geom::Vec2<f64>;
pub type Vec3 = geom::Vec3<f64>;
pub type ImpedanceParams = impedance::ImpedanceParams<f64>;
pub type StateTransition = impedance::StateTransition<f64>;
pub type ImpedanceState = impedance::ImpedanceState<f64>;
pub type SaturationLimits = impedance::SaturationLimits<f64>;
pub type LinkDynamics = impedance::LinkDynamics<f64>;
pub type Obstacle = apf::Obstacle<f64>;
pub type ApfGains = apf::ApfGains<f64>;

pub type Vec2F32 = geom::Vec2<f32>;
pub type Vec3F32 = geom::Vec3<f32>;
pub type ImpedanceParamsF32 = impedance::ImpedanceParams<f32>;
pub type StateTransitionF32 = impedance::StateTransition<f32>;
pub type LinkDynamicsF32 = impedance::LinkDynamics<f32>;
pub type ObstacleF32 = apf::Obstacle<f32>;
pub type ApfGainsF32 = apf::ApfGains<f32>;

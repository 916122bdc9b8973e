//! Verbal guidance for fine-grain reaching.
//!
//! The crate learns how a person's hand responds to discrete verbal commands, solves
//! a reaching MDP into a reusable policy, locates target products from detection
//! streams, and simulates guidance sessions for the discrete and continuous planners.

// `!(x > 0.0)` is how config checks reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuous;
pub mod direction;
pub mod hand_model;
pub mod product_map;
pub mod reach_mdp;
pub mod scoring;
pub mod session;
pub mod simulator;

pub use continuous::{ContinuousConfig, ContinuousPlanner, Cue};
pub use direction::{Axis, Direction};
pub use hand_model::{CommandModel, CommandSpec, MovementGaussian};
pub use reach_mdp::{GridSpec, OffsetState, QueryResult, ReachPolicy, RewardConfig, SolveConfig};
pub use session::{GuidanceSession, PlannerMode, SessionConfig, SessionEvent, SessionMetrics};

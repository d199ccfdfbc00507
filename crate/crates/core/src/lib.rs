//! Cloud-based learning model predictive control for a fleet of identical
//! double-integrator agents that repeatedly traverse the roads of a grid.
//!
//! Agents solve local MPC problems whose terminal set and terminal cost are
//! built from trajectories shared through a common store. The crate holds
//! the agent model, the road geometry, a dense QP solver, the shared
//! trajectory store, the controllers and the fleet simulator.

pub mod cloud;
pub mod dynamics;
pub mod geometry;
pub mod lmpc;
pub mod qp;
pub mod sim;

pub use dynamics::{AgentState, ControlInput, DiscreteModel, PolygonalNormConstraint};
pub use geometry::{Layout, LayoutConfig, TaskKey};

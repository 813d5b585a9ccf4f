//! Outcome-reward policy optimization on a deterministic grid maze: group-relative
//! advantages, in-distribution repair guidance, and an adversarial polluter that
//! learns to derail the agent.

pub mod analysis;
pub mod error;
pub mod gridworld;
pub mod grpo;
pub mod guidance;
pub mod harness;
pub mod policy;
pub mod selfplay;

pub use error::{Error, Result};
pub use gridworld::{canonical_maze, Action, Cell, GridWorld, MazeState, Trajectory};
pub use policy::{PolicyTable, ScoreGradient, StateKey, Token};

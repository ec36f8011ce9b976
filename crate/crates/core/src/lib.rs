//! Hybrid flow-shop scheduling with a bilevel learned scheduler.
//!
//! - [`instance`]: problem instances, generators and the instance file format.
//! - [`engine`]: list-scheduling decoder, makespan and schedule validation.
//! - [`heuristics`]: greedy and NEH constructors plus an exhaustive oracle.
//! - [`neural`]: dense, LSTM and pointer kernels with Adam and gradient checks.
//! - [`upper_ddqn`]: double Q-learning sequence constructor.
//! - [`lower_gpn`]: graph pointer network that re-orders windows of a sequence.
//! - [`bilevel`]: sliding-window coordination, co-training and solving.

pub mod bilevel;
pub mod engine;
pub mod error;
pub mod heuristics;
pub mod instance;
pub mod lower_gpn;
pub mod neural;
pub mod upper_ddqn;

pub use engine::{decode_schedule, makespan, Schedule, Sequence};
pub use error::{Error, Result};
pub use instance::{GenConfig, Instance, OpTimeDist};

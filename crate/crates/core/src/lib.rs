//! Multi-agent dialog policy learning: a system policy and a user policy are
//! trained together with an actor-critic whose critic splits the reward into
//! system, user and global parts.

pub mod acts;
pub mod episode;
pub mod error;
pub mod hvn;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod rules;
pub mod rewards;
pub mod state;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};

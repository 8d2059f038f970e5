//! Offline imitation learning from a few expert transitions plus a larger
//! pool of suboptimal data, by occupancy-measure matching with a relaxed
//! f-divergence regularizer toward the suboptimal data.

pub mod data;
pub mod dice;
pub mod divergence;
pub mod error;
pub mod extraction;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod oracles;
pub mod pointmass;
pub mod ratio;
pub mod verify;

pub use error::{Error, Result};

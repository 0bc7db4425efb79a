//! Macro-action multi-agent simulation with instruction-augmented dynamics.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: the environment contract and per-agent histories.
//! - [`engine`]: execution of joint macro-actions over primitive steps.
//! - [`instructions`]: instruction classes, arrival dynamics and the
//!   value-corrected reward used at instruction boundaries.
//! - [`compliance`]: per-class predicates deciding whether an issued
//!   instruction was followed.
//! - [`rollout`]: an episode driver tying the pieces together.
//! - [`envs`]: the bundled environments.

pub mod compliance;
pub mod config;
pub mod engine;
pub mod envs;
pub mod error;
pub mod instructions;
pub mod model;
pub mod rollout;
pub mod trace;

pub use error::{CoreError, Result};

/// Seeded generator used for every stochastic draw in the simulator.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds a generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

//! Bayes-optimal tensor factorization from sparse p-plet observations on
//! degree-regular random hypergraphs: finite-size message passing (r-BP and
//! G-AMP), macroscopic state evolution, and replica equation-of-state /
//! phase-diagram analytics, with cross-validation between the three layers.

pub mod channels;
pub mod error;
pub mod hypergraph;
pub mod instance;
pub mod mp_engine;
pub mod numerics;
pub mod replica;
pub mod rng;
pub mod state_evolution;
pub mod trajectory;

pub use error::{Error, Result};

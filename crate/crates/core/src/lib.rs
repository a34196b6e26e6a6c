//! Interacting stochastic particle systems approximating McKean–Vlasov SDEs.
//!
//! The crate simulates the d-particle system
//!
//! ```text
//! dX_i = a(X_i, (1/d) Σ_j κ₁(X_i, X_j)) dt + σ(X_i, (1/d) Σ_j κ₂(X_i, X_j)) dW_i
//! ```
//!
//! with Euler–Maruyama, estimates strong and weak errors between coupled
//! d- and 2d-particle systems, fits log-log convergence rates, propagates
//! first and second variation processes of general SDEs, and counts
//! multi-indices without unique entries.
//!
//! All randomness is drawn from a counter-based generator addressed by
//! `(replicate, particle, step, channel)`, so every result is a pure function
//! of the master seed regardless of thread count.

pub mod combinatorics;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod model;
pub mod noise;
pub mod summation;
pub mod variations;

pub use engine::{CoupledPair, ParticleState, SimGrid};
pub use error::{Error, Result};
pub use model::{registry_get, observable_get, ModelSpec, Observable, ScalarField2};
pub use noise::NoisePlan;

//! Energy-based models over combinatorial output spaces, trained jointly with
//! a learned log-partition function through a min-min objective.
//!
//! The crate is organised bottom-up:
//!
//! - [`spaces`]: finite structured output sets (label sets, rankings,
//!   permutation matrices) with uniform samplers and enumerators.
//! - [`nets`]: small differentiable networks with hand-written reverse passes.
//! - [`energy`]: couplings `Φ(θ, y)` and the composed energy `g(x, y) = Φ(h(x), y)`.
//! - [`losses`]: the doubly stochastic min-min objective, its Fenchel-Young
//!   generalisation, exact oracles and the baselines.
//! - [`inference`]: mode prediction and relaxed maximisation per output space.
//! - [`training`]: Adam and the training loop.
//! - [`data`]: dataset parsers, synthetic tasks and splits.
//! - [`evaluation`]: f1, Kendall tau and the log-partition diagnostic.

pub mod data;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod losses;
pub mod nets;
pub mod spaces;
pub mod training;

pub use error::{Error, Result};

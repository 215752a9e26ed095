//! Probabilities for the asymmetric simple exclusion process on ℤ.
//!
//! Particles jump right at rate `p` and left at rate `q = 1 − p`, with
//! exclusion. The crate evaluates transition probabilities and L-block
//! probabilities from Bethe-ansatz contour integrals, for finite systems
//! and for step initial condition (via Fredholm determinants), and ships
//! independent oracles (exact master-equation solver, Monte Carlo) to check
//! them against.

pub mod algebra;
pub mod contour;
pub mod weights;
pub mod error;
pub mod finite;
pub mod fredholm;
pub mod oracle;

pub use error::{Error, Result};

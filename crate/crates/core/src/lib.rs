//! Block-encodings of displacement-structured matrices.
//!
//! Everything here operates at desk scale: dense classical oracles check the
//! algebraic identities, a statevector simulator checks the circuits, and the
//! resource formulas extrapolate to sizes the simulator cannot reach.

pub mod blockenc;
pub mod displacement;
pub mod error;
pub mod simcore;
pub mod solver;
pub mod stateprep;
pub mod structmat;

pub use error::{Error, Result};

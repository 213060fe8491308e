//! Deformable 3D registration with pairs of cycle-consistent sinusoidal
//! coordinate networks.
//!
//! A forward network maps target coordinates into the source image, a
//! backward network maps source coordinates into the target image. Both are
//! optimized jointly with a cycle-consistency penalty. At inference the
//! backward network is inverted locally by a second-order Taylor expansion;
//! the midpoint of the two forward estimates is the result and their
//! distance, in mm, is a per-point uncertainty.

pub mod coords;
pub mod error;
pub mod eval;
pub mod inference;
pub mod linalg;
pub mod objectives;
pub mod rng;
pub mod siren;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};

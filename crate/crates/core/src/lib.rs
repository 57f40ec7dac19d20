//! Monte Carlo laboratory for the spatial Lambda-Fleming-Viot process, its
//! coalescing duals and the rescaled functionals that converge to
//! super-Brownian motion.

pub mod coupling;
pub mod dual;
pub mod error;
pub mod forward;
pub mod functionals;
pub mod geometry;
pub mod harness;
pub mod mc;
pub mod point;
pub mod rng;
pub mod sbm;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use geometry::ModelParams;
pub use point::Point;
pub use rng::{replica_rng, ReplicaRng, StreamId};
pub use stats::{McEstimate, Accumulator};

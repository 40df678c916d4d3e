//! Kinetically constrained models and bootstrap percolation in quenched
//! random environments.
//!
//! Sites carry a quenched label (easy or difficult) that fixes their kinetic
//! rule. The crate samples such environments, measures cluster geometry,
//! runs bootstrap percolation and continuous-time constrained dynamics, and
//! solves small instances exactly.

pub mod bootstrap;
pub mod configuration;
pub mod environment;
pub mod error;
pub mod exact;
pub mod harness;
pub mod kcm;
pub mod lattice;
pub mod percolation;
pub mod rng;

pub use configuration::{sample_equilibrium, Configuration};
pub use environment::{sample_environment, EnvParams, Environment, ModelKind, SiteRule, P_OP, P_SP};
pub use error::{Error, Result};
pub use lattice::{Boundary, Coord, Dims, Dir, Rect};

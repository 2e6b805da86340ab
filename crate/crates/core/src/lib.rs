//! Monte Carlo laboratory for the A/B infection model with equal jump rates.
//!
//! Particles perform independent continuous-time simple random walks on
//! `Z^d`; an A-particle turns into a B-particle as soon as it shares a site
//! with a B-particle. The crate simulates the process variants (original,
//! full-space, half-space, restarted) over one shared path ensemble, checks
//! the coupling laws exactly, and estimates directional speeds and the
//! asymptotic shape.

pub mod error;
pub mod estimate;
pub mod io;
pub mod lattice;
pub mod observables;
pub mod properties;
pub mod replicas;
pub mod shape;
pub mod sim;
pub mod streams;

pub use error::{Error, Result};
pub use lattice::{Cube, Cylinder, Direction, HalfSpace, LatticePoint};
pub use sim::{LayerInit, ProcessMode, ProcessSpec, Simulation, TypeTimeline, WorldState};
pub use streams::{MasterSeed, ParticleId};

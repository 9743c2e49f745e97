//! Periodic Lorentz gas with infinite horizon: an exact-geometry billiard
//! simulator, exact occupation/moment oracles for i.i.d. lattice walks, the
//! limit-law samplers (Mittag-Leffler, exponential, Gaussian mixtures), and
//! the experiment harness comparing normalized Birkhoff statistics against
//! those limits.

pub mod accept;
pub mod billiard;
pub mod config;
pub mod error;
pub mod gamma;
pub mod geometry;
pub mod ks;
pub mod limit_laws;
pub mod observables;
pub mod rng;
pub mod rw_oracle;
pub mod stats;
pub mod walk_sim;

pub use error::{Error, Result};

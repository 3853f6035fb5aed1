//! Rotation-distribution estimation on SO(3) supervised by CAD-derived
//! experts.
//!
//! The crate covers the whole pipeline: rotations and their encodings
//! ([`rotation`], [`encoding`]), the equivolumetric grid ([`grid`]), analytic
//! and mesh shapes with their symmetry groups and feature fields
//! ([`geometry`]), orthographic rendering ([`view`]), expert measures and the
//! generalized KL divergence ([`experts`]), the dual-branch learner
//! ([`learner`]), evaluation ([`metrics`]) and SVG plots ([`viz`]).

pub mod config;
pub mod encoding;
pub mod error;
pub mod experts;
pub mod geometry;
pub mod grid;
mod io;
pub mod learner;
pub mod metrics;
pub mod rotation;
pub mod view;
pub mod viz;

pub use error::{Error, Result};
pub use grid::SO3Grid;
pub use rotation::{geodesic_distance, Rotation};

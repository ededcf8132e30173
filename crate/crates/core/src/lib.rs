//! A numerical laboratory for Ricci-flow energy and entropy functionals,
//! coupled flow systems, L-geodesic calculus and the reduced volume.
//!
//! The crate is organized as:
//!
//! * [`geometry`] — manifold backends (flat space, round sphere, conformal
//!   torus), curvature, differential operators, integration;
//! * [`flow`] — Ricci flow stepping, metric histories, coupled potential
//!   evolution, history export/import;
//! * [`functionals`] — the energy/entropy functionals, their first
//!   variations and production formulas, spectral invariants and the
//!   log-Sobolev minimizer;
//! * [`lgeo`] — L-length, geodesic shooting and boundary-value solves,
//!   reduced distance/volume, Harnack quantities, Jacobi fields;
//! * [`variants`] — the extended (scalar-coupled) flow and the
//!   Ricci Yang-Mills flow on a U(1) bundle over the torus;
//! * [`cli`] — the reproducible experiment runner behind the
//!   `perelman-lab` binary.

pub mod cli;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod geometry;
pub mod lgeo;
pub mod util;
pub mod variants;

pub use error::{LabError, Result};

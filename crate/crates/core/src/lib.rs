//! Spatial extremes via a sparse Gaussian spatial-scale mixture.
//!
//! The model multiplies a Matern-like Gaussian Markov random field (built
//! from a finite-element discretization of an SPDE on a triangulated mesh)
//! with a low-rank, heavy- or light-tailed random scale field composed from
//! compactly-supported Wendland bases. The crate provides:
//!
//! * mesh construction and finite-element assembly ([`mesh`], [`fem`]),
//! * the sparse precision operator and site projection ([`spde`]),
//! * knot selection and rescaled Wendland basis systems ([`basis`]),
//! * the generative model and simulators ([`model`]),
//! * closed-form and empirical tail-dependence coefficients ([`tail`]),
//! * a censored-data MCMC sampler ([`inference`]),
//! * posterior post-processing and return levels ([`diagnostics`]),
//! * CSV/manifest I/O shared with the CLI ([`io`]).

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod inference;
pub mod io;
pub mod mesh;
pub mod model;
pub mod rngstream;
pub mod sparse;
pub mod spde;
pub mod special;
pub mod tail;

pub use error::{Result, ShotError};
